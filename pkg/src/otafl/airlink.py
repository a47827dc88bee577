"""Analog over-the-air uplink: splitting, precoding, aggregation.

Each user splits its real gradient into complex symbols, inverts its
channel, adds the plan's correlated perturbation row and transmits; the
server receives the coherent sum plus thermal noise and rescales it into
a global-gradient estimate. The adversary observes the same superposition
through its own channel gains.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .channel import H_MIN
from .errors import ChannelOutage, InvalidInput, PowerViolation
from .numerics import sample_complex_gaussian

# Relative slack on the transmit-power check: the plan meets the budget
# with equality at active constraints, so allow solver-level round-off.
POWER_SLACK = 1e-6


def split_to_complex(vec):
    """Pack a real vector of length d into ceil(d/2) complex symbols.

    Entry i is vec[i] + 1j * vec[i + d/2] after zero-padding odd d to
    even, so both quadratures carry gradient mass and the Euclidean norm
    is preserved.
    """
    v = np.asarray(vec, dtype=float).ravel()
    if v.size % 2:
        v = np.concatenate([v, [0.0]])
    half = v.size // 2
    return v[:half] + 1j * v[half:]


def de_split(symbols, dim=None):
    """Inverse of :func:`split_to_complex`; ``dim`` strips the padding."""
    s = np.asarray(symbols, dtype=np.complex128).ravel()
    v = np.concatenate([np.real(s), np.imag(s)])
    if dim is not None:
        if dim > v.size:
            raise InvalidInput(f"cannot recover {dim} entries from {s.size} symbols")
        v = v[:dim]
    return v


@dataclass(frozen=True)
class TxSignal:
    """One user's transmitted symbol block for a round."""

    user: int
    symbols: np.ndarray
    power_used: float
    alpha: complex
    perturbation: np.ndarray = field(repr=False, default=None)


@dataclass(frozen=True)
class RxSignal:
    """A received symbol block at the server or the adversary."""

    receiver: str
    symbols: np.ndarray
    noise_variance: float
    effective_noise: np.ndarray = field(repr=False, default=None)


def build_tx(plan, user, gradient, perturbation_row, h_k, power=None, h_min=H_MIN):
    """Precode one user's update: x_k = (sqrt(eta)/h_k)(split(grad) + n_k).

    ``power_used`` records the realized energy eta (|grad|^2 + |n_k|^2)
    / |h_k|^2. When ``power`` is given, the budget check compares the
    actual gradient against the expected perturbation energy d_c R_kk
    (the quantity the plan constrained); a realized noise draw above its
    mean is not a protocol violation, an oversized gradient is.
    """
    if abs(h_k) < h_min:
        raise ChannelOutage(f"|h_{user}| = {abs(h_k):.3e} below inversion guard")
    sym = split_to_complex(gradient)
    n_k = np.asarray(perturbation_row, dtype=np.complex128).ravel()
    if n_k.shape != sym.shape:
        raise InvalidInput("perturbation length must match the symbol count")
    alpha = math.sqrt(plan.eta) / h_k
    grad_energy = float(np.real(sym @ sym.conj()))
    realized = plan.eta * (grad_energy + float(np.real(n_k @ n_k.conj()))) / abs(h_k) ** 2
    if power is not None:
        expected_pert = sym.size * float(np.real(plan.r[user, user]))
        expected = plan.eta * (grad_energy + expected_pert) / abs(h_k) ** 2
        if expected > power * (1.0 + POWER_SLACK):
            raise PowerViolation(
                f"user {user}: expected power {expected:.6g} exceeds budget {power:.6g}"
            )
    return TxSignal(
        user=user,
        symbols=alpha * (sym + n_k),
        power_used=realized,
        alpha=alpha,
        perturbation=n_k,
    )


def _superpose(signals, gains):
    gains = np.asarray(gains, dtype=np.complex128)
    if len(signals) != gains.shape[0]:
        raise InvalidInput("one channel gain per transmitted signal")
    acc = np.zeros_like(signals[0].symbols)
    for sig, gain in zip(signals, gains):
        acc = acc + gain * sig.symbols
    return acc


def server_receive(signals, h, n0, rng=None):
    """Superpose all uplinks through the server gains and add CN(0, N_0 I).

    With a zero-sum plan the perturbations cancel in the sum, leaving
    sqrt(eta) * sum_k split(grad_k) + z.
    """
    acc = _superpose(signals, h)
    if n0 > 0:
        if rng is None:
            raise InvalidInput("need an RngStream when N_0 > 0")
        acc = acc + sample_complex_gaussian(rng, acc.size, n0)
    elif n0 < 0:
        raise InvalidInput("noise variance must be nonnegative")
    return RxSignal(receiver="server", symbols=acc, noise_variance=float(n0))


def adversary_receive(signals, g, n_a, rng=None):
    """Superpose all uplinks through the adversary gains and add CN(0, N_a I).

    The returned ``effective_noise`` is the realized masking component
    sqrt(eta) * sum_k rho_k n_k + z_a, i.e. everything the adversary
    cannot attribute to the gradients; audits compare its per-element
    variance against the plan's quadratic form.
    """
    acc = _superpose(signals, g)
    g = np.asarray(g, dtype=np.complex128)
    eff = np.zeros_like(signals[0].symbols)
    for sig, gain in zip(signals, g):
        eff = eff + gain * sig.alpha * sig.perturbation
    if n_a > 0:
        if rng is None:
            raise InvalidInput("need an RngStream when N_a > 0")
        z_a = sample_complex_gaussian(rng, acc.size, n_a)
        acc = acc + z_a
        eff = eff + z_a
    elif n_a < 0:
        raise InvalidInput("noise variance must be nonnegative")
    return RxSignal(
        receiver="adversary", symbols=acc, noise_variance=float(n_a), effective_noise=eff
    )


def estimate_global_gradient(rx, eta, num_users, dim):
    """Scale and de-split the server observation: (1/(K sqrt(eta))) y."""
    if rx.receiver != "server":
        raise InvalidInput("global gradient is estimated from the server signal")
    if eta <= 0 or num_users < 1:
        raise InvalidInput("eta and num_users must be positive")
    return de_split(rx.symbols / (num_users * math.sqrt(eta)), dim)
