"""Rician block-fading channels for the server and adversary links.

Per round, each user k has a server gain h_k and an adversary gain g_k.
Both follow the Rice mixture

    h = sqrt(kappa / (1 + kappa)) * los + sqrt(1 / (1 + kappa)) * nlos

with the non-line-of-sight component evolving as an AR(1) process
``nlos_t = theta * nlos_{t-1} + sqrt(1 - theta^2) * innovation``.
The effective eavesdropping gain is rho_k = g_k / h_k.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ChannelOutage, InvalidInput
from .numerics import sample_complex_gaussian

# Channel-inversion guard: a server gain below this magnitude would blow
# up the inverted transmit power, so the round is redrawn.
H_MIN = 1e-3


@dataclass(frozen=True)
class ChannelConfig:
    num_users: int
    rician_factor_server: float = 5.0
    rician_factor_adversary: float = 0.0
    ar_coefficient: float = 0.0
    los_component: complex = 1.0 + 0.0j

    def __post_init__(self):
        if self.num_users < 1:
            raise InvalidInput("need at least one user")
        if not 0.0 <= self.ar_coefficient < 1.0:
            raise InvalidInput("AR coefficient must lie in [0, 1)")
        if self.rician_factor_server < 0 or self.rician_factor_adversary < 0:
            raise InvalidInput("Rician factors must be nonnegative")


@dataclass(frozen=True)
class ChannelState:
    round_index: int
    h: np.ndarray
    g: np.ndarray
    rho: np.ndarray
    nlos_state_server: np.ndarray
    nlos_state_adversary: np.ndarray
    redraws: int = field(default=0, compare=False)

    @property
    def rho_max(self):
        return float(np.max(np.abs(self.rho)))


def _mix(kappa, los, nlos):
    return np.sqrt(kappa / (1.0 + kappa)) * los + np.sqrt(1.0 / (1.0 + kappa)) * nlos


def _assemble(round_index, cfg, nlos_s, nlos_a, redraws=0):
    h = _mix(cfg.rician_factor_server, cfg.los_component, nlos_s)
    g = _mix(cfg.rician_factor_adversary, cfg.los_component, nlos_a)
    rho = g / h
    return ChannelState(round_index, h, g, rho, nlos_s, nlos_a, redraws)


def init_channel(cfg, rng):
    """Draw round-1 gains with fresh CN(0, 1) NLoS states per user and link."""
    k = cfg.num_users
    nlos_s = sample_complex_gaussian(rng.substream("nlos-server"), k)
    nlos_a = sample_complex_gaussian(rng.substream("nlos-adversary"), k)
    return _assemble(1, cfg, nlos_s, nlos_a)


def advance_round(state, cfg, rng):
    """Advance NLoS states by one AR(1) step and recompute all gains."""
    theta = cfg.ar_coefficient
    innov_scale = np.sqrt(1.0 - theta * theta)
    k = cfg.num_users
    phi_s = sample_complex_gaussian(rng.substream(f"innov-server-{state.round_index}"), k)
    phi_a = sample_complex_gaussian(rng.substream(f"innov-adversary-{state.round_index}"), k)
    nlos_s = theta * state.nlos_state_server + innov_scale * phi_s
    nlos_a = theta * state.nlos_state_adversary + innov_scale * phi_a
    return _assemble(state.round_index + 1, cfg, nlos_s, nlos_a)


def effective_gains(state, h_min=H_MIN):
    """Return rho = g / h, guarding against deep server fades.

    Raises :class:`ChannelOutage` if any |h_k| < h_min; the caller is
    expected to redraw the round (see :func:`next_valid_round`).
    """
    mags = np.abs(state.h)
    if np.any(mags < h_min):
        raise ChannelOutage(f"min |h_k| = {mags.min():.3e} below guard {h_min:g}")
    return state.rho


def next_valid_round(state, cfg, rng, h_min=H_MIN, max_redraws=1000):
    """Advance (or initialize) the channel, redrawing deep-fade rounds.

    Returns a state whose server gains all clear the inversion guard;
    ``state.redraws`` counts how many draws were discarded.
    """
    redraws = 0
    nxt = init_channel(cfg, rng) if state is None else advance_round(state, cfg, rng)
    while np.any(np.abs(nxt.h) < h_min):
        redraws += 1
        if redraws > max_redraws:
            raise ChannelOutage("could not draw a round clearing the fade guard")
        nxt = advance_round(nxt, cfg, rng.substream(f"redraw-{nxt.round_index}-{redraws}"))
        nxt = replace(nxt, round_index=nxt.round_index - 1)
    return replace(nxt, redraws=redraws)
