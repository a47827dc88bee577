"""Differential-privacy calculus for the eavesdropped uplink.

The accountant tracks, per round, the ratio (Delta / m)^2 between the
adversary-side sensitivity Delta = 2 * gamma * sqrt(eta) * rho_max and
the per-element effective-noise standard deviation m. Privacy holds when
the accumulated ratio tau stays below the radius

    R_dp(eps, delta) = (sqrt(eps + Cinv(1/delta)^2) - Cinv(1/delta))^2

where Cinv inverts C(x) = sqrt(pi) * x * exp(x^2).
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, InvalidInput, NotPsd
from .numerics import RngStream

# Slack absorbed at the active privacy constraint: the solver targets
# equality, so tiny negative margins are floating-point noise.
THEOREM1_SLACK = 1e-9


@dataclass(frozen=True)
class DpBudget:
    """Total (epsilon, delta) budget with a static per-round split."""

    epsilon: float
    delta: float
    total_rounds: int
    allocation: np.ndarray

    def __post_init__(self):
        if self.epsilon <= 0:
            raise InvalidInput("epsilon must be positive")
        if not 0.0 < self.delta < 1.0:
            raise InvalidInput("delta must lie in (0, 1)")
        phi = np.asarray(self.allocation, dtype=float)
        if phi.shape != (self.total_rounds,):
            raise InvalidInput("allocation length must equal total_rounds")
        if abs(phi.sum() - 1.0) > 1e-12 or np.any(phi <= 0) or np.any(phi >= 1.0 + 1e-12):
            raise InvalidInput("allocation must be a positive vector summing to 1")
        object.__setattr__(self, "allocation", phi)

    @classmethod
    def uniform(cls, epsilon, delta, total_rounds):
        phi = np.full(total_rounds, 1.0 / total_rounds)
        phi[-1] = 1.0 - phi[:-1].sum()
        return cls(epsilon, delta, total_rounds, phi)

    @classmethod
    def random(cls, epsilon, delta, total_rounds, rng):
        """Flat-Dirichlet random split of the budget."""
        phi = rng.dirichlet(np.ones(total_rounds))
        phi = np.clip(phi, 1e-9, None)
        phi = phi / phi.sum()
        return cls(epsilon, delta, total_rounds, phi)


@dataclass(frozen=True)
class DpRoundAccount:
    round_index: int
    sensitivity: float
    effective_noise_variance: float

    @property
    def consumed_ratio(self):
        return self.sensitivity**2 / self.effective_noise_variance


@dataclass(frozen=True)
class GradientBounds:
    """Samplewise and per-user gradient norm bounds on the model ball."""

    gamma: float
    per_user: np.ndarray

    def __post_init__(self):
        per_user = np.asarray(self.per_user, dtype=float)
        if self.gamma <= 0 or np.any(per_user <= 0):
            raise InvalidInput("gradient bounds must be positive")
        object.__setattr__(self, "per_user", per_user)

    def check_aggregate(self, samples_per_user):
        """Triangle-inequality sanity: G_k cannot exceed D * gamma."""
        return bool(np.all(self.per_user <= samples_per_user * self.gamma + 1e-12))


def c_function(x):
    """C(x) = sqrt(pi) * x * exp(x^2), strictly increasing on (0, inf)."""
    if x <= 0:
        raise DomainError("c_function requires x > 0")
    return math.sqrt(math.pi) * x * math.exp(x * x)


def c_inverse(y, rel_tol=1e-12):
    """Invert C by bracketed bisection followed by a Newton polish."""
    if y <= 0:
        raise DomainError("c_inverse requires y > 0")
    lo, hi = 1e-12, 1.0
    while c_function(hi) < y:
        lo, hi = hi, hi * 2.0
    if c_function(lo) > y:
        while c_function(lo) > y:
            lo *= 0.5
            if lo < 1e-300:
                return 0.0
        hi = lo * 2.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if c_function(mid) < y:
            lo = mid
        else:
            hi = mid
        if hi - lo <= rel_tol * hi:
            break
    x = 0.5 * (lo + hi)
    # Newton on log C(x) = log y for stability at large y.
    target = math.log(y)
    for _ in range(8):
        f = math.log(math.sqrt(math.pi)) + math.log(x) + x * x - target
        x -= f / (1.0 / x + 2.0 * x)
        if x <= 0:
            x = 0.5 * (lo + hi)
            break
    return x


def dp_radius(budget):
    """Total accumulation budget R_dp(eps, delta) from the tail bound."""
    cinv = c_inverse(1.0 / budget.delta)
    return (math.sqrt(budget.epsilon + cinv * cinv) - cinv) ** 2


def round_radius(budget, t):
    """Share of the radius allotted to round t (1-based)."""
    if not 1 <= t <= budget.total_rounds:
        raise InvalidInput(f"round {t} outside 1..{budget.total_rounds}")
    return float(budget.allocation[t - 1]) * dp_radius(budget)


def effective_noise_variance(eta, rho, r, n_a):
    """Per-element variance of the adversary's effective noise.

    m^2 = eta * rho^T R conj(rho) + n_a. The quadratic form must be
    (numerically) nonnegative since R is PSD.
    """
    rho = np.asarray(rho)
    r = np.asarray(r)
    quad = float(np.real(rho @ r @ rho.conj()))
    scale = max(float(np.linalg.norm(r, "fro")) * float(np.real(rho @ rho.conj())), 1.0)
    if quad < -1e-10 * scale:
        raise NotPsd(f"negative quadratic form {quad:.3e}")
    return eta * max(quad, 0.0) + n_a


def sensitivity(eta, gamma, rho_max):
    """Worst-case signal shift from one changed sample: 2 gamma sqrt(eta) rho_max."""
    return 2.0 * gamma * math.sqrt(eta) * rho_max


def check_theorem1(accounts, budget):
    """Sufficient-condition check: tau = sum (Delta/m)^2 < R_dp.

    Returns ``(satisfied, tau, margin)``. A margin down to -1e-9 (times
    the radius) still counts as satisfied to absorb solver round-off at
    the active constraint.
    """
    radius = dp_radius(budget)
    tau = float(sum(a.consumed_ratio for a in accounts))
    margin = radius - tau
    satisfied = margin > -THEOREM1_SLACK * max(radius, 1.0)
    return satisfied, tau, margin


def _q_tail(x):
    """P(N(0,1) > x) via erfc."""
    return 0.5 * math.erfc(x / math.sqrt(2.0))


def analytic_tail_probability(tau, epsilon):
    """Exact privacy-failure probability for worst-case neighbors.

    The accumulated DP loss is N(tau, 2 tau); this returns
    P(|L| > epsilon), of which the sufficient-condition tail bound used
    by :func:`check_theorem1` is an upper estimate.
    """
    if tau <= 0:
        return 0.0
    sd = math.sqrt(2.0 * tau)
    return _q_tail((epsilon - tau) / sd) + _q_tail((epsilon + tau) / sd)


@dataclass(frozen=True)
class RoundPrivacyInputs:
    """Per-round quantities entering the DP loss at the adversary."""

    eta: float
    rho: np.ndarray
    r: np.ndarray
    n_a: float
    gamma: float
    rho_max: float

    def account(self, t):
        m2 = effective_noise_variance(self.eta, self.rho, self.r, self.n_a)
        delta = sensitivity(self.eta, self.gamma, self.rho_max)
        return DpRoundAccount(t, delta, m2)


def monte_carlo_dp_audit(rounds, budget, rng, draws=1_000_000, worst_case=True):
    """Empirical rate of |DP loss| > epsilon over fresh noise draws.

    Each draw realizes the loss L = sum_t (2 Re{r^H v} + ||v||^2) / m^2
    with the neighboring-dataset difference v pinned at the sensitivity
    bound along a fixed unit direction (the tail depends only on ||v||,
    so only the noise component along that direction is sampled).
    Set ``worst_case=False`` to audit identical datasets (v = 0).
    """
    if draws < 10_000:
        raise InvalidInput("need at least 1e4 draws")
    if not isinstance(rng, RngStream):
        raise InvalidInput("rng must be an RngStream")
    mean = 0.0
    std_sq = 0.0
    if worst_case:
        for idx, rd in enumerate(rounds, start=1):
            acct = rd.account(idx)
            ratio = acct.consumed_ratio
            mean += ratio
            std_sq += 2.0 * ratio
    if std_sq == 0.0:
        return 0.0 if mean <= budget.epsilon else 1.0
    gen = rng.generator
    exceed = 0
    batch = 200_000
    remaining = draws
    scale = math.sqrt(std_sq)
    while remaining > 0:
        n = min(batch, remaining)
        losses = mean + scale * gen.standard_normal(n)
        exceed += int(np.count_nonzero(np.abs(losses) > budget.epsilon))
        remaining -= n
    return exceed / draws
