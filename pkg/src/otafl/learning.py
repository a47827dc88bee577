"""Synthetic ridge-regression federated task and the training loop.

Each user holds D i.i.d. Gaussian samples with labels formed from two
fixed coordinates plus observation noise. Local objectives are sums over
the local dataset of f(w; mu, nu) = 0.5 (w^T mu - nu)^2 + zeta ||w||^2,
and the server descends on F(w) = (1/K) sum_k F_k(w). The curvature
constants derive from the full data Gramian Xi = U^T U + 2 D_tot zeta I;
since F carries a 1/K factor, the effective smoothness and PL constants
are L/K and mu/K, and the fixed step 1/L_eff = K/L is used throughout.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DimensionTooSmall, InvalidInput
from .privacy import GradientBounds


@dataclass(frozen=True)
class FlTask:
    """Immutable dataset snapshot with cached per-user Gramians."""

    num_users: int
    samples_per_user: int
    dim: int
    data: np.ndarray
    labels: np.ndarray
    zeta: float
    gramian: np.ndarray
    mu: float
    big_l: float
    w_star: np.ndarray
    f_star: float
    user_gramians: np.ndarray = field(repr=False, default=None)
    user_moments: np.ndarray = field(repr=False, default=None)

    @property
    def total_samples(self):
        return self.num_users * self.samples_per_user

    @property
    def step_size(self):
        """Fixed learning rate 1/L_eff = K/L for the (1/K)-scaled objective."""
        return self.num_users / self.big_l

    def user_slice(self, k):
        if not 0 <= k < self.num_users:
            raise InvalidInput(f"user {k} out of range")
        return slice(k * self.samples_per_user, (k + 1) * self.samples_per_user)


def generate_task(num_users=10, samples_per_user=1000, dim=10, zeta=0.5e-4, rng=None):
    """Draw the synthetic dataset and compute constants and the optimum.

    Labels are data[:, 1] + 3 * data[:, 4] + 0.2 * noise, so the model
    dimension must be at least 5.
    """
    if dim < 5:
        raise DimensionTooSmall("labels read coordinates 2 and 5; need dim >= 5")
    if num_users < 1 or samples_per_user < 1 or zeta <= 0:
        raise InvalidInput("need positive user count, sample count and ridge weight")
    total = num_users * samples_per_user
    data = rng.standard_normal((total, dim))
    noise = rng.substream("label-noise").standard_normal(total)
    labels = data[:, 1] + 3.0 * data[:, 4] + 0.2 * noise
    gram = data.T @ data + 2.0 * total * zeta * np.eye(dim)
    vals = np.linalg.eigvalsh(gram)
    w_star = np.linalg.solve(gram, data.T @ labels)
    ug = np.empty((num_users, dim, dim))
    um = np.empty((num_users, dim))
    for k in range(num_users):
        sl = slice(k * samples_per_user, (k + 1) * samples_per_user)
        ug[k] = data[sl].T @ data[sl]
        um[k] = data[sl].T @ labels[sl]
    task = FlTask(
        num_users=num_users,
        samples_per_user=samples_per_user,
        dim=dim,
        data=data,
        labels=labels,
        zeta=zeta,
        gramian=gram,
        mu=float(vals[0]),
        big_l=float(vals[-1]),
        w_star=w_star,
        f_star=0.0,
        user_gramians=ug,
        user_moments=um,
    )
    return replace(task, f_star=global_loss(task, w_star))


def local_loss(task, k, w):
    """F_k(w): sum over user-k samples of the ridge sample loss."""
    sl = task.user_slice(k)
    resid = task.data[sl] @ w - task.labels[sl]
    return 0.5 * float(resid @ resid) + task.samples_per_user * task.zeta * float(w @ w)


def local_gradient(task, k, w):
    """Gradient of F_k: U_k^T U_k w - U_k^T nu_k + 2 D zeta w."""
    task.user_slice(k)
    return (
        task.user_gramians[k] @ w
        - task.user_moments[k]
        + 2.0 * task.samples_per_user * task.zeta * w
    )


def global_loss(task, w):
    """F(w) = (1/K) [0.5 ||U w - nu||^2 + D_tot zeta ||w||^2]."""
    resid = task.data @ w - task.labels
    raw = 0.5 * float(resid @ resid) + task.total_samples * task.zeta * float(w @ w)
    return raw / task.num_users


def global_gradient(task, w):
    """(1/K) sum_k grad F_k = (Xi w - U^T nu) / K."""
    return (task.gramian @ w - task.data.T @ task.labels) / task.num_users


def optimality_gap(task, w):
    """F(w) - F* evaluated through the exact quadratic expansion.

    The objective is quadratic with zero gradient at w*, so the gap is
    (1/(2K)) (w - w*)^T Xi (w - w*); evaluating it this way avoids the
    catastrophic cancellation of subtracting two nearly equal losses.
    """
    e = w - task.w_star
    return 0.5 * float(e @ task.gramian @ e) / task.num_users


def gradient_bounds(task, w_bound):
    """Worst-case gradient norm bounds on the ball ||w|| <= w_bound.

    Samplewise: gamma = 2 w_bound max_i (||mu_i||^2 + 2 zeta). Per user:
    G_k = 2 w_bound lambda_max(U_k^T U_k + 2 D zeta I).
    """
    if w_bound <= 0:
        raise InvalidInput("w_bound must be positive")
    if float(np.linalg.norm(task.w_star)) > w_bound:
        raise ConfigError("projection radius excludes the optimum; raise w_bound")
    sample_const = np.sum(task.data**2, axis=1) + 2.0 * task.zeta
    gamma = 2.0 * w_bound * float(np.max(sample_const))
    ridge = 2.0 * task.samples_per_user * task.zeta
    per_user = np.array(
        [
            2.0 * w_bound * (float(np.linalg.eigvalsh(task.user_gramians[k])[-1]) + ridge)
            for k in range(task.num_users)
        ]
    )
    return GradientBounds(gamma=gamma, per_user=per_user)


@dataclass(frozen=True)
class TrainState:
    """Model iterate plus append-only loss/gap histories."""

    round_index: int
    w: np.ndarray
    loss_history: tuple = ()
    gap_history: tuple = ()
    projection_events: int = 0


def initial_state(task, w0=None):
    w = np.zeros(task.dim) if w0 is None else np.asarray(w0, dtype=float).copy()
    if w.shape != (task.dim,):
        raise InvalidInput("initial model has the wrong dimension")
    return TrainState(round_index=0, w=w)


def train_round(state, estimated_gradient, task, w_bound=10.0):
    """One descent step w <- w - (K/L) grad, projected onto the ball.

    Appends the post-step loss and normalized optimality gap
    (F(w) - F*) / F* to the histories.
    """
    g = np.asarray(estimated_gradient, dtype=float)
    if g.shape != state.w.shape:
        raise InvalidInput("gradient has the wrong dimension")
    w = state.w - task.step_size * g
    projections = state.projection_events
    norm = float(np.linalg.norm(w))
    if norm > w_bound:
        w = w * (w_bound / norm)
        projections += 1
    # the objective is exactly quadratic, so F(w) = F* + gap without a
    # pass over the dataset
    gap = optimality_gap(task, w)
    return TrainState(
        round_index=state.round_index + 1,
        w=w,
        loss_history=state.loss_history + (task.f_star + gap,),
        gap_history=state.gap_history + (gap / task.f_star,),
        projection_events=projections,
    )


def convergence_bound(task, etas, n0, initial_gap, literal=False):
    """Upper bound on the expected optimality gap after len(etas) rounds.

    Default (consistent with the implemented estimator): the server-side
    gradient error has per-real-component variance N_0 / (2 K^2 eta), so
    one smooth descent step contributes d N_0 / (4 L K eta) and

        bound = (1 - mu/L)^T gap_0 + sum_t (1-mu/L)^(T-t) d N_0 / (4 L K eta_t).

    ``literal=True`` instead uses the noise term d N_0 / (2 L (K D)^2 eta_t),
    an alternate closed form whose sample-count scaling assumes per-sample
    averaged local objectives rather than sums; kept for comparison.
    """
    etas = np.asarray(etas, dtype=float)
    if np.any(etas <= 0):
        raise InvalidInput("power scalings must be positive")
    if n0 < 0 or initial_gap < 0:
        raise InvalidInput("noise variance and initial gap must be nonnegative")
    ratio = 1.0 - task.mu / task.big_l
    t_total = etas.shape[0]
    bound = ratio**t_total * initial_gap
    k = task.num_users
    for t, eta in enumerate(etas, start=1):
        if literal:
            term = task.dim * n0 / (2.0 * task.big_l * (k * task.samples_per_user) ** 2 * eta)
        else:
            term = task.dim * n0 / (4.0 * task.big_l * k * eta)
        bound += ratio ** (t_total - t) * term
    return bound
