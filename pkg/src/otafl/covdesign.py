"""Per-round co-design of the perturbation covariance and power scaling.

The round design problem minimizes b = 1/eta subject to

    privacy:  (gamma * rho_max)^2 <= (R_dp_round / 4) * (rho^T R conj(rho) + N_a * b)
    power:    G_k^2 + d_c * R_kk  <= b * |h_k|^2 * P          for every user k
    shape:    R PSD, sum of all entries of R equal to zero,  b > 0

A PSD matrix with vanishing all-ones quadratic form annihilates the
all-ones vector, so R = V S V^H with V an orthonormal basis of the
zero-sum subspace and S PSD of size K-1. The solve runs a primal
log-barrier interior-point method over (S, b); Newton steps use the
low-rank structure of the linear constraints (Woodbury identity against
the log-det Hessian), which keeps each step at a handful of small dense
matrix products.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import (
    InfeasibleInputs,
    InvalidInput,
    SingleUserDegenerate,
    SolverNonConvergence,
)
from .numerics import hermitian_part

MAX_NEWTON_STEPS = 10_000


def reduce_zero_sum(num_users):
    """Orthonormal basis of the zero-sum subspace, as a K x (K-1) matrix.

    Columns are mutually orthonormal and each orthogonal to the all-ones
    vector (machine exact: they are trailing columns of a Householder
    reflector that maps e_1 to ones/sqrt(K)).
    """
    k = int(num_users)
    if k < 2:
        raise SingleUserDegenerate("zero-sum reduction empty for K=1; R must be 0")
    u = np.full(k, 1.0 / math.sqrt(k))
    v = u.copy()
    v[0] -= 1.0
    house = np.eye(k) - 2.0 * np.outer(v, v) / (v @ v)
    return house[:, 1:]


def zero_sum_violation(r):
    """Diagnostics (|u^H R u| / trace, ||R u|| / ||R||_F) for a covariance."""
    r = np.asarray(r)
    u = np.ones(r.shape[0])
    quad = abs(float(np.real(u @ r @ u)))
    row = float(np.linalg.norm(r @ u))
    tr = abs(float(np.real(np.trace(r)))) or 1.0
    fro = float(np.linalg.norm(r, "fro")) or 1.0
    return quad / tr, row / fro


def example_covariance(num_users=3, diag=4.0):
    """The fixed-diagonal zero-sum family instance: c (I - J/K).

    For K=3, diag=4 this is 6 I - 2 J with eigenvalues {0, 6, 6}.
    """
    k = int(num_users)
    if k < 2:
        raise SingleUserDegenerate("need K >= 2")
    c = diag * k / (k - 1.0)
    return c * (np.eye(k) - np.full((k, k), 1.0 / k))


@dataclass(frozen=True)
class DesignInputs:
    """Everything the round solver needs, in raw (unnormalized) units."""

    round_index: int
    h: np.ndarray
    rho: np.ndarray
    gamma: float
    gradient_bounds: np.ndarray
    symbol_dim: int
    power: float
    round_dp_radius: float
    adversary_noise: float
    mu: float = 1.0
    big_l: float = 2.0

    def __post_init__(self):
        h = np.asarray(self.h, dtype=np.complex128)
        rho = np.asarray(self.rho, dtype=np.complex128)
        g = np.asarray(self.gradient_bounds, dtype=float)
        if h.shape != rho.shape or h.shape != g.shape:
            raise InvalidInput("h, rho, gradient_bounds must share a length")
        if np.any(g <= 0):
            raise InvalidInput("gradient bounds must be positive")
        if self.power <= 0 or self.round_dp_radius <= 0 or self.symbol_dim < 1:
            raise InvalidInput("power, round radius, symbol_dim must be positive")
        if self.adversary_noise < 0:
            raise InvalidInput("adversary noise must be nonnegative")
        if not 0 < self.mu <= self.big_l:
            raise InvalidInput("need 0 < mu <= L")
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "gradient_bounds", g)

    @property
    def num_users(self):
        return self.h.shape[0]

    @property
    def rho_max(self):
        return float(np.max(np.abs(self.rho)))

    @property
    def privacy_demand(self):
        """C_p = 4 (gamma rho_max)^2 / R_dp_round: required rho^T R conj(rho) + N_a b."""
        return 4.0 * (self.gamma * self.rho_max) ** 2 / self.round_dp_radius

    @property
    def objective_weight(self):
        """Round weight (1 - mu/L)^(-t) carried in reporting only."""
        return (1.0 - self.mu / self.big_l) ** (-self.round_index)


@dataclass
class RoundPlan:
    """Solver output for one round."""

    r: np.ndarray
    eta: float
    b: float
    objective: float
    kkt_residual: float
    solver_iterations: int
    diagonal: bool = False
    basis: np.ndarray | None = None
    reduced: np.ndarray | None = None
    sqrt_factor: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.sqrt_factor is None:
            if self.diagonal or self.basis is None:
                self.sqrt_factor = np.diag(np.sqrt(np.clip(np.real(np.diag(self.r)), 0.0, None)))
            else:
                vals, vecs = np.linalg.eigh(hermitian_part(self.reduced))
                root = (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.conj().T
                # R^(1/2) = V S^(1/2) V^H keeps the all-ones vector in the
                # null space to machine precision, so sampled perturbation
                # columns sum to zero exactly up to floating point.
                self.sqrt_factor = self.basis @ root @ self.basis.conj().T

    @property
    def quadratic_form(self):
        """rho -> rho^T R conj(rho) evaluator is left to callers; expose R."""
        return self.r


def sample_perturbations(plan, dim, rng):
    """Draw the K x dim perturbation matrix N = R^(1/2) W, W ~ CN(0, I)."""
    k = plan.r.shape[0]
    w = rng.standard_normal((2, k, int(dim)))
    white = (w[0] + 1j * w[1]) / math.sqrt(2.0)
    return plan.sqrt_factor @ white


def _plan_from_reduced(inputs, s_reduced, basis, b, kkt, iters, diagonal=False, r=None):
    if r is None:
        r = hermitian_part(basis @ s_reduced @ basis.conj().T)
    eta = 1.0 / b
    return RoundPlan(
        r=r,
        eta=eta,
        b=b,
        objective=inputs.objective_weight * b,
        kkt_residual=kkt,
        solver_iterations=iters,
        diagonal=diagonal,
        basis=basis,
        reduced=s_reduced,
    )


def p1_constraint_violations(plan, inputs):
    """Signed P1 constraint residuals for a plan (positive = violated).

    Residuals are normalized by the natural scale of each constraint so
    'within 1e-8' is meaningful across instances.
    """
    a = np.abs(inputs.h) ** 2 * inputs.power
    g2 = inputs.gradient_bounds**2
    d_c = inputs.symbol_dim
    rho = inputs.rho
    quad = float(np.real(rho @ plan.r @ rho.conj()))
    priv_lhs = inputs.privacy_demand
    priv_rhs = quad + inputs.adversary_noise * plan.b
    priv_scale = max(priv_lhs, 1.0)
    power_lhs = g2 + d_c * np.real(np.diag(plan.r))
    power_rhs = plan.b * a
    power_scale = np.maximum(power_rhs, 1.0)
    quad_sum, row_sum = (0.0, 0.0) if plan.diagonal else zero_sum_violation(plan.r)
    eigs = np.linalg.eigvalsh(hermitian_part(plan.r))
    return {
        "privacy": (priv_lhs - priv_rhs) / priv_scale,
        "power": float(np.max((power_lhs - power_rhs) / power_scale)),
        "zero_sum_quad": quad_sum,
        "zero_sum_row": row_sum,
        "min_eigenvalue": float(eigs[0] / max(eigs[-1], 1.0)),
        "b_positive": -plan.b,
    }


class _Instance:
    """Normalized problem data for the barrier solve."""

    def __init__(self, inputs):
        self.inputs = inputs
        h = inputs.h
        self.k = inputs.num_users
        self.m = self.k - 1
        self.a = np.abs(h) ** 2 * inputs.power
        g2 = inputs.gradient_bounds**2
        self.unc_plan = None
        try:
            self.unc_plan = solve_p1_uncorrelated(inputs)
            self.b_ref = self.unc_plan.b
        except InfeasibleInputs:
            self.b_ref = float(np.max(g2 / self.a))
        self.basis = reduce_zero_sum(self.k)
        self.c_p = inputs.privacy_demand
        q_raw = self.basis.conj().T @ inputs.rho.conj()
        qn2 = float(np.real(q_raw @ q_raw.conj()))
        self.has_privacy = self.c_p > 0.0 and qn2 > 0.0
        if self.c_p > 0.0 and qn2 <= 0.0 and inputs.adversary_noise <= 0.0:
            raise InfeasibleInputs(
                "all effective gains equal and no adversary noise: "
                "the privacy constraint cannot be met"
            )
        # reference scales chosen so the normalized optimum is near unit
        # size: b_ref from the exact diagonal-covariance solution (an
        # upper bound on the optimum), S scaled by the privacy demand
        if self.has_privacy:
            self.s_ref = self.c_p / qn2
        else:
            self.s_ref = self.b_ref * float(np.mean(self.a)) / inputs.symbol_dim
        self.e = g2 / (self.b_ref * self.a)
        v_scaled = (
            self.basis.T * np.sqrt(inputs.symbol_dim * self.s_ref / (self.b_ref * self.a))
        ).astype(np.complex128)  # column k = scaled power-constraint vector
        cols, coef, ascal, consts = [], [], [], []
        if self.c_p > 0.0:
            q_tilde = q_raw * math.sqrt(self.s_ref / self.c_p)
            na = inputs.adversary_noise * self.b_ref / self.c_p
            w0 = max(1.0, float(np.real(q_tilde @ q_tilde.conj())), na)
            cols.append(q_tilde / math.sqrt(w0))
            coef.append(1.0)
            ascal.append(na / w0)
            consts.append(1.0 / w0)
        for k in range(self.k):
            vk = v_scaled[:, k]
            wk = max(1.0, float(np.real(vk @ vk.conj())))
            cols.append(vk / math.sqrt(wk))
            coef.append(-1.0)
            ascal.append(1.0 / wk)
            consts.append(self.e[k] / wk)
        self.xs = np.stack(cols, axis=1)
        self.coef = np.array(coef)
        self.ascal = np.array(ascal)
        self.consts = np.array(consts)
        self.n_lin = self.xs.shape[1]
        # barrier complexity: log det (m) + linear slacks + log b
        self.nu = self.m + self.n_lin + 1
        # 80-bit copies for the end of the central path
        self.xs_ld = self.xs.astype(np.clongdouble)
        self.coef_ld = self.coef.astype(np.longdouble)
        self.ascal_ld = self.ascal.astype(np.longdouble)
        self.consts_ld = self.consts.astype(np.longdouble)

    def slacks(self, s, b):
        quads = np.real(np.sum(self.xs.conj() * (s @ self.xs), axis=0))
        return self.coef * quads + self.ascal * b - self.consts

    def feasible(self, s, b, margin=0.0):
        if b <= 0:
            return False
        if np.any(self.slacks(s, b) <= margin):
            return False
        try:
            np.linalg.cholesky(hermitian_part(s) + margin * np.eye(self.m))
        except np.linalg.LinAlgError:
            return False
        return True

    def normalize_s(self, s_raw):
        return hermitian_part(s_raw) / self.s_ref

    def initial_point(self, s_hint=None, b_hint=None):
        """Strictly feasible start, preferring a caller-provided hint.

        The hint is blended with a small multiple of the identity, and b
        is raised until every slack clears a positive margin; privacy is
        repaired by adding rank-one mass along the scaled gain vector.
        """
        margin = 1e-8
        candidates = []
        if s_hint is not None:
            candidates.append((s_hint, 1.1 * (b_hint if b_hint else 1.0)))
        candidates.append((np.eye(self.m, dtype=np.complex128), 2.0))
        for s0, b0 in candidates:
            tr = max(float(np.real(np.trace(s0))) / self.m, 0.0)
            s = 0.9 * hermitian_part(s0) + (0.1 * tr + 1e-3) * np.eye(self.m)
            b = max(b0, 1e-6)
            for _ in range(80):
                g = self.slacks(s, b)
                if np.all(g > margin):
                    return s, b
                if self.has_privacy and g[0] <= margin:
                    x0 = self.xs[:, 0]
                    xn2 = float(np.real(x0 @ x0.conj()))
                    boost = (self.consts[0] + 1.0 - self.ascal[0] * b) / xn2 - float(
                        np.real(x0.conj() @ s @ x0)
                    ) / xn2
                    if boost > 0:
                        s = s + (boost / xn2) * np.outer(x0, x0.conj())
                        s = hermitian_part(s)
                        continue
                b *= 1.6
                s = 0.7 * s + 0.3 * (float(np.real(np.trace(s))) / self.m) * np.eye(self.m)
        raise InfeasibleInputs("could not construct a strictly feasible start")


def _slack_quads(inst, s):
    z = s @ inst.xs
    return np.real(np.sum(inst.xs.conj() * z, axis=0)), z


def _lin_slacks(inst, quads, b):
    return inst.coef * quads + inst.ascal * b - inst.consts


@njit(cache=True)
def _chol_lower(a):
    """Lower Cholesky factor with an ok flag instead of an exception."""
    m = a.shape[0]
    low = np.zeros((m, m), dtype=np.complex128)
    for i in range(m):
        for j in range(i + 1):
            acc = a[i, j]
            for k in range(j):
                acc -= low[i, k] * np.conj(low[j, k])
            if i == j:
                if acc.real <= 0.0:
                    return low, False
                low[i, i] = np.sqrt(acc.real)
            else:
                low[i, j] = acc / low[j, j]
    return low, True


@njit(cache=True)
def _value_core(s, xs, coef, ascal, consts, b, t):
    """Barrier value, Cholesky factor and slacks; ok=False off the interior."""
    m = s.shape[0]
    n = xs.shape[1]
    g = np.zeros(n)
    chol, ok = _chol_lower(s)
    if not ok or b <= 0.0:
        return 0.0, chol, g, False
    z = s @ xs
    for j in range(n):
        acc = 0.0
        for i in range(m):
            acc += (np.conj(xs[i, j]) * z[i, j]).real
        g[j] = coef[j] * acc + ascal[j] * b - consts[j]
        if g[j] <= 0.0:
            return 0.0, chol, g, False
    logdet = 0.0
    for i in range(m):
        logdet += np.log(chol[i, i].real)
    f = t * b - 2.0 * logdet - np.sum(np.log(g)) - np.log(b)
    return f, chol, g, True


@njit(cache=True)
def _direction_core(s, xs, coef, ascal, consts, b, t, chol):
    """Double-precision Newton direction; see _newton_direction."""
    m = s.shape[0]
    n = xs.shape[1]
    z = s @ xs
    x_big = np.ascontiguousarray(np.conj(xs).T) @ z
    quads = np.empty(n)
    for j in range(n):
        quads[j] = x_big[j, j].real
    g = coef * quads + ascal * b - consts
    absx2 = np.empty((n, n))
    small = np.empty((n, n))
    bb = b * b
    for i in range(n):
        for j in range(n):
            v = x_big[i, j]
            absx2[i, j] = v.real * v.real + v.imag * v.imag
            small[i, j] = coef[i] * coef[j] * absx2[i, j] + ascal[i] * ascal[j] * bb
        small[i, i] += g[i] * g[i]
    rhs = ascal * (bb * t) - consts
    delta = np.linalg.solve(small, rhs)
    cdelta = coef * delta
    u = s + (z * cdelta) @ np.ascontiguousarray(np.conj(z).T)
    for i in range(m):
        for j in range(i, m):
            v = 0.5 * (u[i, j] + np.conj(u[j, i]))
            u[i, j] = v
            u[j, i] = np.conj(v)
    beta = b * (1.0 - b * t) + bb * np.dot(ascal, delta)
    dg = coef * (quads + absx2 @ cdelta) + ascal * beta
    y_norm = m + 2.0 * np.dot(cdelta, quads) + np.dot(cdelta, absx2 @ cdelta)
    lam_sq = y_norm + (beta / b) ** 2 + np.sum((dg / g) ** 2)
    lam = np.sqrt(max(lam_sq, 0.0))
    step_max = np.inf
    if lam >= 0.9:
        xs_w = np.ascontiguousarray(np.conj(chol).T) @ xs
        yw = (xs_w * cdelta) @ np.ascontiguousarray(np.conj(xs_w).T)
        for i in range(m):
            yw[i, i] += 1.0
            for j in range(i, m):
                v = 0.5 * (yw[i, j] + np.conj(yw[j, i]))
                yw[i, j] = v
                yw[j, i] = np.conj(v)
        ev = np.linalg.eigh(yw)[0]
        if ev[0] < 0.0:
            step_max = min(step_max, -1.0 / ev[0])
        for j in range(n):
            if dg[j] < 0.0:
                step_max = min(step_max, -g[j] / dg[j])
        if beta < 0.0:
            step_max = min(step_max, -b / beta)
    return u, beta, lam, step_max


def _solve_small_extended(a, rhs):
    """Gaussian elimination with partial pivoting in extended precision.

    The reduced Newton system has condition growing like 1/gap^2 along
    the central path, which exhausts double precision near the end;
    80-bit arithmetic keeps the computed direction usable there. The
    system is tiny (K+1), so the Python loop is not a bottleneck.
    """
    n = a.shape[0]
    m = np.concatenate(
        [a.astype(np.longdouble), rhs.astype(np.longdouble)[:, None]], axis=1
    )
    for col in range(n):
        p = col + int(np.argmax(np.abs(m[col:, col])))
        if m[p, col] == 0:
            raise np.linalg.LinAlgError("singular reduced system")
        if p != col:
            m[[col, p]] = m[[p, col]]
        factor = m[col + 1 :, col : col + 1] / m[col, col]
        m[col + 1 :, col:] -= factor * m[col : col + 1, col:]
    x = np.empty(n, dtype=np.longdouble)
    for i in range(n - 1, -1, -1):
        x[i] = (m[i, n] - m[i, i + 1 : n] @ x[i + 1 :]) / m[i, i]
    return x


def _certified_gap(inst, s, b, t):
    """Certified relative suboptimality of (s, b) by weak duality.

    The dual of the normalized problem maximizes sum_j y_j const_j over
    y >= 0 with sum_j y_j a_j <= 1 and -sum_j y_j c_j x_j x_j^H PSD. The
    central-path multipliers y_j = 1 / (t g_j) are repaired into exact
    dual feasibility (scale down all y, then cap the privacy multiplier
    at the PSD boundary), and b minus the dual value bounds b - b*. This
    certificate only involves well-separated quantities, so it stays
    trustworthy after the Newton decrement hits its floating-point floor.
    """
    s_x = s.astype(np.clongdouble)
    z = s_x @ inst.xs_ld
    quads = np.real(np.einsum("ij,ij->j", inst.xs_ld.conj(), z))
    g = inst.coef_ld * quads + inst.ascal_ld * np.longdouble(b) - inst.consts_ld
    if np.any(g <= 0) or b <= 0:
        return math.inf
    y = 1.0 / (np.longdouble(t) * g)
    ssum = float(y @ inst.ascal_ld)
    if ssum > 1.0:
        y = y / ssum
    y_f = y.astype(np.float64)
    pow_mask = inst.coef < 0
    xs_pow = inst.xs[:, pow_mask]
    w_mat = (xs_pow * y_f[pow_mask]) @ xs_pow.conj().T
    x0 = inst.xs[:, 0]
    y0 = y_f[0]
    try:
        sol = np.linalg.solve(w_mat, x0)
        y0_cap = 1.0 / max(float(np.real(x0.conj() @ sol)), 1e-300)
        y0 = min(y0, (1.0 - 1e-12) * y0_cap)
    except np.linalg.LinAlgError:
        y0 = 0.0
    dual = float(y_f[pow_mask] @ inst.consts[pow_mask]) + y0 * inst.consts[0]
    return max((float(b) - dual) / max(float(b), 1.0), 1e-16)


def _barrier_value(inst, s, b, t):
    """Barrier objective, or +inf outside the interior."""
    f, chol, g, ok = _value_core(s, inst.xs, inst.coef, inst.ascal, inst.consts, float(b), float(t))
    if not ok:
        return math.inf, None, None
    return f, chol, g


def _newton_direction(inst, s, b, t, chol):
    """Newton direction of the barrier at (s, b).

    The Hessian is the log-det term plus rank-one terms from the linear
    slacks. Whitening by the Cholesky factor of S turns the log-det part
    into the identity, and the Woodbury correction then merges with the
    gradient analytically: with delta solving

        (diag(g^2) + B) delta = (g - c * diag(X)) + a * b * (b t - 1)

    where X = Xs^H S Xs and B_ij = c_i c_j |X_ij|^2 + a_i a_j b^2, the
    step is U = S + Z diag(c * delta) Z^H (Z = S Xs) and
    beta = b (1 - b t) + b^2 (a . delta). This form has no large
    intermediate terms, so it stays accurate when slacks are tiny near
    the end of the central path. Returns (u, beta, lam, step_max).
    """
    # the reduced system's condition grows like 1/gap^2 along the path;
    # past t ~ 1e6 double precision corrupts the step, so the whole
    # pipeline (matrix products included) switches to 80-bit arithmetic
    extended = t > 1e6
    if not extended:
        try:
            u, beta, lam, step_max = _direction_core(
                s, inst.xs, inst.coef, inst.ascal, inst.consts, float(b), float(t), chol
            )
            return u, float(beta), float(lam), float(step_max)
        except np.linalg.LinAlgError:
            pass  # fall through to the numpy path with its lstsq fallback
    if extended:
        s_x = s.astype(np.clongdouble)
        xs_x = inst.xs_ld
        coef = inst.coef_ld
        ascal = inst.ascal_ld
        consts = inst.consts_ld
        b_x = np.longdouble(b)
    else:
        s_x, xs_x = s, inst.xs
        coef, ascal, consts = inst.coef, inst.ascal, inst.consts
        b_x = b
    z = s_x @ xs_x
    x_big = xs_x.conj().T @ z
    quads = np.real(np.diag(x_big)).copy()
    g = coef * quads + ascal * b_x - consts
    absx2 = np.abs(x_big) ** 2
    big_b = np.outer(coef, coef) * absx2 + np.outer(ascal, ascal) * (b_x * b_x)
    small = np.diag(g * g) + big_b
    # rhs simplifies to a * b^2 * t - const: no cancellation at all
    rhs = ascal * (b_x * b_x * t) - consts
    try:
        if extended:
            delta = _solve_small_extended(small, rhs)
        else:
            delta = np.linalg.solve(small, rhs)
    except np.linalg.LinAlgError:
        delta = np.asarray(
            np.linalg.lstsq(small.astype(float), rhs.astype(float), rcond=None)[0], dtype=g.dtype
        )
    cdelta = coef * delta
    u = s_x + (z * cdelta) @ z.conj().T
    beta_x = b_x * (1.0 - b_x * t) + b_x * b_x * (ascal @ delta)
    dgq = quads + absx2 @ cdelta
    dg = coef * dgq + ascal * beta_x
    beta_w = beta_x / b_x
    # Newton decrement as a sum of squares (no cancellation)
    y_norm_sq = inst.m + 2.0 * (cdelta @ quads) + cdelta @ absx2 @ cdelta
    lam_sq = float(y_norm_sq + beta_w * beta_w + np.sum((dg / g) ** 2))
    lam = math.sqrt(max(lam_sq, 0.0))
    beta = float(beta_x)
    u = np.asarray(u, dtype=np.complex128)
    u = 0.5 * (u + u.conj().T)
    g = np.asarray(g, dtype=np.float64)
    dg = np.asarray(dg, dtype=np.float64)

    # a decrement below 1 already certifies the full step stays interior
    # (whitened step I + tau Y with ||Y|| <= lam < 1), so the exact
    # boundary distance is only worth computing for large steps
    if lam < 0.9:
        return u, beta, lam, math.inf

    # whitened step Y = L^-1 U L^-H = I + (L^H Xs) diag(c delta) (L^H Xs)^H
    xs_w = chol.conj().T @ inst.xs
    y = np.eye(inst.m) + (xs_w * np.asarray(cdelta, dtype=np.float64)) @ xs_w.conj().T
    y = 0.5 * (y + y.conj().T)

    # exact distance to the cone boundary along the step
    ev = np.linalg.eigvalsh(y)
    step_max = math.inf
    if ev[0] < 0:
        step_max = min(step_max, -1.0 / ev[0])
    neg = dg < 0
    if np.any(neg):
        step_max = min(step_max, float(np.min(-g[neg] / dg[neg])))
    if beta < 0:
        step_max = min(step_max, -b / beta)
    return u, beta, lam, step_max


def _solve_barrier(inst, s, b, gap_tol, t0, iter_budget, mu=50.0):
    t = t0
    t_final = inst.nu / gap_tol
    iters = 0
    f_cur, chol, _ = _barrier_value(inst, s, b, t)
    if not math.isfinite(f_cur):
        raise SolverNonConvergence("infeasible starting point")
    while True:
        target = 0.3 if t < t_final else 1e-3
        prev_lam = math.inf
        plateau = 0
        stage_iters = 0
        while True:
            if iters >= iter_budget or stage_iters >= 150:
                raise SolverNonConvergence(
                    "Newton iteration cap reached",
                    residuals={"t": t, "gap_estimate": inst.nu / t},
                )
            u, beta, lam, step_max = _newton_direction(inst, s, b, t, chol)
            if lam <= target:
                break
            if lam <= 0.2:
                # in the quadratic zone the decrement should contract
                # fast; a plateau means the numerical floor was reached
                if lam > 0.8 * prev_lam:
                    plateau += 1
                    if plateau >= 3:
                        break
                else:
                    plateau = 0
            prev_lam = lam
            iters += 1
            stage_iters += 1
            step = min(1.0, 0.99 * step_max)
            if lam <= 0.2:
                # quadratic zone: take the (capped) full Newton step; an
                # Armijo test here would drown in floating-point noise
                s_try = s + step * u
                s_try = 0.5 * (s_try + s_try.conj().T)
                b_try = b + step * beta
                f_try, chol_try, _ = _barrier_value(inst, s_try, b_try, t)
                if chol_try is None:
                    break
                s, b, f_cur, chol = s_try, b_try, f_try, chol_try
                continue
            # backtracking line search on the barrier value
            accepted = False
            for _ in range(60):
                s_try = s + step * u
                s_try = 0.5 * (s_try + s_try.conj().T)
                b_try = b + step * beta
                f_try, chol_try, _ = _barrier_value(inst, s_try, b_try, t)
                if f_try <= f_cur - 0.25 * step * lam * lam:
                    accepted = True
                    break
                step *= 0.5
            if not accepted:
                # line search stalled at numerical precision
                break
            s, b, f_cur, chol = s_try, b_try, f_try, chol_try
        if t >= t_final:
            break
        t = min(t * mu, t_final)
        f_cur, chol, _ = _barrier_value(inst, s, b, t)

    # Gap-driven polish. Near the center the computed Newton decrement
    # sits on a floating-point noise floor and successive steps random
    # walk around the analytic center, so convergence is declared on the
    # certified duality gap instead, keeping the best iterate seen.
    gap = _certified_gap(inst, s, b, t)
    best = (s, b, gap)
    accept = 2.0 * inst.nu / t_final
    polish = 0
    while best[2] > accept and polish < 60:
        polish += 1
        iters += 1
        u, beta, lam, step_max = _newton_direction(inst, s, b, t, chol)
        step = min(1.0, 0.99 * step_max)
        chol_try = None
        for _ in range(6):
            s_try = s + step * u
            s_try = 0.5 * (s_try + s_try.conj().T)
            b_try = b + step * beta
            _, chol_try, _ = _barrier_value(inst, s_try, b_try, t)
            if chol_try is not None:
                break
            step *= 0.5
        if chol_try is None:
            break
        s, b, chol = s_try, b_try, chol_try
        gap = _certified_gap(inst, s, b, t)
        if gap < best[2]:
            best = (s, b, gap)
    s, b, gap = best
    return s, b, t, iters, gap


def solve_p1(inputs, warm_start=None, gap_tol=1e-7):
    """Minimize b = 1/eta over the zero-sum PSD cone (problem P1).

    ``warm_start`` may carry a previous round's plan; the solve falls
    back to an analytic interior start if the warm point is infeasible
    for the new instance.
    """
    k = inputs.num_users
    c_p = inputs.privacy_demand
    b_pow = float(np.max(inputs.gradient_bounds**2 / (np.abs(inputs.h) ** 2 * inputs.power)))
    if k == 1:
        if c_p > 0 and inputs.adversary_noise <= 0:
            raise InfeasibleInputs("single user with no adversary noise cannot satisfy privacy")
        b = max(b_pow, c_p / inputs.adversary_noise if c_p > 0 else 0.0)
        r = np.zeros((1, 1), dtype=np.complex128)
        return _plan_from_reduced(inputs, np.zeros((0, 0)), None, b, 0.0, 0, r=r)

    inst = _Instance(inputs)
    if not inst.has_privacy:
        # the quadratic form cannot help (no demand, or all effective
        # gains equal): R = 0 with b set by power and adversary noise
        b = b_pow if c_p <= 0 else max(b_pow, c_p / inputs.adversary_noise)
        s0 = np.zeros((inst.m, inst.m), dtype=np.complex128)
        return _plan_from_reduced(inputs, s0, inst.basis, b, 0.0, 0)

    s_hint = b_hint = None
    if (
        warm_start is not None
        and warm_start.reduced is not None
        and warm_start.reduced.shape[0] == inst.m
    ):
        s_hint = inst.normalize_s(warm_start.reduced)
        b_hint = warm_start.b / inst.b_ref
    elif inst.unc_plan is not None:
        # project the diagonal-covariance solution onto the zero-sum cone
        diag = np.real(np.diag(inst.unc_plan.r)) / inst.s_ref
        s_hint = (inst.basis.T * diag) @ inst.basis
        s_hint = s_hint.astype(np.complex128)
        b_hint = 1.0
    s, b = inst.initial_point(s_hint, b_hint)
    t0 = 16.0

    s, b, _, iters, kkt = _solve_barrier(inst, s, b, gap_tol, t0, MAX_NEWTON_STEPS)

    s_raw = inst.s_ref * hermitian_part(s)
    return _plan_from_reduced(inputs, s_raw, inst.basis, inst.b_ref * b, kkt, iters)


def solve_p1_uncorrelated(inputs):
    """Diagonal-covariance baseline: zero-sum dropped, same power budget.

    The privacy constraint uses the aggregated uncorrelated form
    m^2 = eta * sum_k |rho_k|^2 R_kk + N_a. With b = 1/eta the program is
    linear and one-dimensional after eliminating R_kk, so the optimum is
    computed exactly: past the power bound every user's slack is active,
    and the minimal perturbation satisfying privacy with equality is a
    uniform scaling of the power slack.
    """
    a = np.abs(inputs.h) ** 2 * inputs.power
    g2 = inputs.gradient_bounds**2
    d_c = inputs.symbol_dim
    rho2 = np.abs(inputs.rho) ** 2
    c_p = inputs.privacy_demand
    n_a = inputs.adversary_noise
    b_pow = float(np.max(g2 / a))

    if c_p <= 0:
        b = b_pow
        alpha = 0.0
    else:
        slope = float(rho2 @ a) / d_c + n_a
        if slope <= 0:
            raise InfeasibleInputs("no adversary noise and zero effective gains")
        root = (c_p + float(rho2 @ g2) / d_c) / slope
        b = max(b_pow, root)
        full = (b * a - g2) / d_c
        fmax = float(rho2 @ np.clip(full, 0.0, None))
        need = c_p - n_a * b
        alpha = 0.0 if need <= 0 or fmax <= 0 else min(need / fmax, 1.0)
    diag = alpha * np.clip((b * a - g2) / d_c, 0.0, None)
    r = np.diag(diag).astype(np.complex128)
    plan = RoundPlan(
        r=r,
        eta=1.0 / b,
        b=b,
        objective=inputs.objective_weight * b,
        kkt_residual=0.0,
        solver_iterations=0,
        diagonal=True,
    )
    return plan


def nominal_plan(inputs):
    """No-perturbation baseline: R = 0, eta at the power bound."""
    a = np.abs(inputs.h) ** 2 * inputs.power
    b = float(np.max(inputs.gradient_bounds**2 / a))
    k = inputs.num_users
    return RoundPlan(
        r=np.zeros((k, k), dtype=np.complex128),
        eta=1.0 / b,
        b=b,
        objective=inputs.objective_weight * b,
        kkt_residual=0.0,
        solver_iterations=0,
        diagonal=True,
    )
