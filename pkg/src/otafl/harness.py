"""Experiment orchestration: scheme comparison, sweeps and CSV output.

A run compares up to three uplink schemes over shared channel draws:

* ``nominal``      - no perturbation, full power (no privacy guarantee)
* ``uncorrelated`` - independent per-user perturbations (diagonal R)
* ``correlated``   - zero-sum spatially correlated perturbations (P1)

Each repetition redraws the channels, recalibrates the receiver noise to
the target SNR, trains for T rounds per scheme and logs round metrics.
Results aggregate across repetitions into mean and standard-error rows.
"""

import csv
import hashlib
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .airlink import build_tx, estimate_global_gradient, server_receive
from .channel import ChannelConfig, next_valid_round
from .covdesign import (
    DesignInputs,
    nominal_plan,
    sample_perturbations,
    solve_p1,
    solve_p1_uncorrelated,
)
from .errors import ConfigError, ExperimentAborted, OtaflError
from .learning import generate_task, gradient_bounds, initial_state, local_gradient, optimality_gap, train_round
from .numerics import RngStream
from .privacy import DpBudget, RoundPrivacyInputs, check_theorem1, dp_radius, effective_noise_variance, round_radius

SCHEMES = ("nominal", "uncorrelated", "correlated")

CSV_COLUMNS = (
    "run_id",
    "scheme",
    "repetition",
    "round",
    "eta",
    "snr_server_db",
    "sinr_adv_db",
    "gap",
    "dp_tau_cumulative",
    "dp_margin",
    "power_headroom_min",
    "solver_iters",
)


@dataclass(frozen=True)
class ExperimentConfig:
    """Full experiment description; defaults reproduce the reference setup."""

    num_users: int = 10
    samples_per_user: int = 1000
    dim: int = 10
    zeta: float = 0.5e-4
    rounds: int = 30
    power: float = 1.0
    epsilon: float = 5.0
    delta: float = 0.01
    target_snr_db: float = 10.0
    rician_server: float = 5.0
    rician_adversary: float = 0.0
    ar_coefficient: float = 0.0
    w_bound: float = 10.0
    repetitions: int = 100
    seed: int = 0
    schemes: tuple = SCHEMES
    allocation: str = "uniform"
    adversary_noise: float | None = None
    solver_gap_tol: float = 1e-4

    def __post_init__(self):
        object.__setattr__(self, "schemes", tuple(self.schemes))
        if not self.schemes or any(s not in SCHEMES for s in self.schemes):
            raise ConfigError(f"schemes must be a nonempty subset of {SCHEMES}")
        if self.allocation not in ("uniform", "dirichlet"):
            raise ConfigError("allocation must be 'uniform' or 'dirichlet'")
        if min(self.num_users, self.samples_per_user, self.dim, self.rounds, self.repetitions) < 1:
            raise ConfigError("counts must be positive")
        if self.power <= 0 or self.epsilon <= 0 or not 0 < self.delta < 1:
            raise ConfigError("power and the privacy budget must be positive")
        if self.solver_gap_tol <= 0 or self.w_bound <= 0:
            raise ConfigError("solver_gap_tol and w_bound must be positive")

    @property
    def symbol_dim(self):
        return (self.dim + 1) // 2

    def to_json(self):
        d = asdict(self)
        d["schemes"] = list(self.schemes)
        return json.dumps(d, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"bad config JSON: {exc}") from exc
        known = {f for f in cls.__dataclass_fields__}
        extra = set(raw) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        return cls(**raw)

    @property
    def run_id(self):
        cached = object.__getattribute__(self, "__dict__").get("_run_id")
        if cached is None:
            cached = hashlib.sha256(self.to_json().encode()).hexdigest()[:12]
            object.__setattr__(self, "_run_id", cached)
        return cached


def snr_server(scheme, eta, grad_norms, r, n0, dim):
    """Receive SNR of the aggregated signal, in linear scale.

    Signal power P_s = sum_k ||grad_k||^2. Nominal and correlated plans
    leave no perturbation residue at the server, so the noise floor is
    d N_0; uncorrelated perturbations add their aggregated per-element
    variance eta * sum_k R_kk.
    """
    p_s = float(np.sum(np.asarray(grad_norms) ** 2))
    if scheme == "uncorrelated" and r is not None:
        resid = eta * float(np.real(np.trace(r)))
    else:
        resid = 0.0
    return eta * p_s / (dim * (resid + n0))


def snr_server_literal(eta, grad_norms, r, n0, dim):
    """Per-user-index variant of the uncorrelated SNR, worst user.

    Charges each user only its own perturbation residue,
    eta P_s / (d (eta R_kk + N_0)), and reports the minimum over k as
    the conservative reading; kept as an alternate metric beside the
    aggregated form.
    """
    p_s = float(np.sum(np.asarray(grad_norms) ** 2))
    diag = np.clip(np.real(np.diag(r)), 0.0, None) if r is not None else np.zeros(1)
    return float(np.min(eta * p_s / (dim * (eta * diag + n0))))


def sinr_adversary(scheme, eta, rho, grad_norms, r, n_a, dim):
    """Adversary SINR: eta P_a / (d m^2), P_a = sum |rho_k|^2 ||grad_k||^2."""
    rho = np.asarray(rho)
    p_a = float(np.abs(rho) ** 2 @ np.asarray(grad_norms) ** 2)
    if scheme == "nominal" or r is None:
        m2 = n_a
    else:
        m2 = effective_noise_variance(eta, rho, r, n_a)
    return eta * p_a / (dim * m2)


def eta_closed_forms(h, bounds, r, power, symbol_dim):
    """(eta_nom, eta_pert): largest power scalings meeting the budget.

    eta_nom = P min_k |h_k|^2 / G_k^2 ignores perturbations; eta_pert
    charges each user its expected perturbation energy d_c R_kk.
    """
    a = np.abs(np.asarray(h)) ** 2 * power
    g2 = np.asarray(bounds.per_user) ** 2
    eta_nom = float(np.min(a / g2))
    diag = np.clip(np.real(np.diag(r)), 0.0, None) if r is not None else 0.0
    eta_pert = float(np.min(a / (g2 + symbol_dim * diag)))
    return eta_nom, eta_pert


@dataclass
class RepetitionResult:
    repetition: int
    rows: list
    theorem1: dict
    final_gap: dict
    error: str | None = None


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    rows: list
    summary_rows: list
    failures: list
    task_fingerprint: dict = field(default_factory=dict)

    @property
    def run_id(self):
        return self.config.run_id

    def final_gaps(self, scheme):
        last = self.config.rounds
        return [r["gap"] for r in self.rows if r["scheme"] == scheme and r["round"] == last and r["repetition"] >= 0]


def _round_plan(scheme, inputs, warm, gap_tol):
    if scheme == "nominal":
        return nominal_plan(inputs)
    if scheme == "uncorrelated":
        return solve_p1_uncorrelated(inputs)
    return solve_p1(inputs, warm_start=warm, gap_tol=gap_tol)


def _run_repetition(cfg, task, bounds, budget, rep):
    """Train all schemes for one channel realization; shared draws."""
    # keyed by seed and repetition only, so configs sharing a seed see
    # common channel and noise draws (variance reduction across sweeps)
    rng = RngStream(cfg.seed, f"rep{rep}")
    chan_cfg = ChannelConfig(
        num_users=cfg.num_users,
        rician_factor_server=cfg.rician_server,
        rician_factor_adversary=cfg.rician_adversary,
        ar_coefficient=cfg.ar_coefficient,
    )
    chan_rng = rng.substream("channel")
    states = []
    st = None
    for _ in range(cfg.rounds):
        st = next_valid_round(st, chan_cfg, chan_rng)
        states.append(st)

    d_c = cfg.symbol_dim
    # noise floor calibrated so the nominal round-1 SNR hits the target
    w0 = np.zeros(cfg.dim)
    grads0 = [local_gradient(task, k, w0) for k in range(cfg.num_users)]
    p_s0 = sum(float(g @ g) for g in grads0)
    eta_nom1, _ = eta_closed_forms(states[0].h, bounds, None, cfg.power, d_c)
    snr_lin = 10.0 ** (cfg.target_snr_db / 10.0)
    n0 = eta_nom1 * p_s0 / (cfg.dim * snr_lin)
    n_a = cfg.adversary_noise if cfg.adversary_noise is not None else n0

    radius = dp_radius(budget)
    rows = []
    theorem1 = {}
    final_gap = {}
    for scheme in cfg.schemes:
        state = initial_state(task)
        warm = None
        accounts = []
        tau_cum = 0.0
        for t in range(1, cfg.rounds + 1):
            ch = states[t - 1]
            inputs = DesignInputs(
                round_index=t,
                h=ch.h,
                rho=ch.rho,
                gamma=bounds.gamma,
                gradient_bounds=bounds.per_user,
                symbol_dim=d_c,
                power=cfg.power,
                round_dp_radius=round_radius(budget, t),
                adversary_noise=n_a,
                mu=task.mu,
                big_l=task.big_l,
            )
            plan = _round_plan(scheme, inputs, warm, cfg.solver_gap_tol)
            if scheme == "correlated":
                warm = plan
            grads = [local_gradient(task, k, state.w) for k in range(cfg.num_users)]
            grad_norms = [float(np.linalg.norm(g)) for g in grads]
            if scheme == "nominal":
                pert = np.zeros((cfg.num_users, d_c), dtype=np.complex128)
            else:
                pert = sample_perturbations(plan, d_c, rng.substream(f"{scheme}/pert-{t}"))
            signals = [
                build_tx(plan, k, grads[k], pert[k], ch.h[k], power=cfg.power)
                for k in range(cfg.num_users)
            ]
            rx = server_receive(signals, ch.h, n0, rng.substream(f"z-{t}"))
            est = estimate_global_gradient(rx, plan.eta, cfg.num_users, cfg.dim)
            state = train_round(state, est, task, cfg.w_bound)

            if scheme == "nominal":
                tau_round = math.nan
                margin = math.nan
            else:
                acct = RoundPrivacyInputs(
                    eta=plan.eta, rho=ch.rho, r=plan.r, n_a=n_a, gamma=bounds.gamma, rho_max=ch.rho_max
                ).account(t)
                accounts.append(acct)
                tau_cum += acct.consumed_ratio
                tau_round = tau_cum
                margin = radius - tau_cum
            expected_power = plan.eta * (
                np.array(grad_norms) ** 2 + d_c * np.clip(np.real(np.diag(plan.r)), 0.0, None)
            ) / (np.abs(ch.h) ** 2 * cfg.power)
            headroom_min = float(np.min(1.0 - expected_power))
            rows.append(
                {
                    "run_id": cfg.run_id,
                    "scheme": scheme,
                    "repetition": rep,
                    "round": t,
                    "eta": plan.eta,
                    "snr_server_db": 10.0
                    * math.log10(snr_server(scheme, plan.eta, grad_norms, plan.r, n0, cfg.dim)),
                    "sinr_adv_db": 10.0
                    * math.log10(
                        max(
                            sinr_adversary(scheme, plan.eta, ch.rho, grad_norms, plan.r, n_a, cfg.dim),
                            1e-300,
                        )
                    ),
                    "gap": state.gap_history[-1],
                    "dp_tau_cumulative": tau_round,
                    "dp_margin": margin,
                    "power_headroom_min": headroom_min,
                    "solver_iters": plan.solver_iterations,
                }
            )
        if scheme != "nominal":
            ok, tau, margin = check_theorem1(accounts, budget)
            theorem1[scheme] = {"satisfied": ok, "tau": tau, "margin": margin}
            if not ok:
                raise OtaflError(f"privacy accounting violated for scheme {scheme}: tau {tau:.6g}")
        final_gap[scheme] = state.gap_history[-1]
    return RepetitionResult(rep, rows, theorem1, final_gap)


def _rep_worker(args):
    cfg, task, bounds, budget, rep = args
    try:
        return _run_repetition(cfg, task, bounds, budget, rep)
    except OtaflError as exc:
        return RepetitionResult(rep, [], {}, {}, error=f"{type(exc).__name__}: {exc}")


def _worker_count():
    raw = os.environ.get("OTA_SIM_THREADS", "")
    if raw.strip():
        try:
            return max(1, int(raw))
        except ValueError as exc:
            raise ConfigError(f"OTA_SIM_THREADS must be an integer, got {raw!r}") from exc
    return os.cpu_count() or 1


def run_experiment(cfg):
    """Full Monte-Carlo comparison; aborts if more than 5% of reps fail."""
    root = RngStream(cfg.seed, f"experiment/{cfg.run_id}")
    task = generate_task(cfg.num_users, cfg.samples_per_user, cfg.dim, cfg.zeta, root.substream("task"))
    bounds = gradient_bounds(task, cfg.w_bound)
    if cfg.allocation == "uniform":
        budget = DpBudget.uniform(cfg.epsilon, cfg.delta, cfg.rounds)
    else:
        budget = DpBudget.random(cfg.epsilon, cfg.delta, cfg.rounds, root.substream("allocation").generator)

    jobs = [(cfg, task, bounds, budget, rep) for rep in range(cfg.repetitions)]
    workers = min(_worker_count(), cfg.repetitions)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_rep_worker, jobs))
    else:
        results = [_rep_worker(job) for job in jobs]

    failures = [(r.repetition, r.error) for r in results if r.error]
    if len(failures) > 0.05 * cfg.repetitions:
        raise ExperimentAborted(
            f"{len(failures)}/{cfg.repetitions} repetitions failed: {failures[:3]}"
        )
    rows = [row for r in results if not r.error for row in r.rows]
    summary_rows = _summarize(cfg, rows)
    fingerprint = {
        "mu": task.mu,
        "big_l": task.big_l,
        "f_star": task.f_star,
        "w_star_norm": float(np.linalg.norm(task.w_star)),
        "dp_radius": dp_radius(budget),
    }
    return ExperimentResult(cfg, rows + summary_rows, summary_rows, failures, fingerprint)


def _summarize(cfg, rows):
    """Mean (repetition -1) and standard error (repetition -2) rows."""
    out = []
    numeric = ("eta", "snr_server_db", "sinr_adv_db", "gap", "dp_tau_cumulative", "dp_margin", "power_headroom_min", "solver_iters")
    for scheme in cfg.schemes:
        for t in range(1, cfg.rounds + 1):
            block = [r for r in rows if r["scheme"] == scheme and r["round"] == t]
            if not block:
                continue
            mean_row = {"run_id": cfg.run_id, "scheme": scheme, "repetition": -1, "round": t}
            se_row = {"run_id": cfg.run_id, "scheme": scheme, "repetition": -2, "round": t}
            for colname in numeric:
                vals = np.array([r[colname] for r in block], dtype=float)
                mean_row[colname] = float(np.mean(vals))
                se_row[colname] = float(np.std(vals, ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
            out.append(mean_row)
            out.append(se_row)
    return out


def _format_cell(value):
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return f"{value:.12g}"
    return str(value)


def metrics_csv_text(result):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in result.rows:
        writer.writerow([_format_cell(row[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def write_outputs(result, out_dir):
    """Write metrics.csv, run.json and plot_recipe.txt; returns the dir."""
    path = os.path.join(out_dir, result.run_id)
    os.makedirs(path, exist_ok=True)
    with open(os.path.join(path, "metrics.csv"), "w", encoding="utf-8") as fh:
        fh.write(metrics_csv_text(result))
    manifest = {
        "run_id": result.run_id,
        "config": json.loads(result.config.to_json()),
        "seed": result.config.seed,
        "failures": result.failures,
        "task": result.task_fingerprint,
        "version": _package_version(),
    }
    with open(os.path.join(path, "run.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(path, "plot_recipe.txt"), "w", encoding="utf-8") as fh:
        fh.write(PLOT_RECIPE)
    return path


def _package_version():
    try:
        from importlib.metadata import version

        return version("otafl")
    except Exception:
        return "unknown"


PLOT_RECIPE = """\
metrics.csv columns and suggested plots
---------------------------------------
Rows with repetition >= 0 are raw; repetition == -1 holds the mean over
repetitions and repetition == -2 its standard error.

1. Optimality gap vs round:
   x = round, y = gap, filter repetition == -1, one line per scheme
   (log y-axis recommended).
2. Final gap vs epsilon (from an epsilon sweep):
   x = epsilon, y = gap at round == max, repetition == -1, per scheme.
3. Final gap vs target SNR (from an SNR sweep):
   x = target_snr_db, y = gap at round == max, repetition == -1, per scheme.
4. Privacy accounting: x = round, y = dp_tau_cumulative vs dp_margin.
5. Adversary view: x = round, y = sinr_adv_db per scheme.
"""


def _trend_entry(res, scheme, key, value):
    gaps = res.final_gaps(scheme)
    return {
        key: value,
        "scheme": scheme,
        "mean_final_gap": float(np.mean(gaps)),
        "stderr_final_gap": float(np.std(gaps, ddof=1) / math.sqrt(len(gaps))) if len(gaps) > 1 else 0.0,
    }


def sweep_epsilon(cfg, epsilons=(1, 2, 3, 4, 5, 6, 7, 8, 9, 10)):
    """Re-run the experiment across privacy budgets; returns trend rows.

    The nominal scheme ignores the privacy budget and all configs share
    channel and noise draws, so it is simulated once and its row is
    replicated at every epsilon.
    """
    out = []
    nominal_entry = None
    for eps in epsilons:
        schemes = cfg.schemes
        if nominal_entry is not None and "nominal" in schemes:
            schemes = tuple(s for s in schemes if s != "nominal")
        res = run_experiment(replace(cfg, epsilon=float(eps), schemes=schemes))
        for scheme in schemes:
            out.append(_trend_entry(res, scheme, "epsilon", float(eps)))
        if "nominal" in schemes:
            nominal_entry = next(e for e in out if e["scheme"] == "nominal")
        elif nominal_entry is not None and "nominal" in cfg.schemes:
            out.append(dict(nominal_entry, epsilon=float(eps)))
    return out


def sweep_snr(cfg, snrs_db=(0, 5, 10, 15, 20, 25, 30)):
    """Re-run the experiment across target receive SNRs."""
    out = []
    for snr in snrs_db:
        res = run_experiment(replace(cfg, target_snr_db=float(snr)))
        for scheme in cfg.schemes:
            out.append(_trend_entry(res, scheme, "target_snr_db", float(snr)))
    return out
