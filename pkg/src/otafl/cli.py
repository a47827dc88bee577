"""Command-line entry point.

Subcommands:

* ``run``           - full experiment from a JSON config
* ``sweep-epsilon`` - final-gap trend across privacy budgets
* ``sweep-snr``     - final-gap trend across target receive SNRs
* ``design``        - one-shot covariance design with residual printout
* ``audit``         - Monte-Carlo differential-privacy audit of a plan log
* ``selftest``      - fast invariant checks

Exit codes: 0 success, 2 configuration/usage error, 3 solver or run failure.
"""

import argparse
import csv
import json
import sys

import numpy as np

from .covdesign import (
    DesignInputs,
    example_covariance,
    p1_constraint_violations,
    solve_p1,
    zero_sum_violation,
)
from .errors import ConfigError, OtaflError
from .harness import (
    ExperimentConfig,
    run_experiment,
    sweep_epsilon,
    sweep_snr,
    write_outputs,
)
from .numerics import RngStream, sample_complex_gaussian
from .privacy import DpBudget, RoundPrivacyInputs, check_theorem1, monte_carlo_dp_audit

_OVERRIDE_TYPES = {
    "epsilon": float,
    "delta": float,
    "target_snr_db": float,
    "repetitions": int,
    "rounds": int,
    "num_users": int,
    "dim": int,
    "samples_per_user": int,
    "seed": int,
}


def _load_config(args):
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            cfg = ExperimentConfig.from_json(fh.read())
    else:
        cfg = ExperimentConfig()
    overrides = {}
    for key, conv in _OVERRIDE_TYPES.items():
        val = getattr(args, key, None)
        if val is not None:
            overrides[key] = conv(val)
    if overrides:
        from dataclasses import replace

        cfg = replace(cfg, **overrides)
    return cfg


def _add_config_flags(sub):
    sub.add_argument("--config", help="JSON config file; defaults reproduce the reference setup")
    sub.add_argument("--out", default="results", help="output directory")
    for key in _OVERRIDE_TYPES:
        sub.add_argument(f"--{key.replace('_', '-')}", dest=key, default=None)


def _cmd_run(args):
    cfg = _load_config(args)
    result = run_experiment(cfg)
    path = write_outputs(result, args.out)
    print(f"run {result.run_id}: {len(result.rows)} rows -> {path}")
    if result.failures:
        print(f"  {len(result.failures)} repetitions failed (within tolerance)")
    return 0


def _write_trend_csv(rows, path, key):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([key, "scheme", "mean_final_gap", "stderr_final_gap"])
        for row in rows:
            writer.writerow(
                [f"{row[key]:.12g}", row["scheme"], f"{row['mean_final_gap']:.12g}", f"{row['stderr_final_gap']:.12g}"]
            )


def _cmd_sweep_epsilon(args):
    cfg = _load_config(args)
    rows = sweep_epsilon(cfg)
    path = f"{args.out}/sweep_epsilon_{cfg.run_id}.csv"
    import os

    os.makedirs(args.out, exist_ok=True)
    _write_trend_csv(rows, path, "epsilon")
    print(f"epsilon sweep -> {path}")
    return 0


def _cmd_sweep_snr(args):
    cfg = _load_config(args)
    rows = sweep_snr(cfg)
    path = f"{args.out}/sweep_snr_{cfg.run_id}.csv"
    import os

    os.makedirs(args.out, exist_ok=True)
    _write_trend_csv(rows, path, "target_snr_db")
    print(f"snr sweep -> {path}")
    return 0


def _complex_matrix_to_lists(m):
    return [[[float(v.real), float(v.imag)] for v in row] for row in np.asarray(m, dtype=complex)]


def _cmd_design(args):
    k = args.k
    diag = args.diag
    family = example_covariance(k, diag)
    quad, row = zero_sum_violation(family)
    eigs = np.linalg.eigvalsh(family)
    print(f"fixed-diagonal zero-sum family, K={k}, diagonal {diag:g}:")
    with np.printoptions(precision=6, suppress=True):
        print(family.real)
    print(f"eigenvalues: {np.array2string(eigs, precision=6)}")
    print(f"zero-sum residuals: quad {quad:.2e}, row {row:.2e}")

    rng = RngStream(args.seed, "design")
    h = sample_complex_gaussian(rng.substream("h"), k) + 2.0
    g = sample_complex_gaussian(rng.substream("g"), k)
    inputs = DesignInputs(
        round_index=1,
        h=h,
        rho=g / h,
        gamma=1.0,
        gradient_bounds=np.full(k, 2.0),
        symbol_dim=5,
        power=1.0,
        round_dp_radius=0.05,
        adversary_noise=1e-3,
    )
    plan = solve_p1(inputs)
    print(f"\nrandom instance (seed {args.seed}): eta {plan.eta:.6e}, b {plan.b:.6f}, "
          f"kkt {plan.kkt_residual:.2e}, iters {plan.solver_iterations}")
    with np.printoptions(precision=4, suppress=True):
        print("R =")
        print(plan.r)
    print("constraint residuals:", {k_: f"{v:.2e}" for k_, v in p1_constraint_violations(plan, inputs).items()})
    if args.save:
        log = {
            "epsilon": 5.0,
            "delta": 0.01,
            "total_rounds": 1,
            "rounds": [
                {
                    "eta": plan.eta,
                    "rho": _complex_matrix_to_lists(inputs.rho.reshape(1, -1))[0],
                    "r": _complex_matrix_to_lists(plan.r),
                    "n_a": inputs.adversary_noise,
                    "gamma": inputs.gamma,
                    "rho_max": inputs.rho_max,
                }
            ],
        }
        with open(args.save, "w", encoding="utf-8") as fh:
            json.dump(log, fh, indent=2)
        print(f"plan log -> {args.save}")
    return 0


def _cmd_audit(args):
    with open(args.plan, "r", encoding="utf-8") as fh:
        log = json.load(fh)
    budget = DpBudget.uniform(log["epsilon"], log["delta"], log["total_rounds"])
    rounds = []
    for entry in log["rounds"]:
        rho = np.array([complex(re, im) for re, im in entry["rho"]])
        r = np.array([[complex(re, im) for re, im in row] for row in entry["r"]])
        rounds.append(
            RoundPrivacyInputs(
                eta=entry["eta"],
                rho=rho,
                r=r,
                n_a=entry["n_a"],
                gamma=entry["gamma"],
                rho_max=entry["rho_max"],
            )
        )
    accounts = [rd.account(i) for i, rd in enumerate(rounds, start=1)]
    ok, tau, margin = check_theorem1(accounts, budget)
    rate = monte_carlo_dp_audit(rounds, budget, RngStream(args.seed, "audit"), draws=args.draws)
    print(f"tau {tau:.6g}, margin {margin:.6g}, sufficient condition {'met' if ok else 'VIOLATED'}")
    print(f"empirical privacy-failure rate: {rate:.3e} (delta = {log['delta']:g})")
    return 0 if rate <= log["delta"] else 3


def _cmd_selftest(args):
    from .airlink import de_split, split_to_complex
    from .covdesign import reduce_zero_sum, sample_perturbations
    from .privacy import c_function, c_inverse

    rng = RngStream(args.seed, "selftest")
    checks = []

    v = rng.substream("roundtrip").standard_normal(11)
    checks.append(("split round trip", bool(np.allclose(de_split(split_to_complex(v), 11), v))))

    x = c_inverse(100.0)
    checks.append(("c_inverse round trip", abs(c_function(x) - 100.0) < 1e-6))

    basis = reduce_zero_sum(8)
    ones = np.ones(8)
    checks.append(("zero-sum basis", float(np.linalg.norm(basis.T @ ones)) < 1e-12))

    k = 6
    h = sample_complex_gaussian(rng.substream("h"), k) + 2.0
    g = sample_complex_gaussian(rng.substream("g"), k)
    inputs = DesignInputs(
        round_index=1,
        h=h,
        rho=g / h,
        gamma=1.0,
        gradient_bounds=np.full(k, 2.0),
        symbol_dim=4,
        power=1.0,
        round_dp_radius=0.05,
        adversary_noise=1e-3,
    )
    plan = solve_p1(inputs)
    viol = p1_constraint_violations(plan, inputs)
    checks.append(("solver feasibility", max(viol["privacy"], viol["power"]) < 1e-8))
    pert = sample_perturbations(plan, 4, rng.substream("pert"))
    checks.append(("perturbation cancellation", float(np.max(np.abs(pert.sum(axis=0)))) < 1e-9 * np.linalg.norm(pert)))

    ok = True
    for name, passed in checks:
        print(f"  {'PASS' if passed else 'FAIL'}  {name}")
        ok = ok and passed
    return 0 if ok else 3


def build_parser():
    parser = argparse.ArgumentParser(prog="otafl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="full experiment")
    _add_config_flags(p_run)
    p_run.set_defaults(func=_cmd_run)

    p_eps = sub.add_parser("sweep-epsilon", help="final gap vs privacy budget")
    _add_config_flags(p_eps)
    p_eps.set_defaults(func=_cmd_sweep_epsilon)

    p_snr = sub.add_parser("sweep-snr", help="final gap vs target SNR")
    _add_config_flags(p_snr)
    p_snr.set_defaults(func=_cmd_sweep_snr)

    p_des = sub.add_parser("design", help="one-shot covariance design")
    p_des.add_argument("--k", type=int, default=3)
    p_des.add_argument("--diag", type=float, default=4.0)
    p_des.add_argument("--seed", type=int, default=0)
    p_des.add_argument("--save", help="write a plan log usable by the audit command")
    p_des.set_defaults(func=_cmd_design)

    p_aud = sub.add_parser("audit", help="Monte-Carlo privacy audit of a plan log")
    p_aud.add_argument("--plan", required=True)
    p_aud.add_argument("--draws", type=int, default=1_000_000)
    p_aud.add_argument("--seed", type=int, default=0)
    p_aud.set_defaults(func=_cmd_audit)

    p_self = sub.add_parser("selftest", help="fast invariant checks")
    p_self.add_argument("--seed", type=int, default=0)
    p_self.set_defaults(func=_cmd_selftest)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"file not found: {exc}", file=sys.stderr)
        return 2
    except OtaflError as exc:
        print(f"run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
