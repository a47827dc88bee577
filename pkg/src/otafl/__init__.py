"""Over-the-air federated learning with zero-sum correlated perturbations.

Simulates analog gradient aggregation over a fading multiple-access
channel where users add zero-sum, spatially correlated artificial noise.
The noise cancels at the server but degrades an eavesdropper, and each
round's noise covariance and power scaling come from a small convex
program solved under per-user power and differential-privacy budgets.
"""

from .airlink import (
    RxSignal,
    TxSignal,
    adversary_receive,
    build_tx,
    de_split,
    estimate_global_gradient,
    server_receive,
    split_to_complex,
)
from .channel import ChannelConfig, ChannelState, advance_round, init_channel, next_valid_round
from .covdesign import (
    DesignInputs,
    RoundPlan,
    example_covariance,
    nominal_plan,
    p1_constraint_violations,
    reduce_zero_sum,
    sample_perturbations,
    solve_p1,
    solve_p1_uncorrelated,
    zero_sum_violation,
)
from .errors import (
    ChannelOutage,
    ConfigError,
    DimensionTooSmall,
    DomainError,
    ExperimentAborted,
    InfeasibleInputs,
    InvalidInput,
    NotPsd,
    OtaflError,
    PowerViolation,
    SingleUserDegenerate,
    SolverNonConvergence,
)
from .harness import (
    ExperimentConfig,
    ExperimentResult,
    run_experiment,
    sweep_epsilon,
    sweep_snr,
    write_outputs,
)
from .learning import (
    FlTask,
    TrainState,
    convergence_bound,
    generate_task,
    global_gradient,
    global_loss,
    gradient_bounds,
    initial_state,
    local_gradient,
    local_loss,
    optimality_gap,
    train_round,
)
from .numerics import RngStream, psd_project, psd_sqrt, sample_complex_gaussian
from .privacy import (
    DpBudget,
    DpRoundAccount,
    GradientBounds,
    RoundPrivacyInputs,
    analytic_tail_probability,
    c_function,
    c_inverse,
    check_theorem1,
    dp_radius,
    effective_noise_variance,
    monte_carlo_dp_audit,
    round_radius,
    sensitivity,
)

__version__ = "0.1.0"
