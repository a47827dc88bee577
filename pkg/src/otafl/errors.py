"""Exception types shared across the simulator."""


class OtaflError(Exception):
    """Base class for all library errors."""


class InvalidInput(OtaflError):
    """Input contains NaN/Inf or violates a structural precondition."""


class NotPsd(OtaflError):
    """Matrix has a negative eigenvalue beyond the accepted tolerance."""


class DomainError(OtaflError):
    """Scalar argument outside the function's domain."""


class ChannelOutage(OtaflError):
    """A server channel gain fell below the inversion guard; redraw the round."""


class SingleUserDegenerate(OtaflError):
    """Zero-sum reduction is empty for K=1 (the perturbation must be zero)."""


class InfeasibleInputs(OtaflError):
    """The privacy constraint cannot be met at any finite power scaling."""


class SolverNonConvergence(OtaflError):
    """Interior-point solve hit the iteration cap without closing the gap."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals or {}


class PowerViolation(OtaflError):
    """Transmit signal inconsistent with the plan's power budget."""


class DimensionTooSmall(OtaflError):
    """Model dimension too small for the synthetic label formula."""


class ConfigError(OtaflError):
    """Experiment configuration is internally inconsistent."""


class ExperimentAborted(OtaflError):
    """Too many Monte-Carlo repetitions failed for the run to be trusted."""
