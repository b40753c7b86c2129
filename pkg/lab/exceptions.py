class LabError(Exception):
    """Base class for errors raised by the lab."""


class ConfigError(LabError, ValueError):
    """A run configuration failed validation."""

    def __init__(self, message, errors=None):
        super().__init__(message)
        self.errors = errors or {}


class ContractViolation(LabError, ValueError):
    """An operation was called outside its precondition."""


class GridMismatchError(ContractViolation):
    pass


class CFLViolation(LabError):
    def __init__(self, dt, suggested_dt):
        super().__init__(
            f"time step {dt:.3e} exceeds the CFL bound, use dt <= {suggested_dt:.3e}"
        )
        self.dt = dt
        self.suggested_dt = suggested_dt


class BlowUpError(LabError):
    def __init__(self, time, size, reason="non-finite state"):
        super().__init__(f"numerical blow-up at t={time:.6g}: {reason} (H2 size {size:.3e})")
        self.time = time
        self.size = size


class NonDiffeomorphicMap(LabError):
    def __init__(self, min_jacobian):
        super().__init__(
            f"generated flow map is not a diffeomorphism: min det = {min_jacobian:.3e}"
        )
        self.min_jacobian = min_jacobian


class InterpolationResidualError(LabError):
    def __init__(self, residuals):
        formatted = ", ".join(f"{k}={v:.3e}" for k, v in residuals.items())
        super().__init__(f"Eulerian push-forward is inaccurate: {formatted}")
        self.residuals = residuals


class InfeasibleProfile(LabError, ValueError):
    pass


class NonAdmissibleTrajectory(LabError):
    """A trajectory violates the energy inequality and cannot stand in for a weak solution."""

    def __init__(self, label, time, excess):
        super().__init__(
            f"trajectory '{label}' violates the energy inequality at t={time:.6g} "
            f"(excess {excess:.3e})"
        )
        self.label = label
        self.time = time
        self.excess = excess


class MisalignedTrajectories(LabError):
    pass


class CertificateFailure(LabError):
    """An acceptance check failed. `report` holds the structured result."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report or {}
