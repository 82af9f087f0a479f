"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes: configuration problems exit with 2,
numerical failures with 3 and acceptance regressions with 1.
"""


class NessError(Exception):
    """Base class for every error raised by the package."""

    exit_code = 3


class ConfigError(NessError, ValueError):
    """Configuration is malformed or violates a type invariant."""

    exit_code = 2


class InputError(ConfigError):
    """Numerical input (potential table, panel entries) is unusable."""


class DomainError(NessError, ValueError):
    """An argument lies outside the domain of an operation."""

    exit_code = 2


class HypothesisViolation(NessError):
    """A modelling hypothesis (isolated branches, single crossing, ...) fails."""


class NumericalError(NessError):
    """Solver residual, orthogonality or convergence check failed."""


class StepSizeError(NumericalError):
    """Time step too large or quadrature refinement disagrees."""


class HorizonError(NumericalError):
    """Requested evolution would let wall reflections return to the sample."""

    def __init__(self, message, max_abs_s=None, required_L=None):
        super().__init__(message)
        self.max_abs_s = max_abs_s
        self.required_L = required_L


class ResourceGuardError(NessError):
    """Dense mode requested for a system that is too large."""


class BranchResolutionError(NumericalError):
    """A continued eigenprojector could not be matched reliably."""


class ContourQuadratureError(NumericalError):
    """Contour integral for the corrector did not converge."""


class AssemblyError(NessError):
    """Required ingredients for the steady state are missing."""


class RegressionFailure(NessError):
    """A measured rate or monotonicity verdict failed."""

    exit_code = 1
