"""Exception types shared across the package."""


class DomainError(ValueError):
    """Input lies outside the domain of a function (a pole, a divergent integral...)."""


class RangeError(OverflowError):
    """Evaluation would leave the representable or configured range."""


class ConvergenceError(RuntimeError):
    """An iterative or adaptive procedure did not reach its tolerance."""

    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


class SimulationGuardError(RuntimeError):
    """A runtime guard of the NLS simulator tripped (blow-up, non-contraction)."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class IllConditionedError(RuntimeError):
    """A linear system is too ill-conditioned to solve meaningfully."""
