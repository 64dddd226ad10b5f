"""Exception types shared across the package."""


class MultiSsfError(Exception):
    """Base class for all package-specific errors."""


class DuplicateConsecutivePoints(MultiSsfError):
    """Two consecutive trajectory points coincide (step length 0)."""


class BesselOverflow(MultiSsfError):
    """bessel_i0 argument too large for a finite double result."""


class InvalidNaturalParams(MultiSsfError):
    """Natural parameters outside the valid gamma domain."""


class OutOfGrid(MultiSsfError):
    """A location falls outside the landscape grid."""


class Separation(MultiSsfError):
    """Conditional-logit likelihood is unbounded (perfect discrimination)."""


class NotIdentified(MultiSsfError):
    """Covariates carry no within-choice-set variation; beta not identified."""


class NumericalUnderflow(MultiSsfError):
    """A full emission row underflowed to zero."""


class DegenerateState(MultiSsfError):
    """A hidden state has (numerically) zero occupancy."""


class NotPositiveDefinite(MultiSsfError):
    """Negative Hessian at the optimum is not positive definite."""


class AllRunsFailed(MultiSsfError):
    """Every multistart EM run raised an error."""


class MaxStepsExceeded(MultiSsfError):
    """Trajectory simulation hit the step cap before reaching the target."""


class ConfigError(MultiSsfError):
    """Run configuration failed schema validation."""
