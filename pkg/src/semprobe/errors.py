"""Exception types shared across the package."""


class SemProbeError(Exception):
    """Base class for all package errors."""


class IterationLimit(SemProbeError):
    """EM hit the iteration cap without meeting the convergence test."""


class NonFiniteLL(SemProbeError):
    """The log-likelihood became non-finite during iteration."""


class ZeroDenominator(SemProbeError):
    """Relative change is undefined because the reference value is zero."""


class OrderingViolation(SemProbeError):
    """Graded intercepts are not strictly ordered (negative probability)."""


class GridBudgetExceeded(SemProbeError):
    """Tensor-product quadrature grid would exceed the node budget."""


class NonFinitePattern(SemProbeError):
    """A response pattern has zero likelihood at every quadrature node."""


class MStepDivergence(SemProbeError):
    """Newton iterations cannot improve the M-step objective."""


class UnknownSpec(SemProbeError):
    """Requested built-in model name is not recognized."""


class BoundViolation(SemProbeError):
    """A probe or step left the feasible parameter set."""


class EmptyWindow(SemProbeError):
    """No EM iteration falls inside the configured history window."""


class NotPositiveDefinite(SemProbeError):
    """A matrix required to be positive definite is not."""


class SingularInfo(SemProbeError):
    """Information matrix inversion failed."""


class ZeroTruth(SemProbeError):
    """Reference standard errors contain zeros."""


class DegenerateFit(SemProbeError):
    """Noise-model regression has no signal (all measurements zero)."""


class TooFewTrials(SemProbeError):
    """Monte Carlo summaries need at least two trials."""


class NonFiniteEvaluation(SemProbeError):
    """Numerical differentiation probe produced a non-finite value."""
