"""Exception types raised by nestedstats."""


class NestedStatsError(ValueError):
    """Base class for all estimation and input errors."""


class DomainError(NestedStatsError):
    """Argument outside the mathematical domain of a function."""


class InsufficientDataError(NestedStatsError):
    """Too few samples (or subjects) for the requested quantity."""


class DegenerateDataError(NestedStatsError):
    """Data admit no finite estimate, e.g. zero variance or |r| = 1."""


class ShapeError(NestedStatsError):
    """Mismatched lengths or dimensions."""


class SingularDesignError(NestedStatsError):
    """Regression design matrix does not have full column rank."""


class EffectKindError(TypeError):
    """Subject effects of the wrong kind were passed to a combiner."""
