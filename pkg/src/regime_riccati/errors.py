"""Exception hierarchy.

Everything raised on purpose by the package derives from
:class:`RegimeRiccatiError`.  :class:`NumericFailure` marks the subset that
signals a numerical breakdown (the CLI maps it to exit code 3).
"""


class RegimeRiccatiError(Exception):
    pass


class InvalidMarket(RegimeRiccatiError):
    pass


class InvalidTarget(RegimeRiccatiError):
    pass


class BelowThreshold(InvalidTarget):
    """Target return below the riskless growth of the initial wealth."""


class Infeasible(RegimeRiccatiError):
    pass


class InterestNotDeterministic(RegimeRiccatiError):
    pass


class DimensionTooLarge(RegimeRiccatiError):
    pass


class OutOfGrid(RegimeRiccatiError):
    pass


class MonotonicityViolated(RegimeRiccatiError):
    pass


class NumericFailure(RegimeRiccatiError):
    pass


class NotPositiveDefinite(NumericFailure):
    pass


class PositivityLost(NumericFailure):
    pass


class BoundViolated(NumericFailure):
    pass


class DivisionGuard(NumericFailure):
    pass


class DegenerateM(NumericFailure):
    pass


class DegenerateDiscount(NumericFailure):
    pass


class NumericalBlowup(NumericFailure):
    pass
