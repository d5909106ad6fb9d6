"""Exception hierarchy shared by all pipeline stages."""


class CascadeError(Exception):
    """Base class for every error raised by this package."""


# ---------------------------------------------------------------- ingest
class TleError(CascadeError):
    """Malformed TLE entry."""


class ChecksumMismatch(TleError):
    pass


class FieldParse(TleError):
    pass


class LineLengthMismatch(TleError):
    pass


class CatalogMismatch(TleError):
    pass


class DayOutOfRange(TleError):
    pass


class EmptyArchive(CascadeError):
    pass


# -------------------------------------------------------------- dynamics
class NonPositive(CascadeError, ValueError):
    pass


class Hyperbolic(CascadeError, ValueError):
    pass


class Degenerate(CascadeError, ValueError):
    pass


class NoConvergence(CascadeError, ArithmeticError):
    pass


class BelowModelFloor(CascadeError):
    """State altitude fell below the lowest atmosphere band."""


# ----------------------------------------------------- features / rules
class EpochOrder(CascadeError, ValueError):
    pass


class SatelliteMismatch(CascadeError, ValueError):
    pass


class DegenerateFeature(CascadeError, ValueError):
    pass


# ---------------------------------------------------------------- filter
class NotPositiveDefinite(CascadeError, ArithmeticError):
    pass


class SingularInnovationCovariance(CascadeError, ArithmeticError):
    pass


class ReentryDuringPredict(BelowModelFloor):
    pass


class FilterFailure(CascadeError):
    """Every mode of an IMM step failed."""


# --------------------------------------------------------------- cascade
class UndefinedRatio(CascadeError, ZeroDivisionError):
    pass


class NonPositiveSigma(CascadeError, ValueError):
    pass


# ----------------------------------------------------------------- synth
class ReentryDuringGeneration(BelowModelFloor):
    pass


class LengthMismatch(CascadeError, ValueError):
    pass


class ConfigError(CascadeError, ValueError):
    pass
