"""Exception and warning types shared across the toolkit."""


class StainBenchError(Exception):
    """Base class for all toolkit-specific failures."""


class DecodeError(StainBenchError):
    """Image file exists but cannot be decoded as PNG/TIFF RGB."""


class WrongSpaceError(StainBenchError):
    """Planar image carries a different color-space tag than required."""


class InconsistentGridError(StainBenchError):
    """Tile grid does not cover its declared source dimensions exactly once."""


class InsufficientTissueError(StainBenchError):
    """Too few foreground (non-background) pixels for stain estimation."""


class DegenerateStainsError(StainBenchError):
    """Estimated stain directions are effectively a single stain."""


class SingularBasisError(StainBenchError):
    """Stain basis columns are parallel; concentrations are not identifiable."""


class DimensionMismatchError(StainBenchError):
    """Operands must share pixel dimensions."""


class BinMismatchError(StainBenchError):
    """Histograms being compared differ in bin count or value range."""


class EmptyCohortError(StainBenchError):
    """An operation over a cohort received no samples."""


class TooFewSamplesError(StainBenchError):
    """Not enough samples to fit the requested model."""


class KTooLargeError(StainBenchError):
    """Requested cluster count exceeds the number of points."""


class InconsistentModelError(StainBenchError):
    """Cluster model does not match the points/ids it is applied to."""


class MissingCounterpartError(StainBenchError):
    """A normalized image has no original with a matching basename."""


class ConfigError(StainBenchError):
    """Invalid run configuration; aborts before any image is processed."""


class NonConvergenceWarning(UserWarning):
    """Iterative factorization hit its iteration cap; best iterate returned."""
