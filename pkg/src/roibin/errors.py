"""Exception types shared across the toolkit."""


class RoibinError(Exception):
    """Base class for all toolkit errors."""


class SizeError(RoibinError):
    """Byte or element counts disagree with the declared dimensions."""


class GeometryError(RoibinError):
    """Shapes or windows are inconsistent with the detector geometry."""


class ConfigError(RoibinError):
    """Invalid codec, bound, or pipeline configuration."""


class CorruptionError(RoibinError):
    """A container or codec stream failed validation; nothing was decoded."""


class UnsupportedVersionError(CorruptionError):
    """The container was written by a format version this build does not read."""


class UndefinedRatioError(RoibinError):
    """A ratio has a zero denominator (no kept events, zero compressed size)."""


class MetricError(RoibinError):
    """A quality metric is undefined for the given inputs."""


class TuningError(RoibinError):
    """The autotuner could not produce any feasible measurement."""


class GenerationError(RoibinError):
    """Synthetic data generation could not satisfy its placement constraints."""
