"""ROI-preserving, binned, error-bounded compression for detector data."""

from .binning import BinnedBatch, BinSpec, bin_batch, binned_dims, debin
from .codec import CodecId, ErrorBound, PqScratch, decode, encode, resolve_bound
from .errors import (
    ConfigError,
    CorruptionError,
    GenerationError,
    GeometryError,
    MetricError,
    RoibinError,
    SizeError,
    TuningError,
    UndefinedRatioError,
    UnsupportedVersionError,
)
from .frames import Calibration, Dims4, EventBatch, RawFrameSet, calibrate, identity_batch, ingest_raw
from .peakfind import Peak, PeakFinderParams, PeakList, find_peaks, nhr_ratio, non_hit_rejection
from .pipeline import (
    CompressedContainer,
    CompressionReport,
    RoibinConfig,
    ThreadAlloc,
    chunk_iter,
    compress,
    decompress,
    decompress_event,
)
from .roi import HyperRect, RectBuffer, RoiBuffer, RoiSpec, extract, extract_rects, restore, restore_rects
from .tuner import TuneBudget, TunedAllocation, TuneSpace, aggregate_mode, tune

__version__ = "0.1.0"

__all__ = [
    "BinSpec",
    "BinnedBatch",
    "Calibration",
    "CodecId",
    "CompressedContainer",
    "CompressionReport",
    "ConfigError",
    "CorruptionError",
    "Dims4",
    "ErrorBound",
    "EventBatch",
    "GenerationError",
    "GeometryError",
    "HyperRect",
    "MetricError",
    "Peak",
    "PeakFinderParams",
    "PeakList",
    "PqScratch",
    "RawFrameSet",
    "RectBuffer",
    "RoiBuffer",
    "RoiSpec",
    "RoibinConfig",
    "RoibinError",
    "SizeError",
    "ThreadAlloc",
    "TuneBudget",
    "TuneSpace",
    "TunedAllocation",
    "TuningError",
    "UndefinedRatioError",
    "UnsupportedVersionError",
    "aggregate_mode",
    "bin_batch",
    "binned_dims",
    "calibrate",
    "chunk_iter",
    "compress",
    "debin",
    "decode",
    "decompress",
    "decompress_event",
    "encode",
    "extract",
    "extract_rects",
    "find_peaks",
    "identity_batch",
    "ingest_raw",
    "nhr_ratio",
    "non_hit_rejection",
    "resolve_bound",
    "restore",
    "restore_rects",
    "tune",
]
