"""Detector event batches: raw uint16 ingestion and calibration to float32.

The in-memory layout is a dense row-major 4D tensor
(events x panels x rows x cols).  Merged-3D data (events x rows x cols) is
represented with ``panels == 1``; there is one data model for both layouts.
Every compression ratio downstream is denominated in the raw uint16 byte
size, which travels with the batch as ``raw_byte_size``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GeometryError, SizeError

_U64_MAX = 2**64 - 1


@dataclass(frozen=True)
class Dims4:
    """Extents of an event batch: events x panels x rows x cols.

    ``events == 0`` is permitted so that total non-hit rejection can be
    represented; panels, rows, and cols are always at least 1.
    """

    events: int
    panels: int
    rows: int
    cols: int

    def __post_init__(self) -> None:
        if self.events < 0:
            raise GeometryError(f"events must be >= 0, got {self.events}")
        for name in ("panels", "rows", "cols"):
            v = getattr(self, name)
            if v < 1:
                raise GeometryError(f"{name} must be >= 1, got {v}")
        if self.n_values > _U64_MAX:
            raise GeometryError("dims product does not fit in 64 bits")

    @property
    def n_values(self) -> int:
        return self.events * self.panels * self.rows * self.cols

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return (self.events, self.panels, self.rows, self.cols)

    @property
    def frame_shape(self) -> tuple[int, int, int]:
        return (self.panels, self.rows, self.cols)


@dataclass(frozen=True)
class RawFrameSet:
    """Raw detector readout: little-endian uint16 values plus their byte size."""

    dims: Dims4
    values: np.ndarray
    byte_size: int

    def __post_init__(self) -> None:
        if self.values.dtype != np.uint16:
            raise SizeError(f"raw values must be uint16, got {self.values.dtype}")
        if self.values.size != self.dims.n_values:
            raise SizeError(
                f"raw value count {self.values.size} != dims product {self.dims.n_values}"
            )
        if self.byte_size != 2 * self.values.size:
            raise SizeError(
                f"byte_size {self.byte_size} != 2 x {self.values.size} values"
            )


@dataclass(frozen=True)
class Calibration:
    """Per-pixel pedestal and gain maps of shape (panels, rows, cols)."""

    pedestal: np.ndarray
    gain: np.ndarray

    def __post_init__(self) -> None:
        if self.pedestal.shape != self.gain.shape:
            raise GeometryError(
                f"pedestal shape {self.pedestal.shape} != gain shape {self.gain.shape}"
            )
        if self.pedestal.ndim != 3:
            raise GeometryError(
                f"calibration maps must be 3D (panels, rows, cols), got {self.pedestal.ndim}D"
            )
        if not np.all(np.isfinite(self.gain)) or np.any(self.gain == 0.0):
            raise GeometryError("gain values must be finite and nonzero")
        if not np.all(np.isfinite(self.pedestal)):
            raise GeometryError("pedestal values must be finite")


@dataclass(frozen=True)
class EventBatch:
    """Calibrated float32 frames, immutable once constructed.

    ``raw_byte_size`` is the uint16 byte count of the data before
    calibration; it is the denominator of every compression ratio.
    """

    dims: Dims4
    values: np.ndarray
    raw_byte_size: int

    def __post_init__(self) -> None:
        if self.values.dtype != np.float32:
            raise SizeError(f"batch values must be float32, got {self.values.dtype}")
        if self.values.shape != self.dims.shape:
            raise SizeError(
                f"batch shape {self.values.shape} != dims {self.dims.shape}"
            )
        if self.raw_byte_size < 0:
            raise SizeError("raw_byte_size must be nonnegative")


def ingest_raw(data: bytes, dims: Dims4) -> RawFrameSet:
    """Decode a headerless little-endian uint16 stream into a RawFrameSet."""
    expected = 2 * dims.n_values
    if len(data) != expected:
        raise SizeError(
            f"raw input is {len(data)} bytes, expected {expected} for dims {dims.shape}"
        )
    values = np.frombuffer(data, dtype="<u2").reshape(dims.shape)
    return RawFrameSet(dims=dims, values=values, byte_size=expected)


def calibrate(raw: RawFrameSet, cal: Calibration) -> EventBatch:
    """Apply pedestal subtraction and gain correction per pixel.

    output = (float32(raw) - pedestal) * gain, broadcast over events.
    """
    if cal.pedestal.shape != raw.dims.frame_shape:
        raise GeometryError(
            f"calibration shape {cal.pedestal.shape} != frame shape {raw.dims.frame_shape}"
        )
    ped = np.ascontiguousarray(cal.pedestal, dtype=np.float32)
    gain = np.ascontiguousarray(cal.gain, dtype=np.float32)
    out = (raw.values.astype(np.float32) - ped[np.newaxis]) * gain[np.newaxis]
    return EventBatch(dims=raw.dims, values=out, raw_byte_size=raw.byte_size)


def identity_batch(values: np.ndarray, dims: Dims4) -> EventBatch:
    """Wrap already-calibrated float32 data as an EventBatch.

    ``raw_byte_size`` defaults to 2 bytes per element so compression ratios
    stay denominated in the uint16 detector convention.
    """
    flat = np.asarray(values, dtype=np.float32)
    if flat.size != dims.n_values:
        raise SizeError(
            f"value count {flat.size} != dims product {dims.n_values}"
        )
    if not np.all(np.isfinite(flat)):
        raise SizeError("batch values must all be finite")
    return EventBatch(
        dims=dims,
        values=np.ascontiguousarray(flat).reshape(dims.shape),
        raw_byte_size=2 * dims.n_values,
    )
