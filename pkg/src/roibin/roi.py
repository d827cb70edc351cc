"""Region-of-interest preservation: window extraction and bit-exact restore.

Each peak gets a fixed odd-sized window centered on its anchor; pixels that
fall outside the panel are stored as a constant fill value and are never
written back.  Extraction switches between a serial and a sliced-parallel
path once the total ROI pixel count crosses ``parallel_threshold``; both
paths produce byte-identical buffers.  Panels with ``panels == 1`` dispatch
to a merged-3D copy routine, everything else to the 4D one.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels
from ._parallel import run_sliced
from .errors import ConfigError, GeometryError
from .frames import Dims4, EventBatch


@dataclass(frozen=True)
class RoiSpec:
    window: int = 17
    fill: float = 0.0
    parallel_threshold: int = 65536
    threads: int = 1

    def __post_init__(self) -> None:
        if self.window < 1 or self.window % 2 == 0:
            raise ConfigError(f"window must be odd and >= 1, got {self.window}")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")


@dataclass(frozen=True)
class RoiBuffer:
    """Extracted windows: blocks[k] is the window around anchors[k]."""

    spec: RoiSpec
    anchors: np.ndarray  # (n, 4) int64: event, panel, row, col
    blocks: np.ndarray  # (n, window, window) float32

    @property
    def n_peaks(self) -> int:
        return self.anchors.shape[0]

    @property
    def payload_bytes(self) -> int:
        return self.blocks.size * 4


def _check_anchors(anchors: np.ndarray, dims: Dims4) -> None:
    if anchors.size == 0:
        return
    for axis, bound in enumerate((dims.events, dims.panels, dims.rows, dims.cols)):
        col = anchors[:, axis]
        if col.min() < 0 or col.max() >= bound:
            raise IndexError(
                f"anchor axis {axis} out of range [0, {bound}) "
                f"(saw {col.min()}..{col.max()})"
            )


def _effective_threads(spec: RoiSpec, n_peaks: int) -> int:
    # Dynamic serial/parallel switch, measured in total ROI pixels.
    if n_peaks * spec.window * spec.window > spec.parallel_threshold:
        return spec.threads
    return 1


def extract_anchors(batch: EventBatch, anchors: np.ndarray, spec: RoiSpec,
                    blocks_out: np.ndarray | None = None) -> RoiBuffer:
    """Extract windows for an (n, 4) anchor array sorted like a PeakList."""
    anchors = np.ascontiguousarray(anchors, dtype=np.int64).reshape(-1, 4)
    _check_anchors(anchors, batch.dims)
    n = anchors.shape[0]
    w = spec.window
    if blocks_out is None:
        blocks = np.empty((n, w, w), dtype=np.float32)
    else:
        blocks = blocks_out[:n]
    fill = np.float32(spec.fill)
    values = batch.values
    if batch.dims.panels == 1:
        merged = values.reshape(batch.dims.events, batch.dims.rows, batch.dims.cols)

        def worker(lo: int, hi: int) -> None:
            _kernels.extract_blocks_3d(merged, anchors, lo, hi, w, fill, blocks)

    else:

        def worker(lo: int, hi: int) -> None:
            _kernels.extract_blocks_4d(values, anchors, lo, hi, w, fill, blocks)

    run_sliced(worker, n, _effective_threads(spec, n))
    return RoiBuffer(spec=spec, anchors=anchors, blocks=blocks)


def extract(batch: EventBatch, peaks, spec: RoiSpec) -> RoiBuffer:
    """Extract the window around every peak; the batch is not modified.

    ``peaks`` is a PeakList or any (n, 4) array of (event, panel, row, col)
    anchors sorted the same way.
    """
    return extract_anchors(batch, _anchors_of(peaks), spec)


def restore(background: EventBatch, rois: RoiBuffer) -> EventBatch:
    """Overwrite ROI pixels onto a background batch; returns a new batch.

    Only in-bounds window positions are written; fill pixels never leak.
    Overlapping blocks came from one source, so write order is immaterial.
    """
    out = background.values.copy()
    restore_into(out, background.dims, rois)
    return EventBatch(dims=background.dims, values=out,
                      raw_byte_size=background.raw_byte_size)


def restore_into(values: np.ndarray, dims: Dims4, rois: RoiBuffer) -> None:
    """In-place variant of restore for preallocated output buffers."""
    if values.shape != dims.shape:
        raise GeometryError(f"values shape {values.shape} != dims {dims.shape}")
    anchors = rois.anchors
    _check_anchors(anchors, dims)
    n = anchors.shape[0]
    w = rois.spec.window
    if rois.blocks.shape != (n, w, w):
        raise GeometryError(
            f"blocks shape {rois.blocks.shape} != ({n}, {w}, {w})"
        )
    blocks = rois.blocks
    if dims.panels == 1:
        merged = values.reshape(dims.events, dims.rows, dims.cols)

        def worker(lo: int, hi: int) -> None:
            _kernels.restore_blocks_3d(merged, anchors, lo, hi, w, blocks)

    else:

        def worker(lo: int, hi: int) -> None:
            _kernels.restore_blocks_4d(values, anchors, lo, hi, w, blocks)

    run_sliced(worker, n, _effective_threads(rois.spec, n))


def _anchors_of(peaks) -> np.ndarray:
    anchors = peaks.anchors() if hasattr(peaks, "anchors") else np.asarray(peaks)
    return np.ascontiguousarray(anchors, dtype=np.int64).reshape(-1, 4)


# ---------------------------------------------------------------------------
# Arbitrary hyper-rectangle regions (rank 1-4).
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HyperRect:
    """Half-open index box [lower, upper) of rank 1-4.

    Rank-r rects index the trailing r axes of the batch; leading axes are
    spanned in full.
    """

    lower: tuple[int, ...]
    upper: tuple[int, ...]

    def __post_init__(self) -> None:
        if not 1 <= len(self.lower) <= 4 or len(self.lower) != len(self.upper):
            raise GeometryError("rect rank must be 1-4 with matching bounds")
        for lo, hi in zip(self.lower, self.upper):
            if lo >= hi:
                raise GeometryError(f"rect bound [{lo}, {hi}) is empty")

    def normalized(self, dims: Dims4) -> tuple[tuple[int, ...], tuple[int, ...]]:
        """Pad to rank 4 and clamp to the batch dims; may become empty."""
        full = dims.shape
        rank = len(self.lower)
        lo4 = [0, 0, 0, 0]
        hi4 = list(full)
        for i in range(rank):
            axis = 4 - rank + i
            lo4[axis] = max(0, min(self.lower[i], full[axis]))
            hi4[axis] = max(0, min(self.upper[i], full[axis]))
        return tuple(lo4), tuple(hi4)


@dataclass(frozen=True)
class RectBuffer:
    """Concatenated row-major copies of clamped rects plus their manifest."""

    manifest: tuple[tuple[tuple[int, ...], tuple[int, ...]], ...]
    payload: np.ndarray  # 1D float32
    skipped: int  # rects that clamped to nothing

    def manifest_bytes(self) -> bytes:
        """Little-endian u32 (lower, upper) index pairs, rect-major."""
        flat = []
        for lo, hi in self.manifest:
            flat.extend(lo)
            flat.extend(hi)
        return np.asarray(flat, dtype="<u4").tobytes()

    @staticmethod
    def manifest_from_bytes(data: bytes) -> tuple[tuple[tuple[int, ...], tuple[int, ...]], ...]:
        vals = np.frombuffer(data, dtype="<u4")
        if vals.size % 8:
            raise GeometryError("rect manifest length is not a multiple of 8 u32s")
        out = []
        for k in range(vals.size // 8):
            row = vals[8 * k : 8 * k + 8].astype(int)
            out.append((tuple(row[:4]), tuple(row[4:])))
        return tuple(out)


def extract_rects(batch: EventBatch, rects: Sequence[HyperRect]) -> RectBuffer:
    """Copy each clamped rect out of the batch, row-major, concatenated."""
    manifest = []
    parts = []
    skipped = 0
    for rect in rects:
        lo, hi = rect.normalized(batch.dims)
        if any(l >= h for l, h in zip(lo, hi)):
            skipped += 1
            continue
        view = batch.values[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2], lo[3]:hi[3]]
        parts.append(np.ascontiguousarray(view).reshape(-1))
        manifest.append((lo, hi))
    payload = (np.concatenate(parts) if parts
               else np.empty(0, dtype=np.float32))
    return RectBuffer(manifest=tuple(manifest), payload=payload, skipped=skipped)


def restore_rects(background: EventBatch, rects: RectBuffer) -> EventBatch:
    """Exact inverse of extract_rects onto a target batch."""
    out = background.values.copy()
    cursor = 0
    for lo, hi in rects.manifest:
        shape = tuple(h - l for l, h in zip(lo, hi))
        size = int(np.prod(shape))
        block = rects.payload[cursor : cursor + size].reshape(shape)
        out[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2], lo[3]:hi[3]] = block
        cursor += size
    if cursor != rects.payload.size:
        raise GeometryError("rect payload does not match its manifest")
    return EventBatch(dims=background.dims, values=out,
                      raw_byte_size=background.raw_byte_size)
