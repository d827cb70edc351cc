"""Background binning: window-mean reduction and replication expansion.

Binning operates within a panel only; events and panels are never merged.
Partial bins at the right/bottom edges average only the pixels present.
Accumulation is float64 in fixed row-major order, so results are identical
for every thread count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from ._parallel import run_sliced
from .errors import ConfigError, GeometryError
from .frames import Dims4, EventBatch


@dataclass(frozen=True)
class BinSpec:
    factor_rows: int = 2
    factor_cols: int = 2
    threads: int = 1

    def __post_init__(self) -> None:
        if self.factor_rows < 1 or self.factor_cols < 1:
            raise ConfigError("bin factors must be >= 1")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")


@dataclass(frozen=True)
class BinnedBatch:
    dims: Dims4
    values: np.ndarray
    source_dims: Dims4

    def __post_init__(self) -> None:
        if self.values.shape != self.dims.shape:
            raise GeometryError(
                f"binned shape {self.values.shape} != dims {self.dims.shape}"
            )


def binned_dims(source: Dims4, spec: BinSpec) -> Dims4:
    """Output extents: rows and cols ceiling-divided by the bin factors."""
    return Dims4(
        events=source.events,
        panels=source.panels,
        rows=-(-source.rows // spec.factor_rows),
        cols=-(-source.cols // spec.factor_cols),
    )


def bin_batch(batch: EventBatch, spec: BinSpec) -> BinnedBatch:
    """Average each factor_rows x factor_cols window of every panel."""
    out_dims = binned_dims(batch.dims, spec)
    out = np.empty(out_dims.shape, dtype=np.float32)
    if batch.dims.events == 0:
        return BinnedBatch(dims=out_dims, values=out, source_dims=batch.dims)
    stack = batch.dims.events * batch.dims.panels
    src = batch.values.reshape(stack, batch.dims.rows, batch.dims.cols)
    dst = out.reshape(stack, out_dims.rows, out_dims.cols)

    def worker(lo: int, hi: int) -> None:
        _kernels.bin_planes(src, dst, lo, hi, spec.factor_rows, spec.factor_cols)

    run_sliced(worker, stack, spec.threads)
    return BinnedBatch(dims=out_dims, values=out, source_dims=batch.dims)


def debin(binned: BinnedBatch, spec: BinSpec, raw_byte_size: int | None = None) -> EventBatch:
    """Expand a binned batch back to source resolution by replication."""
    if binned_dims(binned.source_dims, spec) != binned.dims:
        raise GeometryError(
            f"binned dims {binned.dims.shape} inconsistent with source "
            f"{binned.source_dims.shape} at factors "
            f"{spec.factor_rows}x{spec.factor_cols}"
        )
    src_dims = binned.source_dims
    out = np.empty(src_dims.shape, dtype=np.float32)
    if src_dims.events > 0:
        stack = src_dims.events * src_dims.panels
        src = binned.values.reshape(stack, binned.dims.rows, binned.dims.cols)
        dst = out.reshape(stack, src_dims.rows, src_dims.cols)

        def worker(lo: int, hi: int) -> None:
            _kernels.debin_planes(src, dst, lo, hi, spec.factor_rows, spec.factor_cols)

        run_sliced(worker, stack, spec.threads)
    if raw_byte_size is None:
        raw_byte_size = 2 * src_dims.n_values
    return EventBatch(dims=src_dims, values=out, raw_byte_size=raw_byte_size)
