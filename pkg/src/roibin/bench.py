"""Synthetic diffraction-frame generation and the measurement harness.

Frames are generated in the calibrated domain: a pedestal-subtracted noise
field (zero-suppressed, as detector readout delivers it) plus compact
Gaussian spots at well-separated random centers.  Generation uses one seeded
substream per event, so output is bitwise reproducible and independent of
any threading.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import dataclass, replace

import numpy as np

from .codec import CodecId, ErrorBound
from .errors import ConfigError, GenerationError
from .frames import Dims4, EventBatch, identity_batch
from .peakfind import PeakList
from .pipeline import RoibinConfig, ThreadAlloc, compress, decompress
from .binning import BinSpec


@dataclass(frozen=True)
class SynthParams:
    dims: Dims4
    n_peaks: tuple[int, int] = (4, 16)  # uniform inclusive range per event
    peak_amplitude: tuple[float, float] = (500.0, 5000.0)
    peak_sigma: float = 1.5
    background_mean: float = 20.0
    noise: str = "poisson-like"  # or "uniform"
    seed: int = 0
    min_separation: int = 34  # Chebyshev distance between spot centers
    suppression_sigmas: float = 1.0  # zero-suppression threshold; 0 disables
    structure_amplitude: float = 0.0  # event-invariant detector texture (ADU)
    structure_cell: int = 16  # coarse cell of the texture field, pixels

    def __post_init__(self) -> None:
        lo, hi = self.n_peaks
        if lo < 0 or hi < lo:
            raise ConfigError("n_peaks range must satisfy 0 <= lo <= hi")
        alo, ahi = self.peak_amplitude
        if alo <= 0 or ahi < alo:
            raise ConfigError("amplitude range must satisfy 0 < lo <= hi")
        if self.peak_sigma <= 0:
            raise ConfigError("peak_sigma must be positive")
        if self.background_mean < 0:
            raise ConfigError("background_mean must be >= 0")
        if self.noise not in ("poisson-like", "uniform"):
            raise ConfigError(f"unknown noise model {self.noise!r}")
        if self.min_separation < 1:
            raise ConfigError("min_separation must be >= 1")
        if self.structure_amplitude < 0 or self.structure_cell < 1:
            raise ConfigError("structure parameters must be nonnegative")


def _spot_stamp(amplitude: float, sigma: float) -> np.ndarray:
    """Compactly supported spot: Gaussian minus its cutoff-tail value.

    The subtraction pulls the profile to exactly zero at the cutoff radius,
    so a spot occupies a bounded pixel footprint regardless of amplitude.
    """
    cutoff = 1.47 * sigma + 0.01
    half = int(cutoff)
    n = 2 * half + 1
    dr = np.arange(-half, half + 1)[:, None]
    dc = np.arange(-half, half + 1)[None, :]
    r2 = (dr * dr + dc * dc).astype(np.float64)
    tail = math.exp(-(cutoff * cutoff) / (2.0 * sigma * sigma))
    stamp = amplitude * (np.exp(-r2 / (2.0 * sigma * sigma)) - tail)
    stamp[stamp < 0] = 0.0
    assert stamp.shape == (n, n)
    return stamp.astype(np.float32)


def _structure_field(params: SynthParams) -> np.ndarray | None:
    """Static per-panel texture, identical across events.

    A coarse seeded random grid is bilinearly upsampled; this stands in for
    persistent detector structure (gain texture, beam halo) that higher
    prediction dimensionality can exploit across the event stack.
    """
    if params.structure_amplitude <= 0:
        return None
    d = params.dims
    cell = params.structure_cell
    rng = np.random.default_rng([params.seed, 0x5757])
    gr = d.rows // cell + 2
    gc = d.cols // cell + 2
    coarse = rng.normal(0.0, params.structure_amplitude, size=(d.panels, gr, gc))
    r = np.arange(d.rows) / cell
    c = np.arange(d.cols) / cell
    r0 = r.astype(np.int64)
    c0 = c.astype(np.int64)
    rf = (r - r0)[None, :, None]
    cf = (c - c0)[None, None, :]
    top = coarse[:, r0][:, :, c0] * (1 - cf) + coarse[:, r0][:, :, c0 + 1] * cf
    bot = coarse[:, r0 + 1][:, :, c0] * (1 - cf) + coarse[:, r0 + 1][:, :, c0 + 1] * cf
    return (top * (1 - rf) + bot * rf).astype(np.float32)


def generate(params: SynthParams) -> tuple[EventBatch, PeakList]:
    """Synthesize an event batch plus the ground-truth plant list."""
    d = params.dims
    sigma_noise = math.sqrt(params.background_mean) if params.background_mean else 0.0
    half_stamp = int(1.47 * params.peak_sigma + 0.01)
    margin = half_stamp
    lo_peaks, hi_peaks = params.n_peaks
    if hi_peaks > 0:
        rspan = d.rows - 2 * margin
        cspan = d.cols - 2 * margin
        if rspan <= 0 or cspan <= 0:
            raise GenerationError(
                f"panel {d.rows}x{d.cols} is too small for spot margin {margin}"
            )
        sep = params.min_separation
        capacity = d.panels * ((rspan - 1) // sep + 1) * ((cspan - 1) // sep + 1)
        if hi_peaks > capacity:
            raise GenerationError(
                f"cannot place {hi_peaks} spots with separation {sep} "
                f"in {d.panels} panel(s) of {d.rows}x{d.cols}"
            )
    structure = _structure_field(params)
    values = np.empty(d.shape, dtype=np.float32)
    rows_out = []
    for e in range(d.events):
        rng = np.random.default_rng([params.seed, e])
        if params.noise == "poisson-like":
            field_ = rng.normal(params.background_mean, sigma_noise,
                                size=d.frame_shape)
            field_ -= params.background_mean
        else:
            a = sigma_noise * math.sqrt(3.0)
            field_ = rng.uniform(-a, a, size=d.frame_shape)
        if params.suppression_sigmas > 0 and sigma_noise > 0:
            field_[np.abs(field_) < params.suppression_sigmas * sigma_noise] = 0.0
        frame = field_.astype(np.float32)
        if structure is not None:
            frame += structure
        k = int(rng.integers(lo_peaks, hi_peaks + 1))
        placed: list[tuple[int, int, int]] = []
        attempts = 0
        while len(placed) < k:
            attempts += 1
            if attempts > 1000 * max(1, k):
                raise GenerationError(
                    f"event {e}: could not place {k} spots with separation "
                    f"{params.min_separation}"
                )
            p = int(rng.integers(0, d.panels))
            r = int(rng.integers(margin, d.rows - margin))
            c = int(rng.integers(margin, d.cols - margin))
            ok = all(
                pp != p or max(abs(rr - r), abs(cc - c)) >= params.min_separation
                for pp, rr, cc in placed
            )
            if ok:
                placed.append((p, r, c))
        for p, r, c in placed:
            amp = float(rng.uniform(*params.peak_amplitude))
            stamp = _spot_stamp(amp, params.peak_sigma)
            h = stamp.shape[0] // 2
            frame[p, r - h : r + h + 1, c - h : c + h + 1] += stamp
            rows_out.append((e, p, r, c, float(stamp.sum()),
                             int((stamp > 0).sum()), math.inf))
        values[e] = frame
    batch = identity_batch(values, d)
    return batch, PeakList.from_rows(rows_out, d.events)


@dataclass(frozen=True)
class GridSearchPlan:
    """Three one-dimensional sweeps around a shared base configuration."""

    binnings: tuple[tuple[int, int], ...] = ((1, 1), (2, 2), (3, 3))
    tolerances: tuple[float, ...] = (10.0, 45.0, 90.0)
    dims_modes: tuple[int, ...] = (1, 2, 3)
    base_binning: tuple[int, int] = (2, 2)
    base_tolerance: float = 10.0
    base_dims: int = 3

    def __post_init__(self) -> None:
        if not (self.binnings and self.tolerances and self.dims_modes):
            raise ConfigError("grid plan axes must be nonempty")


@dataclass(frozen=True)
class GridRow:
    sweep: str
    binning: tuple[int, int]
    tolerance: float
    dims_mode: int
    cr: float
    compressed_bytes: int


def run_grid(
    plan: GridSearchPlan,
    data: EventBatch,
    peaks: PeakList,
    base_cfg: RoibinConfig | None = None,
) -> list[GridRow]:
    """One compression per sweep cell; pipeline defaults otherwise."""
    base_cfg = base_cfg or RoibinConfig()
    cache: dict[tuple, tuple[float, int]] = {}

    def cell(binning: tuple[int, int], tol: float, dm: int) -> tuple[float, int]:
        key = (binning, tol, dm)
        if key not in cache:
            cfg = replace(
                base_cfg,
                bin=BinSpec(binning[0], binning[1], threads=base_cfg.bin.threads),
                background=CodecId.pq(ErrorBound.absolute(tol), dims_mode=dm),
            )
            _, report = compress(data, peaks, cfg, measure_errors=False)
            cache[key] = (report.cr, report.compressed_bytes)
        return cache[key]

    rows = []
    for b in plan.binnings:
        cr, size = cell(b, plan.base_tolerance, plan.base_dims)
        rows.append(GridRow("binning", b, plan.base_tolerance, plan.base_dims, cr, size))
    for tol in plan.tolerances:
        cr, size = cell(plan.base_binning, tol, plan.base_dims)
        rows.append(GridRow("tolerance", plan.base_binning, tol, plan.base_dims, cr, size))
    for dm in plan.dims_modes:
        cr, size = cell(plan.base_binning, plan.base_tolerance, dm)
        rows.append(GridRow("dims", plan.base_binning, plan.base_tolerance, dm, cr, size))
    return rows


def grid_csv(rows: list[GridRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sweep", "binning_rows", "binning_cols", "tolerance", "dims", "cr",
                "compressed_bytes"])
    for r in rows:
        w.writerow([r.sweep, r.binning[0], r.binning[1], r.tolerance, r.dims_mode,
                    f"{r.cr:.6g}", r.compressed_bytes])
    return buf.getvalue()


def grid_json(rows: list[GridRow]) -> str:
    return json.dumps(
        [
            dict(sweep=r.sweep, binning=list(r.binning), tolerance=r.tolerance,
                 dims=r.dims_mode, cr=r.cr, compressed_bytes=r.compressed_bytes)
            for r in rows
        ],
        indent=2,
    ) + "\n"


@dataclass(frozen=True)
class ThroughputRow:
    label: str
    cr: float
    compress_gbps: float
    decompress_gbps: float
    seconds_median: float
    seconds_min: float
    seconds_max: float
    threads: ThreadAlloc
    reps: int


@dataclass(frozen=True)
class ThroughputReport:
    raw_bytes: int
    rows: tuple[ThroughputRow, ...]
    scaling: tuple[tuple[int, float], ...]  # (tasks, compress GB/s)

    def to_json(self) -> str:
        return json.dumps(
            {
                "raw_bytes": self.raw_bytes,
                "rows": [
                    dict(label=r.label, cr=r.cr, compress_gbps=r.compress_gbps,
                         decompress_gbps=r.decompress_gbps,
                         seconds_median=r.seconds_median,
                         seconds_min=r.seconds_min, seconds_max=r.seconds_max,
                         threads=vars(r.threads).copy(), reps=r.reps)
                    for r in self.rows
                ],
                "scaling": [list(s) for s in self.scaling],
            },
            indent=2,
        ) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["label", "cr", "compress_gbps", "decompress_gbps",
                    "seconds_median", "seconds_min", "seconds_max", "reps"])
        for r in self.rows:
            w.writerow([r.label, f"{r.cr:.6g}", f"{r.compress_gbps:.6g}",
                        f"{r.decompress_gbps:.6g}", f"{r.seconds_median:.6g}",
                        f"{r.seconds_min:.6g}", f"{r.seconds_max:.6g}", r.reps])
        return buf.getvalue()


def _median(xs: list[float]) -> float:
    s = sorted(xs)
    n = len(s)
    return s[n // 2] if n % 2 else 0.5 * (s[n // 2 - 1] + s[n // 2])


def run_throughput(
    cfgs: dict[str, RoibinConfig],
    data: EventBatch,
    peaks: PeakList,
    reps: int = 3,
    task_counts: tuple[int, ...] | None = None,
) -> ThroughputReport:
    """Median-of-reps GB/s per configuration on raw uint16 byte counts.

    The first configuration also gets a strong-scaling sweep over task
    counts (1, 2, 4, ... up to the core count unless given explicitly).
    Containers are asserted byte-identical across repetitions.
    """
    if reps < 3:
        raise ConfigError("throughput runs need reps >= 3")
    raw = data.raw_byte_size
    rows = []
    for label, cfg in cfgs.items():
        comp_times = []
        dec_times = []
        blob0 = None
        cr = 0.0
        for _ in range(reps):
            t0 = time.perf_counter()
            container, report = compress(data, peaks, cfg, measure_errors=False)
            comp_times.append(time.perf_counter() - t0)
            blob = container.to_bytes()
            if blob0 is None:
                blob0 = blob
                cr = report.cr
            elif blob != blob0:
                raise AssertionError(
                    f"{label}: containers differ across repetitions"
                )
            t0 = time.perf_counter()
            decompress(container, threads=cfg.threads)
            dec_times.append(time.perf_counter() - t0)
        rows.append(ThroughputRow(
            label=label, cr=cr,
            compress_gbps=raw / _median(comp_times) / 1e9,
            decompress_gbps=raw / _median(dec_times) / 1e9,
            seconds_median=_median(comp_times),
            seconds_min=min(comp_times), seconds_max=max(comp_times),
            threads=cfg.threads, reps=reps,
        ))
    scaling = []
    if cfgs:
        first = next(iter(cfgs.values()))
        if task_counts is None:
            import os

            cores = os.cpu_count() or 1
            task_counts = tuple(
                t for t in (1, 2, 4, 8, 16, 32) if t <= max(1, cores)
            )
        for t in task_counts:
            cfg = replace(first, threads=replace(first.threads, tasks=t))
            times = []
            for _ in range(reps):
                t0 = time.perf_counter()
                compress(data, peaks, cfg, measure_errors=False)
                times.append(time.perf_counter() - t0)
            scaling.append((t, raw / _median(times) / 1e9))
    return ThroughputReport(raw_bytes=raw, rows=tuple(rows),
                            scaling=tuple(scaling))
