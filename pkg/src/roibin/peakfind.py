"""Bragg peak detection and non-hit rejection.

Detection rules: a pixel is a candidate when it is the strict maximum of
its sliding window (plateau ties go to the smallest (row, col)) and meets
the candidate threshold; the peak region is the 4-connected component of
pixels above the member floor, grown from the candidate and restricted to
the window; the peak is emitted when its pixel count, total intensity, and
signal-to-noise ratio all pass.

SNR is the integrated-signal form (total - n*mu_bg) / (sigma_bg * sqrt(n))
with the background statistics taken over the window pixels outside the
peak region (population sigma).  A zero background sigma passes the test:
such a window is pure signal.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np
from scipy import ndimage

from .errors import GeometryError, SizeError, UndefinedRatioError
from .frames import Dims4, EventBatch

CSV_HEADER = ("event", "panel", "row", "col", "total", "npix", "snr")


@dataclass(frozen=True)
class PeakFinderParams:
    window: int = 7
    max_threshold: float = 300.0
    member_floor: float = 0.0
    total_floor: float = 600.0
    snr_floor: float = 10.0
    min_pixels: int = 2
    max_pixels: int = 30

    def __post_init__(self) -> None:
        if self.window < 3 or self.window % 2 == 0:
            raise GeometryError(f"window must be odd and >= 3, got {self.window}")
        if self.min_pixels > self.max_pixels:
            raise GeometryError("min_pixels must be <= max_pixels")
        for name in ("max_threshold", "member_floor", "total_floor", "snr_floor"):
            if not math.isfinite(getattr(self, name)):
                raise GeometryError(f"{name} must be finite")


@dataclass(frozen=True)
class Peak:
    event: int
    panel: int
    row: int
    col: int
    total_intensity: float
    n_pixels: int
    snr: float


@dataclass(frozen=True)
class PeakList:
    """Column-oriented list of peaks, sorted by (event, panel, row, col)."""

    event: np.ndarray
    panel: np.ndarray
    row: np.ndarray
    col: np.ndarray
    total: np.ndarray
    npix: np.ndarray
    snr: np.ndarray
    n_events: int

    def __post_init__(self) -> None:
        n = self.event.size
        for name in ("panel", "row", "col", "total", "npix", "snr"):
            if getattr(self, name).size != n:
                raise SizeError(f"peak column {name} has the wrong length")
        if n > 1:
            prev = None
            for t in zip(self.event.tolist(), self.panel.tolist(),
                         self.row.tolist(), self.col.tolist()):
                if prev is not None and t <= prev:
                    raise SizeError("peaks are not strictly sorted")
                prev = t

    def __len__(self) -> int:
        return int(self.event.size)

    def __iter__(self) -> Iterator[Peak]:
        for i in range(len(self)):
            yield Peak(
                event=int(self.event[i]),
                panel=int(self.panel[i]),
                row=int(self.row[i]),
                col=int(self.col[i]),
                total_intensity=float(self.total[i]),
                n_pixels=int(self.npix[i]),
                snr=float(self.snr[i]),
            )

    @property
    def per_event_counts(self) -> np.ndarray:
        return np.bincount(self.event, minlength=self.n_events).astype(np.int64)

    def anchors(self) -> np.ndarray:
        """(n, 4) int64 anchor array (event, panel, row, col)."""
        return np.ascontiguousarray(
            np.stack([self.event, self.panel, self.row, self.col], axis=1),
            dtype=np.int64,
        ).reshape(-1, 4)

    @staticmethod
    def from_rows(rows: list[tuple], n_events: int) -> "PeakList":
        rows = sorted(rows, key=lambda t: (t[0], t[1], t[2], t[3]))
        cols = list(zip(*rows)) if rows else [[]] * 7
        return PeakList(
            event=np.asarray(cols[0], dtype=np.int64),
            panel=np.asarray(cols[1], dtype=np.int64),
            row=np.asarray(cols[2], dtype=np.int64),
            col=np.asarray(cols[3], dtype=np.int64),
            total=np.asarray(cols[4], dtype=np.float64),
            npix=np.asarray(cols[5], dtype=np.int64),
            snr=np.asarray(cols[6], dtype=np.float64),
            n_events=n_events,
        )

    @staticmethod
    def empty(n_events: int) -> "PeakList":
        return PeakList.from_rows([], n_events)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for p in self:
            writer.writerow(
                [p.event, p.panel, p.row, p.col,
                 repr(p.total_intensity), p.n_pixels, repr(p.snr)]
            )
        return buf.getvalue()

    @staticmethod
    def from_csv(text: str, n_events: int | None = None) -> "PeakList":
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
            raise SizeError(
                f"peak CSV header must be {','.join(CSV_HEADER)}"
            )
        rows = []
        for lineno, line in enumerate(reader, start=2):
            if not line:
                continue
            try:
                rows.append(
                    (int(line[0]), int(line[1]), int(line[2]), int(line[3]),
                     float(line[4]), int(line[5]), float(line[6]))
                )
            except (ValueError, IndexError) as exc:
                raise SizeError(f"peak CSV line {lineno}: {exc}") from exc
        if n_events is None:
            n_events = (max(r[0] for r in rows) + 1) if rows else 0
        return PeakList.from_rows(rows, n_events)


_NEIGHBORS = ((-1, 0), (1, 0), (0, -1), (0, 1))


def _grow_region(panel: np.ndarray, r: int, c: int, r0: int, r1: int,
                 c0: int, c1: int, floor: float) -> list[tuple[int, int]]:
    """4-connected component of pixels > floor containing (r, c), restricted
    to the window box [r0, r1) x [c0, c1)."""
    if not panel[r, c] > floor:
        return []
    seen = {(r, c)}
    stack = [(r, c)]
    region = []
    while stack:
        pr, pc = stack.pop()
        region.append((pr, pc))
        for dr, dc in _NEIGHBORS:
            nr, nc = pr + dr, pc + dc
            if r0 <= nr < r1 and c0 <= nc < c1 and (nr, nc) not in seen:
                if panel[nr, nc] > floor:
                    seen.add((nr, nc))
                    stack.append((nr, nc))
    return region


def _scan_panel(panel: np.ndarray, params: PeakFinderParams) -> list[tuple]:
    """Returns accepted (row, col, total, npix, snr) tuples in scan order."""
    half = params.window // 2
    rows, cols = panel.shape
    win_max = ndimage.maximum_filter(
        panel, size=params.window, mode="constant", cval=-np.inf
    )
    cand_r, cand_c = np.nonzero((panel >= params.max_threshold) & (panel == win_max))
    accepted = []
    for r, c in zip(cand_r.tolist(), cand_c.tolist()):
        r0, r1 = max(0, r - half), min(rows, r + half + 1)
        c0, c1 = max(0, c - half), min(cols, c + half + 1)
        window = panel[r0:r1, c0:c1]
        v = panel[r, c]
        # Plateau tie-break: the smallest (row, col) among window maxima wins.
        flat_first = int(np.argmax(window))
        fr, fc = divmod(flat_first, window.shape[1])
        if (r0 + fr, c0 + fc) != (r, c):
            continue
        region = sorted(_grow_region(panel, r, c, r0, r1, c0, c1,
                                     params.member_floor))
        npix = len(region)
        if not params.min_pixels <= npix <= params.max_pixels:
            continue
        total = float(sum(float(panel[p]) for p in region))
        if not total > params.total_floor:
            continue
        in_region = np.zeros(window.shape, dtype=bool)
        for pr, pc in region:
            in_region[pr - r0, pc - c0] = True
        bg = window[~in_region].astype(np.float64)
        if bg.size == 0:
            snr = math.inf
        else:
            mu = float(bg.mean())
            sigma = float(bg.std())
            if sigma == 0.0:
                snr = math.inf
            else:
                snr = (total - npix * mu) / (sigma * math.sqrt(npix))
        if not (math.isinf(snr) or snr > params.snr_floor):
            continue
        accepted.append((r, c, total, npix, snr))
    return accepted


def find_peaks(batch: EventBatch, params: PeakFinderParams | None = None) -> PeakList:
    """Run the detection rules over every panel of every event.

    Output is deterministic and sorted by (event, panel, row, col)
    independent of threading.
    """
    if params is None:
        params = PeakFinderParams()
    dims = batch.dims
    if params.window > dims.rows or params.window > dims.cols:
        raise GeometryError(
            f"window {params.window} exceeds panel extent "
            f"{dims.rows}x{dims.cols}"
        )
    rows_out: list[tuple] = []
    for e in range(dims.events):
        for p in range(dims.panels):
            for r, c, total, npix, snr in _scan_panel(batch.values[e, p], params):
                rows_out.append((e, p, r, c, total, npix, snr))
    return PeakList.from_rows(rows_out, dims.events)


def non_hit_rejection(
    batch: EventBatch, peaks: PeakList, min_peaks: int
) -> tuple[EventBatch, PeakList, list[int]]:
    """Drop events with fewer than ``min_peaks`` peaks.

    Returns the filtered batch, a re-indexed PeakList, and the map from new
    to original event indices.  ``raw_byte_size`` shrinks proportionally.
    Typical operating points are 10 (used throughout this toolkit's
    defaults) or 15.
    """
    if min_peaks < 0:
        raise SizeError("min_peaks must be >= 0")
    if peaks.n_events != batch.dims.events:
        raise SizeError(
            f"peak list covers {peaks.n_events} events, batch has {batch.dims.events}"
        )
    counts = peaks.per_event_counts
    kept = [e for e in range(batch.dims.events) if counts[e] >= min_peaks]
    new_dims = Dims4(len(kept), batch.dims.panels, batch.dims.rows, batch.dims.cols)
    if batch.dims.events > 0:
        per_event_bytes = batch.raw_byte_size // batch.dims.events
        new_rbs = per_event_bytes * len(kept)
    else:
        new_rbs = 0
    values = (batch.values[kept] if kept
              else np.empty(new_dims.shape, dtype=np.float32))
    new_batch = EventBatch(dims=new_dims, values=np.ascontiguousarray(values),
                           raw_byte_size=new_rbs)
    remap = {orig: new for new, orig in enumerate(kept)}
    rows = [
        (remap[p.event], p.panel, p.row, p.col, p.total_intensity, p.n_pixels, p.snr)
        for p in peaks
        if p.event in remap
    ]
    return new_batch, PeakList.from_rows(rows, len(kept)), kept


def nhr_ratio(total_events: int, kept_events: int) -> float:
    """Storage factor from rejection alone: total / kept."""
    if kept_events == 0:
        raise UndefinedRatioError("no events were kept; the ratio is undefined")
    if kept_events > total_events:
        raise SizeError("kept_events cannot exceed total_events")
    return total_events / kept_events
