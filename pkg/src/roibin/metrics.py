"""Quality and accounting metrics.

The crystallography-style statistics (half-dataset discrepancy, half-dataset
Pearson correlation, observed-vs-calculated discrepancy) are generic metric
functions over user-supplied paired intensity arrays; no reflection metadata
is involved.  All reductions run in float64 with a fixed summation order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import MetricError, UndefinedRatioError


@dataclass(frozen=True)
class PairedIntensities:
    """Two equal-length intensity arrays, e.g. from two half datasets."""

    i1: np.ndarray
    i2: np.ndarray

    def __post_init__(self) -> None:
        a = np.asarray(self.i1, dtype=np.float64)
        b = np.asarray(self.i2, dtype=np.float64)
        if a.ndim != 1 or b.ndim != 1 or a.size != b.size or a.size < 1:
            raise MetricError("paired intensities must be equal-length 1D, length >= 1")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise MetricError("intensities must be finite")
        object.__setattr__(self, "i1", a)
        object.__setattr__(self, "i2", b)


def _pair(i1, i2) -> tuple[np.ndarray, np.ndarray]:
    p = PairedIntensities(np.asarray(i1), np.asarray(i2))
    return p.i1, p.i2


def compression_ratio(raw_bytes: int, compressed_bytes: int) -> float:
    if compressed_bytes <= 0:
        raise UndefinedRatioError("compressed size must be positive")
    return raw_bytes / compressed_bytes


def psnr(orig, recon) -> float:
    """20*log10(value_range / rmse); +inf for identical arrays, -inf when a
    zero-range signal has nonzero error."""
    a, b = _pair(orig, recon)
    rmse = math.sqrt(float(np.mean((a - b) ** 2)))
    vrange = float(a.max() - a.min())
    if rmse == 0.0:
        return math.inf
    if vrange == 0.0:
        return -math.inf
    return 20.0 * math.log10(vrange / rmse)


def mpe(orig, recon, floor: float = 1e-6) -> float | None:
    """Mean percentage error over elements with |orig| > floor.

    Returns None when the floor excludes everything (not applicable).
    """
    a, b = _pair(orig, recon)
    mask = np.abs(a) > floor
    if not mask.any():
        return None
    return float(np.mean(100.0 * np.abs(a[mask] - b[mask]) / np.abs(a[mask])))


def rsplit(i1, i2, k: float | None = None) -> float:
    """Half-dataset discrepancy 2^(-1/2) * sum|I1 - k*I2| / (0.5 * sum(I1 + k*I2)).

    ``k=None`` fits the least-squares scale sum(I1*I2)/sum(I2^2).
    """
    a, b = _pair(i1, i2)
    if k is None:
        denom = float(np.sum(b * b))
        if denom == 0.0:
            raise MetricError("cannot fit a scale factor against all-zero I2")
        k = float(np.sum(a * b)) / denom
    denominator = 0.5 * float(np.sum(a + k * b))
    if denominator == 0.0:
        raise MetricError("rsplit denominator is zero")
    return (2.0 ** -0.5) * float(np.sum(np.abs(a - k * b))) / denominator


def cc_half(i1, i2) -> float:
    """Pearson correlation of the two intensity arrays."""
    a, b = _pair(i1, i2)
    da = a - a.mean()
    db = b - b.mean()
    va = float(np.sum(da * da))
    vb = float(np.sum(db * db))
    if va == 0.0 or vb == 0.0:
        raise MetricError("correlation is undefined for zero-variance input")
    return float(np.sum(da * db)) / math.sqrt(va * vb)


def r_factor(f_obs, f_calc) -> float:
    """sum| |Fobs| - |Fcalc| | / sum|Fobs|; serves both the work and free forms."""
    a, b = _pair(f_obs, f_calc)
    denom = float(np.sum(np.abs(a)))
    if denom == 0.0:
        raise MetricError("r_factor denominator is zero")
    return float(np.sum(np.abs(np.abs(a) - np.abs(b)))) / denom


def max_errors(orig, recon) -> tuple[float, int]:
    """(max |difference|, first index attaining it)."""
    a, b = _pair(orig, recon)
    diff = np.abs(a - b)
    idx = int(np.argmax(diff))
    return float(diff[idx]), idx


def _json_value(v):
    if isinstance(v, float):
        if math.isinf(v):
            return "+inf" if v > 0 else "-inf"
        if math.isnan(v):
            return "nan"
    return v


def report_json(values: dict) -> str:
    """JSON report; infinities become the strings '+inf' / '-inf'."""
    return json.dumps({k: _json_value(v) for k, v in values.items()},
                      indent=2, sort_keys=True) + "\n"


def report_table(values: dict) -> str:
    """Aligned two-column text table."""
    keys = list(values)
    width = max((len(k) for k in keys), default=0)
    lines = []
    for k in keys:
        v = values[k]
        if isinstance(v, float) and math.isfinite(v):
            sv = f"{v:.6g}"
        else:
            sv = str(_json_value(v))
        lines.append(f"{k:<{width}}  {sv}")
    return "\n".join(lines) + "\n"


def read_intensity_csv(path) -> np.ndarray:
    """One value per line; blank lines skipped."""
    vals = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                vals.append(float(line))
            except ValueError as exc:
                raise MetricError(f"{path} line {lineno}: {exc}") from exc
    return np.asarray(vals, dtype=np.float64)
