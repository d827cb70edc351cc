import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roibin.errors import MetricError, UndefinedRatioError
from roibin.metrics import (
    PairedIntensities,
    cc_half,
    compression_ratio,
    max_errors,
    mpe,
    psnr,
    r_factor,
    read_intensity_csv,
    report_json,
    report_table,
    rsplit,
)


def test_compression_ratio_basic():
    assert compression_ratio(200, 100) == 2.0
    assert compression_ratio(2 * 1000, 4 * 1000) == 0.5  # float32 passthrough
    with pytest.raises(UndefinedRatioError):
        compression_ratio(10, 0)


def test_psnr_examples():
    assert psnr([1.0, 2.0], [1.0, 2.0]) == math.inf
    assert psnr([0.0, 2.0], [0.0, 1.0]) == pytest.approx(9.0309, abs=2e-4)
    # constant offset: rmse == |c|
    rng = np.random.default_rng(0)
    a = rng.normal(0, 10, 100)
    c = 0.125
    r = a.max() - a.min()
    assert psnr(a, a + c) == pytest.approx(20 * math.log10(r / c), rel=1e-12)


def test_psnr_sentinels():
    assert psnr([5.0, 5.0], [5.0, 5.0]) == math.inf
    assert psnr([5.0, 5.0], [5.0, 6.0]) == -math.inf


def test_psnr_monotone_in_rmse():
    a = np.linspace(0, 100, 50)
    values = [psnr(a, a + delta) for delta in (0.01, 0.1, 1.0, 10.0)]
    assert values == sorted(values, reverse=True)


def test_mpe_examples():
    assert mpe([100.0], [100.0]) == 0.0
    assert mpe([100.0], [90.0]) == pytest.approx(10.0)
    assert mpe([0.0], [3.0]) is None


def test_mpe_floor_excludes_small():
    assert mpe([1e-9, 10.0], [5.0, 5.0]) == pytest.approx(50.0)


def test_rsplit_examples():
    assert rsplit([1.0, 2.0], [1.0, 2.0], k=1.0) == 0.0
    assert rsplit([2.0], [1.0], k=1.0) == pytest.approx(0.4714, abs=2e-4)
    i2 = np.array([1.0, 2.0, 3.0])
    assert rsplit(2 * i2, i2) == pytest.approx(0.0, abs=1e-15)  # auto k = 2


def test_rsplit_zero_denominator():
    with pytest.raises(MetricError):
        rsplit([1.0, -1.0], [1.0, -1.0], k=1.0)
    with pytest.raises(MetricError):
        rsplit([1.0], [0.0])  # auto k unfittable


def test_cc_half_examples():
    a = [1.0, 2.0, 3.0]
    assert cc_half(a, a) == pytest.approx(1.0)
    assert cc_half(a, [-1.0, -2.0, -3.0]) == pytest.approx(-1.0)
    assert cc_half([1.0, 2.0, 3.0], [1.0, 2.0, 4.0]) == pytest.approx(0.9820, abs=2e-4)


def test_cc_half_zero_variance():
    with pytest.raises(MetricError):
        cc_half([1.0, 1.0], [1.0, 2.0])


def test_r_factor_examples():
    assert r_factor([10.0], [10.0]) == 0.0
    assert r_factor([10.0], [8.0]) == pytest.approx(0.2)
    assert r_factor([10.0], [-10.0]) == 0.0
    with pytest.raises(MetricError):
        r_factor([0.0], [1.0])


def test_max_errors_examples():
    assert max_errors([1.0, 2.0], [1.0, 2.0]) == (0.0, 0)
    err, idx = max_errors([0.0, 0.0, 5.0], [0.0, 0.0, 3.5])
    assert (err, idx) == (1.5, 2)
    rng = np.random.default_rng(1)
    a = rng.normal(size=100)
    b = rng.normal(size=100)
    diff = np.abs(a - b)
    assert max_errors(a, b) == (diff.max(), int(diff.argmax()))


@given(st.floats(0.1, 100.0), st.integers(0, 1000))
@settings(max_examples=40, deadline=None)
def test_rsplit_scale_consistency(scale, seed):
    rng = np.random.default_rng(seed)
    i1 = rng.uniform(1, 100, 20)
    i2 = rng.uniform(1, 100, 20)
    base = rsplit(i1, i2, k=1.0)
    scaled = rsplit(scale * i1, scale * i2, k=1.0)
    assert scaled == pytest.approx(base, rel=1e-9)


@given(st.floats(0.1, 10.0), st.floats(-5.0, 5.0), st.integers(0, 1000))
@settings(max_examples=40, deadline=None)
def test_cc_half_affine_invariance(a_scale, a_shift, seed):
    rng = np.random.default_rng(seed)
    i1 = rng.normal(0, 10, 30)
    i2 = rng.normal(0, 10, 30)
    base = cc_half(i1, i2)
    assert cc_half(a_scale * i1 + a_shift, i2) == pytest.approx(base, rel=1e-9, abs=1e-12)


def test_r_factor_nonnegative_and_zero_on_self():
    rng = np.random.default_rng(2)
    f = rng.normal(0, 100, 50)
    assert r_factor(f, f) == 0.0
    g = rng.normal(0, 100, 50)
    assert r_factor(f, g) >= 0.0


def test_paired_validation():
    with pytest.raises(MetricError):
        PairedIntensities(np.array([1.0]), np.array([1.0, 2.0]))
    with pytest.raises(MetricError):
        PairedIntensities(np.array([]), np.array([]))
    with pytest.raises(MetricError):
        PairedIntensities(np.array([np.inf]), np.array([1.0]))


def test_report_emission():
    values = {"rsplit": 0.1, "psnr_db": math.inf, "mpe": None}
    js = report_json(values)
    assert '"+inf"' in js
    table = report_table(values)
    assert "rsplit" in table and "0.1" in table


def test_read_intensity_csv(tmp_path):
    path = tmp_path / "i.csv"
    path.write_text("1.5\n\n2.5\n-3.0\n")
    assert read_intensity_csv(path).tolist() == [1.5, 2.5, -3.0]


def test_compression_ratio_cross_checks_pipeline_report():
    from roibin.frames import Dims4, identity_batch
    from roibin.peakfind import PeakList
    from roibin.pipeline import RoibinConfig, compress

    rng = np.random.default_rng(31)
    dims = Dims4(2, 1, 32, 32)
    batch = identity_batch(rng.normal(0, 40, size=dims.shape)
                           .astype(np.float32).reshape(-1), dims)
    _, report = compress(batch, PeakList.empty(2), RoibinConfig(chunk_events=2))
    assert compression_ratio(report.raw_bytes, report.compressed_bytes) == report.cr
