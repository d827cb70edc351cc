import math

import numpy as np
import pytest

from roibin.errors import GeometryError, SizeError, UndefinedRatioError
from roibin.frames import Dims4, identity_batch
from roibin.peakfind import (
    PeakFinderParams,
    PeakList,
    find_peaks,
    nhr_ratio,
    non_hit_rejection,
)

from _oracles import naive_find_peaks_panel


def _batch_from_panel(panel: np.ndarray):
    panel = np.asarray(panel, dtype=np.float32)
    dims = Dims4(1, 1, panel.shape[0], panel.shape[1])
    return identity_batch(panel.reshape(-1), dims)


def test_centered_blob_example():
    panel = np.zeros((9, 9), dtype=np.float32)
    panel[3:6, 3:6] = [[10, 20, 10], [20, 500, 20], [10, 20, 10]]
    peaks = find_peaks(_batch_from_panel(panel))
    assert len(peaks) == 1
    p = next(iter(peaks))
    assert (p.event, p.panel, p.row, p.col) == (0, 0, 4, 4)
    assert p.total_intensity == 620.0
    assert p.n_pixels == 9
    assert math.isinf(p.snr)  # sigma_bg == 0 passes


def test_single_hot_pixel_rejected_by_min_pixels():
    panel = np.zeros((9, 9), dtype=np.float32)
    panel[4, 4] = 400.0
    assert len(find_peaks(_batch_from_panel(panel))) == 0


def test_all_zero_panel():
    assert len(find_peaks(_batch_from_panel(np.zeros((9, 9))))) == 0


def test_window_larger_than_panel():
    with pytest.raises(GeometryError):
        find_peaks(_batch_from_panel(np.zeros((5, 5))))


def test_determinism():
    rng = np.random.default_rng(3)
    panel = np.abs(rng.normal(0, 150, size=(48, 48))).astype(np.float32)
    batch = _batch_from_panel(panel)
    a = find_peaks(batch)
    b = find_peaks(batch)
    assert a.to_csv() == b.to_csv()


@pytest.mark.parametrize("seed", range(8))
def test_matches_naive_oracle(seed):
    rng = np.random.default_rng(seed)
    panel = np.abs(rng.normal(0, 150, size=(32, 32))).astype(np.float32)
    params = PeakFinderParams()
    got = find_peaks(_batch_from_panel(panel), params)
    expected = naive_find_peaks_panel(
        panel, params.window, params.max_threshold, params.member_floor,
        params.total_floor, params.snr_floor, params.min_pixels,
        params.max_pixels,
    )
    assert [(p.row, p.col) for p in got] == [(r, c) for r, c, *_ in expected]
    for p, (_, _, total, npix, snr) in zip(got, expected):
        assert p.n_pixels == npix
        assert p.total_intensity == pytest.approx(total, rel=1e-12)
        if math.isinf(snr):
            assert math.isinf(p.snr)
        else:
            assert p.snr == pytest.approx(snr, rel=1e-9)


def test_emitted_peaks_satisfy_all_predicates():
    rng = np.random.default_rng(11)
    panel = np.abs(rng.normal(0, 200, size=(40, 40))).astype(np.float32)
    params = PeakFinderParams()
    peaks = find_peaks(_batch_from_panel(panel), params)
    half = params.window // 2
    for p in peaks:
        v = panel[p.row, p.col]
        assert v >= params.max_threshold
        assert params.min_pixels <= p.n_pixels <= params.max_pixels
        assert p.total_intensity > params.total_floor
        assert math.isinf(p.snr) or p.snr > params.snr_floor
        # strict max of its window
        r0, r1 = max(0, p.row - half), min(40, p.row + half + 1)
        c0, c1 = max(0, p.col - half), min(40, p.col + half + 1)
        window = panel[r0:r1, c0:c1]
        assert v == window.max()


def test_raising_threshold_never_adds_peaks():
    rng = np.random.default_rng(5)
    panel = np.abs(rng.normal(0, 250, size=(48, 48))).astype(np.float32)
    batch = _batch_from_panel(panel)
    low = {(p.row, p.col) for p in find_peaks(batch, PeakFinderParams(max_threshold=250))}
    high = {(p.row, p.col) for p in find_peaks(batch, PeakFinderParams(max_threshold=400))}
    assert high <= low


def _synthetic_counts_batch(counts):
    """Events with `counts[e]` isolated strong blobs each."""
    rows = cols = 96
    dims = Dims4(len(counts), 1, rows, cols)
    values = np.zeros(dims.shape, dtype=np.float32)
    peaks = []
    for e, k in enumerate(counts):
        for i in range(k):
            r, c = 6 + 8 * (i // 10), 6 + 8 * (i % 10)
            values[e, 0, r, c] = 900.0
            values[e, 0, r + 1, c] = 300.0
            peaks.append((e, 0, r, c, 1200.0, 2, math.inf))
    return identity_batch(values.reshape(-1), dims), PeakList.from_rows(peaks, len(counts))


def test_nhr_filtering_example():
    batch, peaks = _synthetic_counts_batch([12, 0, 10])
    kept_batch, kept_peaks, mapping = non_hit_rejection(batch, peaks, 10)
    assert mapping == [0, 2]
    assert kept_batch.dims.events == 2
    assert kept_peaks.per_event_counts.tolist() == [12, 10]
    assert np.array_equal(kept_batch.values[0], batch.values[0])
    assert np.array_equal(kept_batch.values[1], batch.values[2])
    # raw byte accounting shrinks proportionally
    assert kept_batch.raw_byte_size == batch.raw_byte_size * 2 // 3


def test_nhr_zero_threshold_is_identity():
    batch, peaks = _synthetic_counts_batch([3, 0, 1])
    kept_batch, kept_peaks, mapping = non_hit_rejection(batch, peaks, 0)
    assert mapping == [0, 1, 2]
    assert np.array_equal(kept_batch.values, batch.values)
    assert len(kept_peaks) == len(peaks)


def test_nhr_total_rejection():
    batch, peaks = _synthetic_counts_batch([1, 2, 0])
    kept_batch, kept_peaks, mapping = non_hit_rejection(batch, peaks, 5)
    assert mapping == []
    assert kept_batch.dims.events == 0
    assert len(kept_peaks) == 0
    assert kept_batch.raw_byte_size == 0


def test_nhr_ratio_reference_values():
    assert nhr_ratio(4_326_979, 744_150) == pytest.approx(5.81, abs=0.01)
    assert nhr_ratio(248_024, 77_120) == pytest.approx(3.22, abs=0.01)
    assert nhr_ratio(10, 10) == 1.0


def test_nhr_ratio_undefined():
    with pytest.raises(UndefinedRatioError):
        nhr_ratio(10, 0)


def test_nhr_compose_with_ratio():
    batch, peaks = _synthetic_counts_batch([12, 0, 10, 11])
    kept_batch, _, _ = non_hit_rejection(batch, peaks, 10)
    assert nhr_ratio(batch.dims.events, kept_batch.dims.events) == pytest.approx(4 / 3)


def test_csv_round_trip():
    _, peaks = _synthetic_counts_batch([2, 1])
    text = peaks.to_csv()
    assert text.splitlines()[0] == "event,panel,row,col,total,npix,snr"
    back = PeakList.from_csv(text, n_events=2)
    assert back.to_csv() == text


def test_csv_header_validated():
    with pytest.raises(SizeError):
        PeakList.from_csv("a,b,c\n1,2,3\n")


def test_peaklist_sorted_enforced():
    with pytest.raises(SizeError):
        PeakList(
            event=np.array([1, 0]), panel=np.array([0, 0]),
            row=np.array([0, 0]), col=np.array([0, 0]),
            total=np.zeros(2), npix=np.ones(2, dtype=np.int64),
            snr=np.zeros(2), n_events=2,
        )


def test_csv_malformed_row_raises_size_error():
    with pytest.raises(SizeError, match="line 2"):
        PeakList.from_csv("event,panel,row,col,total,npix,snr\n1,2,three\n")
