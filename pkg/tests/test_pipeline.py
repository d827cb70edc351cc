import numpy as np
import pytest
from dataclasses import replace

from roibin.binning import BinSpec, bin_batch
from roibin.codec import CodecId, ErrorBound, decode
from roibin.errors import ConfigError, CorruptionError, UnsupportedVersionError
from roibin.frames import Dims4, identity_batch
from roibin.peakfind import PeakList
from roibin.pipeline import (
    CompressedContainer,
    RoibinConfig,
    ThreadAlloc,
    chunk_iter,
    compress,
    decompress,
    decompress_event,
)
from roibin.roi import RoiSpec, extract


def _noise_batch(seed, events=4, panels=1, rows=32, cols=32, scale=50.0):
    rng = np.random.default_rng(seed)
    dims = Dims4(events, panels, rows, cols)
    vals = rng.normal(0, scale, size=dims.shape).astype(np.float32)
    return identity_batch(vals.reshape(-1), dims)


def _peaks_at(dims, coords):
    rows = [(e, p, r, c, 1000.0, 9, 50.0) for e, p, r, c in coords]
    return PeakList.from_rows(rows, dims.events)


LOSSLESS = RoibinConfig(
    roi=RoiSpec(window=5),
    bin=BinSpec(1, 1),
    background=CodecId.raw(),
    roi_codec=CodecId.raw(),
    chunk_events=2,
)


def test_chunk_iter_examples():
    assert chunk_iter(5, 2) == [(0, 2), (2, 4), (4, 5)]
    assert chunk_iter(3, 10) == [(0, 3)]
    assert chunk_iter(3, 1) == [(0, 1), (1, 2), (2, 3)]


def test_empty_batch_container():
    batch = identity_batch(np.zeros(0, dtype=np.float32), Dims4(0, 1, 8, 8))
    container, report = compress(batch, PeakList.empty(0), LOSSLESS)
    assert container.chunks == ()
    assert report.cr is None
    assert report.raw_bytes == 0
    out = decompress(CompressedContainer.from_bytes(container.to_bytes()))
    assert out.dims.events == 0


def test_float32_passthrough_cr_half():
    batch = _noise_batch(0, events=1, rows=256, cols=256)
    cfg = replace(LOSSLESS, chunk_events=1)
    container, report = compress(batch, PeakList.empty(1), cfg)
    entry = container.chunks[0]
    # the background payload is the float32 frame verbatim
    payload = container.payload[entry.bg_offset:entry.bg_offset + entry.bg_length]
    assert payload == batch.values.tobytes()
    assert report.cr == pytest.approx(0.5, abs=0.01)
    assert report.cr == report.raw_bytes / report.compressed_bytes


def test_lossless_round_trip_bitwise():
    for codec in (CodecId.raw(), CodecId.deflate(3)):
        cfg = replace(LOSSLESS, background=codec, roi_codec=codec)
        batch = _noise_batch(1, events=5, panels=2, rows=24, cols=24)
        peaks = _peaks_at(batch.dims, [(0, 0, 5, 5), (3, 1, 10, 12)])
        container, _ = compress(batch, peaks, cfg)
        out = decompress(container)
        assert out.values.tobytes() == batch.values.tobytes()
        assert out.raw_byte_size == batch.raw_byte_size


def test_lossy_roundtrip_roi_exact_and_bounded():
    batch = _noise_batch(2, events=1, rows=64, cols=64, scale=20.0)
    vals = batch.values.copy()
    vals[0, 0, 30:34, 30:34] += 5000.0  # a bright centered feature
    batch = identity_batch(vals.reshape(-1), batch.dims)
    peaks = _peaks_at(batch.dims, [(0, 0, 32, 32)])
    cfg = RoibinConfig(
        roi=RoiSpec(window=17),
        bin=BinSpec(2, 2),
        background=CodecId.pq(ErrorBound.absolute(90.0), dims_mode=3),
        chunk_events=1,
    )
    container, report = compress(batch, peaks, cfg)
    out = decompress(container)
    # ROI pixels bit-exact
    spec = RoiSpec(window=17)
    assert (extract(out, peaks, spec).blocks.tobytes()
            == extract(batch, peaks, spec).blocks.tobytes())
    # binned-domain error bounded
    entry = container.chunks[0]
    payload = container.payload[entry.bg_offset:entry.bg_offset + entry.bg_length]
    binned = bin_batch(batch, cfg.bin)
    decoded = decode(cfg.background, payload, binned.dims.shape)
    err = np.abs(decoded.astype(np.float64) - binned.values.astype(np.float64)).max()
    assert err <= 90.0
    assert report.max_binned_error <= 90.0


def test_report_fields_and_nhr_exclusion():
    batch = _noise_batch(3, events=4, rows=16, cols=16)
    container, report = compress(batch, PeakList.empty(4), LOSSLESS)
    assert report.raw_bytes == 2 * batch.dims.n_values
    assert report.cr == report.raw_bytes / report.compressed_bytes
    assert report.n_chunks == 2
    assert report.max_binned_error == 0.0
    # NHR-reduced batches carry reduced raw bytes; cr excludes the NHR factor
    half = identity_batch(batch.values[:2].reshape(-1), Dims4(2, 1, 16, 16))
    _, report_half = compress(half, PeakList.empty(2), LOSSLESS)
    assert report_half.raw_bytes == 2 * half.dims.n_values


def test_container_determinism_and_thread_invariance():
    batch = _noise_batch(4, events=6, panels=2, rows=20, cols=20)
    peaks = _peaks_at(batch.dims, [(0, 0, 5, 5), (2, 1, 7, 7), (5, 0, 10, 3)])
    blobs = set()
    for threads in (1, 2, 4, 8):
        alloc = ThreadAlloc(roi=threads, bin=threads, codec=threads,
                            roi_codec=threads, tasks=threads)
        cfg = RoibinConfig(
            roi=RoiSpec(window=7, parallel_threshold=1),
            bin=BinSpec(2, 2),
            background=CodecId.pq(ErrorBound.absolute(10.0), dims_mode=2),
            chunk_events=2,
            threads=alloc,
        )
        container, _ = compress(batch, peaks, cfg)
        blobs.add(container.to_bytes())
    assert len(blobs) == 1
    # identical settings twice are bit-identical too
    cfg = RoibinConfig(chunk_events=3)
    c1, _ = compress(batch, peaks, cfg)
    c2, _ = compress(batch, peaks, cfg)
    assert c1.to_bytes() == c2.to_bytes()


def test_compress_decompress_compress_fixed_point_lossless():
    batch = _noise_batch(5, events=3, rows=16, cols=16)
    peaks = _peaks_at(batch.dims, [(1, 0, 8, 8)])
    c1, _ = compress(batch, peaks, LOSSLESS)
    out = decompress(c1)
    c2, _ = compress(out, peaks, LOSSLESS)
    assert c1.to_bytes() == c2.to_bytes()


def test_compress_decompress_compress_fixed_point_pq_no_peaks():
    batch = _noise_batch(6, events=2, rows=16, cols=16)
    cfg = RoibinConfig(
        roi=RoiSpec(window=5), bin=BinSpec(1, 1),
        background=CodecId.pq(ErrorBound.absolute(1.0), dims_mode=3),
        chunk_events=2,
    )
    c1, _ = compress(batch, PeakList.empty(2), cfg)
    out1 = decompress(c1)
    c2, _ = compress(out1, PeakList.empty(2), cfg)
    out2 = decompress(c2)
    assert out1.values.tobytes() == out2.values.tobytes()


def test_decompress_event_matches_full():
    batch = _noise_batch(7, events=7, rows=16, cols=16)
    peaks = _peaks_at(batch.dims, [(0, 0, 4, 4), (6, 0, 10, 10)])
    cfg = replace(LOSSLESS, chunk_events=3,
                  background=CodecId.pq(ErrorBound.absolute(5.0), dims_mode=1),
                  bin=BinSpec(2, 2))
    container, _ = compress(batch, peaks, cfg)
    full = decompress(container)
    for k in range(7):
        ev = decompress_event(container, k)
        assert ev.dims.events == 1
        assert np.array_equal(ev.values[0], full.values[k])
    with pytest.raises(IndexError):
        decompress_event(container, 7)


def test_truncated_container_rejected():
    batch = _noise_batch(8, events=2, rows=16, cols=16)
    container, _ = compress(batch, PeakList.empty(2), LOSSLESS)
    blob = container.to_bytes()
    for cut in (10, len(blob) // 2, len(blob) - 3):
        with pytest.raises(CorruptionError):
            decompress(CompressedContainer.from_bytes(blob[:cut]))


def test_payload_corruption_names_section():
    batch = _noise_batch(9, events=2, rows=16, cols=16)
    container, _ = compress(batch, PeakList.empty(2), LOSSLESS)
    blob = bytearray(container.to_bytes())
    blob[-5] ^= 0x40  # inside the last background payload
    c = CompressedContainer.from_bytes(bytes(blob))
    with pytest.raises(CorruptionError, match="background CRC"):
        decompress(c)


def test_version_gate():
    batch = _noise_batch(10, events=1, rows=16, cols=16)
    container, _ = compress(batch, PeakList.empty(1), LOSSLESS)
    blob = bytearray(container.to_bytes())
    # bump the version and fix the header CRC so only the version differs
    import struct as _s
    import zlib as _z
    from roibin.pipeline import _HEADER
    blob[4:6] = _s.pack("<H", 99)
    hdr = bytes(blob[: _HEADER.size])
    blob[_HEADER.size:_HEADER.size + 4] = _s.pack("<I", _z.crc32(hdr))
    with pytest.raises(UnsupportedVersionError):
        CompressedContainer.from_bytes(bytes(blob))


def test_magic_gate():
    with pytest.raises(CorruptionError):
        CompressedContainer.from_bytes(b"NOPE" + bytes(200))


def test_rel_bound_resolves_per_chunk():
    rng = np.random.default_rng(11)
    dims = Dims4(4, 1, 16, 16)
    vals = rng.uniform(0, 100, size=dims.shape).astype(np.float32)
    vals[2:] *= 10  # second chunk has 10x the range
    batch = identity_batch(vals.reshape(-1), dims)
    cfg = RoibinConfig(
        roi=RoiSpec(window=5), bin=BinSpec(1, 1),
        background=CodecId.pq(ErrorBound.relative(1e-2), dims_mode=2),
        chunk_events=2,
    )
    container, _ = compress(batch, PeakList.empty(4), cfg)
    out = decompress(container)
    for lo, hi in chunk_iter(4, 2):
        chunk = vals[lo:hi]
        eps = 1e-2 * (chunk.max() - chunk.min())
        err = np.abs(out.values[lo:hi].astype(np.float64)
                     - chunk.astype(np.float64)).max()
        assert err <= eps + 1e-12


def test_rel_bound_constant_chunk_raises_config_error():
    batch = identity_batch(np.full(256, 7.0, dtype=np.float32),
                           Dims4(1, 1, 16, 16))
    cfg = RoibinConfig(
        bin=BinSpec(1, 1),
        background=CodecId.pq(ErrorBound.relative(1e-3), dims_mode=3),
        chunk_events=1,
    )
    with pytest.raises(ConfigError, match="absolute bound"):
        compress(batch, PeakList.empty(1), cfg)


def test_roi_codec_must_be_lossless():
    with pytest.raises(ConfigError):
        RoibinConfig(roi_codec=CodecId.pq(ErrorBound.absolute(1.0)))


def test_save_load_file(tmp_path):
    batch = _noise_batch(12, events=2, rows=16, cols=16)
    container, _ = compress(batch, PeakList.empty(2), LOSSLESS)
    path = tmp_path / "x.rbsz"
    container.save(path)
    loaded = CompressedContainer.load(path)
    assert loaded.to_bytes() == container.to_bytes()
    out = decompress(loaded)
    assert out.values.tobytes() == batch.values.tobytes()


def test_peaks_across_chunk_boundaries():
    batch = _noise_batch(13, events=5, rows=24, cols=24)
    coords = [(e, 0, 3 + 4 * e, 20 - 2 * e) for e in range(5)]
    peaks = _peaks_at(batch.dims, coords)
    cfg = replace(LOSSLESS, chunk_events=2, background=CodecId.deflate(1))
    container, report = compress(batch, peaks, cfg)
    assert report.n_peaks == 5
    out = decompress(container)
    assert out.values.tobytes() == batch.values.tobytes()


def test_unsorted_anchor_array_rejected():
    from roibin.errors import GeometryError

    batch = _noise_batch(14, events=3, rows=16, cols=16)
    bad = np.array([[2, 0, 4, 4], [0, 0, 4, 4]], dtype=np.int64)
    with pytest.raises(GeometryError, match="sorted"):
        compress(batch, bad, LOSSLESS)
    dup = np.array([[0, 0, 4, 4], [0, 0, 4, 4]], dtype=np.int64)
    with pytest.raises(GeometryError, match="sorted"):
        compress(batch, dup, LOSSLESS)
