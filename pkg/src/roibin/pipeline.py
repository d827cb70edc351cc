"""The composed compressor: ROI extraction + binning + codecs, chunked over
events, with a CRC-checked binary container format.

Container layout (all integers little-endian, CRC32 = IEEE polynomial):

    header:
        magic 'RBSZ', u16 version,
        u64 events, u64 panels, u64 rows, u64 cols,
        u32 chunk_events, u16 roi_window, f32 roi_fill,
        u16 bin_factor_rows, u16 bin_factor_cols,
        background codec record, roi codec record,
        u64 raw_byte_size, u32 CRC of the preceding bytes
    peak table:
        u64 count, then (u32 event, u16 panel, u16 row, u16 col) per peak,
        u32 CRC
    chunk directory:
        u32 chunk count, then per chunk
        (u64 roi_offset, u64 roi_length, u32 roi_crc,
         u64 bg_offset,  u64 bg_length,  u32 bg_crc),
        u32 CRC
    payload blob (offsets are relative to the blob start; payloads are
        packed back to back, so offsets strictly increase whenever payload
        lengths are nonzero)

A codec record is (u8 tag, u8 level, u8 bound_kind, u8 dims_mode,
f64 bound_value); fields that do not apply to the tag are zero.

Every chunk decodes independently: the background is decoded and expanded
by replication, then the chunk's ROI blocks are restored over it, which
re-establishes bit-exact ROI pixels.
"""

from __future__ import annotations

import struct
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import codec as codec_mod
from . import roi as roi_mod
from .binning import BinnedBatch, BinSpec, bin_batch, binned_dims, debin
from .codec import CodecId, ErrorBound, PqScratch
from .errors import ConfigError, CorruptionError, GeometryError, UnsupportedVersionError
from .frames import Dims4, EventBatch
from .peakfind import PeakList
from .roi import RoiBuffer, RoiSpec

MAGIC = b"RBSZ"
VERSION = 1

_HEADER = struct.Struct("<4sHQQQQIHfHH" + "BBBBd" * 2 + "Q")
_CRC = struct.Struct("<I")
_PEAK = np.dtype([("event", "<u4"), ("panel", "<u2"), ("row", "<u2"), ("col", "<u2")])
_DIR_ENTRY = struct.Struct("<QQIQQI")

_TAG_CODES = {"raw": 0, "deflate": 1, "pq": 2}
_TAG_NAMES = {v: k for k, v in _TAG_CODES.items()}
_KIND_CODES = {codec_mod.ABSOLUTE: 0, codec_mod.VALUE_RANGE_RELATIVE: 1}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}


@dataclass(frozen=True)
class ThreadAlloc:
    """Per-stage thread allocation plus the chunk-level task count."""

    roi: int = 1
    bin: int = 1
    codec: int = 1
    roi_codec: int = 1
    tasks: int = 1

    def __post_init__(self) -> None:
        for name in ("roi", "bin", "codec", "roi_codec", "tasks"):
            if getattr(self, name) < 1:
                raise ConfigError(f"thread count {name} must be >= 1")


def default_background() -> CodecId:
    """The grid-search optimum: absolute bound 90 ADU, 3D prediction."""
    return CodecId.pq(ErrorBound.absolute(90.0), dims_mode=3)


@dataclass(frozen=True)
class RoibinConfig:
    roi: RoiSpec = field(default_factory=RoiSpec)
    bin: BinSpec = field(default_factory=BinSpec)
    background: CodecId = field(default_factory=default_background)
    roi_codec: CodecId = field(default_factory=lambda: CodecId.deflate(1))
    chunk_events: int = 16
    threads: ThreadAlloc = field(default_factory=ThreadAlloc)

    def __post_init__(self) -> None:
        if self.chunk_events < 1:
            raise ConfigError("chunk_events must be >= 1")
        if not self.roi_codec.lossless:
            raise ConfigError("the ROI codec must be lossless (raw or deflate)")


@dataclass(frozen=True)
class ChunkEntry:
    roi_offset: int
    roi_length: int
    roi_crc: int
    bg_offset: int
    bg_length: int
    bg_crc: int


@dataclass(frozen=True)
class CompressedContainer:
    dims: Dims4
    chunk_events: int
    roi_window: int
    roi_fill: float
    bin_factors: tuple[int, int]
    background: CodecId
    roi_codec: CodecId
    raw_byte_size: int
    peak_anchors: np.ndarray  # (n, 4) int64, sorted
    chunks: tuple[ChunkEntry, ...]
    payload: bytes

    @property
    def n_peaks(self) -> int:
        return self.peak_anchors.shape[0]

    def to_bytes(self) -> bytes:
        return _container_to_bytes(self)

    @staticmethod
    def from_bytes(data: bytes) -> "CompressedContainer":
        return _container_from_bytes(data)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @staticmethod
    def load(path) -> "CompressedContainer":
        with open(path, "rb") as fh:
            return _container_from_bytes(fh.read())


@dataclass
class CompressionReport:
    compressed_bytes: int
    raw_bytes: int
    cr: float | None
    stage_seconds: dict[str, float]
    threads: ThreadAlloc
    chunk_events: int
    n_chunks: int
    n_peaks: int
    max_binned_error: float | None
    max_raw_error: float | None

    def to_dict(self) -> dict:
        d = dict(
            compressed_bytes=self.compressed_bytes,
            raw_bytes=self.raw_bytes,
            cr=self.cr,
            stage_seconds=self.stage_seconds,
            threads=vars(self.threads).copy(),
            chunk_events=self.chunk_events,
            n_chunks=self.n_chunks,
            n_peaks=self.n_peaks,
            max_binned_error=self.max_binned_error,
            max_raw_error=self.max_raw_error,
        )
        return d


def chunk_iter(events: int, chunk_events: int) -> list[tuple[int, int]]:
    """Contiguous event ranges [0,c), [c,2c), ... with a possibly short tail."""
    if chunk_events < 1:
        raise ConfigError("chunk_events must be >= 1")
    return [(lo, min(lo + chunk_events, events))
            for lo in range(0, events, chunk_events)]


def _codec_record(c: CodecId) -> tuple[int, int, int, int, float]:
    tag = _TAG_CODES[c.tag]
    level = c.level if c.tag == "deflate" else 0
    if c.tag == "pq":
        kind = _KIND_CODES[c.bound.kind]
        value = c.bound.value
        dims_mode = c.dims_mode
    else:
        kind, value, dims_mode = 0, 0.0, 0
    return tag, level, kind, dims_mode, value


def _codec_from_record(tag: int, level: int, kind: int, dims_mode: int,
                       value: float) -> CodecId:
    name = _TAG_NAMES.get(tag)
    if name is None:
        raise CorruptionError(f"unknown codec tag {tag}")
    try:
        if name == "raw":
            return CodecId.raw()
        if name == "deflate":
            return CodecId.deflate(level)
        kind_name = _KIND_NAMES.get(kind)
        if kind_name is None:
            raise CorruptionError(f"unknown bound kind {kind}")
        return CodecId.pq(ErrorBound(kind_name, value), dims_mode)
    except ConfigError as exc:
        raise CorruptionError(f"invalid codec record: {exc}") from exc


def _container_to_bytes(c: CompressedContainer) -> bytes:
    hdr = _HEADER.pack(
        MAGIC, VERSION,
        c.dims.events, c.dims.panels, c.dims.rows, c.dims.cols,
        c.chunk_events, c.roi_window, c.roi_fill,
        c.bin_factors[0], c.bin_factors[1],
        *_codec_record(c.background),
        *_codec_record(c.roi_codec),
        c.raw_byte_size,
    )
    parts = [hdr, _CRC.pack(zlib.crc32(hdr))]
    table = np.empty(c.n_peaks, dtype=_PEAK)
    if c.n_peaks:
        table["event"] = c.peak_anchors[:, 0]
        table["panel"] = c.peak_anchors[:, 1]
        table["row"] = c.peak_anchors[:, 2]
        table["col"] = c.peak_anchors[:, 3]
    peaks = struct.pack("<Q", c.n_peaks) + table.tobytes()
    parts += [peaks, _CRC.pack(zlib.crc32(peaks))]
    directory = struct.pack("<I", len(c.chunks)) + b"".join(
        _DIR_ENTRY.pack(e.roi_offset, e.roi_length, e.roi_crc,
                        e.bg_offset, e.bg_length, e.bg_crc)
        for e in c.chunks
    )
    parts += [directory, _CRC.pack(zlib.crc32(directory)), c.payload]
    return b"".join(parts)


class _Reader:
    """Bounds-checked cursor over the container bytes."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise CorruptionError(f"container truncated in {what}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def crc_check(self, payload: bytes, what: str) -> None:
        (stored,) = _CRC.unpack(self.take(_CRC.size, f"{what} CRC"))
        if stored != zlib.crc32(payload):
            raise CorruptionError(f"{what} CRC mismatch")


def _container_from_bytes(data: bytes) -> CompressedContainer:
    r = _Reader(data)
    hdr = r.take(_HEADER.size, "header")
    if hdr[:4] != MAGIC:
        raise CorruptionError("container magic mismatch")
    fields = _HEADER.unpack(hdr)
    version = fields[1]
    r.crc_check(hdr, "header")
    if version != VERSION:
        raise UnsupportedVersionError(
            f"container version {version}, this build reads {VERSION}"
        )
    (events, panels, rows, cols, chunk_events, roi_window, roi_fill,
     fr, fc) = fields[2:11]
    bg = _codec_from_record(*fields[11:16])
    rc = _codec_from_record(*fields[16:21])
    raw_byte_size = fields[21]
    try:
        dims = Dims4(events, panels, rows, cols)
    except GeometryError as exc:
        raise CorruptionError(f"invalid dims in header: {exc}") from exc
    if chunk_events < 1 or roi_window < 1 or roi_window % 2 == 0:
        raise CorruptionError("invalid chunking or ROI window in header")
    if fr < 1 or fc < 1:
        raise CorruptionError("invalid bin factors in header")
    if not rc.lossless:
        raise CorruptionError("container ROI codec is not lossless")

    count_bytes = r.take(8, "peak table")
    (n_peaks,) = struct.unpack("<Q", count_bytes)
    if n_peaks > (len(data) - r.pos) // _PEAK.itemsize:
        raise CorruptionError("peak count exceeds the container size")
    table_bytes = r.take(n_peaks * _PEAK.itemsize, "peak table")
    r.crc_check(count_bytes + table_bytes, "peak table")
    table = np.frombuffer(table_bytes, dtype=_PEAK)
    anchors = np.empty((n_peaks, 4), dtype=np.int64)
    anchors[:, 0] = table["event"]
    anchors[:, 1] = table["panel"]
    anchors[:, 2] = table["row"]
    anchors[:, 3] = table["col"]
    if n_peaks:
        if (anchors[:, 0].max() >= events or anchors[:, 1].max() >= panels
                or anchors[:, 2].max() >= rows or anchors[:, 3].max() >= cols):
            raise CorruptionError("peak anchor out of range")
        if not _anchors_strictly_sorted(anchors):
            raise CorruptionError("peak table is not sorted")

    ndir_bytes = r.take(4, "directory")
    (n_chunks,) = struct.unpack("<I", ndir_bytes)
    expected_chunks = (events + chunk_events - 1) // chunk_events
    if n_chunks != expected_chunks:
        raise CorruptionError(
            f"directory holds {n_chunks} chunks, dims imply {expected_chunks}"
        )
    entries_bytes = r.take(n_chunks * _DIR_ENTRY.size, "directory")
    r.crc_check(ndir_bytes + entries_bytes, "directory")
    entries = []
    for i in range(n_chunks):
        entries.append(ChunkEntry(*_DIR_ENTRY.unpack_from(entries_bytes,
                                                          i * _DIR_ENTRY.size)))
    payload = data[r.pos:]
    cursor = 0
    for i, e in enumerate(entries):
        for off, length, what in ((e.roi_offset, e.roi_length, "roi"),
                                  (e.bg_offset, e.bg_length, "background")):
            if off != cursor:
                raise CorruptionError(
                    f"chunk {i} {what} payload is not packed sequentially"
                )
            cursor += length
    if cursor != len(payload):
        raise CorruptionError(
            f"payload holds {len(payload)} bytes, directory expects {cursor}"
        )
    return CompressedContainer(
        dims=dims, chunk_events=chunk_events, roi_window=roi_window,
        roi_fill=roi_fill, bin_factors=(fr, fc), background=bg, roi_codec=rc,
        raw_byte_size=raw_byte_size, peak_anchors=anchors,
        chunks=tuple(entries), payload=payload,
    )


def _chunk_anchor_range(anchors: np.ndarray, lo: int, hi: int) -> tuple[int, int]:
    a = int(np.searchsorted(anchors[:, 0], lo, side="left"))
    b = int(np.searchsorted(anchors[:, 0], hi, side="left"))
    return a, b


def _anchors_strictly_sorted(anchors: np.ndarray) -> bool:
    if anchors.shape[0] <= 1:
        return True
    order = np.lexsort((anchors[:, 3], anchors[:, 2], anchors[:, 1], anchors[:, 0]))
    if not np.array_equal(order, np.arange(anchors.shape[0])):
        return False
    return not np.any(np.all(np.diff(anchors, axis=0) == 0, axis=1))


def _validate_for_container(batch: EventBatch, anchors: np.ndarray) -> None:
    d = batch.dims
    if d.events > 0xFFFFFFFF:
        raise ConfigError("containers index events with u32")
    if d.panels > 0xFFFF or d.rows > 0xFFFF or d.cols > 0xFFFF:
        raise ConfigError("containers index panels/rows/cols with u16")
    if anchors.size:
        if (anchors.min() < 0 or anchors[:, 0].max() >= d.events
                or anchors[:, 1].max() >= d.panels
                or anchors[:, 2].max() >= d.rows
                or anchors[:, 3].max() >= d.cols):
            raise GeometryError("peak anchors fall outside the batch dims")


def compress(
    batch: EventBatch,
    peaks: PeakList | np.ndarray,
    cfg: RoibinConfig,
    measure_errors: bool = True,
) -> tuple[CompressedContainer, CompressionReport]:
    """Compress a batch: lossless ROI blocks + binned, coded background.

    The background is binned over full frames (ROI pixels included); the ROI
    overwrite at decompression restores exactness.  Value-range-relative
    bounds resolve per chunk against the binned chunk values.
    """
    anchors = peaks.anchors() if isinstance(peaks, PeakList) else \
        np.ascontiguousarray(np.asarray(peaks, dtype=np.int64)).reshape(-1, 4)
    if not _anchors_strictly_sorted(anchors):
        raise GeometryError(
            "peak anchors must be strictly sorted by (event, panel, row, col)"
        )
    _validate_for_container(batch, anchors)
    d = batch.dims
    ranges = chunk_iter(d.events, cfg.chunk_events)
    bdims_full = binned_dims(d, cfg.bin)
    stage = {"roi_extract": 0.0, "roi_encode": 0.0, "bin": 0.0,
             "bg_encode": 0.0, "error_scan": 0.0}
    t_start = time.perf_counter()

    max_binned_err = 0.0
    max_raw_err = 0.0
    roi_spec = replace(cfg.roi, threads=cfg.threads.roi)
    bin_spec = replace(cfg.bin, threads=cfg.threads.bin)

    def do_chunk(rng: tuple[int, int], scratch: PqScratch,
                 blocks_buf: np.ndarray | None) -> tuple[bytes, bytes, dict]:
        lo, hi = rng
        times = {k: 0.0 for k in stage}
        sub = EventBatch(
            dims=Dims4(hi - lo, d.panels, d.rows, d.cols),
            values=batch.values[lo:hi],
            raw_byte_size=0,
        )
        a, b = _chunk_anchor_range(anchors, lo, hi)
        local = anchors[a:b].copy()
        local[:, 0] -= lo

        t0 = time.perf_counter()
        rois = roi_mod.extract_anchors(sub, local, roi_spec, blocks_out=blocks_buf)
        times["roi_extract"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        roi_payload = codec_mod.encode(cfg.roi_codec, rois.blocks)
        times["roi_encode"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        binned = bin_batch(sub, bin_spec)
        times["bin"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        bg_payload, chunk_err, _eps = codec_mod.encode_with_stats(
            cfg.background, binned.values, scratch=scratch
        )
        times["bg_encode"] = time.perf_counter() - t0

        errs = {"binned": chunk_err, "raw": 0.0}
        if measure_errors and cfg.background.tag == "pq":
            t0 = time.perf_counter()
            recon = scratch.recon[: binned.values.size].reshape(binned.dims.shape)
            rb = BinnedBatch(dims=binned.dims, values=recon,
                             source_dims=binned.source_dims)
            approx = debin(rb, bin_spec)
            err_map = np.abs(approx.values - sub.values)
            zero_blocks = np.zeros_like(rois.blocks)
            roi_mod.restore_into(
                err_map, sub.dims,
                RoiBuffer(spec=roi_spec, anchors=local, blocks=zero_blocks),
            )
            errs["raw"] = float(err_map.max()) if err_map.size else 0.0
            times["error_scan"] = time.perf_counter() - t0
        return roi_payload, bg_payload, {"times": times, "errs": errs}

    results: list[tuple[bytes, bytes, dict] | None] = [None] * len(ranges)
    if cfg.threads.tasks > 1 and len(ranges) > 1:
        def task(i: int) -> None:
            results[i] = do_chunk(ranges[i], PqScratch(), None)

        with ThreadPoolExecutor(max_workers=cfg.threads.tasks) as pool:
            futures = [pool.submit(task, i) for i in range(len(ranges))]
            for f in futures:
                f.result()
    else:
        # per-task scratch sized once from the dims, reused across chunks
        scratch = PqScratch()
        scratch.ensure(cfg.chunk_events * bdims_full.panels
                       * bdims_full.rows * bdims_full.cols)
        max_chunk_peaks = max(
            (_chunk_anchor_range(anchors, lo, hi)[1]
             - _chunk_anchor_range(anchors, lo, hi)[0]
             for lo, hi in ranges),
            default=0,
        )
        blocks_buf = np.empty((max_chunk_peaks, cfg.roi.window, cfg.roi.window),
                              dtype=np.float32)
        for i, rng in enumerate(ranges):
            results[i] = do_chunk(rng, scratch, blocks_buf)

    payload = bytearray()
    entries = []
    for res in results:
        roi_payload, bg_payload, meta = res
        for k, v in meta["times"].items():
            stage[k] += v
        max_binned_err = max(max_binned_err, meta["errs"]["binned"])
        max_raw_err = max(max_raw_err, meta["errs"]["raw"])
        roi_off = len(payload)
        payload += roi_payload
        bg_off = len(payload)
        payload += bg_payload
        entries.append(ChunkEntry(
            roi_offset=roi_off, roi_length=len(roi_payload),
            roi_crc=zlib.crc32(roi_payload),
            bg_offset=bg_off, bg_length=len(bg_payload),
            bg_crc=zlib.crc32(bg_payload),
        ))

    container = CompressedContainer(
        dims=d, chunk_events=cfg.chunk_events, roi_window=cfg.roi.window,
        roi_fill=float(np.float32(cfg.roi.fill)),
        bin_factors=(cfg.bin.factor_rows, cfg.bin.factor_cols),
        background=cfg.background, roi_codec=cfg.roi_codec,
        raw_byte_size=batch.raw_byte_size,
        peak_anchors=anchors, chunks=tuple(entries), payload=bytes(payload),
    )
    blob = container.to_bytes()
    stage["total"] = time.perf_counter() - t_start
    lossy = cfg.background.tag == "pq"
    report = CompressionReport(
        compressed_bytes=len(blob),
        raw_bytes=batch.raw_byte_size,
        cr=(batch.raw_byte_size / len(blob) if batch.raw_byte_size > 0 else None),
        stage_seconds=stage,
        threads=cfg.threads,
        chunk_events=cfg.chunk_events,
        n_chunks=len(ranges),
        n_peaks=int(anchors.shape[0]),
        max_binned_error=(max_binned_err if lossy else 0.0),
        max_raw_error=(max_raw_err if (lossy and measure_errors) else
                       (0.0 if not lossy else None)),
    )
    return container, report


def _decode_chunk(
    container: CompressedContainer,
    chunk_index: int,
    threads: ThreadAlloc,
) -> EventBatch:
    d = container.dims
    ranges = chunk_iter(d.events, container.chunk_events)
    lo, hi = ranges[chunk_index]
    entry = container.chunks[chunk_index]
    sub_dims = Dims4(hi - lo, d.panels, d.rows, d.cols)
    bin_spec = BinSpec(container.bin_factors[0], container.bin_factors[1],
                       threads=threads.bin)
    bdims = binned_dims(sub_dims, bin_spec)

    bg_bytes = container.payload[entry.bg_offset : entry.bg_offset + entry.bg_length]
    if len(bg_bytes) != entry.bg_length:
        raise CorruptionError(f"chunk {chunk_index} background payload truncated")
    if zlib.crc32(bg_bytes) != entry.bg_crc:
        raise CorruptionError(f"chunk {chunk_index} background CRC mismatch")
    roi_bytes = container.payload[entry.roi_offset : entry.roi_offset + entry.roi_length]
    if len(roi_bytes) != entry.roi_length:
        raise CorruptionError(f"chunk {chunk_index} roi payload truncated")
    if zlib.crc32(roi_bytes) != entry.roi_crc:
        raise CorruptionError(f"chunk {chunk_index} roi CRC mismatch")

    binned_values = codec_mod.decode(container.background, bg_bytes, bdims.shape)
    binned = BinnedBatch(dims=bdims, values=binned_values, source_dims=sub_dims)
    out = debin(binned, bin_spec)

    a, b = _chunk_anchor_range(container.peak_anchors, lo, hi)
    n_blocks = b - a
    w = container.roi_window
    blocks_flat = codec_mod.decode(container.roi_codec, roi_bytes,
                                   (n_blocks, w, w))
    local = container.peak_anchors[a:b].copy()
    local[:, 0] -= lo
    spec = RoiSpec(window=w, fill=container.roi_fill, threads=threads.roi)
    roi_mod.restore_into(out.values, out.dims,
                         RoiBuffer(spec=spec, anchors=local, blocks=blocks_flat))
    return out


def decompress(
    container: CompressedContainer, threads: ThreadAlloc | None = None
) -> EventBatch:
    """Full inverse of compress; output dims equal the original dims."""
    threads = threads or ThreadAlloc()
    d = container.dims
    out = np.empty(d.shape, dtype=np.float32)
    ranges = chunk_iter(d.events, container.chunk_events)

    def task(i: int) -> None:
        lo, hi = ranges[i]
        chunk = _decode_chunk(container, i, threads)
        out[lo:hi] = chunk.values

    if threads.tasks > 1 and len(ranges) > 1:
        with ThreadPoolExecutor(max_workers=threads.tasks) as pool:
            futures = [pool.submit(task, i) for i in range(len(ranges))]
            for f in futures:
                f.result()
    else:
        for i in range(len(ranges)):
            task(i)
    return EventBatch(dims=d, values=out, raw_byte_size=container.raw_byte_size)


def decompress_event(
    container: CompressedContainer, event_index: int,
    threads: ThreadAlloc | None = None,
) -> EventBatch:
    """Decode only the chunk containing one event and slice that event out."""
    d = container.dims
    if not 0 <= event_index < d.events:
        raise IndexError(f"event {event_index} out of range [0, {d.events})")
    threads = threads or ThreadAlloc()
    chunk_index = event_index // container.chunk_events
    chunk = _decode_chunk(container, chunk_index, threads)
    lo = chunk_index * container.chunk_events
    values = np.ascontiguousarray(chunk.values[event_index - lo : event_index - lo + 1])
    per_event_bytes = (container.raw_byte_size // d.events) if d.events else 0
    return EventBatch(
        dims=Dims4(1, d.panels, d.rows, d.cols),
        values=values,
        raw_byte_size=per_event_bytes,
    )
