"""Pluggable compressors: raw passthrough, deflate, and the error-bounded
predictor-quantizer codec ("pq") used for the binned background.

pq stream layout (all integers little-endian):

    magic 'PQ01'
    u8   dims_mode
    f64  resolved absolute error bound
    u32  quantizer capacity
    u64  element count
    u64  outlier count
    u32  CRC32 of the preceding header bytes
    <raw-deflate blob>:
        u32  table entry count
        table entries: (i32 symbol, u8 code length), canonical order
        u64  bit count of the packed code stream
        packed code stream (one code per element; outlier positions carry
        a placeholder code 0 and are overridden by the verbatim values)
        outliers: (u64 position, f32 value) pairs, positions ascending

Every decoded element satisfies |original - decoded| <= eps: elements whose
quantized reconstruction would miss the bound, or whose code would exceed
the quantizer capacity, are stored verbatim.
"""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from . import _kernels
from ._entropy import build_table, decode_symbols, deflate, encode_symbols, inflate
from .errors import ConfigError, CorruptionError

PQ_MAGIC = b"PQ01"
PQ_CAPACITY = 1 << 15
_PQ_HEADER = struct.Struct("<4sBdIQQ")
_PQ_CRC = struct.Struct("<I")

ABSOLUTE = "absolute"
VALUE_RANGE_RELATIVE = "value_range_relative"


@dataclass(frozen=True)
class ErrorBound:
    """Error bound specification; relative bounds resolve against the data
    being coded (per chunk in the pipeline)."""

    kind: str
    value: float

    def __post_init__(self) -> None:
        if self.kind not in (ABSOLUTE, VALUE_RANGE_RELATIVE):
            raise ConfigError(f"unknown bound kind {self.kind!r}")
        if not math.isfinite(self.value) or self.value < 0:
            raise ConfigError(f"bound value must be finite and >= 0, got {self.value}")

    @staticmethod
    def absolute(value: float) -> "ErrorBound":
        return ErrorBound(ABSOLUTE, float(value))

    @staticmethod
    def relative(value: float) -> "ErrorBound":
        return ErrorBound(VALUE_RANGE_RELATIVE, float(value))


def resolve_bound(bound: ErrorBound, data: np.ndarray) -> float:
    """Resolve a bound to an absolute epsilon for the given data."""
    if bound.kind == ABSOLUTE:
        return bound.value
    arr = np.asarray(data)
    if arr.size == 0:
        raise ConfigError("a value-range-relative bound needs nonempty data")
    lo = float(arr.min())
    hi = float(arr.max())
    return bound.value * (hi - lo)


@dataclass(frozen=True)
class CodecId:
    """Identifies one codec configuration: raw, deflate(level), or
    pq(bound, dims_mode)."""

    tag: str
    level: int = 6
    bound: ErrorBound | None = None
    dims_mode: int = 3

    def __post_init__(self) -> None:
        if self.tag == "raw":
            pass
        elif self.tag == "deflate":
            if not 1 <= self.level <= 9:
                raise ConfigError(f"deflate level must be in [1, 9], got {self.level}")
        elif self.tag == "pq":
            if self.bound is None:
                raise ConfigError("pq codec needs an error bound")
            if self.bound.value <= 0:
                raise ConfigError(
                    "pq bound must be > 0; an absolute bound of 0 never resolves"
                )
            if self.dims_mode not in (1, 2, 3):
                raise ConfigError(f"pq dims_mode must be 1, 2, or 3, got {self.dims_mode}")
        else:
            raise ConfigError(f"unknown codec tag {self.tag!r}")

    @staticmethod
    def raw() -> "CodecId":
        return CodecId(tag="raw")

    @staticmethod
    def deflate(level: int = 6) -> "CodecId":
        return CodecId(tag="deflate", level=level)

    @staticmethod
    def pq(bound: ErrorBound, dims_mode: int = 3) -> "CodecId":
        return CodecId(tag="pq", bound=bound, dims_mode=dims_mode)

    @property
    def lossless(self) -> bool:
        return self.tag in ("raw", "deflate")


class PqScratch:
    """Reusable buffers so repeated encode/decode calls do not allocate."""

    def __init__(self) -> None:
        self.codes = np.empty(0, dtype=np.int32)
        self.recon = np.empty(0, dtype=np.float32)
        self.opos = np.empty(64, dtype=np.uint64)
        self.oval = np.empty(64, dtype=np.float32)

    def ensure(self, n: int) -> None:
        if self.codes.size < n:
            self.codes = np.empty(n, dtype=np.int32)
            self.recon = np.empty(n, dtype=np.float32)


def _as_f32(data: np.ndarray, shape: tuple[int, ...] | None) -> tuple[np.ndarray, tuple[int, ...]]:
    arr = np.ascontiguousarray(data, dtype=np.float32)
    if shape is None:
        shape = arr.shape
    n = 1
    for s in shape:
        n *= int(s)
    if arr.size != n:
        raise ConfigError(f"shape {shape} does not match {arr.size} elements")
    return arr.reshape(-1), tuple(int(s) for s in shape)


def _stack_view(flat: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """View the data as (stack, rows, cols): the last two extents are the
    panel plane, everything before is stacked as the slowest axis."""
    if len(shape) == 0:
        return flat.reshape(1, 1, flat.size)
    cols = shape[-1]
    rows = shape[-2] if len(shape) >= 2 else 1
    stack = flat.size // (rows * cols) if rows * cols else 0
    return flat.reshape(stack, rows, cols)


_PQ_KERNELS = {
    1: (_kernels.pq_encode_1d, _kernels.pq_decode_1d),
    2: (_kernels.pq_encode_2d, _kernels.pq_decode_2d),
    3: (_kernels.pq_encode_3d, _kernels.pq_decode_3d),
}


def _pq_run_encode(
    codec: CodecId, flat: np.ndarray, shape: tuple[int, ...], scratch: PqScratch
) -> tuple[bytes, float, float]:
    n = flat.size
    eps = resolve_bound(codec.bound, flat)
    if not math.isfinite(eps) or eps <= 0:
        raise ConfigError(
            f"resolved absolute bound is {eps}; the data has zero value range -- "
            "use an absolute bound instead of a relative one"
        )
    scratch.ensure(n)
    codes = scratch.codes[:n]
    encode_kern, _ = _PQ_KERNELS[codec.dims_mode]
    if codec.dims_mode == 1:
        data_v = flat
        recon_v = scratch.recon[:n]
    else:
        data_v = _stack_view(flat, shape)
        recon_v = _stack_view(scratch.recon[:n], shape)
    if n == 0:
        nout, maxerr = 0, 0.0
    else:
        nout, maxerr = encode_kern(data_v, eps, PQ_CAPACITY, codes, recon_v,
                                   scratch.opos, scratch.oval)
        if nout > scratch.opos.size:
            scratch.opos = np.empty(nout, dtype=np.uint64)
            scratch.oval = np.empty(nout, dtype=np.float32)
            nout, maxerr = encode_kern(data_v, eps, PQ_CAPACITY, codes, recon_v,
                                       scratch.opos, scratch.oval)
    symbols, lengths = build_table(codes)
    stream, _nbits = encode_symbols(codes, symbols, lengths)
    blob = bytearray()
    blob += struct.pack("<I", symbols.size)
    table = np.empty(symbols.size, dtype=[("sym", "<i4"), ("len", "u1")])
    table["sym"] = symbols
    table["len"] = lengths
    blob += table.tobytes()
    blob += stream
    outliers = np.empty(nout, dtype=[("pos", "<u8"), ("val", "<f4")])
    outliers["pos"] = scratch.opos[:nout]
    outliers["val"] = scratch.oval[:nout]
    blob += outliers.tobytes()
    header = _PQ_HEADER.pack(PQ_MAGIC, codec.dims_mode, eps, PQ_CAPACITY, n, nout)
    payload = header + _PQ_CRC.pack(zlib.crc32(header)) + deflate(bytes(blob), 6)
    return payload, maxerr, eps


def _pq_run_decode(
    payload: bytes, shape: tuple[int, ...], out: np.ndarray | None
) -> np.ndarray:
    hdr_len = _PQ_HEADER.size + _PQ_CRC.size
    if len(payload) < hdr_len:
        raise CorruptionError("pq stream shorter than its header")
    magic, dims_mode, eps, capacity, count, nout = _PQ_HEADER.unpack_from(payload, 0)
    (crc,) = _PQ_CRC.unpack_from(payload, _PQ_HEADER.size)
    if magic != PQ_MAGIC:
        raise CorruptionError("pq magic mismatch")
    if crc != zlib.crc32(payload[: _PQ_HEADER.size]):
        raise CorruptionError("pq header CRC mismatch")
    n = 1
    for s in shape:
        n *= int(s)
    if count != n:
        raise CorruptionError(f"pq stream holds {count} elements, expected {n}")
    if dims_mode not in (1, 2, 3):
        raise CorruptionError(f"pq dims_mode {dims_mode} is invalid")
    if nout > n:
        raise CorruptionError("pq outlier count exceeds element count")
    if not math.isfinite(eps) or eps <= 0:
        raise CorruptionError("pq bound in stream is invalid")
    max_table = min(n, 1 << 17)
    blob_cap = 4 + 5 * max_table + (32 * n + 7) // 8 + 12 * nout + 64
    blob = inflate(payload[hdr_len:], blob_cap)
    cur = 0
    if len(blob) < 4:
        raise CorruptionError("pq table header is truncated")
    (nsym,) = struct.unpack_from("<I", blob, cur)
    cur += 4
    if nsym > max_table:
        raise CorruptionError("pq table is larger than the element count allows")
    table_bytes = 5 * nsym
    stream_bytes = len(blob) - cur - table_bytes - 12 * nout
    if stream_bytes < 0:
        raise CorruptionError("pq payload length is inconsistent")
    table = np.frombuffer(blob, dtype=[("sym", "<i4"), ("len", "u1")],
                          count=nsym, offset=cur)
    cur += table_bytes
    codes, used_bits = decode_symbols(blob[cur : cur + stream_bytes], n,
                                      table["sym"].astype(np.int32),
                                      table["len"].copy())
    if (used_bits + 7) // 8 != stream_bytes:
        raise CorruptionError("pq code stream does not fill its payload")
    if n and np.any(np.abs(codes) >= capacity):
        raise CorruptionError("pq code exceeds the quantizer capacity")
    cur += stream_bytes
    outliers = np.frombuffer(blob, dtype=[("pos", "<u8"), ("val", "<f4")],
                             count=nout, offset=cur)
    opos = outliers["pos"].astype(np.uint64)
    oval = outliers["val"].astype(np.float32)
    if nout:
        if np.any(np.diff(opos.astype(np.int64)) <= 0):
            raise CorruptionError("pq outlier positions are not ascending")
        if opos[-1] >= n:
            raise CorruptionError("pq outlier position out of range")
        if not np.all(np.isfinite(oval)):
            raise CorruptionError("pq outlier value is not finite")
    if out is not None:
        if out.dtype != np.float32 or out.size != n or not out.flags.c_contiguous:
            raise ConfigError("output buffer must be contiguous float32 of the right size")
        recon = out.reshape(-1)
    else:
        recon = np.empty(n, dtype=np.float32)
    _, decode_kern = _PQ_KERNELS[dims_mode]
    if n:
        if dims_mode == 1:
            used = decode_kern(codes, eps, opos, oval, recon)
        else:
            used = decode_kern(codes, eps, opos, oval, _stack_view(recon, shape))
        if used != nout:
            raise CorruptionError("pq outliers were not all consumed")
    return recon.reshape(shape)


def encode(
    codec: CodecId,
    data: np.ndarray,
    shape: tuple[int, ...] | None = None,
    scratch: PqScratch | None = None,
) -> bytes:
    """Encode float32 data with the given codec; returns the payload bytes."""
    payload, _, _ = encode_with_stats(codec, data, shape, scratch)
    return payload


def encode_with_stats(
    codec: CodecId,
    data: np.ndarray,
    shape: tuple[int, ...] | None = None,
    scratch: PqScratch | None = None,
) -> tuple[bytes, float, float]:
    """Encode and also report (payload, max_abs_error, resolved_eps).

    For lossless codecs the error and eps are 0.  After a pq encode the
    reconstruction is available in ``scratch.recon`` when a scratch was
    supplied.
    """
    flat, shp = _as_f32(data, shape)
    if codec.tag == "raw":
        return flat.astype("<f4").tobytes(), 0.0, 0.0
    if codec.tag == "deflate":
        return deflate(flat.astype("<f4").tobytes(), codec.level), 0.0, 0.0
    if scratch is None:
        scratch = PqScratch()
    return _pq_run_encode(codec, flat, shp, scratch)


def decode(
    codec: CodecId,
    payload: bytes,
    shape: tuple[int, ...],
    out: np.ndarray | None = None,
) -> np.ndarray:
    """Decode a payload produced by ``encode`` with the same codec and shape."""
    shape = tuple(int(s) for s in shape)
    n = 1
    for s in shape:
        n *= s
    if codec.tag in ("raw", "deflate"):
        if codec.tag == "raw":
            raw = payload
        else:
            raw = inflate(payload, 4 * n)
        if len(raw) != 4 * n:
            raise CorruptionError(
                f"payload decodes to {len(raw)} bytes, expected {4 * n}"
            )
        values = np.frombuffer(raw, dtype="<f4")
        if out is not None:
            if out.dtype != np.float32 or out.size != n or not out.flags.c_contiguous:
                raise ConfigError("output buffer must be contiguous float32 of the right size")
            flat = out.reshape(-1)
            flat[:] = values
            return flat.reshape(shape)
        return values.reshape(shape).copy()
    return _pq_run_decode(payload, shape, out)
