"""Canonical Huffman coding of quantization codes, plus raw-deflate helpers.

The Huffman stage assigns length-limited (<= 32 bit) canonical codes to the
distinct quantization symbols; the packed bit stream is then passed through
a deflate pass at the codec layer.  Everything here is deterministic: heap
ties are broken by symbol order, and canonical assignment sorts by
(length, symbol).
"""

from __future__ import annotations

import heapq
import zlib

import numpy as np

from ._kernels import pack_bits, unpack_bits
from .errors import CorruptionError

MAX_CODE_LEN = 32


def deflate(data: bytes, level: int) -> bytes:
    """RFC-1951 raw deflate stream (no zlib wrapper)."""
    c = zlib.compressobj(level, zlib.DEFLATED, -15)
    return c.compress(data) + c.flush()


def inflate(data: bytes, max_size: int | None = None) -> bytes:
    d = zlib.decompressobj(-15)
    try:
        if max_size is None:
            out = d.decompress(data)
        else:
            out = d.decompress(data, max_size)
            if d.unconsumed_tail:
                raise CorruptionError("deflate stream larger than expected")
        if not d.eof:
            raise CorruptionError("deflate stream is truncated")
        if d.unused_data:
            raise CorruptionError("trailing bytes after deflate stream")
    except zlib.error as exc:
        raise CorruptionError(f"deflate stream is corrupt: {exc}") from exc
    return out


def _code_lengths(freqs: np.ndarray) -> np.ndarray:
    """Huffman code lengths for positive frequencies, deterministic ties."""
    n = len(freqs)
    if n == 1:
        return np.array([1], dtype=np.uint8)
    while True:
        parent = np.full(2 * n - 1, -1, dtype=np.int64)
        heap = [(int(f), i) for i, f in enumerate(freqs)]
        heapq.heapify(heap)
        nxt = n
        while len(heap) > 1:
            f1, i1 = heapq.heappop(heap)
            f2, i2 = heapq.heappop(heap)
            parent[i1] = nxt
            parent[i2] = nxt
            heapq.heappush(heap, (f1 + f2, nxt))
            nxt += 1
        lengths = np.zeros(n, dtype=np.uint8)
        depth = np.zeros(2 * n - 1, dtype=np.int64)
        for i in range(nxt - 2, -1, -1):
            depth[i] = depth[parent[i]] + 1
        lengths[:] = depth[:n]
        if lengths.max() <= MAX_CODE_LEN:
            return lengths
        # Flatten the distribution and retry; converges to a balanced tree.
        freqs = (freqs + 1) // 2


def build_table(codes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Returns (symbols, lengths) sorted by (length, symbol), canonical order."""
    symbols, counts = np.unique(codes, return_counts=True)
    if symbols.size == 0:
        return symbols.astype(np.int32), np.zeros(0, dtype=np.uint8)
    lengths = _code_lengths(counts.astype(np.int64))
    order = np.lexsort((symbols, lengths))
    return symbols[order].astype(np.int32), lengths[order]


def _canonical_codewords(lengths: np.ndarray) -> np.ndarray:
    """Codeword values for table entries already sorted by (length, symbol)."""
    cw = np.zeros(len(lengths), dtype=np.uint64)
    code = 0
    prev_len = int(lengths[0]) if len(lengths) else 0
    for i, ln in enumerate(lengths):
        code <<= int(ln) - prev_len
        cw[i] = code
        code += 1
        prev_len = int(ln)
    return cw


def encode_symbols(codes: np.ndarray, symbols: np.ndarray, lengths: np.ndarray) -> tuple[bytes, int]:
    """Pack ``codes`` with the canonical code of each symbol; returns (bytes, nbits)."""
    if codes.size == 0:
        return b"", 0
    cw = _canonical_codewords(lengths)
    smin = int(symbols.min())
    span = int(symbols.max()) - smin + 1
    cw_lut = np.zeros(span, dtype=np.uint64)
    len_lut = np.zeros(span, dtype=np.uint8)
    cw_lut[symbols - smin] = cw
    len_lut[symbols - smin] = lengths
    worst = (int(lengths.max()) * codes.size + 7) // 8 + 8
    out = np.empty(worst, dtype=np.uint8)
    nbits = pack_bits(codes, smin, cw_lut, len_lut, out)
    return out[: (nbits + 7) // 8].tobytes(), int(nbits)


def decode_symbols(
    payload: bytes, n: int, symbols: np.ndarray, lengths: np.ndarray
) -> tuple[np.ndarray, int]:
    """Decode exactly ``n`` symbols; returns (codes, bits consumed).

    Raises CorruptionError on any structural inconsistency.  The caller is
    responsible for checking that the consumed bits fill the payload up to
    byte padding.
    """
    out = np.empty(n, dtype=np.int32)
    if n == 0:
        return out, 0
    if symbols.size == 0:
        raise CorruptionError("empty Huffman table for a nonempty code stream")
    if np.any(lengths < 1) or np.any(lengths > MAX_CODE_LEN):
        raise CorruptionError("Huffman code length out of range")
    if np.any(np.diff(lengths.astype(np.int64)) < 0):
        raise CorruptionError("Huffman table is not in canonical order")
    cw = _canonical_codewords(lengths)
    if int(cw[-1]) >= 1 << int(lengths[-1]):
        raise CorruptionError("Huffman table is over-subscribed")
    first_code = np.zeros(MAX_CODE_LEN + 1, dtype=np.int64)
    counts = np.zeros(MAX_CODE_LEN + 1, dtype=np.int64)
    base = np.zeros(MAX_CODE_LEN + 1, dtype=np.int64)
    for i, ln in enumerate(lengths):
        if counts[ln] == 0:
            first_code[ln] = int(cw[i])
            base[ln] = i
        counts[ln] += 1
    data = np.frombuffer(payload, dtype=np.uint8)
    used = unpack_bits(data, data.size * 8, n, first_code, counts, base,
                       symbols.astype(np.int32), out)
    if used < 0:
        raise CorruptionError("code stream does not decode to the element count")
    return out, int(used)
