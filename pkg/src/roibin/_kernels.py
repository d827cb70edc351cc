"""Compiled inner loops.

All kernels are sequential and release the GIL; parallelism is applied at
the call sites by slicing work across threads (see ``_parallel.run_sliced``).
Keeping the kernels free of internal threading makes outputs bit-identical
for every thread count.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

_JIT = {"nogil": True, "cache": True}


# ---------------------------------------------------------------------------
# ROI window copies.  Separate 4D (events, panels, rows, cols) and merged-3D
# (events, rows, cols) paths; the 3D path drops the panel index arithmetic.
# ---------------------------------------------------------------------------


@njit(**_JIT)
def extract_blocks_4d(values, anchors, k0, k1, window, fill, blocks):
    half = window // 2
    rows = values.shape[2]
    cols = values.shape[3]
    for k in range(k0, k1):
        e = anchors[k, 0]
        p = anchors[k, 1]
        r = anchors[k, 2]
        c = anchors[k, 3]
        for i in range(window):
            sr = r - half + i
            if sr < 0 or sr >= rows:
                for j in range(window):
                    blocks[k, i, j] = fill
            else:
                for j in range(window):
                    sc = c - half + j
                    if sc < 0 or sc >= cols:
                        blocks[k, i, j] = fill
                    else:
                        blocks[k, i, j] = values[e, p, sr, sc]


@njit(**_JIT)
def extract_blocks_3d(values, anchors, k0, k1, window, fill, blocks):
    half = window // 2
    rows = values.shape[1]
    cols = values.shape[2]
    for k in range(k0, k1):
        e = anchors[k, 0]
        r = anchors[k, 2]
        c = anchors[k, 3]
        for i in range(window):
            sr = r - half + i
            if sr < 0 or sr >= rows:
                for j in range(window):
                    blocks[k, i, j] = fill
            else:
                for j in range(window):
                    sc = c - half + j
                    if sc < 0 or sc >= cols:
                        blocks[k, i, j] = fill
                    else:
                        blocks[k, i, j] = values[e, sr, sc]


@njit(**_JIT)
def restore_blocks_4d(values, anchors, k0, k1, window, blocks):
    half = window // 2
    rows = values.shape[2]
    cols = values.shape[3]
    for k in range(k0, k1):
        e = anchors[k, 0]
        p = anchors[k, 1]
        r = anchors[k, 2]
        c = anchors[k, 3]
        for i in range(window):
            sr = r - half + i
            if sr < 0 or sr >= rows:
                continue
            for j in range(window):
                sc = c - half + j
                if 0 <= sc < cols:
                    values[e, p, sr, sc] = blocks[k, i, j]


@njit(**_JIT)
def restore_blocks_3d(values, anchors, k0, k1, window, blocks):
    half = window // 2
    rows = values.shape[1]
    cols = values.shape[2]
    for k in range(k0, k1):
        e = anchors[k, 0]
        r = anchors[k, 2]
        c = anchors[k, 3]
        for i in range(window):
            sr = r - half + i
            if sr < 0 or sr >= rows:
                continue
            for j in range(window):
                sc = c - half + j
                if 0 <= sc < cols:
                    values[e, sr, sc] = blocks[k, i, j]


# ---------------------------------------------------------------------------
# Binning.  src is a stack of (rows x cols) planes; each output pixel is the
# mean of its bin window, accumulated in float64 in fixed row-major order so
# results do not depend on threading.
# ---------------------------------------------------------------------------


@njit(**_JIT)
def bin_planes(src, dst, n0, n1, fr, fc):
    rows = src.shape[1]
    cols = src.shape[2]
    brows = dst.shape[1]
    bcols = dst.shape[2]
    for n in range(n0, n1):
        for br in range(brows):
            r0 = br * fr
            r1 = min(r0 + fr, rows)
            for bc in range(bcols):
                c0 = bc * fc
                c1 = min(c0 + fc, cols)
                acc = 0.0
                for r in range(r0, r1):
                    for c in range(c0, c1):
                        acc += src[n, r, c]
                dst[n, br, bc] = np.float32(acc / ((r1 - r0) * (c1 - c0)))


@njit(**_JIT)
def debin_planes(src, dst, n0, n1, fr, fc):
    rows = dst.shape[1]
    cols = dst.shape[2]
    for n in range(n0, n1):
        for r in range(rows):
            br = r // fr
            for c in range(cols):
                dst[n, r, c] = src[n, br, c // fc]


# ---------------------------------------------------------------------------
# Predictor-quantizer recurrence.  Predictions use already-reconstructed
# neighbors (float32 state widened to float64 for the arithmetic), the code
# is round-half-away-from-zero of residual / (2*eps), and any element whose
# code exceeds the quantizer capacity or whose reconstruction misses the
# bound is escaped verbatim as an outlier.  Outlier positions get a
# placeholder code 0 so the code stream always holds one code per element.
#
# Encoders return (n_outliers, max_abs_error); if n_outliers exceeds the
# capacity of the supplied outlier arrays the caller re-runs with larger
# buffers (codes/recon are already correct, only the overflowed positions
# were dropped).
# ---------------------------------------------------------------------------


@njit(inline="always")
def _round_half_away(d):
    if d >= 0.0:
        return math.floor(d + 0.5)
    return math.ceil(d - 0.5)


@njit(inline="always")
def _quantize(x, pred, eps, cap):
    """Returns (code, recon, is_outlier) for one element."""
    d = (x - pred) / (2.0 * eps)
    q = _round_half_away(d)
    if not (-cap < q < cap) or d != d:
        return 0, np.float32(0.0), True
    r = np.float32(pred + 2.0 * eps * q)
    if abs(x - np.float64(r)) > eps:
        return 0, np.float32(0.0), True
    return int(q), r, False


@njit(**_JIT)
def pq_encode_1d(data, eps, cap, codes, recon, opos, oval):
    n = data.shape[0]
    ocap = opos.shape[0]
    nout = 0
    maxerr = 0.0
    for i in range(n):
        pred = np.float64(recon[i - 1]) if i > 0 else 0.0
        x = np.float64(data[i])
        q, r, is_out = _quantize(x, pred, eps, cap)
        if is_out:
            if nout < ocap:
                opos[nout] = i
                oval[nout] = data[i]
            nout += 1
            codes[i] = 0
            recon[i] = data[i]
        else:
            codes[i] = q
            recon[i] = r
            e = abs(x - np.float64(r))
            if e > maxerr:
                maxerr = e
    return nout, maxerr


@njit(**_JIT)
def pq_decode_1d(codes, eps, opos, oval, recon):
    n = codes.shape[0]
    no = opos.shape[0]
    oi = 0
    for i in range(n):
        if oi < no and opos[oi] == i:
            recon[i] = oval[oi]
            oi += 1
        else:
            pred = np.float64(recon[i - 1]) if i > 0 else 0.0
            recon[i] = np.float32(pred + 2.0 * eps * codes[i])
    return oi


@njit(**_JIT)
def pq_encode_2d(data, eps, cap, codes, recon, opos, oval):
    planes = data.shape[0]
    rows = data.shape[1]
    cols = data.shape[2]
    ocap = opos.shape[0]
    nout = 0
    maxerr = 0.0
    idx = 0
    for p in range(planes):
        for r in range(rows):
            for c in range(cols):
                a = np.float64(recon[p, r, c - 1]) if c > 0 else 0.0
                b = np.float64(recon[p, r - 1, c]) if r > 0 else 0.0
                ab = np.float64(recon[p, r - 1, c - 1]) if (r > 0 and c > 0) else 0.0
                pred = a + b - ab
                x = np.float64(data[p, r, c])
                q, rv, is_out = _quantize(x, pred, eps, cap)
                if is_out:
                    if nout < ocap:
                        opos[nout] = idx
                        oval[nout] = data[p, r, c]
                    nout += 1
                    codes[idx] = 0
                    recon[p, r, c] = data[p, r, c]
                else:
                    codes[idx] = q
                    recon[p, r, c] = rv
                    e = abs(x - np.float64(rv))
                    if e > maxerr:
                        maxerr = e
                idx += 1
    return nout, maxerr


@njit(**_JIT)
def pq_decode_2d(codes, eps, opos, oval, recon):
    planes = recon.shape[0]
    rows = recon.shape[1]
    cols = recon.shape[2]
    no = opos.shape[0]
    oi = 0
    idx = 0
    for p in range(planes):
        for r in range(rows):
            for c in range(cols):
                if oi < no and opos[oi] == idx:
                    recon[p, r, c] = oval[oi]
                    oi += 1
                else:
                    a = np.float64(recon[p, r, c - 1]) if c > 0 else 0.0
                    b = np.float64(recon[p, r - 1, c]) if r > 0 else 0.0
                    ab = (
                        np.float64(recon[p, r - 1, c - 1])
                        if (r > 0 and c > 0)
                        else 0.0
                    )
                    recon[p, r, c] = np.float32(a + b - ab + 2.0 * eps * codes[idx])
                idx += 1
    return oi


@njit(inline="always")
def _lorenzo3(recon, z, r, c):
    pred = 0.0
    if z > 0:
        pred += np.float64(recon[z - 1, r, c])
    if r > 0:
        pred += np.float64(recon[z, r - 1, c])
    if c > 0:
        pred += np.float64(recon[z, r, c - 1])
    if z > 0 and r > 0:
        pred -= np.float64(recon[z - 1, r - 1, c])
    if z > 0 and c > 0:
        pred -= np.float64(recon[z - 1, r, c - 1])
    if r > 0 and c > 0:
        pred -= np.float64(recon[z, r - 1, c - 1])
    if z > 0 and r > 0 and c > 0:
        pred += np.float64(recon[z - 1, r - 1, c - 1])
    return pred


@njit(**_JIT)
def pq_encode_3d(data, eps, cap, codes, recon, opos, oval):
    nz = data.shape[0]
    rows = data.shape[1]
    cols = data.shape[2]
    ocap = opos.shape[0]
    nout = 0
    maxerr = 0.0
    idx = 0
    for z in range(nz):
        for r in range(rows):
            for c in range(cols):
                pred = _lorenzo3(recon, z, r, c)
                x = np.float64(data[z, r, c])
                q, rv, is_out = _quantize(x, pred, eps, cap)
                if is_out:
                    if nout < ocap:
                        opos[nout] = idx
                        oval[nout] = data[z, r, c]
                    nout += 1
                    codes[idx] = 0
                    recon[z, r, c] = data[z, r, c]
                else:
                    codes[idx] = q
                    recon[z, r, c] = rv
                    e = abs(x - np.float64(rv))
                    if e > maxerr:
                        maxerr = e
                idx += 1
    return nout, maxerr


@njit(**_JIT)
def pq_decode_3d(codes, eps, opos, oval, recon):
    nz = recon.shape[0]
    rows = recon.shape[1]
    cols = recon.shape[2]
    no = opos.shape[0]
    oi = 0
    idx = 0
    for z in range(nz):
        for r in range(rows):
            for c in range(cols):
                if oi < no and opos[oi] == idx:
                    recon[z, r, c] = oval[oi]
                    oi += 1
                else:
                    pred = _lorenzo3(recon, z, r, c)
                    recon[z, r, c] = np.float32(pred + 2.0 * eps * codes[idx])
                idx += 1
    return oi


# ---------------------------------------------------------------------------
# Huffman bit packing.  Codewords are MSB-first; lengths are at most 32 bits
# (enforced by the table builder), so a 64-bit accumulator never overflows.
# ---------------------------------------------------------------------------


@njit(**_JIT)
def pack_bits(codes, smin, cw_lut, len_lut, out):
    acc = np.uint64(0)
    nacc = 0
    pos = 0
    nbits = 0
    for i in range(codes.shape[0]):
        s = codes[i] - smin
        length = len_lut[s]
        acc = (acc << np.uint64(length)) | np.uint64(cw_lut[s])
        nacc += length
        nbits += length
        while nacc >= 8:
            nacc -= 8
            out[pos] = np.uint8((acc >> np.uint64(nacc)) & np.uint64(0xFF))
            pos += 1
    if nacc > 0:
        out[pos] = np.uint8((acc << np.uint64(8 - nacc)) & np.uint64(0xFF))
        pos += 1
    return nbits


@njit(**_JIT)
def unpack_bits(data, nbits, n, first_code, counts, base, syms, out):
    """Canonical Huffman decode of exactly ``n`` symbols.

    Returns the number of bits consumed, or -1 if the stream is invalid.
    """
    code = 0
    length = 0
    bitpos = 0
    k = 0
    while k < n:
        if bitpos >= nbits:
            return -1
        byte = data[bitpos >> 3]
        bit = (byte >> (7 - (bitpos & 7))) & 1
        bitpos += 1
        code = (code << 1) | bit
        length += 1
        if length > 32:
            return -1
        if counts[length] > 0:
            rel = code - first_code[length]
            if 0 <= rel < counts[length]:
                out[k] = syms[base[length] + rel]
                k += 1
                code = 0
                length = 0
    if length != 0:
        return -1
    return bitpos
