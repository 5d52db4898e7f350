"""Hot inner loops: range coding, nearest-codeword search, LDS cell ordering.

Every kernel exists as a plain loop function compiled with numba when
``USE_NUMBA`` is on. Nearest-codeword search and LDS ordering also have a
vectorized numpy path which is used when numba is off; it performs the same
floating point operations in the same order, so results are bit-identical.
"""

import numpy as np

from ._jit import USE_NUMBA, maybe_njit

PROB_BITS = 16
PROB_TOTAL = 1 << PROB_BITS
RC_TOP = 1 << 24
MASK32 = 0xFFFFFFFF

# plastic constant, root of x**3 = x + 1
PLASTIC = 1.324717957244746


# ---------------------------------------------------------------------------
# range coder
#
# Encoder state is an int64[4]: low (33 bits incl. carry), range, cache byte
# (-1 before the first byte), pending 0xFF count. Decoder state is int64[3]:
# code, range, read position.
# ---------------------------------------------------------------------------


@maybe_njit
def _shift_low(state, out, n_out):
    low = state[0]
    if low < 0xFF000000 or low > MASK32:
        carry = low >> 32
        if state[2] >= 0:
            out[n_out] = (state[2] + carry) & 0xFF
            n_out += 1
        while state[3] > 0:
            out[n_out] = (0xFF + carry) & 0xFF
            n_out += 1
            state[3] -= 1
        state[2] = (low >> 24) & 0xFF
    else:
        state[3] += 1
    state[0] = (low << 8) & MASK32
    return n_out


@maybe_njit
def rc_encode_block(state, cum, syms, out):
    """Encode ``syms[i]`` under cumulative frequency row ``cum[i]``.

    ``cum`` rows have V+1 entries, start at 0 and end at ``PROB_TOTAL``.
    ``out`` needs room for ``2 * len(syms) + 4`` bytes plus the pending
    0xFF count ``state[3]`` on entry. Returns the number of bytes written.
    """
    n_out = 0
    for i in range(syms.shape[0]):
        s = syms[i]
        r = state[1] >> PROB_BITS
        c0 = cum[i, s]
        state[0] += r * c0
        state[1] = r * (cum[i, s + 1] - c0)
        while state[1] < RC_TOP:
            n_out = _shift_low(state, out, n_out)
            state[1] <<= 8
    return n_out


@maybe_njit
def rc_finish(state, out):
    """Terminate the stream; ``out`` needs room for ``8 + state[3]`` bytes."""
    low = state[0]
    state[0] = (low + 0xFFFF) & ~np.int64(0xFFFF)
    n_out = 0
    for _ in range(3):
        n_out = _shift_low(state, out, n_out)
    return n_out


@maybe_njit
def _next_byte(data, state):
    pos = state[2]
    state[2] = pos + 1
    if pos < data.shape[0]:
        return np.int64(data[pos])
    return np.int64(0)


@maybe_njit
def rc_decoder_init(state, data):
    state[0] = 0
    state[1] = MASK32
    state[2] = 0
    for _ in range(4):
        state[0] = (state[0] << 8) | _next_byte(data, state)


@maybe_njit
def rc_decode_block(state, cum, data, syms):
    """Decode ``len(syms)`` symbols in place. Returns 0, or -1 on corrupt data."""
    V = cum.shape[1] - 1
    for i in range(syms.shape[0]):
        r = state[1] >> PROB_BITS
        val = state[0] // r
        if val >= PROB_TOTAL:
            return -1
        lo = 0
        hi = V
        # largest s with cum[i, s] <= val
        while hi - lo > 1:
            mid = (lo + hi) >> 1
            if cum[i, mid] <= val:
                lo = mid
            else:
                hi = mid
        syms[i] = lo
        c0 = cum[i, lo]
        state[0] -= r * c0
        state[1] = r * (cum[i, lo + 1] - c0)
        while state[1] < RC_TOP:
            state[0] = ((state[0] << 8) | _next_byte(data, state)) & MASK32
            state[1] <<= 8
    return 0


# ---------------------------------------------------------------------------
# nearest codeword
# ---------------------------------------------------------------------------


@maybe_njit
def _nearest_codeword_loops(x, cb):
    n, c = x.shape
    V = cb.shape[0]
    idx = np.empty(n, dtype=np.int64)
    best_d = np.empty(n, dtype=np.float64)
    for i in range(n):
        best = np.inf
        bi = 0
        for v in range(V):
            d = 0.0
            for j in range(c):
                diff = x[i, j] - cb[v, j]
                d += diff * diff
            if d < best:
                best = d
                bi = v
        idx[i] = bi
        best_d[i] = best
    return idx, best_d


def _nearest_codeword_numpy(x, cb):
    d = np.zeros((x.shape[0], cb.shape[0]))
    for j in range(x.shape[1]):
        diff = x[:, j, None] - cb[None, :, j]
        d += diff * diff
    idx = np.argmin(d, axis=1)
    return idx.astype(np.int64), d[np.arange(x.shape[0]), idx]


def nearest_codeword(x, cb):
    """Index of, and squared distance to, the nearest row of ``cb`` per row of ``x``.

    Distances accumulate over channels in index order; ties go to the
    smallest codeword index.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    cb = np.ascontiguousarray(cb, dtype=np.float64)
    if USE_NUMBA:
        return _nearest_codeword_loops(x, cb)
    return _nearest_codeword_numpy(x, cb)


# ---------------------------------------------------------------------------
# low-discrepancy cell ordering
# ---------------------------------------------------------------------------


@maybe_njit
def _lds_order_loops(h, w):
    n = h * w
    a1 = 1.0 / PLASTIC
    a2 = 1.0 / (PLASTIC * PLASTIC)
    claimed = np.zeros(n, dtype=np.bool_)
    order = np.empty(n, dtype=np.int64)
    for t in range(n):
        u1 = t * a1
        u1 -= np.floor(u1)
        u2 = t * a2
        u2 -= np.floor(u2)
        best = np.inf
        bi = -1
        for k in range(n):
            if claimed[k]:
                continue
            di = u1 - (k // w + 0.5) / h
            dj = u2 - (k % w + 0.5) / w
            d = di * di + dj * dj
            if d < best:
                best = d
                bi = k
        claimed[bi] = True
        order[t] = bi
    return order


def _lds_order_numpy(h, w):
    n = h * w
    a1 = 1.0 / PLASTIC
    a2 = 1.0 / (PLASTIC * PLASTIC)
    k = np.arange(n)
    ci = (k // w + 0.5) / h
    cj = (k % w + 0.5) / w
    claimed = np.zeros(n, dtype=bool)
    order = np.empty(n, dtype=np.int64)
    for t in range(n):
        u1 = t * a1
        u1 -= np.floor(u1)
        u2 = t * a2
        u2 -= np.floor(u2)
        di = u1 - ci
        dj = u2 - cj
        d = di * di + dj * dj
        d[claimed] = np.inf
        bi = int(np.argmin(d))
        claimed[bi] = True
        order[t] = bi
    return order


# below this many cells the numpy path beats the one-off compile
LDS_JIT_MIN_CELLS = 1024


def lds_order(h, w):
    """Raster indices of an h x w grid in R2-sequence claim order."""
    if USE_NUMBA and h * w > LDS_JIT_MIN_CELLS:
        return _lds_order_loops(h, w)
    return _lds_order_numpy(h, w)
