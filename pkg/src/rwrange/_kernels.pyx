# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops: lattice range counting and Gaussian-kernel pair sums.

Every function here has a numpy twin in ``_fallback`` with the same signature
and the same result (bit-identical for the integer kernels).
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, floor, sqrt
from libc.stdlib cimport calloc, free
from libc.stdint cimport int32_t, int64_t, uint8_t, uint16_t, uint64_t

cnp.import_array()

ctypedef fused code_t:
    uint8_t
    uint16_t

cdef int64_t MAX_GRID_BITS = 8_000_000_000


cdef inline bint _test_and_set(uint64_t* bits, int64_t idx) noexcept nogil:
    cdef uint64_t mask = (<uint64_t>1) << (idx & 63)
    cdef uint64_t* word = bits + (idx >> 6)
    if word[0] & mask:
        return False
    word[0] |= mask
    return True


def range_checkpoints(const code_t[::1] codes, const int32_t[::1] cdx, const int32_t[::1] cdy,
                      const int64_t[::1] checkpoints, bint include_origin=False):
    """Distinct sites among S_a..S_n for each checkpoint n (a = 0 or 1).

    ``checkpoints`` must be nondecreasing and at most ``len(codes)``.
    """
    cdef Py_ssize_t ncp = checkpoints.shape[0]
    out = np.zeros(ncp, dtype=np.int64)
    if ncp == 0:
        return out
    cdef int64_t[::1] res = out
    cdef int64_t n = checkpoints[ncp - 1]
    if n > codes.shape[0]:
        raise ValueError("checkpoint beyond path length")
    cdef int64_t i, x = 0, y = 0, xmin = 0, xmax = 0, ymin = 0, ymax = 0
    with nogil:
        for i in range(n):
            x += cdx[codes[i]]
            y += cdy[codes[i]]
            if x < xmin: xmin = x
            if x > xmax: xmax = x
            if y < ymin: ymin = y
            if y > ymax: ymax = y
    cdef int64_t width = xmax - xmin + 1
    cdef int64_t height = ymax - ymin + 1
    if width * height > MAX_GRID_BITS:
        raise MemoryError("walk bounding box too large for the bit grid")
    cdef uint64_t* bits = <uint64_t*> calloc((width * height) // 64 + 1, sizeof(uint64_t))
    if bits == NULL:
        raise MemoryError()
    cdef int64_t count = 0
    cdef Py_ssize_t c = 0
    try:
        with nogil:
            x = -xmin
            y = -ymin
            if include_origin:
                _test_and_set(bits, y * width + x)
                count = 1
            while c < ncp and checkpoints[c] == 0:
                res[c] = count
                c += 1
            for i in range(n):
                x += cdx[codes[i]]
                y += cdy[codes[i]]
                if _test_and_set(bits, y * width + x):
                    count += 1
                while c < ncp and checkpoints[c] == i + 1:
                    res[c] = count
                    c += 1
    finally:
        free(bits)
    return out


def range_many(const code_t[::1] codes, const int32_t[::1] cdx, const int32_t[::1] cdy,
               const int64_t[::1] starts, const int64_t[::1] lengths, bint include_origin=False):
    """Range of many independent paths packed into one code array.

    Path r uses ``codes[starts[r]:starts[r] + lengths[r]]`` and reports the
    number of distinct sites among S_a..S_len (a = 0 or 1).
    """
    cdef Py_ssize_t nr = starts.shape[0]
    out = np.zeros(nr, dtype=np.int64)
    cdef int64_t[::1] res = out
    cdef Py_ssize_t r
    cdef int64_t i, s, n, x, y, xmin, xmax, ymin, ymax, width, height, count
    cdef uint64_t* bits
    for r in range(nr):
        s = starts[r]
        n = lengths[r]
        if s < 0 or s + n > codes.shape[0]:
            raise ValueError("path slice out of bounds")
        x = 0; y = 0; xmin = 0; xmax = 0; ymin = 0; ymax = 0
        for i in range(n):
            x += cdx[codes[s + i]]
            y += cdy[codes[s + i]]
            if x < xmin: xmin = x
            if x > xmax: xmax = x
            if y < ymin: ymin = y
            if y > ymax: ymax = y
        width = xmax - xmin + 1
        height = ymax - ymin + 1
        bits = <uint64_t*> calloc((width * height) // 64 + 1, sizeof(uint64_t))
        if bits == NULL:
            raise MemoryError()
        x = -xmin
        y = -ymin
        count = 0
        if include_origin:
            _test_and_set(bits, y * width + x)
            count = 1
        for i in range(n):
            x += cdx[codes[s + i]]
            y += cdy[codes[s + i]]
            if _test_and_set(bits, y * width + x):
                count += 1
        free(bits)
        res[r] = count
    return out


def alpha_dense(const double[:, ::1] W, const double[::1] inv2eps, const double[::1] norm,
                const double[:, ::1] lagw, int k, const int64_t[::1] checkpoints):
    """Ordered-simplex Gaussian-kernel sums by the O(k N^2) recursion.

    F_1 = 1, F_j(i) = sum_{i' <= i} F_{j-1}(i') w[i - i'] p(W_i - W_i').
    Returns ``out[level, j - 2, c] = sum_{i < checkpoints[c]} F_j(i)`` for
    j = 2..k; the caller multiplies by h^j.
    """
    cdef Py_ssize_t n = W.shape[0], nl = inv2eps.shape[0], ncp = checkpoints.shape[0]
    if k < 2:
        raise ValueError("k must be >= 2")
    F_arr = np.zeros((nl, k + 1, n), dtype=np.float64)
    cdef double[:, :, ::1] F = F_arr
    cdef Py_ssize_t i, ip, l, j
    cdef double dx, dy, d2, kv
    with nogil:
        for l in range(nl):
            for i in range(n):
                F[l, 1, i] = 1.0
        for i in range(n):
            for ip in range(i + 1):
                dx = W[i, 0] - W[ip, 0]
                dy = W[i, 1] - W[ip, 1]
                d2 = dx * dx + dy * dy
                for l in range(nl):
                    kv = lagw[l, i - ip] * norm[l] * exp(-d2 * inv2eps[l])
                    for j in range(2, k + 1):
                        F[l, j, i] += F[l, j - 1, ip] * kv
    return _checkpoint_sums(F_arr, k, checkpoints)


def _checkpoint_sums(F_arr, int k, const int64_t[::1] checkpoints):
    cs = np.concatenate([np.zeros(F_arr.shape[:2] + (1,)), np.cumsum(F_arr, axis=2)], axis=2)
    idx = np.asarray(checkpoints)
    return np.ascontiguousarray(cs[:, 2:k + 1, :][:, :, idx])


def alpha_binned(const double[:, ::1] W, const double[::1] inv2eps, const double[::1] norm,
                 const double[:, ::1] lagw, int k, const int64_t[::1] checkpoints,
                 double cutoff, double ox=0.0, double oy=0.0, bint halving=False):
    """Same sums as :func:`alpha_dense`, restricted to pairs within ``cutoff``.

    Points are bucketed into square cells of side ``cutoff``; only the 3x3
    block of cells around W_i - (ox, oy) is scanned. The offset shifts the
    kernel to p(W_i - W_i' - o). With ``halving`` the caller guarantees
    inv2eps[l] = 2 inv2eps[l - 1], and each level's exponential is the square
    of the previous one.
    """
    cdef Py_ssize_t n = W.shape[0], nl = inv2eps.shape[0]
    if k < 2:
        raise ValueError("k must be >= 2")
    if cutoff <= 0:
        raise ValueError("cutoff must be positive")
    Wn = np.asarray(W)
    xmin = float(Wn[:, 0].min()); ymin = float(Wn[:, 1].min())
    cdef Py_ssize_t ncx = int((Wn[:, 0].max() - xmin) / cutoff) + 1
    cdef Py_ssize_t ncy = int((Wn[:, 1].max() - ymin) / cutoff) + 1
    if ncx * ncy > 50_000_000:
        raise MemoryError("too many cells; raise the cutoff")
    cx_arr = np.floor((Wn[:, 0] - xmin) / cutoff).astype(np.int64)
    cy_arr = np.floor((Wn[:, 1] - ymin) / cutoff).astype(np.int64)
    cell_arr = cx_arr * ncy + cy_arr
    order_arr = np.argsort(cell_arr, kind="stable").astype(np.int64)
    cell_start_arr = np.searchsorted(cell_arr[order_arr], np.arange(ncx * ncy + 1)).astype(np.int64)
    # cell-sorted copies keep the inner scan on contiguous memory
    xs_arr = np.ascontiguousarray(Wn[order_arr, 0])
    ys_arr = np.ascontiguousarray(Wn[order_arr, 1])
    cdef int64_t[::1] order = order_arr
    cdef int64_t[::1] cell_start = cell_start_arr
    cdef double[::1] xs = xs_arr
    cdef double[::1] ys = ys_arr
    F_arr = np.zeros((nl, k + 1, n), dtype=np.float64)
    cdef double[:, :, ::1] F = F_arr
    ev_arr = np.zeros(nl, dtype=np.float64)
    cdef double[::1] ev = ev_arr
    cdef double cut2 = cutoff * cutoff, x0 = xmin, y0 = ymin
    cdef Py_ssize_t i, ip, l, j, a, b, c, q, cx, cy
    cdef double px, py, dx, dy, d2, kv
    with nogil:
        for l in range(nl):
            for i in range(n):
                F[l, 1, i] = 1.0
        for i in range(n):
            px = W[i, 0] - ox
            py = W[i, 1] - oy
            cx = <Py_ssize_t> floor((px - x0) / cutoff)
            cy = <Py_ssize_t> floor((py - y0) / cutoff)
            for a in range(cx - 1, cx + 2):
                if a < 0 or a >= ncx:
                    continue
                for b in range(cy - 1, cy + 2):
                    if b < 0 or b >= ncy:
                        continue
                    c = a * ncy + b
                    for q in range(cell_start[c], cell_start[c + 1]):
                        ip = order[q]
                        if ip >= i:
                            break
                        dx = px - xs[q]
                        dy = py - ys[q]
                        d2 = dx * dx + dy * dy
                        if d2 >= cut2:
                            continue
                        _level_exps(ev, d2, inv2eps, nl, halving)
                        for l in range(nl):
                            kv = lagw[l, i - ip] * norm[l] * ev[l]
                            for j in range(2, k + 1):
                                F[l, j, i] += F[l, j - 1, ip] * kv
            # diagonal last: F_{j-1}(i) must be complete before it feeds F_j(i)
            d2 = ox * ox + oy * oy
            if d2 < cut2:
                _level_exps(ev, d2, inv2eps, nl, halving)
                for l in range(nl):
                    kv = lagw[l, 0] * norm[l] * ev[l]
                    for j in range(2, k + 1):
                        F[l, j, i] += F[l, j - 1, i] * kv
    return _checkpoint_sums(F_arr, k, checkpoints)


cdef inline void _level_exps(double[::1] ev, double d2, const double[::1] inv2eps, Py_ssize_t nl,
                             bint halving) noexcept nogil:
    cdef Py_ssize_t l
    ev[0] = exp(-d2 * inv2eps[0])
    for l in range(1, nl):
        if halving:
            ev[l] = ev[l - 1] * ev[l - 1]
        else:
            ev[l] = exp(-d2 * inv2eps[l])
