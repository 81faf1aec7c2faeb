# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops: direct grouped/dilated convolution (C micro-kernels in
_conv_kernels.h) and the exact squared Euclidean distance transform."""
import numpy as np
cimport numpy as cnp

cnp.import_array()

ctypedef cnp.float32_t f32
ctypedef cnp.int64_t i64

cdef i64 UNSET = -1


cdef extern from "_conv_kernels.h" nogil:
    int edn_conv2d_sample(const f32* x, const f32* w, const f32* bias, f32* out,
                           int C, int H, int W, int O, int cig, int K, int OH, int OW,
                           int stride, int pad, int dil, int groups)


def conv2d(const f32[:, :, :, ::1] x, const f32[:, :, :, ::1] w, const f32[::1] bias,
           int stride, int pad, int dilation, int groups, int out_h, int out_w):
    """Direct convolution. Each output element sums bias, then taps in (ci, ky, kx) order."""
    cdef int N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef int O = w.shape[0], cig = w.shape[1], K = w.shape[2]
    cdef int n, status = 0
    out_arr = np.empty((N, O, out_h, out_w), dtype=np.float32)
    cdef f32[:, :, :, ::1] out = out_arr
    with nogil:
        for n in range(N):
            status = edn_conv2d_sample(&x[n, 0, 0, 0], &w[0, 0, 0, 0], &bias[0], &out[n, 0, 0, 0],
                                       C, H, W, O, cig, K, out_h, out_w, stride, pad, dilation, groups)
            if status:
                break
    if status:
        raise MemoryError("conv2d scratch buffer allocation failed")
    return out_arr


cdef void _envelope(const i64* f, int n, i64* d, i64* nearest,
                    int* v, i64* zn, i64* zd) noexcept nogil:
    # Lower envelope of parabolas (q - t)^2 + f[q] over the finite entries of f.
    # Breakpoints are kept as exact fractions zn/zd so comparisons never round.
    cdef int k = -1, q, j
    cdef i64 num, den, p
    for q in range(n):
        if f[q] < 0:
            continue
        while k >= 0:
            p = v[k]
            num = (f[q] + <i64>q * q) - (f[p] + p * p)
            den = 2 * (q - p)
            if k > 0 and num * zd[k] <= zn[k] * den:
                k -= 1
                continue
            break
        k += 1
        v[k] = q
        if k > 0:
            zn[k] = num
            zd[k] = den
    if k < 0:
        for j in range(n):
            d[j] = UNSET
            nearest[j] = UNSET
        return
    q = 0
    for j in range(n):
        while q < k and zn[q + 1] < <i64>j * zd[q + 1]:
            q += 1
        p = v[q]
        d[j] = (j - p) * (j - p) + f[p]
        nearest[j] = p


def edt_sq(const cnp.uint8_t[:, ::1] features):
    """Squared distance to the nearest nonzero pixel plus its (row, col).

    Returns int64 arrays; -1 marks pixels with no feature pixel anywhere.
    """
    cdef int H = features.shape[0], W = features.shape[1]
    cdef int y, x, last
    col_arr = np.empty((H, W), dtype=np.int64)
    cdef i64[:, ::1] col = col_arr
    cdef i64[:, ::1] g = np.empty((H, W), dtype=np.int64)
    dist_arr = np.empty((H, W), dtype=np.int64)
    iy_arr = np.empty((H, W), dtype=np.int64)
    ix_arr = np.empty((H, W), dtype=np.int64)
    cdef i64[:, ::1] dist = dist_arr
    cdef i64[:, ::1] iy = iy_arr
    cdef i64[:, ::1] ix = ix_arr
    cdef i64[::1] f = np.empty(W, dtype=np.int64)
    cdef i64[::1] drow = np.empty(W, dtype=np.int64)
    cdef i64[::1] nrow = np.empty(W, dtype=np.int64)
    cdef int[::1] v = np.empty(W + 1, dtype=np.intc)
    cdef i64[::1] zn = np.empty(W + 2, dtype=np.int64)
    cdef i64[::1] zd = np.empty(W + 2, dtype=np.int64)

    with nogil:
        # vertical pass: nearest feature row in the same column, ties to the upper one
        for x in range(W):
            last = -1
            for y in range(H):
                if features[y, x]:
                    last = y
                col[y, x] = last
            last = -1
            for y in range(H - 1, -1, -1):
                if features[y, x]:
                    last = y
                if last >= 0 and (col[y, x] < 0 or last - y < y - col[y, x]):
                    col[y, x] = last
            for y in range(H):
                if col[y, x] < 0:
                    g[y, x] = UNSET
                else:
                    g[y, x] = (y - col[y, x]) * (y - col[y, x])
        for y in range(H):
            for x in range(W):
                f[x] = g[y, x]
            _envelope(&f[0], W, &drow[0], &nrow[0], &v[0], &zn[0], &zd[0])
            for x in range(W):
                dist[y, x] = drow[x]
                if nrow[x] < 0:
                    iy[y, x] = UNSET
                    ix[y, x] = UNSET
                else:
                    iy[y, x] = col[y, nrow[x]]
                    ix[y, x] = nrow[x]
    return dist_arr, iy_arr, ix_arr
