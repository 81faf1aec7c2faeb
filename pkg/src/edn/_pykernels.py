"""Pure numpy/Python versions of the compiled kernels.

Same signatures and return types as ``edn._ckernels``. Results match the
compiled convolution to float32 rounding (summation order differs) and the
distance transform exactly.
"""
import numpy as np

UNSET = -1


def conv2d(x, w, bias, stride, pad, dilation, groups, out_h, out_w):
    n, c, h, wd = x.shape
    o, cig, k, _ = w.shape
    cog = o // groups
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    out = np.empty((n, o, out_h, out_w), dtype=np.float32)
    out[...] = bias[None, :, None, None]
    y_span = stride * (out_h - 1) + 1
    x_span = stride * (out_w - 1) + 1
    if groups == 1:
        for ky in range(k):
            y0 = ky * dilation
            for kx in range(k):
                x0 = kx * dilation
                tap = xp[:, :, y0:y0 + y_span:stride, x0:x0 + x_span:stride]
                # (n, cig, oh, ow) x (cog, cig) -> (n, cog, oh, ow)
                out += np.einsum("nihw,oi->nohw", tap, w[:, :, ky, kx], optimize=True)
        return out
    # grouped: keep the group axis inside one einsum per tap
    acc = out.reshape(n, groups, cog, out_h, out_w)
    wg = w.reshape(groups, cog, cig, k, k)
    for ky in range(k):
        y0 = ky * dilation
        for kx in range(k):
            x0 = kx * dilation
            tap = xp[:, :, y0:y0 + y_span:stride, x0:x0 + x_span:stride].reshape(n, groups, cig, out_h, out_w)
            acc += np.einsum("ngihw,goi->ngohw", tap, wg[:, :, :, ky, kx], optimize=True)
    return out


def _vertical_nearest(features):
    h, w = features.shape
    rows = np.arange(h)[:, None]
    up = np.where(features, rows, -1)
    up = np.maximum.accumulate(up, axis=0)
    down = np.where(features, rows, h + h + 1)
    down = np.minimum.accumulate(down[::-1], axis=0)[::-1]
    use_down = (down <= h) & ((up < 0) | (down - rows < rows - up))
    return np.where(use_down, down, up)


def _envelope(f):
    n = len(f)
    v = []
    zn = [0]
    zd = [1]
    for q in range(n):
        fq = f[q]
        if fq < 0:
            continue
        num = den = 0
        while v:
            p = v[-1]
            num = (fq + q * q) - (f[p] + p * p)
            den = 2 * (q - p)
            if len(v) > 1 and num * zd[-1] <= zn[-1] * den:
                v.pop()
                zn.pop()
                zd.pop()
                continue
            break
        if v:
            zn.append(num)
            zd.append(den)
        v.append(q)
    d = [UNSET] * n
    nearest = [UNSET] * n
    if not v:
        return d, nearest
    k = 0
    last = len(v) - 1
    for j in range(n):
        while k < last and zn[k + 1] < j * zd[k + 1]:
            k += 1
        p = v[k]
        d[j] = (j - p) * (j - p) + f[p]
        nearest[j] = p
    return d, nearest


def edt_sq(features):
    features = np.asarray(features, dtype=bool)
    h, w = features.shape
    col = _vertical_nearest(features)
    rows = np.arange(h)[:, None]
    g = np.where(col >= 0, (rows - col) ** 2, UNSET).astype(np.int64)
    dist = np.empty((h, w), dtype=np.int64)
    iy = np.empty((h, w), dtype=np.int64)
    ix = np.empty((h, w), dtype=np.int64)
    for y in range(h):
        d, nearest = _envelope(g[y].tolist())
        nearest = np.asarray(nearest, dtype=np.int64)
        dist[y] = d
        ix[y] = nearest
        iy[y] = np.where(nearest >= 0, col[y, np.maximum(nearest, 0)], UNSET)
    return dist, iy, ix
