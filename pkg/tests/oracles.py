"""Slow, obviously-correct reference implementations used only by the tests."""
import math

import numpy as np


def conv2d_loops(x, w, bias, stride=1, pad=0, dilation=1, groups=1):
    """Direct six-loop convolution in float64 with zero padding."""
    n, c, h, wd = x.shape
    o, cig, k, _ = w.shape
    cog = o // groups
    oh = (h + 2 * pad - dilation * (k - 1) - 1) // stride + 1
    ow = (wd + 2 * pad - dilation * (k - 1) - 1) // stride + 1
    out = np.zeros((n, o, oh, ow))
    for b in range(n):
        for oc in range(o):
            g = oc // cog
            for y in range(oh):
                for xx in range(ow):
                    s = float(bias[oc]) if bias is not None else 0.0
                    for i in range(cig):
                        ci = g * cig + i
                        for ky in range(k):
                            iy = y * stride - pad + ky * dilation
                            if not 0 <= iy < h:
                                continue
                            for kx in range(k):
                                ix = xx * stride - pad + kx * dilation
                                if 0 <= ix < wd:
                                    s += float(w[oc, i, ky, kx]) * float(x[b, ci, iy, ix])
                    out[b, oc, y, xx] = s
    return out


def dilate_kernel(w, rate):
    """Insert rate-1 zero rows/columns between kernel taps."""
    o, i, k, _ = w.shape
    side = (k - 1) * rate + 1
    out = np.zeros((o, i, side, side), dtype=w.dtype)
    out[:, :, ::rate, ::rate] = w
    return out


def edt_sq_brute(features):
    """Squared distance of every pixel to the nearest True pixel; -1 if none."""
    f = np.asarray(features, dtype=bool)
    h, w = f.shape
    fy, fx = np.nonzero(f)
    if fy.size == 0:
        return np.full((h, w), -1, dtype=np.int64)
    yy, xx = np.mgrid[:h, :w]
    d = (yy.ravel()[:, None] - fy[None]) ** 2 + (xx.ravel()[:, None] - fx[None]) ** 2
    return d.min(axis=1).reshape(h, w).astype(np.int64)


def edt_brute(G):
    """Distance of each foreground pixel to the nearest background pixel."""
    G = np.asarray(G, dtype=bool)
    if G.all():
        return np.full(G.shape, np.inf)
    return np.sqrt(edt_sq_brute(~G).astype(np.float64))


# ------------------------------------------------------------------ losses

def bce_loop(P, G, eps=1e-7):
    total = 0.0
    for p, g in zip(np.ravel(P), np.ravel(G)):
        p = min(max(float(p), eps), 1 - eps)
        total += g * math.log(p) + (1 - g) * math.log(1 - p)
    return -total / np.size(P)


def dice_loop(P, G, eps=1.0):
    inter = sg = sp = 0.0
    for p, g in zip(np.ravel(P), np.ravel(G)):
        inter += float(p) * float(g)
        sg += float(g)
        sp += float(p)
    return 1 - (2 * inter + eps) / (sg + sp + eps)


# ----------------------------------------------------------------- metrics

def mae_loop(P, G):
    return sum(abs(float(p) - float(g)) for p, g in zip(np.ravel(P), np.ravel(G))) / np.size(P)


def f_beta_max_loop(P, G, beta2=0.3):
    best = 0.0
    for i in range(256):
        t = i / 255
        B = P >= t
        tp = int(np.sum(B & G))
        fp = int(np.sum(B & ~G))
        fn = int(np.sum(~B & G))
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        den = beta2 * prec + rec
        f = (1 + beta2) * prec * rec / den if den > 0 else 0.0
        best = max(best, f)
    return best


def e_measure_loop(P, G):
    """Per-threshold enhanced alignment using full matrices."""
    eps = np.finfo(np.float64).eps
    Gf = G.astype(np.float64)
    hw = G.size
    scores = []
    for i in range(256):
        FM = (P >= i / 255).astype(np.float64)
        if Gf.sum() == 0:
            enhanced = 1.0 - FM
        elif Gf.sum() == hw:
            enhanced = FM
        else:
            dg = Gf - Gf.mean()
            dp = FM - FM.mean()
            xi = 2 * dg * dp / (dg * dg + dp * dp + eps)
            enhanced = (xi + 1) ** 2 / 4
        scores.append(min(enhanced.sum() / (hw - 1 + eps), 1.0))
    return max(scores), sum(scores) / len(scores)


def _mean(vals):
    vals = list(vals)
    return sum(vals) / len(vals)


def _sample_var(vals, mean):
    vals = list(vals)
    if len(vals) < 2:
        return 0.0
    return sum((v - mean) ** 2 for v in vals) / (len(vals) - 1)


def s_measure_loop(P, G, alpha=0.5, lam=0.5, eps=1e-12):
    """Structure measure written out with Python loops over pixels."""
    h, w = G.shape
    pix = [(y, x) for y in range(h) for x in range(w)]
    mu = _mean(float(G[y, x]) for y, x in pix)
    if mu == 0:
        return 1 - _mean(float(P[y, x]) for y, x in pix)
    if mu == 1:
        return _mean(float(P[y, x]) for y, x in pix)

    def obj(vals):
        m = _mean(vals)
        sd = math.sqrt(_sample_var(vals, m))
        return 2 * m / (m * m + 1 + 2 * lam * sd + eps)

    fg = [float(P[y, x]) for y, x in pix if G[y, x]]
    bg = [1 - float(P[y, x]) for y, x in pix if not G[y, x]]
    s_obj = mu * obj(fg) + (1 - mu) * obj(bg)

    cnt = sy = sx = 0
    for y, x in pix:
        if G[y, x]:
            cnt += 1
            sy += y + 1
            sx += x + 1
    cy = math.floor(sy / cnt + 0.5)
    cx = math.floor(sx / cnt + 0.5)

    def ssim(cells):
        xs = [float(P[y, x]) for y, x in cells]
        ys = [float(G[y, x]) for y, x in cells]
        mx, my = _mean(xs), _mean(ys)
        n = len(cells)
        if n > 1:
            vx = sum((a - mx) ** 2 for a in xs) / (n - 1)
            vy = sum((b - my) ** 2 for b in ys) / (n - 1)
            cxy = sum((a - mx) * (b - my) for a, b in zip(xs, ys)) / (n - 1)
        else:
            vx = vy = cxy = 0.0
        if vx == 0 and vy == 0 and mx == my:
            return 1.0
        num = 4 * mx * my * cxy
        if num == 0:
            return 0.0
        return num / ((mx * mx + my * my) * (vx + vy) + eps)

    s_reg = 0.0
    for top in (True, False):
        for left in (True, False):
            cells = [(y, x) for y, x in pix if (y < cy) == top and (x < cx) == left]
            if cells:
                s_reg += len(cells) / (h * w) * ssim(cells)
    return min(max(alpha * s_obj + (1 - alpha) * s_reg, 0.0), 1.0)


def weighted_f_loop(P, G, nearest_fg):
    """Weighted F-measure with explicit loops; ``nearest_fg[y][x]`` gives the
    (row, col) of the foreground pixel whose error a background pixel copies."""
    h, w = G.shape
    eps = np.finfo(np.float64).eps
    E = [[abs(float(P[y, x]) - float(G[y, x])) for x in range(w)] for y in range(h)]
    Et = [[E[y][x] if G[y, x] else E[nearest_fg[y][x][0]][nearest_fg[y][x][1]] for x in range(w)]
          for y in range(h)]
    r = 3
    kern = [[math.exp(-(dx * dx + dy * dy) / 50.0) for dx in range(-r, r + 1)] for dy in range(-r, r + 1)]
    ksum = sum(map(sum, kern))
    fg = [(y, x) for y in range(h) for x in range(w) if G[y, x]]
    tpw = fpw = ew_fg = 0.0
    for y in range(h):
        for x in range(w):
            ea = 0.0
            for dy in range(-r, r + 1):
                for dx in range(-r, r + 1):
                    yy = min(max(y + dy, 0), h - 1)
                    xx = min(max(x + dx, 0), w - 1)
                    ea += kern[dy + r][dx + r] / ksum * Et[yy][xx]
            if G[y, x]:
                e = min(E[y][x], ea)
                ew_fg += e
            else:
                d = min(math.hypot(y - fy, x - fx) for fy, fx in fg)
                fpw += E[y][x] * (2 - math.exp(math.log(0.5) / 5 * d))
    tpw = len(fg) - ew_fg
    R = 1 - ew_fg / len(fg)
    Pr = tpw / (eps + tpw + fpw)
    return 2 * R * Pr / (eps + R + Pr)
