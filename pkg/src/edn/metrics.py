"""Saliency evaluation: MAE, max F-beta, weighted F, S-measure, E-measure and
the center/boundary/other region analysis.

Predictions are maps in [0, 1]; ground truth is a boolean mask. Everything is
computed in float64. Threshold sweeps use t = i/255 for i = 0..255 with
binarization ``P >= t``.
"""
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .distance import exact_edt, nearest_feature
from .errors import DimensionError, DomainError, UndefinedMetricError

THRESHOLDS = np.arange(256, dtype=np.float64) / 255.0
BETA2 = 0.3
MACHINE_EPS = float(np.finfo(np.float64).eps)
S_EPS = 1e-12
BOUNDARY_PX = 5.0

BACKGROUND, BOUNDARY, CENTER, OTHER = 0, 1, 2, 3
REGIONS = {"center": CENTER, "boundary": BOUNDARY, "other": OTHER}
METRIC_FIELDS = ("mae", "f_max", "f_weighted", "s_measure", "e_max", "e_mean")


def as_pair(P, G):
    P = np.asarray(P, dtype=np.float64)
    G = np.asarray(G)
    if P.ndim != 2 or P.shape != G.shape:
        raise DimensionError(f"prediction {P.shape} and ground truth {G.shape} must be equal 2-D shapes")
    if P.size and (P.min() < 0.0 or P.max() > 1.0):
        raise DomainError("prediction values must lie in [0, 1]")
    return P, G.astype(bool)


def mae(P, G):
    P, G = as_pair(P, G)
    return float(np.mean(np.abs(P - G)))


def _threshold_counts(P, G):
    """TP and FP for every threshold, ordered like THRESHOLDS."""
    # passes[k] = number of thresholds t with t <= P[k]
    passes = np.searchsorted(THRESHOLDS, P.ravel(), side="right")
    g = G.ravel()
    fg_hist = np.bincount(passes[g], minlength=257)
    bg_hist = np.bincount(passes[~g], minlength=257)
    # a pixel with `passes` = m is above thresholds 0..m-1
    tp = np.cumsum(fg_hist[::-1])[::-1][1:]
    fp = np.cumsum(bg_hist[::-1])[::-1][1:]
    return tp.astype(np.float64), fp.astype(np.float64)


def f_beta_curve(P, G, beta2=BETA2):
    P, G = as_pair(P, G)
    n_fg = G.sum()
    if n_fg == 0:
        raise UndefinedMetricError("F-measure is undefined for an empty ground-truth mask")
    tp, fp = _threshold_counts(P, G)
    with np.errstate(divide="ignore", invalid="ignore"):
        prec = np.where(tp + fp > 0, tp / (tp + fp), 0.0)
        rec = tp / n_fg
        den = beta2 * prec + rec
        return np.where(den > 0, (1 + beta2) * prec * rec / den, 0.0)


def f_beta_max(P, G, beta2=BETA2):
    return float(f_beta_curve(P, G, beta2).max())


def _gaussian_kernel(side=7, sigma=5.0):
    r = (side - 1) / 2
    y, x = np.mgrid[-r:r + 1, -r:r + 1]
    k = np.exp(-(x * x + y * y) / (2 * sigma * sigma))
    k[k < MACHINE_EPS * k.max()] = 0
    return k / k.sum()


_GAUSS = _gaussian_kernel()


def f_weighted(P, G, beta2=1.0, padding="nearest"):
    """Weighted F-measure. ``padding`` is the border mode of the Gaussian
    smoothing; "constant" (zero) reproduces the MATLAB reference exactly but
    lets errors near the image border leak into the score."""
    P, G = as_pair(P, G)
    if not G.any():
        raise UndefinedMetricError("weighted F-measure is undefined for an empty ground-truth mask")
    dist_sq, iy, ix = nearest_feature(G)
    dist = np.sqrt(dist_sq.astype(np.float64))
    E = np.abs(P - G)
    # background errors are replaced by the error at the nearest foreground pixel
    Et = E[iy, ix]
    EA = ndimage.correlate(Et, _GAUSS, mode=padding, cval=0.0)
    min_e = np.where(G & (EA < E), EA, E)
    B = np.where(G, 1.0, 2.0 - np.exp(math.log(0.5) / 5.0 * dist))
    Ew = min_e * B
    tpw = G.sum() - Ew[G].sum()
    fpw = Ew[~G].sum()
    R = 1.0 - Ew[G].mean()
    Pr = tpw / (MACHINE_EPS + tpw + fpw)
    return float((1 + beta2) * R * Pr / (MACHINE_EPS + R + beta2 * Pr))


# ---------------------------------------------------------------- S-measure

def _object_score(x, lam=0.5):
    mean = x.mean()
    std = x.std(ddof=1) if x.size > 1 else 0.0
    return 2.0 * mean / (mean * mean + 1.0 + 2.0 * lam * std + S_EPS)


def s_object(P, G, lam=0.5):
    mu = G.mean()
    return mu * _object_score(P[G], lam) + (1 - mu) * _object_score(1.0 - P[~G], lam)


def _round_half_away(v):
    return int(math.floor(v + 0.5)) if v >= 0 else -int(math.floor(-v + 0.5))


def centroid_split(G):
    """Cut positions (rows above, columns left of the cut) through the
    foreground centroid, with 1-based centroid coordinates rounded half away
    from zero."""
    h, w = G.shape
    area = G.sum()
    if area == 0:
        return _round_half_away(h / 2), _round_half_away(w / 2)
    rows, cols = np.nonzero(G)
    return _round_half_away(rows.mean() + 1), _round_half_away(cols.mean() + 1)


def ssim_block(x, y):
    n = x.size
    mx, my = x.mean(), y.mean()
    if n > 1:
        vx = ((x - mx) ** 2).sum() / (n - 1)
        vy = ((y - my) ** 2).sum() / (n - 1)
        cxy = ((x - mx) * (y - my)).sum() / (n - 1)
    else:
        vx = vy = cxy = 0.0
    if vx == 0 and vy == 0 and mx == my:
        return 1.0
    num = 4.0 * mx * my * cxy
    if num == 0:
        return 0.0
    return num / ((mx * mx + my * my) * (vx + vy) + S_EPS)


def s_region(P, G):
    h, w = G.shape
    Gf = G.astype(np.float64)
    cy, cx = centroid_split(G)
    score = 0.0
    for rs in (slice(0, cy), slice(cy, h)):
        for cs in (slice(0, cx), slice(cx, w)):
            p, g = P[rs, cs], Gf[rs, cs]
            if p.size:
                score += p.size / (h * w) * ssim_block(p, g)
    return score


def s_measure(P, G, alpha=0.5, lam=0.5):
    P, G = as_pair(P, G)
    y = G.mean()
    if y == 0:
        s = 1.0 - P.mean()
    elif y == 1:
        s = P.mean()
    else:
        s = alpha * s_object(P, G, lam) + (1 - alpha) * s_region(P, G)
    return float(min(max(s, 0.0), 1.0))


# ---------------------------------------------------------------- E-measure

def e_curve(P, G):
    """Enhanced-alignment score at every threshold, clamped to [0, 1]."""
    P, G = as_pair(P, G)
    hw = G.size
    n_fg = int(G.sum())
    tp, fp = _threshold_counts(P, G)
    pred_fg = tp + fp
    pred_bg = hw - pred_fg
    if n_fg == 0:
        total = pred_bg
    elif n_fg == hw:
        total = pred_fg
    else:
        fn = n_fg - tp
        tn = pred_bg - fn
        mp = pred_fg / hw
        mg = n_fg / hw
        total = np.zeros_like(tp)
        # (pixel count, demeaned prediction, demeaned ground truth) per combination
        for count, dp, dg in ((tp, 1 - mp, 1 - mg), (fp, 1 - mp, -mg), (fn, -mp, 1 - mg), (tn, -mp, -mg)):
            xi = 2 * dp * dg / (dp * dp + dg * dg + MACHINE_EPS)
            total = total + count * (xi + 1) ** 2 / 4
    return np.clip(total / (hw - 1 + MACHINE_EPS), 0.0, 1.0)


def e_measure(P, G):
    curve = e_curve(P, G)
    return float(curve.max()), float(curve.mean())


# ------------------------------------------------------------ region analysis

@dataclass
class RegionPartition:
    labels: np.ndarray  # uint8, one of BACKGROUND/BOUNDARY/CENTER/OTHER
    dist: np.ndarray  # distance to nearest background, 0 on background
    percentile80: float

    def mask(self, region):
        return self.labels == REGIONS[region]

    def counts(self):
        return {name: int((self.labels == code).sum()) for name, code in REGIONS.items()}


def nearest_rank(values, percent):
    """Nearest-rank percentile for an integer ``percent`` in 1..100."""
    v = np.sort(np.asarray(values, dtype=np.float64).ravel())
    rank = -(-percent * v.size // 100)  # ceil in integers
    return float(v[max(rank, 1) - 1])


def partition_regions(G, boundary_px=BOUNDARY_PX):
    G = np.asarray(G, dtype=bool)
    if not G.any():
        raise UndefinedMetricError("region partition needs at least one foreground pixel")
    dist = exact_edt(G)
    fd = dist[G]
    p80 = nearest_rank(fd, 80)
    labels = np.zeros(G.shape, dtype=np.uint8)
    labels[G] = OTHER
    labels[G & (dist >= p80)] = CENTER
    labels[G & (dist < boundary_px)] = BOUNDARY  # boundary wins on overlap
    return RegionPartition(labels, dist, p80)


def region_mae(P, G, part, region):
    P, G = as_pair(P, G)
    if part.labels.shape != G.shape:
        raise DimensionError("partition does not match the mask shape")
    m = part.mask(region)
    if not m.any():
        raise UndefinedMetricError(f"region {region!r} is empty")
    return float(np.mean(np.abs(P[m] - G[m])))


def relative_improvement(base, improved):
    """Percent reduction of an error value."""
    if not base > 0:
        raise DomainError(f"baseline must be positive, got {base}")
    return 100.0 * (base - improved) / base


# ------------------------------------------------------------------ reports

def evaluate_pair(P, G):
    """All six scores for one image. Raises UndefinedMetricError on empty G."""
    P, G = as_pair(P, G)
    e_max, e_mean = e_measure(P, G)
    return {
        "mae": mae(P, G),
        "f_max": f_beta_max(P, G),
        "f_weighted": f_weighted(P, G),
        "s_measure": s_measure(P, G),
        "e_max": e_max,
        "e_mean": e_mean,
    }


def region_errors(P, G):
    """MAE per foreground region; nan where the region is empty."""
    part = partition_regions(G)
    return {name: (region_mae(P, G, part, name) if part.mask(name).any() else float("nan"))
            for name in REGIONS}


@dataclass
class MetricsReport:
    per_image: list = field(default_factory=list)  # (name, dict of scores)

    def add(self, name, scores):
        self.per_image.append((name, dict(scores)))

    def aggregate(self):
        """Arithmetic mean of each field over images; nan entries are skipped."""
        out = {}
        keys = self.per_image[0][1].keys() if self.per_image else METRIC_FIELDS
        for key in keys:
            vals = np.array([s[key] for _, s in self.per_image], dtype=np.float64)
            vals = vals[~np.isnan(vals)]
            out[key] = float(vals.mean()) if vals.size else float("nan")
        return out
