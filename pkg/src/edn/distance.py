"""Exact Euclidean distance transforms on binary masks."""
import numpy as np

from . import kernels


def nearest_feature(features, backend=None):
    """Squared distance and (row, col) of the nearest True pixel of ``features``.

    Integer arithmetic throughout, so the result is exact. Pixels of an image
    without any feature get -1 in all three outputs.
    """
    f = np.ascontiguousarray(features, dtype=np.uint8)
    if f.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {f.shape}")
    dist, iy, ix = kernels.get(backend).edt_sq(f)
    return np.asarray(dist), np.asarray(iy), np.asarray(ix)


def exact_edt(G, backend=None):
    """Distance of every foreground pixel to the nearest background pixel.

    Background pixels get 0. A mask with no background gets +inf everywhere.
    """
    fg = np.asarray(G, dtype=bool)
    if fg.all():
        return np.full(fg.shape, np.inf)
    dist, _, _ = nearest_feature(~fg, backend)
    return np.sqrt(dist.astype(np.float64))
