"""Rank-4 float32 feature maps in (n, c, h, w) layout.

Tensors are plain C-contiguous ``numpy.ndarray`` objects of dtype float32.
Every operation returns a fresh array and never writes to its inputs.
"""
import numpy as np

from .errors import DimensionError

DTYPE = np.float32


def as_tensor4(a, name="tensor"):
    arr = np.ascontiguousarray(a, dtype=DTYPE)
    if arr.ndim != 4:
        raise DimensionError(f"{name} must be rank 4 (n, c, h, w), got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise DimensionError(f"{name} has an empty dimension: {arr.shape}")
    return arr


def as_channel_vector(v, name="vector"):
    arr = np.ascontiguousarray(v, dtype=DTYPE)
    if arr.ndim != 1 or arr.shape[0] < 1:
        raise DimensionError(f"{name} must be a non-empty 1-D array, got shape {arr.shape}")
    return arr


def flat_offset(dims, n, c, y, x):
    """Row-major offset of element (n, c, y, x) in a tensor of shape ``dims``."""
    _, C, H, W = dims
    return ((n * C + c) * H + y) * W + x


def unravel_offset(dims, offset):
    _, C, H, W = dims
    offset, x = divmod(offset, W)
    offset, y = divmod(offset, H)
    n, c = divmod(offset, C)
    return n, c, y, x


def zeros(n, c, h, w):
    return np.zeros((n, c, h, w), dtype=DTYPE)


def elementwise_mul_broadcast(a, v):
    a = as_tensor4(a, "a")
    v = as_channel_vector(v, "v")
    if a.shape[1] != v.shape[0]:
        raise DimensionError(f"channel mismatch: tensor has {a.shape[1]}, vector has {v.shape[0]}")
    return a * v[None, :, None, None]


def concat_channels(a, b):
    a = as_tensor4(a, "a")
    b = as_tensor4(b, "b")
    if (a.shape[0], a.shape[2], a.shape[3]) != (b.shape[0], b.shape[2], b.shape[3]):
        raise DimensionError(f"cannot concatenate {a.shape} and {b.shape} along channels")
    return np.concatenate([a, b], axis=1)


def split_channels_even(a, parts):
    a = as_tensor4(a, "a")
    if parts < 1 or a.shape[1] % parts:
        raise DimensionError(f"{a.shape[1]} channels cannot be split into {parts} equal parts")
    step = a.shape[1] // parts
    return [np.ascontiguousarray(a[:, i * step:(i + 1) * step]) for i in range(parts)]


def split_at(a, index):
    a = as_tensor4(a, "a")
    if not 0 < index < a.shape[1]:
        raise DimensionError(f"split index {index} outside (0, {a.shape[1]})")
    return np.ascontiguousarray(a[:, :index]), np.ascontiguousarray(a[:, index:])


def add(a, b):
    a = as_tensor4(a, "a")
    b = as_tensor4(b, "b")
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch in add: {a.shape} vs {b.shape}")
    return a + b


def scale(a, factor):
    return as_tensor4(a) * DTYPE(factor)
