"""Neural-network primitives over (n, c, h, w) float32 tensors."""
import hashlib
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError, DimensionError
from .tensor import DTYPE, as_tensor4

BN_EPS = 1e-5
_SIG_LO = np.float32(np.finfo(np.float32).tiny)
_SIG_HI = np.float32(1.0 - 2.0 ** -24)


@dataclass(frozen=True)
class ConvSpec:
    c_in: int
    c_out: int
    k: int = 3
    stride: int = 1
    pad: int = 0
    dilation: int = 1
    groups: int = 1

    def __post_init__(self):
        for name in ("c_in", "c_out", "k", "stride", "dilation", "groups"):
            if getattr(self, name) < 1:
                raise ConfigError(name, f"must be >= 1, got {getattr(self, name)}")
        if self.pad < 0:
            raise ConfigError("pad", f"must be >= 0, got {self.pad}")
        if self.c_in % self.groups or self.c_out % self.groups:
            raise ConfigError("groups", f"{self.groups} does not divide c_in={self.c_in} and c_out={self.c_out}")

    @classmethod
    def same(cls, c_in, c_out, k=3, dilation=1, groups=1):
        """Stride-1 convolution that preserves spatial size (odd k)."""
        return cls(c_in, c_out, k=k, stride=1, pad=dilation * (k - 1) // 2, dilation=dilation, groups=groups)

    @property
    def weight_shape(self):
        return (self.c_out, self.c_in // self.groups, self.k, self.k)

    @property
    def fan_in(self):
        return self.c_in // self.groups * self.k * self.k

    def output_size(self, h, w):
        span = self.dilation * (self.k - 1) + 1
        return ((h + 2 * self.pad - span) // self.stride + 1,
                (w + 2 * self.pad - span) // self.stride + 1)


@dataclass
class LayerParams:
    name: str
    weight: np.ndarray
    bias: np.ndarray | None = None
    bn_gamma: np.ndarray | None = None
    bn_beta: np.ndarray | None = None
    bn_mean: np.ndarray | None = None
    bn_var: np.ndarray | None = None

    @property
    def has_bn(self):
        return self.bn_gamma is not None

    def arrays(self):
        """Named arrays in a fixed order; absent entries are skipped."""
        out = {"weight": self.weight}
        for key in ("bias", "bn_gamma", "bn_beta", "bn_mean", "bn_var"):
            value = getattr(self, key)
            if value is not None:
                out[key] = value
        return out

    def check(self, spec):
        if self.weight.shape != spec.weight_shape:
            raise DimensionError(f"{self.name}: weight shape {self.weight.shape}, expected {spec.weight_shape}")
        for key, value in self.arrays().items():
            if key != "weight" and value.shape != (spec.c_out,):
                raise DimensionError(f"{self.name}: {key} has shape {value.shape}, expected ({spec.c_out},)")
        if self.bn_var is not None and not np.all(self.bn_var > 0):
            raise DimensionError(f"{self.name}: bn_var must be positive")


def conv2d(x, spec, p, backend=None):
    x = as_tensor4(x, "x")
    if x.shape[1] != spec.c_in:
        raise DimensionError(f"{p.name}: input has {x.shape[1]} channels, layer expects {spec.c_in}")
    p.check(spec)
    out_h, out_w = spec.output_size(x.shape[2], x.shape[3])
    if out_h < 1 or out_w < 1:
        raise DimensionError(f"{p.name}: input {x.shape[2]}x{x.shape[3]} too small, output would be {out_h}x{out_w}")
    bias = p.bias if p.bias is not None else np.zeros(spec.c_out, dtype=DTYPE)
    return kernels.get(backend).conv2d(
        x, np.ascontiguousarray(p.weight, dtype=DTYPE), np.ascontiguousarray(bias, dtype=DTYPE),
        spec.stride, spec.pad, spec.dilation, spec.groups, out_h, out_w)


def depthwise_separable_specs(spec):
    """Split a dense convolution spec into its depthwise and pointwise halves."""
    dw = ConvSpec(spec.c_in, spec.c_in, k=spec.k, stride=spec.stride, pad=spec.pad,
                  dilation=spec.dilation, groups=spec.c_in)
    pw = ConvSpec(spec.c_in, spec.c_out, k=1)
    return dw, pw


def depthwise_separable_conv(x, spec, p_dw, p_pw, backend=None):
    dw, pw = depthwise_separable_specs(spec)
    return conv2d(conv2d(x, dw, p_dw, backend), pw, p_pw, backend)


def batchnorm_inference(x, p, eps=BN_EPS):
    x = as_tensor4(x, "x")
    c = x.shape[1]
    arrays = [p.bn_gamma, p.bn_beta, p.bn_mean, p.bn_var]
    if any(a is None or len(a) != c for a in arrays):
        raise DimensionError(f"{p.name}: batch-norm arrays must all have length {c}")
    gamma, beta, mean, var = (np.asarray(a, dtype=np.float64) for a in arrays)
    scale = gamma / np.sqrt(var + eps)
    shift = beta - mean * scale
    out = x * scale.astype(DTYPE)[None, :, None, None]
    out += shift.astype(DTYPE)[None, :, None, None]
    return out


def relu(x):
    return np.maximum(as_tensor4(x), DTYPE(0))


def sigmoid(x):
    x = np.asarray(x, dtype=DTYPE)
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    # float32 rounds large |x| to exactly 0 or 1; keep the open interval
    return np.clip(out, _SIG_LO, _SIG_HI, out=out)


def maxpool2(x):
    x = as_tensor4(x)
    n, c, h, w = x.shape
    if h < 2 or w < 2:
        raise DimensionError(f"maxpool2 needs h, w >= 2, got {h}x{w}")
    h2, w2 = h // 2, w // 2
    v = x[:, :, :2 * h2, :2 * w2].reshape(n, c, h2, 2, w2, 2)
    return np.ascontiguousarray(v.max(axis=(3, 5)))


def global_avg_pool(x):
    """Per-channel spatial mean of a single-sample tensor."""
    x = as_tensor4(x)
    if x.shape[0] != 1:
        raise DimensionError(f"global_avg_pool takes a batch of one, got n={x.shape[0]}")
    return x[0].astype(np.float64).mean(axis=(1, 2)).astype(DTYPE)


def _interp_axis(size_in, size_out):
    ratio = size_in / size_out
    src = (np.arange(size_out, dtype=np.float64) + 0.5) * ratio - 0.5
    src = np.clip(src, 0.0, size_in - 1)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, size_in - 1)
    return lo, hi, src - lo


def upsample_bilinear(x, out_h, out_w):
    """Half-pixel bilinear resize (align_corners=False, edge-clamped)."""
    x = as_tensor4(x)
    if out_h < 1 or out_w < 1:
        raise DimensionError(f"output size must be positive, got {out_h}x{out_w}")
    n, c, h, w = x.shape
    if (h, w) == (out_h, out_w):
        return x.copy()
    y0, y1, fy = _interp_axis(h, out_h)
    x0, x1, fx = _interp_axis(w, out_w)
    # weights come from float64 coordinates; the blend runs in float32
    fy = fy.astype(DTYPE)[:, None]
    fx = fx.astype(DTYPE)
    top = x[:, :, y0, :]
    rows = top + (x[:, :, y1, :] - top) * fy
    left = rows[:, :, :, x0]
    return left + (rows[:, :, :, x1] - left) * fx


def sub_seed(seed, path):
    digest = hashlib.sha256(f"{seed}:{path}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def init_params(spec, seed, name="conv", batchnorm=True, gain=2.0):
    """He-normal weights (variance gain/fan_in), zero bias, identity batch norm."""
    rng = np.random.default_rng(seed)
    std = math.sqrt(gain / spec.fan_in)
    weight = (rng.standard_normal(spec.weight_shape) * std).astype(DTYPE)
    p = LayerParams(name=name, weight=weight, bias=np.zeros(spec.c_out, dtype=DTYPE))
    if batchnorm:
        p.bn_gamma = np.ones(spec.c_out, dtype=DTYPE)
        p.bn_beta = np.zeros(spec.c_out, dtype=DTYPE)
        p.bn_mean = np.zeros(spec.c_out, dtype=DTYPE)
        p.bn_var = np.ones(spec.c_out, dtype=DTYPE)
    return p


def count_macs(spec, out_h, out_w):
    return spec.c_out * (spec.c_in // spec.groups) * spec.k * spec.k * out_h * out_w
