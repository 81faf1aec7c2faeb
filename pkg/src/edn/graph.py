"""EDN graph assembly: toy backbone, extremely-downsampled block, SCPC decoder.

Every convolution in the network is listed once in a static *layer plan*
(``plan_layers``) keyed by a dotted path such as ``decoder.stage3.h.scpc1.branch2``.
Parameter initialization, weight files, MAC counting and the forward pass all
read from that plan, so they cannot drift apart.
"""
from contextvars import ContextVar
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from . import layers
from .errors import ConfigError, DimensionError, MissingParameterError
from .layers import ConvSpec, LayerParams
from .tensor import add, as_tensor4, concat_channels, elementwise_mul_broadcast, split_channels_even

DEFAULT_WIDTHS = (16, 32, 64, 128, 128)
DEFAULT_RATES = {"L": (1, 2, 4, 8), "H": (1, 2, 3, 4), "EH": (1, 1, 1, 1)}
# rate group per decoder stage 1..5
STAGE_GROUPS = ("L", "L", "H", "H", "H")


@dataclass(frozen=True)
class NetworkConfig:
    backbone_widths: tuple = DEFAULT_WIDTHS
    decoder_width: int = 32
    edb_width: int = 256
    scpc_branches: int = 4
    rate_groups: Mapping = field(default_factory=lambda: dict(DEFAULT_RATES))
    lite: bool = False
    input_side: int = 384
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "backbone_widths", tuple(int(c) for c in self.backbone_widths))
        object.__setattr__(self, "rate_groups",
                           {k: tuple(int(r) for r in v) for k, v in dict(self.rate_groups).items()})
        self.validate()

    def validate(self):
        if len(self.backbone_widths) != 5 or min(self.backbone_widths) < 1:
            raise ConfigError("backbone_widths", f"need five positive widths, got {self.backbone_widths}")
        if self.scpc_branches != 4:
            raise ConfigError("scpc_branches", f"SCPC uses exactly 4 branches, got {self.scpc_branches}")
        for name in ("decoder_width", "edb_width"):
            value = getattr(self, name)
            if value < 1 or value % self.scpc_branches:
                raise ConfigError(name, f"{value} is not a positive multiple of {self.scpc_branches}")
        if set(self.rate_groups) != set(DEFAULT_RATES):
            raise ConfigError("rate_groups", f"need groups {sorted(DEFAULT_RATES)}, got {sorted(self.rate_groups)}")
        for group, rates in self.rate_groups.items():
            if len(rates) != self.scpc_branches or min(rates) < 1:
                raise ConfigError(f"rates_{group}", f"need {self.scpc_branches} rates >= 1, got {rates}")
        if self.input_side < 64 or self.input_side % 64:
            raise ConfigError("input_side", f"{self.input_side} is not a positive multiple of 64")

    def rates(self, group):
        return self.rate_groups[group]

    def replace(self, **changes):
        values = {name: getattr(self, name) for name in self.__dataclass_fields__}
        values.update(changes)
        return NetworkConfig(**values)


@dataclass(frozen=True)
class LayerPlan:
    spec: ConvSpec
    batchnorm: bool = True
    out_hw: tuple = (1, 1)
    gain: float = 2.0


# ---------------------------------------------------------------- layer plans

def scpc_layers(prefix, channels, rates, lite=False, hw=(1, 1)):
    """Convolutions of one SCPC block, in execution order."""
    part = channels // 4
    out = {f"{prefix}.transition": LayerPlan(ConvSpec(channels, channels, k=1), True, hw)}
    for i, rate in enumerate(rates, start=1):
        spec = ConvSpec.same(part, part, k=3, dilation=rate)
        if lite:
            dw, pw = layers.depthwise_separable_specs(spec)
            out[f"{prefix}.branch{i}.dw"] = LayerPlan(dw, False, hw)
            out[f"{prefix}.branch{i}.pw"] = LayerPlan(pw, True, hw)
        else:
            out[f"{prefix}.branch{i}"] = LayerPlan(spec, True, hw)
    out[f"{prefix}.fuse"] = LayerPlan(ConvSpec(channels, channels, k=1), True, hw)
    return out


def stacked_scpc_layers(prefix, channels, rates, lite=False, hw=(1, 1)):
    out = {}
    for j in range(2):
        out.update(scpc_layers(f"{prefix}.scpc{j}", channels, rates, lite, hw))
    return out


def edb_layers(config, in_channels, in_hw):
    ew, dw = config.edb_width, config.decoder_width
    eh = config.rates("EH")
    h1, w1 = in_hw[0] // 2, in_hw[1] // 2
    h2, w2 = h1 // 2, w1 // 2
    out = {
        "edb.down1.conv1": LayerPlan(ConvSpec.same(in_channels, ew), True, (h1, w1)),
        "edb.down1.conv2": LayerPlan(ConvSpec.same(ew, ew), True, (h1, w1)),
        "edb.down2.conv1": LayerPlan(ConvSpec.same(ew, ew), True, (h2, w2)),
        "edb.down2.conv2": LayerPlan(ConvSpec.same(ew, ew), True, (h2, w2)),
    }
    out.update(stacked_scpc_layers("edb.h_low", ew, eh, config.lite, (h2, w2)))
    out["edb.reduce_low"] = LayerPlan(ConvSpec(ew, dw, k=1), True, (h2, w2))
    out["edb.reduce_high"] = LayerPlan(ConvSpec(ew, dw, k=1), True, (h1, w1))
    out.update(stacked_scpc_layers("edb.h_fuse", 2 * dw, eh, config.lite, (h1, w1)))
    return out


def plan_layers(config):
    """Every convolution in the network keyed by path, in execution order."""
    side = config.input_side
    widths = config.backbone_widths
    dw = config.decoder_width
    plan = {}
    c_prev = 3
    for i, c in enumerate(widths, start=1):
        hw = (side >> (i - 1), side >> (i - 1))
        plan[f"backbone.stage{i}.conv1"] = LayerPlan(ConvSpec.same(c_prev, c), True, hw)
        plan[f"backbone.stage{i}.conv2"] = LayerPlan(ConvSpec.same(c, c), True, hw)
        c_prev = c
    plan.update(edb_layers(config, widths[4], (side >> 4, side >> 4)))
    for i in range(5, 0, -1):
        hw = (side >> (i - 1), side >> (i - 1))
        top_hw = (side >> i, side >> i)
        plan[f"decoder.stage{i}.top"] = LayerPlan(ConvSpec(2 * dw, dw, k=1), True, top_hw)
        plan[f"decoder.stage{i}.lateral"] = LayerPlan(ConvSpec(widths[i - 1], dw, k=1), True, hw)
        plan.update(stacked_scpc_layers(f"decoder.stage{i}.h", 2 * dw, config.rates(STAGE_GROUPS[i - 1]),
                                        config.lite, hw))
    for i in range(1, 6):
        hw = (side >> (i - 1), side >> (i - 1))
        plan[f"head.p{i}"] = LayerPlan(ConvSpec(2 * dw, 1, k=1), False, hw, gain=1.0)
    return plan


def scpc_sites(config):
    """(site path, rate group) for every stacked-SCPC instance, in forward order."""
    return [("edb.h_low", "EH"), ("edb.h_fuse", "EH")] + \
        [(f"decoder.stage{i}.h", STAGE_GROUPS[i - 1]) for i in range(5, 0, -1)]


def graph_macs(config):
    return sum(layers.count_macs(lp.spec, *lp.out_hw) for lp in plan_layers(config).values())


def init_layer_params(plan, seed):
    return {path: layers.init_params(lp.spec, layers.sub_seed(seed, path), name=path,
                                     batchnorm=lp.batchnorm, gain=lp.gain)
            for path, lp in plan.items()}


# ---------------------------------------------------------------------- model

@dataclass
class EdnModel:
    config: NetworkConfig
    params: dict

    def __post_init__(self):
        self.plan = plan_layers(self.config)
        self.validate()

    def validate(self):
        missing = [p for p in self.plan if p not in self.params]
        if missing:
            raise MissingParameterError(missing[0], f"missing parameters for {len(missing)} layer(s): "
                                                    f"{', '.join(missing[:5])}")
        unknown = [p for p in self.params if p not in self.plan]
        if unknown:
            raise ConfigError(unknown[0], "parameters for a layer that is not in the graph")
        for path, lp in self.plan.items():
            p = self.params[path]
            try:
                p.check(lp.spec)
            except DimensionError as exc:
                raise ConfigError(path, str(exc)) from None
            if p.has_bn != lp.batchnorm:
                raise ConfigError(path, "batch-norm presence does not match the graph")

    def macs(self):
        return graph_macs(self.config)


def build_model(config):
    return EdnModel(config, init_layer_params(plan_layers(config), config.seed))


@dataclass
class ForwardOutputs:
    stage_features: list  # E1..E5
    decoder_features: list  # D1..D6
    predictions: list  # P1..P5
    sites: list = field(default_factory=list)  # (site path, rate group) in visit order


# -------------------------------------------------------------------- blocks

# when set, conv blocks record batch statistics into this dict (path -> params)
_calibration = ContextVar("edn_bn_calibration", default=None)


_MIN_CALIBRATION_PIXELS = 16


def _observe_stats(p, y):
    y64 = y.astype(np.float64)
    c = y.shape[1]
    if y.shape[0] * y.shape[2] * y.shape[3] >= _MIN_CALIBRATION_PIXELS:
        mean = y64.mean(axis=(0, 2, 3))
        var = y64.var(axis=(0, 2, 3))
    else:
        # too few pixels for per-channel estimates; pool over the whole layer
        mean = np.full(c, y64.mean())
        var = np.full(c, y64.var())
    var = np.where(var > 0, var, 1.0)
    return replace(p, bn_mean=mean.astype(np.float32), bn_var=var.astype(np.float32))

def _conv_block(x, params, path, spec, relu=True, backend=None):
    try:
        p = params[path]
    except KeyError:
        raise MissingParameterError(path, "parameter entry not found") from None
    y = layers.conv2d(x, spec, p, backend)
    observed = _calibration.get()
    if observed is not None and p.has_bn and path not in observed:
        p = _observe_stats(p, y)
        observed[path] = p
    if p.has_bn:
        y = layers.batchnorm_inference(y, p)
    return layers.relu(y) if relu else y


def scpc(x, rates, params, prefix="scpc", lite=False, backend=None):
    """One scale-correlated pyramid convolution block; shape preserving."""
    x = as_tensor4(x, "x")
    c = x.shape[1]
    if c % 4:
        raise ConfigError(prefix, f"SCPC input channels ({c}) must be divisible by 4")
    plan = scpc_layers(prefix, c, rates, lite)
    m1 = _conv_block(x, params, f"{prefix}.transition", plan[f"{prefix}.transition"].spec, backend=backend)
    branches = []
    prev = None
    for i, part in enumerate(split_channels_even(m1, 4), start=1):
        inp = part if prev is None else add(part, prev)
        if lite:
            inp = _conv_block(inp, params, f"{prefix}.branch{i}.dw", plan[f"{prefix}.branch{i}.dw"].spec,
                              relu=False, backend=backend)
            path = f"{prefix}.branch{i}.pw"
        else:
            path = f"{prefix}.branch{i}"
        prev = _conv_block(inp, params, path, plan[path].spec, backend=backend)
        branches.append(prev)
    merged = branches[0]
    for b in branches[1:]:
        merged = concat_channels(merged, b)
    fused = _conv_block(merged, params, f"{prefix}.fuse", plan[f"{prefix}.fuse"].spec, relu=False,
                        backend=backend)
    # the fuse conv's ReLU is applied after the residual sum
    return layers.relu(add(fused, x))


def stacked_scpc_H(x, rates, params, prefix="h", lite=False, backend=None):
    y = scpc(x, rates, params, f"{prefix}.scpc0", lite, backend)
    return scpc(y, rates, params, f"{prefix}.scpc1", lite, backend)


def edb(e5, params, config, attention=None, recalibrate=True, backend=None, sites=None):
    """Extremely-downsampled block. Returns D6 at half the scale of ``e5``.

    ``attention`` replaces the sigmoid(GAP) channel vector; ``recalibrate=False``
    skips the channel multiplication entirely.
    """
    e5 = as_tensor4(e5, "e5")
    if e5.shape[2] < 4 or e5.shape[3] < 4:
        raise DimensionError(f"EDB input {e5.shape[2]}x{e5.shape[3]} is too small to downsample twice")
    plan = edb_layers(config, e5.shape[1], e5.shape[2:])
    eh = config.rates("EH")

    def block(x, path, relu=True):
        return _conv_block(x, params, path, plan[path].spec, relu, backend)

    x1 = block(block(layers.maxpool2(e5), "edb.down1.conv1"), "edb.down1.conv2")
    x2 = block(block(layers.maxpool2(x1), "edb.down2.conv1"), "edb.down2.conv2")
    if recalibrate:
        x3 = layers.sigmoid(layers.global_avg_pool(x2)) if attention is None else attention
        x2 = elementwise_mul_broadcast(x2, x3)
        x1 = elementwise_mul_broadcast(x1, x3)
    low = stacked_scpc_H(x2, eh, params, "edb.h_low", config.lite, backend)
    low = block(low, "edb.reduce_low")
    low = layers.upsample_bilinear(low, x1.shape[2], x1.shape[3])
    fused = concat_channels(block(x1, "edb.reduce_high"), low)
    if sites is not None:
        sites += [("edb.h_low", "EH"), ("edb.h_fuse", "EH")]
    return stacked_scpc_H(fused, eh, params, "edb.h_fuse", config.lite, backend)


def _expect_hw(t, side, what):
    if t.shape[2:] != (side, side):
        raise DimensionError(f"{what} is {t.shape[2]}x{t.shape[3]}, expected {side}x{side}")


def forward(model, image, backend=None):
    image = as_tensor4(image, "image")
    cfg = model.config
    side = cfg.input_side
    if image.shape[1:] != (3, side, side):
        raise ConfigError("input_side", f"image shape {image.shape[1:]} does not match (3, {side}, {side})")
    if image.shape[0] > 1:
        parts = [forward(model, image[i:i + 1], backend) for i in range(image.shape[0])]
        stack = lambda seqs: [np.concatenate(ts, axis=0) for ts in zip(*seqs)]
        return ForwardOutputs(stack([p.stage_features for p in parts]),
                              stack([p.decoder_features for p in parts]),
                              stack([p.predictions for p in parts]), parts[0].sites)
    params, plan = model.params, model.plan

    def block(x, path, relu=True):
        return _conv_block(x, params, path, plan[path].spec, relu, backend)

    stages = []
    x = image
    for i in range(1, 6):
        if i > 1:
            x = layers.maxpool2(x)
        x = block(block(x, f"backbone.stage{i}.conv1"), f"backbone.stage{i}.conv2")
        _expect_hw(x, side >> (i - 1), f"E{i}")
        stages.append(x)

    sites = []
    d = edb(stages[4], params, cfg, backend=backend, sites=sites)
    _expect_hw(d, side >> 5, "D6")
    decoded = [d]
    for i in range(5, 0, -1):
        e = stages[i - 1]
        top = block(d, f"decoder.stage{i}.top")
        top = layers.upsample_bilinear(top, e.shape[2], e.shape[3])
        merged = concat_channels(block(e, f"decoder.stage{i}.lateral"), top)
        group = STAGE_GROUPS[i - 1]
        d = stacked_scpc_H(merged, cfg.rates(group), params, f"decoder.stage{i}.h", cfg.lite, backend)
        sites.append((f"decoder.stage{i}.h", group))
        _expect_hw(d, side >> (i - 1), f"D{i}")
        decoded.append(d)
    decoded.reverse()  # D1..D6

    preds = []
    for i in range(1, 6):
        logits = block(decoded[i - 1], f"head.p{i}", relu=False)
        preds.append(layers.sigmoid(layers.upsample_bilinear(logits, side, side)))
    return ForwardOutputs(stages, decoded, preds, sites)


def calibrate_batchnorm(model, image, backend=None):
    """Return a copy of ``model`` whose batch-norm running statistics are the
    per-channel mean/variance seen on ``image``.

    Freshly initialized networks have identity statistics, so activations grow
    stage by stage and the heads saturate. One calibration pass keeps every
    normalized layer at unit scale, which gives untrained predictions a usable
    spread. Layers are visited once, in forward order.
    """
    observed = {}
    token = _calibration.set(observed)
    try:
        forward(model, image, backend)
    finally:
        _calibration.reset(token)
    params = dict(model.params)
    params.update(observed)
    return EdnModel(model.config, params)
