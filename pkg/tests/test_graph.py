import numpy as np
import pytest

from edn import graph, layers
from edn.errors import ConfigError, DimensionError, MissingParameterError
from edn.graph import NetworkConfig
from oracles import conv2d_loops


def zeroed(params, prefix=""):
    out = {}
    for path, p in params.items():
        if path.startswith(prefix):
            p = layers.LayerParams(p.name, np.zeros_like(p.weight), np.zeros_like(p.bias), p.bn_gamma, p.bn_beta,
                                   p.bn_mean, p.bn_var)
        out[path] = p
    return out


def scpc_params(c, rates, seed=0, lite=False, prefix="scpc"):
    return graph.init_layer_params(graph.scpc_layers(prefix, c, rates, lite), seed)


def random_bn(params, rng):
    for p in params.values():
        if p.has_bn:
            c = p.bn_gamma.size
            p.bn_gamma = rng.uniform(0.5, 1.5, c).astype(np.float32)
            p.bn_beta = rng.uniform(-0.2, 0.2, c).astype(np.float32)
            p.bn_mean = rng.uniform(-0.2, 0.2, c).astype(np.float32)
            p.bn_var = rng.uniform(0.5, 2.0, c).astype(np.float32)
        p.bias = rng.uniform(-0.1, 0.1, p.bias.size).astype(np.float32)
    return params


# ------------------------------------------------------------------- SCPC

def test_scpc_preserves_shape(rng, backend):
    x = rng.standard_normal((1, 32, 24, 24)).astype(np.float32)
    assert graph.scpc(x, (1, 2, 3, 4), scpc_params(32, (1, 2, 3, 4)), backend=backend).shape == x.shape


@pytest.mark.parametrize("lite", [False, True])
def test_scpc_zero_weights_is_relu(rng, lite):
    x = rng.standard_normal((1, 16, 9, 9)).astype(np.float32)
    p = zeroed(scpc_params(16, (1, 2, 4, 8), lite=lite))
    assert np.array_equal(graph.scpc(x, (1, 2, 4, 8), p, lite=lite), layers.relu(x))


def test_scpc_rejects_indivisible_channels():
    with pytest.raises(ConfigError):
        graph.scpc(np.zeros((1, 6, 4, 4)), (1, 1, 1, 1), {})


def _bn64(y, p):
    g, b, m, v = (np.asarray(a, np.float64)[None, :, None, None] for a in (p.bn_gamma, p.bn_beta, p.bn_mean, p.bn_var))
    return g * (y - m) / np.sqrt(v + layers.BN_EPS) + b


def scpc_replay(x, params, prefix="scpc"):
    """The SCPC recurrence written out with loop convolutions (rates all 1)."""
    def block(t, path, relu=True):
        p = params[f"{prefix}.{path}"]
        k = p.weight.shape[2]
        y = _bn64(conv2d_loops(t, p.weight, p.bias, pad=k // 2), p)
        return np.maximum(y, 0) if relu else y

    m1 = block(x.astype(np.float64), "transition")
    q = m1.shape[1] // 4
    outs, prev = [], None
    for i in range(4):
        part = m1[:, i * q:(i + 1) * q]
        prev = block(part if prev is None else part + prev, f"branch{i + 1}")
        outs.append(prev)
    fused = block(np.concatenate(outs, axis=1), "fuse", relu=False)
    return np.maximum(fused + x, 0)


def test_scpc_unit_rates_vs_replay_oracle(rng, backend):
    x = rng.standard_normal((1, 8, 6, 5)).astype(np.float32)
    p = random_bn(scpc_params(8, (1, 1, 1, 1), seed=4), rng)
    got = graph.scpc(x, (1, 1, 1, 1), p, backend=backend)
    assert np.max(np.abs(got - scpc_replay(x, p))) <= 1e-5


def test_stacked_zero_weights_and_composition(rng, backend):
    x = rng.standard_normal((1, 32, 12, 12)).astype(np.float32)
    rates = (1, 2, 3, 4)
    plan = graph.stacked_scpc_layers("h", 32, rates)
    p = graph.init_layer_params(plan, 3)
    out = graph.stacked_scpc_H(x, rates, p, "h", backend=backend)
    assert out.shape == x.shape
    manual = graph.scpc(graph.scpc(x, rates, p, "h.scpc0", backend=backend), rates, p, "h.scpc1", backend=backend)
    assert out.tobytes() == manual.tobytes()
    assert np.array_equal(graph.stacked_scpc_H(x, rates, zeroed(p), "h"), layers.relu(x))


# -------------------------------------------------------------------- EDB

def edb_setup(config, c=16, side=24, seed=0):
    plan = graph.edb_layers(config, c, (side, side))
    return graph.init_layer_params(plan, seed)


def test_edb_output_scale(rng, small_config, backend):
    e5 = rng.standard_normal((1, 16, 24, 24)).astype(np.float32)
    d6 = graph.edb(e5, edb_setup(small_config), small_config, backend=backend)
    assert d6.shape == (1, 2 * small_config.decoder_width, 12, 12)


def test_edb_all_ones_attention_equals_no_recalibration(rng, small_config):
    e5 = rng.standard_normal((1, 16, 8, 8)).astype(np.float32)
    p = edb_setup(small_config, side=8)
    ones = np.ones(small_config.edb_width, np.float32)
    a = graph.edb(e5, p, small_config, attention=ones)
    b = graph.edb(e5, p, small_config, recalibrate=False)
    assert a.tobytes() == b.tobytes()
    c = graph.edb(e5, p, small_config)
    assert not np.array_equal(a, c)


def test_edb_attention_in_open_interval(rng):
    for scale in (1.0, 1e3, 1e6):
        x2 = (rng.standard_normal((1, 32, 3, 3)) * scale).astype(np.float32)
        x3 = layers.sigmoid(layers.global_avg_pool(x2))
        assert np.all(x3 > 0) and np.all(x3 < 1)


def test_edb_too_small(small_config):
    with pytest.raises(DimensionError):
        graph.edb(np.zeros((1, 16, 3, 3), np.float32), {}, small_config)


# ---------------------------------------------------------------- forward

def test_forward_scale_ledger(small_config, backend):
    model = graph.build_model(small_config)
    img = np.random.default_rng(0).random((1, 3, 64, 64), dtype=np.float32)
    out = graph.forward(model, img, backend=backend)
    assert [e.shape[2] for e in out.stage_features] == [64, 32, 16, 8, 4]
    assert [d.shape[2] for d in out.decoder_features] == [64, 32, 16, 8, 4, 2]
    assert len(out.predictions) == 5
    for p in out.predictions:
        assert p.shape == (1, 1, 64, 64)
        assert np.all(p > 0) and np.all(p < 1)


def test_seven_rate_group_sites(small_config):
    out = graph.forward(graph.build_model(small_config), np.zeros((1, 3, 64, 64), np.float32))
    assert len(out.sites) == 7 and len(set(out.sites)) == 7
    groups = dict(out.sites)
    assert [groups[f"decoder.stage{i}.h"] for i in range(1, 6)] == ["L", "L", "H", "H", "H"]
    assert groups["edb.h_low"] == groups["edb.h_fuse"] == "EH"
    assert sorted(graph.scpc_sites(small_config)) == sorted(out.sites)


def test_default_rate_groups():
    cfg = NetworkConfig()
    assert cfg.rates("L") == (1, 2, 4, 8)
    assert cfg.rates("H") == (1, 2, 3, 4)
    assert cfg.rates("EH") == (1, 1, 1, 1)


def test_forward_deterministic(small_config):
    img = np.random.default_rng(1).random((1, 3, 64, 64), dtype=np.float32)
    a = graph.forward(graph.build_model(small_config), img)
    b = graph.forward(graph.build_model(small_config), img)
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a.predictions, b.predictions))


@pytest.mark.parametrize("calibrate_with", ["compiled", "python"])
def test_forward_backends_agree(small_config, calibrate_with):
    if len(graph.layers.kernels.BACKENDS) < 2:
        pytest.skip("compiled backend not built")
    model = graph.calibrate_batchnorm(graph.build_model(small_config),
                                      np.random.default_rng(2).random((1, 3, 64, 64), dtype=np.float32),
                                      backend=calibrate_with)
    img = np.random.default_rng(3).random((1, 3, 64, 64), dtype=np.float32)
    a = graph.forward(model, img, "compiled")
    b = graph.forward(model, img, "python")
    # Only the float32 summation order differs. Each of ~40 conv layers adds
    # ~1e-6 relative error; batch norm on low-variance channels scales it by
    # up to 1/sqrt(var) ~ 13. That gives ~5e-4 at the sigmoid outputs.
    for x, y in zip(a.decoder_features, b.decoder_features):
        assert np.max(np.abs(x - y)) <= 1e-4 * np.max(np.abs(x))
    for x, y in zip(a.predictions, b.predictions):
        assert np.max(np.abs(x - y)) <= 5e-4


def test_zero_scpc_weights_keep_outputs_finite(small_config):
    model = graph.build_model(small_config)
    params = dict(model.params)
    for path in list(params):
        if ".h." in path or ".h_" in path:
            params.update(zeroed({path: params[path]}))
    out = graph.forward(graph.EdnModel(small_config, params), np.ones((1, 3, 64, 64), np.float32))
    for p in out.predictions:
        assert np.all(np.isfinite(p))


def test_batch_forward_matches_single(small_config):
    model = graph.build_model(small_config)
    imgs = np.random.default_rng(4).random((2, 3, 64, 64), dtype=np.float32)
    both = graph.forward(model, imgs)
    for i in range(2):
        one = graph.forward(model, imgs[i:i + 1])
        assert np.array_equal(both.predictions[0][i], one.predictions[0][0])


def test_forward_rejects_wrong_size(small_config):
    with pytest.raises(ConfigError) as err:
        graph.forward(graph.build_model(small_config), np.zeros((1, 3, 32, 32), np.float32))
    assert err.value.field == "input_side"


# ------------------------------------------------------------ build/model

def test_build_deterministic(small_config):
    a, b = graph.build_model(small_config), graph.build_model(small_config)
    assert a.params.keys() == b.params.keys()
    for k in a.params:
        for name, arr in a.params[k].arrays().items():
            assert arr.tobytes() == b.params[k].arrays()[name].tobytes()


def test_lite_costs_less(small_config):
    for cfg in (small_config, NetworkConfig()):
        assert graph.graph_macs(cfg.replace(lite=True)) < graph.graph_macs(cfg)


def test_lite_swaps_scpc_branches(small_config):
    lite = graph.build_model(small_config.replace(lite=True))
    dw = [p for p in lite.plan if p.endswith(".dw")]
    assert len(dw) == 7 * 2 * 4
    assert all(lite.plan[p].spec.groups == lite.plan[p].spec.c_in for p in dw)


@pytest.mark.parametrize("field,kwargs", [
    ("decoder_width", dict(decoder_width=30)),
    ("edb_width", dict(edb_width=18)),
    ("input_side", dict(input_side=100)),
    ("backbone_widths", dict(backbone_widths=(8, 8, 8, 8))),
    ("rates_H", dict(rate_groups={"L": (1, 2, 4, 8), "H": (1, 0, 3, 4), "EH": (1, 1, 1, 1)})),
])
def test_config_errors_name_the_field(field, kwargs):
    with pytest.raises(ConfigError) as err:
        NetworkConfig(**kwargs)
    assert err.value.field == field


def test_model_validation(small_config):
    model = graph.build_model(small_config)
    params = dict(model.params)
    del params["decoder.stage3.lateral"]
    with pytest.raises(MissingParameterError) as err:
        graph.EdnModel(small_config, params)
    assert err.value.field == "decoder.stage3.lateral"
    params = dict(model.params)
    p = params["head.p1"]
    params["head.p1"] = layers.LayerParams(p.name, np.zeros((1, 3, 1, 1), np.float32), p.bias)
    with pytest.raises(ConfigError):
        graph.EdnModel(small_config, params)


def test_default_graph_layer_count_and_macs():
    model_plan = graph.plan_layers(NetworkConfig())
    assert len(model_plan) == 115
    assert graph.graph_macs(NetworkConfig()) == sum(
        layers.count_macs(lp.spec, *lp.out_hw) for lp in model_plan.values())


def test_calibration_spreads_predictions_without_mutating(small_config):
    model = graph.build_model(small_config)
    img = np.random.default_rng(5).random((1, 3, 64, 64), dtype=np.float32)
    before = {k: v.bn_mean.copy() for k, v in model.params.items() if v.has_bn}
    calibrated = graph.calibrate_batchnorm(model, img)
    assert all(np.array_equal(model.params[k].bn_mean, v) for k, v in before.items())
    p1 = graph.forward(calibrated, img).predictions[0]
    assert 0.01 < p1.std() < 0.5
    for p in calibrated.params.values():
        assert not p.has_bn or np.all(p.bn_var > 0)
