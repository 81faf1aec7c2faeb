import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from edn.distance import exact_edt, nearest_feature
from oracles import edt_brute, edt_sq_brute


def adversarial_masks():
    out = []
    for side in (1, 2, 7, 16, 32):
        yy, xx = np.mgrid[:side, :side]
        out += [
            (yy + xx) % 2 == 0,  # checkerboard
            yy % 3 != 0,  # horizontal stripes
            xx % 4 == 1,  # vertical stripes
            np.ones((side, side), bool),
            np.zeros((side, side), bool),
            (yy - side // 2) ** 2 + (xx - side // 2) ** 2 < (side // 3) ** 2,
            yy == xx,
        ]
    out.append(np.pad(np.ones((3, 7), bool), 1))
    out.append(np.eye(32, 17, dtype=bool))
    return out


def test_single_pixel_and_all_background():
    G = np.zeros((5, 5), bool)
    G[2, 2] = True
    d = exact_edt(G)
    assert d[2, 2] == 1.0 and np.all(d[~G] == 0)
    assert np.all(exact_edt(np.zeros((4, 6), bool)) == 0)
    assert np.all(np.isinf(exact_edt(np.ones((3, 3), bool))))


def test_filled_row_in_bordered_image():
    G = np.pad(np.ones((1, 7), bool), 1)
    np.testing.assert_array_equal(exact_edt(G), edt_brute(G))
    assert exact_edt(G)[1, 4] == 1.0


def test_adversarial_exact(backend):
    for G in adversarial_masks():
        for feats in (G, ~G):
            dist, _, _ = nearest_feature(feats, backend)
            np.testing.assert_array_equal(dist, edt_sq_brute(feats))


@settings(max_examples=80, deadline=None)
@given(h=st.integers(1, 32), w=st.integers(1, 32), density=st.floats(0.0, 1.0), seed=st.integers(0, 2 ** 32 - 1))
def test_random_masks_exact(h, w, density, seed):
    G = np.random.default_rng(seed).random((h, w)) < density
    for backend in ("python", None):
        np.testing.assert_array_equal(exact_edt(G, backend), edt_brute(G))


def test_index_map_points_at_a_nearest_feature(rng, backend):
    for _ in range(40):
        f = rng.random((int(rng.integers(1, 25)), int(rng.integers(1, 25)))) < rng.uniform(0.02, 0.6)
        if not f.any():
            continue
        dist, iy, ix = nearest_feature(f, backend)
        assert f[iy, ix].all()
        yy, xx = np.mgrid[:f.shape[0], :f.shape[1]]
        assert np.array_equal((yy - iy) ** 2 + (xx - ix) ** 2, dist)


def test_no_feature_marks_unset(backend):
    dist, iy, ix = nearest_feature(np.zeros((3, 4), bool), backend)
    assert np.all(dist == -1) and np.all(iy == -1) and np.all(ix == -1)


def test_matches_scipy_on_larger_masks(rng):
    for _ in range(5):
        G = rng.random((97, 130)) < 0.7
        np.testing.assert_array_equal(exact_edt(G), ndimage.distance_transform_edt(G))


def test_backends_identical_including_indices(rng):
    if "compiled" not in __import__("edn").kernels.BACKENDS:
        pytest.skip("compiled backend not built")
    for _ in range(30):
        f = rng.random((int(rng.integers(1, 40)), int(rng.integers(1, 40)))) < rng.uniform(0.01, 0.9)
        a = nearest_feature(f, "python")
        b = nearest_feature(f, "compiled")
        for x, y in zip(a, b):
            assert np.array_equal(x, y)
