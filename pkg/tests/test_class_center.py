import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from sacanet import ops
from sacanet.class_center import (
    PatchGrid,
    PreClassifier,
    attention_inputs,
    class_centers,
    global_center_map,
    local_class_centers,
    pre_classify,
    scatter_centers,
    split_patches,
    stitch_patches,
)
from sacanet.errors import DimensionError
from sacanet.gradcheck import run_suite
from sacanet.tensor import GradTape, Tensor


def test_pre_classifier_validation():
    with pytest.raises(DimensionError):
        PreClassifier(Tensor(np.zeros((3, 2))), Tensor(np.zeros((3, 2))))
    pc = PreClassifier.init(5, 3, np.random.default_rng(0))
    assert pc.k_classes == 3


def test_pre_classify_examples(rng):
    r = rng.uniform(size=(2, 2, 3))
    zero = PreClassifier(Tensor(np.zeros((3, 3))), Tensor(np.zeros((3, 2))))
    np.testing.assert_array_equal(pre_classify(Tensor(r), zero).data, 0.0)
    ident = PreClassifier(Tensor(np.eye(3)), Tensor(np.eye(3)))
    np.testing.assert_array_equal(pre_classify(Tensor(r), ident).data, r)
    pc = PreClassifier.init(3, 2, rng)
    ref = oracles.pre_classify(r, pc.conv1.data, pc.conv2.data)
    np.testing.assert_allclose(pre_classify(Tensor(r), pc).data, ref, rtol=0, atol=1e-14)
    with pytest.raises(DimensionError):
        pre_classify(Tensor(np.zeros((2, 2, 4))), pc)


def test_class_centers_examples(rng):
    r = rng.uniform(size=(3, 2, 4))
    one = class_centers(Tensor(r), Tensor(np.zeros((3, 2, 1))))
    np.testing.assert_allclose(one.centers.data[0], r.reshape(-1, 4).mean(0), rtol=0, atol=1e-15)
    np.testing.assert_allclose(one.weights_used, 1.0)
    single = class_centers(Tensor(r[:1, :1]), Tensor(rng.uniform(size=(1, 1, 3)))).centers.data
    np.testing.assert_array_equal(single, np.tile(r[0, 0], (3, 1)))
    # +-50 logits saturate the spatial softmax onto one pixel per class
    r2 = rng.uniform(size=(2, 2, 3))
    logits = np.full((2, 2, 2), -50.0)
    logits[0, 1, 0] = 50.0
    logits[1, 0, 1] = 50.0
    c = class_centers(Tensor(r2), Tensor(logits)).centers.data
    np.testing.assert_allclose(c, [r2[0, 1], r2[1, 0]], rtol=0, atol=1e-9)
    with pytest.raises(DimensionError):
        class_centers(Tensor(r2), Tensor(np.zeros((2, 3, 2))))


def test_class_centers_match_loop(rng):
    r, logits = rng.uniform(-1, 1, (3, 3, 4)), rng.uniform(-2, 2, (3, 3, 3))
    np.testing.assert_allclose(
        class_centers(Tensor(r), Tensor(logits)).centers.data, oracles.class_centers(r, logits), rtol=0, atol=1e-12
    )


def test_scatter_examples(rng):
    cen = class_centers(Tensor(rng.uniform(size=(2, 2, 3))), Tensor(np.zeros((2, 2, 1))))
    out = scatter_centers(cen, Tensor(rng.uniform(size=(2, 2, 1)))).data
    np.testing.assert_array_equal(out, np.broadcast_to(cen.centers.data[0], (2, 2, 3)))
    r = rng.uniform(size=(2, 2, 3))
    checker = np.zeros((2, 2, 2))
    checker[0, 0, 0] = checker[1, 1, 0] = 1.0
    checker[0, 1, 1] = checker[1, 0, 1] = 1.0
    cen = class_centers(Tensor(r), Tensor(checker))
    out = scatter_centers(cen, Tensor(checker)).data
    c0, c1 = cen.centers.data
    np.testing.assert_array_equal(out, [[c0, c1], [c1, c0]])


def test_scatter_ties_go_to_lowest_class(rng):
    r = rng.uniform(size=(1, 2, 3))
    logits = np.ones((1, 2, 3))
    cen = class_centers(Tensor(r), Tensor(logits))
    np.testing.assert_array_equal(scatter_centers(cen, Tensor(logits)).data[0, 1], cen.centers.data[0])


@given(st.integers(0, 2**32 - 1), st.integers(1, 5))
def test_scatter_has_at_most_k_distinct_vectors(seed, k):
    rng = np.random.default_rng(seed)
    r, logits = rng.normal(size=(4, 3, 2)), rng.normal(size=(4, 3, k))
    out = global_center_map(Tensor(r), Tensor(logits)).data
    assert len(np.unique(out.reshape(-1, 2), axis=0)) <= k


@given(st.integers(0, 2**32 - 1))
def test_centers_lie_in_convex_hull(seed):
    rng = np.random.default_rng(seed)
    r, logits = rng.normal(size=(3, 4, 5)), rng.normal(scale=5, size=(3, 4, 3))
    cc = class_centers(Tensor(r), Tensor(logits))
    assign = ops.softmax(Tensor(logits.reshape(12, 3).T), axis=-1).data
    np.testing.assert_allclose(assign.sum(-1), 1.0, atol=1e-9)
    flat = r.reshape(-1, 5)
    tol = 1e-12
    assert np.all(cc.centers.data >= flat.min(0) - tol) and np.all(cc.centers.data <= flat.max(0) + tol)


def test_patch_grid_geometry():
    g = PatchGrid(6, 7, 4, 3)
    assert (g.pad_h, g.pad_w, g.n_h, g.n_w, g.n_patches, g.padded) == (2, 2, 2, 3, 6, True)
    assert g.valid_mask().shape == (6, 4, 3)
    assert g.valid_mask().sum() == 42
    exact = PatchGrid(8, 8, 4, 4)
    assert not exact.padded and exact.valid_mask().all()
    with pytest.raises(DimensionError):
        PatchGrid(4, 4, 0, 2)


def test_split_examples(rng):
    x = rng.uniform(size=(4, 4, 2))
    whole = split_patches(Tensor(x), PatchGrid(4, 4, 4, 4)).data
    np.testing.assert_array_equal(whole[0], x)
    tiles = split_patches(Tensor(x), PatchGrid(4, 4, 2, 2)).data
    assert tiles.shape == (4, 2, 2, 2)
    np.testing.assert_array_equal(tiles[0], x[0:2, 0:2])
    np.testing.assert_array_equal(tiles[1], x[0:2, 2:4])
    with pytest.raises(DimensionError):
        split_patches(Tensor(x), PatchGrid(5, 4, 2, 2))


@given(st.integers(1, 9), st.integers(1, 9), st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_split_stitch_round_trip(h_img, w_img, ph, pw, seed):
    x = np.random.default_rng(seed).normal(size=(h_img, w_img, 3))
    grid = PatchGrid(h_img, w_img, ph, pw)
    tiles = split_patches(Tensor(x), grid)
    assert tiles.shape == (grid.n_patches, ph, pw, 3)
    np.testing.assert_array_equal(stitch_patches(tiles, grid).data, x)


def test_local_centers_full_image_equals_global(rng):
    r, d = rng.uniform(size=(4, 4, 3)), rng.uniform(size=(4, 4, 2))
    grid = PatchGrid(4, 4, 4, 4)
    local = local_class_centers(split_patches(Tensor(r), grid), split_patches(Tensor(d), grid)).data[0]
    np.testing.assert_array_equal(local, global_center_map(Tensor(r), Tensor(d)).data)


def test_local_centers_constant_logits_patch(rng):
    r = rng.uniform(size=(1, 2, 2, 3))
    d = np.broadcast_to([0.3, -1.0], (1, 2, 2, 2)).copy()
    out = local_class_centers(Tensor(r), Tensor(d)).data
    np.testing.assert_allclose(out, np.broadcast_to(r[0].reshape(-1, 3).mean(0), out.shape), rtol=0, atol=1e-15)


def test_local_centers_match_patch_loop(rng):
    r, d = rng.uniform(-1, 1, (4, 4, 3)), rng.uniform(-1, 1, (4, 4, 2))
    grid = PatchGrid(4, 4, 2, 2)
    out = local_class_centers(split_patches(Tensor(r), grid), split_patches(Tensor(d), grid))
    stitched = stitch_patches(out, grid).data
    assert np.abs(stitched - oracles.local_class_centers(r, d, 2, 2)).max() <= 1e-12


def test_masked_local_centers_ignore_padding(rng):
    # a padded patch must behave like the same patch without the padding
    r, d = rng.uniform(-1, 1, (3, 2, 3)), rng.uniform(-1, 1, (3, 2, 2))
    grid = PatchGrid(3, 2, 2, 2)
    out = local_class_centers(split_patches(Tensor(r), grid), split_patches(Tensor(d), grid), grid.valid_mask())
    stitched = stitch_patches(out, grid).data
    ref = np.concatenate(
        [oracles.local_class_centers(r[:2], d[:2], 2, 2), oracles.local_class_centers(r[2:], d[2:], 1, 2)]
    )
    assert np.abs(stitched - ref).max() <= 1e-12


def test_attention_inputs_contract(rng):
    grid = PatchGrid(8, 8, 2, 2)
    r, d = Tensor(rng.uniform(size=(8, 8, 16))), Tensor(rng.uniform(size=(8, 8, 3)))
    r_l, d_l = split_patches(r, grid), split_patches(d, grid)
    s_l = local_class_centers(r_l, d_l)
    s_g = split_patches(global_center_map(r, d), grid)
    xq, xk, xv = attention_inputs(r_l, s_l, s_g)
    assert xq is r_l and xk is s_l and xv is s_g
    assert xq.shape == (16, 2, 2, 16)
    full = PatchGrid(8, 8, 8, 8)
    s_l_full = local_class_centers(split_patches(r, full), split_patches(d, full))
    np.testing.assert_array_equal(s_l_full.data, split_patches(global_center_map(r, d), full).data)
    with pytest.raises(DimensionError):
        attention_inputs(r_l, s_l, Tensor(np.zeros((16, 2, 2, 8))))


def test_selection_carries_gradient_to_center_values(rng):
    # arg-max selection is piecewise constant; the selected values still pass gradient to r
    r = Tensor(rng.uniform(size=(2, 2, 3)), requires_grad=True)
    d = Tensor(rng.uniform(size=(2, 2, 2)), requires_grad=True)
    with GradTape() as tape:
        s = ops.sum(global_center_map(r, d))
    tape.backward(s)
    assert np.abs(r.grad).sum() > 0


def test_ccg_gradients():
    assert all(res.passed for res in run_suite("ccg"))
