import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from sacanet.errors import InputError
from sacanet.metrics import ConfusionMatrix, metrics


def test_perfect_prediction():
    gt = np.array([[0, 1], [2, 2]])
    m = metrics(ConfusionMatrix.from_labels(gt, gt, 3))
    assert m["AF"] == m["mIoU"] == m["OA"] == 1.0


def test_two_class_hand_example():
    m = metrics(ConfusionMatrix(np.array([[3, 1], [1, 3]])))
    assert math.isclose(m["OA"], 0.75)
    np.testing.assert_allclose(m["iou"], [0.6, 0.6])
    assert math.isclose(m["mIoU"], 0.6)
    np.testing.assert_allclose(m["f1"], [0.75, 0.75])
    assert math.isclose(m["AF"], 0.75)


def test_absent_class_is_excluded():
    cm = ConfusionMatrix(np.array([[2, 0, 0], [0, 0, 0], [1, 0, 1]]))
    m = metrics(cm)
    assert math.isnan(m["iou"][1]) and math.isnan(m["f1"][1])
    assert math.isclose(m["mIoU"], (2 / 3 + 1 / 2) / 2)
    assert np.isfinite(m["AF"])


def test_zero_scored_pixels_is_an_error():
    with pytest.raises(InputError):
        metrics(ConfusionMatrix.empty(3))
    with pytest.raises(InputError):
        metrics(ConfusionMatrix.from_labels(np.zeros(4), np.full(4, 255), 2))


def test_update_validation():
    cm = ConfusionMatrix.empty(2)
    with pytest.raises(InputError):
        cm.update(np.zeros(3), np.zeros(4))
    with pytest.raises(InputError):
        cm.update(np.array([0, 2]), np.array([0, 1]))


def test_confusion_matches_loop_and_skips_ignored(rng):
    pred = rng.integers(0, 4, size=(6, 7))
    gt = rng.integers(0, 4, size=(6, 7))
    gt[0, :3] = 255
    cm = ConfusionMatrix.from_labels(pred, gt, 4).counts
    keep = gt != 255
    np.testing.assert_array_equal(cm, oracles.confusion(pred[keep], gt[keep], 4))
    assert cm.sum() == keep.sum() and cm.min() >= 0


@given(st.integers(0, 2**32 - 1), st.integers(2, 6))
def test_metrics_invariant_under_class_relabeling(seed, k):
    rng = np.random.default_rng(seed)
    counts = rng.integers(0, 20, size=(k, k))
    counts[0, 0] += 1
    perm = rng.permutation(k)
    a = metrics(ConfusionMatrix(counts))
    b = metrics(ConfusionMatrix(counts[np.ix_(perm, perm)]))
    assert a["OA"] == b["OA"]
    np.testing.assert_allclose(np.array(a["iou"])[perm], b["iou"], rtol=1e-15)
    np.testing.assert_allclose(np.array(a["f1"])[perm], b["f1"], rtol=1e-15)
    assert math.isclose(a["mIoU"], b["mIoU"], rel_tol=1e-12)
