import numpy as np
import pytest

from sacanet.errors import InputError
from sacanet.pipeline import SacaConfig
from sacanet.tensor import Tensor
from sacanet.train import make_toy_dataset, poly_lr, sgd_step, toy_splits, train_toy

SMALL = dict(height=16, width=16, c_backbone=4, c_attn=4, epsilon=2, patch_h=2, patch_w=2, xi=1)


def test_poly_lr_endpoints():
    assert poly_lr(0.01, 0, 500) == 0.01
    assert poly_lr(0.01, 500, 500) == 0.0
    assert 0 < poly_lr(0.01, 499, 500) < 0.01 * (1 / 500) ** 0.9 * 1.0001
    lrs = [poly_lr(0.01, s, 100) for s in range(100)]
    assert all(a > b for a, b in zip(lrs, lrs[1:]))


def test_weight_decay_alone_is_geometric():
    p = Tensor(np.array([3.0, -4.0]), requires_grad=True)
    lr, wd = 0.5, 0.1
    for _ in range(10):
        sgd_step([p], lr, wd)
    np.testing.assert_allclose(np.linalg.norm(p.data), 5.0 * (1 - lr * wd) ** 10, rtol=1e-14)


def test_sgd_step_applies_gradient_and_clears_it():
    p = Tensor(np.array([1.0]), requires_grad=True)
    p.grad = np.array([2.0])
    sgd_step([p], 0.1, 0.0)
    assert p.data[0] == pytest.approx(0.8) and p.grad is None


def test_toy_dataset_is_seeded_and_well_formed():
    a = make_toy_dataset(3, 16, 16, 4, seed=1)
    b = make_toy_dataset(3, 16, 16, 4, seed=1)
    for (ia, la), (ib, lb) in zip(a, b):
        assert np.array_equal(ia, ib) and np.array_equal(la, lb)
        assert ia.shape == (16, 16, 3) and la.shape == (16, 16) and la.dtype == np.uint8
        assert la.max() < 4
    other = make_toy_dataset(3, 16, 16, 4, seed=2)
    assert not np.array_equal(a[0][0], other[0][0])


def test_splits_differ():
    train, held = toy_splits(SacaConfig(num_images=2, eval_images=2))
    assert not np.array_equal(train[0][1], held[0][1])


def test_empty_dataset_is_rejected():
    with pytest.raises(InputError):
        train_toy(SacaConfig(**SMALL), [])


def test_single_sample_loss_decreases():
    cfg = SacaConfig(**SMALL, steps=200, learning_rate=0.1)
    data = make_toy_dataset(1, 16, 16, 4, seed=0)
    _, trace = train_toy(cfg, data)
    assert len(trace.losses) == 200
    assert trace.losses[-1] < trace.losses[0]
    assert trace.lrs[0] == 0.1 and set(trace.order) == {0}


def test_trace_is_bit_identical_across_runs():
    cfg = SacaConfig(**SMALL, steps=20, learning_rate=0.1, num_images=3)
    data = make_toy_dataset(3, 16, 16, 4, seed=0)
    _, a = train_toy(cfg, data)
    _, b = train_toy(cfg, data)
    assert a.to_dict() == b.to_dict()
    assert sorted(a.order[:3]) == [0, 1, 2]
