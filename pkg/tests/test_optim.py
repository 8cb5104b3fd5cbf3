import math

import numpy as np
import pytest

from longformer_engine.errors import UsageError
from longformer_engine.optim import (
    AdamW,
    clip_grad_norm,
    global_grad_norm,
    lr_at,
    mask_gradients,
    warmup_steps_for,
)
from longformer_engine.tensor import Tensor


def leaf(values):
    return Tensor(np.asarray(values, dtype=np.float64), requires_grad=True)


@pytest.mark.parametrize("steps, fraction, cap, expected", [
    (200, 0.1, 10_000, 20),
    (430_000, 0.1, 10_000, 10_000),
    (15, 0.1, 10_000, 2),
    (30, 0.1, 10_000, 3),
    (100, 0.0, 10_000, 0),
])
def test_warmup_steps(steps, fraction, cap, expected):
    assert warmup_steps_for(steps, fraction, cap) == expected


def test_linear_warmup_then_constant():
    assert lr_at(1, 1e-3, 100, 10) == pytest.approx(1e-4)
    assert lr_at(5, 1e-3, 100, 10) == pytest.approx(5e-4)
    assert lr_at(10, 1e-3, 100, 10) == pytest.approx(1e-3)
    assert lr_at(90, 1e-3, 100, 10) == pytest.approx(1e-3)
    assert lr_at(1, 1e-3, 100, 0) == pytest.approx(1e-3)


def test_decay_schedules():
    assert lr_at(55, 1.0, 100, 10, "cosine") == pytest.approx(0.5)
    assert lr_at(100, 1.0, 100, 10, "cosine") == pytest.approx(0.0, abs=1e-12)
    assert lr_at(55, 1.0, 100, 10, "polynomial") == pytest.approx(0.125)
    assert lr_at(100, 1.0, 100, 10, "polynomial") == pytest.approx(0.0)
    with pytest.raises(UsageError):
        lr_at(0, 1.0, 100, 10)
    with pytest.raises(UsageError):
        lr_at(50, 1.0, 100, 10, "step")


def test_clip_scales_to_max_norm():
    a, b = leaf([0.0, 0.0]), leaf([0.0])
    a.grad = np.array([6.0, 0.0])
    b.grad = np.array([8.0])
    assert clip_grad_norm([a, b], 0.25) == pytest.approx(10.0)
    assert global_grad_norm([a, b]) == pytest.approx(0.25)
    np.testing.assert_allclose(a.grad, [0.15, 0.0])
    np.testing.assert_allclose(b.grad, [0.2])


def test_clip_leaves_small_gradients_alone():
    a = leaf([1.0])
    a.grad = np.array([0.1])
    assert clip_grad_norm([a], 0.25) == pytest.approx(0.1)
    np.testing.assert_array_equal(a.grad, [0.1])


def test_adamw_first_step_moves_by_lr_times_sign():
    w = leaf([[1.0, -2.0]])
    w.grad = np.array([[0.5, -3.0]])
    AdamW({"w": w}, lr=0.01, weight_decay=0.0).step()
    np.testing.assert_allclose(w.data, [[0.99, -1.99]], atol=1e-6)


def test_weight_decay_skips_vectors():
    matrix, gain = leaf(np.ones((2, 2))), leaf(np.ones(2))
    matrix.grad = np.zeros((2, 2))
    gain.grad = np.zeros(2)
    AdamW({"m": matrix, "g": gain}, lr=0.1, weight_decay=0.5).step()
    np.testing.assert_allclose(matrix.data, 0.95)
    np.testing.assert_array_equal(gain.data, 1.0)


def test_masked_entries_never_change():
    w = leaf(np.arange(6.0).reshape(2, 3))
    frozen = leaf([1.0, 2.0])
    before = w.data.copy()
    masks = {"w": np.array([[True, False, True], [False, False, True]]), "frozen": np.zeros(2, dtype=bool)}
    opt = AdamW({"w": w, "frozen": frozen}, lr=0.1, masks=masks)
    for _ in range(3):
        w.grad = np.ones((2, 3))
        frozen.grad = np.ones(2)
        mask_gradients(opt.params, masks)
        assert frozen.grad.sum() == 0.0
        opt.step()
    np.testing.assert_array_equal(w.data[~masks["w"]], before[~masks["w"]])
    assert (w.data[masks["w"]] < before[masks["w"]]).all()
    np.testing.assert_array_equal(frozen.data, [1.0, 2.0])
    assert math.isfinite(float(w.data.sum()))


def test_freeze_applied_after_construction_is_honoured():
    w = leaf([[1.0, 2.0]])
    masks = {}
    opt = AdamW({"w": w}, lr=0.1, masks=masks)
    masks["w"] = np.zeros((1, 2), dtype=bool)
    w.grad = np.ones((1, 2))
    opt.step()
    np.testing.assert_array_equal(w.data, [[1.0, 2.0]])
