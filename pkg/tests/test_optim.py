"""Adam recurrence against hand-evaluated steps."""

import numpy as np
import pytest

from tada.errors import TrainingError
from tada.optim import Adam
from tada.tensor import Tensor


def reference_adam(p, grads, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        p = p - lr * (m / (1 - beta1 ** t)) / (np.sqrt(v / (1 - beta2 ** t)) + eps)
    return p


def test_first_step_moves_by_about_lr():
    p = Tensor(np.array([1.0]), requires_grad=True)
    opt = Adam({"p": p}, lr=0.1)
    p.grad = np.array([1.0])
    opt.step()
    # bias correction makes the first step size lr up to the eps ripple
    assert abs(p.data[0] - 0.9) < 1e-6
    assert opt.step_count == 1


def test_zero_gradient_leaves_params_but_decays_moments():
    p = Tensor(np.array([2.0, -3.0]), requires_grad=True)
    opt = Adam({"p": p}, lr=0.5)
    p.grad = np.array([1.0, -1.0])
    opt.step()
    after_first = p.data.copy()
    m_first = opt.m["p"].copy()
    p.grad = np.zeros(2)
    opt.step()
    # zero grad still decays the first moment, so the param keeps drifting
    np.testing.assert_allclose(opt.m["p"], 0.9 * m_first)
    assert not np.array_equal(p.data, after_first)


def test_missing_gradient_skips_parameter():
    p = Tensor(np.array([1.0]), requires_grad=True)
    q = Tensor(np.array([5.0]), requires_grad=True)
    opt = Adam({"p": p, "q": q}, lr=0.1)
    p.grad = np.array([1.0])
    q.grad = None
    opt.step()
    assert q.data[0] == 5.0
    assert p.data[0] != 1.0


def test_two_identical_steps_move_monotonically():
    p = Tensor(np.array([1.0]), requires_grad=True)
    opt = Adam({"p": p}, lr=0.1)
    trail = [p.data[0]]
    for _ in range(2):
        p.grad = np.array([1.0])
        opt.step()
        trail.append(p.data[0])
    assert trail[0] > trail[1] > trail[2]


def test_matches_reference_recurrence_over_ten_steps():
    rng = np.random.default_rng(3)
    p0 = rng.normal(size=(4, 3))
    grads = [rng.normal(size=(4, 3)) for _ in range(10)]
    p = Tensor(p0.copy(), requires_grad=True)
    opt = Adam({"p": p}, lr=0.01)
    for g in grads:
        p.grad = g.copy()
        opt.step()
    np.testing.assert_allclose(p.data, reference_adam(p0, grads, lr=0.01),
                               rtol=0, atol=1e-14)


def test_non_finite_gradient_names_parameter():
    p = Tensor(np.array([1.0]), requires_grad=True)
    opt = Adam({"head.w": p})
    p.grad = np.array([np.nan])
    with pytest.raises(TrainingError, match="head.w"):
        opt.step()


def test_zero_grad_clears_buffers():
    p = Tensor(np.array([1.0]), requires_grad=True)
    opt = Adam({"p": p})
    p.grad = np.array([1.0])
    opt.zero_grad()
    assert p.grad is None
