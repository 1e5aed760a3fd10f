import numpy as np
import pytest

from rfinv.adam import Adam, AdamState, adam_step
from rfinv.autodiff import Tensor


def test_zero_gradient_leaves_params_unchanged(f64):
    p = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    before = p.data.copy()
    state = AdamState([p])
    adam_step([p], [np.zeros(3)], state, lr=1e-3)
    np.testing.assert_array_equal(p.data, before)
    assert state.step == 1


def test_first_step_hand_value(f64):
    # param 0, grad 1, lr 1e-3: m_hat = v_hat = 1 -> step is -lr/(1+eps).
    p = Tensor(np.array([0.0]), requires_grad=True)
    state = AdamState([p], beta1=0.9, beta2=0.999, eps=1e-8)
    adam_step([p], [np.array([1.0])], state, lr=1e-3)
    expected = -1e-3 / (1.0 + 1e-8)
    np.testing.assert_allclose(p.data, [expected], rtol=1e-12)
    np.testing.assert_allclose(p.data, [-1e-3], rtol=1e-6)


def test_two_steps_match_hand_recurrence(f64):
    lr, b1, b2, eps = 1e-3, 0.9, 0.999, 1e-8
    p = Tensor(np.array([0.0]), requires_grad=True)
    state = AdamState([p], beta1=b1, beta2=b2, eps=eps)
    adam_step([p], [np.array([1.0])], state, lr)
    adam_step([p], [np.array([1.0])], state, lr)

    # independent reference recurrence
    theta, m, v = 0.0, 0.0, 0.0
    for t in (1, 2):
        m = b1 * m + (1 - b1) * 1.0
        v = b2 * v + (1 - b2) * 1.0
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        theta -= lr * m_hat / (np.sqrt(v_hat) + eps)
    np.testing.assert_allclose(p.data, [theta], atol=1e-12)


def test_shape_mismatch_raises(f64):
    p = Tensor(np.zeros(3), requires_grad=True)
    state = AdamState([p])
    with pytest.raises(ValueError, match="shape"):
        adam_step([p], [np.zeros(4)], state, lr=1e-3)


def test_non_finite_gradient_raises(f64):
    p = Tensor(np.zeros(2), requires_grad=True)
    state = AdamState([p])
    with pytest.raises(ValueError, match="non-finite"):
        adam_step([p], [np.array([np.nan, 0.0])], state, lr=1e-3)


def test_step_counter_strictly_increases(f64):
    p = Tensor(np.zeros(2), requires_grad=True)
    opt = Adam([p], lr=1e-2)
    for expected in (1, 2, 3):
        opt.step([np.ones(2)])
        assert opt.state.step == expected


def test_moments_start_at_zero(f64):
    p = Tensor(np.ones((2, 2)), requires_grad=True)
    state = AdamState([p])
    assert np.all(state.m[0] == 0) and np.all(state.v[0] == 0)
