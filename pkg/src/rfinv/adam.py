"""Adam with bias correction, operating on the autodiff Tensor type."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, _is_finite


class AdamState:
    """First/second moment accumulators plus the step counter.

    Moments start at zero and mirror the parameter shapes one to one.
    """

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.step = 0
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps


def adam_step(params, grads, state: AdamState, lr):
    """One bias-corrected Adam update, in place on `params`.

    theta <- theta - lr * m_hat / (sqrt(v_hat) + eps), with
    m_hat = m / (1 - beta1^t), v_hat = v / (1 - beta2^t).
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params/grads/state length mismatch")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for i, (p, g) in enumerate(zip(params, grads)):
        g = np.asarray(g)
        if g.shape != p.data.shape:
            raise ValueError(
                f"grad shape {g.shape} does not match param shape {p.data.shape}")
        if not _is_finite(g):
            raise ValueError("non-finite gradient passed to adam_step")
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g
        m_hat = state.m[i] / (1.0 - b1 ** t)
        v_hat = state.v[i] / (1.0 - b2 ** t)
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.data.dtype)
    return params, state


class Adam:
    """Convenience wrapper tying a parameter list to its AdamState."""

    def __init__(self, params: list[Tensor], lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.state = AdamState(self.params, beta1, beta2, eps)

    def step(self, grads):
        adam_step(self.params, grads, self.state, self.lr)
