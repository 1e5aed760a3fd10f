import numpy as np
import pytest

from rfinv import autodiff as ad


@pytest.fixture
def f64():
    """Run a test under float64 (gradient checks need the headroom)."""
    with ad.using_dtype("float64"):
        yield


def finite_difference(fn, params, h=1e-5):
    """Central-difference gradients of the scalar `fn()` w.r.t. each param.

    Perturbs parameter entries in place; `fn` must be a pure function of the
    current parameter values.
    """
    grads = []
    for p in params:
        g = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = float(fn().data)
            flat[i] = orig - h
            f_minus = float(fn().data)
            flat[i] = orig
            gflat[i] = (f_plus - f_minus) / (2.0 * h)
        grads.append(g)
    return grads


def assert_grads_close(analytic, numeric, rtol=1e-4, atol=1e-7):
    for a, n in zip(analytic, numeric):
        err = np.abs(a - n)
        tol = atol + rtol * np.maximum(np.abs(a), np.abs(n))
        worst = np.max(err - tol)
        assert np.all(err <= tol), (
            f"gradient mismatch: worst excess {worst:.3e}\n"
            f"analytic={a}\nnumeric={n}")


def check_gradients(fn, params, h=1e-5, rtol=1e-4, atol=1e-7):
    _, analytic = ad.value_and_grad(fn, params)
    numeric = finite_difference(fn, params, h=h)
    assert_grads_close(analytic, numeric, rtol=rtol, atol=atol)
