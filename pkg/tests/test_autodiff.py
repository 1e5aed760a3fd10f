import numpy as np
import pytest

from rfinv import autodiff as ad
from rfinv.autodiff import Tensor, value_and_grad

from conftest import check_gradients, finite_difference


def rand_param(rng, shape, requires_grad=True, lo=-2.0, hi=2.0):
    return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=requires_grad)


def test_square_scalar(f64):
    x = Tensor(3.0, requires_grad=True)
    v, (g,) = value_and_grad(lambda: x * x, [x])
    assert v == 9.0
    assert g == 6.0


def test_product_rule(f64):
    x = Tensor(2.0, requires_grad=True)
    y = Tensor(5.0, requires_grad=True)
    v, (gx, gy) = value_and_grad(lambda: x * y, [x, y])
    assert v == 10.0
    assert gx == 5.0 and gy == 2.0


def test_two_layer_perceptron_matches_finite_differences(f64):
    # 10 parameters: 2x3 weights + 3 bias + 3x1 weights + 1 bias + scalar gain.
    rng = np.random.default_rng(0)
    w1 = rand_param(rng, (2, 3))
    b1 = rand_param(rng, (3,))
    w2 = rand_param(rng, (3, 1))
    b2 = rand_param(rng, (1,))
    x = Tensor(rng.normal(size=(5, 2)))

    def fn():
        h = ad.sigmoid(x @ w1 + b1)
        return (h @ w2 + b2).mean()

    check_gradients(fn, [w1, b1, w2, b2], h=1e-4, rtol=1e-4)


# -- per-primitive finite-difference property suite -------------------------

def _proj(rng, t):
    """Random linear functional so the scalar depends on every entry."""
    r = Tensor(rng.normal(size=t.shape))
    return (t * r).sum()


PRIMITIVES = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "div": lambda a, b: a / (b * b + 0.5),
    "neg": lambda a: -a,
    "power": lambda a: a ** 3,
    "exp": lambda a: ad.exp(a),
    "log": lambda a: ad.log(a * a + 0.5),
    "sqrt": lambda a: ad.sqrt(a * a + 0.5),
    "sin": lambda a: ad.sin(a),
    "cos": lambda a: ad.cos(a),
    "sigmoid": lambda a: ad.sigmoid(a),
    "softplus": lambda a: ad.softplus(a),
    "silu": lambda a: ad.silu(a),
    "matmul": lambda a, b: a.reshape(4, 3) @ b.reshape(3, 4),
    "sum_axis": lambda a: a.reshape(3, 4).sum(axis=1),
    "mean_axis": lambda a: a.reshape(3, 4).mean(axis=0),
    "cumsum": lambda a: ad.cumsum(a.reshape(3, 4), axis=1),
    "reshape": lambda a: a.reshape(4, 3),
    "transpose": lambda a: a.reshape(3, 4).transpose(1, 0),
    "concat": lambda a, b: ad.concat([a.reshape(3, 4), b.reshape(3, 4)], axis=1),
    "getitem": lambda a: a.reshape(3, 4)[1:, ::2],
    "take": lambda a: ad.take(a.reshape(4, 3), np.array([0, 2, 2, 1])),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients_match_finite_differences(name, f64):
    op = PRIMITIVES[name]
    n_args = op.__code__.co_argcount
    base = np.frombuffer(name.encode().ljust(8, b"_")[:8], dtype=np.uint32)
    for seed in range(100):
        rng = np.random.default_rng([int(base[0]), int(base[1]), seed])
        args = [rand_param(rng, (12,)) for _ in range(n_args)]
        proj = Tensor(rng.normal(size=op(*args).shape))

        def fn():
            return (op(*args) * proj).sum()

        check_gradients(fn, args, h=1e-5, rtol=1e-4, atol=1e-8)


def test_broadcast_gradients(f64):
    rng = np.random.default_rng(3)
    a = rand_param(rng, (5, 4))
    b = rand_param(rng, (4,))
    c = rand_param(rng, (5, 1))
    check_gradients(lambda: ((a + b) * c).sum(), [a, b, c])


def test_conv2d_gradients(f64):
    rng = np.random.default_rng(4)
    x = rand_param(rng, (2, 3, 6, 6))
    w = rand_param(rng, (4, 3, 3, 3))
    b = rand_param(rng, (4,))
    check_gradients(lambda: ad.conv2d(x, w, b, stride=2, pad=1).sum(), [x, w, b])


def test_conv2d_matches_direct_convolution(f64):
    rng = np.random.default_rng(5)
    x = rng.normal(size=(1, 2, 5, 5))
    w = rng.normal(size=(3, 2, 3, 3))
    out = ad.conv2d(Tensor(x), Tensor(w), stride=1, pad=0).numpy()
    # brute-force reference
    ref = np.zeros((1, 3, 3, 3))
    for f in range(3):
        for i in range(3):
            for j in range(3):
                ref[0, f, i, j] = np.sum(x[0, :, i:i + 3, j:j + 3] * w[f])
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_gradient_additivity_is_exact(f64):
    rng = np.random.default_rng(6)
    x = rand_param(rng, (8,))

    f = lambda: (x * x).mean()
    g = lambda: ad.sin(x).mean()
    _, (gf,) = value_and_grad(f, [x])
    _, (gg,) = value_and_grad(g, [x])
    _, (gfg,) = value_and_grad(lambda: f() + g(), [x])
    np.testing.assert_array_equal(gfg, gf + gg)


def test_untouched_parameter_gets_zero_gradient(f64):
    x = Tensor(np.ones(3), requires_grad=True)
    unused = Tensor(np.ones(4), requires_grad=True)
    _, grads = value_and_grad(lambda: (x * 2.0).sum(), [x, unused])
    np.testing.assert_array_equal(grads[1], np.zeros(4))


def test_bit_determinism(f64):
    def run():
        rng = np.random.default_rng(7)
        x = Tensor(rng.normal(size=(6, 6)), requires_grad=True)
        w = Tensor(rng.normal(size=(6, 6)), requires_grad=True)
        v, gs = value_and_grad(lambda: ad.silu(x @ w).mean(), [x, w])
        return v, gs

    v1, g1 = run()
    v2, g2 = run()
    assert v1 == v2
    for a, b in zip(g1, g2):
        np.testing.assert_array_equal(a, b)


def test_non_finite_forward_names_primitive(f64):
    x = Tensor(np.array([1.0, -1.0]), requires_grad=True)
    with pytest.raises(ad.NonFiniteError, match="log"):
        value_and_grad(lambda: ad.log(x).sum(), [x])


def test_non_finite_via_overflow_is_caught(f64):
    x = Tensor(np.array([1000.0]), requires_grad=True)
    with pytest.raises(ad.NonFiniteError):
        value_and_grad(lambda: ad.exp(x * x).sum(), [x])


def test_value_and_grad_shapes_match_params(f64):
    rng = np.random.default_rng(8)
    shapes = [(3, 4), (4,), (2, 2, 2)]
    params = [rand_param(rng, s) for s in shapes]

    def fn():
        total = (params[0] @ params[1].reshape(4, 1)).sum()
        return total + (params[2] * params[2]).sum()

    _, grads = value_and_grad(fn, params)
    for p, g in zip(params, grads):
        assert g.shape == p.data.shape


def test_detach_blocks_gradient(f64):
    x = Tensor(np.array([2.0]), requires_grad=True)
    _, (g,) = value_and_grad(lambda: (ad.stop_grad(x) * x).sum(), [x])
    assert g == 2.0  # only the live factor contributes


def test_requires_grad_validation(f64):
    x = Tensor(np.ones(2))
    with pytest.raises(ValueError):
        value_and_grad(lambda: (x * x).sum(), [x])


def test_scalar_output_required(f64):
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        value_and_grad(lambda: x * 2.0, [x])
