"""Reverse-mode automatic differentiation over dense numpy arrays.

All differentiable computation in this package runs through the `Tensor`
type defined here.  Operations executed while a `GradientTape` is active are
recorded in evaluation order; `GradientTape.gradients` replays the record
backwards to accumulate gradients.  Only tensors reachable from a tensor
with `requires_grad=True` are recorded, so constant-only computation (e.g.
rendering a frozen generator) costs nothing beyond the numpy work itself.

Precision is a process-wide switch (`set_default_dtype`): float64 for
gradient checking, float32 for training loops.
"""

from __future__ import annotations

import contextlib

import numpy as np

_DEFAULT_DTYPE = np.float64


def set_default_dtype(dtype):
    """Set the dtype used for newly created tensors ('float32'/'float64')."""
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype!r}")
    _DEFAULT_DTYPE = dtype


def default_dtype():
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def using_dtype(dtype):
    """Temporarily switch the default dtype (used by gradient-check tests)."""
    prev = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(prev)


class NonFiniteError(ArithmeticError):
    """A primitive produced NaN/Inf.  Carries the offending op's name."""

    def __init__(self, op, where="forward"):
        super().__init__(f"non-finite value in {where} of primitive '{op}'")
        self.op = op
        self.where = where


def _is_finite(arr) -> bool:
    # One-pass check: any NaN/Inf in `arr` makes the sum non-finite.
    return bool(np.isfinite(np.sum(arr)))


class Tensor:
    """A dense array plus the bookkeeping needed for reverse-mode gradients."""

    __slots__ = ("data", "requires_grad", "_tracked")

    def __init__(self, data, requires_grad=False):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=_DEFAULT_DTYPE)
        self.requires_grad = bool(requires_grad)
        self._tracked = self.requires_grad

    # -- inspection ---------------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        """Constant view of this tensor's values (cuts the gradient path)."""
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, tracked={self._tracked})"

    # -- operators ----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# Tape
# ---------------------------------------------------------------------------

class _TapeEntry:
    __slots__ = ("op", "out", "parents", "backward")

    def __init__(self, op, out, parents, backward):
        self.op = op
        self.out = out
        self.parents = parents
        self.backward = backward  # grad_out -> tuple of parent grads (or None)


class GradientTape:
    """Records primitive ops in evaluation order for one backward replay.

    Evaluation order is a topological order of the compute graph, so walking
    the record in reverse visits every op after all of its consumers.
    """

    _stack: list["GradientTape"] = []

    def __init__(self, strict=False):
        self.ops: list[_TapeEntry] = []
        self.strict = strict  # check every primitive output for finiteness

    def __enter__(self):
        GradientTape._stack.append(self)
        return self

    def __exit__(self, *exc):
        GradientTape._stack.pop()
        return False

    @classmethod
    def current(cls):
        return cls._stack[-1] if cls._stack else None

    def gradients(self, output: Tensor, params) -> list[np.ndarray]:
        """Accumulated d(output)/d(p) for each p; zeros for untouched params."""
        if output.data.size != 1:
            raise ValueError("gradients require a scalar output")
        grads: dict[int, np.ndarray] = {
            id(output): np.ones_like(output.data)
        }
        for entry in reversed(self.ops):
            g_out = grads.pop(id(entry.out), None)
            if g_out is None:
                continue
            parent_grads = entry.backward(g_out)
            for parent, g in zip(entry.parents, parent_grads):
                if g is None or not parent._tracked:
                    continue
                if self.strict and not _is_finite(g):
                    raise NonFiniteError(entry.op, "backward")
                acc = grads.get(id(parent))
                grads[id(parent)] = g if acc is None else acc + g
        return [
            grads.get(id(p), np.zeros_like(p.data)) for p in params
        ]


def _record(op, out: Tensor, parents, backward):
    tape = GradientTape.current()
    if tape is None:
        return out
    if tape.strict and not _is_finite(out.data):
        raise NonFiniteError(op, "forward")
    if not any(p._tracked for p in parents):
        return out
    out._tracked = True
    tape.ops.append(_TapeEntry(op, out, parents, backward))
    return out


def value_and_grad(fn, params, strict=False):
    """Evaluate the scalar `fn()` and d(fn)/d(p) for every tensor in `params`.

    `fn` is a zero-argument closure over `params` (and must be replayable:
    if a non-finite value is detected on the fast path, the function is
    re-evaluated with per-primitive checking to name the offending op).
    Returns `(value, grads)` with one numpy array per parameter, shaped like
    the parameter; untouched parameters get exact zeros.
    """
    for p in params:
        if not isinstance(p, Tensor) or not p.requires_grad:
            raise ValueError("params must be Tensors with requires_grad=True")
    with GradientTape(strict=strict) as tape:
        out = fn()
    if not isinstance(out, Tensor) or out.data.size != 1:
        raise ValueError("fn must evaluate to a scalar Tensor")
    bad = not _is_finite(out.data)
    grads = None
    if not bad:
        grads = tape.gradients(out, params)
        bad = any(not _is_finite(g) for g in grads)
    if bad and not strict:
        # Diagnostic replay: locate the first primitive that went non-finite.
        return value_and_grad(fn, params, strict=True)
    if bad:
        raise NonFiniteError("<output>", "forward")
    return out.item(), grads


# ---------------------------------------------------------------------------
# Shape helpers
# ---------------------------------------------------------------------------

def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum `grad` down to `shape` (the inverse of numpy broadcasting)."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _expand(grad: np.ndarray, shape, axis, keepdims) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(grad, shape)
    if not keepdims:
        axes = axis if isinstance(axis, tuple) else (axis,)
        axes = tuple(a % len(shape) for a in axes)
        g_shape = [1 if i in axes else s for i, s in enumerate(shape)]
        grad = grad.reshape(g_shape)
    return np.broadcast_to(grad, shape)


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data)
    return _record("add", out, (a, b), lambda g: (
        _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data - b.data)
    return _record("sub", out, (a, b), lambda g: (
        _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data)
    return _record("mul", out, (a, b), lambda g: (
        _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data / b.data)
    return _record("div", out, (a, b), lambda g: (
        _unbroadcast(g / b.data, a.shape),
        _unbroadcast(-g * a.data / (b.data * b.data), b.shape)))


def neg(a):
    a = as_tensor(a)
    out = Tensor(-a.data)
    return _record("neg", out, (a,), lambda g: (-g,))


def power(a, p):
    a = as_tensor(a)
    p = float(p)
    out = Tensor(a.data ** p)
    return _record("power", out, (a,), lambda g: (g * p * a.data ** (p - 1.0),))


def exp(a):
    a = as_tensor(a)
    out = Tensor(np.exp(a.data))
    return _record("exp", out, (a,), lambda g: (g * out.data,))


def log(a):
    a = as_tensor(a)
    out = Tensor(np.log(a.data))
    return _record("log", out, (a,), lambda g: (g / a.data,))


def sqrt(a):
    a = as_tensor(a)
    out = Tensor(np.sqrt(a.data))
    return _record("sqrt", out, (a,), lambda g: (g * 0.5 / out.data,))


def sin(a):
    a = as_tensor(a)
    out = Tensor(np.sin(a.data))
    return _record("sin", out, (a,), lambda g: (g * np.cos(a.data),))


def cos(a):
    a = as_tensor(a)
    out = Tensor(np.cos(a.data))
    return _record("cos", out, (a,), lambda g: (-g * np.sin(a.data),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # exp overflow for very negative x saturates to inf -> 1/(1+inf) = 0,
    # which is the correct limit; silence the spurious warning only.
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def sigmoid(a):
    a = as_tensor(a)
    out = Tensor(_sigmoid(a.data))
    return _record("sigmoid", out, (a,),
                   lambda g: (g * out.data * (1.0 - out.data),))


def softplus(a):
    a = as_tensor(a)
    out = Tensor(np.logaddexp(0.0, a.data))
    return _record("softplus", out, (a,), lambda g: (g * _sigmoid(a.data),))


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data @ b.data)
    return _record("matmul", out, (a, b), lambda g: (
        g @ b.data.T, a.data.T @ g))


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))
    return _record("sum", out, (a,),
                   lambda g: (_expand(g, a.shape, axis, keepdims),))


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = Tensor(a.data.mean(axis=axis, keepdims=keepdims))
    n = a.data.size / max(out.data.size, 1)
    return _record("mean", out, (a,),
                   lambda g: (_expand(g / n, a.shape, axis, keepdims),))


def cumsum(a, axis=-1):
    a = as_tensor(a)
    out = Tensor(np.cumsum(a.data, axis=axis))

    def backward(g):
        rev = np.flip(g, axis=axis)
        return (np.flip(np.cumsum(rev, axis=axis), axis=axis),)

    return _record("cumsum", out, (a,), backward)


def reshape(a, shape):
    a = as_tensor(a)
    out = Tensor(a.data.reshape(shape))
    return _record("reshape", out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None):
    a = as_tensor(a)
    out = Tensor(a.data.transpose(axes))
    if axes is None:
        inv = None
    else:
        inv = tuple(np.argsort(axes))
    return _record("transpose", out, (a,), lambda g: (g.transpose(inv),))


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _record("concat", out, tuple(tensors), backward)


def getitem(a, key):
    a = as_tensor(a)
    out = Tensor(a.data[key])

    def backward(g):
        acc = np.zeros_like(a.data)
        np.add.at(acc, key, g)
        return (acc,)

    return _record("getitem", out, (a,), backward)


def take(a, idx, axis=0):
    """Gather rows along `axis` by integer index (scatter-add backward)."""
    a = as_tensor(a)
    idx = np.asarray(idx)
    out = Tensor(np.take(a.data, idx, axis=axis))

    def backward(g):
        acc = np.zeros_like(a.data)
        if axis == 0:
            np.add.at(acc, idx, g)
        else:
            acc_m = np.moveaxis(acc, axis, 0)
            np.add.at(acc_m, idx, np.moveaxis(g, axis, 0))
        return (acc,)

    return _record("take", out, (a,), backward)


def stop_grad(a):
    """Pass values through, contribute no gradient (detached constant)."""
    return as_tensor(a).detach()


def conv2d(x, w, b=None, stride=1, pad=0):
    """2-D convolution, NCHW layout.

    x: (N, C, H, W); w: (F, C, kh, kw); b: (F,) optional.
    Returns (N, F, Ho, Wo) with Ho = (H + 2*pad - kh)//stride + 1.
    """
    x, w = as_tensor(x), as_tensor(w)
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        parents.append(b)
    n, c, h, wd = x.shape
    f, c2, kh, kw = w.shape
    if c != c2:
        raise ValueError(f"conv2d channel mismatch: input {c}, kernel {c2}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]                     # (N,C,Ho,Wo,kh,kw)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    wmat = w.data.reshape(f, c * kh * kw).T                 # (C*kh*kw, F)
    out_data = cols @ wmat
    if b is not None:
        out_data = out_data + b.data
    out = Tensor(out_data.reshape(n, ho, wo, f).transpose(0, 3, 1, 2))

    def backward(g):
        g_cols = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, f)
        dw = (cols.T @ g_cols).T.reshape(w.shape)
        dcols = (g_cols @ wmat.T).reshape(n, ho, wo, c, kh, kw)
        dxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i:i + ho * stride:stride, j:j + wo * stride:stride] += \
                    dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        dx = dxp[:, :, pad:pad + h, pad:pad + wd] if pad else dxp
        if b is not None:
            return dx, dw, g.sum(axis=(0, 2, 3))
        return dx, dw

    return _record("conv2d", out, tuple(parents), backward)


# ---------------------------------------------------------------------------
# Composite helpers (built from primitives, differentiable end to end)
# ---------------------------------------------------------------------------

def silu(x):
    """x * sigmoid(x), fused (hot path of every generator layer)."""
    x = as_tensor(x)
    s = _sigmoid(x.data)
    out = Tensor(x.data * s)

    def backward(g):
        # d/dx = s + out*(1-s); built in place to limit memory traffic.
        d = 1.0 - s
        d *= out.data
        d += s
        d *= g
        return (d,)

    return _record("silu", out, (x,), backward)


def square(x):
    x = as_tensor(x)
    return mul(x, x)


def mse(a, b):
    return tmean(square(sub(a, b)))


def dot(a, b):
    return tsum(mul(a, b))


def l2norm(a, eps=1e-12):
    return sqrt(tsum(square(a)) + eps)


def logsumexp(a, axis=-1, keepdims=False):
    """Stable log-sum-exp; the max shift is a detached constant."""
    a = as_tensor(a)
    m = np.max(a.data, axis=axis, keepdims=True)
    shifted = sub(a, Tensor(m))
    out = log(tsum(exp(shifted), axis=axis, keepdims=True)) + Tensor(m)
    if not keepdims:
        squeezed = tuple(s for i, s in enumerate(a.shape) if i != axis % a.ndim)
        out = reshape(out, squeezed)
    return out
