"""Reverse-mode automatic differentiation over small dense numpy arrays.

The graph is built dynamically: every op returns a :class:`Tensor` that
remembers its parents and a closure mapping the output gradient to parent
gradients. :func:`backward` walks the graph once in reverse topological
order. Ops used by the model are fused (affine maps over a batch of
instantiations, pooling, drift) so that a sequence builds a few thousand
nodes rather than tens of thousands.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

_GRAD_ENABLED = True


class NonFiniteError(FloatingPointError):
    """Raised when a forward op produces NaN or infinity."""


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording the graph (sampling, prediction)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("value", "grad", "parents", "backward_fn", "requires_grad", "name")

    def __init__(self, value, parents=(), backward_fn=None, requires_grad=False, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __len__(self):
        return len(self.value)

    def __repr__(self):
        label = f" {self.name}" if self.name else ""
        return f"Tensor{label}({self.value!r})"

    def item(self) -> float:
        return float(np.asarray(self.value).item())

    def zero_grad(self):
        self.grad = None

    # operator sugar
    def __add__(self, other):
        return add(self, as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, as_tensor(other))

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, as_tensor(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __getitem__(self, idx):
        return take(self, idx)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> Tensor:
    return Tensor(x)


def parameter(value, name=None) -> Tensor:
    return Tensor(value, requires_grad=True, name=name)


def _check(value: np.ndarray, opname: str) -> np.ndarray:
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(f"non-finite output from {opname}")
    return value


def _make(value, parents: Sequence[Tensor], backward_fn: Callable, opname: str) -> Tensor:
    value = _check(np.asarray(value, dtype=np.float64), opname)
    if not _GRAD_ENABLED or not any(p.requires_grad for p in parents):
        return Tensor(value)
    return Tensor(value, tuple(parents), backward_fn, requires_grad=True)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise and structural ops


def add(a: Tensor, b: Tensor) -> Tensor:
    sa, sb = a.shape, b.shape
    return _make(a.value + b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    sa, sb = a.shape, b.shape
    return _make(a.value - b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    av, bv = a.value, b.value
    return _make(
        av * bv, (a, b), lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)), "mul"
    )


def div(a: Tensor, b: Tensor) -> Tensor:
    av, bv = a.value, b.value
    out = av / bv
    return _make(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / bv, av.shape), _unbroadcast(-g * out / bv, bv.shape)),
        "div",
    )


def scale(a: Tensor, k: float) -> Tensor:
    return _make(a.value * k, (a,), lambda g: (g * k,), "scale")


def sum_list(xs: Sequence[Tensor]) -> Tensor:
    xs = list(xs)
    if len(xs) == 1:
        return xs[0]
    value = xs[0].value.copy()
    for x in xs[1:]:
        value = value + x.value
    shapes = [x.shape for x in xs]
    return _make(value, xs, lambda g: tuple(_unbroadcast(g, s) for s in shapes), "sum_list")


def total(a: Tensor) -> Tensor:
    shape = a.shape
    return _make(a.value.sum(), (a,), lambda g: (np.broadcast_to(g, shape).copy(),), "total")


def sum_cols(a: Tensor) -> Tensor:
    """Sum a (d, M) tensor over its columns, giving a length-d vector."""
    M = a.shape[1]
    return _make(a.value.sum(axis=1), (a,), lambda g: (np.repeat(g[:, None], M, axis=1),), "sum_cols")


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _make(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def where(mask: np.ndarray, a: Tensor, b: Tensor) -> Tensor:
    """Elementwise select with a constant boolean mask; a and b share a shape."""
    mask = np.asarray(mask, dtype=bool)
    return _make(
        np.where(mask, a.value, b.value),
        (a, b),
        lambda g: (np.where(mask, g, 0.0), np.where(mask, 0.0, g)),
        "where",
    )


def take(a: Tensor, idx) -> Tensor:
    shape = a.shape

    def bw(g):
        full = np.zeros(shape)
        full[idx] = g
        return (full,)

    return _make(a.value[idx], (a,), bw, "take")


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = list(xs)
    sizes = [x.shape[axis] for x in xs]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([x.value for x in xs], axis=axis), xs, bw, "concat")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.value)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.value)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0.0, -x))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.value)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    av = a.value
    if np.any(av <= 0):
        raise NonFiniteError("log of a non-positive value")
    return _make(np.log(av), (a,), lambda g: (g / av,), "log")


def absolute(a: Tensor) -> Tensor:
    av = a.value
    return _make(np.abs(av), (a,), lambda g: (g * np.sign(av),), "abs")


def reciprocal(a: Tensor) -> Tensor:
    out = 1.0 / a.value
    return _make(out, (a,), lambda g: (-g * out * out,), "reciprocal")


def square(a: Tensor) -> Tensor:
    av = a.value
    return _make(av * av, (a,), lambda g: (2.0 * g * av,), "square")


def softplus(a: Tensor) -> Tensor:
    """softplus with unit temperature."""
    av = a.value
    return _make(np.logaddexp(0.0, av), (a,), lambda g: (g * _sigmoid(av),), "softplus")


def softplus_scaled(x: Tensor, tau: Tensor) -> Tensor:
    """tau * log(1 + exp(x / tau)); tau is a positive scalar tensor."""
    xv, tv = x.value, tau.value
    z = xv / tv
    lse = np.logaddexp(0.0, z)
    s = _sigmoid(z)
    out = tv * lse

    def bw(g):
        return g * s, _unbroadcast(g * (lse - z * s), tv.shape)

    return _make(out, (x, tau), bw, "softplus_scaled")


def logsumexp(a: Tensor) -> Tensor:
    av = a.value
    m = av.max()
    out = m + np.log(np.exp(av - m).sum())
    return _make(out, (a,), lambda g: (g * np.exp(av - out),), "logsumexp")


def signed_pow(x: Tensor, p: Tensor) -> Tensor:
    """sign(x) * |x| ** p elementwise, p a positive scalar tensor.

    At x == 0 the derivative w.r.t. x is taken as 1 when p == 1 and 0
    otherwise.
    """
    xv, pv = x.value, float(p.value)
    ax = np.abs(xv)
    sx = np.sign(xv)
    out = sx * ax**pv

    def bw(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            dx = pv * ax ** (pv - 1.0)
            logs = np.where(ax > 0, np.log(np.where(ax > 0, ax, 1.0)), 0.0)
        zero = ax == 0
        if np.any(zero):
            dx = np.where(zero, 1.0 if pv == 1.0 else 0.0, dx)
        dp = np.sum(g * out * logs)
        return g * dx, np.reshape(dp, p.value.shape)

    return _make(out, (x, p), bw, "signed_pow")


def signed_root(y: Tensor, p: Tensor) -> Tensor:
    """Inverse of :func:`signed_pow`: sign(y) * |y| ** (1/p)."""
    return signed_pow(y, reciprocal(p))


# ---------------------------------------------------------------------------
# fused model ops


def affine_columns(W: Tensor, inputs: Sequence[Sequence[Tensor]]) -> Tensor:
    """W @ X where column m of X is [1; x_1; ...; x_k] built from ``inputs[m]``.

    Returns a (rows, M) tensor. Zero-width inputs are allowed.
    """
    M = len(inputs)
    Wv = W.value
    rows, cols = Wv.shape
    X = np.empty((cols, M))
    X[0, :] = 1.0
    flat: list[Tensor] = []
    spans: list[tuple[int, int, int]] = []
    for m, xs in enumerate(inputs):
        off = 1
        for x in xs:
            n = x.value.shape[0]
            if n:
                X[off : off + n, m] = x.value
                flat.append(x)
                spans.append((m, off, off + n))
            off += n
        if off != cols:
            raise ValueError(f"affine input width {off} does not match matrix width {cols}")
    out = Wv @ X

    def bw(g):
        grads = [g @ X.T]
        WtG = Wv.T @ g
        for m, lo, hi in spans:
            grads.append(WtG[lo:hi, m].copy())
        return tuple(grads)

    return _make(out, (W, *flat), bw, "affine_columns")


def pool_columns(Y: Tensor, beta: Tensor) -> Tensor:
    """Signed-power pooling over the columns of a (d, M) tensor.

    Computes v^-1(sum_m v(y_m)) with v(x) = sign(x)|x|^beta. One column is
    returned unchanged; zero columns give the zero vector.
    """
    Yv = Y.value
    d, M = Yv.shape
    if M == 0:
        return Tensor(np.zeros(d))
    if M == 1:
        return _make(Yv[:, 0].copy(), (Y,), lambda g: (g[:, None].copy(),), "pool")
    b = float(beta.value)
    if b == 1.0:
        out = Yv.sum(axis=1)
        B = Yv

        def bw_sum(g):
            S = out
            absS = np.abs(S)
            # d/dbeta at beta=1: S*log|S| - sum y log|y|
            with np.errstate(divide="ignore", invalid="ignore"):
                ylog = np.where(B != 0, B * np.log(np.where(B != 0, np.abs(B), 1.0)), 0.0)
                slog = np.where(S != 0, S * np.log(np.where(S != 0, absS, 1.0)), 0.0)
            # derivative of v^-1(sum v) w.r.t. beta at 1
            dbeta = np.sum(g * (ylog.sum(axis=1) - slog))
            return np.repeat(g[:, None], M, axis=1), np.reshape(dbeta, beta.value.shape)

        return _make(out, (Y, beta), bw_sum, "pool")
    A = np.abs(Yv)
    sgn = np.sign(Yv)
    Ab = A**b
    S = np.sum(sgn * Ab, axis=1)
    absS = np.abs(S)
    out = np.sign(S) * absS ** (1.0 / b)

    def bw(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            # d out / d S = (1/b)|S|^(1/b - 1)
            dS = np.where(absS > 0, (1.0 / b) * absS ** (1.0 / b - 1.0), 0.0)
            dY = (g * dS)[:, None] * (b * A ** (b - 1.0))
            logA = np.where(A > 0, np.log(np.where(A > 0, A, 1.0)), 0.0)
            logS = np.where(absS > 0, np.log(np.where(absS > 0, absS, 1.0)), 0.0)
        # out = sign(S) exp(log|S| / b)
        dS_dbeta = np.sum(sgn * Ab * logA, axis=1)
        dout_dbeta = out * (-logS / (b * b)) + dS * dS_dbeta
        return dY, np.reshape(np.sum(g * dout_dbeta), beta.value.shape)

    return _make(out, (Y, beta), bw, "pool")


def drift(c_start: Tensor, c_bar: Tensor, delta: Tensor, elapsed: float) -> Tensor:
    """c_bar + (c_start - c_bar) * exp(-delta * elapsed)."""
    if elapsed < 0:
        raise ValueError("cannot evaluate a cell block before its start time")
    e = np.exp(-delta.value * elapsed)
    diff = c_start.value - c_bar.value
    out = c_bar.value + diff * e

    def bw(g):
        return g * e, g * (1.0 - e), -g * diff * e * elapsed

    return _make(out, (c_start, c_bar, delta), bw, "drift")


# ---------------------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Accumulate d loss / d leaf into ``leaf.grad`` for every leaf parameter."""
    if loss.value.size != 1:
        raise ValueError("backward() requires a scalar loss")
    if not loss.requires_grad:
        return
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.backward_fn is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for p, pg in zip(node.parents, node.backward_fn(g)):
            if not p.requires_grad:
                continue
            k = id(p)
            if k in grads:
                grads[k] = grads[k] + pg
            else:
                grads[k] = pg
        # free the graph as we go
        node.parents = ()
        node.backward_fn = None
