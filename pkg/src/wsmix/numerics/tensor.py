"""Dense float64 tensors with a reverse-mode tape.

Every op result created while gradient recording is on remembers its parents
and a backward rule mapping the output gradient to one gradient per parent.
Two global counters ride along: multiply-accumulates issued by matmuls, and
bytes of activations currently held by live tape nodes.
"""

from __future__ import annotations

import math
import weakref
from contextlib import contextmanager
from typing import Callable, Iterator, Sequence

import numpy as np
from scipy.special import erf


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ContractError(ValueError):
    """A documented precondition was violated."""


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf."""


_grad_enabled = True
_check_finite = True
_macs = 0
_tracker: "ActivationTracker | None" = None


@contextmanager
def no_grad() -> Iterator[None]:
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


@contextmanager
def finite_checks(enabled: bool) -> Iterator[None]:
    global _check_finite
    prev, _check_finite = _check_finite, enabled
    try:
        yield
    finally:
        _check_finite = prev


def count_macs(n: int) -> None:
    global _macs
    _macs += int(n)


def mac_count() -> int:
    return _macs


def reset_macs() -> None:
    global _macs
    _macs = 0


class ActivationTracker:
    """Live/peak bytes of arrays owned by tape nodes.

    Bytes are added when a recorded op result is created and released when
    that node is garbage collected, so ``peak`` is the high-water mark of
    saved activations across any number of forward/backward passes.
    """

    def __init__(self) -> None:
        self.current = 0
        self.peak = 0

    def add(self, n: int) -> None:
        self.current += n
        if self.current > self.peak:
            self.peak = self.current

    def release(self, n: int) -> None:
        self.current -= n


@contextmanager
def track_activations() -> Iterator[ActivationTracker]:
    global _tracker
    prev, _tracker = _tracker, ActivationTracker()
    try:
        yield _tracker
    finally:
        _tracker = prev


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "__weakref__")

    def __init__(self, data, requires_grad: bool = False) -> None:
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf with requires_grad."""
        if self.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            return
        topo = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad += g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # operator sugar; the functions below carry the real definitions
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

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _assert_finite(out: np.ndarray, op: str) -> None:
    # a reduction propagates any NaN/Inf without allocating a mask
    if _check_finite and out.size and not math.isfinite(float(np.add.reduce(out, axis=None))):
        if not np.isfinite(out).all():
            raise NonFiniteError(f"{op} produced non-finite values")


def make_result(
    data: np.ndarray,
    parents: Sequence[Tensor],
    backward: BackwardFn,
    op: str,
    saved_bytes: int = 0,
    owns_data: bool = True,
) -> Tensor:
    """Wrap an op output, attaching it to the tape when any parent needs grad.

    ``saved_bytes`` counts extra arrays the backward rule keeps alive;
    ``owns_data`` is False for views that allocate nothing.
    """
    _assert_finite(data, op)
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        if _tracker is not None:
            n = (data.nbytes if owns_data else 0) + saved_bytes
            _tracker.add(n)
            weakref.finalize(out, _tracker.release, n)
    return out


def unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape
    return make_result(
        a.data + b.data, (a, b), lambda g: (unbroadcast(g, sa), unbroadcast(g, sb)), "add"
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    sa, sb = a.shape, b.shape
    return make_result(
        a.data - b.data, (a, b), lambda g: (unbroadcast(g, sa), unbroadcast(-g, sb)), "sub"
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")

    def backward(g):
        return unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)

    return make_result(a.data * b.data, (a, b), backward, "mul")


def scale(a: Tensor, c: float) -> Tensor:
    return make_result(a.data * c, (a,), lambda g: (g * c,), "scale")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return make_result(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    return make_result(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact GeLU, x * Phi(x) with the erf form of the Gaussian CDF."""
    out = np.multiply(x.data, _INV_SQRT2)
    erf(out, out=out)
    out += 1.0
    out *= 0.5
    out *= x.data

    def backward(g):
        xd = x.data
        cdf = 0.5 * (1.0 + erf(xd * _INV_SQRT2))
        pdf = _INV_SQRT2PI * np.exp(-0.5 * xd * xd)
        return (g * (cdf + xd * pdf),)

    return make_result(out, (x,), backward, "gelu")


def dropout(x: Tensor, rate: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Inverted dropout; identity (no tape node) outside training or at rate 0."""
    if not training or rate <= 0.0:
        return x
    keep = rng.random(x.shape) >= rate
    factor = 1.0 / (1.0 - rate)
    out = x.data * keep
    out *= factor
    return make_result(out, (x,), lambda g: (g * keep * factor,), "dropout", saved_bytes=keep.nbytes)


# ---------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    """Batched matrix product over the last two axes; ``b`` may be a plain matrix."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    try:
        batch = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(f"matmul: batch dims of {a.shape} and {b.shape} differ") from None
    m, n, p = a.shape[-2], a.shape[-1], b.shape[-1]
    count_macs(math.prod(batch) * m * n * p)
    out = np.matmul(a.data, b.data)

    def backward(g):
        count_macs(2 * math.prod(batch) * m * n * p)
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            if b.ndim == 2:
                gb = a.data.reshape(-1, n).T @ g.reshape(-1, p)
            else:
                gb = unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        if ga is not None:
            ga = unbroadcast(ga, a.shape)
        return ga, gb

    return make_result(out, (a, b), backward, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` written into a single output buffer."""
    if x.shape[-1] != weight.shape[0]:
        raise DimensionError(f"linear: shapes {x.shape} and {weight.shape} are not aligned")
    n, p = weight.shape
    rows = x.size // n
    count_macs(rows * n * p)
    out = np.matmul(x.data, weight.data)
    if bias is not None:
        out += bias.data

    def backward(g):
        count_macs(2 * rows * n * p)
        g2 = g.reshape(-1, p)
        gx = np.matmul(g, weight.data.T) if x.requires_grad else None
        gw = x.data.reshape(-1, n).T @ g2 if weight.requires_grad else None
        gb = g2.sum(axis=0) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, backward, "linear")


# ---------------------------------------------------------------- shape ops


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = x.data.reshape(shape)
    src = x.shape
    return make_result(
        out, (x,), lambda g: (g.reshape(src),), "reshape", owns_data=not np.shares_memory(out, x.data)
    )


def swapaxes(x: Tensor, a1: int, a2: int) -> Tensor:
    out = np.swapaxes(x.data, a1, a2)
    return make_result(out, (x,), lambda g: (np.swapaxes(g, a1, a2),), "swapaxes", owns_data=False)


def expand(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Broadcast view; the backward pass sums over the repeated axes."""
    src = x.shape
    out = np.broadcast_to(x.data, shape)
    return make_result(out, (x,), lambda g: (unbroadcast(g, src),), "expand", owns_data=False)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if len(tensors) == 1:
        return tensors[0]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
            i != ax and p != q for i, (p, q) in enumerate(zip(t.shape, ref))
        ):
            raise DimensionError(f"concat: shapes {ref} and {t.shape} differ off axis {axis}")
    out = np.concatenate([t.data for t in tensors], axis=ax)
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def backward(g):
        idx = [slice(None)] * g.ndim
        parts = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx[ax] = slice(lo, hi)
            parts.append(g[tuple(idx)])
        return parts

    return make_result(out, tensors, backward, "concat")


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """View of ``length`` entries along ``axis`` starting at ``start``."""
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)

    def backward(g):
        full = np.zeros_like(x.data)
        full[idx] = g
        return (full,)

    return make_result(x.data[idx], (x,), backward, "narrow", owns_data=False)


# ---------------------------------------------------------------- reductions


def sum_all(x: Tensor) -> Tensor:
    src = x.shape
    return make_result(
        np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, src),), "sum"
    )


def sum_axis(x: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    src = x.shape

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src),)

    return make_result(x.data.sum(axis=axis, keepdims=keepdims), (x,), backward, "sum")


def mean_all(x: Tensor) -> Tensor:
    return scale(sum_all(x), 1.0 / x.size)


def weighted_sum(tensors: Sequence[Tensor], weights: Tensor) -> Tensor:
    """sum_i weights[i] * tensors[i] for equally shaped tensors and a vector of weights."""
    if weights.shape != (len(tensors),):
        raise DimensionError(
            f"weighted_sum: {len(tensors)} tensors but weights have shape {weights.shape}"
        )
    shape = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != shape:
            raise DimensionError(f"weighted_sum: shapes {shape} and {t.shape} differ")
    w = weights.data
    out = tensors[0].data * w[0]
    for wi, t in zip(w[1:], tensors[1:]):
        out += wi * t.data

    def backward(g):
        gw = np.array([np.vdot(g, t.data) for t in tensors])
        return [g * wi if t.requires_grad else None for wi, t in zip(w, tensors)] + [gw]

    return make_result(out, (*tensors, weights), backward, "weighted_sum")


# ---------------------------------------------------------------- normalizers


def softmax(
    x: Tensor, axis: int = -1, mask: np.ndarray | None = None, overwrite: bool = False
) -> Tensor:
    """Max-subtracted softmax; ``mask`` (broadcastable bool, True = keep) zeroes entries.

    Every slice along ``axis`` must keep at least one entry. With ``overwrite``
    the input buffer is reused for the output; only legal off the tape.
    """
    if overwrite and _grad_enabled and x.requires_grad:
        raise ContractError("softmax(overwrite=True) would clobber a recorded input")
    e = x.data if overwrite else x.data.copy()
    if mask is not None:
        np.copyto(e, -np.inf, where=~mask)
    e -= e.max(axis=axis, keepdims=True)
    np.exp(e, out=e)
    e /= e.sum(axis=axis, keepdims=True)

    def backward(g):
        gx = g * e
        gx -= e * gx.sum(axis=axis, keepdims=True)
        return (gx,)

    return make_result(e, (x,), backward, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    out = x.data - x.data.max(axis=axis, keepdims=True)
    out -= np.log(np.exp(out).sum(axis=axis, keepdims=True))

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return make_result(out, (x,), backward, "log_softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift (one output buffer)."""
    d = x.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    xhat = x.data - mu
    inv = 1.0 / np.sqrt((xhat * xhat).mean(axis=-1, keepdims=True) + eps)
    xhat *= inv
    out = xhat * gamma.data
    out += beta.data

    def backward(g):
        gxhat = g * gamma.data
        gx = None
        if x.requires_grad:
            gx = gxhat - gxhat.mean(axis=-1, keepdims=True)
            gx -= xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
            gx *= inv
        gg = (g * xhat).reshape(-1, d).sum(axis=0) if gamma.requires_grad else None
        gb = g.reshape(-1, d).sum(axis=0) if beta.requires_grad else None
        return gx, gg, gb

    return make_result(
        out, (x, gamma, beta), backward, "layer_norm", saved_bytes=xhat.nbytes + inv.nbytes
    )
