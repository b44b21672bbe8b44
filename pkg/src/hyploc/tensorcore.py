"""Dense float64 tensors with reverse-mode autodiff, Adam and a gradient checker.

Every op builds a graph node holding its parents and a backward closure.
``Tensor.backward`` topologically sorts the reachable graph into a
:class:`Tape` and replays it in reverse.  Graphs are single-use: a second
backward through the same loss is rejected, a fresh graph is built per step.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

ARCTANH_CLAMP = 1.0 - 1e-7
NORM_EPS = 1e-12


class ShapeError(ValueError):
    pass


class DomainError(ValueError):
    pass


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_consumed", "name")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._consumed = False
        self.name = name

    @property
    def shape(self) -> tuple:
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
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # graph plumbing
    def _accumulate(self, g: np.ndarray) -> None:
        g = _unbroadcast(g, self.data.shape)
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self) -> None:
        """Populate ``.grad`` on every requires_grad leaf reachable from this scalar."""
        if self.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {self.shape}")
        if self._consumed:
            raise RuntimeError("backward already ran through this graph; rebuild it first")
        tape = Tape.from_root(self)
        tape.run(self)
        self._consumed = True

    # operator sugar
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

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    @property
    def T(self):
        return transpose(self, None)


@dataclass
class Tape:
    """Topologically ordered list of graph nodes reachable from a root."""

    nodes: list = field(default_factory=list)

    @classmethod
    def from_root(cls, root: Tensor) -> "Tape":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack = [(root, False)]
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
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
        return cls(order)

    def run(self, root: Tensor) -> None:
        grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accumulate(g)
                continue
            for parent, pg in node._backward(g):
                if parent is None or not parent.requires_grad or pg is None:
                    continue
                if parent._backward is None:
                    parent._accumulate(pg)
                else:
                    pg = _unbroadcast(pg, parent.data.shape)
                    prev = grads.get(id(parent))
                    grads[id(parent)] = pg if prev is None else prev + pg


_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


_BRANCH_LOG: list[bytes] | None = None


@contextmanager
def branch_log():
    """Record the branch taken by every piecewise op evaluated inside the block.

    Two evaluations with equal logs lie on the same smooth piece of the
    function, which is what a central difference needs to be trustworthy.
    """
    global _BRANCH_LOG
    prev, _BRANCH_LOG = _BRANCH_LOG, []
    try:
        yield _BRANCH_LOG
    finally:
        _BRANCH_LOG = prev


def _log_branch(decision: np.ndarray) -> None:
    if _BRANCH_LOG is not None:
        _BRANCH_LOG.append(np.ascontiguousarray(decision).tobytes())


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._consumed = False
    out.requires_grad = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


# ---------------------------------------------------------------- arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data + b.data, (a, b), lambda g: ((a, g), (b, g)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data - b.data, (a, b), lambda g: ((a, g), (b, -g)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data * b.data, (a, b), lambda g: ((a, g * b.data), (b, g * a.data)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _node(out, (a, b), lambda g: ((a, g / b.data), (b, -g * out / b.data)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _node(-a.data, (a,), lambda g: ((a, -g),))


def scale(a, s: float) -> Tensor:
    a = as_tensor(a)
    s = float(s)
    return _node(a.data * s, (a,), lambda g: ((a, g * s),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: ((a, g * (1.0 - out * out)),))


def arctanh(a) -> Tensor:
    """Inverse tanh; inputs are clamped to ``|x| <= 1 - 1e-7``."""
    a = as_tensor(a)
    if not np.all(np.isfinite(a.data)):
        raise DomainError("arctanh received non-finite input")
    x = np.clip(a.data, -ARCTANH_CLAMP, ARCTANH_CLAMP)
    inside = np.abs(a.data) <= ARCTANH_CLAMP
    _log_branch(inside)
    return _node(np.arctanh(x), (a,), lambda g: ((a, g * inside / (1.0 - x * x)),))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data < 0):
        raise DomainError(f"sqrt of negative value {a.data.min():.6g}")
    out = np.sqrt(a.data)
    return _node(out, (a,), lambda g: ((a, g * 0.5 / out),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: ((a, g * out),))


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError(f"log of non-positive value {a.data.min():.6g}")
    return _node(np.log(a.data), (a,), lambda g: ((a, g / a.data),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    _log_branch(mask)
    return _node(a.data * mask, (a,), lambda g: ((a, g * mask),))


def minimum(a, bound: float) -> Tensor:
    a = as_tensor(a)
    mask = a.data < bound
    _log_branch(mask)
    return _node(np.where(mask, a.data, bound), (a,), lambda g: ((a, g * mask),))


def where(cond: np.ndarray, a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    cond = np.asarray(cond, dtype=bool)
    _log_branch(cond)
    return _node(np.where(cond, a.data, b.data), (a, b),
                 lambda g: ((a, np.where(cond, g, 0.0)), (b, np.where(cond, 0.0, g))))


def norm_sq(a, axis: int = -1, keepdims: bool = True) -> Tensor:
    """Sum of squares along ``axis``."""
    a = as_tensor(a)
    out = np.sum(a.data * a.data, axis=axis, keepdims=keepdims)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return ((a, 2.0 * a.data * g),)

    return _node(out, (a,), back)


# ------------------------------------------------------------- reductions


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    out = np.sum(a.data, axis=axes, keepdims=keepdims)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return ((a, np.broadcast_to(g, a.shape)),)

    return _node(out, (a,), back)


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    return scale(tsum(a, axis, keepdims), 1.0 / count)


def tmax(a, axis: int, keepdims: bool = False) -> Tensor:
    """Max along ``axis``; gradient goes to the first maximal entry."""
    a = as_tensor(a)
    axis = axis % a.ndim
    idx = np.argmax(a.data, axis=axis)
    _log_branch(idx)
    out = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis)
    if not keepdims:
        out = np.squeeze(out, axis)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        full = np.zeros_like(a.data)
        np.put_along_axis(full, np.expand_dims(idx, axis), g, axis=axis)
        return ((a, full),)

    return _node(out, (a,), back)


def mean_pool(a) -> Tensor:
    """Column means of the node axis: ``(..., n, c) -> (..., 1, c)``."""
    a = as_tensor(a)
    if a.ndim < 2 or a.shape[-2] == 0:
        raise ShapeError(f"mean_pool needs at least one row, got shape {a.shape}")
    return tmean(a, axis=-2, keepdims=True)


# -------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    """Matrix product with numpy batching rules on leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def back(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g) if b.requires_grad else None
        return ((a, ga), (b, gb))

    return _node(out, (a, b), back)


def row_softmax(a) -> Tensor:
    """Softmax over the last axis, stabilised by the row maximum."""
    a = as_tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return ((a, out * (g - np.sum(g * out, axis=-1, keepdims=True))),)

    return _node(out, (a,), back)


def l2_normalize_rows(a) -> Tensor:
    """Divide each row (last axis) by ``max(norm, 1e-12)``."""
    a = as_tensor(a)
    n = np.sqrt(np.sum(a.data * a.data, axis=-1, keepdims=True))
    guarded = n > NORM_EPS
    _log_branch(guarded)
    d = np.where(guarded, n, NORM_EPS)
    out = a.data / d

    def back(g):
        # d(x/|x|) = (g - y <g, y>) / |x| where the norm is active
        proj = np.sum(g * out, axis=-1, keepdims=True)
        return ((a, np.where(guarded, (g - out * proj) / d, g / d)),)

    return _node(out, (a,), back)


# ------------------------------------------------------------- shape ops


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    src = a.shape
    return _node(a.data.reshape(shape), (a,), lambda g: ((a, g.reshape(src)),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(range(a.ndim))[::-1]
    inv = tuple(np.argsort(axes))
    return _node(np.transpose(a.data, axes), (a,), lambda g: ((a, np.transpose(g, inv)),))


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat of an empty list")
    if len(ts) == 1:
        return ts[0]
    ref = ts[0].shape
    ax = axis % len(ref)
    for t in ts[1:]:
        if t.ndim != len(ref) or any(s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != ax):
            raise ShapeError(f"concat mismatch on non-concat axes: {ref} vs {t.shape} (axis {axis})")
    bounds = np.cumsum([0] + [t.shape[ax] for t in ts])

    def back(g):
        return tuple((t, np.take(g, np.arange(lo, hi), axis=ax))
                     for t, lo, hi in zip(ts, bounds[:-1], bounds[1:]))

    return _node(np.concatenate([t.data for t in ts], axis=ax), ts, back)


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)

    def back(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return ((a, full),)

    return _node(a.data[idx], (a,), back)


def gather_rows(a, index: np.ndarray) -> Tensor:
    """Batched row gather: ``a`` is ``(B, n, c)``, ``index`` is ``(B, ...)`` ints.

    Returns ``(B, ..., c)`` with ``out[b, ...] = a[b, index[b, ...]]``.
    """
    a = as_tensor(a)
    index = np.asarray(index)
    B = a.shape[0]
    bidx = np.arange(B).reshape((B,) + (1,) * (index.ndim - 1))
    bidx = np.broadcast_to(bidx, index.shape)

    def back(g):
        full = np.zeros_like(a.data)
        np.add.at(full, (bidx, index), g)
        return ((a, full),)

    return _node(a.data[bidx, index], (a,), back)


# ------------------------------------------------------------- convolution


def _pad_hw(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))


def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation over NHWC input.

    ``x``: (B, H, W, Cin); ``weight``: (kh, kw, Cin, Cout); ``bias``: (Cout,).
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4 or x.shape[3] != weight.shape[2]:
        raise ShapeError(f"conv2d shape mismatch: input {x.shape}, kernel {weight.shape}")
    B, H, W, Cin = x.shape
    kh, kw, _, Cout = weight.shape
    Hp, Wp = H + 2 * padding, W + 2 * padding
    if Hp < kh or Wp < kw:
        raise ShapeError(f"kernel {kh}x{kw} larger than padded input {Hp}x{Wp}")
    Ho = (Hp - kh) // stride + 1
    Wo = (Wp - kw) // stride + 1
    xp = _pad_hw(x.data, padding)
    sB, sH, sW, sC = xp.strides
    cols = np.lib.stride_tricks.as_strided(
        xp, shape=(B, Ho, Wo, kh, kw, Cin),
        strides=(sB, sH * stride, sW * stride, sH, sW, sC), writeable=False)
    cols2 = cols.reshape(B * Ho * Wo, kh * kw * Cin)
    w2 = weight.data.reshape(kh * kw * Cin, Cout)
    out = (cols2 @ w2).reshape(B, Ho, Wo, Cout)
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
        parents.append(bias)

    def back(g):
        g2 = g.reshape(B * Ho * Wo, Cout)
        gw = (cols2.T @ g2).reshape(weight.shape) if weight.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (g2 @ w2.T).reshape(B, Ho, Wo, kh, kw, Cin)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, i:i + stride * Ho:stride, j:j + stride * Wo:stride, :] += gcols[:, :, :, i, j, :]
            gx = gxp[:, padding:padding + H, padding:padding + W, :] if padding else gxp
        res = [(x, gx), (weight, gw)]
        if bias is not None:
            res.append((bias, g2.sum(axis=0)))
        return tuple(res)

    return _node(out, parents, back)


# ------------------------------------------------------------- verification


def grad_check(f: Callable[[Tensor], Tensor], x, h: float = 1e-6) -> float:
    """Max relative error between autodiff and central differences of scalar ``f``.

    Error per coordinate is ``|a - n| / (|a| + |n| + 1e-12)``.
    """
    x0 = np.array(as_tensor(x).data, dtype=np.float64)
    leaf = Tensor(x0.copy(), requires_grad=True)
    f(leaf).backward()
    analytic = leaf.grad if leaf.grad is not None else np.zeros_like(x0)
    numeric = np.zeros_like(x0)
    flat = numeric.reshape(-1)
    for i in range(x0.size):
        xp = x0.copy().reshape(-1)
        xm = x0.copy().reshape(-1)
        xp[i] += h
        xm[i] -= h
        fp = f(Tensor(xp.reshape(x0.shape))).item()
        fm = f(Tensor(xm.reshape(x0.shape))).item()
        flat[i] = (fp - fm) / (2 * h)
    err = np.abs(analytic - numeric) / (np.abs(analytic) + np.abs(numeric) + 1e-12)
    return float(err.max()) if err.size else 0.0


def grad_check_params(loss_fn: Callable[[], Tensor], params: Iterable[Tensor],
                      h: float = 1e-6, max_coords: int | None = None,
                      rng: np.random.Generator | None = None, skip_kinks: bool = False,
                      stats: dict | None = None) -> float:
    """Like :func:`grad_check` but perturbs parameter tensors in place.

    ``max_coords`` samples a subset of coordinates per tensor to bound runtime.
    With ``skip_kinks`` a coordinate whose ``+-h`` evaluations take a different
    branch of some piecewise op (ReLU, max, clamp) than the base point is not
    scored, since the central difference there straddles a kink; sampling
    moves on to the next coordinate.  ``stats`` receives checked/skipped counts.
    """
    params = list(params)
    rng = rng or np.random.default_rng(0)
    for p in params:
        p.grad = None
    with branch_log() as base:
        loss_fn().backward()
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]

    def evaluate():
        with branch_log() as log:
            value = loss_fn().item()
        return value, log

    worst, checked, skipped = 0.0, 0, 0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        limit = flat.size if max_coords is None else min(max_coords, flat.size)
        order = np.arange(flat.size) if max_coords is None else rng.permutation(flat.size)
        done = 0
        for i in order:
            if done == limit:
                break
            orig = flat[i]
            flat[i] = orig + h
            fp, log_p = evaluate()
            flat[i] = orig - h
            fm, log_m = evaluate()
            flat[i] = orig
            if skip_kinks and (log_p != base or log_m != base):
                skipped += 1
                continue
            num = (fp - fm) / (2 * h)
            a = ga.reshape(-1)[i]
            worst = max(worst, abs(a - num) / (abs(a) + abs(num) + 1e-12))
            done += 1
        checked += done
    for p in params:
        p.grad = None
    if stats is not None:
        stats.update(checked=checked, skipped=skipped)
    return worst


# ------------------------------------------------------------- optimizer


@dataclass
class AdamState:
    lr: float = 1e-3
    weight_decay: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray | None], state: AdamState) -> None:
    """One Adam update with decoupled weight decay, in place on ``params``."""
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} params but {len(grads)} grads")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape or m.shape != p.data.shape:
            raise ShapeError(f"adam shape mismatch: param {p.data.shape}, grad {g.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if state.weight_decay:
            p.data -= state.lr * state.weight_decay * p.data
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
