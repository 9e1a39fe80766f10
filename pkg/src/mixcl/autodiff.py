"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations are recorded on the innermost active :class:`Tape`.  Outside a
tape nothing is recorded, which doubles as a no-grad mode for inference.

>>> x = Tensor([1.0, 2.0], requires_grad=True)
>>> with Tape() as tape:
...     loss = (x * x).sum()
...     tape.backward(loss)
>>> x.grad
array([2., 4.])
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "Tensor",
    "Tape",
    "RunningStats",
    "add",
    "sub",
    "mul",
    "div",
    "scale",
    "exp",
    "log",
    "neg",
    "matmul",
    "conv1d",
    "batchnorm1d",
    "relu",
    "global_avg_pool",
    "cosine_similarity_matrix",
    "logsumexp",
    "concat",
    "grad_check",
]

_ACTIVE_TAPES: list["Tape"] = []

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
_NORM_FLOOR = 1e-12


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class DomainError(ValueError):
    """An input lies outside the domain of the operation."""


def _as_array(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(())
    return arr


class Tensor:
    """A float64 array with an optional gradient slot.

    Parameters
    ----------
    values : array_like
        Data, copied and cast to float64.
    requires_grad : bool
        Whether :meth:`Tape.backward` should populate ``grad`` for this
        tensor when it is a leaf.
    name : str, optional
        Used in error messages (e.g. non-finite gradients).
    """

    __array_priority__ = 100

    def __init__(self, values, requires_grad: bool = False, name: str | None = None):
        self.data = _as_array(values)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._tape: Tape | None = None
        self._node: int | None = None

    @classmethod
    def _wrap(cls, data: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = data
        t.requires_grad = False
        t.grad = None
        t.name = None
        t._tape = None
        t._node = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise ShapeError(f"item() requires a single-element tensor, got shape {self.shape}")

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def backward(self) -> None:
        if self._tape is None:
            raise RuntimeError("tensor was not produced on a tape; nothing to differentiate")
        self._tape.backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({np.array2string(self.data, precision=6)}{flag})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; ops executed inside are appended in
    execution order, which is already a topological order.  After
    :meth:`backward` the tape must be :meth:`reset` before reuse.  The
    recorded graph is dropped after backward and on leaving the context.
    """

    def __init__(self):
        self._ops: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPES.remove(self)
        self._release()

    def __len__(self) -> int:
        return len(self._ops)

    def record(self, out: Tensor, parents: tuple[Tensor, ...], backward: Callable) -> None:
        if self._consumed:
            raise RuntimeError("tape already used for backward(); call reset() first")
        out._tape = self
        out._node = len(self._ops)
        out.requires_grad = True
        self._ops.append((out, parents, backward))

    def _release(self) -> None:
        # break tensor <-> tape cycles so activations are freed immediately
        for out, _, _ in self._ops:
            out._tape = None
            out._node = None
        self._ops = []

    def reset(self) -> None:
        self._release()
        self._consumed = False

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every leaf."""
        if loss.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
        if loss._tape is not self:
            raise RuntimeError("loss was not produced on this tape")
        if self._consumed:
            raise RuntimeError("tape already used for backward(); call reset() first")
        self._consumed = True
        pending: dict[int, np.ndarray] = {loss._node: np.ones_like(loss.data)}
        for idx in range(loss._node, -1, -1):
            g = pending.pop(idx, None)
            if g is None:
                continue
            _, parents, rule = self._ops[idx]
            for parent, pg in zip(parents, rule(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if parent._tape is self and parent._node is not None:
                    if parent._node in pending:
                        pending[parent._node] = pending[parent._node] + pg
                    else:
                        pending[parent._node] = pg
                elif parent.grad is None:
                    parent.grad = np.array(pg, dtype=np.float64).reshape(parent.shape)
                else:
                    parent.grad = parent.grad + pg
        self._release()


def _record(data: np.ndarray, parents: Sequence[Tensor], rule: Callable) -> Tensor:
    out = Tensor._wrap(data)
    if _ACTIVE_TAPES and any(p.requires_grad for p in parents):
        _ACTIVE_TAPES[-1].record(out, tuple(parents), rule)
    return out


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor._wrap(_as_array(x))


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"shapes {a.shape} and {b.shape} are not broadcast-compatible") from None


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _broadcast_shape(a, b)

    def rule(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record(a.data + b.data, (a, b), rule)


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _broadcast_shape(a, b)

    def rule(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _record(a.data - b.data, (a, b), rule)


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _broadcast_shape(a, b)

    def rule(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _record(a.data * b.data, (a, b), rule)


def div(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _broadcast_shape(a, b)
    zero = np.argwhere(b.data == 0)
    if zero.size:
        raise DomainError(f"division by zero at divisor index {tuple(int(i) for i in zero[0])}")
    out = a.data / b.data

    def rule(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _record(out, (a, b), rule)


def scale(a, c: float) -> Tensor:
    a = _lift(a)
    c = float(c)
    return _record(a.data * c, (a,), lambda g: (g * c,))


def neg(a) -> Tensor:
    a = _lift(a)
    return _record(-a.data, (a,), lambda g: (-g,))


def exp(a) -> Tensor:
    a = _lift(a)
    out = np.exp(a.data)
    return _record(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = _lift(a)
    bad = np.argwhere(~(a.data > 0))
    if bad.size:
        idx = tuple(int(i) for i in bad[0])
        where = idx[0] if len(idx) == 1 else idx
        raise DomainError(f"log of non-positive value {float(a.data[idx])} at index {where}")
    return _record(np.log(a.data), (a,), lambda g: (g / a.data,))


def relu(a) -> Tensor:
    """max(0, x); the subgradient at exactly 0 is taken as 0."""
    a = _lift(a)
    mask = a.data > 0
    return _record(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# reductions and shape plumbing


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    out = np.sum(a.data, axis=axis, keepdims=keepdims)

    def rule(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _record(np.asarray(out, dtype=np.float64), (a,), rule)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    count = a.size if axis is None else int(np.prod([a.shape[ax] for ax in np.atleast_1d(axis)]))
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a, shape) -> Tensor:
    a = _lift(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {a.shape} into {tuple(shape)}") from None
    return _record(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a) -> Tensor:
    a = _lift(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {a.shape}")
    return _record(a.data.T.copy(), (a,), lambda g: (g.T,))


def take(a, index) -> Tensor:
    a = _lift(a)
    out = a.data[index]

    def rule(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _record(np.array(out, dtype=np.float64), (a,), rule)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    parts = [_lift(t) for t in tensors]
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError:
        shapes = ", ".join(str(p.shape) for p in parts)
        raise ShapeError(f"cannot concatenate shapes {shapes} along axis {axis}") from None
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def rule(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _record(out, parts, rule)


def logsumexp(a, axis: int = -1) -> Tensor:
    """Stabilized log(sum(exp(a))) along ``axis`` (axis is removed)."""
    a = _lift(a)
    m = np.max(a.data, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    shifted = np.exp(a.data - m)
    total = shifted.sum(axis=axis, keepdims=True)
    out = (np.log(total) + m).squeeze(axis)

    def rule(g):
        return (np.expand_dims(g, axis) * shifted / total,)

    return _record(out, (a,), rule)


# ---------------------------------------------------------------------------
# linear algebra and layers


def matmul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")

    def rule(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _record(a.data @ b.data, (a, b), rule)


def conv1d(x, weight, bias=None, padding: tuple[int, int] | None = None) -> Tensor:
    """Stride-1 cross-correlation that preserves sequence length.

    Parameters
    ----------
    x : Tensor, shape (N, Cin, T)
    weight : Tensor, shape (Cout, Cin, K)
    bias : Tensor, shape (Cout,), optional
    padding : (left, right), optional
        Zero padding.  Defaults to ``(K-1)/2`` on both sides, which needs
        an odd ``K``; even kernels must pass an explicit split whose total
        is ``K-1``.
    """
    x, weight = _lift(x), _lift(weight)
    if x.ndim != 3 or weight.ndim != 3:
        raise ShapeError(f"conv1d expects (N,C,T) input and (Cout,Cin,K) kernel, got {x.shape}, {weight.shape}")
    n, cin, t = x.shape
    cout, wcin, k = weight.shape
    if wcin != cin:
        raise ShapeError(f"conv1d channel mismatch: input has {cin} channels, kernel expects {wcin}")
    if t < 1:
        raise ShapeError("conv1d needs at least one timestep")
    if padding is None:
        if k % 2 == 0:
            raise ShapeError(f"even kernel size {k} has no symmetric same-padding; pass padding=(left, right)")
        padding = ((k - 1) // 2, (k - 1) // 2)
    left, right = padding
    if left + right != k - 1:
        raise ShapeError(f"padding {padding} does not preserve length for kernel size {k}")
    parents = [x, weight]
    if bias is not None:
        bias = _lift(bias)
        if bias.shape != (cout,):
            raise ShapeError(f"conv1d bias shape {bias.shape} does not match {cout} output channels")
        parents.append(bias)

    xp = np.pad(x.data, ((0, 0), (0, 0), (left, right)))
    # (N, Cin, T, K) -> (N*T, Cin*K)
    cols = sliding_window_view(xp, k, axis=2).transpose(0, 2, 1, 3).reshape(n * t, cin * k)
    wmat = weight.data.reshape(cout, cin * k)
    out = (cols @ wmat.T).reshape(n, t, cout).transpose(0, 2, 1)
    if bias is not None:
        out = out + bias.data[None, :, None]
    out = np.ascontiguousarray(out)

    def rule(g):
        g2 = g.transpose(0, 2, 1).reshape(n * t, cout)
        gw = (g2.T @ cols).reshape(weight.shape) if weight.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (g2 @ wmat).reshape(n, t, cin, k)
            # scatter in (N, T, C) layout, where the shifted slices are contiguous
            dxp = np.zeros((n, t + k - 1, cin))
            for j in range(k):
                dxp[:, j : j + t, :] += dcols[:, :, :, j]
            gx = dxp[:, left : left + t, :].transpose(0, 2, 1)
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2)))
        return tuple(grads)

    return _record(out, parents, rule)


@dataclass
class RunningStats:
    """Batch-norm running statistics, updated in place.

    ``count`` is a one-element array so the owning parameter tensor sees
    updates without re-binding.
    """

    mean: np.ndarray
    var: np.ndarray
    count: np.ndarray

    @classmethod
    def empty(cls, channels: int) -> "RunningStats":
        return cls(np.zeros(channels), np.ones(channels), np.zeros(1))

    @property
    def initialized(self) -> bool:
        return bool(self.count[0] > 0)


def batchnorm1d(
    x,
    gamma,
    beta,
    stats: RunningStats,
    train: bool = True,
    update_stats: bool = True,
    eps: float = BN_EPS,
    momentum: float = BN_MOMENTUM,
) -> Tensor:
    """Per-channel normalization over the (N, T) axes of an (N, C, T) input.

    In train mode the batch statistics are used (and differentiated
    through) and ``stats`` is updated with ``momentum`` unless
    ``update_stats`` is false.  Eval mode uses ``stats`` and raises if they
    were never populated.
    """
    x, gamma, beta = _lift(x), _lift(gamma), _lift(beta)
    if x.ndim != 3:
        raise ShapeError(f"batchnorm1d expects (N,C,T) input, got {x.shape}")
    n, c, t = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batchnorm1d affine shapes {gamma.shape}, {beta.shape} do not match {c} channels")
    g_b = gamma.data[None, :, None]
    b_b = beta.data[None, :, None]

    if not train:
        if not stats.initialized:
            raise RuntimeError("batchnorm eval mode used before any training step (running stats uninitialized)")
        inv = 1.0 / np.sqrt(stats.var + eps)
        xhat = (x.data - stats.mean[None, :, None]) * inv[None, :, None]
        out = g_b * xhat + b_b

        def eval_rule(g):
            gx = g * (gamma.data * inv)[None, :, None] if x.requires_grad else None
            return gx, (g * xhat).sum(axis=(0, 2)), g.sum(axis=(0, 2))

        return _record(out, (x, gamma, beta), eval_rule)

    m = n * t
    if m < 2:
        raise ShapeError("batchnorm1d train mode needs at least two values per channel")
    mu = x.data.mean(axis=(0, 2))
    var = x.data.var(axis=(0, 2))
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu[None, :, None]) * inv[None, :, None]
    out = g_b * xhat + b_b
    if update_stats:
        stats.mean[...] = (1 - momentum) * stats.mean + momentum * mu
        stats.var[...] = (1 - momentum) * stats.var + momentum * var * m / (m - 1)
        stats.count[0] += 1

    def rule(g):
        dgamma = (g * xhat).sum(axis=(0, 2))
        dbeta = g.sum(axis=(0, 2))
        gx = None
        if x.requires_grad:
            dxhat = g * g_b
            s1 = dxhat.sum(axis=(0, 2), keepdims=True)
            s2 = (dxhat * xhat).sum(axis=(0, 2), keepdims=True)
            gx = (inv[None, :, None] / m) * (m * dxhat - s1 - xhat * s2)
        return gx, dgamma, dbeta

    return _record(out, (x, gamma, beta), rule)


def global_avg_pool(x) -> Tensor:
    """Mean over the time axis: (N, C, T) -> (N, C)."""
    x = _lift(x)
    if x.ndim != 3 or x.shape[2] < 1:
        raise ShapeError(f"global_avg_pool expects (N,C,T) with T >= 1, got {x.shape}")
    t = x.shape[2]
    return _record(x.data.mean(axis=2), (x,), lambda g: (np.repeat(g[:, :, None] / t, t, axis=2),))


def _row_norms(x: Tensor, label: str) -> np.ndarray:
    norms = np.linalg.norm(x.data, axis=1)
    small = np.flatnonzero(norms < _NORM_FLOOR)
    if small.size:
        raise DomainError(f"degenerate embedding: row {int(small[0])} of {label} has norm {norms[small[0]]:.3g}")
    return norms


def cosine_similarity_matrix(a, b) -> Tensor:
    """Pairwise cosine similarities between the rows of ``a`` and ``b``."""
    a, b = _lift(a), _lift(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError(f"cosine similarity needs (M,d) and (P,d) inputs, got {a.shape}, {b.shape}")
    na = _row_norms(a, "a")[:, None]
    nb = _row_norms(b, "b")[:, None]
    an = a.data / na
    bn = b.data / nb
    out = an @ bn.T

    def rule(g):
        ga = gb = None
        if a.requires_grad:
            d = g @ bn
            ga = (d - an * (d * an).sum(axis=1, keepdims=True)) / na
        if b.requires_grad:
            d = g.T @ an
            gb = (d - bn * (d * bn).sum(axis=1, keepdims=True)) / nb
        return ga, gb

    return _record(out, (a, b), rule)


# ---------------------------------------------------------------------------
# verification


def grad_check(f: Callable[[Tensor], Tensor], point, h: float | None = None) -> float:
    """Worst relative disagreement between autodiff and central differences.

    ``f`` maps a tensor to a scalar tensor.  The step defaults to
    ``1e-5 * max(1, |x_i|)`` per coordinate.  The error per coordinate is
    ``|a - n| / max(1e-8, |a| + |n|)``.
    """
    x0 = np.array(point.data if isinstance(point, Tensor) else point, dtype=np.float64)
    x = Tensor(x0.copy(), requires_grad=True)
    with Tape() as tape:
        loss = f(x)
        tape.backward(loss)
    analytic = x.grad if x.grad is not None else np.zeros_like(x0)

    numeric = np.empty_like(x0)
    flat = x0.reshape(-1)
    for i in range(flat.size):
        step = h if h is not None else 1e-5 * max(1.0, abs(flat[i]))
        up = flat.copy()
        up[i] += step
        down = flat.copy()
        down[i] -= step
        fu = f(Tensor(up.reshape(x0.shape))).item()
        fd = f(Tensor(down.reshape(x0.shape))).item()
        numeric.reshape(-1)[i] = (fu - fd) / (2 * step)

    err = np.abs(analytic - numeric) / np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return float(err.max()) if err.size else 0.0
