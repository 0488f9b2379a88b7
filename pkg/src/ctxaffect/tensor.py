"""Dense float64 tensors with reverse-mode differentiation.

Data is stored as a C-contiguous (row-major) ``numpy.ndarray`` of dtype
float64. Every differentiable operation returns a new :class:`Tensor` that
remembers its parents and a closure mapping the output adjoint to one adjoint
per parent. :func:`backward` orders the recorded graph topologically and walks
it in reverse, summing adjoints where a tensor fans out.

Layers with their own adjoints (convolutions, pooling, softmax, ...) live in
:mod:`ctxaffect.layers` and :mod:`ctxaffect.fusion`; they plug in through
:func:`make_op`.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference, feature extraction)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op", "_consumed")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64, order="C")
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._op = "leaf"
        self._consumed = False

    @classmethod
    def _wrap(cls, array: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = np.asarray(array, dtype=np.float64, order="C")
        t.requires_grad = False
        t.grad = None
        t._parents = ()
        t._backward = None
        t._op = "const"
        t._consumed = False
        return t

    # -- introspection -------------------------------------------------
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
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag}, op={self._op})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operators -----------------------------------------------------
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

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor._wrap(np.asarray(x, dtype=np.float64))


def make_op(
    out: np.ndarray,
    parents: Sequence[Tensor],
    backward: Callable[[np.ndarray], Iterable[np.ndarray | None]],
    name: str,
) -> Tensor:
    """Wrap a forward result, recording ``backward`` if any parent needs gradients.

    ``backward(g)`` receives the output adjoint and must return one adjoint (or
    ``None``) per parent, each with that parent's shape.
    """
    t = Tensor._wrap(out)
    t._op = name
    if _grad_enabled and any(p.requires_grad for p in parents):
        t.requires_grad = True
        t._parents = tuple(parents)
        t._backward = backward
    return t


def unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (undoing numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# computation record and backward traversal


class ComputationRecord:
    """Recorded operations reachable from an output, in topological order.

    Every node appears after all nodes producing its inputs, so reversing
    ``nodes`` gives a valid adjoint schedule.
    """

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_output(cls, output: Tensor) -> "ComputationRecord":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.nodes)

    def ops(self) -> list[str]:
        return [n._op for n in self.nodes]


def backward(loss: Tensor) -> ComputationRecord:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every tensor feeding ``loss``.

    Leaf gradients add onto existing ``.grad`` buffers, so several backward
    passes over separately built graphs sum (micro-batching). A graph can be
    traversed only once; its closures are released afterwards.
    """
    if not isinstance(loss, Tensor) or loss.data.size != 1:
        shape = getattr(loss, "shape", None)
        raise ContractError(f"backward needs a scalar loss, got shape {shape}")
    if loss._consumed:
        raise ContractError("backward already ran on this graph; recompute the forward pass")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor with requires_grad=True")

    record = ComputationRecord.from_output(loss)
    for node in record.nodes:
        if node._consumed:
            raise ContractError(
                f"graph node '{node._op}' was already consumed by an earlier backward pass"
            )
    adjoints: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}

    for node in reversed(record.nodes):
        g = adjoints.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        node.grad = g
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if pg.shape != parent.shape:
                raise DimensionError(
                    f"adjoint of '{node._op}' has shape {pg.shape}, parent has {parent.shape}"
                )
            key = id(parent)
            if key in adjoints:
                adjoints[key] = adjoints[key] + pg
            else:
                adjoints[key] = pg
        node._consumed = True
        node._backward = None
        node._parents = ()
    return record


# ---------------------------------------------------------------------------
# elementwise arithmetic (numpy broadcasting)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_op(
        a.data + b.data,
        (a, b),
        lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_op(
        a.data - b.data,
        (a, b),
        lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        ga = unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_op(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def bw(g):
        ga = unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_op(out, (a, b), bw, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_op(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    p = float(exponent)
    out = a.data**p
    return make_op(out, (a,), lambda g: (g * p * a.data ** (p - 1.0),), "pow")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return make_op(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    return make_op(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return make_op(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def sin(a) -> Tensor:
    a = as_tensor(a)
    return make_op(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),), "sin")


def where(condition, a, b) -> Tensor:
    """Select ``a`` where ``condition`` holds, else ``b``; the condition is constant."""
    cond = np.asarray(condition, dtype=bool)
    a, b = as_tensor(a), as_tensor(b)
    out = np.where(cond, a.data, b.data)

    def bw(g):
        zero = np.zeros_like(g)
        ga = unbroadcast(np.where(cond, g, zero), a.shape) if a.requires_grad else None
        gb = unbroadcast(np.where(cond, zero, g), b.shape) if b.requires_grad else None
        return ga, gb

    return make_op(out, (a, b), bw, "where")


# ---------------------------------------------------------------------------
# reductions


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_op(out, (a,), bw, "sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    return tsum(a, axes, keepdims) * (1.0 / count)


def amax(a, axis: int = -1) -> Tensor:
    """Maximum along one axis; the adjoint goes to the first maximal entry."""
    a = as_tensor(a)
    axis = axis % a.ndim
    idx = np.argmax(a.data, axis=axis)
    out = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def bw(g):
        grad = np.zeros_like(a.data)
        np.put_along_axis(grad, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return (grad,)

    return make_op(out, (a,), bw, "max")


# ---------------------------------------------------------------------------
# linear algebra and shape manipulation


def matmul(a, b) -> Tensor:
    """Matrix product; leading (batch) axes broadcast as in ``numpy.matmul``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim < 1:
        raise DimensionError(f"matmul needs at least 1-d operands, got {a.shape} and {b.shape}")
    ka = a.shape[-1]
    kb = b.shape[-2] if b.ndim >= 2 else b.shape[0]
    if ka != kb:
        raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    if a.ndim == 1 or b.ndim == 1:
        a2 = a if a.ndim >= 2 else reshape(a, (1, ka))
        b2 = b if b.ndim >= 2 else reshape(b, (kb, 1))
        out = matmul(a2, b2)
        if a.ndim == 1:
            out = reshape(out, out.shape[:-2] + out.shape[-1:])
        if b.ndim == 1:
            out = reshape(out, out.shape[:-1])
        return out

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return make_op(np.matmul(a.data, b.data), (a, b), bw, "matmul")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {a.shape} to {tuple(shape)}") from exc
    return make_op(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return make_op(
        np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),), "transpose"
    )


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    out = a.data[index]

    def bw(g):
        grad = np.zeros_like(a.data)
        np.add.at(grad, index, g)
        return (grad,)

    return make_op(np.array(out), (a,), bw, "getitem")


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise DimensionError("concat of an empty sequence")
    ndim = ts[0].ndim
    axis = axis % ndim
    for t in ts[1:]:
        if t.ndim != ndim or any(
            t.shape[i] != ts[0].shape[i] for i in range(ndim) if i != axis
        ):
            raise DimensionError(
                f"concat shapes disagree off axis {axis}: {[t.shape for t in ts]}"
            )
    bounds = np.cumsum([0] + [t.shape[axis] for t in ts])
    out = np.concatenate([t.data for t in ts], axis=axis)

    def bw(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(ts))
        )

    return make_op(out, ts, bw, "concat")


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    shapes = {t.shape for t in ts}
    if len(shapes) != 1:
        raise DimensionError(f"stack needs equal shapes, got {sorted(shapes)}")
    out = np.stack([t.data for t in ts], axis=axis)
    return make_op(
        out,
        ts,
        lambda g: tuple(np.take(g, i, axis=axis) for i in range(len(ts))),
        "stack",
    )


# ---------------------------------------------------------------------------
# finite-difference checking


def gradient_check(
    f: Callable[..., Tensor],
    x: Tensor | Sequence[Tensor],
    h: float = 1e-5,
    max_coords: int | None = None,
    seed: int = 0,
) -> float:
    """Largest relative disagreement between backprop and central differences.

    ``f(*xs)`` must return a scalar tensor. Each coordinate's error is
    ``|analytic - numeric| / max(1, |analytic|, |numeric|)``. With
    ``max_coords`` only that many randomly chosen coordinates per tensor are
    probed, which keeps big parameter sets affordable.
    """
    if h <= 0:
        raise ContractError(f"finite-difference step must be positive, got {h}")
    xs = [x] if isinstance(x, Tensor) else list(x)
    for t in xs:
        t.requires_grad = True
        t.grad = None

    def evaluate() -> float:
        out = f(*xs)
        if out.data.size != 1:
            raise ContractError(f"gradient_check needs a scalar function, got shape {out.shape}")
        value = float(out.data.reshape(-1)[0])
        if not np.isfinite(value):
            raise NumericError(f"function value is not finite: {value}")
        return value, out

    _, out = evaluate()
    backward(out)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in xs]
    for a in analytic:
        if not np.all(np.isfinite(a)):
            raise NumericError("analytic gradient contains non-finite entries")

    rng = np.random.default_rng(seed)
    worst = 0.0
    with no_grad():
        for t, grad in zip(xs, analytic):
            flat = t.data.reshape(-1)
            coords = np.arange(flat.size)
            if max_coords is not None and flat.size > max_coords:
                coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
            for i in coords:
                orig = flat[i]
                flat[i] = orig + h
                fp, _ = evaluate()
                flat[i] = orig - h
                fm, _ = evaluate()
                flat[i] = orig
                numeric = (fp - fm) / (2.0 * h)
                a = grad.reshape(-1)[i]
                err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
                worst = max(worst, err)
    for t in xs:
        t.grad = None
    return worst
