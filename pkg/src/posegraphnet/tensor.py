"""Minimal reverse-mode tensor library on top of numpy.

Every operation records its parents and a closure that maps the output
gradient to parent gradients. ``backward`` walks the recorded graph in
reverse topological order. Leaf tensors created with ``requires_grad``
(normally :class:`Parameter`) accumulate into ``.grad`` until
:func:`zero_grads` is called.
"""
from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


class StateError(RuntimeError):
    pass


class NumericalError(ArithmeticError):
    pass


_local = threading.local()


def _grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


def _debug() -> bool:
    return getattr(_local, "debug", False)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording on the current thread."""
    prev = _grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = prev


@contextlib.contextmanager
def debug_mode(enabled: bool = True):
    """Raise :class:`NumericalError` as soon as any op produces NaN/Inf."""
    prev = _debug()
    _local.debug = enabled
    try:
        yield
    finally:
        _local.debug = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, op: str = "leaf"):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self.op = op
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        if _debug() and not np.all(np.isfinite(arr)):
            raise NumericalError(f"non-finite values produced by '{op}'")

    @property
    def dims(self) -> list[int]:
        return list(self.data.shape)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(dims={self.dims}, op={self.op!r})"

    # operator sugar
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    @property
    def T(self):
        return transpose(self)


class Parameter(Tensor):
    """A trainable tensor paired with its gradient buffer."""

    __slots__ = ("trainable", "has_grad")

    def __init__(self, data, trainable: bool = True):
        super().__init__(data, requires_grad=trainable, op="param")
        self.trainable = trainable
        # set by backward, cleared by zero_grads
        self.has_grad = False
        if self.grad is None:
            self.grad = np.zeros_like(self.data)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_op(data: np.ndarray, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    """Wrap ``data`` as the output of an op; ``backward_fn(g)`` returns one
    gradient (or None) per parent."""
    out = Tensor(data, op=op)
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    # trailing-dim broadcast only (bias style), no general N-d broadcasting
    sa, sb = a.shape, b.shape
    if sa == sb:
        return
    small, big = (sb, sa) if len(sb) <= len(sa) else (sa, sb)
    if small == () or (len(small) < len(big) and big[len(big) - len(small):] == small):
        return
    raise ShapeError(f"{op}: incompatible dims {list(sa)} and {list(sb)}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; either operand may carry one leading batch dimension."""
    if a.data.ndim not in (2, 3) or b.data.ndim not in (2, 3) or (a.data.ndim == 3 and b.data.ndim == 3 and a.shape[0] != b.shape[0]):
        raise ShapeError(f"matmul: unsupported dims {a.dims} x {b.dims}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims disagree {a.dims} x {b.dims}")
    ad, bd = a.data, b.data

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        if ad.ndim == 2 and ga.ndim == 3:
            ga = ga.sum(axis=0)
        if bd.ndim == 2 and gb.ndim == 3:
            gb = gb.sum(axis=0)
        return ga, gb

    return make_op(ad @ bd, (a, b), backward, "matmul")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    return make_op(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape
    return make_op(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)), "sub")


def mul(a: Tensor, b: Tensor | np.ndarray) -> Tensor:
    """Elementwise product. A raw ndarray ``b`` is treated as a constant."""
    b = _as_tensor(b)
    _check_broadcast(a, b, "mul")
    ad, bd = a.data, b.data
    return make_op(ad * bd, (a, b),
                   lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)), "mul")


def scale(a: Tensor, c: float) -> Tensor:
    return make_op(a.data * c, (a,), lambda g: (g * c,), "scale")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return make_op(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes."""
    if a.data.ndim < 2:
        raise ShapeError(f"transpose needs >= 2 dims, got {a.dims}")
    return make_op(np.swapaxes(a.data, -1, -2).copy(), (a,),
                   lambda g: (np.swapaxes(g, -1, -2),), "transpose")


def tsum(a: Tensor) -> Tensor:
    shape = a.shape
    return make_op(np.sum(a.data), (a,), lambda g: (np.broadcast_to(g, shape).copy(),), "sum")


def mean(a: Tensor) -> Tensor:
    shape, n = a.shape, a.data.size
    return make_op(np.mean(a.data), (a,), lambda g: (np.full(shape, g / n),), "mean")


def _topo_order(root: Tensor) -> list[Tensor]:
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
            if id(p) not in seen:
                stack.append((p, False))
    return order


def graph_nodes(root: Tensor) -> list[Tensor]:
    """All tensors reachable from ``root``, inputs first."""
    return _topo_order(root)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``."""
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got dims {loss.dims}")
    if not loss.requires_grad:
        raise StateError("backward called on a tensor with no recorded forward graph")
    if loss.is_leaf:
        loss.grad += 1.0
        if isinstance(loss, Parameter):
            loss.has_grad = True
        return
    order = _topo_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            if node.requires_grad:
                node.grad += g
                if isinstance(node, Parameter):
                    node.has_grad = True
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = np.asarray(pg, dtype=np.float64)


def zero_grads(params: Iterable[Parameter]) -> None:
    for p in params:
        p.grad[...] = 0.0
        p.has_grad = False


def first_nonfinite(root: Tensor) -> Tensor | None:
    """Earliest tensor (in evaluation order) of ``root``'s graph holding NaN/Inf."""
    for node in _topo_order(root):
        if not np.all(np.isfinite(node.data)):
            return node
    return None


def svd3(a) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """SVD of a 3x3 matrix: returns ``(U, S, V)`` with ``a == U @ diag(S) @ V.T``.

    ``S`` is non-negative and descending.
    """
    m = np.asarray(a.data if isinstance(a, Tensor) else a, dtype=np.float64)
    if m.shape != (3, 3):
        raise ShapeError(f"svd3 expects 3x3, got {list(m.shape)}")
    if not np.all(np.isfinite(m)):
        raise NumericalError("svd3: non-finite input")
    try:
        u, s, vt = np.linalg.svd(m)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"svd3 did not converge: {exc}") from exc
    return u, s, vt.T
