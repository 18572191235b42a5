"""Dense 2-D arithmetic with reverse-mode gradients.

Every value is a 2-D numpy array; vectors are columns (``d x 1``) and a batch
of vectors is a ``d x N`` matrix whose columns are the items. A :class:`Node`
records the op that produced it; :func:`backward` walks the recorded graph in
reverse topological order and accumulates first-order gradients.

Only the small op set the model needs is provided.  Broadcasting follows numpy
rules restricted to two dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import sparse

from .errors import DimensionError, NumericalError

DEFAULT_DTYPE = np.float64


class Node:
    """A value in the computation graph plus its accumulated gradient."""

    __slots__ = ("value", "grad", "parents", "backward_fn", "requires_grad", "op", "name")

    def __init__(self, value, parents=(), backward_fn=None, requires_grad=False, op="leaf", name=None):
        self.value = value
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad
        self.op = op
        self.name = name
        self.grad = np.zeros_like(value) if requires_grad else None

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    @property
    def rows(self) -> int:
        return self.value.shape[0]

    @property
    def cols(self) -> int:
        return self.value.shape[1]

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.value)

    def item(self) -> float:
        if self.value.size != 1:
            raise DimensionError(f"item() needs a 1x1 node, got {self.value.shape}")
        return float(self.value[0, 0])

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"<Node{label} op={self.op} shape={self.value.shape}>"


def as_matrix(x, dtype=None) -> np.ndarray:
    """Coerce scalars to 1x1 and 1-D arrays to columns."""
    arr = np.asarray(x, dtype=dtype if dtype is not None else None)
    if arr.dtype.kind not in "fc":
        arr = arr.astype(dtype or DEFAULT_DTYPE)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    elif arr.ndim != 2:
        raise DimensionError(f"expected at most 2 dimensions, got shape {arr.shape}")
    return arr


def param(x, name=None, dtype=None) -> Node:
    """A trainable leaf."""
    return Node(np.array(as_matrix(x, dtype), copy=True), requires_grad=True, name=name)


def constant(x, dtype=None) -> Node:
    return Node(as_matrix(x, dtype), name=None)


def _lift(x) -> Node:
    return x if isinstance(x, Node) else constant(x)


def _make(value, parents, backward_fn, op) -> Node:
    if not np.all(np.isfinite(value)):
        raise NumericalError(f"non-finite value produced by {op}")
    requires = any(p.requires_grad for p in parents)
    return Node(value, parents, backward_fn if requires else None, requires, op)


def _unbroadcast(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    for axis in (0, 1):
        if shape[axis] == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(a: tuple[int, int], b: tuple[int, int], op: str) -> tuple[int, int]:
    out = []
    for x, y in zip(a, b):
        if x == y or y == 1:
            out.append(x)
        elif x == 1:
            out.append(y)
        else:
            raise DimensionError(f"{op}: incompatible shapes {a} and {b}")
    return tuple(out)


# ---------------------------------------------------------------------------
# ops


def matmul(a: Node, b: Node) -> Node:
    a, b = _lift(a), _lift(b)
    if a.cols != b.rows:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def backward(g):
        return g @ b.value.T, a.value.T @ g

    return _make(a.value @ b.value, (a, b), backward, "matmul")


def matmul_const(x: Node, c) -> Node:
    """``x @ c`` for a constant matrix ``c`` (dense or scipy sparse)."""
    x = _lift(x)
    if x.cols != c.shape[0]:
        raise DimensionError(f"matmul_const: cannot multiply {x.shape} by {c.shape}")
    dtype = x.value.dtype
    if sparse.issparse(c):
        ct = c.T.tocsr()
        value = np.asarray((ct @ x.value.T).T, dtype=dtype)

        def backward(g):
            return (np.asarray(c @ g.T, dtype=dtype).T,)
    else:
        c = np.asarray(c)
        value = (x.value @ c).astype(dtype, copy=False)

        def backward(g):
            return ((g @ c.T).astype(dtype, copy=False),)

    return _make(value, (x,), backward, "matmul_const")


def add(a: Node, b: Node) -> Node:
    a, b = _lift(a), _lift(b)
    _broadcast_shape(a.shape, b.shape, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.value + b.value, (a, b), backward, "add")


def sub(a: Node, b: Node) -> Node:
    a, b = _lift(a), _lift(b)
    _broadcast_shape(a.shape, b.shape, "sub")

    def backward(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return _make(a.value - b.value, (a, b), backward, "sub")


def mul(a: Node, b: Node) -> Node:
    """Elementwise product with 2-D broadcasting."""
    a, b = _lift(a), _lift(b)
    _broadcast_shape(a.shape, b.shape, "mul")

    def backward(g):
        return _unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)

    return _make(a.value * b.value, (a, b), backward, "mul")


def scale(x: Node, c: float) -> Node:
    x = _lift(x)
    return _make(x.value * c, (x,), lambda g: (g * c,), "scale")


def tanh(x: Node) -> Node:
    x = _lift(x)
    y = np.tanh(x.value)
    return _make(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def relu(x: Node) -> Node:
    x = _lift(x)
    mask = x.value > 0
    return _make(np.where(mask, x.value, 0.0).astype(x.value.dtype), (x,), lambda g: (g * mask,), "relu")


def maximum(a: Node, b: Node) -> Node:
    """Elementwise max of equal-shape nodes; ties route the gradient to ``a``."""
    a, b = _lift(a), _lift(b)
    if a.shape != b.shape:
        raise DimensionError(f"maximum: shapes differ {a.shape} vs {b.shape}")
    pick_a = a.value >= b.value

    def backward(g):
        return g * pick_a, g * ~pick_a

    return _make(np.where(pick_a, a.value, b.value), (a, b), backward, "maximum")


def transpose(x: Node) -> Node:
    x = _lift(x)
    return _make(x.value.T.copy(), (x,), lambda g: (g.T,), "transpose")


def softmax(x: Node, axis: int = 0) -> Node:
    x = _lift(x)
    z = x.value - x.value.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _make(s, (x,), backward, "softmax")


def log_softmax(x: Node, axis: int = 0) -> Node:
    x = _lift(x)
    z = x.value - x.value.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse
    s = np.exp(y)

    def backward(g):
        return (g - s * g.sum(axis=axis, keepdims=True),)

    return _make(y, (x,), backward, "log_softmax")


def concat(xs: Sequence[Node], axis: int = 0) -> Node:
    xs = [_lift(x) for x in xs]
    if not xs:
        raise DimensionError("concat: no inputs")
    other = 1 - axis
    for x in xs[1:]:
        if x.shape[other] != xs[0].shape[other]:
            raise DimensionError(
                f"concat along axis {axis}: mismatched shapes {xs[0].shape} and {x.shape}"
            )
    cuts = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _make(np.concatenate([x.value for x in xs], axis=axis), xs, backward, "concat")


def slice_axis(x: Node, start: int, stop: int, axis: int = 0) -> Node:
    x = _lift(x)
    if not 0 <= start < stop <= x.shape[axis]:
        raise DimensionError(f"slice [{start}:{stop}] out of range for axis {axis} of {x.shape}")
    index = (slice(start, stop), slice(None)) if axis == 0 else (slice(None), slice(start, stop))

    def backward(g):
        full = np.zeros_like(x.value)
        full[index] = g
        return (full,)

    return _make(x.value[index].copy(), (x,), backward, "slice")


def split(x: Node, sizes: Sequence[int], axis: int = 0) -> list[Node]:
    """Inverse of :func:`concat`."""
    if sum(sizes) != x.shape[axis]:
        raise DimensionError(f"split sizes {list(sizes)} do not cover axis {axis} of {x.shape}")
    out, start = [], 0
    for size in sizes:
        out.append(slice_axis(x, start, start + size, axis))
        start += size
    return out


def sum_reduce(x: Node, axis: int | None = None) -> Node:
    x = _lift(x)
    if axis is None:
        value = x.value.sum().reshape(1, 1)

        def backward(g):
            return (np.full_like(x.value, g[0, 0]),)
    else:
        value = x.value.sum(axis=axis, keepdims=True)

        def backward(g):
            return (np.broadcast_to(g, x.shape).copy(),)

    return _make(value, (x,), backward, "sum")


def mean(x: Node, axis: int | None = None) -> Node:
    x = _lift(x)
    count = x.value.size if axis is None else x.shape[axis]
    return scale(sum_reduce(x, axis), 1.0 / count)


def sum_squares(x: Node) -> Node:
    x = _lift(x)
    return _make(np.sum(x.value * x.value).reshape(1, 1), (x,), lambda g: (2.0 * g[0, 0] * x.value,), "sum_squares")


def stack_sum(xs: Sequence[Node]) -> Node:
    out = xs[0]
    for x in xs[1:]:
        out = add(out, x)
    return out


# ---------------------------------------------------------------------------
# backward pass


def _topological(root: Node) -> list[Node]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(root: Node, grad=None) -> None:
    """Accumulate d(root)/d(node) into ``.grad`` of every node reachable from ``root``."""
    if not root.requires_grad:
        return
    seed = np.ones_like(root.value) if grad is None else as_matrix(grad, root.value.dtype)
    if seed.shape != root.shape:
        raise DimensionError(f"seed gradient {seed.shape} does not match root {root.shape}")
    order = _topological(root)
    pending = {id(root): seed}
    for node in reversed(order):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        node.grad = node.grad + g
        if node.backward_fn is None:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if not parent.requires_grad or pg is None:
                continue
            key = id(parent)
            pending[key] = pending[key] + pg if key in pending else pg


def zero_grads(nodes) -> None:
    for node in nodes:
        node.zero_grad()


# ---------------------------------------------------------------------------
# finite-difference checking


@dataclass
class GradCheckReport:
    max_rel_error: dict[str, float] = field(default_factory=dict)
    tol: float = 1e-4

    @property
    def failures(self) -> list[str]:
        return [name for name, err in self.max_rel_error.items() if not err < self.tol]

    @property
    def passed(self) -> bool:
        return not self.failures

    def __str__(self):
        width = max((len(n) for n in self.max_rel_error), default=4)
        lines = [f"{'tensor':<{width}}  max rel. error  status"]
        for name, err in self.max_rel_error.items():
            status = "ok" if err < self.tol else "FAIL"
            lines.append(f"{name:<{width}}  {err:14.3e}  {status}")
        return "\n".join(lines)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """``|a - n| / max(|a|, |n|, floor)``; the floor keeps near-zero entries from dominating."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def grad_check(
    f: Callable[[Mapping[str, Node]], Node],
    params: Mapping[str, np.ndarray],
    h: float = 1e-5,
    tol: float = 1e-4,
    floor: float = 1e-6,
) -> GradCheckReport:
    """Compare backprop gradients of scalar ``f`` with central differences.

    ``f`` receives a mapping of name -> Node and must return a 1x1 node.
    It is called once with trainable leaves and then twice per parameter entry
    with constant leaves, so it must be deterministic.
    """
    arrays = {k: np.array(as_matrix(v, np.float64), copy=True) for k, v in params.items()}

    leaves = {k: param(v, name=k) for k, v in arrays.items()}
    out = f(leaves)
    if out.shape != (1, 1):
        raise DimensionError(f"grad_check needs a scalar function, got shape {out.shape}")
    backward(out)

    def evaluate() -> float:
        value = f({k: constant(v) for k, v in arrays.items()}).item()
        if not np.isfinite(value):
            raise NumericalError("function is not finite at a perturbed point")
        return value

    report = GradCheckReport(tol=tol)
    for name, arr in arrays.items():
        numeric = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + h
            plus = evaluate()
            arr[idx] = orig - h
            minus = evaluate()
            arr[idx] = orig
            numeric[idx] = (plus - minus) / (2.0 * h)
        err = relative_error(leaves[name].grad, numeric, floor)
        report.max_rel_error[name] = float(err.max()) if err.size else 0.0
    return report
