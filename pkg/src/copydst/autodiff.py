"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Each operation records its inputs and a local backward rule on the output
tensor (define-by-run). ``Tensor.backward`` walks the recorded graph in
reverse topological order and frees it afterwards unless asked to keep it.

Broadcasting is deliberately limited to scalar-vs-tensor and equal shapes.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ContractError(ValueError):
    """A precondition of an operation was violated."""


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        name: str | None = None,
        _parents: tuple["Tensor", ...] = (),
        _backward: BackwardFn | None = None,
    ):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def values(self) -> list[float]:
        """Flat row-major copy of the data."""
        return self.data.ravel().tolist()

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise ContractError(f"tensor of shape {self.shape} is not a scalar")

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return self.data.shape[0]

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self) -> "Tensor":
        return tsum(self)

    def backward(self, retain_graph: bool = False) -> None:
        """Populate ``grad`` on every reachable tensor that requires it.

        Leaf gradients accumulate across calls; intermediate gradients are
        overwritten. The graph is released afterwards unless ``retain_graph``.
        """
        if self.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {self.shape}")
        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                g = np.zeros_like(node.data)
            if node._parents:
                if node.requires_grad:
                    node.grad = g
                if node._backward is not None:
                    for parent, pg in zip(node._parents, node._backward(g)):
                        if pg is None or not parent.requires_grad:
                            continue
                        key = id(parent)
                        if key in grads:
                            grads[key] = grads[key] + pg
                        else:
                            grads[key] = pg
            elif node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
        if not retain_graph:
            for node in order:
                if node._parents:
                    node._parents = ()
                    node._backward = None


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
        for parent in node._parents:
            if id(parent) not in seen and parent.requires_grad:
                stack.append((parent, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make(data: np.ndarray, parents: Iterable[Tensor], backward: BackwardFn) -> Tensor:
    """Create an op output. Custom fused ops build on this."""
    parents = tuple(parents)
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data)
    return Tensor(data, requires_grad=True, _parents=parents, _backward=backward)


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    return np.full(shape, g.sum())


def _check_broadcast(a: Tensor, b: Tensor, opname: str) -> None:
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise DimensionError(f"{opname}: cannot broadcast shapes {a.shape} and {b.shape}")


def _raw_operands(a: Tensor, b: Tensor) -> tuple[np.ndarray, np.ndarray]:
    A, B = a.data, b.data
    if a.size == 1 and b.size != 1:
        A = A.reshape(())
    elif b.size == 1 and a.size != 1:
        B = B.reshape(())
    return A, B


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    A, B = _raw_operands(a, b)
    return make(A + B, (a, b), lambda g: (_reduce_to(g, a.shape), _reduce_to(g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    A, B = _raw_operands(a, b)
    return make(
        A * B,
        (a, b),
        lambda g: (_reduce_to(g * B, a.shape), _reduce_to(g * A, b.shape)),
    )


def neg(a: Tensor) -> Tensor:
    return mul(a, -1.0)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return make(out, (a,), lambda g: (g * (1.0 - out * out),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(np.atleast_1d(a.data)).reshape(a.shape)
    return make(out, (a,), lambda g: (g * out * (1.0 - out),))


def log_sigmoid(a: Tensor) -> Tensor:
    """log(sigmoid(x)) computed without cancellation for large |x|."""
    x = a.data
    out = np.minimum(x, 0.0) - np.log1p(np.exp(-np.abs(x)))
    s = _sigmoid(np.atleast_1d(x)).reshape(a.shape)
    return make(out, (a,), lambda g: (g * (1.0 - s),))


def elementwise(op: str, *args) -> Tensor:
    """Dispatch by name: ``add``, ``mul``, ``tanh`` or ``sigmoid``."""
    table = {"add": add, "mul": mul, "tanh": tanh, "sigmoid": sigmoid}
    if op not in table:
        raise ValueError(f"unknown elementwise op {op!r}")
    return table[op](*args)


def matmul(a, b) -> Tensor:
    """Matrix product. 1-D operands are treated as row/column vectors as in numpy."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim not in (1, 2) or b.data.ndim not in (1, 2):
        raise DimensionError(f"matmul: unsupported ranks {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul: inner dimensions differ for {a.shape} and {b.shape}")
    A, B = a.data, b.data
    out = A @ B

    def backward(g):
        if A.ndim == 2 and B.ndim == 2:
            return g @ B.T, A.T @ g
        if A.ndim == 2:  # matrix @ vector
            return np.outer(g, B), A.T @ g
        if B.ndim == 2:  # vector @ matrix
            return B @ g, np.outer(A, g)
        return g * B, g * A

    return make(out, (a, b), backward)


def rowwise_dot(m: Tensor, v: Tensor) -> Tensor:
    """``m @ v`` for a [rows x k] matrix, reducing each row independently.

    Row ``i`` of the result is bit-identical no matter how many other rows
    ``m`` has; BLAS kernels do not guarantee that.
    """
    m, v = as_tensor(m), as_tensor(v)
    if m.data.ndim != 2 or v.data.ndim != 1 or m.shape[1] != v.shape[0]:
        raise DimensionError(f"rowwise_dot: incompatible shapes {m.shape} and {v.shape}")
    M, V = m.data, v.data
    out = (M * V).sum(axis=1)
    return make(out, (m, v), lambda g: (np.outer(g, V), g @ M))


def tsum(a: Tensor) -> Tensor:
    return make(np.array(a.data.sum()), (a,), lambda g: (np.full(a.shape, float(g)),))


def mean(a: Tensor) -> Tensor:
    n = a.size
    return make(np.array(a.data.mean()), (a,), lambda g: (np.full(a.shape, float(g) / n),))


def softmax(x: Tensor) -> Tensor:
    if x.data.ndim != 1 or x.size == 0:
        raise DimensionError(f"softmax expects a non-empty vector, got shape {x.shape}")
    e = np.exp(x.data - x.data.max())
    out = e / e.sum()
    return make(out, (x,), lambda g: (out * (g - np.dot(g, out)),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat of an empty list")
    nd = tensors[0].data.ndim
    for t in tensors:
        if t.data.ndim != nd:
            raise DimensionError(f"concat: rank mismatch {[t.shape for t in tensors]}")
        rest = [s for i, s in enumerate(t.shape) if i != axis % nd]
        first = [s for i, s in enumerate(tensors[0].shape) if i != axis % nd]
        if rest != first:
            raise DimensionError(f"concat: shapes {[t.shape for t in tensors]} differ off axis {axis}")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return make(out, tensors, lambda g: tuple(np.split(g, bounds, axis=axis)))


def stack(tensors: Sequence[Tensor]) -> Tensor:
    """Stack equal-shape tensors along a new leading axis."""
    tensors = [as_tensor(t) for t in tensors]
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise DimensionError(f"stack: shapes differ {sorted(shapes)}")
    out = np.stack([t.data for t in tensors])
    return make(out, tensors, lambda g: tuple(g[i] for i in range(len(tensors))))


def take(a: Tensor, index) -> Tensor:
    """Basic/advanced indexing with scatter-add backward."""
    out = np.array(a.data[index])

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return make(out, (a,), backward)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = a.data.reshape(shape)
    return make(out, (a,), lambda g: (g.reshape(a.shape),))


def dropout(a: Tensor, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/keep so eval is a no-op."""
    if not training or rate <= 0.0:
        return a
    keep = 1.0 - rate
    mask = (rng.random(a.shape) < keep) / keep
    return mul(a, Tensor(mask))


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)
