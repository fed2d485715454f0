"""
Reverse-mode differentiation over dense numpy arrays.

A Tape records every operation whose result depends on an optimizable
leaf. Each record keeps a forward function of its input values and a
vector-Jacobian product, so the same graph can be replayed with new leaf
values (Tape.forward) and differentiated (Tape.backward) without being
rebuilt.
"""
import logging
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import sparse

from services.errors import NonFiniteError
from services.segments import SegmentLayout, segment_argmax, segment_max as _segment_max

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, float, int]


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`"""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """A value on a tape; leaves created with requires_grad=True are optimizable"""

    __slots__ = ("value", "grad", "tape", "requires_grad", "name")

    def __init__(self, value: np.ndarray, tape: "Tape", requires_grad: bool = False, name: Optional[str] = None):
        self.value = value
        self.grad: Optional[np.ndarray] = None
        self.tape = tape
        self.requires_grad = requires_grad
        self.name = name

    def __repr__(self):
        return f"<Tensor(name={self.name}, shape={self.shape}, requires_grad={self.requires_grad})>"

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def T(self) -> "Tensor":
        return transpose(self)

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

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, key):
        return take(self, key)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return reduce_sum(self, axis=axis, keepdims=keepdims)


class Node:
    """One recorded operation"""

    __slots__ = ("op", "output", "inputs", "forward", "vjp")

    def __init__(self, op: str, output: Tensor, inputs: Sequence[Tensor], forward: Callable, vjp: Callable):
        self.op = op
        self.output = output
        self.inputs = list(inputs)
        self.forward = forward
        self.vjp = vjp


class Tape:
    """
    Records operations in creation order, which is a topological order.
    """

    def __init__(self, check_finite: bool = True):
        self.nodes: List[Node] = []
        self.leaves: List[Tensor] = []
        self.check_finite = check_finite

    def __len__(self):
        return len(self.nodes)

    def leaf(self, value: ArrayLike, name: Optional[str] = None) -> Tensor:
        """A float64 array passed in is shared, so in-place updates show up on replay"""
        t = Tensor(np.asarray(value, dtype=np.float64), self, requires_grad=True, name=name)
        self.leaves.append(t)
        return t

    def constant(self, value: ArrayLike, name: Optional[str] = None) -> Tensor:
        return Tensor(np.asarray(value, dtype=np.float64), self, requires_grad=False, name=name)

    def lift(self, x) -> Tensor:
        if isinstance(x, Tensor):
            if x.tape is not self:
                raise ValueError("tensor belongs to another tape")
            return x
        return self.constant(x)

    def record(self, op: str, inputs: Sequence[Tensor], forward: Callable, vjp: Callable) -> Tensor:
        value = forward(*[t.value for t in inputs])
        requires_grad = any(t.requires_grad for t in inputs)
        out = Tensor(value, self, requires_grad=requires_grad, name=op)
        if requires_grad:
            self.nodes.append(Node(op, out, inputs, forward, vjp))
        return out

    def forward(self) -> None:
        """Recompute every recorded value from the current leaf values"""
        for node in self.nodes:
            node.output.value = node.forward(*[t.value for t in node.inputs])

    def backward(self, loss: Tensor) -> List[np.ndarray]:
        """
        Reverse sweep from a scalar loss. Every leaf gets a gradient;
        leaves the loss does not depend on get zeros.

        Returns:
            list of gradients, in leaf creation order
        """
        if loss.value.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        for node in self.nodes:
            node.output.grad = None
        for t in self.leaves:
            t.grad = None
        loss.grad = np.ones_like(loss.value)
        for index in range(len(self.nodes) - 1, -1, -1):
            node = self.nodes[index]
            g = node.output.grad
            if g is None:
                continue
            grads = node.vjp(g, node.output.value, *[t.value for t in node.inputs])
            for inp, gi in zip(node.inputs, grads):
                if not inp.requires_grad or gi is None:
                    continue
                if self.check_finite and not np.all(np.isfinite(gi)):
                    raise NonFiniteError(f"nonfinite adjoint from node {index} ({node.op})")
                inp.grad = gi if inp.grad is None else inp.grad + gi
        for t in self.leaves:
            t.grad = np.zeros_like(t.value) if t.grad is None else np.array(t.grad, dtype=np.float64)
        return [t.grad for t in self.leaves]


def _pair(a, b) -> Tuple[Tensor, Tensor]:
    tape = a.tape if isinstance(a, Tensor) else b.tape
    return tape.lift(a), tape.lift(b)


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    return a.tape.record(
        "add", [a, b],
        lambda x, y: x + y,
        lambda g, out, x, y: (unbroadcast(g, x.shape), unbroadcast(g, y.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    return a.tape.record(
        "sub", [a, b],
        lambda x, y: x - y,
        lambda g, out, x, y: (unbroadcast(g, x.shape), unbroadcast(-g, y.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    return a.tape.record(
        "mul", [a, b],
        lambda x, y: x * y,
        lambda g, out, x, y: (unbroadcast(g * y, x.shape), unbroadcast(g * x, y.shape)),
    )


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    return a.tape.record(
        "div", [a, b],
        lambda x, y: x / y,
        lambda g, out, x, y: (unbroadcast(g / y, x.shape), unbroadcast(-g * out / y, y.shape)),
    )


def neg(a: Tensor) -> Tensor:
    return a.tape.record("neg", [a], lambda x: -x, lambda g, out, x: (-g,))


def matmul(a, b) -> Tensor:
    a, b = _pair(a, b)
    return a.tape.record(
        "matmul", [a, b],
        lambda x, y: x @ y,
        lambda g, out, x, y: (g @ y.T, x.T @ g),
    )


def sparse_matmul(matrix: sparse.spmatrix, x: Tensor) -> Tensor:
    """Constant sparse matrix times a dense tensor"""
    matrix = sparse.csr_matrix(matrix)
    matrix_t = matrix.T.tocsr()
    return x.tape.record(
        "sparse_matmul", [x],
        lambda v: np.asarray(matrix @ v),
        lambda g, out, v: (np.asarray(matrix_t @ g),),
    )


def transpose(a: Tensor) -> Tensor:
    return a.tape.record("transpose", [a], lambda x: x.T, lambda g, out, x: (g.T,))


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def vjp(g, out, x):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape),)

    return a.tape.record("sum", [a], lambda x: np.sum(x, axis=axis, keepdims=keepdims), vjp)


def square(a: Tensor) -> Tensor:
    return a.tape.record("square", [a], lambda x: x * x, lambda g, out, x: (2.0 * x * g,))


def sqrt(a: Tensor) -> Tensor:
    return a.tape.record("sqrt", [a], np.sqrt, lambda g, out, x: (g / (2.0 * out),))


def sum_squares(a: Tensor) -> Tensor:
    """Squared Frobenius norm"""
    return a.tape.record(
        "sum_squares", [a],
        lambda x: np.asarray(np.sum(x * x)),
        lambda g, out, x: (2.0 * g * x,),
    )


def _softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows(a: Tensor) -> Tensor:
    """Row softmax with max subtraction"""
    return a.tape.record(
        "softmax_rows", [a],
        _softmax,
        lambda g, out, x: (out * (g - np.sum(g * out, axis=1, keepdims=True)),),
    )


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = list(tensors)
    tape = tensors[0].tape
    tensors = [tape.lift(t) for t in tensors]

    def vjp(g, out, *xs):
        bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]
        return tuple(np.split(g, bounds, axis=axis))

    return tape.record("concat", tensors, lambda *xs: np.concatenate(xs, axis=axis), vjp)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    tape = tensors[0].tape
    tensors = [tape.lift(t) for t in tensors]

    def vjp(g, out, *xs):
        return tuple(np.take(g, k, axis=axis) for k in range(len(xs)))

    return tape.record("stack", tensors, lambda *xs: np.stack(xs, axis=axis), vjp)


def reshape(a: Tensor, shape: Tuple[int, ...]) -> Tensor:
    return a.tape.record(
        "reshape", [a],
        lambda x: x.reshape(shape),
        lambda g, out, x: (g.reshape(x.shape),),
    )


def take(a: Tensor, key) -> Tensor:
    """Basic slicing (no repeated indices)"""
    def vjp(g, out, x):
        gx = np.zeros_like(x)
        gx[key] = g
        return (gx,)

    return a.tape.record("take", [a], lambda x: x[key], vjp)


def gather_rows(a: Tensor, index) -> Tensor:
    """Rows a[index]; repeated indices accumulate in the adjoint"""
    index = np.asarray(index, dtype=np.int64)

    def vjp(g, out, x):
        gx = np.zeros_like(x)
        np.add.at(gx, index, g)
        return (gx,)

    return a.tape.record("gather_rows", [a], lambda x: x[index], vjp)


def segment_max(a: Tensor, layout: SegmentLayout) -> Tensor:
    """Componentwise max per segment; the adjoint goes to the first maximizer"""
    def vjp(g, out, x):
        winners = segment_argmax(x, layout, out)
        gx = np.zeros_like(x)
        cols = np.broadcast_to(np.arange(x.shape[1]), winners.shape)
        np.add.at(gx, (winners, cols), g)
        return (gx,)

    return a.tape.record("segment_max", [a], lambda x: _segment_max(x, layout), vjp)


def cross(a, b) -> Tensor:
    """Row-wise 3D cross product"""
    a, b = _pair(a, b)
    return a.tape.record(
        "cross", [a, b],
        lambda x, y: np.cross(x, y),
        lambda g, out, x, y: (np.cross(y, g), np.cross(g, x)),
    )


def batched_matvec(matrices, vectors) -> Tensor:
    """out[k] = matrices[k] @ vectors[k] for (k, 3, 3) and (k, 3)"""
    matrices, vectors = _pair(matrices, vectors)
    return matrices.tape.record(
        "batched_matvec", [matrices, vectors],
        lambda m, v: np.einsum("kij,kj->ki", m, v),
        lambda g, out, m, v: (g[:, :, None] * v[:, None, :], np.einsum("kij,ki->kj", m, g)),
    )


def row_norms(a: Tensor) -> Tensor:
    """Euclidean norm of each row, kept as a column"""
    return sqrt(reduce_sum(square(a), axis=1, keepdims=True))
