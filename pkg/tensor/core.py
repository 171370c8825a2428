"""Dense tensors recorded on a reverse-mode tape.

Elementwise operations accept operands of identical shape or a scalar (a Python number or a 0-d tensor); every
other broadcast goes through the explicit :meth:`Tensor.broadcast_to`.
"""
import logging
from contextlib import contextmanager
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ConfigError, GradientError, NonFiniteError, ShapeError

logger = logging.getLogger(__name__)

Shape = Tuple[int, ...]
BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]
Operand = Union['Tensor', int, float]

PRECISIONS: Dict[str, type] = {'float32': np.float32, 'float64': np.float64}

_dtype: type = np.float32
_finite_audit: bool = False
_grad_enabled: bool = True


def set_precision(name: str):
    """Selects the dtype of newly created tensors: 'float32' (training) or 'float64' (verification)."""
    global _dtype
    if name not in PRECISIONS:
        raise ConfigError(f"Unknown precision '{name}', expected one of {sorted(PRECISIONS)}")
    _dtype = PRECISIONS[name]


def get_precision() -> str:
    return 'float64' if _dtype is np.float64 else 'float32'


def get_dtype() -> type:
    return _dtype


@contextmanager
def precision(name: str) -> Iterator[None]:
    previous = get_precision()
    set_precision(name)
    try:
        yield
    finally:
        set_precision(previous)


def set_finite_audit(enabled: bool):
    """When on, every operation checks its output and raises NonFiniteError on NaN/Inf."""
    global _finite_audit
    _finite_audit = enabled


def finite_audit_enabled() -> bool:
    return _finite_audit


@contextmanager
def finite_audit(enabled: bool = True) -> Iterator[None]:
    previous = _finite_audit
    set_finite_audit(enabled)
    try:
        yield
    finally:
        set_finite_audit(previous)


@contextmanager
def no_grad() -> Iterator[None]:
    """Operations inside this block are not recorded on the tape."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class Tensor:
    """An n-dimensional array that optionally participates in the gradient tape."""

    def __init__(self, data, requires_grad: bool = False):
        self.data: np.ndarray = np.asarray(data, dtype=_dtype)
        if any(extent <= 0 for extent in self.data.shape):
            raise ShapeError(f'Tensor extents must be positive, got {self.data.shape}')
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._parents: Tuple['Tensor', ...] = ()
        self._backward: Optional[BackwardFn] = None
        self._op = 'leaf'
        self._consumed = False

    @property
    def shape(self) -> Shape:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f'item() needs a single element, got shape {self.shape}')
        return float(self.data.reshape(()))

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.data).all())

    def detach(self) -> 'Tensor':
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        return f'Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad}, op={self._op})'

    def __len__(self) -> int:
        return self.shape[0]

    # Tape

    def backward(self):
        backward(self)

    def leaves(self) -> List['Tensor']:
        return [node for node in _topological_order(self) if node.is_leaf and node.requires_grad]

    # Operators

    def __add__(self, other: Operand) -> 'Tensor':
        return add(self, other)

    def __radd__(self, other: Operand) -> 'Tensor':
        return add(other, self)

    def __sub__(self, other: Operand) -> 'Tensor':
        return sub(self, other)

    def __rsub__(self, other: Operand) -> 'Tensor':
        return sub(other, self)

    def __mul__(self, other: Operand) -> 'Tensor':
        return mul(self, other)

    def __rmul__(self, other: Operand) -> 'Tensor':
        return mul(other, self)

    def __truediv__(self, other: Operand) -> 'Tensor':
        return div(self, other)

    def __neg__(self) -> 'Tensor':
        return mul(self, -1.0)

    def __matmul__(self, other: 'Tensor') -> 'Tensor':
        return matmul(self, other)

    def __getitem__(self, index) -> 'Tensor':
        return getitem(self, index)

    def reshape(self, *shape) -> 'Tensor':
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> 'Tensor':
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def mT(self) -> 'Tensor':
        axes = list(range(self.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
        return transpose(self, tuple(axes))

    def broadcast_to(self, shape: Shape) -> 'Tensor':
        return broadcast_to(self, tuple(shape))

    def sum(self, axis=None, keepdims: bool = False) -> 'Tensor':
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> 'Tensor':
        return mean(self, axis, keepdims)

    def exp(self) -> 'Tensor':
        return exp(self)

    def log(self) -> 'Tensor':
        return log(self)

    def abs(self) -> 'Tensor':
        return abs_(self)

    def square(self) -> 'Tensor':
        return square(self)


Parents = Sequence[Tensor]


def apply_op(data: np.ndarray, parents: Parents, backward_fn: BackwardFn, name: str) -> Tensor:
    """Wraps the result of a primitive and records it on the tape when any parent needs a gradient.

    ``backward_fn`` receives the output gradient and returns one gradient (or None) per parent.
    """
    out = Tensor(data)
    out._op = name
    if _grad_enabled and any(parent.requires_grad for parent in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    if _finite_audit and not np.isfinite(out.data).all():
        raise NonFiniteError(f"'{name}' produced non-finite values (output shape {out.shape})")
    return out


def as_tensor(value: Operand) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _topological_order(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    visited = set()
    on_path = set()
    stack: List[Tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            on_path.discard(id(node))
            order.append(node)
            continue
        if id(node) in visited:
            assert id(node) not in on_path, 'cycle in gradient tape'
            continue
        visited.add(id(node))
        on_path.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Tensor):
    """Populates ``grad`` on every leaf that requires a gradient and that ``loss`` depends on.

    Calling it twice on the same loss, or while a reachable leaf still holds a gradient, is an error: reset
    gradients with ``Module.zero_grad`` first.
    """
    if loss.size != 1:
        raise GradientError(f'backward() needs a scalar loss, got shape {loss.shape}')
    if not loss.requires_grad:
        raise GradientError('loss is not on the gradient tape')
    if loss._consumed:
        raise GradientError('backward() was already called for this loss')

    order = _topological_order(loss)
    stale = [node for node in order if node.is_leaf and node.requires_grad and node.grad is not None]
    if stale:
        raise GradientError(f'{len(stale)} leaf tensor(s) already hold gradients; call zero_grad() before backward()')

    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        grad = grads.pop(id(node), None)
        if grad is None:
            continue
        if node.is_leaf:
            if node.requires_grad:
                node.grad = grad
            continue
        for parent, parent_grad in zip(node._parents, node._backward(grad)):
            if parent_grad is None or not parent.requires_grad:
                continue
            if parent_grad.shape != parent.shape:
                raise ShapeError(f"gradient of '{node._op}' has shape {parent_grad.shape}, "
                                 f'parent expects {parent.shape}')
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + parent_grad
            else:
                grads[id(parent)] = parent_grad
    loss._consumed = True


# Elementwise arithmetic

def _is_scalar(t: Tensor) -> bool:
    return t.ndim == 0


def _binary(a: Operand, b: Operand, name: str) -> Tuple[Tensor, Tensor, Shape]:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape == b.shape:
        return a, b, a.shape
    if _is_scalar(a):
        return a, b, b.shape
    if _is_scalar(b):
        return a, b, a.shape
    raise ShapeError(f"'{name}' needs equal shapes or a scalar operand, got {a.shape} and {b.shape}")


def _reduce_to(grad: np.ndarray, target: Tensor) -> np.ndarray:
    if grad.shape == target.shape:
        return grad
    return np.asarray(grad.sum(), dtype=grad.dtype).reshape(target.shape)


def add(a: Operand, b: Operand) -> Tensor:
    a, b, _ = _binary(a, b, 'add')
    return apply_op(a.data + b.data, (a, b), lambda g: (_reduce_to(g, a), _reduce_to(g, b)), 'add')


def sub(a: Operand, b: Operand) -> Tensor:
    a, b, _ = _binary(a, b, 'sub')
    return apply_op(a.data - b.data, (a, b), lambda g: (_reduce_to(g, a), _reduce_to(-g, b)), 'sub')


def mul(a: Operand, b: Operand) -> Tensor:
    a, b, _ = _binary(a, b, 'mul')
    return apply_op(a.data * b.data, (a, b),
                    lambda g: (_reduce_to(g * b.data, a), _reduce_to(g * a.data, b)), 'mul')


def div(a: Operand, b: Operand) -> Tensor:
    a, b, _ = _binary(a, b, 'div')
    out = a.data / b.data

    def _backward(g):
        return _reduce_to(g / b.data, a), _reduce_to(-g * out / b.data, b)

    return apply_op(out, (a, b), _backward, 'div')


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return apply_op(out, (x,), lambda g: (g * out,), 'exp')


def log(x: Tensor) -> Tensor:
    return apply_op(np.log(x.data), (x,), lambda g: (g / x.data,), 'log')


def abs_(x: Tensor) -> Tensor:
    return apply_op(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),), 'abs')


def square(x: Tensor) -> Tensor:
    return apply_op(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,), 'square')


# Linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes.

    Leading axes of ``a`` and ``b`` must be identical, or ``b`` is a plain matrix shared by every leading index
    of ``a`` (the weight of a linear layer).
    """
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f'matmul needs at least 2-d operands, got {a.shape} and {b.shape}')
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f'matmul inner extents disagree: {a.shape} @ {b.shape}')
    shared = b.ndim == 2 and a.ndim > 2
    if not shared and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f'matmul leading extents disagree: {a.shape} @ {b.shape}')

    def _backward(g):
        grad_a = g @ np.swapaxes(b.data, -1, -2)
        if shared:
            grad_b = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            grad_b = np.swapaxes(a.data, -1, -2) @ g
        return grad_a, grad_b

    return apply_op(a.data @ b.data, (a, b), _backward, 'matmul')


# Shape manipulation

def reshape(x: Tensor, shape: Shape) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError as e:
        raise ShapeError(f'cannot reshape {x.shape} into {shape}') from e
    return apply_op(out, (x,), lambda g: (g.reshape(x.shape),), 'reshape')


def transpose(x: Tensor, axes: Optional[Shape] = None) -> Tensor:
    axes = tuple(axes) if axes is not None else tuple(reversed(range(x.ndim)))
    inverse = tuple(np.argsort(axes))
    return apply_op(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),), 'transpose')


def broadcast_to(x: Tensor, shape: Shape) -> Tensor:
    """Explicit tiling: size-1 (or missing leading) axes are repeated; the gradient sums them back."""
    try:
        out = np.broadcast_to(x.data, shape).copy()
    except ValueError as e:
        raise ShapeError(f'cannot broadcast {x.shape} to {shape}') from e
    lead = len(shape) - x.ndim

    def _backward(g):
        grad = g.sum(axis=tuple(range(lead))) if lead else g
        axes = tuple(i for i, extent in enumerate(x.shape) if extent == 1 and grad.shape[i] != 1)
        if axes:
            grad = grad.sum(axis=axes, keepdims=True)
        return grad.reshape(x.shape),

    return apply_op(out, (x,), _backward, 'broadcast_to')


def getitem(x: Tensor, index) -> Tensor:
    """Basic (slice/integer) indexing."""
    out = np.array(x.data[index])

    def _backward(g):
        grad = np.zeros_like(x.data)
        grad[index] += g
        return grad,

    return apply_op(out, (x,), _backward, 'getitem')


def take(x: Tensor, indices: np.ndarray, axis: int = 0) -> Tensor:
    """Gathers entries along ``axis``; the output replaces that axis with ``indices.shape``."""
    indices = np.asarray(indices, dtype=np.int64)
    axis = axis % x.ndim
    out = np.take(x.data, indices, axis=axis)

    def _backward(g):
        grad = np.zeros_like(x.data)
        moved = np.moveaxis(grad, axis, 0)
        g_moved = np.moveaxis(g, list(range(axis, axis + indices.ndim)), list(range(indices.ndim)))
        np.add.at(moved, indices, g_moved)
        return grad,

    return apply_op(out, (x,), _backward, 'take')


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError('concat needs at least one tensor')
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise ShapeError(f'cannot concatenate shapes {[t.shape for t in tensors]} on axis {axis}') from e
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return apply_op(out, tensors, lambda g: tuple(np.split(g, splits, axis=axis)), 'concat')


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError('stack needs at least one tensor')
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise ShapeError(f'stack needs equal shapes, got {sorted(shapes)}')
    out = np.stack([t.data for t in tensors], axis=axis)

    def _backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return apply_op(out, tensors, _backward, 'stack')


# Reductions

def _normalize_axes(axis, ndim: int) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def _backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return np.broadcast_to(g, x.shape).copy(),

    return apply_op(out, (x,), _backward, 'sum')


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes]))
    return sum_(x, axes, keepdims) * (1.0 / count)


def cumsum(x: Tensor, axis: int = 0) -> Tensor:
    def _backward(g):
        return np.flip(np.cumsum(np.flip(g, axis=axis), axis=axis), axis=axis),

    return apply_op(np.cumsum(x.data, axis=axis), (x,), _backward, 'cumsum')
