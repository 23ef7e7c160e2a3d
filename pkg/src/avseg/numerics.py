"""Dense tensors with reverse-mode automatic differentiation.

The primitive set is deliberately small: elementwise arithmetic, matmul,
transpose of the trailing two axes, row softmax, GELU, ReLU, square, sqrt,
sum / mean reductions, reshape, and a layer-norm composite. Everything is
backed by numpy arrays and works on batched operands; gradients of
broadcast operands are summed back to the operand shape.

Evaluation is deterministic: the same graph built from the same inputs
produces bit-identical values and adjoints on every run.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

from .errors import ContractError, DomainError, ShapeError

_DIV_EPS = 1e-12
_LN_EPS = 1e-5
_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


class Tensor:
    """A node in the computation graph.

    ``requires_grad`` marks trainable leaves; interior nodes require grad
    whenever any parent does. ``grad`` stays ``None`` until ``backward``
    reaches the node (use :func:`adjoint` to read it as an array).
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar; the module-level functions do the real work
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

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    """Wrap array-like data as a leaf node."""
    arr = np.asarray(data, dtype=dtype)
    if arr.dtype.kind not in "fiu":
        raise ContractError(f"tensors must be numeric, got dtype {arr.dtype}")
    return Tensor(arr, requires_grad=requires_grad)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else tensor(x)


def adjoint(t: Tensor) -> np.ndarray:
    """Gradient of a node after backward; zeros if the node was unused."""
    if t.grad is None:
        return np.zeros_like(t.data)
    return t.grad


def _needs_grad(*ts: Tensor) -> bool:
    return any(t.requires_grad for t in ts)


def _make(data, parents, backward_fn, requires_grad) -> Tensor:
    out = Tensor(data, requires_grad=requires_grad)
    if requires_grad:
        out._parents = parents
        out._backward = backward_fn
    return out


def _accumulate(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g.astype(t.data.dtype, copy=True)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward pass."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(a: Tensor, b: Tensor, op: str):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    rg = _needs_grad(a, b)

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), backward, rg)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    rg = _needs_grad(a, b)

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), backward, rg)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    rg = _needs_grad(a, b)

    def backward(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), backward, rg)


def div(a, b) -> Tensor:
    """Elementwise division; rejects divisors within 1e-12 of zero."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")
    if b.data.size == 0 or np.min(np.abs(b.data)) < _DIV_EPS:
        raise DomainError("division by a value smaller than 1e-12 in magnitude")
    rg = _needs_grad(a, b)
    out = a.data / b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g / b.data, a.shape))
        _accumulate(b, _unbroadcast(-g * out / b.data, b.shape))

    return _make(out, (a, b), backward, rg)


def square(a) -> Tensor:
    a = as_tensor(a)
    rg = _needs_grad(a)

    def backward(g):
        _accumulate(a, g * (2.0 * a.data))

    return _make(a.data * a.data, (a,), backward, rg)


def sqrt(a) -> Tensor:
    """Elementwise square root; negative inputs are a domain error.

    The derivative at exactly zero is taken as 0 (subgradient choice)
    so masked-out entries cannot poison the backward pass with inf.
    """
    a = as_tensor(a)
    if a.data.size and np.min(a.data) < 0.0:
        raise DomainError("sqrt of a negative value")
    rg = _needs_grad(a)
    out = np.sqrt(a.data)

    def backward(g):
        _accumulate(a, np.where(out > 0.0, g / (2.0 * np.where(out > 0.0, out, 1.0)), 0.0))

    return _make(out, (a,), backward, rg)


def relu(a) -> Tensor:
    a = as_tensor(a)
    rg = _needs_grad(a)
    mask = a.data > 0.0

    def backward(g):
        _accumulate(a, g * mask)

    return _make(np.where(mask, a.data, 0.0), (a,), backward, rg)


def gelu(a) -> Tensor:
    """Exact (erf-based) GELU: x * Phi(x)."""
    a = as_tensor(a)
    rg = _needs_grad(a)
    x = a.data
    phi = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out = x * phi

    def backward(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
        _accumulate(a, g * (phi + x * pdf))

    return _make(out, (a,), backward, rg)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs 2-D or higher operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul batch dims do not broadcast: {a.shape} @ {b.shape}") from None
    rg = _needs_grad(a, b)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        _accumulate(a, _unbroadcast(ga, a.shape))
        _accumulate(b, _unbroadcast(gb, b.shape))

    return _make(out, (a, b), backward, rg)


def transpose(a) -> Tensor:
    """Swap the trailing two axes."""
    a = as_tensor(a)
    if a.ndim < 2:
        raise ShapeError("transpose needs at least 2 dimensions")
    rg = _needs_grad(a)

    def backward(g):
        _accumulate(a, np.swapaxes(g, -1, -2))

    return _make(np.swapaxes(a.data, -1, -2), (a,), backward, rg)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {a.shape} to {shape}") from None
    rg = _needs_grad(a)

    def backward(g):
        _accumulate(a, g.reshape(a.shape))

    return _make(out, (a,), backward, rg)


# ---------------------------------------------------------------------------
# reductions and normalisation


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    rg = _needs_grad(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.shape).copy())
            return
        gg = g if keepdims else np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(gg, a.shape).copy())

    return _make(out, (a,), backward, rg)


def mean_pool(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = 1
        for ax in axes:
            count *= a.shape[ax]
    s = reduce_sum(a, axis=axis, keepdims=keepdims)
    return mul(s, 1.0 / count)


def softmax(a) -> Tensor:
    """Row softmax over the last axis, shift-stabilised."""
    a = as_tensor(a)
    rg = _needs_grad(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        inner = (g * out).sum(axis=-1, keepdims=True)
        _accumulate(a, out * (g - inner))

    return _make(out, (a,), backward, rg)


def layer_norm(a, eps: float = _LN_EPS) -> Tensor:
    """Normalise the last axis to zero mean, unit variance (no affine part).

    Composite of primitives so it needs no backward rule of its own;
    ``eps`` sits inside the square root.
    """
    a = as_tensor(a)
    if a.shape[-1] < 1:
        raise ShapeError("layer_norm needs a non-empty last axis")
    mu = mean_pool(a, axis=-1, keepdims=True)
    centered = sub(a, mu)
    var = mean_pool(square(centered), axis=-1, keepdims=True)
    return div(centered, sqrt(add(var, eps)))


# ---------------------------------------------------------------------------
# scalar helpers


def cosine_similarity(u, v):
    """Cosine similarity of two 1-D vectors.

    Returns a scalar Tensor when either input is a Tensor, otherwise a
    float. Near-zero norms are a domain error. The two norms are divided
    out one at a time, so each divisor individually clears the 1e-12 guard.
    """
    tu, tv = as_tensor(u), as_tensor(v)
    if tu.ndim != 1 or tv.ndim != 1:
        raise ShapeError(f"cosine_similarity expects 1-D vectors, got {tu.shape} and {tv.shape}")
    if tu.shape[0] != tv.shape[0]:
        raise ShapeError(f"cosine_similarity length mismatch: {tu.shape[0]} vs {tv.shape[0]}")
    nu = float(np.linalg.norm(tu.data))
    nv = float(np.linalg.norm(tv.data))
    if nu <= _DIV_EPS or nv <= _DIV_EPS:
        raise DomainError("cosine_similarity of a near-zero vector")
    dot = reduce_sum(mul(tu, tv))
    out = div(div(dot, sqrt(reduce_sum(square(tu)))), sqrt(reduce_sum(square(tv))))
    if isinstance(u, Tensor) or isinstance(v, Tensor):
        return out
    return float(out.data)


# ---------------------------------------------------------------------------
# backward driver


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
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


def backward(root: Tensor):
    """Reverse-mode sweep from a scalar root.

    Seeds the root adjoint with 1 and accumulates into ``grad`` of every
    reachable node that requires grad. Non-scalar roots are rejected.
    """
    if root.data.size != 1:
        raise ContractError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        root.grad = np.ones_like(root.data)
        return
    order = _topo_order(root)
    root.grad = np.ones_like(root.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
