"""Reverse-mode automatic differentiation on dense float64 arrays.

A Tensor wraps a numpy array plus, when gradients are tracked, the
closure that pushes its output gradient back to its parents.  The graph
is implicit (each result remembers its inputs) and is rebuilt on every
forward pass; ``backward`` may be called once per scalar result.

Broadcasting between two tracked operands is deliberately restricted to
two explicit patterns so shape bugs fail loudly:

  * suffix match: the smaller shape equals the trailing dims of the
    larger one, e.g. (D,) against (B, L, D);
  * trailing-axis expansion: shapes agree except the last axis of one
    operand is 1, e.g. (B, L, 1) against (B, L, D).

Plain numpy arrays and Python scalars are auto-wrapped as untracked
constants; constants are pre-broadcast to the tracked operand's shape.
"""

from __future__ import annotations

import numpy as np


class ShapeMismatchError(ValueError):
    """Operand shapes are incompatible for the requested kernel."""


class DomainError(ValueError):
    """Input outside the kernel's domain (log of non-positive, zero-vector normalize, ...)."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_backward_done")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents: tuple = ()
        self._backward = None
        self._backward_done = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

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

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _accumulate(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        # own the buffer so a later += cannot alias an op output
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad += g


def _check_elementwise(a: Tensor, b: Tensor):
    """Enforce the restricted broadcast contract between two tracked operands."""
    sa, sb = a.shape, b.shape
    if sa == sb:
        return
    for big, small in ((sa, sb), (sb, sa)):
        if len(small) <= len(big) and small == big[len(big) - len(small):]:
            return
        if len(small) == len(big) and small[:-1] == big[:-1] and small[-1] == 1 and big[-1] != 1:
            return
    raise ShapeMismatchError(f"elementwise operands not broadcastable: {sa} vs {sb}")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce an output gradient back to an operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    if g.shape != tuple(shape):
        g = g.sum(axis=-1, keepdims=True)
    return g.reshape(shape)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise(a, b)
    out_data = a.data + b.data

    def backward_fn(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _make(out_data, (a, b), backward_fn)


def sub(a, b) -> Tensor:
    return add(a, scale(as_tensor(b), -1.0))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise(a, b)
    out_data = a.data * b.data

    def backward_fn(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _make(out_data, (a, b), backward_fn)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise(a, b)
    if np.any(b.data == 0.0):
        raise DomainError("division by zero")
    out_data = a.data / b.data

    def backward_fn(g):
        _accumulate(a, _unbroadcast(g / b.data, a.shape))
        _accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(out_data, (a, b), backward_fn)


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    out_data = a.data * c

    def backward_fn(g):
        _accumulate(a, g * c)

    return _make(out_data, (a,), backward_fn)


def _swap_last2(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatchError(f"matmul needs >=2-d operands: {a.shape} vs {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatchError(f"matmul inner dimensions differ: {a.shape} vs {b.shape}")
    if b.ndim != 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeMismatchError(f"matmul batch dimensions differ: {a.shape} vs {b.shape}")
    out_data = np.matmul(a.data, b.data)

    def backward_fn(g):
        if a.requires_grad:
            _accumulate(a, np.matmul(g, _swap_last2(b.data)))
        if b.requires_grad:
            gb = np.matmul(_swap_last2(a.data), g)
            if b.ndim == 2 and gb.ndim > 2:
                gb = gb.sum(axis=tuple(range(gb.ndim - 2)))
            _accumulate(b, gb)

    return _make(out_data, (a, b), backward_fn)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.exp(a.data)

    def backward_fn(g):
        _accumulate(a, g * out_data)

    return _make(out_data, (a,), backward_fn)


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0.0):
        raise DomainError("log of non-positive input")
    out_data = np.log(a.data)

    def backward_fn(g):
        _accumulate(a, g / a.data)

    return _make(out_data, (a,), backward_fn)


def relu(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.maximum(a.data, 0.0)

    def backward_fn(g):
        _accumulate(a, g * (a.data > 0.0))

    return _make(out_data, (a,), backward_fn)


def softmax_lastdim(a) -> Tensor:
    """Row softmax along the last axis; -inf entries yield exact zeros."""
    a = as_tensor(a)
    m = np.max(a.data, axis=-1, keepdims=True)
    e = np.exp(a.data - m)
    out_data = e / e.sum(axis=-1, keepdims=True)

    def backward_fn(g):
        inner = (g * out_data).sum(axis=-1, keepdims=True)
        _accumulate(a, out_data * (g - inner))

    return _make(out_data, (a,), backward_fn)


def l2_normalize(a) -> Tensor:
    """Normalize along the last axis to unit Euclidean norm."""
    a = as_tensor(a)
    norms = np.sqrt((a.data * a.data).sum(axis=-1, keepdims=True))
    if np.any(norms == 0.0):
        raise DomainError("cannot L2-normalize a zero vector")
    out_data = a.data / norms

    def backward_fn(g):
        inner = (g * out_data).sum(axis=-1, keepdims=True)
        _accumulate(a, (g - out_data * inner) / norms)

    return _make(out_data, (a,), backward_fn)


def tensor_sum(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.asarray(a.data.sum())

    def backward_fn(g):
        _accumulate(a, np.broadcast_to(g, a.shape))

    return _make(out_data, (a,), backward_fn)


def tensor_mean(a) -> Tensor:
    a = as_tensor(a)
    n = a.size
    out_data = np.asarray(a.data.mean())

    def backward_fn(g):
        _accumulate(a, np.broadcast_to(g / n, a.shape))

    return _make(out_data, (a,), backward_fn)


def sum_lastdim(a, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.sum(axis=-1, keepdims=keepdims)

    def backward_fn(g):
        if not keepdims:
            g = np.expand_dims(g, -1)
        _accumulate(a, np.broadcast_to(g, a.shape))

    return _make(out_data, (a,), backward_fn)


def cosine(u, v) -> Tensor:
    """Cosine similarity of two equal-shape 1-d vectors."""
    u, v = as_tensor(u), as_tensor(v)
    if u.ndim != 1 or u.shape != v.shape:
        raise ShapeMismatchError(f"cosine needs equal-shape vectors: {u.shape} vs {v.shape}")
    nu = np.sqrt((u.data * u.data).sum())
    nv = np.sqrt((v.data * v.data).sum())
    if nu == 0.0 or nv == 0.0:
        raise DomainError("cosine of a zero vector")
    c = float(u.data @ v.data / (nu * nv))
    out_data = np.asarray(c)

    def backward_fn(g):
        g = float(g)
        _accumulate(u, g * (v.data / (nu * nv) - c * u.data / (nu * nu)))
        _accumulate(v, g * (u.data / (nu * nv) - c * v.data / (nv * nv)))

    return _make(out_data, (u, v), backward_fn)


def index_select(a, axis: int, indices) -> Tensor:
    """Gather slices of ``a`` along ``axis``; duplicate indices accumulate on backward."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)
    dim = a.shape[axis]
    if idx.size and (idx.min() < 0 or idx.max() >= dim):
        raise IndexError(f"index out of range for axis {axis} with extent {dim}")
    out_data = np.take(a.data, idx, axis=axis)

    def backward_fn(g):
        buf = np.zeros(a.shape, dtype=np.float64)
        moved = np.moveaxis(buf, axis, 0)
        np.add.at(moved, idx, np.moveaxis(g, axis, 0))
        _accumulate(a, buf)

    return _make(out_data, (a,), backward_fn)


def gather_lastdim(a, indices) -> Tensor:
    """out[..., ] = a[..., indices[...]] — one element picked per leading position."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)
    if idx.shape != a.shape[:-1]:
        raise ShapeMismatchError(f"gather index shape {idx.shape} must equal {a.shape[:-1]}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[-1]):
        raise IndexError(f"gather index out of range for extent {a.shape[-1]}")
    out_data = np.take_along_axis(a.data, idx[..., None], axis=-1)[..., 0]

    def backward_fn(g):
        buf = np.zeros(a.shape, dtype=np.float64)
        grids = np.meshgrid(*[np.arange(s) for s in idx.shape], indexing="ij")
        np.add.at(buf, (*grids, idx), g)
        _accumulate(a, buf)

    return _make(out_data, (a,), backward_fn)


def concat_lastdim(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[:-1] != b.shape[:-1]:
        raise ShapeMismatchError(f"concat leading dims differ: {a.shape} vs {b.shape}")
    out_data = np.concatenate([a.data, b.data], axis=-1)
    na = a.shape[-1]

    def backward_fn(g):
        _accumulate(a, g[..., :na])
        _accumulate(b, g[..., na:])

    return _make(out_data, (a, b), backward_fn)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.reshape(shape)

    def backward_fn(g):
        _accumulate(a, g.reshape(a.shape))

    return _make(out_data, (a,), backward_fn)


def permute(a, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    out_data = np.transpose(a.data, axes)
    inv = tuple(np.argsort(axes))

    def backward_fn(g):
        _accumulate(a, np.transpose(g, inv))

    return _make(out_data, (a,), backward_fn)


def transpose2d(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeMismatchError(f"transpose2d needs a matrix, got {a.shape}")
    return permute(a, (1, 0))


def apply_mask(a, weights) -> Tensor:
    """Elementwise multiply by an untracked weight array (broadcast to a's shape)."""
    a = as_tensor(a)
    w = np.broadcast_to(np.asarray(weights, dtype=np.float64), a.shape)

    def backward_fn(g):
        _accumulate(a, g * w)

    return _make(a.data * w, (a,), backward_fn)


def add_const(a, c) -> Tensor:
    """Add an untracked constant array (broadcast to a's shape)."""
    a = as_tensor(a)
    c = np.broadcast_to(np.asarray(c, dtype=np.float64), a.shape)

    def backward_fn(g):
        _accumulate(a, g)

    return _make(a.data + c, (a,), backward_fn)


def backward(loss: Tensor):
    """Populate gradients of every tracked leaf reachable from a scalar loss."""
    if not isinstance(loss, Tensor):
        raise TypeError("backward expects a Tensor")
    if loss.data.shape != ():
        raise ValueError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    if loss._backward_done:
        raise RuntimeError("backward already called on this result; rebuild the graph first")
    loss._backward_done = True
    if not loss.requires_grad:
        return

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    loss.grad = np.asarray(1.0)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def grad_check(f, x, h: float = 1e-6, max_coords: int | None = None, seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` maps a Tensor to a scalar Tensor.  The error per coordinate is
    |analytic - fd| / max(1, |fd|).  For large inputs, ``max_coords``
    limits the check to a seeded random coordinate subset.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    leaf = Tensor(base, requires_grad=True)
    out = f(leaf)
    backward(out)
    if leaf.grad is None:
        analytic = np.zeros_like(base)
    else:
        analytic = leaf.grad

    coords = np.arange(base.size)
    if max_coords is not None and max_coords < base.size:
        coords = np.random.default_rng(seed).choice(base.size, size=max_coords, replace=False)
        coords.sort()

    flat = base.reshape(-1)
    worst = 0.0
    for i in coords:
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(Tensor(base)).data)
        flat[i] = orig - h
        fm = float(f(Tensor(base)).data)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ArithmeticError(f"non-finite objective while perturbing coordinate {i}")
        fd = (fp - fm) / (2.0 * h)
        err = abs(analytic.reshape(-1)[i] - fd) / max(1.0, abs(fd))
        worst = max(worst, err)
    return worst
