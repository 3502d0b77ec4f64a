"""Dense tensors with reverse-mode automatic differentiation.

Every learnable computation in the pipeline runs through this module: a
``Tensor`` wraps a numpy array plus an optional gradient accumulator, and
each operation records its parents and a local-gradient closure on the
implicit tape (the graph of parent references).  ``Tensor.backward`` walks
that graph once in reverse topological order.

Conventions:
  * float32 is the working precision, float64 is used by gradient checks;
    anything else is cast to float32 on construction.
  * broadcasting follows numpy's trailing-dimension rules and nothing else;
    incompatible shapes raise :class:`ShapeError` naming both shapes.
  * gradient accumulation is additive: running backward twice from the same
    scalar doubles every stored gradient.
  * the graph is per-forward-pass; nothing here supports higher-order
    derivatives.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32
_FLOAT_DTYPES = (np.float32, np.float64)


class ShapeError(ValueError):
    """Raised when operand shapes are not broadcast-compatible."""


def _as_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if arr.dtype not in _FLOAT_DTYPES:
        return arr.astype(DEFAULT_DTYPE)
    return arr


class Tensor:
    """A dense n-dimensional array with optional gradient tracking."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        self.data = _as_array(data, dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name

    # ---------------------------------------------------------------- basics
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
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        """Detached copy of the values."""
        return np.array(self.data)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_not_scalar(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{tag}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return self.data.shape[0]

    # ------------------------------------------------------------- backward
    def backward(self, grad=None) -> None:
        """Reverse-mode sweep from this tensor.

        ``grad`` defaults to 1 for scalars; non-scalar roots must supply an
        upstream gradient of the same shape.  Visits every reachable node
        exactly once, in reverse topological order.
        """
        if not self.requires_grad:
            raise RuntimeError("backward() on a tensor that does not require grad")
        if grad is None:
            if self.data.size != 1:
                raise RuntimeError("backward() without an explicit gradient needs a scalar root")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)
            if grad.shape != self.data.shape:
                raise ShapeError(f"upstream gradient shape {grad.shape} != tensor shape {self.data.shape}")

        order = self._toposort()
        _accumulate(self, grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def _toposort(self) -> list["Tensor"]:
        # Iterative postorder DFS over parent links; nodes that do not
        # require grad terminate the walk.
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))
        return order

    # ------------------------------------------------------------ operators
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_promote(other, like=self), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_promote(other, like=self), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return pow_(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims: bool = False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes)

    @property
    def T(self):
        return transpose(self, None)


def _raise_not_scalar(t: Tensor):
    raise ValueError(f"item() on non-scalar tensor of shape {t.shape}")


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if g.dtype != t.data.dtype:
        g = g.astype(t.data.dtype)
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad += g


def _promote(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.data.dtype))


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable | None, name: str) -> Tensor:
    out = Tensor(data)
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward
        out.name = name
    return out


def _broadcast_check(sa: tuple[int, ...], sb: tuple[int, ...], opname: str) -> None:
    # Trailing-dimension broadcasting only: right-align, each pair of extents
    # must match or one of them be 1.
    for da, db in zip(reversed(sa), reversed(sb)):
        if da != db and da != 1 and db != 1:
            raise ShapeError(f"{opname}: shapes {sa} and {sb} are not broadcast-compatible")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of trailing-dim broadcasting)."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ------------------------------------------------------------------ binary


def add(a, b) -> Tensor:
    a, b = _pair(a, b, "add")
    out = a.data + b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _make(out, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b, "sub")
    out = a.data - b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _make(out, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b, "mul")
    out = a.data * b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _make(out, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b, "div")
    out = a.data / b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g / b.data, a.shape))
        _accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(out, (a, b), backward, "div")


def maximum(a, b) -> Tensor:
    """Elementwise max; ties route the gradient to the first argument."""
    a, b = _pair(a, b, "maximum")
    out = np.maximum(a.data, b.data)
    take_a = a.data >= b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g * take_a, a.shape))
        _accumulate(b, _unbroadcast(g * (~take_a), b.shape))

    return _make(out, (a, b), backward, "maximum")


def _pair(a, b, opname: str) -> tuple[Tensor, Tensor]:
    if not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.data.dtype if isinstance(b, Tensor) else None))
    if not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.data.dtype))
    _broadcast_check(a.shape, b.shape, opname)
    return a, b


# ------------------------------------------------------------------- unary


def neg(a: Tensor) -> Tensor:
    def backward(g):
        _accumulate(a, -g)

    return _make(-a.data, (a,), backward, "neg")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def backward(g):
        _accumulate(a, g * out)

    return _make(out, (a,), backward, "exp")


def log(a: Tensor) -> Tensor:
    out = np.log(a.data)

    def backward(g):
        _accumulate(a, g / a.data)

    return _make(out, (a,), backward, "log")


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)

    def backward(g):
        _accumulate(a, g / (2.0 * out))

    return _make(out, (a,), backward, "sqrt")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def backward(g):
        _accumulate(a, g * (1.0 - out * out))

    return _make(out, (a,), backward, "tanh")


def sigmoid(a: Tensor) -> Tensor:
    # Stable two-sided form.
    x = a.data
    out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out = out.astype(x.dtype)

    def backward(g):
        _accumulate(a, g * out * (1.0 - out))

    return _make(out, (a,), backward, "sigmoid")


def softplus(a: Tensor) -> Tensor:
    out = np.logaddexp(np.zeros((), dtype=a.data.dtype), a.data)
    sig = np.where(a.data >= 0, 1.0 / (1.0 + np.exp(-np.abs(a.data))),
                   np.exp(-np.abs(a.data)) / (1.0 + np.exp(-np.abs(a.data))))

    def backward(g):
        _accumulate(a, (g * sig).astype(a.data.dtype))

    return _make(out.astype(a.data.dtype), (a,), backward, "softplus")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    out = a.data * mask

    def backward(g):
        _accumulate(a, g * mask)

    return _make(out, (a,), backward, "relu")


def leaky_relu(a: Tensor, slope: float = 0.01) -> Tensor:
    mask = a.data > 0
    out = np.where(mask, a.data, slope * a.data).astype(a.data.dtype)

    def backward(g):
        _accumulate(a, (g * np.where(mask, 1.0, slope)).astype(a.data.dtype))

    return _make(out, (a,), backward, "leaky_relu")


def silu(a: Tensor) -> Tensor:
    x = a.data
    sig = 1.0 / (1.0 + np.exp(-x))
    out = (x * sig).astype(x.dtype)

    def backward(g):
        _accumulate(a, (g * (sig * (1.0 + x * (1.0 - sig)))).astype(x.dtype))

    return _make(out, (a,), backward, "silu")


def abs_(a: Tensor) -> Tensor:
    out = np.abs(a.data)
    sign = np.sign(a.data)

    def backward(g):
        _accumulate(a, g * sign)

    return _make(out, (a,), backward, "abs")


def pow_(a: Tensor, exponent: float) -> Tensor:
    if isinstance(exponent, Tensor):
        raise TypeError("pow_ supports scalar exponents only")
    out = a.data ** exponent

    def backward(g):
        _accumulate(a, (g * exponent * a.data ** (exponent - 1.0)).astype(a.data.dtype))

    return _make(out, (a,), backward, "pow")


def clamp_min(a: Tensor, floor: float) -> Tensor:
    """max(a, floor) against a constant; gradient passes where a > floor."""
    mask = a.data > floor
    out = np.where(mask, a.data, floor).astype(a.data.dtype)

    def backward(g):
        _accumulate(a, g * mask)

    return _make(out, (a,), backward, "clamp_min")


# -------------------------------------------------------------- reductions


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.shape).copy() if np.ndim(g) == 0 or g.shape != a.shape else g)
            return
        gg = g
        if not keepdims:
            gg = np.expand_dims(gg, axis=axis)
        _accumulate(a, np.broadcast_to(gg, a.shape).astype(a.data.dtype).copy())

    return _make(np.asarray(out, dtype=a.data.dtype), (a,), backward, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else np.prod([a.shape[ax] for ax in _norm_axes(axis, a.ndim)])
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / float(count))


def _norm_axes(axis, ndim) -> tuple[int, ...]:
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


# ------------------------------------------------------------------ matmul


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if not isinstance(a, Tensor) or not isinstance(b, Tensor):
        raise TypeError("matmul expects two Tensors")
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    _broadcast_check(a.shape[:-2], b.shape[:-2], "matmul (batch dims)")
    out = a.data @ b.data

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        _accumulate(a, _unbroadcast(ga, a.shape))
        _accumulate(b, _unbroadcast(gb, b.shape))

    return _make(out, (a, b), backward, "matmul")


# ---------------------------------------------------------- shape plumbing


def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape)

    def backward(g):
        _accumulate(a, g.reshape(a.shape))

    return _make(out, (a,), backward, "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    out = np.transpose(a.data, axes)
    if axes is None:
        inv = None
    else:
        inv = np.argsort(axes)

    def backward(g):
        _accumulate(a, np.transpose(g, inv))

    return _make(out, (a,), backward, "transpose")


def getitem(a: Tensor, key) -> Tensor:
    """Basic slicing only (ints, slices, tuples thereof, Ellipsis)."""
    out = a.data[key]

    def backward(g):
        full = np.zeros_like(a.data)
        full[key] += g
        _accumulate(a, full)

    return _make(np.ascontiguousarray(out), (a,), backward, "getitem")


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    ts = list(tensors)
    out = np.concatenate([t.data for t in ts], axis=axis)
    extents = [t.shape[axis] for t in ts]
    offsets = np.cumsum([0] + extents)

    def backward(g):
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accumulate(t, g[tuple(sl)])

    return _make(out, ts, backward, "concat")


def stack(tensors: Iterable[Tensor], axis: int = -1) -> Tensor:
    ts = list(tensors)
    out = np.stack([t.data for t in ts], axis=axis)
    ax = axis % out.ndim

    def backward(g):
        for i, t in enumerate(ts):
            _accumulate(t, np.take(g, i, axis=ax))

    return _make(out, ts, backward, "stack")


def take_rows(a: Tensor, idx) -> Tensor:
    """Gather rows along axis 0 with an integer index array; scatter-add backward."""
    idx = np.asarray(idx)
    if idx.dtype.kind not in "iu":
        raise TypeError("take_rows expects an integer index array")
    out = a.data[idx]

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        _accumulate(a, full)

    return _make(out, (a,), backward, "take_rows")


# --------------------------------------------------------- normalizations


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        _accumulate(a, out * (g - dot))

    return _make(out.astype(a.data.dtype), (a,), backward, "softmax")


def layer_norm(a: Tensor, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Zero-mean unit-variance normalization along ``axis`` (population variance).

    Affine scale/shift, when wanted, is applied by the caller.
    """
    mu = a.data.mean(axis=axis, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    out = xc * inv
    n = a.shape[axis]

    def backward(g):
        gm = g.mean(axis=axis, keepdims=True)
        gx = (g * out).mean(axis=axis, keepdims=True)
        _accumulate(a, (inv * (g - gm - out * gx)).astype(a.data.dtype))

    return _make(out.astype(a.data.dtype), (a,), backward, "layer_norm")


# ----------------------------------------------------------- constructors


def zeros(shape, dtype=DEFAULT_DTYPE, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)


def ones(shape, dtype=DEFAULT_DTYPE, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=requires_grad)


def param(rng: np.random.Generator, shape, scale: float | None = None, dtype=DEFAULT_DTYPE) -> Tensor:
    """A trainable tensor with fan-in scaled normal init (zero if scale=0)."""
    if scale is None:
        fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else int(shape[0])
        scale = 1.0 / np.sqrt(max(fan_in, 1))
    data = rng.standard_normal(shape) * scale if scale > 0 else np.zeros(shape)
    return Tensor(data.astype(dtype), requires_grad=True)
