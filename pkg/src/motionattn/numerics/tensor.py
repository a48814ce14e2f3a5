"""Dense float64 tensors with tape-based reverse-mode differentiation.

The primitive set is deliberately small: matmul, valid 1D convolution,
ReLU, tanh, exp, sqrt, abs, concat, slice, reshape, transpose, elementwise
add/sub/mul/div (with numpy broadcasting), sum/mean reductions and an L2
norm over rows. Everything runs on row-major numpy float64 arrays; there is
no GPU path and no graph compiler.

Recording model: when a ``Tape`` is active (``with Tape() as tape``), every
primitive appends one node to the tape in execution order. The tape is a
Wengert list, so the backward sweep is a single reversed pass over the
recorded nodes. Trainable leaves are watched automatically on first use.
Tensors created outside the active tape are treated as constants unless
they are trainable.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for a primitive."""


_ACTIVE = threading.local()


def _active_tape() -> "Tape | None":
    stack = getattr(_ACTIVE, "stack", None)
    return stack[-1] if stack else None


class Tensor:
    """Value-semantic wrapper around a float64 ndarray.

    Construction from external data rejects NaN/Inf; results produced by
    primitives skip that check (a non-finite loss is surfaced by the
    training loop instead).
    """

    __slots__ = ("data", "trainable", "name", "_tape", "_idx")

    def __init__(self, data, *, trainable: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"non-finite values in tensor {name or '<unnamed>'}")
        self.data = arr
        self.trainable = trainable
        self.name = name
        self._tape = None
        self._idx = -1

    @classmethod
    def _result(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.trainable = False
        t.name = None
        t._tape = None
        t._idx = -1
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

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    # arithmetic --------------------------------------------------------

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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)

    # shape ops ---------------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self) -> "Tensor":
        return transpose(self)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    # reductions --------------------------------------------------------

    def sum(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        return tensor_mean(self, axis=axis, keepdims=keepdims)


def as_tensor(value) -> Tensor:
    """Wrap arrays/scalars as constant tensors; pass tensors through."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def parameter(data, name: str, *, rng: np.random.Generator | None = None) -> Tensor:
    """Trainable leaf tensor (copies its input)."""
    arr = np.array(data, dtype=np.float64)
    del rng
    return Tensor(arr, trainable=True, name=name)


def glorot_uniform(
    rng: np.random.Generator,
    shape: Sequence[int],
    fan_in: int | None = None,
    fan_out: int | None = None,
) -> np.ndarray:
    """Glorot/Xavier uniform draw; fans default to the trailing two dims."""
    shape = tuple(shape)
    if fan_in is None or fan_out is None:
        if len(shape) == 1:
            fan_in = fan_out = shape[0]
        elif len(shape) == 2:
            fan_in, fan_out = shape
        elif len(shape) == 3:  # conv kernels (out, in, k)
            fan_out = shape[0] * shape[2]
            fan_in = shape[1] * shape[2]
        else:
            raise ShapeError(f"glorot_uniform: unsupported shape {shape}")
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class _Node:
    __slots__ = ("parents", "backward", "shape")

    def __init__(self, parents, backward, shape):
        self.parents = parents  # tuple[int | None, ...]
        self.backward = backward  # None for leaves
        self.shape = shape


class Tape:
    """Ordered record of primitive applications, replayable backward.

    One tape has a single writer; independent models train concurrently by
    owning one tape each (the active-tape stack is thread-local).
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._leaves: dict[int, tuple[int, Tensor]] = {}  # id(tensor) -> (node idx, tensor)

    def __enter__(self) -> "Tape":
        stack = getattr(_ACTIVE, "stack", None)
        if stack is None:
            stack = []
            _ACTIVE.stack = stack
        stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _ACTIVE.stack.pop()

    def __len__(self) -> int:
        return len(self._nodes)

    def watch(self, tensor: Tensor) -> int:
        """Register ``tensor`` as a tracked leaf; returns its node index."""
        entry = self._leaves.get(id(tensor))
        if entry is not None:
            return entry[0]
        idx = len(self._nodes)
        self._nodes.append(_Node((), None, tensor.data.shape))
        self._leaves[id(tensor)] = (idx, tensor)
        tensor._tape = self
        tensor._idx = idx
        return idx

    def _parent_index(self, tensor: Tensor) -> int | None:
        if tensor._tape is self:
            return tensor._idx
        if tensor.trainable:
            return self.watch(tensor)
        return None

    def record(self, out: Tensor, parents: tuple[Tensor, ...], backward: Callable) -> None:
        idxs = tuple(self._parent_index(p) for p in parents)
        if all(i is None for i in idxs):
            return  # constant subgraph, nothing to differentiate
        out._tape = self
        out._idx = len(self._nodes)
        self._nodes.append(_Node(idxs, backward, out.data.shape))

    def gradients(
        self, loss: Tensor, params: Iterable[Tensor] | None = None
    ) -> dict[Tensor, Tensor]:
        """Return d(loss)/d(leaf) for tracked leaves.

        ``loss`` must be a scalar recorded on this tape. With ``params``
        given, the result covers exactly those tensors, mapping untouched
        leaves to zero gradients.
        """
        if loss.data.size != 1:
            raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
        if loss._tape is not self:
            raise ValueError("loss was not recorded on this tape")
        adj: list[np.ndarray | None] = [None] * len(self._nodes)
        adj[loss._idx] = np.ones_like(loss.data)
        for i in range(loss._idx, -1, -1):
            g = adj[i]
            if g is None:
                continue
            node = self._nodes[i]
            if node.backward is None:
                continue
            for parent_idx, pg in zip(node.parents, node.backward(g)):
                if parent_idx is None or pg is None:
                    continue
                if adj[parent_idx] is None:
                    adj[parent_idx] = pg  # never mutated in place below
                else:
                    adj[parent_idx] = adj[parent_idx] + pg
        out: dict[Tensor, Tensor] = {}
        if params is None:
            for idx, tensor in self._leaves.values():
                g = adj[idx]
                out[tensor] = Tensor._result(
                    g if g is not None else np.zeros_like(tensor.data)
                )
        else:
            for tensor in params:
                entry = self._leaves.get(id(tensor))
                g = adj[entry[0]] if entry is not None else None
                out[tensor] = Tensor._result(
                    g if g is not None else np.zeros_like(tensor.data)
                )
        return out


def _emit(arr: np.ndarray, parents: tuple[Tensor, ...], backward: Callable) -> Tensor:
    out = Tensor._result(arr)
    tape = _active_tape()
    if tape is not None:
        tape.record(out, parents, backward)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _broadcast_check(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# elementwise ------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _emit(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "sub")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _emit(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "mul")
    ad, bd = a.data, b.data

    def backward(g):
        return _unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)

    return _emit(ad * bd, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "div")
    ad, bd = a.data, b.data

    def backward(g):
        return (
            _unbroadcast(g / bd, a.shape),
            _unbroadcast(-g * ad / (bd * bd), b.shape),
        )

    return _emit(ad / bd, (a, b), backward)


def relu(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data

    def backward(g):
        return (g * (xd > 0),)

    return _emit(np.maximum(xd, 0.0), (x,), backward)


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)

    def backward(g):
        return (g * (1.0 - out * out),)

    return _emit(out, (x,), backward)


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)

    def backward(g):
        return (g * out,)

    return _emit(out, (x,), backward)


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    out = np.sqrt(x.data)

    def backward(g):
        return (g * 0.5 / out,)

    return _emit(out, (x,), backward)


def absolute(x) -> Tensor:
    """|x| elementwise; subgradient 0 at the kink."""
    x = as_tensor(x)
    xd = x.data

    def backward(g):
        return (g * np.sign(xd),)

    return _emit(np.abs(xd), (x,), backward)


# linear algebra ---------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim not in (1, 2) or bd.ndim not in (1, 2):
        raise ShapeError(f"matmul: ranks {ad.ndim} and {bd.ndim} unsupported")
    if ad.shape[-1] != (bd.shape[0] if bd.ndim >= 1 else 0):
        raise ShapeError(f"matmul: incompatible shapes {ad.shape} @ {bd.shape}")
    out = ad @ bd

    def backward(g):
        if ad.ndim == 2 and bd.ndim == 2:
            return g @ bd.T, ad.T @ g
        if ad.ndim == 2 and bd.ndim == 1:
            return np.outer(g, bd), ad.T @ g
        if ad.ndim == 1 and bd.ndim == 2:
            return bd @ g, np.outer(ad, g)
        return g * bd, g * ad  # 1D @ 1D -> scalar

    return _emit(out, (a, b), backward)


def conv1d(x, kernel, bias=None) -> Tensor:
    """Valid-mode 1D convolution (sliding dot product, no flip).

    Accepts a plain signal ``x: (L,), kernel: (k,)`` or the multi-channel
    form ``x: (C_in, L), kernel: (C_out, C_in, k)`` with optional per-channel
    bias. Output length is ``L - k + 1``; no implicit padding.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    xd, wd = x.data, kernel.data
    if xd.ndim == 1 and wd.ndim == 1:
        k = wd.shape[0]
        if xd.shape[0] < k:
            raise ShapeError(f"conv1d: input {xd.shape} shorter than kernel {wd.shape}")
        out = np.correlate(xd, wd, mode="valid")

        def backward(g):
            gx = np.convolve(g, wd, mode="full")
            gw = np.correlate(xd, g, mode="valid")
            return gx, gw

        return _emit(out, (x, kernel), backward)

    if xd.ndim != 2 or wd.ndim != 3:
        raise ShapeError(f"conv1d: expected (C,L) x (O,C,k), got {xd.shape} x {wd.shape}")
    c_out, c_in, k = wd.shape
    if xd.shape[0] != c_in:
        raise ShapeError(f"conv1d: channel mismatch {xd.shape} vs kernel {wd.shape}")
    length = xd.shape[1]
    if length < k:
        raise ShapeError(f"conv1d: input {xd.shape} shorter than kernel {wd.shape}")
    n_out = length - k + 1
    out = np.zeros((c_out, n_out))
    for j in range(k):
        out += wd[:, :, j] @ xd[:, j : j + n_out]

    if bias is None:

        def backward(g):
            gx = np.zeros_like(xd)
            gw = np.empty_like(wd)
            for j in range(k):
                gx[:, j : j + n_out] += wd[:, :, j].T @ g
                gw[:, :, j] = g @ xd[:, j : j + n_out].T
            return gx, gw

        return _emit(out, (x, kernel), backward)

    bias = as_tensor(bias)
    if bias.shape != (c_out,):
        raise ShapeError(f"conv1d: bias shape {bias.shape}, expected ({c_out},)")
    out += bias.data[:, None]

    def backward(g):
        gx = np.zeros_like(xd)
        gw = np.empty_like(wd)
        for j in range(k):
            gx[:, j : j + n_out] += wd[:, :, j].T @ g
            gw[:, :, j] = g @ xd[:, j : j + n_out].T
        return gx, gw, g.sum(axis=1)

    return _emit(out, (x, kernel, bias), backward)


def row_norms(x) -> Tensor:
    """Euclidean norm of each row of a 2D tensor; zero rows get zero grad."""
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError(f"row_norms: expected 2D, got {x.shape}")
    xd = x.data
    norms = np.sqrt((xd * xd).sum(axis=1))

    def backward(g):
        scale = np.zeros_like(norms)
        nz = norms > 0
        scale[nz] = g[nz] / norms[nz]
        return (scale[:, None] * xd,)

    return _emit(norms, (x,), backward)


# shape & structure ------------------------------------------------------


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    if not parts:
        raise ShapeError("concat: empty input list")
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError:
        raise ShapeError(
            f"concat: shapes {[p.shape for p in parts]} incompatible on axis {axis}"
        ) from None
    sizes = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _emit(out, tuple(parts), backward)


def take(x, key) -> Tensor:
    """Basic slicing/indexing with gradient scatter-add."""
    x = as_tensor(x)
    xd = x.data
    out = xd[key]

    def backward(g):
        gx = np.zeros_like(xd)
        np.add.at(gx, key, g)
        return (gx,)

    return _emit(np.array(out, copy=True), (x,), backward)


def reshape(x, shape: tuple[int, ...]) -> Tensor:
    x = as_tensor(x)
    in_shape = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: {in_shape} -> {shape} changes element count") from None

    def backward(g):
        return (g.reshape(in_shape),)

    return _emit(np.array(out, copy=True), (x,), backward)


def transpose(x) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError(f"transpose: expected 2D, got {x.shape}")

    def backward(g):
        return (g.T,)

    return _emit(np.array(x.data.T, copy=True), (x,), backward)


# reductions -------------------------------------------------------------


def tensor_sum(x, axis: int | None = None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    out = xd.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, xd.shape).copy(),)
        ge = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(ge, xd.shape).copy(),)

    return _emit(np.asarray(out), (x,), backward)


def tensor_mean(x, axis: int | None = None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    count = xd.size if axis is None else xd.shape[axis]
    out = xd.mean(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, xd.shape).copy() / count,)
        ge = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(ge, xd.shape).copy() / count,)

    return _emit(np.asarray(out), (x,), backward)
