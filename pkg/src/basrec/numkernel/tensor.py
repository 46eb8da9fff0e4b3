"""Dense-tensor kernel: forward ops with reverse-mode gradients.

Tensors wrap numpy arrays in float32 (training) or float64 (verification).
Every op validates that its output is finite; NaN/Inf anywhere is a hard
error because silent divergence would invalidate downstream runs.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from ..errors import NumericError, ShapeError

DTYPES = {"f32": np.float32, "f64": np.float64}

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference / measurement)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _check_finite(op: str, arr: np.ndarray) -> None:
    if not np.isfinite(arr).all():
        raise NumericError(f"non-finite value produced by op '{op}'")


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a gradient back to the shape of a broadcast operand."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """A dense array plus the bookkeeping reverse-mode differentiation needs."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "provenance")

    def __init__(self, data, dtype=None, requires_grad: bool = False, provenance: frozenset = frozenset()):
        self.data = np.asarray(data, dtype=dtype if dtype is not None else None)
        if self.data.dtype not in (np.float32, np.float64):
            self.data = self.data.astype(np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward = None
        self.provenance = provenance

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _from_op(op: str, data: np.ndarray, parents: tuple, backward) -> "Tensor":
        _check_finite(op, data)
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        prov = frozenset()
        track = False
        for p in parents:
            prov = prov | p.provenance
            track = track or p.requires_grad
        out.provenance = prov
        if _grad_enabled and track:
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def tagged(self, tag: str) -> "Tensor":
        """Same tensor value with an extra provenance tag (shares data and graph)."""
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.grad = None
        out.requires_grad = self.requires_grad
        out._parents = (self,)
        out._backward = (lambda g: (g,)) if self.requires_grad and _grad_enabled else None
        if out._backward is None:
            out._parents = ()
        out.provenance = self.provenance | {tag}
        return out

    # -- autodiff --------------------------------------------------------------

    def backward(self) -> None:
        if self.data.size != 1:
            raise ShapeError("backward() requires a scalar tensor")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is None or node.grad is None:
                continue
            for parent, pgrad in zip(node._parents, node._backward(node.grad)):
                if not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.data)
                parent.grad += pgrad

    def item(self) -> float:
        return float(self.data)

    # -- operator sugar ----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"


def constant(data, dtype) -> Tensor:
    """Non-learnable tensor (masks, mixing weights) in the given dtype."""
    return Tensor(np.asarray(data, dtype=dtype))


def _binary_check(op: str, a: Tensor, b: Tensor) -> None:
    if a.data.dtype != b.data.dtype:
        raise ShapeError(f"{op}: dtype mismatch {a.data.dtype} vs {b.data.dtype}")
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# -- elementwise ----------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _binary_check("add", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._from_op("add", a.data + b.data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, scale(b, -1.0))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _binary_check("mul", a, b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor._from_op("mul", a.data * b.data, (a, b), backward)


def scale(a: Tensor, s: float) -> Tensor:
    s = a.data.dtype.type(s)

    def backward(g):
        return (g * s,)

    return Tensor._from_op("scale", a.data * s, (a,), backward)


def sigmoid(x: Tensor) -> Tensor:
    out = 0.5 * (np.tanh(0.5 * x.data) + 1.0)

    def backward(g):
        return (g * out * (1.0 - out),)

    return Tensor._from_op("sigmoid", out, (x,), backward)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)

    def backward(g):
        return (g * (1.0 - out * out),)

    return Tensor._from_op("tanh", out, (x,), backward)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)

    def backward(g):
        return (g * (x.data > 0),)

    return Tensor._from_op("relu", out, (x,), backward)


def softplus(x: Tensor) -> Tensor:
    """log(1 + exp(x)), computed without overflow."""
    out = np.maximum(x.data, 0) + np.log1p(np.exp(-np.abs(x.data)))

    def backward(g):
        return (g * 0.5 * (np.tanh(0.5 * x.data) + 1.0),)

    return Tensor._from_op("softplus", out, (x,), backward)


# -- linear algebra ---------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.dtype != b.data.dtype:
        raise ShapeError(f"matmul: dtype mismatch {a.data.dtype} vs {b.data.dtype}")
    if a.shape[-1] != b.shape[-2 if b.data.ndim > 1 else 0]:
        raise ShapeError(f"matmul: inner dims of {a.shape} and {b.shape} differ")

    def backward(g):
        ga = _unbroadcast(g @ b.data.swapaxes(-1, -2), a.shape)
        gb = _unbroadcast(a.data.swapaxes(-1, -2) @ g, b.shape)
        return ga, gb

    return Tensor._from_op("matmul", a.data @ b.data, (a, b), backward)


def embedding_gather(table: Tensor, ids: np.ndarray) -> Tensor:
    """Rows of `table` selected by integer `ids`; backward scatter-adds."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(
            f"embedding_gather: ids in [{ids.min()}, {ids.max()}] out of range for table with {table.shape[0]} rows"
        )

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return (gt,)

    return Tensor._from_op("embedding_gather", table.data[ids], (table,), backward)


def softmax_masked(scores: Tensor, mask: np.ndarray) -> Tensor:
    """Softmax over the last axis restricted to mask-true entries.

    Masked entries get probability exactly 0; rows with no unmasked entry
    come out all-zero rather than erroring.
    """
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), scores.shape)
    neg = np.where(mask, scores.data, -np.inf)
    mx = neg.max(axis=-1, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)  # all-masked rows
    e = np.exp(neg - mx)
    e = np.where(mask, e, 0.0)
    denom = e.sum(axis=-1, keepdims=True)
    out = np.divide(e, denom, out=np.zeros_like(e), where=denom > 0)
    out = out.astype(scores.data.dtype, copy=False)

    def backward(g):
        inner = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - inner),)

    return Tensor._from_op("softmax_masked", out, (scores,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-8) -> Tensor:
    """Normalize over the last axis, then apply learned gain and bias."""
    if gain.shape != (x.shape[-1],) or bias.shape != (x.shape[-1],):
        raise ShapeError(f"layer_norm: gain/bias {gain.shape}/{bias.shape} do not match feature dim {x.shape[-1]}")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = xhat * gain.data + bias.data

    def backward(g):
        d = x.shape[-1]
        gx_hat = g * gain.data
        dx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True) - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        reduce_axes = tuple(range(g.ndim - 1))
        ggain = (g * xhat).sum(axis=reduce_axes)
        gbias = g.sum(axis=reduce_axes)
        return dx.astype(x.data.dtype, copy=False), ggain, gbias

    return Tensor._from_op("layer_norm", out.astype(x.data.dtype, copy=False), (x, gain, bias), backward)


def dropout(x: Tensor, rate: float, stream, training: bool) -> Tensor:
    """Inverted dropout with a mask drawn from the given substream."""
    if not training or rate <= 0.0:
        return x
    if rate >= 1.0:
        raise ShapeError(f"dropout: rate must be < 1, got {rate}")
    keep = (stream.random(x.shape) >= rate).astype(x.data.dtype) / x.data.dtype.type(1.0 - rate)

    def backward(g):
        return (g * keep,)

    return Tensor._from_op("dropout", x.data * keep, (x,), backward)


# -- shape manipulation -------------------------------------------------------------


def sum_all(x: Tensor) -> Tensor:
    def backward(g):
        return (np.broadcast_to(g, x.shape).astype(x.data.dtype, copy=False),)

    return Tensor._from_op("sum", np.asarray(x.data.sum(), dtype=x.data.dtype), (x,), backward)


def sum_axis(x: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).astype(x.data.dtype, copy=False),)

    return Tensor._from_op("sum", x.data.sum(axis=axis, keepdims=keepdims), (x,), backward)


def transpose_last2(x: Tensor) -> Tensor:
    def backward(g):
        return (g.swapaxes(-1, -2),)

    return Tensor._from_op("transpose", x.data.swapaxes(-1, -2), (x,), backward)


def reshape(x: Tensor, shape: tuple) -> Tensor:
    def backward(g):
        return (g.reshape(x.shape),)

    return Tensor._from_op("reshape", x.data.reshape(shape), (x,), backward)


def concat_rows(tensors: list[Tensor]) -> Tensor:
    """Concatenate along axis 0."""
    sizes = [t.shape[0] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(g[offsets[i] : offsets[i + 1]] for i in range(len(tensors)))

    return Tensor._from_op("concat", np.concatenate([t.data for t in tensors], axis=0), tuple(tensors), backward)


def permute_rows(x: Tensor, perm: np.ndarray) -> Tensor:
    """Reorder axis 0 by a permutation; backward routes through the inverse."""
    perm = np.asarray(perm)
    if sorted(perm.tolist()) != list(range(x.shape[0])):
        raise ShapeError(f"permute_rows: perm is not a permutation of 0..{x.shape[0] - 1}")
    inv = np.empty_like(perm)
    inv[perm] = np.arange(len(perm))

    def backward(g):
        return (g[inv],)

    return Tensor._from_op("permute_rows", x.data[perm], (x,), backward)


def select_time(x: Tensor, t: int) -> Tensor:
    """x[:, t, :] for a rank-3 tensor."""

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[:, t, :] = g
        return (gx,)

    return Tensor._from_op("select_time", x.data[:, t, :], (x,), backward)


def stack_time(slices: list[Tensor]) -> Tensor:
    """Stack rank-2 tensors into (B, len(slices), D)."""

    def backward(g):
        return tuple(g[:, t, :] for t in range(len(slices)))

    return Tensor._from_op("stack_time", np.stack([s.data for s in slices], axis=1), tuple(slices), backward)


def gather_rows_at(x: Tensor, idx: np.ndarray) -> Tensor:
    """out[b] = x[b, idx[b], :] for a rank-3 tensor and per-row indices."""
    idx = np.asarray(idx)
    rows = np.arange(x.shape[0])

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (rows, idx), g)
        return (gx,)

    return Tensor._from_op("gather_rows_at", x.data[rows, idx], (x,), backward)
