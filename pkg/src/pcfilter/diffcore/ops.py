"""Differentiable primitives.

No primitive broadcasts implicitly. Row-vector bias addition and neighbour
expansion have their own explicit primitives.
"""
from __future__ import annotations

import numpy as np
from scipy import sparse

from .tensor import ShapeError, Tensor, as_tensor, emit


def _require_same(op, a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def matmul(a, b) -> Tensor:
    """``a @ b`` where ``b`` is 2-D and ``a`` has any number of leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if b.data.ndim != 2 or a.data.ndim < 2 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    lead = a.shape[:-1]
    a2 = a.data.reshape(-1, a.shape[-1])
    out = (a2 @ b.data).reshape(*lead, b.shape[1])

    def vjp(g):
        g2 = g.reshape(-1, b.shape[1])
        ga = (g2 @ b.data.T).reshape(a.shape) if a.requires_grad else None
        gb = a2.T @ g2 if b.requires_grad else None
        return ga, gb

    return emit(out, (a, b), vjp, "matmul")


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _require_same("add", a, b)
    return emit(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _require_same("sub", a, b)
    return emit(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def scalar_mul(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return emit(a.data * c, (a,), lambda g: (g * c,), "scalar_mul")


def add_rowvec(x, b) -> Tensor:
    """Add a length-d vector to every row along the last axis of ``x``."""
    x, b = as_tensor(x), as_tensor(b)
    if b.data.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ShapeError(f"add_rowvec: cannot add {b.shape} to rows of {x.shape}")
    axes = tuple(range(x.data.ndim - 1))
    return emit(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=axes)), "add_rowvec")


def concat_lastdim(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[:-1] != b.shape[:-1]:
        raise ShapeError(f"concat_lastdim: leading shapes differ {a.shape} vs {b.shape}")
    da = a.shape[-1]
    out = np.concatenate([a.data, b.data], axis=-1)
    return emit(out, (a, b), lambda g: (g[..., :da], g[..., da:]), "concat_lastdim")


def slice_rows(a, start: int, stop: int) -> Tensor:
    """Rows ``start:stop`` of a 2-D tensor."""
    a = as_tensor(a)
    if a.data.ndim != 2 or not 0 <= start < stop <= a.shape[0]:
        raise ShapeError(f"slice_rows: bad range [{start}, {stop}) for {a.shape}")

    def vjp(g):
        full = np.zeros_like(a.data)
        full[start:stop] = g
        return (full,)

    return emit(a.data[start:stop], (a,), vjp, "slice_rows")


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return emit(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def leaky_relu(x, slope: float = 0.1) -> Tensor:
    x = as_tensor(x)
    if not 0.0 <= slope <= 1.0:
        raise ValueError(f"leaky_relu: slope must lie in [0, 1], got {slope}")
    data = x.data
    out = np.maximum(data, slope * data)
    return emit(out, (x,), lambda g: (np.where(data > 0, g, slope * g),), "leaky_relu")


def reduce_max(x, axis: int) -> tuple[Tensor, np.ndarray]:
    """Max along ``axis``; returns the values and the (lowest-index) argmax."""
    x = as_tensor(x)
    axis = axis % x.data.ndim
    arg = np.argmax(x.data, axis=axis)
    arg_k = np.expand_dims(arg, axis)
    values = np.take_along_axis(x.data, arg_k, axis=axis).squeeze(axis)

    def vjp(g):
        full = np.zeros_like(x.data)
        np.put_along_axis(full, arg_k, np.expand_dims(g, axis), axis=axis)
        return (full,)

    return emit(values, (x,), vjp, "reduce_max"), arg


def _scatter_matrix(index: np.ndarray, n_rows: int) -> sparse.csr_matrix:
    """Sparse S with (S @ G)[r] = sum of G[e] over flat entries e with index[e] == r."""
    flat = index.ravel()
    return sparse.csr_matrix(
        (np.ones(flat.size), (flat, np.arange(flat.size))), shape=(n_rows, flat.size)
    )


def matmul_reduce_max(x, w, axis: int = 1) -> tuple[Tensor, np.ndarray]:
    """``reduce_max(matmul(x, w), axis)`` for a 3-D ``x``, fused.

    Only the argmax entries carry gradient, so the backward pass works on an
    (n, d_out) sparse adjoint instead of the full (n, k, d_out) one.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.data.ndim != 3 or axis != 1 or w.data.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ShapeError(f"matmul_reduce_max: incompatible shapes {x.shape} @ {w.shape} (axis={axis})")
    n, k, d = x.shape
    m = w.shape[1]
    x2 = x.data.reshape(n * k, d)
    # (n, m, k) layout keeps the reduced axis contiguous
    prod = np.matmul(w.data.T, x.data.transpose(0, 2, 1))
    arg = np.argmax(prod, axis=2)
    values = np.take_along_axis(prod, arg[:, :, None], axis=2)[:, :, 0]

    def vjp(g):
        # row of the flattened (n*k) edge axis that won each (node, channel)
        rows = (np.arange(n)[:, None] * k + arg).ravel()
        cols = np.tile(np.arange(m), n)
        gsp = sparse.csr_matrix((g.ravel(), (rows, cols)), shape=(n * k, m))
        gx = np.asarray(gsp @ w.data.T).reshape(n, k, d) if x.requires_grad else None
        gw = np.asarray((gsp.T @ x2)).T if w.requires_grad else None
        return gx, gw

    return emit(values, (x, w), vjp, "matmul_reduce_max"), arg


def gather_rows(x, index: np.ndarray) -> Tensor:
    """``x[index]`` for an integer index array of any shape (x is 2-D)."""
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.intp)
    if x.data.ndim != 2:
        raise ShapeError(f"gather_rows: expected 2-D source, got {x.shape}")

    def vjp(g):
        return (np.asarray(_scatter_matrix(index, x.shape[0]) @ g.reshape(-1, x.shape[1])),)

    return emit(x.data[index], (x,), vjp, "gather_rows")


def expand_neighbors(x, k: int) -> Tensor:
    """Repeat each row of an (n, d) tensor k times -> (n, k, d)."""
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"expand_neighbors: expected 2-D input, got {x.shape}")
    out = np.broadcast_to(x.data[:, None, :], (x.shape[0], k, x.shape[1])).copy()
    return emit(out, (x,), lambda g: (g.sum(axis=1),), "expand_neighbors")


def neighbor_sum(center, other, index: np.ndarray) -> Tensor:
    """out[i, j] = center[i] + other[index[i, j]].

    Fused form of ``expand_neighbors(center) + gather_rows(other, index)``.
    """
    center, other = as_tensor(center), as_tensor(other)
    index = np.asarray(index, dtype=np.intp)
    if center.shape != other.shape or center.data.ndim != 2:
        raise ShapeError(f"neighbor_sum: shapes {center.shape} and {other.shape}")
    if index.ndim != 2 or index.shape[0] != center.shape[0]:
        raise ShapeError(f"neighbor_sum: index shape {index.shape} for {center.shape[0]} nodes")
    out = center.data[:, None, :] + other.data[index]

    def vjp(g):
        gc = g.sum(axis=1) if center.requires_grad else None
        go = None
        if other.requires_grad:
            go = np.asarray(_scatter_matrix(index, other.shape[0]) @ g.reshape(-1, other.shape[1]))
        return gc, go

    return emit(out, (center, other), vjp, "neighbor_sum")


def total(x) -> Tensor:
    """Sum of all entries."""
    x = as_tensor(x)
    return emit(np.asarray(x.data.sum()), (x,), lambda g: (np.full_like(x.data, g),), "sum")


def mse(a, b) -> Tensor:
    """Mean over all entries of (a - b)^2."""
    a, b = as_tensor(a), as_tensor(b)
    _require_same("mse", a, b)
    diff = a.data - b.data
    n = diff.size

    def vjp(g):
        ga = g * 2.0 * diff / n
        return ga, -ga

    return emit(np.asarray(np.mean(diff * diff)), (a, b), vjp, "mse")


def l2norm_rows(x) -> Tensor:
    """Euclidean norm of each row of an (n, d) tensor.

    The subgradient at a zero row is taken as zero.
    """
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"l2norm_rows: expected 2-D input, got {x.shape}")
    norms = np.sqrt(np.sum(x.data * x.data, axis=1))

    def vjp(g):
        safe = np.where(norms > 0, norms, 1.0)
        unit = np.where((norms > 0)[:, None], x.data / safe[:, None], 0.0)
        return (g[:, None] * unit,)

    return emit(norms, (x,), vjp, "l2norm_rows")
