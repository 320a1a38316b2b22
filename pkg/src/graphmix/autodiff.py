"""Reverse-mode automatic differentiation over dense rank-<=2 tensors.

The engine is tape-based: while a :class:`Tape` is active, every operation
whose inputs require gradients appends a node (op kind, input handles, saved
values inside the backward closure) to the tape, in construction order.
``backward`` walks the nodes in exact reverse order and accumulates gradients
into the ``grad`` field of each tensor that requires them.

All data is float64. Parameters are plain tensors with ``requires_grad=True``
that persist across tapes; a fresh tape is opened per training step.
"""

from __future__ import annotations

import threading
from typing import Callable, Optional, Sequence

import numpy as np

from .linalg import CsrMatrix, spmm
from .validation import check_probability

__all__ = [
    "Tape",
    "Tensor",
    "add",
    "add_bias",
    "backward",
    "dropout",
    "exp",
    "hadamard",
    "hstack",
    "log",
    "matmul",
    "negate",
    "op_output",
    "relu",
    "reshape",
    "scale",
    "scale_columns",
    "slice_cols",
    "slice_rows",
    "softmax_cross_entropy_masked",
    "spmm_const",
    "square",
    "sub",
    "sum_all",
    "tanh",
    "tile_rows",
]

_state = threading.local()


def _active_tape() -> Optional["Tape"]:
    return getattr(_state, "tape", None)


class ShapeMismatch(ValueError):
    pass


class Tensor:
    """A dense float64 value (rank 0, 1 or 2) that may carry a gradient."""

    __slots__ = ("data", "requires_grad", "grad", "node_id")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 2:
            raise ValueError(f"tensor rank capped at 2, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.node_id: Optional[int] = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class _Node:
    __slots__ = ("kind", "out", "inputs", "backward_fn")

    def __init__(self, kind, out, inputs, backward_fn):
        self.kind = kind
        self.out = out
        self.inputs = inputs
        self.backward_fn = backward_fn


class Tape:
    """Append-only record of operations, topologically ordered by construction."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        if _active_tape() is not None:
            raise RuntimeError("a tape is already active on this thread")
        _state.tape = self
        return self

    def __exit__(self, *exc):
        _state.tape = None
        return False


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def op_output(
    kind: str,
    out_data: np.ndarray,
    inputs: Sequence[Tensor],
    backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]],
) -> Tensor:
    """Create an op result, recording a node if a tape is active and needed.

    ``backward_fn`` maps the output gradient to one gradient (or None) per
    input, aligned with ``inputs``. Modules outside this one use this hook to
    define their own differentiable operations.
    """
    requires = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=requires)
    tape = _active_tape()
    if tape is not None and requires:
        tape.nodes.append(_Node(kind, out, tuple(inputs), backward_fn))
        out.node_id = len(tape.nodes) - 1
    return out


def backward(tape: Tape, loss: Tensor) -> None:
    """Accumulate gradients of ``loss`` into every tensor recorded on the tape.

    Gradients of all tensors touched by the tape are reset first, so leaves
    the loss does not depend on end up with exact zeros.
    """
    if loss.data.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.data.shape}")
    for node in tape.nodes:
        if node.out.requires_grad:
            node.out.grad = None
        for t in node.inputs:
            if t.requires_grad:
                t.grad = None
    for node in tape.nodes:
        if node.out.requires_grad and node.out.grad is None:
            node.out.grad = np.zeros_like(node.out.data)
        for t in node.inputs:
            if t.requires_grad and t.grad is None:
                t.grad = np.zeros_like(t.data)
    if loss.requires_grad:
        loss.grad = np.ones_like(loss.data)
    for node in reversed(tape.nodes):
        g = node.out.grad
        if g is None or not np.any(g):
            continue
        grads = node.backward_fn(g)
        for t, gt in zip(node.inputs, grads):
            if gt is None or not t.requires_grad:
                continue
            t.grad = t.grad + gt


def _check_same_shape(a: Tensor, b: Tensor, op: str):
    if a.data.shape != b.data.shape:
        raise ShapeMismatch(f"{op}: shapes {a.data.shape} and {b.data.shape} differ")


# ---------------------------------------------------------------------------
# elementwise suite


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape(a, b, "add")
    return op_output("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape(a, b, "sub")
    return op_output("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def hadamard(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape(a, b, "hadamard")
    ad, bd = a.data, b.data
    return op_output("hadamard", ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)
    return op_output("scale", a.data * c, (a,), lambda g: (g * c,))


def negate(a) -> Tensor:
    a = _as_tensor(a)
    return op_output("negate", -a.data, (a,), lambda g: (-g,))


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out = np.exp(a.data)
    return op_output("exp", out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = _as_tensor(a)
    ad = a.data
    return op_output("log", np.log(ad), (a,), lambda g: (g / ad,))


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    out = np.tanh(a.data)
    return op_output("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0
    return op_output("relu", np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def square(a) -> Tensor:
    a = _as_tensor(a)
    ad = a.data
    return op_output("square", ad * ad, (a,), lambda g: (g * (2.0 * ad),))


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeMismatch(f"matmul: cannot multiply {a.data.shape} by {b.data.shape}")
    ad, bd = a.data, b.data
    return op_output("matmul", ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def spmm_const(S: CsrMatrix, x) -> Tensor:
    """Product by a constant sparse operator; gradients flow to x only."""
    x = _as_tensor(x)
    out = spmm(S, x.data)
    St = S.transpose()

    def bwd(g):
        return (St.to_scipy() @ g,)

    return op_output("spmm_const", out, (x,), bwd)


def add_bias(x, b) -> Tensor:
    """Add a length-q bias vector to every row of an n x q tensor."""
    x, b = _as_tensor(x), _as_tensor(b)
    if x.data.ndim != 2 or b.data.ndim != 1 or b.data.shape[0] != x.data.shape[1]:
        raise ShapeMismatch(f"add_bias: shapes {x.data.shape} and {b.data.shape}")
    return op_output("add_bias", x.data + b.data[None, :], (x, b), lambda g: (g, g.sum(axis=0)))


def scale_columns(x, v) -> Tensor:
    """Multiply column l of x by v[l]."""
    x, v = _as_tensor(x), _as_tensor(v)
    if x.data.ndim != 2 or v.data.ndim != 1 or v.data.shape[0] != x.data.shape[1]:
        raise ShapeMismatch(f"scale_columns: shapes {x.data.shape} and {v.data.shape}")
    xd, vd = x.data, v.data
    return op_output(
        "scale_columns",
        xd * vd[None, :],
        (x, v),
        lambda g: (g * vd[None, :], (g * xd).sum(axis=0)),
    )


def hstack(tensors: Sequence[Tensor]) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("hstack of nothing")
    widths = [t.data.shape[1] for t in tensors]
    bounds = np.cumsum([0] + widths)

    def bwd(g):
        return tuple(g[:, bounds[i] : bounds[i + 1]] for i in range(len(tensors)))

    return op_output("hstack", np.concatenate([t.data for t in tensors], axis=1), tuple(tensors), bwd)


def slice_rows(x, start: int, stop: int) -> Tensor:
    x = _as_tensor(x)

    def bwd(g):
        gx = np.zeros_like(x.data)
        gx[start:stop] = g
        return (gx,)

    return op_output("slice_rows", x.data[start:stop].copy(), (x,), bwd)


def slice_cols(x, start: int, stop: int) -> Tensor:
    x = _as_tensor(x)

    def bwd(g):
        gx = np.zeros_like(x.data)
        gx[:, start:stop] = g
        return (gx,)

    return op_output("slice_cols", x.data[:, start:stop].copy(), (x,), bwd)


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    shape = tuple(int(s) for s in shape)
    old = x.data.shape
    return op_output("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def tile_rows(x, reps: int) -> Tensor:
    """Stack ``reps`` copies of x vertically; backward sums over copies."""
    x = _as_tensor(x)
    n = x.data.shape[0]

    def bwd(g):
        return (g.reshape(reps, n, -1).sum(axis=0).reshape(x.data.shape),)

    return op_output("tile_rows", np.tile(x.data, (reps, 1)), (x,), bwd)


def sum_all(x) -> Tensor:
    x = _as_tensor(x)
    return op_output("sum_all", np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, x.data.shape).copy(),))


# ---------------------------------------------------------------------------
# neighborhood aggregation


def _rows_sorted(xs: np.ndarray) -> bool:
    return xs.size == 0 or bool(np.all(np.diff(xs) >= 0))


def weighted_edge_aggregate(edges: np.ndarray, weights, F) -> Tensor:
    """Patch extraction: out[x, j*p + c] = sum over edges (x, y) of w[e, j] * F[y, c].

    ``edges`` is a constant (E, 2) int array of directed pairs; ``weights`` is
    a differentiable (E, J) tensor and ``F`` a differentiable (n, p) tensor.
    When the edge rows are sorted by source vertex the implementation runs on
    compiled CSR kernels; arbitrary orderings fall back to scatter-adds.
    """
    weights, F = _as_tensor(weights), _as_tensor(F)
    edges = np.asarray(edges, dtype=np.int64)
    if edges.ndim != 2 or edges.shape[1] != 2:
        raise ValueError(f"edges must be (E, 2), got {edges.shape}")
    if weights.data.ndim != 2 or weights.data.shape[0] != edges.shape[0]:
        raise ShapeMismatch(f"weights must be (E, J) with E={edges.shape[0]}")
    n, p = F.data.shape
    E, J = weights.data.shape
    if E and (edges.min() < 0 or edges.max() >= n):
        raise IndexError("edge index out of range")
    xs, ys = edges[:, 0], edges[:, 1]
    W = weights.data
    Fd = F.data

    if _rows_sorted(xs):
        import scipy.sparse as sp

        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(xs, minlength=n), out=indptr[1:])
        mats = [sp.csr_matrix((W[:, j], ys, indptr), shape=(n, n)) for j in range(J)]
        out = np.empty((n, J * p))
        for j in range(J):
            out[:, j * p : (j + 1) * p] = mats[j] @ Fd

        def bwd(g):
            gW = np.empty_like(W)
            gF = np.zeros_like(Fd)
            FY = Fd[ys]
            for j in range(J):
                gj = g[:, j * p : (j + 1) * p]
                gW[:, j] = np.einsum("ep,ep->e", gj[xs], FY)
                gF += mats[j].T @ gj
            return (gW, gF)

    else:
        out = np.zeros((n, J * p))
        FY = Fd[ys]
        for j in range(J):
            np.add.at(out[:, j * p : (j + 1) * p], xs, W[:, j, None] * FY)

        def bwd(g):
            gW = np.empty_like(W)
            gF = np.zeros_like(Fd)
            FY = Fd[ys]
            for j in range(J):
                gj = g[:, j * p : (j + 1) * p]
                gW[:, j] = np.einsum("ep,ep->e", gj[xs], FY)
                np.add.at(gF, ys, W[:, j, None] * gj[xs])
            return (gW, gF)

    return op_output("weighted_edge_aggregate", out, (weights, F), bwd)


# ---------------------------------------------------------------------------
# losses and regularization helpers


def softmax_cross_entropy_masked(logits, labels, mask) -> Tensor:
    """Mean negative log-likelihood of ``labels`` over the masked rows.

    Row-max subtraction keeps the log-sum-exp stable.
    """
    logits = _as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    n, C = logits.data.shape
    if labels.shape != (n,) or mask.shape != (n,):
        raise ShapeMismatch("labels and mask must be length-n vectors")
    rows = np.flatnonzero(mask)
    if rows.size == 0:
        raise ValueError("mask selects no rows")
    if labels[rows].min() < 0 or labels[rows].max() >= C:
        raise ValueError("labels out of range on masked rows")
    Z = logits.data[rows]
    Z = Z - Z.max(axis=1, keepdims=True)
    expZ = np.exp(Z)
    denom = expZ.sum(axis=1)
    logp = Z - np.log(denom)[:, None]
    k = rows.size
    loss = -logp[np.arange(k), labels[rows]].mean()

    def bwd(g):
        soft = expZ / denom[:, None]
        soft[np.arange(k), labels[rows]] -= 1.0
        gl = np.zeros_like(logits.data)
        gl[rows] = soft * (float(g) / k)
        return (gl,)

    return op_output("softmax_cross_entropy_masked", np.asarray(loss), (logits,), bwd)


def dropout(x, p: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Inverted dropout: scales survivors by 1/(1-p) at train time, identity in eval."""
    x = _as_tensor(x)
    p = check_probability(p, "dropout probability")
    if not training or p == 0.0:
        return x
    keep = rng.random(x.data.shape) >= p
    factor = 1.0 / (1.0 - p)
    mult = keep * factor
    return op_output("dropout", x.data * mult, (x,), lambda g: (g * mult,))
