"""Dense float64 tensors with reverse-mode automatic differentiation.

A small define-by-run engine: operations executed while a :class:`Graph` is
active are recorded on an append-only tape, and ``Graph.backward`` walks the
tape exactly once in reverse append order, accumulating gradients into the
``requires_grad`` leaves. Outside an active graph the same functions run as
plain numpy forward computations (used for fast inference).

Scope is deliberately narrow: float64 only, CPU only, elementwise ops accept
exact-shape or scalar operands only (no silent broadcasting). Batched 3-D
operands are supported where the sequence layers need them, e.g. matmul of a
stack of token matrices against a shared 2-D weight.
"""

from __future__ import annotations

import contextvars
import math

import numpy as np


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class GraphError(RuntimeError):
    """Misuse of the autodiff tape (e.g. non-scalar backward)."""


# Forward results are checked for NaN/Inf in debug builds (python without -O).
CHECK_FINITE = __debug__

_ACTIVE_GRAPH: contextvars.ContextVar[Graph | None] = contextvars.ContextVar(
    "mhrkit_active_graph", default=None
)


class Tensor:
    """Shaped float64 array, optionally participating in an autodiff graph.

    ``data`` exposes the values as a flat row-major array; ``grad`` (populated
    by ``Graph.backward`` for ``requires_grad`` tensors) always matches the
    array's shape. Tensors produced by operations remember the recording graph
    and their node id on its tape.
    """

    __slots__ = ("array", "requires_grad", "grad", "graph", "node_id")

    def __init__(self, array, requires_grad: bool = False):
        self.array = np.ascontiguousarray(array, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.graph: Graph | None = None
        self.node_id: int | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.array.shape

    @property
    def ndim(self) -> int:
        return self.array.ndim

    @property
    def size(self) -> int:
        return self.array.size

    @property
    def data(self) -> np.ndarray:
        """Values as a flat row-major (C-order) view."""
        return self.array.reshape(-1)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Run the recording graph's backward pass seeded from this tensor."""
        if self.graph is None:
            raise GraphError("backward called on a tensor with no recording graph")
        self.graph.backward(self)

    def item(self) -> float:
        if self.array.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.array.reshape(())[()])

    def __matmul__(self, other: Tensor) -> Tensor:
        return matmul(self, other)

    def __add__(self, other: Tensor) -> Tensor:
        return add(self, other)

    def __sub__(self, other: Tensor) -> Tensor:
        return sub(self, other)

    def __mul__(self, other: Tensor) -> Tensor:
        return mul(self, other)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={list(self.shape)}{flag})"


class _Node:
    __slots__ = ("out", "inputs", "grad_fn", "op")

    def __init__(self, out, inputs, grad_fn, op):
        self.out = out
        self.inputs = inputs
        self.grad_fn = grad_fn
        self.op = op


class Graph:
    """Append-only tape of operation records, rebuilt on every forward pass.

    Topological order is the append order; the backward pass visits each node
    exactly once in reverse. Use as a context manager::

        with Graph() as g:
            loss = mean_all(mul(y, y))
            g.backward(loss)

    Repeated backward calls accumulate into leaf ``grad`` buffers.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._token = None

    def __enter__(self) -> Graph:
        self._token = _ACTIVE_GRAPH.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_GRAPH.reset(self._token)
        self._token = None

    def _record(self, out: Tensor, inputs: tuple[Tensor, ...], grad_fn, op: str) -> None:
        out.graph = self
        out.node_id = len(self.nodes)
        self.nodes.append(_Node(out, inputs, grad_fn, op))

    def backward(self, loss: Tensor) -> None:
        if loss.graph is not self or loss.node_id is None:
            raise GraphError("loss tensor was not produced on this graph")
        if loss.array.size != 1:
            raise GraphError(f"backward requires a scalar loss, got shape {list(loss.shape)}")
        # Per-call adjoint buffers keep repeated backward calls exact: only the
        # final leaf contributions accumulate into Tensor.grad.
        adjoint: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.array)}
        for node_id in range(len(self.nodes) - 1, -1, -1):
            g_out = adjoint.pop(node_id, None)
            if g_out is None:
                continue
            node = self.nodes[node_id]
            grads = node.grad_fn(g_out)
            for tensor, grad in zip(node.inputs, grads):
                if grad is None:
                    continue
                if tensor.graph is self and tensor.node_id is not None:
                    acc = adjoint.get(tensor.node_id)
                    adjoint[tensor.node_id] = grad if acc is None else acc + grad
                elif tensor.requires_grad:
                    if tensor.grad is None:
                        tensor.grad = np.zeros_like(tensor.array)
                    tensor.grad += grad


def active_graph() -> Graph | None:
    return _ACTIVE_GRAPH.get()


def _finish(op: str, out_array: np.ndarray, inputs: tuple[Tensor, ...], grad_fn) -> Tensor:
    # single-reduction finiteness probe: NaN/Inf anywhere poisons the sum
    if CHECK_FINITE and not np.isfinite(out_array.sum()):
        raise FloatingPointError(f"non-finite values produced by op '{op}'")
    out = Tensor(out_array)
    graph = _ACTIVE_GRAPH.get()
    if graph is not None and any(
        t.requires_grad or (t.graph is graph and t.node_id is not None) for t in inputs
    ):
        graph._record(out, inputs, grad_fn, op)
    return out


def _swap(a: np.ndarray) -> np.ndarray:
    return np.swapaxes(a, -1, -2)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product. 2-D operands, or batched 3-D with a shared 2-D side.

    When one operand is 2-D and the other 3-D, the 2-D operand is applied to
    every batch entry and its gradient sums over the batch axis.
    """
    va, vb = a.array, b.array
    if va.ndim not in (2, 3) or vb.ndim not in (2, 3):
        raise ShapeError(f"matmul needs 2-D or 3-D operands, got {list(a.shape)} @ {list(b.shape)}")
    if va.shape[-1] != vb.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {list(a.shape)} @ {list(b.shape)}")
    if va.ndim == 3 and vb.ndim == 3 and va.shape[0] != vb.shape[0]:
        raise ShapeError(f"matmul batch dimensions disagree: {list(a.shape)} @ {list(b.shape)}")
    out = va @ vb

    def grad_fn(g):
        ga = g @ _swap(vb)
        gb = _swap(va) @ g
        if ga.ndim > va.ndim:
            ga = ga.sum(axis=0)
        if gb.ndim > vb.ndim:
            gb = gb.sum(axis=0)
        return ga, gb

    return _finish("matmul", out, (a, b), grad_fn)


def transpose(x: Tensor) -> Tensor:
    """Swap the last two axes."""
    if x.ndim < 2:
        raise ShapeError(f"transpose needs ndim >= 2, got shape {list(x.shape)}")
    out = _swap(x.array).copy()

    def grad_fn(g):
        return (_swap(g).copy(),)

    return _finish("transpose", out, (x,), grad_fn)


def _binary_shapes(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape == b.shape or a.size == 1 or b.size == 1:
        return
    raise ShapeError(f"{op} needs matching or scalar shapes, got {list(a.shape)} vs {list(b.shape)}")


def _reduce_to(grad: np.ndarray, tensor: Tensor) -> np.ndarray:
    if grad.shape == tensor.array.shape:
        return grad
    return np.full_like(tensor.array, grad.sum())


def add(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes("add", a, b)
    out = a.array + b.array

    def grad_fn(g):
        return _reduce_to(g, a), _reduce_to(g, b)

    return _finish("add", out, (a, b), grad_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes("sub", a, b)
    out = a.array - b.array

    def grad_fn(g):
        return _reduce_to(g, a), _reduce_to(-g, b)

    return _finish("sub", out, (a, b), grad_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes("mul", a, b)
    va, vb = a.array, b.array
    out = va * vb

    def grad_fn(g):
        return _reduce_to(g * vb, a), _reduce_to(g * va, b)

    return _finish("mul", out, (a, b), grad_fn)


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    out = x.array * c

    def grad_fn(g):
        return (g * c,)

    return _finish("scale", out, (x,), grad_fn)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.array)

    def grad_fn(g):
        return (g * (1.0 - out * out),)

    return _finish("tanh", out, (x,), grad_fn)


def sigmoid(x: Tensor) -> Tensor:
    # tanh form stays finite for large |x|.
    out = 0.5 * (1.0 + np.tanh(0.5 * x.array))

    def grad_fn(g):
        return (g * out * (1.0 - out),)

    return _finish("sigmoid", out, (x,), grad_fn)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.array, 0.0)
    mask = x.array > 0.0

    def grad_fn(g):
        return (g * mask,)

    return _finish("relu", out, (x,), grad_fn)


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax over the last axis, stabilized by row-max subtraction."""
    v = x.array
    shifted = v - v.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def grad_fn(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - dot),)

    return _finish("softmax_rows", out, (x,), grad_fn)


def standardize_rows(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Zero-mean, unit-variance standardization over the last axis."""
    v = x.array
    mean = v.mean(axis=-1, keepdims=True)
    var = v.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    out = (v - mean) * inv_std

    def grad_fn(g):
        g_mean = g.mean(axis=-1, keepdims=True)
        gy_mean = (g * out).mean(axis=-1, keepdims=True)
        return (inv_std * (g - g_mean - out * gy_mean),)

    return _finish("standardize_rows", out, (x,), grad_fn)


def sum_all(x: Tensor) -> Tensor:
    out = np.asarray(x.array.sum())

    def grad_fn(g):
        return (np.full_like(x.array, g.reshape(())[()]),)

    return _finish("sum_all", out, (x,), grad_fn)


def mean_all(x: Tensor) -> Tensor:
    n = x.array.size
    out = np.asarray(x.array.mean())

    def grad_fn(g):
        return (np.full_like(x.array, g.reshape(())[()] / n),)

    return _finish("mean_all", out, (x,), grad_fn)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    shape = tuple(shape)
    if math.prod(shape) != x.size:
        raise ShapeError(f"cannot reshape {list(x.shape)} to {list(shape)}")
    out = x.array.reshape(shape)

    def grad_fn(g):
        return (g.reshape(x.array.shape),)

    return _finish("reshape", out, (x,), grad_fn)


def slice_last(x: Tensor, start: int, stop: int) -> Tensor:
    """Slice along the last axis; gradient scatters back into place."""
    if not 0 <= start < stop <= x.shape[-1]:
        raise ShapeError(f"slice [{start}:{stop}] out of bounds for shape {list(x.shape)}")
    out = x.array[..., start:stop].copy()

    def grad_fn(g):
        full = np.zeros_like(x.array)
        full[..., start:stop] = g
        return (full,)

    return _finish("slice_last", out, (x,), grad_fn)


def concat_last(parts: list[Tensor]) -> Tensor:
    if not parts:
        raise ShapeError("concat_last needs at least one tensor")
    out = np.concatenate([p.array for p in parts], axis=-1)
    widths = [p.shape[-1] for p in parts]

    def grad_fn(g):
        grads = []
        offset = 0
        for w in widths:
            grads.append(g[..., offset:offset + w].copy())
            offset += w
        return tuple(grads)

    return _finish("concat_last", out, tuple(parts), grad_fn)


def token_at(x: Tensor, t: int) -> Tensor:
    """Select token t from a [batch, tokens, features] tensor -> [batch, features]."""
    if x.ndim != 3:
        raise ShapeError(f"token_at needs a 3-D tensor, got shape {list(x.shape)}")
    out = x.array[:, t, :].copy()

    def grad_fn(g):
        full = np.zeros_like(x.array)
        full[:, t, :] = g
        return (full,)

    return _finish("token_at", out, (x,), grad_fn)


def stack_tokens(parts: list[Tensor]) -> Tensor:
    """Stack [batch, features] tensors into [batch, tokens, features]."""
    out = np.stack([p.array for p in parts], axis=1)

    def grad_fn(g):
        return tuple(g[:, t, :].copy() for t in range(len(parts)))

    return _finish("stack_tokens", out, tuple(parts), grad_fn)


def tile_batch(x: Tensor, n: int) -> Tensor:
    """Repeat x along a new leading axis; gradient sums over that axis."""
    out = np.broadcast_to(x.array, (n,) + x.array.shape).copy()

    def grad_fn(g):
        return (g.sum(axis=0),)

    return _finish("tile_batch", out, (x,), grad_fn)


def affine_rows(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Fused dense map x @ w + b with a [1, fan_out] bias applied to every row.

    The only non-scalar broadcast in the engine lives inside this primitive,
    where its gradient (bias gets the row sums) is explicit and tested.
    """
    vx, vw, vb = x.array, w.array, b.array
    if vx.shape[-1] != vw.shape[0] or vw.ndim != 2:
        raise ShapeError(f"affine_rows mismatch: {list(x.shape)} @ {list(w.shape)}")
    if vb.shape != (1, vw.shape[1]):
        raise ShapeError(f"affine_rows bias must be [1, {vw.shape[1]}], got {list(b.shape)}")
    out = vx @ vw + vb

    def grad_fn(g):
        gx = g @ vw.T
        gw = _swap(vx) @ g
        if gw.ndim > 2:
            gw = gw.sum(axis=0)
        gb = g.reshape(-1, g.shape[-1]).sum(axis=0, keepdims=True)
        return gx, gw, gb

    return _finish("affine_rows", out, (x, w, b), grad_fn)


def lstm_cell_state(z: Tensor, c_prev: Tensor) -> Tensor:
    """Fused LSTM cell update from packed gate pre-activations.

    z packs [input | forget | candidate | output] blocks of width H; this op
    consumes the first three: c = sigmoid(z_i) * tanh(z_g) + sigmoid(z_f) * c_prev.
    """
    hs = c_prev.array.shape[-1]
    if z.array.shape[-1] != 4 * hs:
        raise ShapeError(f"z must pack 4 gates of width {hs}, got {list(z.shape)}")
    vz = z.array
    i = 0.5 * (1.0 + np.tanh(0.5 * vz[:, :hs]))
    f = 0.5 * (1.0 + np.tanh(0.5 * vz[:, hs:2 * hs]))
    g = np.tanh(vz[:, 2 * hs:3 * hs])
    out = f * c_prev.array + i * g

    def grad_fn(dc):
        dz = np.zeros_like(vz)
        dz[:, :hs] = dc * g * i * (1.0 - i)
        dz[:, hs:2 * hs] = dc * c_prev.array * f * (1.0 - f)
        dz[:, 2 * hs:3 * hs] = dc * i * (1.0 - g * g)
        return dz, dc * f

    return _finish("lstm_cell_state", out, (z, c_prev), grad_fn)


def lstm_hidden(z: Tensor, c: Tensor) -> Tensor:
    """Fused LSTM output gate: h = sigmoid(z_o) * tanh(c)."""
    hs = c.array.shape[-1]
    if z.array.shape[-1] != 4 * hs:
        raise ShapeError(f"z must pack 4 gates of width {hs}, got {list(z.shape)}")
    o = 0.5 * (1.0 + np.tanh(0.5 * z.array[:, 3 * hs:]))
    tc = np.tanh(c.array)
    out = o * tc

    def grad_fn(dh):
        dz = np.zeros_like(z.array)
        dz[:, 3 * hs:] = dh * tc * o * (1.0 - o)
        return dz, dh * o * (1.0 - tc * tc)

    return _finish("lstm_hidden", out, (z, c), grad_fn)


def row_scale(w: Tensor, coeff: np.ndarray) -> Tensor:
    """out[b, t, :] = coeff[b, t] * w[t, :] for constant coefficients.

    Used by the embedding layer: w is [tokens, features], coeff [batch, tokens].
    """
    coeff = np.asarray(coeff, dtype=np.float64)
    if w.ndim != 2 or coeff.ndim != 2 or coeff.shape[1] != w.shape[0]:
        raise ShapeError(f"row_scale needs coeff [batch, {w.shape[0]}], got {list(coeff.shape)}")
    out = coeff[:, :, None] * w.array[None, :, :]

    def grad_fn(g):
        return (np.einsum("bt,btd->td", coeff, g),)

    return _finish("row_scale", out, (w,), grad_fn)
