"""Blocked per-segment kernels for jagged operators, with vector-Jacobian products.

Every kernel walks segments independently (one ``parallel_for`` task each) and
tiles rows within a segment by ``block_size``. Arithmetic runs in float64 and
the result is cast back to the operands' dtype; reductions across tiles always
run in ascending index order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import Jagged2Tensor, JaggedTensor, ShapeError, check_same_layout
from .parallel import parallel_for

DEFAULT_BLOCK = 64

F64 = np.float64


def _f64(a: np.ndarray) -> np.ndarray:
    return a.astype(F64, copy=False)


def _check_block(block_size: int) -> None:
    if block_size < 1:
        raise ValueError(f"block size must be >= 1, got {block_size}")


def _out_dtype(*arrays) -> np.dtype:
    return np.result_type(*[a.dtype for a in arrays])


# ---------------------------------------------------------------------------
# forward kernels
# ---------------------------------------------------------------------------


def jagged_dense_bmm(x: JaggedTensor, w: np.ndarray, block_size: int = DEFAULT_BLOCK) -> JaggedTensor:
    """``[sum_B, D] x [B, D, T] -> [sum_B, T]``: segment ``i`` times its own ``w[i]``."""
    _check_block(block_size)
    w = np.asarray(w)
    if w.ndim != 3 or w.shape[0] != x.batch_size or w.shape[1] != x.dim:
        raise ShapeError(
            f"jagged_dense_bmm: weights {w.shape} incompatible with B={x.batch_size}, D={x.dim}"
        )
    off = x.offsets
    out = np.empty((x.total_rows, w.shape[2]), dtype=F64)

    def task(i):
        wi = _f64(w[i])
        for r in range(off[i], off[i + 1], block_size):
            r1 = min(r + block_size, off[i + 1])
            out[r:r1] = _f64(x.values[r:r1]) @ wi

    parallel_for(task, x.batch_size)
    return JaggedTensor(out.astype(_out_dtype(x.values, w), copy=False), off)


def jagged_jagged_bmm(x: JaggedTensor, y: JaggedTensor, block_size: int = DEFAULT_BLOCK) -> np.ndarray:
    """``[sum_B, D] x [sum_B, T] -> [B, D, T]``: per-sample ``X_i^T Y_i``."""
    _check_block(block_size)
    check_same_layout(x, y, "jagged_jagged_bmm operands")
    off = x.offsets
    out = np.zeros((x.batch_size, x.dim, y.dim), dtype=F64)

    def task(i):
        acc = out[i]
        for r in range(off[i], off[i + 1], block_size):
            r1 = min(r + block_size, off[i + 1])
            acc += _f64(x.values[r:r1]).T @ _f64(y.values[r:r1])

    parallel_for(task, x.batch_size)
    return out.astype(_out_dtype(x.values, y.values), copy=False)


def jagged_softmax(x: JaggedTensor, block_size: int = DEFAULT_BLOCK) -> JaggedTensor:
    """Softmax over each segment's rows, independently per column."""
    _check_block(block_size)
    off = x.offsets
    out = np.empty(x.values.shape, dtype=F64)

    def task(i):
        s, e = off[i], off[i + 1]
        if s == e:
            return
        m = np.full(x.dim, -np.inf)
        for r in range(s, e, block_size):
            np.maximum(m, x.values[r : min(r + block_size, e)].max(axis=0), out=m)
        total = np.zeros(x.dim)
        for r in range(s, e, block_size):
            r1 = min(r + block_size, e)
            np.exp(_f64(x.values[r:r1]) - m, out=out[r:r1])
            total += out[r:r1].sum(axis=0)
        out[s:e] /= total

    parallel_for(task, x.batch_size)
    return JaggedTensor(out.astype(x.dtype, copy=False), off)


def jagged_jagged_bmm_jagged_out(
    q: JaggedTensor, k: JaggedTensor, block_size: int = DEFAULT_BLOCK
) -> Jagged2Tensor:
    """``[sum_B, D] x [sum_B, D] -> [sum_(Bi*Bi)]``: per-sample ``Q_i K_i^T``."""
    _check_block(block_size)
    check_same_layout(q, k, "jagged_jagged_bmm_jagged_out operands")
    if q.dim != k.dim:
        raise ShapeError(f"dim mismatch: {q.dim} vs {k.dim}")
    lengths = q.lengths
    sq = np.concatenate([[0], np.cumsum(lengths * lengths)])
    out = np.empty(int(sq[-1]), dtype=F64)

    def task(i):
        n = int(lengths[i])
        blk = out[sq[i] : sq[i + 1]].reshape(n, n)
        qi, ki = q.segment(i), k.segment(i)
        for a in range(0, n, block_size):
            a1 = min(a + block_size, n)
            qa = _f64(qi[a:a1])
            for b in range(0, n, block_size):
                b1 = min(b + block_size, n)
                blk[a:a1, b:b1] = qa @ _f64(ki[b:b1]).T

    parallel_for(task, q.batch_size)
    return Jagged2Tensor(lengths, out.astype(_out_dtype(q.values, k.values), copy=False))


def array_jagged_bmm_jagged_out(
    a: Jagged2Tensor, v: JaggedTensor, block_size: int = DEFAULT_BLOCK
) -> JaggedTensor:
    """``[sum_(Bi*Bi)] x [sum_B, D] -> [sum_B, D]``: per-sample ``A_i V_i``."""
    _check_block(block_size)
    if a.batch_size != v.batch_size or not np.array_equal(a.seq_lengths, v.lengths):
        raise ShapeError("array_jagged_bmm_jagged_out: block sizes do not match value segments")
    off = v.offsets
    out = np.zeros(v.values.shape, dtype=F64)

    def task(i):
        n = int(a.seq_lengths[i])
        ai, vi = a.block(i), v.segment(i)
        oi = out[off[i] : off[i + 1]]
        for r in range(0, n, block_size):
            r1 = min(r + block_size, n)
            for c in range(0, n, block_size):
                c1 = min(c + block_size, n)
                oi[r:r1] += _f64(ai[r:r1, c:c1]) @ _f64(vi[c:c1])

    parallel_for(task, v.batch_size)
    return JaggedTensor(out.astype(_out_dtype(a.values, v.values), copy=False), off)


def _row_softmax(blk: np.ndarray, out: np.ndarray) -> None:
    m = blk.max(axis=1, keepdims=True)
    np.subtract(blk, m, out=out)
    np.exp(out, out=out)
    out /= out.sum(axis=1, keepdims=True)


def jagged2_softmax(s: Jagged2Tensor, block_size: int = DEFAULT_BLOCK) -> Jagged2Tensor:
    """Row-wise (key axis) softmax of every ``Bi x Bi`` block."""
    _check_block(block_size)
    out = np.empty(s.values.size, dtype=F64)
    sq = s.sq_offsets

    def task(i):
        n = int(s.seq_lengths[i])
        src = s.block(i)
        dst = out[sq[i] : sq[i + 1]].reshape(n, n)
        for r in range(0, n, block_size):
            r1 = min(r + block_size, n)
            _row_softmax(_f64(src[r:r1]), dst[r:r1])

    parallel_for(task, s.batch_size)
    return Jagged2Tensor(s.seq_lengths, out.astype(s.dtype, copy=False))


@dataclass(frozen=True)
class Layer:
    """One affine layer ``act(h @ weight + bias)``; weights are shared by all samples."""

    weight: np.ndarray
    bias: np.ndarray
    activation: str = "none"

    def __post_init__(self):
        if self.activation not in ("relu", "none"):
            raise ValueError(f"unknown activation {self.activation!r}")
        w = np.asarray(self.weight)
        b = np.asarray(self.bias).reshape(-1)
        if w.ndim != 2 or b.size != w.shape[1]:
            raise ShapeError(f"layer weight {w.shape} and bias {b.shape} disagree")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)


def _check_chain(in_dim: int, layers: Sequence[Layer]) -> None:
    d = in_dim
    for n, layer in enumerate(layers):
        if layer.weight.shape[0] != d:
            raise ShapeError(f"layer {n} expects width {layer.weight.shape[0]}, got {d}")
        d = layer.weight.shape[1]


def _mlp_rows(h: np.ndarray, layers: Sequence[Layer], keep: bool = False):
    """Run the net over a row block; optionally return (inputs, pre-activations) per layer."""
    trace = []
    for layer in layers:
        z = h @ _f64(layer.weight) + _f64(layer.bias)
        if keep:
            trace.append((h, z))
        h = np.maximum(z, 0.0) if layer.activation == "relu" else z
    return h, trace


def jagged_mlp(x: JaggedTensor, layers: Sequence[Layer], block_size: int = DEFAULT_BLOCK) -> JaggedTensor:
    _check_block(block_size)
    _check_chain(x.dim, layers)
    if not layers:
        return x
    out = np.empty((x.total_rows, layers[-1].weight.shape[1]), dtype=F64)
    off = x.offsets

    def task(i):
        for r in range(off[i], off[i + 1], block_size):
            r1 = min(r + block_size, off[i + 1])
            out[r:r1] = _mlp_rows(_f64(x.values[r:r1]), layers)[0]

    parallel_for(task, x.batch_size)
    return JaggedTensor(out.astype(x.dtype, copy=False), off)


def jagged2_transpose(s: Jagged2Tensor) -> Jagged2Tensor:
    parts = [s.block(i).T.reshape(-1) for i in range(s.batch_size)]
    values = np.concatenate(parts) if parts else np.empty(0, dtype=s.dtype)
    return Jagged2Tensor(s.seq_lengths, values)


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------


def _softmax_backward_rows(p: np.ndarray, dp: np.ndarray, axis: int) -> np.ndarray:
    return p * (dp - (dp * p).sum(axis=axis, keepdims=True))


def _vjp_jagged_softmax(inputs, grad_out: JaggedTensor):
    (x,) = inputs
    check_same_layout(x, grad_out, "grad_out")
    p = jagged_softmax(x)
    off = x.offsets
    dx = np.empty(x.values.shape, dtype=F64)

    def task(i):
        s, e = off[i], off[i + 1]
        dx[s:e] = _softmax_backward_rows(_f64(p.values[s:e]), _f64(grad_out.values[s:e]), 0)

    parallel_for(task, x.batch_size)
    return (JaggedTensor(dx.astype(x.dtype, copy=False), off),)


def _vjp_jagged2_softmax(inputs, grad_out: Jagged2Tensor):
    (s,) = inputs
    if not np.array_equal(s.seq_lengths, grad_out.seq_lengths):
        raise ShapeError("grad_out layout differs from jagged2 input")
    p = jagged2_softmax(s)
    ds = np.empty(s.values.size, dtype=F64)
    sq = s.sq_offsets

    def task(i):
        ds[sq[i] : sq[i + 1]] = _softmax_backward_rows(
            _f64(p.block(i)), _f64(grad_out.block(i)), 1
        ).reshape(-1)

    parallel_for(task, s.batch_size)
    return (Jagged2Tensor(s.seq_lengths, ds.astype(s.dtype, copy=False)),)


def _vjp_jagged_dense_bmm(inputs, grad_out: JaggedTensor):
    x, w = inputs
    check_same_layout(x, grad_out, "grad_out")
    dx = jagged_dense_bmm(grad_out, np.swapaxes(w, 1, 2))
    dw = jagged_jagged_bmm(x, grad_out)
    return dx.astype(x.dtype), dw.astype(np.asarray(w).dtype, copy=False)


def _vjp_jagged_jagged_bmm(inputs, grad_out: np.ndarray):
    x, y = inputs
    grad_out = np.asarray(grad_out)
    if grad_out.shape != (x.batch_size, x.dim, y.dim):
        raise ShapeError(f"grad_out shape {grad_out.shape} != {(x.batch_size, x.dim, y.dim)}")
    dx = jagged_dense_bmm(y, np.swapaxes(grad_out, 1, 2))
    dy = jagged_dense_bmm(x, grad_out)
    return dx.astype(x.dtype), dy.astype(y.dtype)


def _vjp_jagged_jagged_bmm_jagged_out(inputs, grad_out: Jagged2Tensor):
    q, k = inputs
    if not np.array_equal(q.lengths, grad_out.seq_lengths):
        raise ShapeError("grad_out layout differs from operands")
    dq = array_jagged_bmm_jagged_out(grad_out, k)
    dk = array_jagged_bmm_jagged_out(jagged2_transpose(grad_out), q)
    return dq.astype(q.dtype), dk.astype(k.dtype)


def _vjp_array_jagged_bmm_jagged_out(inputs, grad_out: JaggedTensor):
    a, v = inputs
    check_same_layout(v, grad_out, "grad_out")
    da = jagged_jagged_bmm_jagged_out(grad_out, v)
    dv = array_jagged_bmm_jagged_out(jagged2_transpose(a), grad_out)
    return Jagged2Tensor(a.seq_lengths, da.values.astype(a.dtype, copy=False)), dv.astype(v.dtype)


def _vjp_jagged_mlp(inputs, grad_out: JaggedTensor):
    x, layers = inputs
    layers = list(layers)
    check_same_layout(x, grad_out, "grad_out")
    _check_chain(x.dim, layers)
    off = x.offsets
    dx = np.empty(x.values.shape, dtype=F64)
    # per-sample partial weight grads, summed in sample order afterwards
    partial = [None] * x.batch_size

    def task(i):
        dws = [np.zeros(layer.weight.shape) for layer in layers]
        dbs = [np.zeros(layer.bias.shape) for layer in layers]
        for r in range(off[i], off[i + 1], DEFAULT_BLOCK):
            r1 = min(r + DEFAULT_BLOCK, off[i + 1])
            _, trace = _mlp_rows(_f64(x.values[r:r1]), layers, keep=True)
            g = _f64(grad_out.values[r:r1])
            for n in range(len(layers) - 1, -1, -1):
                h, z = trace[n]
                if layers[n].activation == "relu":
                    g = g * (z > 0)
                dws[n] += h.T @ g
                dbs[n] += g.sum(axis=0)
                g = g @ _f64(layers[n].weight).T
            dx[r:r1] = g
        partial[i] = (dws, dbs)

    parallel_for(task, x.batch_size)
    grads = []
    for n, layer in enumerate(layers):
        dw = np.zeros(layer.weight.shape)
        db = np.zeros(layer.bias.shape)
        for dws, dbs in partial:
            dw += dws[n]
            db += dbs[n]
        grads.append(
            Layer(dw.astype(layer.weight.dtype), db.astype(layer.bias.dtype), layer.activation)
        )
    return JaggedTensor(dx.astype(x.dtype, copy=False), off), tuple(grads)


FORWARD = {
    "jagged_dense_bmm": jagged_dense_bmm,
    "jagged_jagged_bmm": jagged_jagged_bmm,
    "jagged_softmax": jagged_softmax,
    "jagged_jagged_bmm_jagged_out": jagged_jagged_bmm_jagged_out,
    "array_jagged_bmm_jagged_out": array_jagged_bmm_jagged_out,
    "jagged2_softmax": jagged2_softmax,
    "jagged_mlp": jagged_mlp,
}

CORE_OPS = tuple(op for op in FORWARD if op != "jagged_mlp")

_VJP = {
    "jagged_dense_bmm": _vjp_jagged_dense_bmm,
    "jagged_jagged_bmm": _vjp_jagged_jagged_bmm,
    "jagged_softmax": _vjp_jagged_softmax,
    "jagged_jagged_bmm_jagged_out": _vjp_jagged_jagged_bmm_jagged_out,
    "array_jagged_bmm_jagged_out": _vjp_array_jagged_bmm_jagged_out,
    "jagged2_softmax": _vjp_jagged2_softmax,
    "jagged_mlp": _vjp_jagged_mlp,
}


def forward(op_id: str, inputs: Sequence, **kwargs):
    try:
        fn = FORWARD[op_id]
    except KeyError:
        raise KeyError(f"unknown operator {op_id!r}") from None
    return fn(*inputs, **kwargs)


def vjp(op_id: str, inputs: Sequence, grad_out) -> tuple:
    """Gradients of ``<grad_out, op(*inputs)>`` w.r.t. each input, in input order.

    Jagged gradients share their input's offsets. For ``jagged_mlp`` the second
    slot is a tuple of ``Layer`` objects holding weight and bias gradients.
    """
    try:
        fn = _VJP[op_id]
    except KeyError:
        raise KeyError(f"unknown operator {op_id!r}") from None
    return fn(tuple(inputs), grad_out)
