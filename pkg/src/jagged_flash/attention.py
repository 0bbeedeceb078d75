"""Self-attention over padded and jagged batches, naive and fused (flash) variants.

Scores are ``Q K^T / sqrt(D)``. The flash kernels stream key tiles through an
online softmax: per query row they keep a running max ``m`` and running sum
``l``, rescale the partial output by ``exp(m_old - m_new)`` whenever the max
grows, and finish with ``O = acc / l`` and ``logsumexp = m + log l``. Only one
``block_q x block_k`` score tile exists at a time. The backward pass rebuilds
each probability tile from ``q``, ``k`` and the saved ``logsumexp``.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import JaggedTensor, ShapeError, check_same_layout
from .linalg import (
    array_jagged_bmm_jagged_out,
    jagged2_softmax,
    jagged_dense_bmm,
    jagged_jagged_bmm,
    jagged_jagged_bmm_jagged_out,
    jagged_softmax,
)
from .padded import masked_softmax, valid_mask
from .parallel import parallel_for

DEFAULT_BLOCK_Q = 64
DEFAULT_BLOCK_K = 64

F64 = np.float64

ATTENTION_VARIANTS = ("dense_attention", "dense_flash_attention", "jagged_attention", "jagged_flash_attention")

ScoreHook = Callable[[int, int, int, np.ndarray], None]


class ScratchMeter:
    """Counts the working buffers (in elements) a kernel holds, tracking the peak.

    Only kernel-internal tiles and running statistics are counted; returned
    outputs and saved ``logsumexp`` are not scratch.
    """

    def __init__(self):
        self.current = 0
        self.peak = 0
        self._lock = threading.Lock()

    def alloc(self, *shape: int) -> np.ndarray:
        n = int(np.prod(shape))
        with self._lock:
            self.current += n
            self.peak = max(self.peak, self.current)
        return np.empty(shape, dtype=F64)

    def release(self, *arrays: np.ndarray) -> None:
        with self._lock:
            self.current -= sum(a.size for a in arrays)


@dataclass(frozen=True, eq=False)
class AttentionSaved:
    """What a flash forward keeps for its backward: output and per-row logsumexp."""

    output: JaggedTensor | np.ndarray
    logsumexp: np.ndarray
    block_q: int
    block_k: int


def _check_blocks(block_q: int, block_k: int) -> None:
    if block_q < 1 or block_k < 1:
        raise ValueError(f"block sizes must be >= 1, got ({block_q}, {block_k})")


def _check_dense(q, k, v, lengths):
    q, k, v = (np.asarray(t) for t in (q, k, v))
    if q.ndim != 3 or q.shape != k.shape or q.shape != v.shape:
        raise ShapeError(f"q, k, v must share shape [B, L, D], got {q.shape}, {k.shape}, {v.shape}")
    lengths = np.asarray(lengths, dtype=np.int64).reshape(-1)
    if lengths.size != q.shape[0]:
        raise ShapeError(f"{lengths.size} lengths for batch of {q.shape[0]}")
    for i, n in enumerate(lengths):
        if n < 0 or n > q.shape[1]:
            raise ShapeError(f"sample {i}: length {int(n)} outside [0, {q.shape[1]}]")
    return q, k, v, lengths


def _check_jagged(q: JaggedTensor, k: JaggedTensor, v: JaggedTensor) -> None:
    check_same_layout(q, k, "q and k")
    check_same_layout(q, v, "q and v")
    if not q.dim == k.dim == v.dim:
        raise ShapeError(f"q, k, v dims differ: {q.dim}, {k.dim}, {v.dim}")


def dense_attention(q, k, v, lengths) -> np.ndarray:
    """Reference attention on padded ``[B, L, D]`` inputs, materialising ``[B, L, L]`` scores.

    Keys past ``lengths[i]`` are masked; query rows past it come out zero.
    """
    q, k, v, lengths = _check_dense(q, k, v, lengths)
    scale = 1.0 / math.sqrt(q.shape[2])
    scores = np.matmul(q.astype(F64), np.swapaxes(k.astype(F64), 1, 2)) * scale
    mask = valid_mask(lengths, q.shape[1])
    probs = masked_softmax(scores, mask[:, :, None] & mask[:, None, :], axis=2)
    return np.matmul(probs, v.astype(F64)).astype(q.dtype, copy=False)


def _stream_rows(
    qb: np.ndarray,
    k: np.ndarray,
    v: np.ndarray,
    n_keys: int,
    out: np.ndarray,
    l: np.ndarray,
    m: np.ndarray,
    mx: np.ndarray,
    tile: np.ndarray,
    scale: float,
    block_k: int,
    hook: Callable[[int, int, np.ndarray], None] | None = None,
) -> None:
    """Online-softmax sweep of one query block over key tiles.

    ``out`` (the block's output rows) accumulates in place and ``l`` holds the
    running sum; on return they hold the normalised output and the logsumexp.
    Keys at index >= ``n_keys`` are masked out.
    """
    nq = qb.shape[0]
    total_keys = k.shape[0]
    m.fill(-np.inf)
    l.fill(0.0)
    out.fill(0.0)
    for ks in range(0, total_keys, block_k):
        ke = min(ks + block_k, total_keys)
        t = tile[:nq, : ke - ks]
        np.matmul(qb, k[ks:ke].T, out=t, dtype=F64)
        t *= scale
        if hook is not None:
            hook(ks, ke, t)
        if ke > n_keys:
            t[:, max(n_keys - ks, 0) :] = -np.inf
        np.max(t, axis=1, out=mx)
        np.maximum(mx, m, out=mx)  # mx: new running max
        np.subtract(m, mx, out=m)
        np.exp(m, out=m)  # m: rescale factor exp(m_old - m_new)
        t -= mx[:, None]
        np.exp(t, out=t)
        l *= m
        l += t.sum(axis=1)
        out *= m[:, None]
        out += np.matmul(t, v[ks:ke], dtype=F64)
        m[:] = mx
    out /= l[:, None]
    np.log(l, out=l)
    l += m


def dense_flash_attention(
    q,
    k,
    v,
    lengths,
    block_q: int = DEFAULT_BLOCK_Q,
    block_k: int = DEFAULT_BLOCK_K,
    meter: ScratchMeter | None = None,
) -> tuple[np.ndarray, AttentionSaved]:
    """Tiled attention over the full padded ``L x L`` grid with key masking.

    Padded query rows are computed like any other (the dense kernel does not
    know they are padding) and zeroed afterwards; their logsumexp is ``-inf``.
    """
    _check_blocks(block_q, block_k)
    q, k, v, lengths = _check_dense(q, k, v, lengths)
    meter = meter or ScratchMeter()
    B, L, D = q.shape
    scale = 1.0 / math.sqrt(D)
    out = np.zeros((B, L, D), dtype=F64)
    lse = np.full((B, L), -np.inf)

    def task(i):
        n = int(lengths[i])
        if n == 0 or L == 0:
            return
        bq, bk = min(block_q, L), min(block_k, L)
        tile, m, mx = meter.alloc(bq, bk), meter.alloc(bq), meter.alloc(bq)
        for qs in range(0, L, block_q):
            qe = min(qs + block_q, L)
            nq = qe - qs
            _stream_rows(
                q[i, qs:qe], k[i], v[i], n, out[i, qs:qe], lse[i, qs:qe],
                m[:nq], mx[:nq], tile, scale, block_k,
            )
        meter.release(tile, m, mx)
        out[i, n:] = 0.0
        lse[i, n:] = -np.inf

    parallel_for(task, B)
    result = out.astype(q.dtype, copy=False)
    return result, AttentionSaved(result, lse, block_q, block_k)


def jagged_attention(q: JaggedTensor, k: JaggedTensor, v: JaggedTensor) -> JaggedTensor:
    """Unfused jagged attention built from the jagged operators; materialises ``sum(Bi^2)`` scores."""
    _check_jagged(q, k, v)
    s = jagged_jagged_bmm_jagged_out(q, k)
    s = s.with_values(s.values * (1.0 / math.sqrt(q.dim)))
    p = jagged2_softmax(s)
    return array_jagged_bmm_jagged_out(p, v)


def jagged_flash_attention_forward(
    q: JaggedTensor,
    k: JaggedTensor,
    v: JaggedTensor,
    block_q: int = DEFAULT_BLOCK_Q,
    block_k: int = DEFAULT_BLOCK_K,
    meter: ScratchMeter | None = None,
    score_hook: ScoreHook | None = None,
) -> tuple[JaggedTensor, AttentionSaved]:
    """Fused jagged attention: per segment, stream ``Bi x Bi`` logical scores tile by tile.

    ``score_hook(sample, row, key_start, tile)`` may edit one query row's
    scaled score tile in place before the softmax update; it exists for tests.
    """
    _check_blocks(block_q, block_k)
    _check_jagged(q, k, v)
    meter = meter or ScratchMeter()
    off = q.offsets
    scale = 1.0 / math.sqrt(q.dim)
    out = np.zeros((q.total_rows, q.dim), dtype=F64)
    lse = np.full(q.total_rows, -np.inf)

    def task(i):
        s, e = int(off[i]), int(off[i + 1])
        n = e - s
        if n == 0:
            return
        bq, bk = min(block_q, n), min(block_k, n)
        tile, m, mx = meter.alloc(bq, bk), meter.alloc(bq), meter.alloc(bq)
        ki, vi = k.values[s:e], v.values[s:e]
        for qs in range(0, n, block_q):
            qe = min(qs + block_q, n)
            nq = qe - qs
            hook = None
            if score_hook is not None:
                def hook(ks, ke, t, qs=qs):
                    for r in range(t.shape[0]):
                        score_hook(i, qs + r, ks, t[r : r + 1])
            _stream_rows(
                q.values[s + qs : s + qe], ki, vi, n, out[s + qs : s + qe], lse[s + qs : s + qe],
                m[:nq], mx[:nq], tile, scale, block_k, hook,
            )
        meter.release(tile, m, mx)

    parallel_for(task, q.batch_size)
    result = JaggedTensor(out.astype(q.dtype, copy=False), off)
    return result, AttentionSaved(result, lse, block_q, block_k)


def jagged_flash_attention(q, k, v, block_q: int = DEFAULT_BLOCK_Q, block_k: int = DEFAULT_BLOCK_K) -> JaggedTensor:
    return jagged_flash_attention_forward(q, k, v, block_q, block_k)[0]


def jagged_flash_attention_backward(
    q: JaggedTensor,
    k: JaggedTensor,
    v: JaggedTensor,
    grad_out: JaggedTensor,
    saved: AttentionSaved,
    meter: ScratchMeter | None = None,
) -> tuple[JaggedTensor, JaggedTensor, JaggedTensor]:
    """Gradients ``(dq, dk, dv)`` by tile-wise recomputation of the probabilities.

    With ``delta_r = sum_d dO[r, d] * O[r, d]`` and ``P = exp(S / sqrt(D) - lse)``:
    ``dV += P^T dO``, ``dS = P * (dO V^T - delta)``, ``dQ += dS K / sqrt(D)``,
    ``dK += dS^T Q / sqrt(D)``. Query blocks of a segment run sequentially, so
    the dK/dV accumulation order is fixed.
    """
    _check_jagged(q, k, v)
    check_same_layout(q, grad_out, "grad_out")
    out = saved.output
    if (
        not isinstance(out, JaggedTensor)
        or out.values.shape != q.values.shape
        or not np.array_equal(out.offsets, q.offsets)
        or saved.logsumexp.shape != (q.total_rows,)
    ):
        raise ShapeError("saved attention state does not match these inputs")
    _check_blocks(saved.block_q, saved.block_k)
    block_q, block_k = saved.block_q, saved.block_k
    meter = meter or ScratchMeter()
    off = q.offsets
    scale = 1.0 / math.sqrt(q.dim)
    dq = np.zeros(q.values.shape, dtype=F64)
    dk = np.zeros(k.values.shape, dtype=F64)
    dv = np.zeros(v.values.shape, dtype=F64)
    lse = saved.logsumexp

    def task(i):
        s, e = int(off[i]), int(off[i + 1])
        n = e - s
        if n == 0:
            return
        bq, bk = min(block_q, n), min(block_k, n)
        p_tile, ds_tile, delta = meter.alloc(bq, bk), meter.alloc(bq, bk), meter.alloc(bq)
        qi, ki, vi = q.values[s:e], k.values[s:e], v.values[s:e]
        doi, oi = grad_out.values[s:e], out.values[s:e]
        dqi, dki, dvi = dq[s:e], dk[s:e], dv[s:e]
        for qs in range(0, n, block_q):
            qe = min(qs + block_q, n)
            nq = qe - qs
            d = delta[:nq]
            np.einsum("ij,ij->i", doi[qs:qe].astype(F64), oi[qs:qe].astype(F64), out=d)
            for ks in range(0, n, block_k):
                ke = min(ks + block_k, n)
                p = p_tile[:nq, : ke - ks]
                ds = ds_tile[:nq, : ke - ks]
                np.matmul(qi[qs:qe], ki[ks:ke].T, out=p, dtype=F64)
                p *= scale
                p -= lse[s + qs : s + qe, None]
                np.exp(p, out=p)
                dvi[ks:ke] += np.matmul(p.T, doi[qs:qe], dtype=F64)
                np.matmul(doi[qs:qe], vi[ks:ke].T, out=ds, dtype=F64)
                ds -= d[:, None]
                ds *= p
                dqi[qs:qe] += np.matmul(ds, ki[ks:ke], dtype=F64) * scale
                dki[ks:ke] += np.matmul(ds.T, qi[qs:qe], dtype=F64) * scale
        meter.release(p_tile, ds_tile, delta)

    parallel_for(task, q.batch_size)
    return (
        JaggedTensor(dq.astype(q.dtype, copy=False), off),
        JaggedTensor(dk.astype(k.dtype, copy=False), off),
        JaggedTensor(dv.astype(v.dtype, copy=False), off),
    )


def feature_interaction(k_feat: JaggedTensor, v_feat: JaggedTensor, targets) -> np.ndarray:
    """Cross-attention from dense target items onto each sample's jagged feature values.

    ``targets`` is ``[B, Tq, D]``; the result is ``[B, Tq, D]``. For every target
    the weights over a sample's feature values sum to 1; samples without
    feature values give zero rows.
    """
    check_same_layout(k_feat, v_feat, "k_feat and v_feat")
    targets = np.asarray(targets)
    if targets.ndim != 3 or targets.shape[0] != k_feat.batch_size or targets.shape[2] != k_feat.dim:
        raise ShapeError(
            f"targets {targets.shape} incompatible with B={k_feat.batch_size}, D={k_feat.dim}"
        )
    if v_feat.dim != k_feat.dim:
        raise ShapeError(f"k_feat dim {k_feat.dim} != v_feat dim {v_feat.dim}")
    scores = jagged_dense_bmm(k_feat, np.swapaxes(targets, 1, 2))
    scores = scores.with_values(scores.values * (1.0 / math.sqrt(k_feat.dim)))
    weights = jagged_softmax(scores)
    return jagged_jagged_bmm(weights, v_feat)
