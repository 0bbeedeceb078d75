"""Padded-dense counterparts of the jagged operators.

These pad every sample to ``max_len`` and run plain batched numpy over the
whole ``[B, max_len, ...]`` block, the way a framework without jagged support
would. They are the baseline the benchmark times against and the reference
the jagged kernels are checked against.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .core import (
    Jagged2Tensor,
    JaggedTensor,
    dense_to_jagged,
    dense_to_jagged2,
    jagged2_to_dense,
    jagged_to_dense,
)
from .linalg import Layer


def valid_mask(lengths, max_len: int) -> np.ndarray:
    """``[B, max_len]`` boolean mask of real (non-pad) rows."""
    return np.arange(max_len)[None, :] < np.asarray(lengths)[:, None]


def masked_softmax(scores: np.ndarray, mask: np.ndarray, axis: int) -> np.ndarray:
    """Softmax along ``axis`` over masked-in entries; fully masked slices give zeros."""
    s = np.where(mask, scores, -np.inf)
    m = s.max(axis=axis, keepdims=True, initial=-np.inf)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.where(mask, np.exp(s - m), 0.0)
    total = e.sum(axis=axis, keepdims=True)
    return np.divide(e, total, out=np.zeros_like(e), where=total > 0)


def bmm_padded(xd: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``[B, L, D] @ [B, D, T]``."""
    return np.matmul(xd, w)


def jagged_jagged_padded(xd: np.ndarray, yd: np.ndarray) -> np.ndarray:
    """``[B, L, D]^T @ [B, L, T] -> [B, D, T]``; zero padding contributes nothing."""
    return np.matmul(np.swapaxes(xd, 1, 2), yd)


def softmax_padded(xd: np.ndarray, lengths) -> np.ndarray:
    mask = valid_mask(lengths, xd.shape[1])[:, :, None]
    return masked_softmax(xd, np.broadcast_to(mask, xd.shape), axis=1)


def qk_padded(qd: np.ndarray, kd: np.ndarray) -> np.ndarray:
    return np.matmul(qd, np.swapaxes(kd, 1, 2))


def av_padded(ad: np.ndarray, vd: np.ndarray) -> np.ndarray:
    return np.matmul(ad, vd)


def softmax2_padded(sd: np.ndarray, lengths) -> np.ndarray:
    m = valid_mask(lengths, sd.shape[1])
    mask = m[:, :, None] & m[:, None, :]
    return masked_softmax(sd, mask, axis=2)


def mlp_padded(xd: np.ndarray, layers: Sequence[Layer]) -> np.ndarray:
    h = xd
    for layer in layers:
        h = h @ layer.weight + layer.bias
        if layer.activation == "relu":
            h = np.maximum(h, 0.0)
    return h


def reference(op_id: str, inputs: Sequence, max_len: int | None = None):
    """Pad the inputs, run the dense computation, and return the result in jagged form.

    Pads with zeros (``-inf`` masking handles the softmax ops). ``max_len``
    defaults to the longest segment.
    """
    first = inputs[0]
    lengths = first.seq_lengths if isinstance(first, Jagged2Tensor) else first.lengths
    if max_len is None:
        max_len = int(lengths.max()) if lengths.size else 0
    f64 = np.float64

    def pad(t):
        if isinstance(t, Jagged2Tensor):
            return jagged2_to_dense(t, max_len).astype(f64)
        return jagged_to_dense(t, max_len).astype(f64)

    if op_id == "jagged_dense_bmm":
        x, w = inputs
        return dense_to_jagged(bmm_padded(pad(x), np.asarray(w, f64)), lengths)
    if op_id == "jagged_jagged_bmm":
        x, y = inputs
        return jagged_jagged_padded(pad(x), pad(y))
    if op_id == "jagged_softmax":
        (x,) = inputs
        return dense_to_jagged(softmax_padded(pad(x), lengths), lengths)
    if op_id == "jagged_jagged_bmm_jagged_out":
        q, k = inputs
        return dense_to_jagged2(qk_padded(pad(q), pad(k)), lengths)
    if op_id == "array_jagged_bmm_jagged_out":
        a, v = inputs
        return dense_to_jagged(av_padded(pad(a), pad(v)), lengths)
    if op_id == "jagged2_softmax":
        (s,) = inputs
        return dense_to_jagged2(softmax2_padded(pad(s), lengths), lengths)
    if op_id == "jagged_mlp":
        x, layers = inputs
        return dense_to_jagged(mlp_padded(pad(x), layers), lengths)
    raise KeyError(f"no padded reference for {op_id!r}")


def as_array(result) -> np.ndarray:
    """Flat float64 view of any operator result, for comparisons and checksums."""
    if isinstance(result, (JaggedTensor, Jagged2Tensor)):
        return np.asarray(result.values, dtype=np.float64).reshape(-1)
    return np.asarray(result, dtype=np.float64).reshape(-1)


def rel_err(a, b) -> float:
    """Norm-wise relative error ``max|a - b| / max(max|a|, max|b|)`` (0 for empty inputs)."""
    a, b = as_array(a), as_array(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.size == 0:
        return 0.0
    scale = max(np.abs(a).max(), np.abs(b).max())
    diff = np.abs(a - b).max()
    if diff == 0:
        return 0.0
    return float(diff / scale) if scale > 0 else float("inf")
