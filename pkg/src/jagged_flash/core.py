"""Jagged tensor containers, dense conversions, elementwise ops and length synthesis.

A jagged tensor packs ``B`` variable-length sequences of ``dim``-wide rows into
one contiguous ``[sum_B, dim]`` buffer. ``offsets`` (length ``B + 1``) marks the
sample boundaries, so sample ``i`` owns rows ``offsets[i]:offsets[i + 1]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Literal, Sequence

import numpy as np

FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

DistKind = Literal["fixed", "uniform", "half-mean"]


class ShapeError(ValueError):
    """Raised when operand layouts are incompatible or a buffer has the wrong size."""


def _as_float(values, dtype=None) -> np.ndarray:
    arr = np.asarray(values, dtype=dtype)
    if arr.dtype not in FLOAT_DTYPES:
        arr = arr.astype(np.float64)
    return arr


def _readonly(arr: np.ndarray) -> np.ndarray:
    view = arr.view()
    view.flags.writeable = False
    return view


def offsets_from_lengths(lengths) -> np.ndarray:
    lengths = np.asarray(lengths, dtype=np.int64).reshape(-1)
    if lengths.size and lengths.min() < 0:
        raise ShapeError(f"negative segment length {int(lengths.min())}")
    offsets = np.zeros(lengths.size + 1, dtype=np.int64)
    np.cumsum(lengths, out=offsets[1:])
    return offsets


@dataclass(frozen=True, eq=False)
class JaggedTensor:
    """Batch of variable-length row sequences stored without padding.

    ``values`` has shape ``[offsets[-1], dim]``. Both arrays are read-only views.
    """

    values: np.ndarray
    offsets: np.ndarray

    def __post_init__(self):
        values = _as_float(self.values)
        offsets = np.asarray(self.offsets, dtype=np.int64)
        if values.ndim != 2:
            raise ShapeError(f"values must be 2-D [sum_B, dim], got shape {values.shape}")
        if offsets.ndim != 1 or offsets.size < 1:
            raise ShapeError("offsets must be a 1-D array of length B + 1")
        if offsets[0] != 0:
            raise ShapeError(f"offsets[0] must be 0, got {int(offsets[0])}")
        if np.any(np.diff(offsets) < 0):
            raise ShapeError("offsets must be non-decreasing")
        if offsets[-1] != values.shape[0]:
            raise ShapeError(
                f"offsets[-1]={int(offsets[-1])} does not match {values.shape[0]} value rows"
            )
        if values.shape[1] < 1:
            raise ShapeError("dim must be positive")
        object.__setattr__(self, "values", _readonly(values))
        object.__setattr__(self, "offsets", _readonly(offsets))

    @property
    def dim(self) -> int:
        return int(self.values.shape[1])

    @property
    def batch_size(self) -> int:
        return int(self.offsets.size - 1)

    @property
    def total_rows(self) -> int:
        return int(self.offsets[-1])

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(self.offsets)

    @property
    def dtype(self) -> np.dtype:
        return self.values.dtype

    def segment(self, i: int) -> np.ndarray:
        return self.values[self.offsets[i] : self.offsets[i + 1]]

    def with_values(self, values) -> "JaggedTensor":
        """Same layout, new row buffer."""
        return JaggedTensor(np.asarray(values).reshape(self.values.shape), self.offsets)

    def astype(self, dtype) -> "JaggedTensor":
        return JaggedTensor(self.values.astype(dtype), self.offsets)

    def __repr__(self):
        return (
            f"JaggedTensor(B={self.batch_size}, sum_B={self.total_rows}, "
            f"dim={self.dim}, dtype={self.dtype})"
        )


@dataclass(frozen=True, eq=False)
class Jagged2Tensor:
    """Batch of per-sample square ``Bi x Bi`` blocks stored flat, row-major."""

    seq_lengths: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        lengths = np.asarray(self.seq_lengths, dtype=np.int64).reshape(-1)
        sq = offsets_from_lengths(lengths * lengths)
        values = _as_float(self.values).reshape(-1)
        if values.size != sq[-1]:
            raise ShapeError(
                f"jagged2 buffer holds {values.size} elements, expected sum(Bi^2)={int(sq[-1])}"
            )
        object.__setattr__(self, "seq_lengths", _readonly(lengths))
        object.__setattr__(self, "values", _readonly(values))
        object.__setattr__(self, "sq_offsets", _readonly(sq))

    @property
    def batch_size(self) -> int:
        return int(self.seq_lengths.size)

    @property
    def dtype(self) -> np.dtype:
        return self.values.dtype

    def block(self, i: int) -> np.ndarray:
        n = int(self.seq_lengths[i])
        return self.values[self.sq_offsets[i] : self.sq_offsets[i + 1]].reshape(n, n)

    def with_values(self, values) -> "Jagged2Tensor":
        return Jagged2Tensor(self.seq_lengths, np.asarray(values).reshape(-1))

    def __repr__(self):
        return f"Jagged2Tensor(B={self.batch_size}, size={self.values.size}, dtype={self.dtype})"


def make_jagged(lengths, values, dim: int, dtype=None) -> JaggedTensor:
    """Build a jagged tensor from per-sample lengths and a flat value buffer."""
    offsets = offsets_from_lengths(lengths)
    flat = _as_float(values, dtype).reshape(-1)
    expected = int(offsets[-1]) * dim
    if flat.size != expected:
        raise ShapeError(
            f"value buffer has {flat.size} elements, expected {expected} "
            f"(sum of lengths {int(offsets[-1])} x dim {dim})"
        )
    return JaggedTensor(flat.reshape(int(offsets[-1]), dim), offsets)


def jagged_to_dense(x: JaggedTensor, max_len: int, pad_value: float = 0.0) -> np.ndarray:
    """Pad (or truncate) each segment to ``max_len`` rows, giving ``[B, max_len, D]``."""
    if max_len < 0:
        raise ShapeError(f"max_len must be >= 0, got {max_len}")
    out = np.full((x.batch_size, max_len, x.dim), pad_value, dtype=x.dtype)
    for i in range(x.batch_size):
        seg = x.segment(i)[:max_len]
        out[i, : seg.shape[0]] = seg
    return out


def dense_to_jagged(d: np.ndarray, lengths) -> JaggedTensor:
    """Gather the first ``lengths[i]`` rows of each ``d[i]``; padding is discarded."""
    d = _as_float(d)
    if d.ndim != 3:
        raise ShapeError(f"expected dense [B, max_len, D], got shape {d.shape}")
    lengths = np.asarray(lengths, dtype=np.int64).reshape(-1)
    if lengths.size != d.shape[0]:
        raise ShapeError(f"{lengths.size} lengths for batch of {d.shape[0]}")
    for i, n in enumerate(lengths):
        if n > d.shape[1]:
            raise ShapeError(f"sample {i}: length {int(n)} exceeds padded length {d.shape[1]}")
    offsets = offsets_from_lengths(lengths)
    values = np.empty((int(offsets[-1]), d.shape[2]), dtype=d.dtype)
    for i, n in enumerate(lengths):
        values[offsets[i] : offsets[i + 1]] = d[i, :n]
    return JaggedTensor(values, offsets)


def jagged2_to_dense(s: Jagged2Tensor, max_len: int, pad_value: float = 0.0) -> np.ndarray:
    """Scatter each ``Bi x Bi`` block into the top-left corner of a ``[B, L, L]`` array."""
    if max_len < 0:
        raise ShapeError(f"max_len must be >= 0, got {max_len}")
    out = np.full((s.batch_size, max_len, max_len), pad_value, dtype=s.dtype)
    for i in range(s.batch_size):
        blk = s.block(i)[:max_len, :max_len]
        n = blk.shape[0]
        out[i, :n, :n] = blk
    return out


def dense_to_jagged2(d: np.ndarray, lengths) -> Jagged2Tensor:
    d = _as_float(d)
    if d.ndim != 3 or d.shape[1] != d.shape[2]:
        raise ShapeError(f"expected dense [B, L, L], got shape {d.shape}")
    lengths = np.asarray(lengths, dtype=np.int64).reshape(-1)
    if lengths.size != d.shape[0]:
        raise ShapeError(f"{lengths.size} lengths for batch of {d.shape[0]}")
    for i, n in enumerate(lengths):
        if n > d.shape[1]:
            raise ShapeError(f"sample {i}: length {int(n)} exceeds padded length {d.shape[1]}")
    parts = [d[i, :n, :n].reshape(-1) for i, n in enumerate(lengths)]
    values = np.concatenate(parts) if parts else np.empty(0, dtype=d.dtype)
    return Jagged2Tensor(lengths, values.astype(d.dtype, copy=False))


def check_same_layout(a: JaggedTensor, b: JaggedTensor, what: str = "operands") -> None:
    """Raise ShapeError naming the first sample whose segment lengths differ."""
    la, lb = a.lengths, b.lengths
    if la.size != lb.size or not np.array_equal(la, lb):
        n = min(la.size, lb.size)
        diff = np.flatnonzero(la[:n] != lb[:n])
        first = int(diff[0]) if diff.size else n
        raise ShapeError(
            f"{what} have mismatched offsets: first differing sample index {first} "
            f"(batch sizes {la.size} and {lb.size})"
        )


_BINARY = {"add": np.add, "sub": np.subtract, "mul": np.multiply}


def elementwise(
    op_kind: str,
    a: JaggedTensor,
    b: JaggedTensor | float | None = None,
    fn: Callable[[np.ndarray], np.ndarray] | None = None,
) -> JaggedTensor:
    """Apply ``add``/``sub``/``mul`` (jagged or scalar rhs), ``scale`` or ``map_unary``.

    The result always carries ``a``'s offsets.
    """
    if op_kind in _BINARY:
        if isinstance(b, JaggedTensor):
            check_same_layout(a, b)
            if a.dim != b.dim:
                raise ShapeError(f"dim mismatch: {a.dim} vs {b.dim}")
            rhs = b.values
        elif b is None:
            raise ShapeError(f"{op_kind} needs a second operand")
        else:
            rhs = b
        out = _BINARY[op_kind](a.values, rhs)
    elif op_kind == "scale":
        if b is None or isinstance(b, JaggedTensor):
            raise ShapeError("scale takes a scalar factor")
        out = a.values * b
    elif op_kind == "map_unary":
        if fn is None:
            raise ShapeError("map_unary needs fn")
        out = np.asarray(fn(a.values))
        if out.shape != a.values.shape:
            raise ShapeError(f"map_unary changed shape {a.values.shape} -> {out.shape}")
    else:
        raise ValueError(f"unknown elementwise op {op_kind!r}")
    return JaggedTensor(out.astype(a.dtype, copy=False), a.offsets)


def negate(a: JaggedTensor) -> JaggedTensor:
    return elementwise("scale", a, -1.0)


@dataclass(frozen=True)
class LengthDistribution:
    """Seeded recipe for per-sample sequence lengths.

    Lengths come from PCG64 (``numpy.random.default_rng(seed)``) uniform doubles
    ``u`` in [0, 1):

    * ``fixed``:     every length is ``max_len``
    * ``uniform``:   ``1 + floor(u * max_len)``, i.e. U{1, max_len}
    * ``half-mean``: ``floor(u * (max_len + 1))`` with ``u`` stratified: sample ``i``
      gets ``(perm[i] + r_i) / batch`` for a random permutation ``perm`` and
      jitter ``r_i``. Each length is still U{0, max_len}, but the batch mean
      sits within about ``max_len / batch`` of ``max_len / 2``.

    Drawing through ``u`` means the same seed at a different ``max_len`` yields
    proportionally scaled lengths, which keeps sweeps over ``max_len`` comparable.
    """

    kind: DistKind = "half-mean"
    max_len: int = 128
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("fixed", "uniform", "half-mean"):
            raise ValueError(f"unknown length distribution {self.kind!r}")
        if self.max_len < 1:
            raise ValueError("max_len must be positive")


def gen_lengths(dist: LengthDistribution, batch: int) -> np.ndarray:
    if batch < 1:
        raise ValueError("batch must be >= 1")
    if dist.kind == "fixed":
        return np.full(batch, dist.max_len, dtype=np.int64)
    rng = np.random.default_rng(dist.seed)
    if dist.kind == "uniform":
        lengths = 1 + np.floor(rng.random(batch) * dist.max_len)
    else:
        u = (rng.permutation(batch) + rng.random(batch)) / batch
        lengths = np.floor(u * (dist.max_len + 1))
    return np.minimum(lengths.astype(np.int64), dist.max_len)


def random_jagged(
    rng: np.random.Generator, lengths: Sequence[int], dim: int, dtype=np.float64
) -> JaggedTensor:
    """Standard-normal jagged tensor with the given segment lengths."""
    total = int(np.sum(lengths))
    return make_jagged(lengths, rng.standard_normal((total, dim)).astype(dtype), dim)
