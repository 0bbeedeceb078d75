"""Analytic FLOP and memory counts for jagged vs. padded-dense execution.

FLOP convention: a multiply-add is 2 FLOPs; max, exp, subtract, add and
divide are 1 each. A row softmax therefore costs 4 per element (max pass,
subtract+exp counted as one fused pass, sum pass, divide pass).

Memory is logical tensor traffic in bytes: inputs + outputs + the peak
intermediate buffers an implementation holds. Naive attention holds the full
score and probability tensors; flash attention holds one score tile, two
per-row running statistics for one query block, and the per-row logsumexp.

Symbols: ``N`` rows (``sum_B`` jagged, ``B * max_L`` padded), ``S`` score
elements (``sum(Bi^2)`` jagged, ``B * max_L^2`` padded).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .core import LengthDistribution, gen_lengths

LINALG_OPS = (
    "jagged_dense_bmm",
    "jagged_jagged_bmm",
    "jagged_softmax",
    "jagged_jagged_bmm_jagged_out",
    "array_jagged_bmm_jagged_out",
    "jagged2_softmax",
    "jagged_mlp",
)
# jagged variant -> padded counterpart
ATTENTION_PAIRS = {
    "jagged_attention": "dense_attention",
    "jagged_flash_attention": "dense_flash_attention",
}
COST_OPS = LINALG_OPS + tuple(ATTENTION_PAIRS)


@dataclass(frozen=True)
class OpConfig:
    op_id: str
    batch: int
    dim: int
    t: int
    lengths: tuple[int, ...]
    element_bytes: int = 4
    max_len: int | None = None
    block_q: int = 64
    block_k: int = 64

    def __post_init__(self):
        lengths = tuple(int(n) for n in self.lengths)
        object.__setattr__(self, "lengths", lengths)
        if len(lengths) != self.batch:
            raise ValueError(f"{len(lengths)} lengths for batch {self.batch}")
        if min((self.batch, self.dim, self.t, self.element_bytes, self.block_q, self.block_k)) < 1:
            raise ValueError("batch, dim, t, element_bytes and block sizes must be positive")
        if any(n < 0 for n in lengths):
            raise ValueError("lengths must be non-negative")
        if self.max_len is not None and self.max_len < max(lengths, default=0):
            raise ValueError(f"max_len {self.max_len} shorter than longest segment")

    @property
    def padded_len(self) -> int:
        return self.max_len if self.max_len is not None else max(self.lengths, default=0)

    @property
    def sum_b(self) -> int:
        return sum(self.lengths)

    @property
    def sum_b2(self) -> int:
        return sum(n * n for n in self.lengths)


@dataclass(frozen=True)
class CostReport:
    op_id: str
    max_len: int
    flops_jagged: int
    flops_padded: int
    bytes_jagged: int
    bytes_padded: int
    ratio_flops: float = field(init=False)
    ratio_bytes: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "ratio_flops", _ratio(self.flops_padded, self.flops_jagged))
        object.__setattr__(self, "ratio_bytes", _ratio(self.bytes_padded, self.bytes_jagged))

    def to_dict(self) -> dict:
        return asdict(self)


def _ratio(padded: int, jagged: int) -> float:
    if jagged == 0:
        return 1.0 if padded == 0 else math.inf
    return padded / jagged


def _shape(cfg: OpConfig, jagged: bool):
    """(rows, score elements, per-segment lengths) for one execution mode."""
    if jagged:
        return cfg.sum_b, cfg.sum_b2, cfg.lengths
    L = cfg.padded_len
    return cfg.batch * L, cfg.batch * L * L, (L,) * cfg.batch


def _flash_overhead(lengths: Sequence[int], D: int, block_k: int) -> int:
    # per query row and key tile: exp(m_old - m_new), l rescale, acc rescale (D);
    # once per row at the end: acc / l (D), log l + m (2)
    total = 0
    for n in lengths:
        tiles = -(-n // block_k)
        total += n * (tiles * (D + 2) + D + 2)
    return total


def _linalg_counts(op: str, cfg: OpConfig, jagged: bool) -> tuple[int, int]:
    """(flops, elements) for one linalg operator in one mode."""
    N, S, _ = _shape(cfg, jagged)
    B, D, T = cfg.batch, cfg.dim, cfg.t
    if op == "jagged_dense_bmm":
        return 2 * N * D * T, N * D + B * D * T + N * T
    if op == "jagged_jagged_bmm":
        return 2 * N * D * T, N * D + N * T + B * D * T
    if op == "jagged_softmax":
        return 4 * N * D, 2 * N * D
    if op in ("jagged_jagged_bmm_jagged_out", "array_jagged_bmm_jagged_out"):
        return 2 * S * D, 2 * N * D + S
    if op == "jagged2_softmax":
        return 4 * S, 2 * S
    if op == "jagged_mlp":
        # one relu layer D -> T: matmul, bias add, relu
        return 2 * N * D * T + 2 * N * T, N * D + D * T + T + N * T
    raise KeyError(f"unknown operator {op!r}")


def attention_intermediate(variant: str, cfg: OpConfig) -> int:
    """Peak intermediate elements held by an attention implementation."""
    jagged = variant.startswith("jagged")
    N, S, _ = _shape(cfg, jagged)
    if variant in ("dense_attention", "jagged_attention"):
        return 2 * S
    if variant in ("dense_flash_attention", "jagged_flash_attention"):
        return cfg.block_q * cfg.block_k + 2 * cfg.block_q + N
    raise KeyError(f"unknown attention variant {variant!r}")


def attention_cost(variant: str, cfg: OpConfig) -> tuple[int, int]:
    """(flops, bytes) of one attention variant on ``cfg`` (``cfg.dim`` is the head dim)."""
    jagged = variant.startswith("jagged")
    N, S, lengths = _shape(cfg, jagged)
    D = cfg.dim
    # QK^T, softmax (4/elem), PV
    flops = 2 * S * D + 4 * S + 2 * S * D
    if "flash" in variant:
        flops += _flash_overhead(lengths, D, cfg.block_k)
    elements = 4 * N * D + attention_intermediate(variant, cfg)
    return flops, elements * cfg.element_bytes


def flops_of(cfg: OpConfig) -> tuple[int, int]:
    """(jagged, padded) FLOP counts."""
    if cfg.op_id in ATTENTION_PAIRS:
        return (
            attention_cost(cfg.op_id, cfg)[0],
            attention_cost(ATTENTION_PAIRS[cfg.op_id], cfg)[0],
        )
    return _linalg_counts(cfg.op_id, cfg, True)[0], _linalg_counts(cfg.op_id, cfg, False)[0]


def bytes_of(cfg: OpConfig) -> tuple[int, int]:
    """(jagged, padded) byte counts."""
    if cfg.op_id in ATTENTION_PAIRS:
        return (
            attention_cost(cfg.op_id, cfg)[1],
            attention_cost(ATTENTION_PAIRS[cfg.op_id], cfg)[1],
        )
    eb = cfg.element_bytes
    return (
        _linalg_counts(cfg.op_id, cfg, True)[1] * eb,
        _linalg_counts(cfg.op_id, cfg, False)[1] * eb,
    )


def cost_report(cfg: OpConfig) -> CostReport:
    fj, fp = flops_of(cfg)
    bj, bp = bytes_of(cfg)
    return CostReport(cfg.op_id, cfg.padded_len, fj, fp, bj, bp)


def sweep_configs(
    op_id: str,
    batch: int,
    dim: int,
    t: int,
    dist: LengthDistribution,
    max_len_grid: Sequence[int],
    **kwargs,
) -> list[OpConfig]:
    """One config per grid point; lengths are redrawn at each ``max_len`` with the same seed."""
    if not len(max_len_grid):
        raise ValueError("max_len grid is empty")
    out = []
    for L in max_len_grid:
        lengths = gen_lengths(replace(dist, max_len=int(L)), batch)
        out.append(OpConfig(op_id, batch, dim, t, tuple(lengths), max_len=int(L), **kwargs))
    return out


def sweep_cost(
    op_id: str,
    batch: int,
    dim: int,
    t: int,
    dist: LengthDistribution,
    max_len_grid: Sequence[int],
    **kwargs,
) -> list[CostReport]:
    return [cost_report(c) for c in sweep_configs(op_id, batch, dim, t, dist, max_len_grid, **kwargs)]


def growth_per_doubling(max_lens: Sequence[int], values: Sequence[float]) -> float:
    """Least-squares slope of log2(value) against log2(max_len), returned as a per-doubling factor."""
    x = np.log2(np.asarray(max_lens, dtype=np.float64))
    y = np.log2(np.asarray(values, dtype=np.float64))
    slope = np.polyfit(x, y, 1)[0]
    return float(2.0**slope)
