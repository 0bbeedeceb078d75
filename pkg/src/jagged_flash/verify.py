"""Randomized correctness suites: jagged kernels vs. padded references, attention equivalence."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import linalg
from .attention import (
    ScratchMeter,
    dense_attention,
    dense_flash_attention,
    jagged_attention,
    jagged_flash_attention_forward,
)
from .core import Jagged2Tensor, dense_to_jagged, jagged_to_dense, random_jagged
from .linalg import Layer
from .padded import reference, rel_err


@dataclass(frozen=True)
class Case:
    lengths: tuple[int, ...]
    dim: int
    t: int
    seed: int


def random_case(rng: np.random.Generator, max_batch=16, max_len=33, max_dim=16, edge_lengths=(0, 1)) -> Case:
    B = int(rng.integers(1, max_batch + 1))
    lengths = rng.integers(0, max_len + 1, size=B)
    # force the degenerate segment lengths into most cases
    for j, n in enumerate(edge_lengths):
        if j < B and rng.random() < 0.75:
            lengths[int(rng.integers(0, B))] = n
    return Case(
        tuple(int(n) for n in lengths),
        int(rng.integers(1, max_dim + 1)),
        int(rng.integers(1, max_dim + 1)),
        int(rng.integers(0, 2**31)),
    )


def op_inputs(op_id: str, case: Case, dtype=np.float64):
    rng = np.random.default_rng(case.seed)
    L, D, T = case.lengths, case.dim, case.t
    B = len(L)

    def jag(d):
        return random_jagged(rng, L, d, dtype)

    def jag2():
        n = int(sum(x * x for x in L))
        return Jagged2Tensor(L, rng.standard_normal(n).astype(dtype))

    if op_id == "jagged_dense_bmm":
        return jag(D), rng.standard_normal((B, D, T)).astype(dtype)
    if op_id == "jagged_jagged_bmm":
        return jag(D), jag(T)
    if op_id == "jagged_softmax":
        return (jag(D),)
    if op_id == "jagged_jagged_bmm_jagged_out":
        return jag(D), jag(D)
    if op_id == "array_jagged_bmm_jagged_out":
        return jag2(), jag(D)
    if op_id == "jagged2_softmax":
        return (jag2(),)
    if op_id == "jagged_mlp":
        x = jag(D)
        layers = (
            Layer(rng.standard_normal((D, T)).astype(dtype), rng.standard_normal(T).astype(dtype), "relu"),
            Layer(rng.standard_normal((T, D)).astype(dtype), rng.standard_normal(D).astype(dtype), "none"),
        )
        return x, layers
    raise KeyError(f"unknown operator {op_id!r}")


def oracle_errors(op_id: str, cases: int = 50, seed: int = 0, dtype=np.float64, block_size: int = 64) -> list[float]:
    """Relative error of the jagged kernel vs. its padded reference on ``cases`` random configs."""
    rng = np.random.default_rng(seed)
    errs = []
    for _ in range(cases):
        case = random_case(rng)
        inputs = op_inputs(op_id, case, dtype)
        got = linalg.forward(op_id, inputs, block_size=block_size)
        errs.append(rel_err(got, reference(op_id, inputs)))
    return errs


def attention_outputs(case: Case, dtype=np.float64, block_q: int = 64, block_k: int = 64, pad_extra: int = 2):
    """All four attention variants on one case, each returned in jagged form.

    Also returns the jagged-flash scratch meter and the inputs.
    """
    rng = np.random.default_rng(case.seed)
    q, k, v = (random_jagged(rng, case.lengths, case.dim, dtype) for _ in range(3))
    L = max(case.lengths) + pad_extra
    qd, kd, vd = (jagged_to_dense(t, L) for t in (q, k, v))
    lengths = np.asarray(case.lengths)
    meter = ScratchMeter()
    flash, saved = jagged_flash_attention_forward(q, k, v, block_q, block_k, meter=meter)
    outs = {
        "dense_attention": dense_to_jagged(dense_attention(qd, kd, vd, lengths), lengths),
        "dense_flash_attention": dense_to_jagged(
            dense_flash_attention(qd, kd, vd, lengths, block_q, block_k)[0], lengths
        ),
        "jagged_attention": jagged_attention(q, k, v),
        "jagged_flash_attention": flash,
    }
    return outs, meter, (q, k, v), saved


def max_pairwise_error(outs: dict) -> float:
    return max((rel_err(a, b) for a, b in itertools.combinations(outs.values(), 2)), default=0.0)


def attention_chain_errors(
    cases: int = 20, seed: int = 0, dtype=np.float64, blocks=((1, 1), (3, 3), (64, 64))
) -> list[float]:
    rng = np.random.default_rng(seed)
    errs = []
    for _ in range(cases):
        case = random_case(rng)
        for bq, bk in blocks:
            outs, _, _, _ = attention_outputs(case, dtype, bq, bk)
            errs.append(max_pairwise_error(outs))
    return errs
