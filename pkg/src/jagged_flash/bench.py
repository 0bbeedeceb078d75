"""Benchmark harness: times jagged kernels against their padded-dense baselines.

Each run builds seeded inputs, checks every variant against the padded/dense
baseline once (a mismatch aborts the run), then times warmup + measured
iterations. Records carry analytic FLOP/byte counts from the cost model;
wall-clock numbers are reported, never asserted.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import asdict, dataclass, fields, replace
from typing import Callable, Sequence

import numpy as np

from . import linalg, padded
from .attention import (
    ATTENTION_VARIANTS,
    dense_attention,
    dense_flash_attention,
    jagged_attention,
    jagged_flash_attention,
)
from .core import (
    Jagged2Tensor,
    LengthDistribution,
    dense_to_jagged,
    dense_to_jagged2,
    gen_lengths,
    jagged2_to_dense,
    jagged_to_dense,
    random_jagged,
)
from .costmodel import ATTENTION_PAIRS, OpConfig, attention_cost, bytes_of, flops_of
from .linalg import Layer
from .padded import as_array, rel_err
from .parallel import num_threads

CSV_COLUMNS = (
    "op", "variant", "B", "D", "T", "max_len", "dist", "seed", "precision", "threads",
    "time_us_p50", "time_us_p10", "time_us_p90", "flops", "bytes",
    "speedup_vs_dense", "bytes_ratio_vs_dense",
)
CROSS_CHECK_TOL = 1e-4
NOISY_SPREAD = 3.0
DEFAULT_GRID = (128, 256, 512, 1024, 2048, 4096)
PRECISIONS = {"f32": np.float32, "f64": np.float64}
BENCH_OPS = linalg.CORE_OPS + ("jagged_mlp", "attention") + tuple(ATTENTION_PAIRS)


class CrossCheckError(RuntimeError):
    """A benchmarked variant disagrees with the padded baseline."""


@dataclass(frozen=True)
class BenchConfig:
    op_id: str
    batch: int = 32
    dim: int = 64
    t: int = 64
    max_len: int = 256
    grid: tuple[int, ...] | None = None
    dist: str = "half-mean"
    seed: int = 0
    precision: str = "f32"
    iters: int = 20
    warmup: int = 3
    threads: int = 1
    block_q: int = 64
    block_k: int = 64

    def __post_init__(self):
        if self.op_id not in BENCH_OPS:
            raise ValueError(f"unknown benchmark op {self.op_id!r}; choose from {', '.join(BENCH_OPS)}")
        if self.iters < 1 or self.warmup < 0:
            raise ValueError("need iters >= 1 and warmup >= 0")
        if self.precision not in PRECISIONS:
            raise ValueError(f"precision must be one of {sorted(PRECISIONS)}")
        if min(self.batch, self.dim, self.t, self.max_len, self.threads) < 1:
            raise ValueError("batch, dim, t, max_len and threads must be positive")
        if self.grid is not None and not self.grid:
            raise ValueError("grid must be non-empty")
        LengthDistribution(self.dist, self.max_len, self.seed)


@dataclass(frozen=True)
class BenchRecord:
    op: str
    variant: str
    B: int
    D: int
    T: int
    max_len: int
    dist: str
    seed: int
    precision: str
    threads: int
    time_us_p50: float
    time_us_p10: float
    time_us_p90: float
    flops: int
    bytes: int
    speedup_vs_dense: float
    bytes_ratio_vs_dense: float
    checksum: str
    noisy: bool


@dataclass
class _Variant:
    name: str
    run: Callable[[], object]
    to_jagged: Callable[[object], object]
    flops: int
    nbytes: int


def _variants(cfg: BenchConfig) -> list[_Variant]:
    """Inputs and callables for every variant of ``cfg``; the baseline comes first."""
    dtype = PRECISIONS[cfg.precision]
    rng = np.random.default_rng(cfg.seed)
    lengths = gen_lengths(LengthDistribution(cfg.dist, cfg.max_len, cfg.seed), cfg.batch)
    L, B, D, T = cfg.max_len, cfg.batch, cfg.dim, cfg.t
    cost_cfg = OpConfig(
        cfg.op_id if cfg.op_id != "attention" else "jagged_attention",
        B, D, T, tuple(lengths), element_bytes=np.dtype(dtype).itemsize, max_len=L,
        block_q=cfg.block_q, block_k=cfg.block_k,
    )

    def jag(d):
        return random_jagged(rng, lengths, d, dtype)

    def ident(r):
        return r

    def rejag(r):
        return dense_to_jagged(r, lengths)

    op = cfg.op_id
    if op in ("attention",) + tuple(ATTENTION_PAIRS):
        q, k, v = jag(D), jag(D), jag(D)
        qd, kd, vd = (jagged_to_dense(t, L) for t in (q, k, v))
        bq, bk = cfg.block_q, cfg.block_k
        runs = {
            "dense_attention": (lambda: dense_attention(qd, kd, vd, lengths), rejag),
            "dense_flash_attention": (
                lambda: dense_flash_attention(qd, kd, vd, lengths, bq, bk)[0], rejag,
            ),
            "jagged_attention": (lambda: jagged_attention(q, k, v), ident),
            "jagged_flash_attention": (lambda: jagged_flash_attention(q, k, v, bq, bk), ident),
        }
        names = ATTENTION_VARIANTS if op == "attention" else (ATTENTION_PAIRS[op], op)
        out = []
        for name in names:
            f, b = attention_cost(name, cost_cfg)
            out.append(_Variant(name, runs[name][0], runs[name][1], f, b))
        return out

    if op == "jagged_dense_bmm":
        x, w = jag(D), rng.standard_normal((B, D, T)).astype(dtype)
        xd = jagged_to_dense(x, L)
        jagged_run, padded_run, conv = (
            lambda: linalg.jagged_dense_bmm(x, w), lambda: padded.bmm_padded(xd, w), rejag,
        )
    elif op == "jagged_jagged_bmm":
        x, y = jag(D), jag(T)
        xd, yd = jagged_to_dense(x, L), jagged_to_dense(y, L)
        jagged_run, padded_run, conv = (
            lambda: linalg.jagged_jagged_bmm(x, y), lambda: padded.jagged_jagged_padded(xd, yd), ident,
        )
    elif op == "jagged_softmax":
        x = jag(D)
        xd = jagged_to_dense(x, L)
        jagged_run, padded_run, conv = (
            lambda: linalg.jagged_softmax(x), lambda: padded.softmax_padded(xd, lengths), rejag,
        )
    elif op == "jagged_jagged_bmm_jagged_out":
        q, k = jag(D), jag(D)
        qd, kd = jagged_to_dense(q, L), jagged_to_dense(k, L)
        jagged_run, padded_run, conv = (
            lambda: linalg.jagged_jagged_bmm_jagged_out(q, k),
            lambda: padded.qk_padded(qd, kd),
            lambda r: dense_to_jagged2(r, lengths),
        )
    elif op == "array_jagged_bmm_jagged_out":
        a = Jagged2Tensor(lengths, rng.standard_normal(int((lengths * lengths).sum())).astype(dtype))
        v = jag(D)
        ad, vd = jagged2_to_dense(a, L), jagged_to_dense(v, L)
        jagged_run, padded_run, conv = (
            lambda: linalg.array_jagged_bmm_jagged_out(a, v), lambda: padded.av_padded(ad, vd), rejag,
        )
    elif op == "jagged2_softmax":
        s = Jagged2Tensor(lengths, rng.standard_normal(int((lengths * lengths).sum())).astype(dtype))
        sd = jagged2_to_dense(s, L)
        jagged_run, padded_run, conv = (
            lambda: linalg.jagged2_softmax(s),
            lambda: padded.softmax2_padded(sd, lengths),
            lambda r: dense_to_jagged2(r, lengths),
        )
    elif op == "jagged_mlp":
        x = jag(D)
        layers = (
            Layer(rng.standard_normal((D, T)).astype(dtype), rng.standard_normal(T).astype(dtype), "relu"),
        )
        xd = jagged_to_dense(x, L)
        jagged_run, padded_run, conv = (
            lambda: linalg.jagged_mlp(x, layers), lambda: padded.mlp_padded(xd, layers), rejag,
        )
    else:  # pragma: no cover - guarded by BenchConfig
        raise ValueError(op)
    fj, fp = flops_of(cost_cfg)
    bj, bp = bytes_of(cost_cfg)
    return [_Variant("padded", padded_run, conv, fp, bp), _Variant("jagged", jagged_run, ident, fj, bj)]


def checksum(result) -> str:
    """Exactly rounded float64 sum of all output values, to 17 significant digits."""
    return f"{math.fsum(as_array(result)):.17g}"


def _time_us(fn: Callable[[], object], iters: int, warmup: int) -> np.ndarray:
    for _ in range(warmup):
        fn()
    samples = np.empty(iters)
    for j in range(iters):
        t0 = time.perf_counter_ns()
        fn()
        samples[j] = (time.perf_counter_ns() - t0) / 1e3
    return samples


def run_bench(cfg: BenchConfig) -> list[BenchRecord]:
    """One record per variant (baseline first) for a single ``max_len``.

    Raises CrossCheckError before any timing if a variant's output differs
    from the baseline by more than ``CROSS_CHECK_TOL`` (relative).
    """
    with num_threads(cfg.threads):
        variants = _variants(cfg)
        results = [v.to_jagged(v.run()) for v in variants]
        base = results[0]
        for v, r in zip(variants[1:], results[1:]):
            err = rel_err(r, base)
            if not err <= CROSS_CHECK_TOL:
                diff = np.abs(as_array(r) - as_array(base))
                worst = int(np.argmax(diff)) if diff.size else -1
                raise CrossCheckError(
                    f"{cfg.op_id}: variant {v.name} differs from {variants[0].name}: "
                    f"rel err {err:.3e} > {CROSS_CHECK_TOL:g}; worst element {worst} "
                    f"({as_array(r)[worst]!r} vs {as_array(base)[worst]!r})"
                )
        timings = [_time_us(v.run, cfg.iters, cfg.warmup) for v in variants]

    base_p50 = float(np.median(timings[0]))
    records = []
    for v, r, t in zip(variants, results, timings):
        p10, p50, p90 = (float(x) for x in np.percentile(t, [10, 50, 90]))
        records.append(
            BenchRecord(
                op=cfg.op_id, variant=v.name, B=cfg.batch, D=cfg.dim, T=cfg.t,
                max_len=cfg.max_len, dist=cfg.dist, seed=cfg.seed, precision=cfg.precision,
                threads=cfg.threads, time_us_p50=p50, time_us_p10=p10, time_us_p90=p90,
                flops=v.flops, bytes=v.nbytes,
                speedup_vs_dense=base_p50 / p50 if p50 > 0 else math.inf,
                bytes_ratio_vs_dense=v.nbytes / variants[0].nbytes if variants[0].nbytes else 1.0,
                checksum=checksum(r),
                noisy=bool(p10 > 0 and p90 / p10 > NOISY_SPREAD),
            )
        )
    return records


def run_sweep(cfg: BenchConfig) -> list[BenchRecord]:
    """``run_bench`` at every ``max_len`` in ``cfg.grid``."""
    grid = cfg.grid or DEFAULT_GRID
    records = []
    for L in grid:
        records.extend(run_bench(replace(cfg, max_len=int(L), grid=None)))
    return records


# --- reporting ---------------------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def to_csv(records: Sequence[BenchRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in records:
        writer.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])
    return buf.getvalue()


def to_json(records: Sequence[BenchRecord]) -> str:
    return json.dumps([asdict(r) for r in records], indent=2)


def records_from_json(text: str) -> list[BenchRecord]:
    names = {f.name for f in fields(BenchRecord)}
    out = []
    for d in json.loads(text):
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown record fields {sorted(unknown)}")
        out.append(BenchRecord(**d))
    return out


def _ratio(base: float, value: float) -> str:
    if value == 0:
        return "(inf×)" if base else "(1.00×)"
    return f"({base / value:.2f}×)"


def to_markdown(records: Sequence[BenchRecord]) -> str:
    """Latency-table layout: baseline row first, then each variant with its gain in parentheses."""
    lines = [
        "| Operator | max_L | Version | Memory (MB) | FLOPs (M) | Latency (us) |",
        "|---|---|---|---|---|---|",
    ]
    groups: dict[tuple, list[BenchRecord]] = {}
    for r in records:
        groups.setdefault((r.op, r.max_len), []).append(r)
    for (op, L), rows in groups.items():
        base = rows[0]
        for n, r in enumerate(rows):
            mb, mflops, us = r.bytes / 1e6, r.flops / 1e6, r.time_us_p50
            if n == 0:
                cells = (f"*{r.variant}*", f"{mb:.3g}", f"{mflops:.4g}", f"{us:.1f}")
            else:
                cells = (
                    f"**{r.variant}**",
                    f"{mb:.3g} {_ratio(base.bytes, r.bytes)}",
                    f"{mflops:.4g} {_ratio(base.flops, r.flops)}",
                    f"{us:.1f} {_ratio(base.time_us_p50, r.time_us_p50)}",
                )
            lines.append(f"| {op if n == 0 else ''} | {L} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def render_report(records: Sequence[BenchRecord], fmt: str) -> str:
    if not records:
        raise ValueError("no records to render")
    if fmt == "csv":
        return to_csv(records)
    if fmt == "json":
        return to_json(records)
    if fmt == "md":
        return to_markdown(records)
    raise ValueError(f"unknown report format {fmt!r}")
