"""The nine release criteria, each checked at its stated tolerance and time budget.

A one-line PASS/FAIL summary per criterion is printed at the end of the run.
"""

import csv
import io
import time
from pathlib import Path

import numpy as np
import pytest

from jagged_flash import linalg
from jagged_flash.attention import (
    ATTENTION_VARIANTS,
    ScratchMeter,
    jagged_flash_attention_backward,
    jagged_flash_attention_forward,
)
from jagged_flash.bench import BENCH_OPS, BenchConfig, run_bench
from jagged_flash.cli import main
from jagged_flash.core import LengthDistribution, random_jagged
from jagged_flash.costmodel import OpConfig, attention_cost, cost_report, growth_per_doubling, sweep_configs
from jagged_flash.gradcheck import CHECKED_OPS, ShapeSpec, backward_fn, check_op, check_suite, leaves, rebuild
from jagged_flash.parallel import num_threads
from jagged_flash.verify import (
    Case,
    attention_outputs,
    max_pairwise_error,
    op_inputs,
    oracle_errors,
    random_case,
)

GOLDEN = Path(__file__).parent / "golden"
CHAIN_BLOCKS = ((1, 1), (3, 3), (64, 64))
CHAIN_CASES = 20


class Timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0


def _chain_cases():
    rng = np.random.default_rng(0)
    return [random_case(rng) for _ in range(CHAIN_CASES)]


def test_c1_oracle_equivalence(acceptance):
    with Timer() as t:
        worst = {op: max(oracle_errors(op, cases=50, seed=0, dtype=np.float64)) for op in linalg.CORE_OPS}
    err = max(worst.values())
    ok = err < 1e-6 and t.elapsed < 30
    acceptance(1, ok, f"6 ops x 50 configs, max rel err {err:.2e} (< 1e-6), {t.elapsed:.1f}s (< 30s)")
    assert err < 1e-6, worst
    assert t.elapsed < 30


def test_c2_attention_chain(acceptance):
    cases = _chain_cases()
    edge = sum(1 for c in cases if 0 in c.lengths), sum(1 for c in cases if 1 in c.lengths)
    errs = {np.float64: 0.0, np.float32: 0.0}
    with Timer() as t:
        for dtype in errs:
            for case in cases:
                for bq, bk in CHAIN_BLOCKS:
                    outs, _, _, _ = attention_outputs(case, dtype, bq, bk)
                    errs[dtype] = max(errs[dtype], max_pairwise_error(outs))
    ok = errs[np.float64] < 1e-9 and errs[np.float32] < 1e-5 and t.elapsed < 60 and min(edge) > 0
    acceptance(
        2, ok,
        f"f64 {errs[np.float64]:.2e} (< 1e-9), f32 {errs[np.float32]:.2e} (< 1e-5), "
        f"cases with Bi=0/1: {edge[0]}/{edge[1]}, {t.elapsed:.1f}s (< 60s)",
    )
    assert min(edge) > 0
    assert errs[np.float64] < 1e-9
    assert errs[np.float32] < 1e-5
    assert t.elapsed < 60


def _sign_flipped(op_id):
    bwd = backward_fn(op_id)

    def broken(inputs, grad_out):
        grads = bwd(inputs, grad_out)
        return rebuild(grads, [-g for g in leaves(grads)])

    return broken


def test_c3_gradcheck(acceptance):
    with Timer() as t:
        reports = {op: check_suite(op, cases=20, seed=0, tol=1e-5) for op in CHECKED_OPS}
        control = check_op("jagged_dense_bmm", ShapeSpec((2, 3), 2, 2), seed=0, backward=_sign_flipped("jagged_dense_bmm"))
    failed = [op for op, rs in reports.items() if not all(rs)]
    worst = max(r.max_relative_error for rs in reports.values() for r in rs if r.passed)
    ok = not failed and not control.passed and t.elapsed < 120
    acceptance(
        3, ok,
        f"{len(reports)} ops x 20 cases, worst rel err {worst:.2e} (< 1e-5), "
        f"negative control {'fails' if not control.passed else 'PASSES (bad)'}, {t.elapsed:.1f}s (< 120s)",
    )
    assert not failed
    assert not control.passed
    assert t.elapsed < 120


def test_c4_flop_ratio(acceptance):
    B, L = 250, 1000
    total = 125900
    lengths = tuple(total // B + (i < total % B) for i in range(B))
    fill = sum(lengths) / (B * L)
    ratios = {
        op: cost_report(OpConfig(op, B, 64, 64, lengths, max_len=L)).ratio_flops
        for op in ("jagged_dense_bmm", "jagged_jagged_bmm")
    }
    ok = fill == 0.5036 and all(abs(r - 1.986) <= 1e-3 for r in ratios.values())
    acceptance(4, ok, f"fill {fill}, ratios " + ", ".join(f"{op} {r:.5f}" for op, r in ratios.items()) + " (1.986 +/- 0.001)")
    assert fill == 0.5036
    for r in ratios.values():
        assert r == pytest.approx(1.986, abs=1e-3)


def _attention_bytes(grid):
    cfgs = sweep_configs("jagged_attention", 256, 64, 64, LengthDistribution("half-mean", 1, 0), grid)
    return {v: [attention_cost(v, c)[1] for c in cfgs] for v in ATTENTION_VARIANTS}


def test_c5_memory_growth(acceptance):
    grid = [512, 1024, 2048, 4096]
    b = _attention_bytes(grid)
    slopes = {v: growth_per_doubling(grid, b[v]) for v in ("dense_attention", "dense_flash_attention", "jagged_flash_attention")}
    ok = 3.6 <= slopes["dense_attention"] <= 4.0 and all(
        1.9 <= slopes[v] <= 2.1 for v in ("dense_flash_attention", "jagged_flash_attention")
    )
    acceptance(5, ok, "per-doubling growth " + ", ".join(f"{v} {s:.3f}" for v, s in slopes.items()))
    assert 3.6 <= slopes["dense_attention"] <= 4.0
    assert 1.9 <= slopes["dense_flash_attention"] <= 2.1
    assert 1.9 <= slopes["jagged_flash_attention"] <= 2.1


def test_c6_headroom(acceptance):
    b = _attention_bytes([4096])
    naive_vs_jflash = b["dense_attention"][0] / b["jagged_flash_attention"][0]
    jflash_vs_dflash = b["jagged_flash_attention"][0] / b["dense_flash_attention"][0]
    ok = naive_vs_jflash >= 20 and jflash_vs_dflash <= 0.55
    acceptance(6, ok, f"naive/jagged-flash {naive_vs_jflash:.1f} (>= 20), jagged-flash/dense-flash {jflash_vs_dflash:.3f} (<= 0.55)")
    assert naive_vs_jflash >= 20
    assert jflash_vs_dflash <= 0.55


def test_c7_peak_scratch(acceptance):
    worst_slack = np.inf
    violations = []
    with Timer() as t:
        for case in _chain_cases():
            rng = np.random.default_rng(case.seed)
            q, k, v = (random_jagged(rng, case.lengths, case.dim) for _ in range(3))
            for bq, bk in CHAIN_BLOCKS:
                meter = ScratchMeter()
                jagged_flash_attention_forward(q, k, v, bq, bk, meter=meter)
                bound = bq * bk + 2 * sum(case.lengths) * case.dim
                worst_slack = min(worst_slack, bound - meter.peak)
                if meter.peak > bound:
                    violations.append((case, bq, bk, meter.peak, bound))
    ok = not violations and t.elapsed < 30
    acceptance(7, ok, f"{CHAIN_CASES * len(CHAIN_BLOCKS)} runs, min headroom {worst_slack} elements, {t.elapsed:.1f}s (< 30s)")
    assert not violations
    assert t.elapsed < 30


def _values(out):
    if isinstance(out, tuple):
        return [x for o in out for x in _values(o)]
    return [np.ascontiguousarray(getattr(out, "values", out)).tobytes()]


def test_c8_determinism(acceptance):
    case = Case((9, 0, 1, 33, 17, 4, 25, 2), 5, 4, 77)
    mismatches = []
    with Timer() as t:
        for op in linalg.FORWARD:
            inputs = op_inputs(op, case)
            runs = []
            for n in (1, 1, 4):
                with num_threads(n):
                    runs.append(_values(linalg.forward(op, inputs, block_size=3)))
            if any(r != runs[0] for r in runs):
                mismatches.append(op)
        rng = np.random.default_rng(case.seed)
        q, k, v = (random_jagged(rng, case.lengths, case.dim) for _ in range(3))
        runs = []
        for n in (1, 1, 4):
            with num_threads(n):
                out, saved = jagged_flash_attention_forward(q, k, v, 3, 5)
                runs.append(_values((out, saved.logsumexp, jagged_flash_attention_backward(q, k, v, out, saved))))
        if any(r != runs[0] for r in runs):
            mismatches.append("jagged_flash_attention")
        for op in BENCH_OPS:
            cfg = BenchConfig(op, batch=6, dim=4, t=3, max_len=24, iters=1, warmup=0)
            sums = [[r.checksum for r in run_bench(BenchConfig(**{**cfg.__dict__, "threads": n}))] for n in (1, 1, 4)]
            if any(s != sums[0] for s in sums):
                mismatches.append(f"bench {op}")
    ok = not mismatches and t.elapsed < 60
    acceptance(8, ok, f"{len(linalg.FORWARD) + 1} operators and {len(BENCH_OPS)} benchmarks bit-identical over 2 runs and threads 1/4, {t.elapsed:.1f}s (< 60s)" if not mismatches else f"mismatch in {mismatches}")
    assert not mismatches
    assert t.elapsed < 60


def test_c9_cli_contract(acceptance, capsys):
    rc_check = main(["check", "--op", "all"])
    capsys.readouterr()
    rc_op = main(["bench", "op", "--op", "jagged_dense_bmm", "--batch", "4", "--dim", "4", "--t", "4",
                  "--max-len", "16", "--iters", "2", "--warmup", "0"])
    header = capsys.readouterr().out.splitlines()[0]
    golden = (GOLDEN / "csv_header.txt").read_text().strip()
    grid = (16, 32, 64)
    rc_sweep = main(["bench", "sweep", "--ops", "attention", "--grid", ",".join(map(str, grid)), "--batch", "4",
                     "--dim", "4", "--iters", "1", "--warmup", "0"])
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    keys = sorted((int(r["max_len"]), r["variant"]) for r in rows)
    expected = sorted((L, v) for L in grid for v in ATTENTION_VARIANTS)
    ok = rc_check == 0 and rc_op == 0 and header == golden and rc_sweep == 0 and keys == expected
    acceptance(9, ok, f"check exit {rc_check}, bench header {'matches' if header == golden else 'differs'}, sweep {len(rows)} records (want {len(expected)})")
    assert rc_check == 0
    assert rc_op == 0 and header == golden
    assert rc_sweep == 0 and keys == expected
