"""Command line entry point.

    jagged-flash bench op    --op jagged_dense_bmm --batch 256 --dim 64 --t 64 --max-len 512
    jagged-flash bench sweep --ops attention --grid 128,256,512
    jagged-flash check --op all
    jagged-flash cost  --op jagged_flash_attention --max-len 4096 --grid 512,1024,2048,4096

Exit codes: 0 success, 1 correctness failure, 2 bad arguments.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import linalg
from .bench import BENCH_OPS, DEFAULT_GRID, BenchConfig, CrossCheckError, render_report, run_bench, run_sweep
from .attention import ATTENTION_VARIANTS
from .core import LengthDistribution, gen_lengths
from .costmodel import COST_OPS, OpConfig, attention_cost, cost_report
from .gradcheck import check_suite
from .verify import attention_chain_errors, oracle_errors

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

CHECK_OPS = linalg.CORE_OPS + ("jagged_mlp", "jagged_flash_attention")


def _grid(text: str) -> tuple[int, ...]:
    try:
        grid = tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}") from None
    if not grid or min(grid) < 1:
        raise argparse.ArgumentTypeError("grid needs positive integers")
    return grid


def _shape_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--t", type=int, default=64)
    p.add_argument("--max-len", type=int, default=256)
    p.add_argument("--dist", choices=("fixed", "uniform", "half-mean"), default="half-mean")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--block-q", type=int, default=64)
    p.add_argument("--block-k", type=int, default=64)
    p.add_argument("--out", type=Path, default=None, help="write the report here instead of stdout")


def _bench_args(p: argparse.ArgumentParser) -> None:
    _shape_args(p)
    p.add_argument("--precision", choices=("f32", "f64"), default="f32")
    p.add_argument("--iters", type=int, default=20)
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--format", choices=("csv", "json", "md"), default="csv")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jagged-flash", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    bench = sub.add_parser("bench", help="time jagged vs padded implementations")
    bench_sub = bench.add_subparsers(dest="mode", required=True)
    op = bench_sub.add_parser("op", help="benchmark one operator at one max_len")
    op.add_argument("--op", required=True, choices=BENCH_OPS)
    _bench_args(op)
    sweep = bench_sub.add_parser("sweep", help="benchmark over a max_len grid")
    sweep.add_argument("--ops", default="attention", choices=BENCH_OPS)
    sweep.add_argument("--grid", type=_grid, default=DEFAULT_GRID)
    _bench_args(sweep)

    check = sub.add_parser("check", help="run oracle and gradient-check suites")
    check.add_argument("--op", default="all", choices=("all",) + CHECK_OPS + ATTENTION_VARIANTS)
    check.add_argument("--seed", type=int, default=0)
    check.add_argument("--cases", type=int, default=10)

    cost = sub.add_parser("cost", help="analytic FLOP/byte model only")
    cost.add_argument("--op", required=True, choices=COST_OPS + ("attention",))
    cost.add_argument("--grid", type=_grid, default=None)
    cost.add_argument("--precision", choices=("f32", "f64"), default="f32")
    cost.add_argument("--format", choices=("csv", "json", "md"), default="json")
    _shape_args(cost)
    return parser


def _emit(text: str, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        out.write_text(text, encoding="utf-8")


def _bench_config(args, op_id: str, grid=None) -> BenchConfig:
    return BenchConfig(
        op_id=op_id, batch=args.batch, dim=args.dim, t=args.t, max_len=args.max_len,
        grid=grid, dist=args.dist, seed=args.seed, precision=args.precision,
        iters=args.iters, warmup=args.warmup, threads=args.threads,
        block_q=args.block_q, block_k=args.block_k,
    )


def cmd_bench(args) -> int:
    if args.mode == "op":
        records = run_bench(_bench_config(args, args.op))
    else:
        records = run_sweep(_bench_config(args, args.ops, args.grid))
    _emit(render_report(records, args.format), args.out)
    noisy = [r for r in records if r.noisy]
    if noisy:
        print(f"note: {len(noisy)} record(s) flagged noisy (p90/p10 > 3)", file=sys.stderr)
    return EXIT_OK


def _line(ok: bool, what: str, detail: str) -> bool:
    print(f"{'PASS' if ok else 'FAIL'}  {what:<48} {detail}")
    return ok


def cmd_check(args) -> int:
    if args.cases < 1:
        raise ValueError("--cases must be >= 1")
    if args.op == "all":
        ops = CHECK_OPS
    elif args.op in ATTENTION_VARIANTS:
        ops = ("jagged_flash_attention",)
    else:
        ops = (args.op,)
    ok = True
    for op in ops:
        if op == "jagged_flash_attention":
            e64 = max(attention_chain_errors(args.cases, args.seed, np.float64))
            e32 = max(attention_chain_errors(args.cases, args.seed, np.float32))
            ok &= _line(e64 < 1e-9, "attention equivalence chain (f64)", f"max rel err {e64:.2e}")
            ok &= _line(e32 < 1e-5, "attention equivalence chain (f32)", f"max rel err {e32:.2e}")
        else:
            e64 = max(oracle_errors(op, args.cases, args.seed, np.float64))
            e32 = max(oracle_errors(op, args.cases, args.seed, np.float32))
            ok &= _line(e64 < 1e-6, f"{op} vs padded (f64)", f"max rel err {e64:.2e}")
            ok &= _line(e32 < 1e-5, f"{op} vs padded (f32)", f"max rel err {e32:.2e}")
        reports = check_suite(op, args.cases, args.seed)
        worst = max(reports, key=lambda r: r.max_relative_error)
        ok &= _line(
            all(reports), f"{op} gradcheck x{len(reports)}",
            f"max rel err {worst.max_relative_error:.2e}",
        )
    return EXIT_OK if ok else EXIT_FAIL


def cmd_cost(args) -> int:
    eb = 4 if args.precision == "f32" else 8
    grid = args.grid or (args.max_len,)
    rows = []
    for L in grid:
        lengths = tuple(gen_lengths(LengthDistribution(args.dist, L, args.seed), args.batch))
        base = OpConfig(
            "jagged_attention" if args.op == "attention" else args.op,
            args.batch, args.dim, args.t, lengths, element_bytes=eb, max_len=L,
            block_q=args.block_q, block_k=args.block_k,
        )
        if args.op == "attention":
            for variant in ATTENTION_VARIANTS:
                flops, nbytes = attention_cost(variant, base)
                rows.append({"op": variant, "max_len": L, "flops": flops, "bytes": nbytes})
        else:
            rows.append(cost_report(base).to_dict())
    if args.format == "json":
        text = json.dumps(rows, indent=2) + "\n"
    else:
        cols = list(rows[0])
        if args.format == "csv":
            buf = io.StringIO()
            w = csv.DictWriter(buf, cols, lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
            text = buf.getvalue()
        else:
            text = "| " + " | ".join(cols) + " |\n|" + "---|" * len(cols) + "\n"
            text += "".join("| " + " | ".join(str(r[c]) for c in cols) + " |\n" for r in rows)
    _emit(text, args.out)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handler = {"bench": cmd_bench, "check": cmd_check, "cost": cmd_cost}[args.command]
    try:
        return handler(args)
    except CrossCheckError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
