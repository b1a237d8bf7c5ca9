"""Command-line entry point: ``hla gen | run | check | bench``.

Exit codes: 0 success, 1 failed check or other runtime error, 2 usage
error, 3 dimension mismatch, 4 kernel undefined for the configuration.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import ahla, checks, hla2, hla3, oracle, scan
from .bench import MIN_REPS, bench, format_csv, format_json, time_ratios
from .core import DimensionError, HLAError, KernelConfig, OutputBatch, TokenBatch, UndefinedKernelError
from .hot1 import read_tensor, write_tensor
from .rng import gauss_tokens

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2
EXIT_DIMENSION = 3
EXIT_UNDEFINED = 4

KERNELS = {
    "hla2": hla2.hla2_forward,
    "hla2-unmasked": hla2.hla2_unmasked_forward,
    "hla2-chunked": scan.hla2_chunked_forward,
    "ahla": ahla.ahla_forward,
    "ahla-chunked": scan.ahla_chunked_forward,
    "hla3": hla3.hla3_forward,
    **oracle.ORACLES,
}

# Kernel-table entries that ``check --inject-fault`` may corrupt.
FAULT_TARGETS = tuple(f for f in checks.Kernels.__dataclass_fields__)


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _non_negative_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return value


def _n_list(text: str) -> list[int]:
    try:
        values = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad --n-list: {text!r}") from None
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError(f"--n-list needs positive integers, got {text!r}")
    return values


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--eps", type=float, default=1e-6)
    p.add_argument("--lambda", dest="lam", type=float, default=0.0)
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--chunk-width", type=_positive_int, default=64)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hla", description="Higher-order linear attention kernels.")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="write a deterministic Gaussian Q/K/V triple as HOT1 files")
    gen.add_argument("--seed", type=_non_negative_int, required=True)
    gen.add_argument("--n", type=_non_negative_int, required=True)
    gen.add_argument("--d", type=_positive_int, required=True)
    gen.add_argument("--dv", type=_positive_int, required=True)
    gen.add_argument("--scale", type=float, default=None, help="standard deviation (default 1/sqrt(d))")
    gen.add_argument("--out-prefix", required=True)

    run = sub.add_parser("run", help="run one kernel on HOT1 inputs")
    run.add_argument("--q", required=True)
    run.add_argument("--k", required=True)
    run.add_argument("--v", required=True)
    run.add_argument("--kernel", required=True, choices=sorted(KERNELS))
    _add_config_flags(run)
    run.add_argument("--out", required=True, help="output path for O; den goes to PREFIX.den.hot")
    run.add_argument("--emit-den", action="store_true", help="also write den when not normalizing")

    check = sub.add_parser("check", help="run the randomized verification suites")
    check.add_argument("--seed", type=_non_negative_int, default=0)
    check.add_argument("--trials", type=_positive_int, default=200)
    check.add_argument("--max-n", type=_positive_int, default=64)
    check.add_argument("--max-d", type=_positive_int, default=8)
    check.add_argument("--max-dv", type=_positive_int, default=8)
    check.add_argument("--suite", action="append", choices=sorted(checks.SUITES), help=argparse.SUPPRESS)
    check.add_argument("--inject-fault", choices=FAULT_TARGETS, help=argparse.SUPPRESS)

    b = sub.add_parser("bench", help="time a kernel over several sequence lengths")
    b.add_argument("--kernel", required=True, choices=sorted(KERNELS))
    b.add_argument("--n-list", type=_n_list, required=True)
    b.add_argument("--d", type=_positive_int, default=64)
    b.add_argument("--dv", type=_positive_int, default=64)
    b.add_argument("--reps", type=_positive_int, default=5)
    b.add_argument("--format", choices=("csv", "json"), default="csv")
    b.add_argument("--gamma", type=float, default=1.0)
    b.add_argument("--chunk-width", type=_positive_int, default=64)
    b.add_argument("--seed", type=_non_negative_int, default=0)
    b.add_argument("--dtype", choices=("f64", "f32"), default="f64")
    return parser


def _config(args) -> KernelConfig:
    return KernelConfig(gamma=args.gamma, eps=args.eps, lam=args.lam,
                        normalize=args.normalize, chunk_width=args.chunk_width)


def den_path(out: str) -> Path:
    """``o.hot`` -> ``o.den.hot``; a path without the suffix just gains one."""
    path = Path(out)
    stem = path.name[:-4] if path.name.endswith(".hot") else path.name
    return path.with_name(stem + ".den.hot")


def cmd_gen(args) -> int:
    scale = args.scale if args.scale is not None else 1.0 / math.sqrt(args.d)
    batch = gauss_tokens(args.seed, args.n, args.d, args.dv, scale)
    for part in ("q", "k", "v"):
        write_tensor(f"{args.out_prefix}.{part}.hot", getattr(batch, part.upper()))
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _config(args)
    batch = TokenBatch(read_tensor(args.q), read_tensor(args.k), read_tensor(args.v))
    start = time.perf_counter()
    out: OutputBatch = KERNELS[args.kernel](batch, cfg)
    elapsed = time.perf_counter() - start
    write_tensor(args.out, out.O)
    if cfg.normalize or args.emit_den:
        write_tensor(den_path(args.out), np.asarray(out.den).reshape(-1, 1))
    print(f"n={batch.n} d={batch.d} d_v={batch.d_v} kernel={args.kernel} wall_s={elapsed:.6f}")
    return EXIT_OK


def _corrupt(fn):
    def wrong(batch, cfg, *rest, **kw):
        res = fn(batch, cfg, *rest, **kw)
        if isinstance(res, OutputBatch):
            return replace(res, O=res.O * (1.0 + 1e-6))
        return type(res)(*(np.asarray(g) * (1.0 + 1e-3) for g in (res.dQ, res.dK, res.dV)))

    return wrong


def cmd_check(args) -> int:
    kernels = checks.Kernels()
    if args.inject_fault:
        name = args.inject_fault
        kernels = replace(kernels, **{name: _corrupt(getattr(kernels, name))})
    limits = checks.Limits(args.max_n, args.max_d, args.max_dv)
    results = checks.run_checks(args.seed, args.trials, limits, kernels, only=args.suite)
    print(json.dumps([r.report() for r in results], indent=2))
    failed = [r for r in results if not r.passed]
    for r in failed:
        print(f"FAIL suite={r.suite} seed={args.seed} max_rel_err={r.max_rel_err:.3e} "
              f"tolerance={checks.TOLERANCES[r.suite]:.0e} instance={json.dumps(r.worst, default=str)}",
              file=sys.stderr)
    return EXIT_FAIL if failed else EXIT_OK


def cmd_bench(args) -> int:
    if args.reps < MIN_REPS:
        raise _UsageError(f"--reps must be at least {MIN_REPS}")
    cfg = KernelConfig(gamma=args.gamma, chunk_width=args.chunk_width)
    dtype = np.float32 if args.dtype == "f32" else np.float64
    records = bench(args.kernel, KERNELS[args.kernel], args.n_list, args.d, args.dv, cfg,
                    args.reps, args.seed, dtype)
    sys.stdout.write(format_csv(records) if args.format == "csv" else format_json(records))
    for a, b, ratio in zip(records, records[1:], time_ratios(records)):
        print(f"ratio n={a.n}->{b.n}: {ratio:.3f}", file=sys.stderr)
    return EXIT_OK


class _UsageError(Exception):
    pass


COMMANDS = {"gen": cmd_gen, "run": cmd_run, "check": cmd_check, "bench": cmd_bench}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        return COMMANDS[args.command](args)
    except _UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"hla: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DimensionError as exc:
        print(f"hla: dimension mismatch: {exc}", file=sys.stderr)
        return EXIT_DIMENSION
    except UndefinedKernelError as exc:
        print(f"hla: {exc}", file=sys.stderr)
        return EXIT_UNDEFINED
    except (HLAError, OSError, ValueError) as exc:
        print(f"hla: error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
