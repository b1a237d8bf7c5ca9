"""Wall-clock benchmarks of the forward kernels."""

from __future__ import annotations

import csv
import io
import json
import math
import statistics
import time
from dataclasses import asdict, dataclass
from typing import Callable, Iterable

import numpy as np

from .core import KernelConfig, OutputBatch, TokenBatch
from .rng import gauss_tokens

MIN_REPS = 3

FIELDS = ("kernel", "n", "d", "dv", "gamma", "chunk_width", "reps", "median_s", "tokens_per_s")


@dataclass(frozen=True)
class BenchRecord:
    kernel: str
    n: int
    d: int
    dv: int
    gamma: float
    chunk_width: int
    reps: int
    median_s: float
    tokens_per_s: float

    def __post_init__(self):
        if self.reps < MIN_REPS:
            raise ValueError(f"reps must be >= {MIN_REPS}, got {self.reps}")


def time_kernel(fn: Callable[[TokenBatch, KernelConfig], OutputBatch], batch: TokenBatch,
                cfg: KernelConfig, reps: int) -> float:
    """Median wall time of ``reps`` calls, after one untimed warm-up call."""
    if reps < MIN_REPS:
        raise ValueError(f"reps must be >= {MIN_REPS}, got {reps}")
    fn(batch, cfg)
    times = []
    for _ in range(reps):
        start = time.perf_counter()
        fn(batch, cfg)
        times.append(time.perf_counter() - start)
    return statistics.median(times)


def bench(kernel: str, fn, n_list: Iterable[int], d: int, dv: int, cfg: KernelConfig,
          reps: int = 5, seed: int = 0, dtype=np.float64) -> list[BenchRecord]:
    records = []
    for n in n_list:
        batch = gauss_tokens(seed, n, d, dv, 1.0 / math.sqrt(d))
        if np.dtype(dtype) != batch.Q.dtype:
            batch = TokenBatch(batch.Q.astype(dtype), batch.K.astype(dtype), batch.V.astype(dtype))
        median = time_kernel(fn, batch, cfg, reps)
        records.append(BenchRecord(kernel, n, d, dv, cfg.gamma, cfg.chunk_width, reps, median,
                                   n / median if median > 0 else math.inf))
    return records


def time_ratios(records: list[BenchRecord]) -> list[float]:
    """Median time of each record divided by that of the previous one."""
    return [b.median_s / a.median_s for a, b in zip(records, records[1:])]


def format_csv(records: list[BenchRecord]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=FIELDS, lineterminator="\n")
    writer.writeheader()
    for r in records:
        writer.writerow(asdict(r))
    return buf.getvalue()


def format_json(records: list[BenchRecord]) -> str:
    return "".join(json.dumps(asdict(r)) + "\n" for r in records)
