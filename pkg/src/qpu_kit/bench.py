"""Sequential vs pairwise-tree chain products: timing, depth and op counts."""

from __future__ import annotations

import logging
import time
from collections.abc import Callable, Iterable

import numpy as np

from qpu_kit.opcount import counted_qpu_fc_forward, expected_multiplications
from qpu_kit.qpu import chain_forward, tree_reduce
from qpu_kit.quaternion import random_unit
from qpu_kit.schemas import BenchRow

logger = logging.getLogger(__name__)

DEFAULT_N_VALUES = (1, 2, 8, 64, 128, 1024)
OPCOUNT_LIMIT = 4096


def _best_time(fn: Callable[[], object], repetitions: int) -> float:
    best = float("inf")
    for _ in range(max(repetitions, 1)):
        started = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - started)
    return best


def ceil_log2(n: int) -> int:
    return (n - 1).bit_length()


def bench_chain(
    n_values: Iterable[int] = DEFAULT_N_VALUES, repetitions: int = 5, seed: int = 0
) -> list[BenchRow]:
    """One row per chain length with best-of-``repetitions`` wall times."""
    rng = np.random.default_rng(seed)
    rows = []
    for n in n_values:
        ps = random_unit(rng, (n,))
        sequential, _ = chain_forward(ps)
        tree = tree_reduce(ps)
        t_seq = _best_time(lambda: chain_forward(ps), repetitions)
        t_tree = _best_time(lambda: tree_reduce(ps), repetitions)

        mults = -1
        if n <= OPCOUNT_LIMIT:
            weights = rng.uniform(-1.0, 1.0, size=(1, n))
            _, counter, _ = counted_qpu_fc_forward(ps.tolist(), weights.tolist(), [0.0])
            mults = counter.mul

        row = BenchRow(
            n=n,
            sequential_seconds=t_seq,
            tree_seconds=t_tree,
            depth=tree.depth,
            expected_depth=ceil_log2(n),
            max_abs_diff=float(np.max(np.abs(sequential - tree.y))),
            multiplications=mults,
            expected_multiplications=expected_multiplications(n, 1),
        )
        logger.info(
            "N=%d: sequential %.2e s, tree %.2e s, depth %d, diff %.1e",
            n,
            t_seq,
            t_tree,
            tree.depth,
            row.max_abs_diff,
        )
        rows.append(row)
    return rows


def format_bench(rows: list[BenchRow]) -> str:
    header = f"{'N':>6} {'seq (s)':>11} {'tree (s)':>11} {'depth':>5} {'log2':>5} {'max diff':>10} {'mults':>8} {'17N-16':>8}"
    lines = [header]
    for r in rows:
        lines.append(
            f"{r.n:>6} {r.sequential_seconds:>11.3e} {r.tree_seconds:>11.3e} "
            f"{r.depth:>5} {r.expected_depth:>5} {r.max_abs_diff:>10.1e} "
            f"{r.multiplications:>8} {r.expected_multiplications:>8}"
        )
    return "\n".join(lines)
