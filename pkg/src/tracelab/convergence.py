"""Monte-Carlo harness for packet-marking convergence time.

A trial streams packets until the victim's mark tally names every router and
orders them strictly by count. The hot loop lives in ``kernels``; everything
here is bookkeeping, seeding and statistics.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from . import kernels
from .errors import NoConvergedTrials
from .ppm import MarkTally, forward_and_mark
from .rng import derive_seed
from .topology import AttackPath

DEFAULT_MAX_PACKETS = 10**6
DEFAULT_CONFIDENCE = 0.95
EXHAUSTION_WARN_FRACTION = 0.01


class ExhaustionWarning(UserWarning):
    """More than 1% of a cell's trials hit ``max_packets``."""


@dataclass(frozen=True)
class ConvergenceCriteria:
    hop_count: int
    require_all_routers: bool = True
    require_strict_order: bool = True

    def __post_init__(self):
        if self.hop_count < 1:
            raise ValueError("hop_count must be >= 1")

    def satisfied(self, counts: Sequence[int]) -> bool:
        """``counts[d-1]`` is the mark count of ``R_d``."""
        if self.require_all_routers and min(counts) < 1:
            return False
        if self.require_strict_order:
            return all(a > b for a, b in zip(counts, counts[1:]))
        return True


@dataclass(frozen=True)
class ConvergenceResult:
    packets_to_converge: int | None
    trial_seed: int

    @property
    def exhausted(self) -> bool:
        return self.packets_to_converge is None


@dataclass(frozen=True)
class SweepSummary:
    hop_count: int
    p: float
    trials: int
    converged: int
    exhausted: int
    mean: float
    ci_low: float
    ci_high: float
    confidence: float


def convergence_trial(
    path: AttackPath | int,
    p: float,
    seed: int,
    max_packets: int = DEFAULT_MAX_PACKETS,
    criteria: ConvergenceCriteria | None = None,
) -> ConvergenceResult:
    """Packets the victim needs before the path order is determined.

    Unmarked stretches are skipped by drawing their length directly, and the
    surviving mark's distance is drawn from its truncated geometric law; both
    are exact in distribution to per-router marking.
    """
    n = path if isinstance(path, int) else path.hop_count
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p!r}")
    if max_packets < 1:
        raise ValueError("max_packets must be >= 1")
    criteria = criteria or ConvergenceCriteria(n)
    if criteria.hop_count != n:
        raise ValueError("criteria.hop_count does not match the path")
    out = kernels.convergence_trial(
        n, float(p), int(seed), int(max_packets),
        criteria.require_all_routers, criteria.require_strict_order,
    )
    return ConvergenceResult(None if out < 0 else int(out), int(seed))


def reference_convergence_trial(
    path: AttackPath,
    p: float,
    rng: np.random.Generator,
    max_packets: int,
    criteria: ConvergenceCriteria | None = None,
) -> int | None:
    """Slow per-packet, per-router version for cross-checking the kernel."""
    criteria = criteria or ConvergenceCriteria(path.hop_count)
    tally = MarkTally()
    for seq in range(1, max_packets + 1):
        tally.add(forward_and_mark(path, p, rng, seq))
        counts = [tally.counts[path.router_at(d)] for d in range(1, path.hop_count + 1)]
        if criteria.satisfied(counts):
            return seq
    return None


def _run_cell(args):
    n, p, seeds, max_packets = args
    return [kernels.convergence_trial(n, p, s, max_packets) for s in seeds]


def summarize(n: int, p: float, samples: Sequence[int | None], confidence: float) -> SweepSummary:
    done = np.array([s for s in samples if s is not None], dtype=float)
    exhausted = len(samples) - len(done)
    if len(done) == 0:
        mean = lo = hi = math.nan
    elif len(done) == 1:
        mean = lo = hi = float(done[0])
    else:
        mean = float(done.mean())
        sem = float(done.std(ddof=1)) / math.sqrt(len(done))
        half = float(stats.t.ppf(0.5 + confidence / 2.0, len(done) - 1)) * sem
        lo, hi = mean - half, mean + half
    return SweepSummary(n, p, len(samples), len(done), exhausted, mean, lo, hi, confidence)


def convergence_sweep(
    hop_counts: Sequence[int],
    p_grid: Sequence[float],
    trials: int,
    confidence: float = DEFAULT_CONFIDENCE,
    max_packets: int = DEFAULT_MAX_PACKETS,
    base_seed: int = 0,
    workers: int = 1,
) -> list[SweepSummary]:
    """Mean convergence time with a Student-t interval for every (n, p) cell.

    Trial ``t`` of cell ``(n, p)`` uses ``derive_seed(base_seed, n, p, t)``,
    so results do not depend on ``workers`` or on the rest of the grid.
    """
    if not hop_counts or not p_grid:
        raise ValueError("hop_counts and p_grid must be non-empty")
    if trials < 2:
        raise ValueError("trials must be >= 2")
    if not 0.0 < confidence < 1.0:
        raise ValueError("confidence must lie in (0, 1)")
    for p in p_grid:
        if not 0.0 < p < 1.0:
            raise ValueError(f"grid probabilities must lie in (0, 1), got {p!r}")
    if any(n < 1 for n in hop_counts):
        raise ValueError("hop counts must be >= 1")

    cells = [(int(n), float(p)) for n in hop_counts for p in p_grid]
    jobs = [
        (n, p, [derive_seed(base_seed, n, p, t) for t in range(trials)], int(max_packets))
        for n, p in cells
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            raw = list(pool.map(_run_cell, jobs))
    else:
        raw = [_run_cell(job) for job in jobs]

    out = []
    for (n, p), results in zip(cells, raw):
        samples = [None if r < 0 else r for r in results]
        summary = summarize(n, p, samples, confidence)
        if summary.exhausted > EXHAUSTION_WARN_FRACTION * trials:
            warnings.warn(
                f"n={n} p={p}: {summary.exhausted}/{trials} trials hit max_packets="
                f"{max_packets}; the mean is biased low",
                ExhaustionWarning,
                stacklevel=2,
            )
        out.append(summary)
    return out


def optimal_marking_probability(summaries: Sequence[SweepSummary], n: int) -> float:
    """Grid p with the smallest mean convergence time for ``n`` hops.

    Ties go to the smaller p.
    """
    cells = [s for s in summaries if s.hop_count == n]
    usable = [s for s in cells if s.converged > 0]
    if not usable:
        raise NoConvergedTrials(f"no converged trials for n={n}")
    return min(usable, key=lambda s: (s.mean, s.p)).p
