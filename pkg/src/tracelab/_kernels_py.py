"""Pure-Python twin of ``_kernels.pyx``; same stream, same results."""

from __future__ import annotations

import math

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
TWO_M53 = 1.0 / 9007199254740992.0


def mix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def uniforms(seed: int, count: int) -> list[float]:
    state = seed & MASK64
    out = []
    for _ in range(count):
        state = (state + GOLDEN) & MASK64
        out.append(((mix64(state) >> 11) + 1) * TWO_M53)
    return out


def _bad_pairs(c: list[int], d: int, n: int) -> int:
    b = 0
    if d > 1 and c[d - 1] <= c[d]:
        b += 1
    if d < n and c[d] <= c[d + 1]:
        b += 1
    return b


def convergence_trial(
    n: int,
    p: float,
    seed: int,
    max_packets: int,
    require_all_routers: bool = True,
    require_strict_order: bool = True,
) -> int:
    if n < 1:
        raise ValueError("n must be >= 1")
    if p <= 0.0:
        return -1
    if p >= 1.0:
        # only R_1 ever marks
        if n >= 2 and (require_all_routers or n >= 3):
            return -1
        log_q = 0.0
        marked = 1.0
    else:
        log_q = math.log1p(-p)
        marked = -math.expm1(n * log_q)
    log_unmarked = math.log1p(-marked) if marked < 1.0 else 0.0

    state = seed & MASK64
    counts = [0] * (n + 2)
    received = 0
    bad = n - 1
    zeros = n
    while True:
        if marked >= 1.0:
            gap = 1.0
        else:
            state = (state + GOLDEN) & MASK64
            u = ((mix64(state) >> 11) + 1) * TWO_M53
            gap = math.floor(math.log(u) / log_unmarked) + 1.0
        if gap > float(max_packets - received):
            return -1
        received += int(gap)

        if marked >= 1.0 and log_q == 0.0:
            d = 1
        else:
            state = (state + GOLDEN) & MASK64
            u = ((mix64(state) >> 11) + 1) * TWO_M53
            d = int(math.ceil(math.log1p(-u * marked) / log_q))
            d = min(max(d, 1), n)

        before = _bad_pairs(counts, d, n)
        if counts[d] == 0:
            zeros -= 1
        counts[d] += 1
        bad += _bad_pairs(counts, d, n) - before
        if (not require_all_routers or zeros == 0) and (
            not require_strict_order or bad == 0
        ):
            return received
