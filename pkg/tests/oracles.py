"""Independent oracles. Nothing here imports the code under test."""

from __future__ import annotations

import itertools
import math

import numpy as np


def enumerate_survivor_distribution(n: int, p: float) -> dict[int, float]:
    """P(surviving mark is from R_d) by summing over all 2**n mark vectors.

    Key 0 is the unmarked outcome. Routers are visited R_n first, so the
    survivor is the last marking router in traversal order.
    """
    out = {d: 0.0 for d in range(n + 1)}
    for marks in itertools.product((False, True), repeat=n):
        prob = 1.0
        survivor = 0
        for j, m in enumerate(marks):  # j-th router traversed is R_{n-j}
            prob *= p if m else 1.0 - p
            if m:
                survivor = n - j
        out[survivor] += prob
    return out


def n2_expected_convergence(p: float, horizon: int) -> tuple[float, float]:
    """E[min(T, horizon)] for a 2-hop path by dynamic programming.

    State: whether R_2 has any surviving mark (z) and delta = c1 - c2.
    Converged once z and delta > 0. Returns (expectation, mass still
    unconverged at ``horizon``).
    """
    a = p
    b = (1.0 - p) * p
    u = 1.0 - a - b
    off = horizon + 1
    size = 2 * horizon + 3
    m0 = np.zeros(size)
    m1 = np.zeros(size)
    m0[off] = 1.0
    expected = 0.0
    for _ in range(horizon):
        expected += m0.sum() + m1.sum()
        n0 = u * m0
        n0[1:] += a * m0[:-1]
        n1 = u * m1
        n1[1:] += a * m1[:-1]
        n1[:-1] += b * (m0[1:] + m1[1:])
        n1[off + 1:] = 0.0
        m0, m1 = n0, n1
    return expected, float(m0.sum() + m1.sum())


def bloom_false_positive_rate(m: int, k: int, n: int) -> float:
    return (1.0 - math.exp(-k * n / m)) ** k


def single_router_bridges(edges, left, right, eligible) -> set:
    """Routers x with edges left-x and x-right, by scanning the edge list."""
    nbrs_left = {b if a == left else a for a, b in edges if left in (a, b)}
    nbrs_right = {b if a == right else a for a, b in edges if right in (a, b)}
    return {x for x in nbrs_left & nbrs_right if x in eligible}
