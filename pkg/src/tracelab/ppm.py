"""Probabilistic packet marking with a single node field.

Each router on the path overwrites the packet's node field with its own
address with probability ``p``; the victim tallies surviving marks and orders
routers by count.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import AmbiguousOrder, IncompleteEvidence
from .topology import AttackPath, NodeId

IDENTITY_LEN = 28


def _check_p(p: float) -> None:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"marking probability must lie in [0, 1], got {p!r}")


@dataclass(frozen=True)
class PpmParams:
    marking_probability: float
    confidence_target: float = 0.99

    def __post_init__(self):
        _check_p(self.marking_probability)
        if not 0.0 < self.confidence_target < 1.0:
            raise ValueError("confidence_target must lie in (0, 1)")


@dataclass(frozen=True)
class MarkedPacket:
    node_field: NodeId | None
    identity_bytes: bytes = bytes(IDENTITY_LEN)
    sequence: int = 0


def forward_and_mark(
    path: AttackPath,
    p: float,
    rng: np.random.Generator,
    sequence: int = 0,
    identity_bytes: bytes | None = None,
) -> MarkedPacket:
    """Send one packet from the attacker through ``R_n .. R_1``."""
    _check_p(p)
    node = None
    for router in path.routers:
        if rng.random() < p:
            node = router
    return MarkedPacket(node, identity_bytes or bytes(IDENTITY_LEN), sequence)


def mark_stream(path: AttackPath, p: float, rng: np.random.Generator, count: int):
    """Yield ``count`` packets as the victim sees them."""
    for seq in range(count):
        yield forward_and_mark(path, p, rng, seq)


def surviving_distances(path: AttackPath, p: float, rng: np.random.Generator, count: int) -> np.ndarray:
    """Vectorised marking for ``count`` packets.

    Returns the distance from the victim of the router whose mark survived,
    0 for unmarked packets. Same marking rule as ``forward_and_mark``, one
    uniform per router per packet.
    """
    _check_p(p)
    n = path.hop_count
    # column j is the j-th router traversed, i.e. distance n - j
    marks = rng.random((count, n)) < p
    last = n - 1 - np.argmax(marks[:, ::-1], axis=1)
    dist = n - last
    dist[~marks.any(axis=1)] = 0
    return dist


def survival_probability(p: float, d: int) -> float:
    """Chance a mark written ``d`` hops out reaches the victim intact."""
    _check_p(p)
    if d < 1:
        raise ValueError(f"distance must be >= 1, got {d}")
    return p * (1.0 - p) ** (d - 1)


def survival_curve(p: float, max_d: int) -> list[tuple[int, float]]:
    if max_d < 1:
        raise ValueError("max_d must be >= 1")
    return [(d, survival_probability(p, d)) for d in range(1, max_d + 1)]


def threshold_marking_probability(n: int, confidence: float = 0.99) -> float:
    """Smallest per-router p so that some router marks with prob >= confidence."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0.0 < confidence < 1.0:
        raise ValueError("confidence must lie in (0, 1)")
    return 1.0 - (1.0 - confidence) ** (1.0 / n)


def threshold_curve(n_max: int, confidence: float = 0.99) -> list[tuple[int, float]]:
    return [(n, threshold_marking_probability(n, confidence)) for n in range(1, n_max + 1)]


def any_mark_probability(p: float, n: int) -> float:
    return -math.expm1(n * math.log1p(-p)) if p < 1.0 else 1.0


@dataclass
class MarkTally:
    counts: Counter = field(default_factory=Counter)
    total_packets: int = 0
    unmarked: int = 0

    def add(self, packet: MarkedPacket) -> None:
        self.total_packets += 1
        if packet.node_field is None:
            self.unmarked += 1
        else:
            self.counts[packet.node_field] += 1

    def merge(self, other: "MarkTally") -> "MarkTally":
        return MarkTally(
            self.counts + other.counts,
            self.total_packets + other.total_packets,
            self.unmarked + other.unmarked,
        )


def tally(packets: Iterable[MarkedPacket]) -> MarkTally:
    t = MarkTally()
    for packet in packets:
        t.add(packet)
    return t


def reconstruct_path(t: MarkTally, expected_hops: int | None = None) -> list[NodeId]:
    """Routers by strictly descending mark count; victim-adjacent first.

    Raises IncompleteEvidence when fewer distinct routers were seen than
    ``expected_hops`` and AmbiguousOrder on any tie.
    """
    seen = {r: c for r, c in t.counts.items() if c > 0}
    if expected_hops is not None and len(seen) < expected_hops:
        raise IncompleteEvidence(
            f"expected {expected_hops} routers, marks seen from only {len(seen)}"
        )
    order = sorted(seen, key=lambda r: (-seen[r], r))
    for a, b in zip(order, order[1:]):
        if seen[a] == seen[b]:
            raise AmbiguousOrder([r for r in order if seen[r] == seen[a]])
    return order
