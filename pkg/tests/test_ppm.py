import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import enumerate_survivor_distribution
from tracelab.errors import AmbiguousOrder, IncompleteEvidence
from tracelab.ppm import (
    MarkedPacket,
    MarkTally,
    PpmParams,
    forward_and_mark,
    mark_stream,
    reconstruct_path,
    survival_curve,
    survival_probability,
    surviving_distances,
    tally,
    threshold_marking_probability,
)
from tracelab.topology import build_linear_path

probs = st.floats(0.0, 1.0, allow_nan=False)


def test_p_zero_never_marks(rng):
    path, _ = build_linear_path(5, 0.0)
    assert all(forward_and_mark(path, 0.0, rng).node_field is None for _ in range(200))


def test_p_one_always_r1(rng):
    path, _ = build_linear_path(5, 1.0)
    assert all(forward_and_mark(path, 1.0, rng).node_field == path.router_at(1) for _ in range(200))


def test_enumeration_oracle_matches_closed_form():
    dist = enumerate_survivor_distribution(3, 0.5)
    assert dist[3] == pytest.approx(0.125, abs=1e-15)
    for d in (1, 2, 3):
        assert dist[d] == pytest.approx(survival_probability(0.5, d), abs=1e-15)


def test_r3_empirical_fraction(rng):
    path, _ = build_linear_path(3, 0.5)
    n = 100_000
    dist = surviving_distances(path, 0.5, rng, n)
    frac = np.mean(dist == 3)
    se = math.sqrt(0.125 * 0.875 / n)
    assert abs(frac - 0.125) < 3 * se


def test_vectorised_and_scalar_marking_agree_in_law():
    path, _ = build_linear_path(4, 0.3)
    a = surviving_distances(path, 0.3, np.random.default_rng(1), 40_000)
    # scalar path, one stream
    r = np.random.default_rng(2)
    b = np.array(
        [0 if (pk := forward_and_mark(path, 0.3, r)).node_field is None else path.distance_of(pk.node_field)
         for _ in range(40_000)]
    )
    for d in range(5):
        pa, pb = np.mean(a == d), np.mean(b == d)
        se = math.sqrt(pa * (1 - pa) / 40_000 + pb * (1 - pb) / 40_000)
        assert abs(pa - pb) < 4 * se + 1e-12


@pytest.mark.parametrize(
    "p,d,expected", [(1.0, 1, 1.0), (1.0, 3, 0.0), (0.5, 3, 0.125)]
)
def test_survival_examples(p, d, expected):
    assert survival_probability(p, d) == expected


def test_survival_rejects_zero_distance():
    with pytest.raises(ValueError):
        survival_probability(0.5, 0)


def test_survival_curve_examples():
    assert [v for _, v in survival_curve(0.5, 6)] == [0.5, 0.25, 0.125, 0.0625, 0.03125, 0.015625]
    assert [v for _, v in survival_curve(1.0, 6)] == [1.0, 0, 0, 0, 0, 0]


@given(st.floats(0.001, 0.999), st.integers(2, 30))
def test_survival_strictly_decreasing(p, max_d):
    vals = [v for _, v in survival_curve(p, max_d)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


@given(probs, st.integers(1, 50))
def test_outcomes_partition(p, n):
    total = sum(survival_probability(p, d) for d in range(1, n + 1)) + (1 - p) ** n
    assert total == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("n,conf,expected", [(1, 0.99, 0.99), (2, 0.99, 0.9)])
def test_threshold_examples(n, conf, expected):
    assert threshold_marking_probability(n, conf) == pytest.approx(expected, abs=1e-12)


def test_threshold_25_hops_value_and_monte_carlo(rng):
    p_star = threshold_marking_probability(25)
    assert p_star == pytest.approx(0.16823, abs=1e-5)
    path, _ = build_linear_path(25, p_star)
    n = 100_000
    hit = np.mean(surviving_distances(path, p_star, rng, n) > 0)
    below = np.mean(surviving_distances(path, p_star - 0.01, rng, n) > 0)
    assert hit >= 0.99 - 3 * math.sqrt(0.0099 / n)
    assert below < 0.99


@given(st.integers(1, 100), st.floats(0.01, 0.99))
def test_threshold_decreasing_in_n(n, conf):
    assert threshold_marking_probability(n + 1, conf) < threshold_marking_probability(n, conf)


@given(st.integers(1, 60), st.floats(0.01, 0.99))
def test_threshold_meets_confidence(n, conf):
    p = threshold_marking_probability(n, conf)
    assert 1 - (1 - p) ** n == pytest.approx(conf, abs=1e-9)


def test_params_validation():
    assert PpmParams(0.2).confidence_target == 0.99
    with pytest.raises(ValueError):
        PpmParams(1.2)
    with pytest.raises(ValueError):
        PpmParams(0.2, 1.0)


def test_tally_empty_and_all_r1():
    t = tally([])
    assert (t.total_packets, t.unmarked, dict(t.counts)) == (0, 0, {})
    t = tally(MarkedPacket(1, sequence=i) for i in range(50))
    assert dict(t.counts) == {1: 50} and t.unmarked == 0


def test_tally_ratios_match_survival():
    path, _ = build_linear_path(6, 0.2)
    n = 100_000
    t = tally(mark_stream(path, 0.2, np.random.default_rng(6), n))
    for d in range(1, 7):
        expected = survival_probability(0.2, d)
        got = t.counts[path.router_at(d)] / n
        assert abs(got - expected) < 3 * math.sqrt(expected * (1 - expected) / n)


@given(st.lists(st.one_of(st.none(), st.integers(1, 5)), max_size=200))
def test_tally_conservation(fields):
    t = tally(MarkedPacket(f) for f in fields)
    assert sum(t.counts.values()) + t.unmarked == t.total_packets == len(fields)


def test_tally_merge():
    a = tally([MarkedPacket(1), MarkedPacket(None)])
    b = tally([MarkedPacket(1), MarkedPacket(2)])
    m = a.merge(b)
    assert (dict(m.counts), m.total_packets, m.unmarked) == ({1: 2, 2: 1}, 4, 1)


def test_reconstruct_ordering_rule():
    t = MarkTally()
    t.counts.update({"A": 10, "B": 5, "C": 2})
    assert reconstruct_path(t) == ["A", "B", "C"]


def test_reconstruct_tie_is_ambiguous():
    t = MarkTally()
    t.counts.update({"A": 5, "B": 5})
    with pytest.raises(AmbiguousOrder):
        reconstruct_path(t)


def test_reconstruct_incomplete_evidence():
    t = MarkTally()
    t.counts.update({"A": 5, "B": 3})
    with pytest.raises(IncompleteEvidence):
        reconstruct_path(t, expected_hops=3)


def test_reconstruct_recovers_six_hop_path():
    path, _ = build_linear_path(6, 0.2)
    t = tally(mark_stream(path, 0.2, np.random.default_rng(3), 50_000))
    assert reconstruct_path(t, expected_hops=6) == list(path.victim_first())


def test_same_seed_same_stream():
    path, _ = build_linear_path(6, 0.3)
    a = list(mark_stream(path, 0.3, np.random.default_rng(77), 500))
    b = list(mark_stream(path, 0.3, np.random.default_rng(77), 500))
    assert a == b
