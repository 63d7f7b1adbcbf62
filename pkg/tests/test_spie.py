import zlib
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import bloom_false_positive_rate
from tracelab.errors import ForkDetected, OriginNotFound, TopologyError
from tracelab.spie import (
    IDENTITY_LEN,
    DigestStore,
    Gap,
    NegativeReply,
    PositiveReply,
    QueryEvent,
    TracebackAgents,
    cross_as_traceback,
    digest,
    fig10_episode,
    internal_traceback,
    make_identity,
    next_hop_identity,
    traceback_steps,
)
from tracelab.topofile import load, loads
from tracelab.topology import build_as_topology, build_fig10_topology, deployment_neighbors

DATA = Path(__file__).with_name("data")


def _zeroed_crc(identity):
    buf = bytearray(identity)
    buf[1] = buf[8] = buf[10] = buf[11] = 0
    return zlib.crc32(bytes(buf))


def test_identity_length():
    assert len(make_identity(1, 2, payload=b"abc")) == IDENTITY_LEN == 28


def test_digest_deterministic_and_matches_crc():
    ident = make_identity(0x0A000001, 0x0A000002, ident=7, payload=b"payload!")
    assert digest(ident) == digest(bytes(ident)) == _zeroed_crc(ident)


@settings(max_examples=50)
@given(st.integers(2, 255), st.integers(0, 255), st.binary(max_size=12))
def test_digest_ignores_mutable_fields(ttl, tos, payload):
    base = make_identity(1, 2, payload=payload, ttl=ttl, tos=0)
    assert digest(base) == digest(make_identity(1, 2, payload=payload, ttl=ttl, tos=tos))
    assert digest(base) == digest(next_hop_identity(base))


def test_payload_byte_changes_digest():
    a = make_identity(1, 2, payload=b"AAAAAAAA")
    b = make_identity(1, 2, payload=b"AAAAABAA")
    assert digest(a) != digest(b)
    # bytes beyond the first eight do not count
    assert digest(make_identity(1, 2, payload=b"AAAAAAAAx")) == digest(make_identity(1, 2, payload=b"AAAAAAAAy"))


@pytest.mark.parametrize("n", [0, 20, 27, 29, 40])
def test_digest_rejects_wrong_length(n):
    with pytest.raises(ValueError):
        digest(b"\0" * n)


def test_empty_store_has_nothing():
    store = DigestStore(2**12, 3)
    assert not any(store.query(d) for d in range(1000))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 2**32 - 1), min_size=1, max_size=200), st.integers(0, 2**32))
def test_no_false_negatives(ds, seed):
    store = DigestStore(2**14, 4, seed)
    for d in ds:
        store.insert(d)
    assert all(d in store for d in ds)


def test_false_positive_rate_near_formula():
    m, k, n = 2**16, 4, 4000
    rng = np.random.default_rng(0)
    ds = rng.choice(2**32, size=n + 50_000, replace=False)
    store = DigestStore(m, k, seed=3)
    for d in ds[:n]:
        store.insert(int(d))
    fp = np.mean([store.query(int(d)) for d in ds[n:]])
    expected = bloom_false_positive_rate(m, k, n)
    assert abs(fp - expected) <= 0.3 * expected
    assert store.expected_false_positive_rate() == pytest.approx(expected)


def test_store_rejects_bad_shape():
    with pytest.raises(ValueError):
        DigestStore(4, 3)
    with pytest.raises(ValueError):
        DigestStore(64, 0)


def _transit():
    topo = load(DATA / "transit3.topo")
    agents = TracebackAgents(topo)
    ident = make_identity(1, 2, payload=b"probe")
    agents.forward(ident, 1, 2)
    return agents, digest(ident)


def test_unseen_digest_returns_none():
    agents, d = _transit()
    assert internal_traceback(agents, 2, d ^ 1, toward_as=1) is None


def test_linear_transit_as_exact_path():
    agents, d = _transit()
    seg = internal_traceback(agents, 2, d, toward_as=1)
    assert seg.routers == (203, 202, 201, 200)
    assert not seg.origin
    assert seg.upstream_ases == (3,) and seg.downstream_ases == (1,)


def test_attacker_inside_as_is_origin():
    agents, d = _transit()
    seg = internal_traceback(agents, 3, d, toward_as=1)
    assert seg.origin and seg.routers == (300, 301)


def test_fork_is_reported():
    text = (DATA / "transit3.topo").read_text() + "router 204 as=2\nlink 201 204\nlink 204 203\n"
    topo = loads(text)
    agents = TracebackAgents(topo)
    ident = make_identity(1, 2, payload=b"probe")
    agents.forward(ident, 1, 2)
    d = digest(ident)
    agents.dga[204].insert(d)  # a second copy seen on the parallel branch
    with pytest.raises(ForkDetected) as info:
        internal_traceback(agents, 2, d, toward_as=1)
    assert info.value.as_id == 2


def test_undeployed_as_cannot_trace():
    agents, d = fig10_episode()
    with pytest.raises(TopologyError):
        internal_traceback(agents, 2, d)


def test_fig10_transcript_golden(golden_dir):
    agents, d = fig10_episode()
    result = cross_as_traceback(agents, 1, d)
    assert result.transcript.text() == (golden_dir / "fig10_transcript.txt").read_text()


def test_fig10_graft():
    agents, d = fig10_episode()
    result = cross_as_traceback(agents, 1, d)
    assert result.as_path == [10, 3, Gap((2,)), 1]
    assert result.describe() == "AS10 -> AS3 -> (AS2) -> AS1"
    assert result.router_path == [1050, 1000, 1003, 310, 300, 302, Gap((2,)), 102, 100, 150]
    assert result.origin_as == 10


def test_fig10_digest_independent():
    ident = make_identity(0x0A000001, 0x0A000002, ident=4242, payload=b"attack!!")
    _, d = fig10_episode()
    assert d == _zeroed_crc(ident)


def test_fig10_replies_exclude_requester():
    agents, d = fig10_episode()
    result = cross_as_traceback(agents, 1, d)
    for ev in result.transcript.events:
        if isinstance(ev, PositiveReply):
            assert 1 not in ev.one_hop and 1 not in ev.two_hop


def test_same_as_attack_has_empty_transcript():
    topo = build_as_topology([(1, 2)], [1, 2], attacker_as=1, victim_as=1, deployment_horizon=2)
    agents = TracebackAgents(topo)
    ident = make_identity(1, 2, payload=b"local")
    agents.forward(ident, topo.attacker, topo.victim)
    result = cross_as_traceback(agents, 1, digest(ident))
    assert result.transcript.events == []
    assert result.as_path == [1]


def test_uninjected_digest_origin_not_found():
    agents, d = fig10_episode()
    with pytest.raises(OriginNotFound) as info:
        cross_as_traceback(agents, 1, d ^ 0xFFFF)
    events = info.value.transcript.events
    assert events and all(isinstance(e, (QueryEvent, NegativeReply)) for e in events)


def _drain(gen):
    events = []
    while True:
        try:
            events.append(next(gen))
        except StopIteration as stop:
            return events, stop.value


def test_interleaved_tracebacks_are_independent():
    agents, d1 = fig10_episode()
    ident2 = make_identity(0x0A000009, 0x0A000002, ident=1, payload=b"second!!")
    agents.forward(ident2, agents.topology.attacker, agents.topology.victim)
    d2 = digest(ident2)

    solo1 = _drain(traceback_steps(agents, 1, d1))
    solo2 = _drain(traceback_steps(agents, 1, d2))

    g1, g2 = traceback_steps(agents, 1, d1), traceback_steps(agents, 1, d2)
    out = {1: [], 2: []}
    done = {}
    while len(done) < 2:
        for key, g in ((1, g1), (2, g2)):
            if key in done:
                continue
            try:
                out[key].append(next(g))
            except StopIteration as stop:
                done[key] = stop.value
    assert out[1] == solo1[0] and out[2] == solo2[0]
    assert done[1].transcript.text() == solo1[1].transcript.text()
    assert done[2].router_path == solo2[1].router_path


def test_queries_stay_within_horizon():
    topo = build_fig10_topology()
    agents, d = fig10_episode(topo)
    result = cross_as_traceback(agents, 1, d)
    known = {1}
    for ev in result.transcript.events:
        if isinstance(ev, QueryEvent):
            assert any(
                ev.to_as in deployment_neighbors(topo, k, lvl)
                for k in known
                for lvl in range(1, topo.deployment_horizon + 1)
            )
        elif isinstance(ev, PositiveReply):
            known.add(ev.as_id)


@pytest.mark.parametrize("seed", range(8))
def test_graft_preserves_true_as_order(seed):
    rng = np.random.default_rng(seed)
    n = 7
    edges = [(i, i + 1) for i in range(1, n)]
    undeployed = {int(x) for x in rng.choice(np.arange(2, n), size=1, replace=False)}
    deployed = [a for a in range(1, n + 1) if a not in undeployed]
    topo = build_as_topology(edges, deployed, attacker_as=n, victim_as=1, deployment_horizon=2)
    agents = TracebackAgents(topo)
    ident = make_identity(5, 6, ident=seed, payload=b"chain")
    agents.forward(ident, topo.attacker, topo.victim)
    result = cross_as_traceback(agents, 1, digest(ident))
    true_order = [a for a in range(n, 0, -1) if a not in undeployed]
    assert [a for a in result.as_path if not isinstance(a, Gap)] == true_order
