"""Hash-based single-packet traceback.

Digest
    CRC-32 (``zlib.crc32``, IEEE 802.3 polynomial) of the 28-byte identity
    image (20-byte IPv4 header + first 8 payload bytes) after zeroing the
    fields routers rewrite per hop: ToS (byte 1), TTL (byte 8) and the header
    checksum (bytes 10-11).

Bloom positions
    ``h = mix64(digest XOR (seed * 0x9E3779B97F4A7C15 mod 2**64))`` with the
    SplitMix64 finalizer, ``h1 = h & 0xFFFFFFFF``, ``h2 = (h >> 32) | 1``;
    bit ``i`` of ``k`` is ``(h1 + i * h2) mod m``. Bit ``j`` lives in byte
    ``j >> 3``, mask ``1 << (j & 7)``.
"""

from __future__ import annotations

import math
import struct
import threading
import zlib
from dataclasses import dataclass, field
from typing import Iterator

from .errors import ForkDetected, OriginNotFound, TopologyError
from .kernels import mix64
from .topology import AsId, AsTopology, NodeId, deployment_neighbors

IDENTITY_LEN = 28
MUTABLE_OFFSETS = (1, 8, 10, 11)
_GOLDEN = 0x9E3779B97F4A7C15
_MASK64 = (1 << 64) - 1


def ipv4_checksum(header: bytes) -> int:
    if len(header) % 2:
        header += b"\0"
    total = sum(struct.unpack(f"!{len(header) // 2}H", header))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def make_identity(
    src: int,
    dst: int,
    ident: int = 0,
    payload: bytes = b"",
    ttl: int = 64,
    tos: int = 0,
    protocol: int = 17,
) -> bytes:
    """IPv4 header image plus the first 8 payload bytes (zero padded)."""
    body = payload[:8].ljust(8, b"\0")
    header = struct.pack(
        "!BBHHHBBH4s4s",
        0x45, tos, 20 + max(len(payload), 8), ident & 0xFFFF, 0,
        ttl, protocol, 0,
        (src & 0xFFFFFFFF).to_bytes(4, "big"), (dst & 0xFFFFFFFF).to_bytes(4, "big"),
    )
    csum = ipv4_checksum(header)
    return header[:10] + csum.to_bytes(2, "big") + header[12:] + body


def next_hop_identity(identity: bytes) -> bytes:
    """The same packet after one more router: TTL - 1, checksum refreshed."""
    buf = bytearray(identity)
    buf[8] = (buf[8] - 1) & 0xFF
    buf[10:12] = b"\0\0"
    buf[10:12] = ipv4_checksum(bytes(buf[:20])).to_bytes(2, "big")
    return bytes(buf)


def digest(identity_bytes: bytes) -> int:
    if len(identity_bytes) != IDENTITY_LEN:
        raise ValueError(f"identity must be {IDENTITY_LEN} bytes, got {len(identity_bytes)}")
    buf = bytearray(identity_bytes)
    for off in MUTABLE_OFFSETS:
        buf[off] = 0
    return zlib.crc32(bytes(buf)) & 0xFFFFFFFF


class DigestStore:
    """Bloom filter over 32-bit packet digests (one time bucket)."""

    def __init__(self, m: int = 2**20, k: int = 3, seed: int = 0):
        if m < 8 or k < 1:
            raise ValueError("need m >= 8 and k >= 1")
        self.m = m
        self.k = k
        self.seed = seed
        self.bits = bytearray((m + 7) // 8)
        self.inserted_count = 0
        self._salt = (seed * _GOLDEN) & _MASK64
        self._lock = threading.Lock()

    def positions(self, d: int) -> list[int]:
        h = mix64((d & 0xFFFFFFFF) ^ self._salt)
        h1, h2 = h & 0xFFFFFFFF, (h >> 32) | 1
        return [(h1 + i * h2) % self.m for i in range(self.k)]

    def insert(self, d: int) -> None:
        pos = self.positions(d)
        with self._lock:
            for j in pos:
                self.bits[j >> 3] |= 1 << (j & 7)
            self.inserted_count += 1

    def query(self, d: int) -> bool:
        bits = self.bits
        return all(bits[j >> 3] >> (j & 7) & 1 for j in self.positions(d))

    __contains__ = query

    def expected_false_positive_rate(self, n: int | None = None) -> float:
        n = self.inserted_count if n is None else n
        return (1.0 - math.exp(-self.k * n / self.m)) ** self.k


def store_insert(store: DigestStore, d: int) -> None:
    store.insert(d)


def store_query(store: DigestStore, d: int) -> bool:
    return store.query(d)


@dataclass(frozen=True)
class IntraAsPath:
    """Routers a packet crossed inside one AS, upstream first."""

    as_id: AsId
    routers: tuple[NodeId, ...]
    origin: bool
    upstream_ases: tuple[AsId, ...] = ()
    downstream_ases: tuple[AsId, ...] = ()


class TracebackAgents:
    """DGAs, SCAR regions and STMs for every SPIE-deployed AS.

    One DGA per SPIE-enabled router and one SCAR region per AS.
    """

    def __init__(self, topology: AsTopology, m: int = 2**20, k: int = 3, seed: int = 0):
        self.topology = topology
        self.dga: dict[NodeId, DigestStore] = {
            rid: DigestStore(m, k, seed)
            for rid, r in sorted(topology.routers.items())
            if r.spie_enabled and topology.ases[r.domain].spie_deployed
        }
        self.scar: dict[AsId, tuple[NodeId, ...]] = {
            as_id: tuple(sorted(r for r in self.dga if topology.routers[r].domain == as_id))
            for as_id, info in sorted(topology.ases.items())
            if info.spie_deployed
        }
        self.stm: dict[AsId, NodeId] = {
            as_id: info.stm for as_id, info in topology.ases.items() if info.spie_deployed
        }

    def forward(self, identity: bytes, src: NodeId, dst: NodeId) -> list[NodeId]:
        """Forward one packet along the routed path, logging it at each DGA."""
        route = self.topology.route(src, dst)
        for node in route[1:-1]:
            store = self.dga.get(node)
            if store is not None:
                store.insert(digest(identity))
            identity = next_hop_identity(identity)
        return route


def _walk(agents, as_id, start, matched, visited):
    graph = agents.topology.internal_graph(as_id)
    path = [start]
    visited = set(visited) | {start}
    while True:
        nxt = sorted(n for n in graph.neighbors(path[-1]) if n in matched and n not in visited)
        if not nxt:
            return path, None
        if len(nxt) > 1:
            return path, nxt
        path.append(nxt[0])
        visited.add(nxt[0])


def internal_traceback(
    agents: TracebackAgents,
    as_id: AsId,
    d: int,
    toward_as: AsId | None = None,
    start_router: NodeId | None = None,
) -> IntraAsPath | None:
    """SCAR walk over the DGAs of ``as_id``; None when no DGA saw ``d``.

    The walk starts at the matching router nearest the victim:
    ``start_router`` if given, else the matching border router whose peer AS
    is closest to ``toward_as``. It then steps to the single matching
    upstream neighbour until none is left. A walk ending at a router with no
    inter-AS links is the packet's origin.
    """
    topo = agents.topology
    if as_id not in agents.scar:
        raise TopologyError(f"AS{as_id} is not SPIE-deployed")
    matched = {r for r in agents.scar[as_id] if agents.dga[r].query(d)}
    if not matched:
        return None
    toward_as = as_id if toward_as is None else toward_as

    if start_router is not None and start_router in matched:
        start = start_router
    else:
        def rank(r):
            peers = topo.external_peers(r)
            dist = min((topo.as_distance(a, toward_as) for _, a in peers), default=math.inf)
            return (dist, r)

        start = min(matched, key=rank)

    path, fork = _walk(agents, as_id, start, matched, ())
    if fork is not None:
        branches = [_walk(agents, as_id, b, matched, path)[0] for b in fork]
        raise ForkDetected(as_id, path, branches)

    if as_id == toward_as:
        downstream: tuple[AsId, ...] = ()
    else:
        down_peers = {a for _, a in topo.external_peers(start)}
        best = min((topo.as_distance(a, toward_as) for a in down_peers), default=math.inf)
        downstream = tuple(sorted(a for a in down_peers if topo.as_distance(a, toward_as) == best))
    end_peers = {a for _, a in topo.external_peers(path[-1])}
    upstream = tuple(sorted(end_peers - set(downstream)))
    origin = not end_peers
    return IntraAsPath(as_id, tuple(reversed(path)), origin, upstream, downstream)


@dataclass(frozen=True)
class QueryEvent:
    from_as: AsId
    to_as: AsId
    digest: int

    def line(self) -> str:
        return f"QUERY {self.from_as} {self.to_as} {self.digest:08x}"


@dataclass(frozen=True)
class PositiveReply:
    as_id: AsId
    intra_path: IntraAsPath
    one_hop: tuple[AsId, ...]
    two_hop: tuple[AsId, ...]

    def line(self) -> str:
        def fmt(xs):
            return ",".join(str(x) for x in xs) or "-"

        return (
            f"POS {self.as_id} path={fmt(self.intra_path.routers)} one_hop={fmt(self.one_hop)} "
            f"two_hop={fmt(self.two_hop)} origin={int(self.intra_path.origin)}"
        )


@dataclass(frozen=True)
class NegativeReply:
    as_id: AsId

    def line(self) -> str:
        return f"NEG {self.as_id}"


@dataclass
class StmQueryTranscript:
    events: list = field(default_factory=list)

    def lines(self) -> list[str]:
        return [e.line() for e in self.events]

    def text(self) -> str:
        return "".join(line + "\n" for line in self.lines())


@dataclass(frozen=True)
class Gap:
    """Stretch of non-deployed ASes; ``ases`` are the ones seen at its edges."""

    ases: tuple[AsId, ...]

    def __str__(self) -> str:
        return "(" + ",".join(f"AS{a}" for a in self.ases) + ")" if self.ases else "(?)"


@dataclass
class CrossAsResult:
    as_path: list
    router_path: list
    transcript: StmQueryTranscript
    segments: dict[AsId, IntraAsPath]
    origin_as: AsId

    def describe(self) -> str:
        return " -> ".join(str(x) if isinstance(x, Gap) else f"AS{x}" for x in self.as_path)


def stm_answer(agents: TracebackAgents, as_id: AsId, d: int, victim_as: AsId):
    """Reply of the STM in ``as_id`` to a query from ``victim_as``.

    Depends only on stored digests and static deployment knowledge; the STM
    keeps nothing about the traceback in progress.
    """
    seg = internal_traceback(agents, as_id, d, toward_as=victim_as)
    if seg is None:
        return NegativeReply(as_id)
    topo = agents.topology
    levels = [
        tuple(sorted(deployment_neighbors(topo, as_id, lvl, exclude={victim_as})))
        if lvl <= topo.deployment_horizon
        else ()
        for lvl in (1, 2)
    ]
    return PositiveReply(as_id, seg, levels[0], levels[1])


def _victim_access(topo: AsTopology, victim_as: AsId) -> NodeId | None:
    for host in sorted(topo.hosts.values(), key=lambda h: h.id):
        if host.role == "victim" and topo.routers[host.router].domain == victim_as:
            return host.router
    return None


def traceback_steps(agents: TracebackAgents, victim_as: AsId, d: int) -> Iterator:
    """Drive one cross-AS traceback, yielding transcript events in order.

    Returns (via ``StopIteration.value``) the grafted result; raises
    OriginNotFound when every branch is pruned. All state lives in this
    generator, so independent tracebacks can be interleaved freely.
    """
    topo = agents.topology
    if not topo.ases[victim_as].spie_deployed:
        raise TopologyError(f"victim AS{victim_as} is not SPIE-deployed")
    transcript = StmQueryTranscript()
    segments: dict[AsId, IntraAsPath] = {}

    own = internal_traceback(agents, victim_as, d, victim_as, _victim_access(topo, victim_as))
    if own is not None:
        segments[victim_as] = own
        if own.origin:
            return CrossAsResult([victim_as], list(own.routers), transcript, segments, victim_as)

    knowledge = {
        victim_as: [
            tuple(sorted(deployment_neighbors(topo, victim_as, lvl)))
            for lvl in range(1, topo.deployment_horizon + 1)
        ]
    }
    queried = {victim_as}
    frontier = [victim_as]
    origin_as = None
    while frontier and origin_as is None:
        src = frontier.pop(0)
        for level_set in knowledge[src]:
            targets = [a for a in level_set if a not in queried]
            if not targets:
                continue
            for t in targets:
                queried.add(t)
                event = QueryEvent(victim_as, t, d)
                transcript.events.append(event)
                yield event
            positives = []
            for t in targets:
                reply = stm_answer(agents, t, d, victim_as)
                transcript.events.append(reply)
                yield reply
                if isinstance(reply, PositiveReply):
                    segments[t] = reply.intra_path
                    knowledge[t] = [reply.one_hop, reply.two_hop]
                    positives.append(t)
                    if reply.intra_path.origin and origin_as is None:
                        origin_as = t
            if positives:
                frontier.extend(positives)
                break

    if origin_as is None:
        raise OriginNotFound(transcript, segments.values())
    as_path, router_path = _graft(segments, origin_as, victim_as)
    return CrossAsResult(as_path, router_path, transcript, segments, origin_as)


def _graft(segments: dict[AsId, IntraAsPath], origin_as: AsId, victim_as: AsId):
    as_path: list = [origin_as]
    router_path: list = list(segments[origin_as].routers)
    used = {origin_as}
    cur = origin_as
    while cur != victim_as:
        seg = segments[cur]
        nxt = next((a for a in seg.downstream_ases if a in segments and a not in used), None)
        if nxt is None:
            gap = set(seg.downstream_ases)
            nxt = next(
                (
                    a
                    for a in sorted(segments)
                    if a not in used and gap & set(segments[a].upstream_ases)
                ),
                None,
            )
            if nxt is None:
                nxt = victim_as if victim_as in segments and victim_as not in used else None
            if nxt is None:
                break
            edge = Gap(tuple(sorted((gap | set(segments[nxt].upstream_ases)) - set(segments))))
            as_path.append(edge)
            router_path.append(edge)
        as_path.append(nxt)
        router_path.extend(segments[nxt].routers)
        used.add(nxt)
        cur = nxt
    return as_path, router_path


def cross_as_traceback(agents: TracebackAgents, victim_as: AsId, d: int) -> CrossAsResult:
    steps = traceback_steps(agents, victim_as, d)
    while True:
        try:
            next(steps)
        except StopIteration as stop:
            return stop.value


def fig10_episode(topology: AsTopology | None = None, payload: bytes = b"attack!!", **store_kw):
    """Deploy agents on the Fig-10 fixture and forward one attack packet.

    Returns (agents, digest of the packet).
    """
    from .topology import build_fig10_topology

    topo = topology or build_fig10_topology()
    agents = TracebackAgents(topo, **store_kw)
    attacker, victim = topo.attacker, topo.victim
    identity = make_identity(0x0A000001, 0x0A000002, ident=4242, payload=payload)
    agents.forward(identity, attacker, victim)
    return agents, digest(identity)
