"""Link testing and ICMP traceback on the simulated topology.

Input debugging and controlled flooding need a live attack; iTrace works
from messages collected at the destination. All three produce a
``TraceReport`` so they can be compared side by side.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import AttackEnded, InconclusiveLink, NoMatchingIngress
from .spie import IDENTITY_LEN, make_identity
from .topology import AsInfo, AsTopology, Host, NodeId, RouterNode

DEFAULT_WINDOW = 1000
DEFAULT_SENSITIVITY = 0.20
MAX_DROP = 0.95


@dataclass(frozen=True)
class AttackSignature:
    """Match ``identity & mask == value`` byte by byte."""

    mask: bytes
    value: bytes

    def __post_init__(self):
        if len(self.mask) != IDENTITY_LEN or len(self.value) != IDENTITY_LEN:
            raise ValueError(f"mask and value must be {IDENTITY_LEN} bytes")

    @classmethod
    def payload_prefix(cls, prefix: bytes) -> "AttackSignature":
        """Signature on the leading payload bytes (offset 20 onward)."""
        prefix = prefix[:8]
        mask = bytes(20) + b"\xff" * len(prefix) + bytes(8 - len(prefix))
        value = bytes(20) + prefix + bytes(8 - len(prefix))
        return cls(mask, value)

    def matches(self, identity: bytes) -> bool:
        return all((b & m) == v for b, m, v in zip(identity, self.mask, self.value))


@dataclass(frozen=True)
class FlowState:
    """Attack liveness. ``ends_at_tick`` stops an otherwise live flow."""

    live: bool = True
    rate: float = 10.0
    ends_at_tick: float = math.inf

    def live_at(self, tick: float) -> bool:
        return self.live and tick < self.ends_at_tick


@dataclass(frozen=True)
class Flow:
    src: NodeId
    dst: NodeId
    rate: float
    identity: bytes


ATTACK_PAYLOAD = b"ATTACK!!"


def attack_flows(topology: AsTopology, victim: NodeId, flow: FlowState) -> list[Flow]:
    return [
        Flow(h, victim, flow.rate, make_identity(h, victim, payload=ATTACK_PAYLOAD))
        for h in sorted(topology.hosts)
        if topology.hosts[h].role == "attacker"
    ]


@dataclass
class TraceReport:
    strategy: str
    paths: list[list[NodeId]]
    flags: dict = field(default_factory=dict)
    packets_consumed: int = 0
    ticks_elapsed: float = 0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, default=str)


def _on_link(route: Sequence[NodeId], upstream: NodeId, router: NodeId) -> bool:
    for a, b in zip(route, route[1:]):
        if a == upstream and b == router:
            return True
    return False


def input_debugging(
    victim: NodeId,
    signature: AttackSignature,
    flow: FlowState,
    topology: AsTopology,
    background: Iterable[Flow] = (),
    window: int = DEFAULT_WINDOW,
) -> TraceReport:
    """Hop-by-hop signature filtering from the victim's first-hop router.

    Each step costs one observation window. The trace stops at the origin
    host, at a firewall, or where the upstream router belongs to another
    domain (``status='boundary'``).
    """
    flows = attack_flows(topology, victim, flow) + list(background)
    routes = {id(f): topology.route(f.src, f.dst) for f in flows}
    matching = [f for f in flows if signature.matches(f.identity)]

    clock = 0
    cur = topology.hosts[victim].router
    prev = victim
    domain = topology.routers[cur].domain
    path = [cur]
    consumed = 0
    flags: dict = {"status": None, "multi_source": False}
    while True:
        if not flow.live_at(clock) or not flow.live_at(clock + window - 1):
            raise AttackEnded(f"attack stopped during the window starting at tick {clock}")
        per_link: dict[NodeId, float] = {}
        for f in matching:
            route = routes[id(f)]
            for u in topology.graph.neighbors(cur):
                if u != prev and _on_link(route, u, cur):
                    per_link[u] = per_link.get(u, 0.0) + f.rate * window
        clock += window
        consumed += int(sum(per_link.values()))
        if not per_link:
            raise NoMatchingIngress(f"no ingress link of router {cur} carries matching traffic")
        if len(per_link) > 1:
            flags["multi_source"] = True
            flags.setdefault("branch_points", []).append(
                {"router": cur, "links": sorted(per_link)}
            )
        best = min(per_link, key=lambda u: (-per_link[u], u))
        if best in topology.hosts:
            flags.update(status="origin", origin=best)
            break
        node = topology.routers[best]
        if node.firewall:
            flags.update(status="firewall", firewall=best)
            break
        if node.domain != domain:
            flags.update(status="boundary", boundary=best, next_domain=node.domain)
            break
        path.append(best)
        prev, cur = cur, best
    return TraceReport("input-debugging", [path], flags, consumed, clock)


def _floodable(topology, flood_hosts, upstream, router) -> bool:
    if flood_hosts is None or upstream in flood_hosts:
        return True
    for h in flood_hosts:
        route = topology.route(h, router)
        if len(route) >= 2 and route[-2] == upstream:
            return True
    return False


def flood_drop_probability(flood_rate: float, background_rate: float, attack_rate: float) -> float:
    """Attack-packet drop chance on a flooded link under a shared output buffer."""
    total = flood_rate + background_rate + attack_rate
    if total <= 0:
        return 0.0
    return min(MAX_DROP, flood_rate / total)


def controlled_flooding(
    victim: NodeId,
    topology: AsTopology,
    flood_hosts: Iterable[NodeId] | None,
    flow: FlowState,
    rng: np.random.Generator,
    flood_share: float = 0.5,
    sensitivity: float = DEFAULT_SENSITIVITY,
    background_rate: float = 0.0,
    baseline_drop: float = 0.0,
    window: int = DEFAULT_WINDOW,
) -> TraceReport:
    """Flood each incoming link of the current router and watch the attack rate.

    ``flood_share`` is the flood's share of a link's buffer occupancy; the
    flood rate is chosen to hit it given the link's background and attack
    load. ``flood_hosts=None`` means every link can be flooded.
    """
    if not 0.0 <= flood_share < 1.0:
        raise ValueError("flood_share must lie in [0, 1)")
    hosts = None if flood_hosts is None else set(flood_hosts)
    flows = attack_flows(topology, victim, flow)
    routes = [topology.route(f.src, f.dst) for f in flows]

    def observe(drops: Mapping[int, float]) -> int:
        got = 0
        for i, f in enumerate(flows):
            keep = (1.0 - baseline_drop) * (1.0 - drops.get(i, 0.0))
            got += int(rng.binomial(int(f.rate * window), keep))
        return got

    clock = 0
    consumed = 0
    cur = topology.hosts[victim].router
    prev = victim
    path = [cur]
    tests = []
    flags: dict = {"status": None, "multi_source": False, "tests": tests}

    def tick():
        nonlocal clock
        if not flow.live_at(clock) or not flow.live_at(clock + window - 1):
            raise AttackEnded(f"attack stopped during the window starting at tick {clock}")
        clock += window

    while True:
        tick()
        baseline = observe({})
        consumed += baseline
        depressions: dict[NodeId, float] = {}
        for u in sorted(topology.graph.neighbors(cur)):
            if u == prev:
                continue
            if not _floodable(topology, hosts, u, cur):
                tests.append({"router": cur, "link": u, "floodable": False})
                continue
            on_link = [i for i, r in enumerate(routes) if _on_link(r, u, cur)]
            attack_rate = sum(flows[i].rate for i in on_link)
            load = background_rate + attack_rate
            flood_rate = flood_share / (1.0 - flood_share) * load if load > 0 else 0.0
            drop = flood_drop_probability(flood_rate, background_rate, attack_rate)
            tick()
            seen = observe({i: drop for i in on_link})
            consumed += seen
            dep = 1.0 - seen / baseline if baseline else 0.0
            depressions[u] = dep
            tests.append({"router": cur, "link": u, "depression": round(dep, 6)})
        hits = [u for u, dep in depressions.items() if dep > sensitivity]
        if not hits:
            raise InconclusiveLink(
                f"no incoming link of router {cur} depressed the attack rate by more than "
                f"{sensitivity:.0%}"
            )
        if len(hits) > 1:
            flags["multi_source"] = True
            flags.setdefault("ambiguous_links", []).append({"router": cur, "links": sorted(hits)})
        best = min(hits, key=lambda u: (-depressions[u], u))
        if best in topology.hosts:
            flags.update(status="origin", origin=best)
            break
        path.append(best)
        prev, cur = cur, best
    return TraceReport("controlled-flooding", [path], flags, consumed, clock)


# -- iTrace ---------------------------------------------------------------


@dataclass(frozen=True)
class ItraceMessage:
    emitting_router: NodeId
    upstream: NodeId
    downstream: NodeId
    sampled_packet_ref: int
    destination: NodeId
    authentic: bool = True


def itrace_forward(
    router: NodeId,
    upstream: NodeId,
    downstream: NodeId,
    packet_seq: int,
    destination: NodeId,
    q: float,
    rng: np.random.Generator,
) -> ItraceMessage | None:
    """Sample the forwarded packet with probability ``q``."""
    if not 0.0 <= q <= 1.0:
        raise ValueError("q must lie in [0, 1]")
    if rng.random() < q:
        return ItraceMessage(router, upstream, downstream, packet_seq, destination)
    return None


def itrace_episode(
    topology: AsTopology,
    src: NodeId,
    dst: NodeId,
    packets: int,
    rng: np.random.Generator,
    q: float | None = None,
    deployment: Mapping[NodeId, bool] | None = None,
) -> list[ItraceMessage]:
    """Messages the destination collects while ``packets`` flow src -> dst.

    Per-packet Bernoulli sampling, drawn a router at a time. ``q`` overrides
    each router's own ``itrace_probability``.
    """
    route = topology.route(src, dst)
    out = []
    for i in range(1, len(route) - 1):
        r = route[i]
        if deployment is not None and not deployment.get(r, False):
            continue
        q_r = topology.routers[r].itrace_probability if q is None else q
        if q_r <= 0:
            continue
        for seq in np.flatnonzero(rng.random(packets) < q_r):
            out.append(ItraceMessage(r, route[i - 1], route[i + 1], int(seq), dst))
    return out


@dataclass(frozen=True)
class CandidatePath:
    routers: tuple[NodeId, ...]
    bridged: tuple[NodeId, ...] = ()
    complete: bool = True

    @property
    def gap_length(self) -> int:
        return len(self.bridged)


@dataclass
class ItraceReconstruction:
    candidates: list[CandidatePath]
    unauthenticated: int = 0


def itrace_reconstruct(
    messages: Iterable[ItraceMessage],
    topology: AsTopology,
    victim: NodeId,
    deployment: Mapping[NodeId, bool] | None = None,
    max_gap: int = 2,
) -> ItraceReconstruction:
    """Chain messages into attack paths, victim side first.

    A link is accepted only when both routers vouch for it (each names the
    other). Where the chain stops short of a host, every bridge of at most
    ``max_gap`` non-participating routers leading to another segment is
    tried. Candidates are ranked complete-first, then by bridged length.
    """
    messages = list(messages)
    auth = [m for m in messages if m.authentic]
    rejected = len(messages) - len(auth)
    ups: dict[NodeId, set] = {}
    downs: dict[NodeId, set] = {}
    for m in auth:
        ups.setdefault(m.emitting_router, set()).add(m.upstream)
        downs.setdefault(m.emitting_router, set()).add(m.downstream)
    emitters = set(ups)
    if not emitters:
        return ItraceReconstruction([], rejected)

    def eligible(x):
        if x not in topology.routers or x in emitters:
            return False
        return deployment is None or not deployment.get(x, False)

    def vouched_up(top):
        if top == victim:
            return sorted(r for r in emitters if victim in downs[r])
        return sorted(u for u in ups[top] if u in emitters and top in downs[u])

    def segment_bottom(b):
        return not any(x in emitters and b in ups[x] for x in downs[b])

    graph = topology.graph
    found: set[CandidatePath] = set()

    def bridges(top, used):
        stack = [[x] for x in sorted(graph.neighbors(top)) if eligible(x) and x not in used]
        while stack:
            chain = stack.pop()
            for b in sorted(graph.neighbors(chain[-1])):
                if b in emitters and b not in used and segment_bottom(b):
                    yield chain, b
            if len(chain) < max_gap:
                for x in sorted(graph.neighbors(chain[-1])):
                    if eligible(x) and x not in used and x not in chain:
                        stack.append(chain + [x])

    def extend(path, bridged):
        top = path[-1]
        up = vouched_up(top)
        origin = top != victim and any(u in topology.hosts for u in ups[top])
        if origin:
            found.add(CandidatePath(tuple(path[1:]), tuple(bridged), True))
        for u in up:
            if u not in path:
                extend(path + [u], bridged)
        if not up and not origin:
            extended = False
            for chain, b in bridges(top, set(path)):
                extended = True
                extend(path + chain + [b], bridged + chain)
            if not extended and len(path) > 1:
                found.add(CandidatePath(tuple(path[1:]), tuple(bridged), False))

    extend([victim], [])
    ranked = sorted(found, key=lambda c: (not c.complete, c.gap_length, len(c.routers), c.routers))
    return ItraceReconstruction(ranked, rejected)


# -- scenario generation --------------------------------------------------


def random_single_domain_scenario(
    rng: np.random.Generator,
    n_routers: int = 20,
    benign_hosts: int = 3,
    boundary: bool = False,
    itrace_probability: float = 0.0,
) -> tuple[AsTopology, list[Flow]]:
    """Random router tree with a victim, one attacker and benign senders.

    With ``boundary=True`` the subtree above a router on the attack path is
    moved into a second domain, so link testing must stop at the edge.
    """
    parent = {1: None}
    for r in range(2, n_routers + 1):
        parent[r] = int(rng.integers(1, r))
    depth = {1: 0}
    for r in range(2, n_routers + 1):
        depth[r] = depth[parent[r]] + 1
    deep = [r for r in parent if depth[r] >= 2] or [n_routers]
    attack_router = int(rng.choice(deep))

    domain = {r: 1 for r in parent}
    if boundary:
        chain = []
        r = attack_router
        while r is not None:
            chain.append(r)
            r = parent[r]
        cut = chain[int(rng.integers(0, len(chain) - 1))]

        def under(x):
            while x is not None:
                if x == cut:
                    return True
                x = parent[x]
            return False

        domain = {r: 2 if under(r) else 1 for r in parent}

    routers = {r: RouterNode(r, domain[r], itrace_probability=itrace_probability) for r in parent}
    links = {(parent[r], r) for r in parent if parent[r] is not None}
    victim, attacker = 1000, 1001
    hosts = {victim: Host(victim, 1, "victim"), attacker: Host(attacker, attack_router, "attacker")}
    background = []
    for i in range(benign_hosts):
        hid = 2000 + i
        at = int(rng.integers(1, n_routers + 1))
        hosts[hid] = Host(hid, at, "host")
        background.append(Flow(hid, victim, 5.0, make_identity(hid, victim, payload=b"benign..")))
    links |= {(h.router, hid) for hid, h in hosts.items()}
    ases = {1: AsInfo(1)}
    as_links: frozenset = frozenset()
    if boundary:
        ases[2] = AsInfo(2)
        as_links = frozenset({(1, 2)})
    topo = AsTopology(ases, as_links, routers, frozenset(links), hosts)
    return topo, background
