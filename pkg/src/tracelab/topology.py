"""Hosts, routers, links, attack paths and AS-level structure.

Every traceback strategy in the package is scored against the objects built
here. Topologies are immutable after construction; the networkx views are
built lazily and frozen.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping

import networkx as nx

from .errors import TopologyError

NodeId = int
AsId = int


def _check_probability(name: str, value: float) -> None:
    if not 0.0 <= value <= 1.0:
        raise TopologyError(f"{name} must lie in [0, 1], got {value!r}")


def _edge(a: int, b: int) -> tuple[int, int]:
    return (a, b) if a <= b else (b, a)


@dataclass(frozen=True)
class AttackPath:
    """Router chain from attacker to victim.

    ``routers`` is stored in forwarding order, ``R_n`` first and ``R_1``
    (the victim's first hop) last.
    """

    attacker: NodeId
    routers: tuple[NodeId, ...]
    victim: NodeId

    def __post_init__(self):
        object.__setattr__(self, "routers", tuple(self.routers))
        if not self.routers:
            raise TopologyError("an attack path needs at least one router")
        if len(set(self.routers)) != len(self.routers):
            raise TopologyError("attack path routers must be distinct")

    @property
    def hop_count(self) -> int:
        return len(self.routers)

    def router_at(self, d: int) -> NodeId:
        """Router ``R_d``, ``d`` hops from the victim (1-based)."""
        if not 1 <= d <= self.hop_count:
            raise IndexError(f"distance {d} outside 1..{self.hop_count}")
        return self.routers[self.hop_count - d]

    def distance_of(self, router: NodeId) -> int:
        return self.hop_count - self.routers.index(router)

    def victim_first(self) -> tuple[NodeId, ...]:
        return tuple(reversed(self.routers))


@dataclass(frozen=True)
class RouterNode:
    id: NodeId
    domain: AsId
    marking_probability: float = 0.0
    itrace_probability: float = 0.0
    spie_enabled: bool = False
    firewall: bool = False

    def __post_init__(self):
        _check_probability("marking_probability", self.marking_probability)
        _check_probability("itrace_probability", self.itrace_probability)


@dataclass(frozen=True)
class Host:
    id: NodeId
    router: NodeId
    role: str = "host"


@dataclass(frozen=True)
class AsInfo:
    id: AsId
    spie_deployed: bool = False
    stm: NodeId | None = None


@dataclass(frozen=True, eq=True)
class AsTopology:
    """Router-level network grouped into autonomous systems.

    Single-domain scenarios are an AsTopology with one AS. ``links`` holds
    router-router and host-router edges as sorted pairs.
    """

    ases: Mapping[AsId, AsInfo]
    as_links: frozenset[tuple[AsId, AsId]]
    routers: Mapping[NodeId, RouterNode]
    links: frozenset[tuple[NodeId, NodeId]]
    hosts: Mapping[NodeId, Host] = field(default_factory=dict)
    deployment_horizon: int = 2

    def __post_init__(self):
        object.__setattr__(self, "as_links", frozenset(_edge(*e) for e in self.as_links))
        object.__setattr__(self, "links", frozenset(_edge(*e) for e in self.links))
        self._validate()

    def _validate(self) -> None:
        if self.deployment_horizon < 1:
            raise TopologyError("deployment_horizon must be >= 1")
        for as_id, info in self.ases.items():
            if info.id != as_id:
                raise TopologyError(f"AS key {as_id} does not match AsInfo.id {info.id}")
            if info.spie_deployed and info.stm is None:
                raise TopologyError(f"SPIE-deployed AS{as_id} has no STM")
            if not info.spie_deployed and info.stm is not None:
                raise TopologyError(f"AS{as_id} is not SPIE-deployed but names an STM")
        for a, b in self.as_links:
            if a == b:
                raise TopologyError(f"self-edge on AS{a}")
            if a not in self.ases or b not in self.ases:
                raise TopologyError(f"AS link {a}-{b} names an unknown AS")

        seen: set[int] = set()
        ids = (
            list(self.routers)
            + list(self.hosts)
            + [i.stm for i in self.ases.values() if i.stm is not None]
        )
        for node in ids:
            if node in seen:
                raise TopologyError(f"node id {node} is used twice")
            seen.add(node)
        for rid, router in self.routers.items():
            if router.id != rid:
                raise TopologyError(f"router key {rid} does not match RouterNode.id")
            if router.domain not in self.ases:
                raise TopologyError(f"router {rid} sits in unknown AS{router.domain}")
        nodes = set(self.routers) | set(self.hosts)
        for a, b in self.links:
            if a == b or a not in nodes or b not in nodes:
                raise TopologyError(f"bad link {a}-{b}")
            if a in self.hosts and b in self.hosts:
                raise TopologyError(f"link {a}-{b} joins two hosts")
        for hid, host in self.hosts.items():
            if host.router not in self.routers:
                raise TopologyError(f"host {hid} attaches to unknown router {host.router}")
            if _edge(hid, host.router) not in self.links:
                raise TopologyError(f"host {hid} has no link to its router {host.router}")
        for a, b in self.links:
            if a in self.routers and b in self.routers:
                da, db = self.routers[a].domain, self.routers[b].domain
                if da != db and _edge(da, db) not in self.as_links:
                    raise TopologyError(
                        f"router link {a}-{b} crosses AS{da}-AS{db} without an AS edge"
                    )

    # -- graph views -----------------------------------------------------

    @cached_property
    def graph(self) -> nx.Graph:
        g = nx.Graph()
        for rid in sorted(self.routers):
            g.add_node(rid, kind="router", domain=self.routers[rid].domain)
        for hid in sorted(self.hosts):
            host = self.hosts[hid]
            g.add_node(hid, kind="host", domain=self.routers[host.router].domain)
        g.add_edges_from(sorted(self.links))
        return nx.freeze(g)

    @cached_property
    def as_graph(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(sorted(self.ases))
        g.add_edges_from(sorted(self.as_links))
        return nx.freeze(g)

    @cached_property
    def _as_distances(self) -> dict[AsId, dict[AsId, int]]:
        return {a: dict(nx.single_source_shortest_path_length(self.as_graph, a)) for a in self.ases}

    def as_distance(self, a: AsId, b: AsId) -> float:
        return self._as_distances[a].get(b, float("inf"))

    def internal_graph(self, as_id: AsId) -> nx.Graph:
        members = [r for r in self.routers if self.routers[r].domain == as_id]
        return self.graph.subgraph(members)

    def domain_of(self, node: NodeId) -> AsId:
        if node in self.routers:
            return self.routers[node].domain
        return self.routers[self.hosts[node].router].domain

    def external_peers(self, router: NodeId) -> list[tuple[NodeId, AsId]]:
        """Routers in other ASes linked to ``router``, as (peer, peer AS)."""
        own = self.routers[router].domain
        out = []
        for peer in sorted(self.graph.neighbors(router)):
            if peer in self.routers and self.routers[peer].domain != own:
                out.append((peer, self.routers[peer].domain))
        return out

    def ingress_links(self, router: NodeId) -> list[tuple[NodeId, NodeId]]:
        return [(peer, router) for peer in sorted(self.graph.neighbors(router))]

    def route(self, src: NodeId, dst: NodeId) -> list[NodeId]:
        """Shortest-path forwarding route, inclusive of both endpoints."""
        try:
            return nx.shortest_path(self.graph, src, dst)
        except (nx.NetworkXNoPath, nx.NodeNotFound) as exc:
            raise TopologyError(f"no route from {src} to {dst}") from exc

    def host_with_role(self, role: str) -> NodeId:
        matches = sorted(h for h, host in self.hosts.items() if host.role == role)
        if len(matches) != 1:
            raise TopologyError(f"expected exactly one {role} host, found {len(matches)}")
        return matches[0]

    @property
    def attacker(self) -> NodeId:
        return self.host_with_role("attacker")

    @property
    def victim(self) -> NodeId:
        return self.host_with_role("victim")

    def attack_path(self, attacker: NodeId | None = None, victim: NodeId | None = None) -> AttackPath:
        attacker = self.attacker if attacker is None else attacker
        victim = self.victim if victim is None else victim
        hops = self.route(attacker, victim)
        return AttackPath(attacker, tuple(n for n in hops[1:-1] if n in self.routers), victim)

    def as_route(self, src: NodeId, dst: NodeId) -> list[AsId]:
        out: list[AsId] = []
        for node in self.route(src, dst):
            dom = self.domain_of(node)
            if not out or out[-1] != dom:
                out.append(dom)
        return out


def build_linear_path(
    hop_count: int,
    marking_probability: float,
    itrace_probability: float = 0.0,
) -> tuple[AttackPath, AsTopology]:
    """Attacker, ``hop_count`` routers and victim wired in a line.

    Router ``R_d`` gets node id ``d``; the victim is 0 and the attacker
    ``hop_count + 1``.
    """
    if isinstance(hop_count, bool) or not isinstance(hop_count, int) or hop_count < 1:
        raise TopologyError(f"hop_count must be a positive integer, got {hop_count!r}")
    _check_probability("marking_probability", marking_probability)
    victim, attacker = 0, hop_count + 1
    routers = {
        d: RouterNode(d, 1, marking_probability, itrace_probability) for d in range(1, hop_count + 1)
    }
    links = {(d, d + 1) for d in range(1, hop_count)}
    links |= {(victim, 1), (hop_count, attacker)}
    topo = AsTopology(
        ases={1: AsInfo(1)},
        as_links=frozenset(),
        routers=routers,
        links=frozenset(links),
        hosts={victim: Host(victim, 1, "victim"), attacker: Host(attacker, hop_count, "attacker")},
    )
    path = AttackPath(attacker, tuple(range(hop_count, 0, -1)), victim)
    return path, topo


def build_as_topology(
    as_edges: Iterable[tuple[AsId, AsId]],
    deployed: Iterable[AsId],
    attacker_as: AsId,
    victim_as: AsId,
    deployment_horizon: int = 2,
) -> AsTopology:
    """Expand an AS graph into a router-level topology.

    Numbering, for AS ``a``: core router ``100a``, border router toward AS
    ``x`` at ``100a + x``, host access router ``100a + 50``, STM ``100a + 99``.
    Attacker host is node 1, victim host node 2. Neighbour AS ids must stay
    below 50.
    """
    as_edges = sorted({_edge(a, b) for a, b in as_edges})
    deployed = set(deployed)
    as_ids = sorted({a for e in as_edges for a in e} | {attacker_as, victim_as})
    neighbours: dict[int, set[int]] = {a: set() for a in as_ids}
    for a, b in as_edges:
        neighbours[a].add(b)
        neighbours[b].add(a)
    if any(x >= 50 for a in as_ids for x in neighbours[a]):
        raise TopologyError("build_as_topology numbering needs AS ids below 50")

    ases = {
        a: AsInfo(a, a in deployed, 100 * a + 99 if a in deployed else None) for a in as_ids
    }
    routers: dict[int, RouterNode] = {}
    links: set[tuple[int, int]] = set()

    def add_router(rid: int, a: int) -> None:
        routers[rid] = RouterNode(rid, a, spie_enabled=a in deployed)

    for a in as_ids:
        core = 100 * a
        add_router(core, a)
        for x in sorted(neighbours[a]):
            add_router(core + x, a)
            links.add((core, core + x))
    for a, b in as_edges:
        links.add(_edge(100 * a + b, 100 * b + a))

    hosts = {}
    for host_id, as_id, role in ((1, attacker_as, "attacker"), (2, victim_as, "victim")):
        access = 100 * as_id + 50
        add_router(access, as_id)
        links.add(_edge(access, 100 * as_id))
        links.add(_edge(host_id, access))
        hosts[host_id] = Host(host_id, access, role)

    return AsTopology(
        ases=ases,
        as_links=frozenset(as_edges),
        routers=routers,
        links=frozenset(links),
        hosts=hosts,
        deployment_horizon=deployment_horizon,
    )


FIG10_AS_EDGES = (
    (1, 2), (1, 7), (2, 7), (2, 3), (2, 4), (3, 4),
    (3, 10), (4, 5), (5, 6), (7, 8), (8, 9),
)
FIG10_DEPLOYED = (1, 3, 4, 5, 6, 7, 9, 10)


def build_fig10_topology() -> AsTopology:
    """Ten-AS fixture for the cross-AS SPIE walkthrough.

    Attacker in AS10, victim in AS1, AS2 not deployed. The route runs
    AS10 -> AS3 -> AS2 -> AS1. AS8 is left undeployed so that AS1's two-hop
    set stays {AS3, AS4}; the placement of AS5, AS6, AS8, AS9 is otherwise
    arbitrary.
    """
    return build_as_topology(FIG10_AS_EDGES, FIG10_DEPLOYED, attacker_as=10, victim_as=1)


def deployment_neighbors(
    topology: AsTopology, as_id: AsId, level: int, exclude: Iterable[AsId] = ()
) -> set[AsId]:
    """SPIE-deployed ASes exactly ``level`` AS hops from ``as_id``.

    Non-deployed ASes still count as a hop, so a deployed AS behind one
    undeployed AS is a two-hop neighbour.
    """
    info = topology.ases.get(as_id)
    if info is None:
        raise TopologyError(f"unknown AS{as_id}")
    if not info.spie_deployed:
        raise TopologyError(f"AS{as_id} is not SPIE-deployed")
    if not 1 <= level <= topology.deployment_horizon:
        raise TopologyError(
            f"level {level} outside 1..{topology.deployment_horizon} (deployment horizon)"
        )
    skip = set(exclude)
    return {
        other
        for other, dist in topology._as_distances[as_id].items()
        if dist == level and topology.ases[other].spie_deployed and other not in skip
    }
