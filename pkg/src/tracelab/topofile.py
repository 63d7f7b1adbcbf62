"""Line-oriented topology / scenario file format.

::

    # comment
    horizon 2
    as 1 deployed stm=199
    as 2 undeployed
    as-link 1 2
    router 100 as=1 mark=0.0 itrace=0.0 spie=1 firewall=0
    link 100 101
    host 2 router=150 role=victim

    [experiment]
    seed = 7
    strategy = input-debugging

Order of declarations is free; ``save`` writes a canonical sorted form so
``loads(dumps(t)) == t``. Keys in ``[experiment]`` are strings; callers
coerce them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .errors import ScenarioFormatError, TopologyError
from .topology import AsInfo, AsTopology, Host, RouterNode

_BOOL = {"1": True, "0": False, "true": True, "false": False, "yes": True, "no": False}


@dataclass
class Scenario:
    topology: AsTopology
    experiment: dict[str, str] = field(default_factory=dict)


def _kv(tokens, lineno):
    out = {}
    for tok in tokens:
        if "=" not in tok:
            raise ScenarioFormatError(f"expected key=value, got '{tok}'", lineno)
        k, v = tok.split("=", 1)
        out[k] = v
    return out


def _int(value, lineno, name):
    try:
        return int(value)
    except (TypeError, ValueError):
        raise ScenarioFormatError(f"not an integer: {value!r}", lineno, name) from None


def _float(value, lineno, name):
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ScenarioFormatError(f"not a number: {value!r}", lineno, name) from None


def _bool(value, lineno, name):
    try:
        return _BOOL[value.lower()]
    except (KeyError, AttributeError):
        raise ScenarioFormatError(f"not a boolean: {value!r}", lineno, name) from None


def loads_scenario(text: str) -> Scenario:
    horizon = 2
    ases: dict[int, AsInfo] = {}
    as_links: set[tuple[int, int]] = set()
    router_specs: list[tuple[int, dict, int]] = []
    links: set[tuple[int, int]] = set()
    hosts: dict[int, Host] = {}
    experiment: dict[str, str] = {}
    in_experiment = False

    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line == "[experiment]":
            in_experiment = True
            continue
        if in_experiment:
            if "=" not in line:
                raise ScenarioFormatError("expected 'key = value'", lineno)
            key, value = (s.strip() for s in line.split("=", 1))
            experiment[key] = value
            continue

        kind, *rest = line.split()
        if kind == "horizon":
            if len(rest) != 1:
                raise ScenarioFormatError("horizon takes one value", lineno, "horizon")
            horizon = _int(rest[0], lineno, "horizon")
        elif kind == "as":
            if len(rest) < 2 or rest[1] not in ("deployed", "undeployed"):
                raise ScenarioFormatError("expected 'as <id> deployed|undeployed'", lineno, "as")
            as_id = _int(rest[0], lineno, "as")
            opts = _kv(rest[2:], lineno)
            stm = _int(opts["stm"], lineno, "stm") if "stm" in opts else None
            ases[as_id] = AsInfo(as_id, rest[1] == "deployed", stm)
        elif kind == "as-link":
            if len(rest) != 2:
                raise ScenarioFormatError("as-link takes two AS ids", lineno, "as-link")
            as_links.add((_int(rest[0], lineno, "as-link"), _int(rest[1], lineno, "as-link")))
        elif kind == "router":
            if not rest:
                raise ScenarioFormatError("router needs an id", lineno, "router")
            opts = _kv(rest[1:], lineno)
            if "as" not in opts:
                raise ScenarioFormatError("router needs as=<id>", lineno, "as")
            router_specs.append((_int(rest[0], lineno, "router"), opts, lineno))
        elif kind == "link":
            if len(rest) != 2:
                raise ScenarioFormatError("link takes two node ids", lineno, "link")
            links.add((_int(rest[0], lineno, "link"), _int(rest[1], lineno, "link")))
        elif kind == "host":
            if not rest:
                raise ScenarioFormatError("host needs an id", lineno, "host")
            opts = _kv(rest[1:], lineno)
            if "router" not in opts:
                raise ScenarioFormatError("host needs router=<id>", lineno, "router")
            hid = _int(rest[0], lineno, "host")
            hosts[hid] = Host(hid, _int(opts["router"], lineno, "router"), opts.get("role", "host"))
        else:
            raise ScenarioFormatError(f"unknown declaration '{kind}'", lineno, kind)

    routers = {}
    for rid, opts, lineno in router_specs:
        as_id = _int(opts["as"], lineno, "as")
        if as_id not in ases:
            raise ScenarioFormatError(f"router {rid} names undeclared AS{as_id}", lineno, "as")
        try:
            routers[rid] = RouterNode(
                rid,
                as_id,
                marking_probability=_float(opts.get("mark", "0"), lineno, "mark"),
                itrace_probability=_float(opts.get("itrace", "0"), lineno, "itrace"),
                spie_enabled=_bool(opts["spie"], lineno, "spie")
                if "spie" in opts
                else ases[as_id].spie_deployed,
                firewall=_bool(opts.get("firewall", "0"), lineno, "firewall"),
            )
        except ScenarioFormatError:
            raise
        except TopologyError as exc:
            raise ScenarioFormatError(str(exc), lineno) from None

    try:
        topo = AsTopology(
            ases=ases,
            as_links=frozenset(as_links),
            routers=routers,
            links=frozenset(links),
            hosts=hosts,
            deployment_horizon=horizon,
        )
    except ScenarioFormatError:
        raise
    except TopologyError as exc:
        raise ScenarioFormatError(str(exc)) from None
    return Scenario(topo, experiment)


def loads(text: str) -> AsTopology:
    return loads_scenario(text).topology


def dumps(topology: AsTopology, experiment: dict | None = None) -> str:
    lines = [f"horizon {topology.deployment_horizon}"]
    for as_id in sorted(topology.ases):
        info = topology.ases[as_id]
        stm = f" stm={info.stm}" if info.stm is not None else ""
        lines.append(f"as {as_id} {'deployed' if info.spie_deployed else 'undeployed'}{stm}")
    lines += [f"as-link {a} {b}" for a, b in sorted(topology.as_links)]
    for rid in sorted(topology.routers):
        r = topology.routers[rid]
        lines.append(
            f"router {rid} as={r.domain} mark={r.marking_probability!r} "
            f"itrace={r.itrace_probability!r} spie={int(r.spie_enabled)} firewall={int(r.firewall)}"
        )
    lines += [f"link {a} {b}" for a, b in sorted(topology.links)]
    for hid in sorted(topology.hosts):
        h = topology.hosts[hid]
        lines.append(f"host {hid} router={h.router} role={h.role}")
    if experiment:
        lines += ["", "[experiment]"]
        lines += [f"{k} = {v}" for k, v in experiment.items()]
    return "\n".join(lines) + "\n"


def load(path) -> AsTopology:
    return loads(Path(path).read_text())


def load_scenario(path) -> Scenario:
    return loads_scenario(Path(path).read_text())


def save(topology: AsTopology, path, experiment: dict | None = None) -> None:
    Path(path).write_text(dumps(topology, experiment))


def bundled(name: str) -> Path:
    """Path of a scenario file shipped in ``tracelab/data``."""
    return Path(__file__).with_name("data") / name
