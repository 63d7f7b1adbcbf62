"""``tracelab`` command line.

Subcommands: mark-prob, threshold, convergence, spie-trace, strategy.
Exit status 0 on success, 1 on usage errors, 2 on runtime errors. Outputs
are written to a temp file and renamed, so a failed run leaves nothing
behind. ``TRACELAB_OUT_DIR`` sets the directory for outputs given without
``--out``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
import warnings
from pathlib import Path

import numpy as np

from . import __version__, convergence, legacy, ppm, spie, topofile
from .errors import ScenarioFormatError, TracebackError
from .rng import make_rng

STRATEGIES = ("input-debugging", "controlled-flooding", "itrace", "ppm")
DEFAULT_HOPS = (3, 6, 9, 12, 15, 18)
DEFAULT_P_GRID = (0.01, 0.02, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _resolve_out(out: str | None, default_name: str) -> Path:
    if out:
        return Path(out)
    return Path(os.environ.get("TRACELAB_OUT_DIR", ".")) / default_name


def _header(command: str, seed, config: dict) -> str:
    return (
        f"# tracelab {__version__} {command}\n"
        f"# seed={seed}\n"
        f"# config={json.dumps(config, sort_keys=True)}\n"
    )


def atomic_write(path: Path, text: str) -> None:
    path = Path(path)
    parent = path.parent if str(path.parent) else Path(".")
    if not parent.is_dir():
        raise FileNotFoundError(f"output directory does not exist: {parent}")
    fd, tmp = tempfile.mkstemp(dir=parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv(rows, columns) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    w.writerows(rows)
    return buf.getvalue()


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


# -- subcommands ------------------------------------------------------------


def survival_table(p_values, max_d, packets, seed):
    """Analytic survival curve plus a Monte-Carlo estimate per (p, d)."""
    from .topology import build_linear_path

    rows = []
    for p in p_values:
        path, _ = build_linear_path(max_d, p)
        dist = ppm.surviving_distances(path, p, make_rng(seed, "mark-prob", p), packets)
        freq = np.bincount(dist, minlength=max_d + 1) / packets
        for d, prob in ppm.survival_curve(p, max_d):
            se = (prob * (1 - prob) / packets) ** 0.5
            rows.append((p, d, prob, float(freq[d]), se))
    return rows


def cmd_mark_prob(args) -> int:
    cfg = {"p": args.p, "max_d": args.max_d, "packets": args.packets}
    for p in args.p:
        if not 0 <= p <= 1:
            raise UsageError(f"--p values must lie in [0, 1], got {p}")
    if args.max_d < 1:
        raise UsageError("--max-d must be >= 1")
    rows = survival_table(args.p, args.max_d, args.packets, args.seed)
    body = _csv(
        [tuple(_fmt(v) for v in r) for r in rows],
        ["p", "d", "probability", "monte_carlo", "mc_stderr"],
    )
    atomic_write(_resolve_out(args.out, "mark_prob.csv"), _header("mark-prob", args.seed, cfg) + body)
    return 0


def cmd_threshold(args) -> int:
    if args.n_max < 1:
        raise UsageError("--n-max must be >= 1")
    if not 0 < args.confidence < 1:
        raise UsageError("--confidence must lie in (0, 1)")
    cfg = {"n_max": args.n_max, "confidence": args.confidence}
    rows = [(n, _fmt(p)) for n, p in ppm.threshold_curve(args.n_max, args.confidence)]
    body = _csv(rows, ["n", "p_threshold"])
    atomic_write(_resolve_out(args.out, "threshold.csv"), _header("threshold", None, cfg) + body)
    return 0


_CONVERGENCE_KEYS = {
    "hops": _int_list,
    "p_grid": _float_list,
    "trials": int,
    "confidence": float,
    "max_packets": int,
    "seed": int,
}


def _read_config(path: str) -> dict:
    cfg = {}
    text = Path(path).read_text()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line or line == "[experiment]":
            continue
        if "=" not in line:
            raise ScenarioFormatError("expected 'key = value'", lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _CONVERGENCE_KEYS:
            raise ScenarioFormatError(f"unknown key (valid: {sorted(_CONVERGENCE_KEYS)})", lineno, key)
        try:
            cfg[key] = _CONVERGENCE_KEYS[key](value)
        except (ValueError, argparse.ArgumentTypeError):
            raise ScenarioFormatError(f"bad value {value!r}", lineno, key) from None
    return cfg


def convergence_tables(summaries):
    rows = [
        (s.hop_count, _fmt(s.p), s.trials, s.converged, s.exhausted, _fmt(s.mean), _fmt(s.ci_low), _fmt(s.ci_high))
        for s in summaries
    ]
    hops = sorted({s.hop_count for s in summaries})
    long_rows = []
    for s in summaries:
        panel = hops.index(s.hop_count) + 1
        for stat in ("mean", "ci_low", "ci_high"):
            long_rows.append((panel, s.hop_count, _fmt(s.p), stat, _fmt(getattr(s, stat))))
    return rows, long_rows


def cmd_convergence(args) -> int:
    cfg = {
        "hops": list(DEFAULT_HOPS),
        "p_grid": list(DEFAULT_P_GRID),
        "trials": 200,
        "confidence": convergence.DEFAULT_CONFIDENCE,
        "max_packets": convergence.DEFAULT_MAX_PACKETS,
        "seed": 0,
    }
    if args.config:
        cfg.update(_read_config(args.config))
    for key in ("hops", "p_grid", "trials", "confidence", "max_packets", "seed"):
        value = getattr(args, key)
        if value is not None:
            cfg[key] = value
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", convergence.ExhaustionWarning)
            summaries = convergence.convergence_sweep(
                cfg["hops"], cfg["p_grid"], cfg["trials"], cfg["confidence"],
                cfg["max_packets"], cfg["seed"], workers=args.workers,
            )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)

    rows, long_rows = convergence_tables(summaries)
    out = _resolve_out(args.out, "convergence.csv")
    header = _header("convergence", cfg["seed"], cfg)
    cols = ["hop_count", "p", "trials", "converged", "exhausted", "mean", "ci_low", "ci_high"]
    panels = out.with_name(out.stem + "_panels" + (out.suffix or ".csv"))
    atomic_write(out, header + _csv(rows, cols))
    atomic_write(panels, header + _csv(long_rows, ["panel", "hop_count", "p", "stat", "value"]))

    for n in cfg["hops"]:
        cells = [s for s in summaries if s.hop_count == n]
        print(f"== {n}-hop attack path ==")
        for s in cells:
            print(f"  p={s.p:<6g} mean={s.mean:12.1f}  ci=[{s.ci_low:.1f}, {s.ci_high:.1f}]"
                  f"  exhausted={s.exhausted}")
        try:
            print(f"  optimal p = {convergence.optimal_marking_probability(summaries, n):g}")
        except TracebackError as exc:
            print(f"  optimal p: {exc}")
    return 0


def spie_trace_text(scenario: topofile.Scenario) -> tuple[str, int]:
    """Transcript body for a scenario and the exit status it implies."""
    topo = scenario.topology
    exp = scenario.experiment
    try:
        m = int(exp.get("bloom_m", 2**20))
        k = int(exp.get("bloom_k", 3))
        bloom_seed = int(exp.get("bloom_seed", 0))
        ident = int(exp.get("ident", 4242))
    except ValueError as exc:
        raise ScenarioFormatError(f"bad integer: {exc}") from None
    payload = exp.get("payload", "attack!!").encode()
    attacker, victim = topo.attacker, topo.victim
    victim_as = int(exp.get("victim_as", topo.domain_of(victim)))
    agents = spie.TracebackAgents(topo, m=m, k=k, seed=bloom_seed)
    identity = spie.make_identity(0x0A000001, 0x0A000002, ident=ident, payload=payload)
    if exp.get("inject", "yes").lower() not in ("no", "0", "false"):
        agents.forward(identity, attacker, victim)
    d = spie.digest(identity)
    try:
        result = spie.cross_as_traceback(agents, victim_as, d)
    except TracebackError as exc:
        transcript = getattr(exc, "transcript", None)
        body = transcript.text() if transcript is not None else ""
        return body + f"FAIL {type(exc).__name__}\n", 2

    def item(x):
        return "(" + ",".join(map(str, x.ases)) + ")" if isinstance(x, spie.Gap) else str(x)

    body = result.transcript.text()
    body += f"GRAFT as={','.join(item(x) for x in result.as_path)} "
    body += f"routers={','.join(item(x) for x in result.router_path)}\n"
    return body, 0


def cmd_spie_trace(args) -> int:
    src = args.topology or str(topofile.bundled("fig10.topo"))
    scenario = topofile.load_scenario(src)
    body, status = spie_trace_text(scenario)
    cfg = {"topology": Path(src).name, **scenario.experiment}
    text = _header("spie-trace", scenario.experiment.get("bloom_seed", 0), cfg) + body
    atomic_write(_resolve_out(args.out, "spie_transcript.txt"), text)
    if status:
        print(body.splitlines()[-1], file=sys.stderr)
    return status


def run_strategy(name: str, scenario: topofile.Scenario, seed: int) -> legacy.TraceReport:
    topo = scenario.topology
    exp = scenario.experiment

    def get(key, cast, default):
        if key not in exp:
            return default
        try:
            return cast(exp[key])
        except ValueError:
            raise ScenarioFormatError(f"bad value {exp[key]!r}", field=key) from None

    victim = topo.victim
    flow = legacy.FlowState(
        live=get("live", lambda v: v.lower() not in ("no", "0", "false"), True),
        rate=get("rate", float, 10.0),
        ends_at_tick=get("ends_at_tick", float, float("inf")),
    )
    window = get("window", int, legacy.DEFAULT_WINDOW)
    rng = make_rng(seed, "strategy", STRATEGIES.index(name))
    if name == "input-debugging":
        sig = legacy.AttackSignature.payload_prefix(legacy.ATTACK_PAYLOAD)
        return legacy.input_debugging(victim, sig, flow, topo, window=window)
    if name == "controlled-flooding":
        return legacy.controlled_flooding(
            victim, topo, None, flow, rng,
            flood_share=get("flood_share", float, 0.5),
            sensitivity=get("sensitivity", float, legacy.DEFAULT_SENSITIVITY),
            window=window,
        )
    if name == "itrace":
        packets = get("packets", int, 200_000)
        q = get("q", float, None)
        msgs = legacy.itrace_episode(topo, topo.attacker, victim, packets, rng, q=q)
        rec = legacy.itrace_reconstruct(msgs, topo, victim, max_gap=get("max_gap", int, 2))
        return legacy.TraceReport(
            "itrace",
            [list(c.routers) for c in rec.candidates],
            {
                "messages": len(msgs),
                "unauthenticated": rec.unauthenticated,
                "complete": [c.complete for c in rec.candidates],
                "bridged": [list(c.bridged) for c in rec.candidates],
            },
            packets,
            packets,
        )
    # ppm
    path = topo.attack_path()
    p = get("p", float, None)
    packets = get("packets", int, 100_000)
    t = ppm.MarkTally()
    for pkt_seq in range(packets):
        node = None
        for r in path.routers:
            pr = topo.routers[r].marking_probability if p is None else p
            if rng.random() < pr:
                node = r
        t.add(ppm.MarkedPacket(node, sequence=pkt_seq))
    try:
        order = ppm.reconstruct_path(t)
        flags = {"status": "ordered"}
    except TracebackError as exc:
        order = []
        flags = {"status": type(exc).__name__, "detail": str(exc)}
    flags["counts"] = {str(k): v for k, v in sorted(t.counts.items())}
    flags["unmarked"] = t.unmarked
    return legacy.TraceReport("ppm", [order], flags, packets, packets)


def cmd_strategy(args) -> int:
    if args.name not in STRATEGIES:
        raise UsageError(f"unknown strategy {args.name!r}; valid strategies: {', '.join(STRATEGIES)}")
    src = args.topology or str(topofile.bundled("linear6.topo"))
    scenario = topofile.load_scenario(src)
    seed = args.seed if args.seed is not None else int(scenario.experiment.get("seed", 0))
    report = run_strategy(args.name, scenario, seed)
    meta = {"tool": f"tracelab {__version__}", "seed": seed,
            "config": {"strategy": args.name, "topology": Path(src).name, **scenario.experiment}}
    record = {"meta": meta, **report.to_dict()}
    atomic_write(_resolve_out(args.out, f"{args.name}_report.json"),
                 json.dumps(record, default=str) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tracelab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"tracelab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("mark-prob", help="survival probability table (analytic + Monte Carlo)")
    p.add_argument("--p", type=_float_list, default=[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9])
    p.add_argument("--max-d", type=int, default=6)
    p.add_argument("--packets", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_mark_prob)

    p = sub.add_parser("threshold", help="threshold marking probability vs hop count")
    p.add_argument("--n-max", type=int, default=25)
    p.add_argument("--confidence", type=float, default=0.99)
    p.add_argument("--out")
    p.set_defaults(func=cmd_threshold)

    p = sub.add_parser("convergence", help="convergence-time sweep")
    p.add_argument("--config")
    p.add_argument("--hops", type=_int_list)
    p.add_argument("--p-grid", dest="p_grid", type=_float_list)
    p.add_argument("--trials", type=int)
    p.add_argument("--confidence", type=float)
    p.add_argument("--max-packets", dest="max_packets", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_convergence)

    p = sub.add_parser("spie-trace", help="cross-AS SPIE traceback transcript")
    p.add_argument("--topology")
    p.add_argument("--out")
    p.set_defaults(func=cmd_spie_trace)

    p = sub.add_parser("strategy", help="run one traceback strategy on a scenario")
    p.add_argument("name", help=f"one of: {', '.join(STRATEGIES)}")
    p.add_argument("--topology")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_strategy)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (TracebackError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
