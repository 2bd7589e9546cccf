"""Command-line driver.

Every command writes its reports into the output directory (``--out``, or the
``GRIDNETSIM_OUT`` environment variable, or the working directory) together
with ``manifest.json`` holding the seed, parameters and wall-clock time.

Exit codes: 0 success, 2 input error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import signal
import sys
import threading
import time
from pathlib import Path

from . import __version__, casegen
from .bridge import DEFAULT_CAP_BPS, DEFAULT_TIMEOUT, BridgePlan, Peer, run_bridged
from .des import SimParams, benchmark_params, run_simulation
from .errors import GridSimError, InputError, InvalidParams, SchemaError
from .metrics import UndirectedGraph, centrality_table
from .rankopt import (
    DEFAULT_WEIGHTS,
    RankingInputs,
    SeverityRecord,
    SeverityReport,
    Weights,
    alpha_sweep,
    classify_severity,
    load_rank_fixture,
    load_severity_fixture,
    solve_T,
)
from .scenario import (
    CORE_ROUTERS,
    ScenarioSpec,
    build_topology,
    core_delay_order,
    decisions_csv,
    derive_hybrid,
    dos_sweep,
    load_case,
    parse_kind,
    replay_sweep,
    resolve_case,
    run_dos,
    run_normal,
    utility_delivery,
)
from .topology import Topology, TopologyKind, load_topology, natural_key

log = logging.getLogger("gridnetsim")
OUT_ENV = "GRIDNETSIM_OUT"
DEFAULT_SEED = 42
BUNDLED = "bundled"


# shared plumbing

def _out_dir(args) -> Path:
    path = Path(args.out or os.environ.get(OUT_ENV) or ".")
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InvalidParams("output directory %s is not writable: %s" % (path, exc)) from None
    if not os.access(path, os.W_OK):
        raise InvalidParams("output directory %s is not writable" % path)
    return path


def _write(args, name: str, text: str) -> Path:
    path = _out_dir(args) / name
    path.write_text(text, encoding="utf-8")
    return path


def _write_manifest(args, started: float, **extra) -> None:
    doc = {
        "command": args.command,
        "version": __version__,
        "seed": args.seed,
        "wall_clock": round(time.perf_counter() - started, 6),
    }
    doc.update(extra)
    _write(args, "manifest.json", json.dumps(doc, indent=1, sort_keys=True, default=str) + "\n")


def _entities(args):
    case = args.case
    if args.case_file:
        return load_case(case, args.case_file)
    if os.path.isfile(case):
        with open(case, "r", encoding="utf-8") as fh:
            try:
                names = list(json.load(fh))
            except ValueError:
                names = []
        if len(names) != 1:
            raise SchemaError("%s holds %d cases; name one with --case-file" % (case, len(names)))
        return load_topology(case, names[0])
    return load_case(case)


def _severity_reports(args, entities=None):
    """(star, radial) severity reports from bundled tables or CSV paths."""
    case = resolve_case(args.case)
    if args.fixtures == BUNDLED:
        return replay_sweep(case, "star"), replay_sweep(case, "radial")
    if args.star_report and args.radial_report:
        return (SeverityReport(case, "Star", _read_report(args.star_report)),
                SeverityReport(case, "Radial", _read_report(args.radial_report)))
    raise InvalidParams("hybrid wiring needs --fixtures bundled or --star-report and --radial-report")


def _read_report(path) -> list[SeverityRecord]:
    """Records from a severity CSV, either our report layout or the fixture layout."""
    import csv
    from .rankopt import Severity

    with open(path, "r", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if rows and "status" in rows[0]:
        labels = {s.label: s for s in Severity}
        out = []
        for r in rows:
            out.append(SeverityRecord(r["utility"], float(r["alpha0"]), float(r["alpha1"]),
                                      int(r["substations_lost"]), r.get("regulatory") or None,
                                      labels.get(r["status"])))
        return out
    case = "custom"
    kinds = {r.get("topology", "").lower() for r in rows}
    if len(kinds) != 1:
        raise SchemaError("%s: expected rows for exactly one topology" % path)
    return load_severity_fixture(case, kinds.pop(), path)


def _topology(args, entities=None) -> Topology:
    if getattr(args, "edges", None):
        with open(args.edges, "r", encoding="utf-8") as fh:
            return Topology.from_edge_list(fh.read())
    entities = entities if entities is not None else _entities(args)
    kind = parse_kind(args.kind)
    if kind == TopologyKind.HYBRID:
        star, radial = _severity_reports(args, entities)
        return derive_hybrid(entities, star, radial)[0]
    return build_topology(entities, kind)


def _params(args) -> SimParams:
    if getattr(args, "packets", None):
        return benchmark_params(args.packets, args.seed)
    base = SimParams.from_file(args.params) if getattr(args, "params", None) else SimParams()
    return base.replace(seed=args.seed)


def _until(args):
    if getattr(args, "drain", False):
        return None
    if args.until is not None and args.until < 0:
        raise InvalidParams("--until must not be negative")
    return args.until


def _stats_text(args, stats) -> tuple[str, str]:
    if args.format == "json":
        return "stats.json", stats.to_json()
    return "stats.csv", stats.to_csv()


def _report_text(args, report: SeverityReport, stem: str = "severity") -> tuple[str, str]:
    if args.format == "json":
        return stem + ".json", report.to_json()
    return stem + ".csv", report.to_csv()


# commands

def cmd_topology(args) -> int:
    started = time.perf_counter()
    topo = _topology(args)
    topo.validate()
    counts = topo.count_by()
    edges = len(topo.edges)
    print("%s topology: %d nodes, %d edges" % (topo.kind.value, len(topo.routers), edges))
    for key in sorted(counts):
        print("  %-24s %d" % (key, counts[key]))
    print("  elements (all kinds)     %d" % len(topo.nodes))
    if args.export_edges:
        Path(args.export_edges).write_text(topo.to_edge_list(), encoding="utf-8")
    if args.export_layout:
        pos = topo.layout()
        doc = {"nodes": [{"id": v, "x": pos[v][0], "y": pos[v][1]} for v in sorted(pos, key=natural_key)],
               "edges": [list(e) for e in topo.edges]}
        Path(args.export_layout).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
    if args.metrics:
        table = centrality_table(UndirectedGraph.from_topology(topo))
        print("spectral gap %.6g, global clustering %.6g" % (table.spectral_gap, table.clustering))
        name = "centrality.json" if args.format == "json" else "centrality.csv"
        _write(args, name, table.to_json() if args.format == "json" else table.to_csv())
        _write_manifest(args, started, case=args.case, kind=topo.kind.value)
    return 0


def cmd_simulate(args) -> int:
    started = time.perf_counter()
    topo = _topology(args)
    params = _params(args)
    until = _until(args)
    stats = run_simulation(topo, params, until)
    name, text = _stats_text(args, stats)
    _write(args, name, text)
    print("generated %d, delivered %d, end time %.6g" % (stats.generated(), stats.delivered(), stats.end_time))
    _write_manifest(args, started, case=args.case, kind=topo.kind.value, until=until, params=params.to_dict())
    return 0


def cmd_dos(args) -> int:
    started = time.perf_counter()
    topo = _topology(args)
    params = _params(args)
    spec = ScenarioSpec(args.case, topo.kind.value, args.target, params, _until(args), args.case_file,
                        _weights(args), args.grid_step)
    rep = run_dos(spec, args.target, topo)
    name, text = _stats_text(args, rep.stats)
    _write(args, name, text)
    summary = {
        "target": rep.target,
        "alpha0": rep.alpha.alpha0 if rep.alpha else None,
        "alpha1": rep.alpha.alpha1 if rep.alpha else None,
        "substations_lost": rep.substations_lost,
        "regulatory": rep.regulatory_affected,
        "sim_rank": rep.sim_rank.as_dict(),
        "delivery_ratio": utility_delivery(rep.stats, topo),
    }
    _write(args, "dos.json", json.dumps(summary, indent=1) + "\n")
    print("target %s: substations lost %d, alpha0 %s, alpha1 %s" % (
        rep.target, rep.substations_lost, summary["alpha0"], summary["alpha1"]))
    _write_manifest(args, started, case=args.case, kind=topo.kind.value, target=args.target,
                    until=spec.until, params=params.to_dict())
    return 0


def cmd_sweep(args) -> int:
    started = time.perf_counter()
    kind = parse_kind(args.kind).value
    if args.fixtures:
        path = None if args.fixtures == BUNDLED else args.fixtures
        report = replay_sweep(args.case, kind, path)
        mode = "replay"
    else:
        report = dos_sweep(args.case, kind, _params(args), args.until, args.workers, args.case_file,
                           _weights(args), args.grid_step)
        mode = "full"
    name, text = _report_text(args, report)
    _write(args, name, text)
    classes = {r.severity for r in report.records if r.severity is not None}
    print("%s sweep of %s %s: %d records, %d classes" % (mode, report.case, kind, len(report.records), len(classes)))
    _write_manifest(args, started, case=args.case, kind=kind, mode=mode, until=args.until,
                    fixtures=args.fixtures)
    return 0


def _weights(args) -> Weights:
    if getattr(args, "weights", None):
        parts = [float(x) for x in args.weights.split(",")]
        if len(parts) != 3:
            raise InvalidParams("--weights takes three comma-separated numbers")
        return Weights(*parts)
    return DEFAULT_WEIGHTS


def cmd_rank(args) -> int:
    started = time.perf_counter()
    w = _weights(args)
    if args.fixtures:
        path = None if args.fixtures == BUNDLED else args.fixtures
        inputs = load_rank_fixture(resolve_case(args.case), parse_kind(args.kind).value, path)
    else:
        topo = _topology(args)
        spec = ScenarioSpec(args.case, topo.kind.value, None, _params(args), _until(args))
        rep = run_normal(spec, topo)
        ranks = rep.centrality.ranks(topo.utilities)
        inputs = RankingInputs(rep.sim_rank, ranks["betweenness"], ranks["eigenvector"], ranks["closeness"])
    T = solve_T(inputs, w, args.alpha)
    pair = None
    if args.sweep:
        pair = alpha_sweep(inputs, w, args.grid_step, pinned=args.pinned)
    rows = [{"utility": u, "S": inputs.S[u], "betweenness": inputs.betweenness[u],
             "eigenvector": inputs.eigenvector[u], "closeness": inputs.closeness[u], "T": T[u]}
            for u in inputs.nodes]
    if args.format == "json":
        doc = {"alpha": args.alpha, "weights": [w.a, w.b, w.c], "ranks": rows}
        if pair:
            doc.update(alpha0=pair.alpha0, alpha1=pair.alpha1)
        _write(args, "ranks.json", json.dumps(doc, indent=1) + "\n")
    else:
        lines = ["utility,S,betweenness,eigenvector,closeness,T"]
        lines += ["%s,%d,%d,%d,%d,%d" % (r["utility"], r["S"], r["betweenness"], r["eigenvector"],
                                        r["closeness"], r["T"]) for r in rows]
        _write(args, "ranks.csv", "\n".join(lines) + "\n")
    for r in rows:
        print("%-12s S=%-3d T=%d" % (r["utility"], r["S"], r["T"]))
    if pair:
        print("alpha0 %g, alpha1 %g" % (pair.alpha0, pair.alpha1))
    _write_manifest(args, started, case=args.case, alpha=args.alpha, weights=[w.a, w.b, w.c])
    return 0


def cmd_classify(args) -> int:
    started = time.perf_counter()
    if args.fixtures == BUNDLED:
        records = load_severity_fixture(resolve_case(args.case), parse_kind(args.kind).value)
    elif args.fixtures:
        records = _read_report(args.fixtures)
    else:
        raise InvalidParams("classify needs --fixtures PATH or --fixtures bundled")
    weights = tuple(float(x) for x in args.class_weights.split(",")) if args.class_weights else None
    records = [SeverityRecord(r.utility, r.alpha0, r.alpha1, r.substations_lost, r.regulatory_affected)
               for r in records]
    classified = classify_severity(records, weights) if weights else classify_severity(records)
    report = SeverityReport(resolve_case(args.case), parse_kind(args.kind).value, classified)
    name, text = _report_text(args, report)
    _write(args, name, text)
    print("classified %d records" % len(classified))
    _write_manifest(args, started, case=args.case, class_weights=weights)
    return 0


def cmd_hybrid(args) -> int:
    started = time.perf_counter()
    entities = _entities(args)
    star, radial = _severity_reports(args, entities)
    topo, rows = derive_hybrid(entities, star, radial)
    _write(args, "hybrid_decisions.csv", decisions_csv(rows))
    _write(args, "hybrid_edges.tsv", topo.to_edge_list())
    stars = sum(1 for r in rows if r[3] == TopologyKind.STAR)
    print("hybrid: %d utilities star-wired, %d radial" % (stars, len(rows) - stars))
    extra = {}
    if args.simulate:
        params = _params(args)
        stats = run_simulation(topo, params, _until(args))
        name, text = _stats_text(args, stats)
        _write(args, name, text)
        print("generated %d, delivered %d" % (stats.generated(), stats.delivered()))
        extra["params"] = params.to_dict()
    _write_manifest(args, started, case=args.case, **extra)
    return 0


def _plan(args, topo: Topology) -> BridgePlan:
    cap = None if args.cap <= 0 else args.cap
    if args.nodes:
        nodes = [n.strip() for n in args.nodes.split(",") if n.strip()]
        return BridgePlan(tuple(nodes), args.host, args.base_port, cap)
    return BridgePlan.for_topology(topo, host=args.host, base_port=args.base_port, throughput_cap=cap)


def cmd_bridge_peer(args) -> int:
    topo = _topology(args) if not args.nodes else None
    plan = _plan(args, topo)
    peer = Peer(plan, args.service, _params(args), args.time_scale).start()
    print("peer listening on %s:%d-%d" % (plan.host, plan.base_port, plan.base_port + len(plan.port_of) - 1),
          flush=True)
    done = threading.Event()

    def _stop(signum, frame):
        done.set()

    signal.signal(signal.SIGTERM, _stop)
    signal.signal(signal.SIGINT, _stop)
    deadline = None if args.duration is None else time.monotonic() + args.duration
    while not done.is_set():
        if deadline is not None and time.monotonic() >= deadline:
            break
        done.wait(0.2)
    for line in peer.stop():
        print(line)
    return 0


def cmd_bridge_run(args) -> int:
    started = time.perf_counter()
    topo = _topology(args)
    plan = _plan(args, topo)
    params = _params(args)
    res = run_bridged(topo, params, _until(args), plan, args.timeout)
    name, text = _stats_text(args, res.stats)
    _write(args, name, text)
    sent = sum(res.sent.values())
    back = sum(res.reinjected.values())
    print("bridged run: generated %d, delivered %d, sent %d, reinjected %d, %.3f s wall-clock" % (
        res.stats.generated(), res.stats.delivered(), sent, back, res.wall_clock))
    _write_manifest(args, started, case=args.case, kind=topo.kind.value, params=params.to_dict(),
                    bridge={"base_port": plan.base_port, "cap": plan.throughput_cap, "sent": res.sent,
                            "reinjected": res.reinjected, "run_seconds": res.wall_clock})
    return 0


def cmd_compare_core(args) -> int:
    started = time.perf_counter()
    lines = ["seed,order,generated,delivered"]
    orders = []
    for seed in range(args.seed, args.seed + args.seeds):
        order, stats = core_delay_order(seed, args.packets_per_generator)
        orders.append(tuple(order))
        lines.append("%d,%s,%d,%d" % (seed, " ".join(order), stats.generated(), stats.delivered()))
    _write(args, "core_order.csv", "\n".join(lines) + "\n")
    stable = len(set(orders)) == 1
    print("delay order %s across %d seeds: %s" % (" > ".join(orders[0]), args.seeds,
                                                 "stable" if stable else "unstable"))
    _write_manifest(args, started, routers=list(CORE_ROUTERS), seeds=args.seeds, stable=stable)
    return 0


# parser

def _common(p, case=True, kind=True, sim=False):
    p.add_argument("--seed", type=int, default=DEFAULT_SEED, help="random seed (default 42)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out", help="output directory (default $%s or .)" % OUT_ENV)
    if case:
        p.add_argument("--case", default="500", help="500, 2000, 10k, an ACTIVSg name or a case JSON path")
        p.add_argument("--case-file", help="case JSON holding --case by name")
    if kind:
        p.add_argument("--kind", default="star", help="star, radial or hybrid")
        p.add_argument("--edges", help="load a custom topology from an edge-list file instead")
        p.add_argument("--fixtures", help="severity/rank tables: a CSV path or 'bundled' for the shipped ones")
        p.add_argument("--star-report", help="star severity CSV (hybrid wiring)")
        p.add_argument("--radial-report", help="radial severity CSV (hybrid wiring)")
    if sim:
        p.add_argument("--until", type=float, default=1000.0, help="simulated seconds")
        p.add_argument("--drain", action="store_true", help="run until every packet is consumed")
        p.add_argument("--params", help="JSON file overriding simulation parameters")
        p.add_argument("--packets", type=int, help="benchmark load with this many packets in total")


def _bridge_args(p):
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--base-port", type=int, help="first port (default from the external node count)")
    p.add_argument("--cap", type=float, default=DEFAULT_CAP_BPS, help="bits per second per port, <= 0 disables")
    p.add_argument("--nodes", help="comma-separated external node ids (default utilities and regulatories)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gridnetsim", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("topology", help="build a topology and print its summary")
    _common(p)
    p.add_argument("--export-edges", help="write the edge list here")
    p.add_argument("--export-layout", help="write node positions and edges as JSON here")
    p.add_argument("--metrics", action="store_true", help="also compute the centrality table")
    p.set_defaults(func=cmd_topology)

    p = sub.add_parser("simulate", help="normal run")
    _common(p, sim=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("dos", help="throttle one utility router")
    _common(p, sim=True)
    p.add_argument("--target", required=True)
    p.add_argument("--weights", help="a,b,c reciprocal weights of the ranking objective")
    p.add_argument("--grid-step", type=float, default=0.05)
    p.set_defaults(func=cmd_dos, until=200.0)

    p = sub.add_parser("sweep", help="DoS every utility and classify severity")
    _common(p, sim=True)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--weights")
    p.add_argument("--grid-step", type=float, default=0.05)
    p.set_defaults(func=cmd_sweep, until=200.0)

    p = sub.add_parser("rank", help="optimisation ranking T against the simulation ranking S")
    _common(p, sim=True)
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--weights")
    p.add_argument("--sweep", action="store_true", help="also search the alpha grid")
    p.add_argument("--pinned", action="store_true", help="extend the alpha search to the pinning bound")
    p.add_argument("--grid-step", type=float, default=0.05)
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("classify", help="severity classes from (alpha0, alpha1, substations lost) rows")
    _common(p)
    p.add_argument("--class-weights", help="w1,w2,w3 score weights")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("hybrid", help="per-utility star/radial choice")
    _common(p, sim=True)
    p.add_argument("--simulate", action="store_true", help="also simulate the hybrid topology")
    p.set_defaults(func=cmd_hybrid)

    p = sub.add_parser("bridge-peer", help="host external routers over TCP")
    _common(p, sim=True)
    _bridge_args(p)
    p.add_argument("--service", choices=("none", "model"), default="none")
    p.add_argument("--time-scale", type=float, default=1.0, help="wall seconds per modelled service second")
    p.add_argument("--duration", type=float, help="stop after this many seconds")
    p.set_defaults(func=cmd_bridge_peer)

    p = sub.add_parser("bridge-run", help="simulate with external routers on a peer")
    _common(p, sim=True)
    _bridge_args(p)
    p.add_argument("--timeout", type=float, default=DEFAULT_TIMEOUT, help="seconds to wait for each frame")
    p.set_defaults(func=cmd_bridge_run)

    p = sub.add_parser("compare-core", help="delay order on the five-router fixture across seeds")
    _common(p, case=False, kind=False)
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--packets-per-generator", type=int, default=500)
    p.set_defaults(func=cmd_compare_core)

    p = sub.add_parser("casegen", help="regenerate the bundled synthetic cases in place")
    p.set_defaults(func=cmd_casegen)
    return parser


def cmd_casegen(args) -> int:
    casegen.main()
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        print("error: %s: %s" % (type(exc).__name__, exc), file=sys.stderr)
        return exc.exit_code
    except GridSimError as exc:
        print("error: %s: %s" % (type(exc).__name__, exc), file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 2
    except OSError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
