"""Normal runs, single-utility DoS runs, sweeps and hybrid derivation."""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping

from . import casegen
from .des import SimParams, SimStats, run_simulation
from .errors import InvalidParams, NotAUtility
from .metrics import CentralityTable, RankVector, UndirectedGraph, centrality_table, rank_from_scores
from .rankopt import (
    DEFAULT_WEIGHTS,
    AlphaPair,
    RankingInputs,
    SeverityRecord,
    SeverityReport,
    Weights,
    alpha_sweep,
    classify_severity,
    load_severity_fixture,
    simulation_rank,
)
from .topology import (
    ElementKind,
    Entity,
    Node,
    Topology,
    TopologyKind,
    build_hybrid,
    build_radial,
    build_star,
    hybrid_decisions,
    load_topology,
    remove_node,
)

DOS_FORWARD_PROB = 0.01
DEFAULT_SWEEP_HORIZON = 200.0


def resolve_case(case: str) -> str:
    return casegen.ALIASES.get(case, case)


def load_case(case: str, case_file=None) -> list[Entity]:
    """Entities of a bundled case (name or alias) or of ``case`` inside ``case_file``."""
    if case_file is None:
        name = resolve_case(case)
        return load_topology(casegen.bundled_path("cases.json"), name, casegen.bundled_path("manifest.json"))
    return load_topology(case_file, case)


def parse_kind(kind) -> TopologyKind:
    if isinstance(kind, TopologyKind):
        return kind
    try:
        return TopologyKind(str(kind).capitalize())
    except ValueError:
        raise InvalidParams("unknown topology kind %r" % kind) from None


def build_topology(entities, kind, star_report=None, radial_report=None) -> Topology:
    kind = parse_kind(kind)
    if kind == TopologyKind.STAR:
        return build_star(entities)
    if kind == TopologyKind.RADIAL:
        return build_radial(entities)
    if kind == TopologyKind.HYBRID:
        if star_report is None or radial_report is None:
            raise InvalidParams("hybrid topology needs star and radial severity reports")
        return build_hybrid(entities, star_report, radial_report)
    raise InvalidParams("cannot build %s topology from entities" % kind.value)


@dataclass
class ScenarioSpec:
    case: str = "ACTIVSg500"
    kind: str = "star"
    target: str | None = None
    params: SimParams = field(default_factory=SimParams)
    until: float | None = 1000.0
    case_file: str | None = None
    weights: Weights = DEFAULT_WEIGHTS
    grid_step: float = 0.05

    def __post_init__(self):
        if self.until is not None and not self.until > 0:
            raise InvalidParams("until must be positive")

    @classmethod
    def from_file(cls, path) -> "ScenarioSpec":
        with open(path, "r", encoding="utf-8") as fh:
            d = json.load(fh)
        params = SimParams.from_dict(d.pop("params", {}))
        w = d.pop("weights", None)
        spec = cls(params=params, **d)
        if w is not None:
            spec.weights = Weights(*w)
        return spec


@dataclass
class ScenarioReport:
    stats: SimStats
    sim_rank: RankVector
    centrality: CentralityTable
    topology: Topology
    alpha: AlphaPair | None = None
    substations_lost: int | None = None
    regulatory_affected: str | None = None
    inputs: RankingInputs | None = None
    target: str | None = None


def delivery_ratio(stats: SimStats, flow: str) -> float:
    generated = stats.generated_by_flow().get(flow, 0)
    return stats.delivered_by_flow().get(flow, 0) / generated if generated else 0.0


def substations_lost(topo: Topology, utility: str) -> int:
    """Star: every assigned substation.  Otherwise: substation routers wired directly to the utility."""
    if topo.kind == TopologyKind.STAR:
        return len(topo.substations_of(utility))
    subs = set(topo.substations)
    return sum(1 for p in topo.predecessors(utility) if p in subs)


def _ranking_inputs(stats: SimStats, table: CentralityTable, utilities: list[str]) -> RankingInputs:
    ranks = table.ranks(utilities)
    return RankingInputs(simulation_rank(stats, utilities), ranks["betweenness"], ranks["eigenvector"],
                         ranks["closeness"])


def _topology_for(spec: ScenarioSpec) -> Topology:
    return build_topology(load_case(spec.case, spec.case_file), spec.kind)


def run_normal(spec: ScenarioSpec, topo: Topology | None = None) -> ScenarioReport:
    topo = topo or _topology_for(spec)
    stats = run_simulation(topo, spec.params, spec.until)
    table = centrality_table(UndirectedGraph.from_topology(topo))
    utilities = topo.utilities
    return ScenarioReport(stats, simulation_rank(stats, utilities), table, topo)


def run_dos(spec: ScenarioSpec, target: str | None = None, topo: Topology | None = None,
            sweep_alpha: bool = True) -> ScenarioReport:
    target = target or spec.target
    topo = topo or _topology_for(spec)
    if target not in topo.utilities:
        raise NotAUtility("%r is not a utility router" % (target,))
    overrides = dict(spec.params.forward_overrides)
    overrides[target] = DOS_FORWARD_PROB
    params = spec.params.replace(forward_overrides=overrides)
    stats = run_simulation(topo, params, spec.until)
    reduced = remove_node(topo, target)
    table = centrality_table(UndirectedGraph.from_topology(reduced))
    survivors = [u for u in topo.utilities if u != target]
    inputs = alpha = None
    sim_rank = RankVector({})
    if survivors:
        inputs = _ranking_inputs(stats, table, survivors)
        sim_rank = RankVector(inputs.S)
        if sweep_alpha:
            alpha = alpha_sweep(inputs, spec.weights, spec.grid_step, pinned=True)
    regulatory = topo.regulatory_of.get(target) if len(topo.regulatories) > 1 else None
    return ScenarioReport(stats, sim_rank, table, topo, alpha, substations_lost(topo, target), regulatory,
                          inputs, target)


def _sweep_one(args) -> SeverityRecord:
    spec, target, topo = args
    rep = run_dos(spec, target, topo)
    return SeverityRecord(target, rep.alpha.alpha0, rep.alpha.alpha1, rep.substations_lost, rep.regulatory_affected)


def dos_sweep(case: str, kind: str, params: SimParams | None = None, until: float = DEFAULT_SWEEP_HORIZON,
              workers: int = 1, case_file=None, weights: Weights = DEFAULT_WEIGHTS,
              grid_step: float = 0.05, targets=None) -> SeverityReport:
    spec = ScenarioSpec(case, kind, None, params or SimParams(), until, case_file, weights, grid_step)
    topo = _topology_for(spec)
    targets = list(targets) if targets is not None else topo.utilities
    jobs = [(spec, u, topo) for u in targets]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_sweep_one, jobs))
    else:
        records = [_sweep_one(j) for j in jobs]
    by_id = {r.utility: r for r in records}
    records = [by_id[u] for u in targets]
    if len(records) >= 6:
        records = classify_severity(records)
    return SeverityReport(resolve_case(case), parse_kind(kind).value, records)


def replay_sweep(case: str, kind: str, fixture=None, class_weights=None) -> SeverityReport:
    """Classify tabulated (alpha0, alpha1, substations lost) rows without simulating."""
    rows = load_severity_fixture(resolve_case(case), kind, fixture)
    records = [SeverityRecord(r.utility, r.alpha0, r.alpha1, r.substations_lost, r.regulatory_affected) for r in rows]
    if len(records) >= 6:
        records = classify_severity(records, class_weights) if class_weights else classify_severity(records)
        regs = {r.utility: r.regulatory_affected for r in rows}
        for r in records:
            r.regulatory_affected = regs[r.utility]
    return SeverityReport(resolve_case(case), parse_kind(kind).value, records)


def derive_hybrid(entities, star_report, radial_report):
    """Hybrid topology plus its decision rows (utility, R_s, R_r, choice)."""
    rows = hybrid_decisions(entities, star_report, radial_report)
    return build_hybrid(entities, star_report, radial_report), rows


def decisions_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["utility", "R_s", "R_r", "choice"])
    for u, rs, rr, choice in rows:
        w.writerow([u, rs, rr, choice.value])
    return buf.getvalue()


# five-router comparison fixture

CORE_ROUTERS = ("R1", "R2", "R3", "R4", "R5")


def core_topology() -> Topology:
    """Generators G2..G5 feed R2..R5; routers chain R5 -> R4 -> R3 -> R2 -> R1 -> S1."""
    nodes = [Node(r, None, ElementKind.ROUTER) for r in CORE_ROUTERS]
    nodes += [Node("G%d" % i, None, ElementKind.GENERATOR) for i in range(2, 6)]
    nodes.append(Node("S1", None, ElementKind.SINK))
    edges = [("G%d" % i, "R%d" % i) for i in range(2, 6)]
    edges += [("R5", "R4"), ("R4", "R3"), ("R3", "R2"), ("R2", "R1"), ("R1", "S1")]
    return Topology(nodes, edges, TopologyKind.CUSTOM, monitored=CORE_ROUTERS)


def core_params(seed: int = 42, packets_per_generator: int = 500) -> SimParams:
    return SimParams(mean_packet_size=100, interarrival_mean=0.5, interarrival_cap=None, port_rate=12.0,
                     monitor_cap=None, service_log_interval=None, packet_budget=4 * packets_per_generator,
                     seed=seed)


def core_delay_order(seed: int, packets_per_generator: int = 500) -> tuple[list[str], SimStats]:
    """Origin routers sorted by mean end-to-end delay, largest first."""
    stats = run_simulation(core_topology(), core_params(seed, packets_per_generator), None)
    delays = stats.mean_delay_by_flow()
    order = rank_from_scores(delays).nodes()
    return order, stats


def utility_delivery(stats: SimStats, topo: Topology) -> dict[str, float]:
    return {u: delivery_ratio(stats, u) for u in topo.utilities}


def regulatory_summary(topo: Topology) -> Mapping[str, list[str]]:
    out: dict = {}
    for u, r in topo.regulatory_of.items():
        out.setdefault(r, []).append(u)
    return out

