"""Entity ingestion and star / radial / hybrid network construction.

Every substation, utility control centre and regulatory unit becomes a router.
Around the routers sit auxiliary elements with prefixed ids:

* ``gen:<sub>``  packet generator feeding a substation router
* ``br:<utility>`` random brancher splitting utility output
* ``sink:<id>``  sink collecting a utility's or regulatory unit's output

Utility and regulatory routers are monitored (queue sampling and service
logging); monitors are stored as an attribute rather than graph nodes.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from enum import Enum
from types import MappingProxyType
from typing import Iterable, Mapping

from .errors import (
    EmptyCase,
    InvalidTopology,
    MissingUtilityInReport,
    NoTransmissionInRegion,
    NoUtilities,
    ParseError,
    SchemaError,
    UnknownNode,
    UnresolvedUtility,
)

EARTH_RADIUS_KM = 6371.0088


class Role(str, Enum):
    GENERATION = "GenerationSubstation"
    TRANSMISSION = "TransmissionSubstation"
    UTILITY = "Utility"
    REGULATORY = "Regulatory"


class ElementKind(str, Enum):
    GENERATOR = "Generator"
    ROUTER = "Router"
    SINK = "Sink"
    BRANCHER = "Brancher"
    MONITOR = "Monitor"


class TopologyKind(str, Enum):
    STAR = "Star"
    RADIAL = "Radial"
    HYBRID = "Hybrid"
    CUSTOM = "Custom"


SUBSTATION_ROLES = (Role.GENERATION, Role.TRANSMISSION)
_TYPE_TO_ROLE = {"gen": Role.GENERATION, "trans": Role.TRANSMISSION}


def natural_key(node_id: str):
    """Sort key that orders embedded integers numerically ("Utility 9" < "Utility 10")."""
    parts = re.split(r"(\d+)", node_id)
    return tuple(int(p) if i % 2 else p for i, p in enumerate(parts))


def natural_sorted(ids: Iterable[str]) -> list[str]:
    return sorted(ids, key=natural_key)


@dataclass(frozen=True)
class Entity:
    id: str
    role: Role
    utility_label: str | None = None
    regulatory_label: str | None = None
    lat: float = 0.0
    lon: float = 0.0

    @property
    def is_substation(self) -> bool:
        return self.role in SUBSTATION_ROLES

    @property
    def coord(self) -> tuple[float, float]:
        return (self.lat, self.lon)


@dataclass(frozen=True)
class Node:
    id: str
    role: Role | None
    kind: ElementKind


def haversine_km(a: tuple[float, float], b: tuple[float, float]) -> float:
    lat1, lon1 = map(math.radians, a)
    lat2, lon2 = map(math.radians, b)
    h = math.sin((lat2 - lat1) / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2
    return 2 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


def _closest(origin: Entity, candidates: list[Entity]) -> Entity:
    return min(candidates, key=lambda c: (haversine_km(origin.coord, c.coord), natural_key(c.id)))


def nearest_utility(sub: Entity, utilities: list[Entity]) -> str:
    if not utilities:
        raise NoUtilities("no utility to attach substation %r to" % sub.id)
    for ent in (sub, *utilities):
        if not (math.isfinite(ent.lat) and math.isfinite(ent.lon)):
            raise SchemaError("non-finite coordinates on %r" % ent.id)
    return _closest(sub, list(utilities)).id


class Topology:
    """Immutable directed graph of network elements."""

    def __init__(
        self,
        nodes: Iterable[Node],
        edges: Iterable[tuple[str, str]],
        kind: TopologyKind,
        utility_of: Mapping[str, str] | None = None,
        regulatory_of: Mapping[str, str] | None = None,
        branch_probs: Mapping[tuple[str, str], float] | None = None,
        monitored: Iterable[str] = (),
        coords: Mapping[str, tuple[float, float]] | None = None,
    ):
        node_list = sorted(nodes, key=lambda n: natural_key(n.id))
        by_id = {}
        for n in node_list:
            if n.id in by_id:
                raise InvalidTopology("duplicate node %r" % n.id)
            by_id[n.id] = n
        succ: dict[str, list[str]] = {n.id: [] for n in node_list}
        pred: dict[str, list[str]] = {n.id: [] for n in node_list}
        edge_list = []
        seen = set()
        for src, dst in edges:
            if src == dst:
                raise InvalidTopology("self-loop on %r" % src)
            if src not in by_id or dst not in by_id:
                raise InvalidTopology("edge %r -> %r references an unknown node" % (src, dst))
            if (src, dst) in seen:
                continue
            seen.add((src, dst))
            edge_list.append((src, dst))
            succ[src].append(dst)
            pred[dst].append(src)
        for n in node_list:
            if n.kind == ElementKind.GENERATOR and len(succ[n.id]) > 1:
                raise InvalidTopology("generator %r has more than one out-edge" % n.id)

        self.nodes: tuple[Node, ...] = tuple(node_list)
        self.edges: tuple[tuple[str, str], ...] = tuple(edge_list)
        self.kind = TopologyKind(kind)
        self.utility_of = MappingProxyType(dict(utility_of or {}))
        self.regulatory_of = MappingProxyType(dict(regulatory_of or {}))
        self.branch_probs = MappingProxyType(dict(branch_probs or {}))
        self.monitored: tuple[str, ...] = tuple(natural_sorted(m for m in set(monitored) if m in by_id))
        self.coords = MappingProxyType(dict(coords or {}))
        self._by_id = by_id
        self._succ = {k: tuple(v) for k, v in succ.items()}
        self._pred = {k: tuple(v) for k, v in pred.items()}

    # lookups
    def __contains__(self, node_id: str) -> bool:
        return node_id in self._by_id

    def contains(self, node_id: str) -> bool:
        return node_id in self._by_id

    def node(self, node_id: str) -> Node:
        try:
            return self._by_id[node_id]
        except KeyError:
            raise UnknownNode("unknown node %r" % node_id) from None

    def successors(self, node_id: str) -> tuple[str, ...]:
        self.node(node_id)
        return self._succ[node_id]

    def predecessors(self, node_id: str) -> tuple[str, ...]:
        self.node(node_id)
        return self._pred[node_id]

    def ids(self, kind: ElementKind | None = None, role: Role | None = None) -> list[str]:
        return [n.id for n in self.nodes if (kind is None or n.kind == kind) and (role is None or n.role == role)]

    @property
    def routers(self) -> list[str]:
        return self.ids(ElementKind.ROUTER)

    @property
    def utilities(self) -> list[str]:
        return self.ids(ElementKind.ROUTER, Role.UTILITY)

    @property
    def regulatories(self) -> list[str]:
        return self.ids(ElementKind.ROUTER, Role.REGULATORY)

    @property
    def substations(self) -> list[str]:
        return [n.id for n in self.nodes if n.kind == ElementKind.ROUTER and n.role in SUBSTATION_ROLES]

    def substations_of(self, utility: str) -> list[str]:
        return natural_sorted(s for s, u in self.utility_of.items() if u == utility)

    def count_by(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for n in self.nodes:
            key = n.role.value if n.kind == ElementKind.ROUTER and n.role else n.kind.value
            counts[key] = counts.get(key, 0) + 1
        return counts

    def _key(self):
        return (
            self.nodes,
            frozenset(self.edges),
            self.kind,
            dict(self.utility_of),
            dict(self.regulatory_of),
            dict(self.branch_probs),
            self.monitored,
        )

    def __eq__(self, other):
        if not isinstance(other, Topology):
            return NotImplemented
        return self._key() == other._key()

    def __reduce__(self):
        return (Topology, (self.nodes, self.edges, self.kind, dict(self.utility_of), dict(self.regulatory_of),
                           dict(self.branch_probs), self.monitored, dict(self.coords)))

    def __repr__(self):
        return "Topology(kind=%s, nodes=%d, edges=%d)" % (self.kind.value, len(self.nodes), len(self.edges))

    # structural checks
    def validate(self) -> None:
        """Raise InvalidTopology unless every generator has exactly one out-edge and reaches a sink."""
        for g in self.ids(ElementKind.GENERATOR):
            if len(self._succ[g]) != 1:
                raise InvalidTopology("generator %r must have exactly one out-edge" % g)
        reaches = self._reaches_sink()
        for g in self.ids(ElementKind.GENERATOR):
            if not reaches[g]:
                raise InvalidTopology("generator %r cannot reach a sink" % g)

    def _reaches_sink(self) -> dict[str, bool]:
        frontier = self.ids(ElementKind.SINK)
        seen = set(frontier)
        while frontier:
            nxt = []
            for node in frontier:
                for p in self._pred[node]:
                    if p not in seen:
                        seen.add(p)
                        nxt.append(p)
            frontier = nxt
        return {n: n in seen for n in self._by_id}

    # serialisation
    def to_edge_list(self) -> str:
        lines = ["kind\t%s" % self.kind.value]
        for n in self.nodes:
            lines.append("node\t%s\t%s\t%s" % (n.id, n.kind.value, n.role.value if n.role else "-"))
        for src, dst in self.edges:
            prob = self.branch_probs.get((src, dst))
            lines.append("edge\t%s\t%s" % (src, dst) + ("\t%r" % prob if prob is not None else ""))
        for sub in natural_sorted(self.utility_of):
            lines.append("utility_of\t%s\t%s" % (sub, self.utility_of[sub]))
        for util in natural_sorted(self.regulatory_of):
            lines.append("regulatory_of\t%s\t%s" % (util, self.regulatory_of[util]))
        for m in self.monitored:
            lines.append("monitored\t%s" % m)
        for ent in natural_sorted(self.coords):
            lat, lon = self.coords[ent]
            lines.append("coord\t%s\t%r\t%r" % (ent, lat, lon))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_edge_list(cls, text: str) -> "Topology":
        kind = None
        nodes, edges, probs, util, reg, mon, coords = [], [], {}, {}, {}, [], {}
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            f = line.split("\t")
            try:
                tag = f[0]
                if tag == "kind":
                    kind = TopologyKind(f[1])
                elif tag == "node":
                    nodes.append(Node(f[1], None if f[3] == "-" else Role(f[3]), ElementKind(f[2])))
                elif tag == "edge":
                    edges.append((f[1], f[2]))
                    if len(f) > 3:
                        probs[(f[1], f[2])] = float(f[3])
                elif tag == "utility_of":
                    util[f[1]] = f[2]
                elif tag == "regulatory_of":
                    reg[f[1]] = f[2]
                elif tag == "monitored":
                    mon.append(f[1])
                elif tag == "coord":
                    coords[f[1]] = (float(f[2]), float(f[3]))
                else:
                    raise ValueError("unknown record %r" % tag)
            except (IndexError, ValueError) as exc:
                raise ParseError("edge list line %d: %s" % (lineno, exc)) from None
        if kind is None:
            raise ParseError("edge list has no kind record")
        return cls(nodes, edges, kind, util, reg, probs, mon, coords)

    def layout(self) -> dict[str, tuple[float, float]]:
        """(x, y) = (lon, lat) per node; auxiliary elements sit next to their router."""
        pos = {}
        for n in self.nodes:
            if n.id in self.coords:
                lat, lon = self.coords[n.id]
                pos[n.id] = (lon, lat)
        offsets = {"gen:": (-0.02, -0.02), "br:": (0.02, 0.0), "sink:": (0.02, 0.02)}
        for n in self.nodes:
            if n.id in pos:
                continue
            prefix, _, base = n.id.partition(":")
            base_pos = pos.get(base, (0.0, 0.0))
            dx, dy = offsets.get(prefix + ":", (0.0, 0.0))
            pos[n.id] = (base_pos[0] + dx, base_pos[1] + dy)
        return pos


# ingestion

def _finite(value, what):
    try:
        out = float(value)
    except (TypeError, ValueError):
        raise SchemaError("%s is not a number: %r" % (what, value)) from None
    if not math.isfinite(out):
        raise SchemaError("%s is not finite" % what)
    return out


def entities_from_case(case: Mapping, case_name: str = "case") -> list[Entity]:
    """Build entities from one case object of the JSON schema."""
    if not isinstance(case, Mapping):
        raise SchemaError("case %r is not an object" % case_name)
    subs = case.get("substations", [])
    utils = case.get("utilities", [])
    regs = case.get("regulatories", [])
    if not all(isinstance(x, list) for x in (subs, utils, regs)):
        raise SchemaError("substations/utilities/regulatories must be lists")
    if not (subs or utils or regs):
        raise EmptyCase("case %r has no entities" % case_name)

    out: list[Entity] = []
    reg_ids = []
    for rec in regs:
        if not isinstance(rec, Mapping) or "id" not in rec:
            raise SchemaError("regulatory record without id: %r" % (rec,))
        reg_ids.append(str(rec["id"]))
        out.append(Entity(str(rec["id"]), Role.REGULATORY, None, None,
                          _finite(rec.get("lat", 0.0), "lat"), _finite(rec.get("lon", 0.0), "lon")))
    single_reg = reg_ids[0] if len(reg_ids) == 1 else None
    utilities = []
    for rec in utils:
        if not isinstance(rec, Mapping) or "id" not in rec:
            raise SchemaError("utility record without id: %r" % (rec,))
        reg = rec.get("regulatory", single_reg)
        if reg is None and len(reg_ids) > 1:
            raise SchemaError("utility %r lacks a regulatory label" % rec["id"])
        ent = Entity(str(rec["id"]), Role.UTILITY, None, None if reg is None else str(reg),
                     _finite(rec.get("lat", 0.0), "lat"), _finite(rec.get("lon", 0.0), "lon"))
        utilities.append(ent)
        out.append(ent)
    for rec in subs:
        if not isinstance(rec, Mapping) or "id" not in rec:
            raise SchemaError("substation record without id: %r" % (rec,))
        role = _TYPE_TO_ROLE.get(rec.get("type"))
        if role is None:
            raise SchemaError("substation %r has unrecognised type %r" % (rec["id"], rec.get("type")))
        if "utility" not in rec:
            raise SchemaError("substation %r lacks a utility label" % rec["id"])
        ent = Entity(str(rec["id"]), role, None, None,
                     _finite(rec.get("lat", 0.0), "lat"), _finite(rec.get("lon", 0.0), "lon"))
        label = rec["utility"]
        # an explicit null asks for the geographically nearest utility
        label = nearest_utility(ent, utilities) if label is None else str(label)
        out.append(Entity(ent.id, role, label, None, ent.lat, ent.lon))

    ids = [e.id for e in out]
    if len(set(ids)) != len(ids):
        raise SchemaError("duplicate entity ids in case %r" % case_name)
    return sorted(out, key=lambda e: natural_key(e.id))


def role_counts(entities: Iterable[Entity]) -> dict[str, int]:
    names = {Role.GENERATION: "generation", Role.TRANSMISSION: "transmission",
             Role.UTILITY: "utility", Role.REGULATORY: "regulatory"}
    counts = {v: 0 for v in names.values()}
    for e in entities:
        counts[names[e.role]] += 1
    return counts


def load_topology(path, case_name: str, manifest: Mapping | str | None = None) -> list[Entity]:
    """Read one case from a JSON case file, optionally checking manifest counts."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError("%s: %s" % (path, exc)) from None
    except UnicodeDecodeError as exc:
        raise ParseError("%s: %s" % (path, exc)) from None
    if not isinstance(doc, Mapping):
        raise SchemaError("top level of %s must map case names to cases" % path)
    if case_name not in doc:
        raise SchemaError("case %r not found in %s" % (case_name, path))
    entities = entities_from_case(doc[case_name], case_name)
    if manifest is not None:
        if not isinstance(manifest, Mapping):
            with open(manifest, "r", encoding="utf-8") as fh:
                manifest = json.load(fh)
        expected = manifest.get(case_name)
        if expected is not None:
            got = role_counts(entities)
            for role, count in expected.items():
                if got.get(role) != count:
                    raise SchemaError("case %r: %s count %s, manifest expects %s"
                                      % (case_name, role, got.get(role), count))
    return entities


# construction

class _Builder:
    def __init__(self):
        self.nodes: dict[str, Node] = {}
        self.edges: list[tuple[str, str]] = []
        self.probs: dict[tuple[str, str], float] = {}

    def add(self, node_id, kind, role=None):
        self.nodes.setdefault(node_id, Node(node_id, role, kind))
        return node_id

    def link(self, src, dst, prob=None):
        self.edges.append((src, dst))
        if prob is not None:
            self.probs[(src, dst)] = prob


def _partition(entities):
    subs, utils, regs = [], [], []
    for e in entities:
        (subs if e.is_substation else utils if e.role == Role.UTILITY else regs).append(e)
    key = lambda e: natural_key(e.id)  # noqa: E731
    return sorted(subs, key=key), sorted(utils, key=key), sorted(regs, key=key)


def hybrid_choice(r_star: int, r_radial: int) -> TopologyKind:
    """Star only when the star severity is strictly lower; radial on ties."""
    return TopologyKind.STAR if r_star < r_radial else TopologyKind.RADIAL


def _build(entities, choices: Mapping[str, TopologyKind] | None, kind: TopologyKind) -> Topology:
    subs, utils, regs = _partition(entities)
    if not utils:
        raise NoUtilities("case has no utilities")
    util_by_id = {u.id: u for u in utils}
    reg_ids = {r.id for r in regs}
    if not regs:
        raise SchemaError("case has no regulatory unit")
    regulatory_of = {}
    for u in utils:
        reg = u.regulatory_label if u.regulatory_label is not None else (regs[0].id if len(regs) == 1 else None)
        if reg not in reg_ids:
            raise SchemaError("utility %r maps to unknown regulatory %r" % (u.id, reg))
        regulatory_of[u.id] = reg
    utility_of = {}
    for s in subs:
        if s.utility_label not in util_by_id:
            raise UnresolvedUtility("substation %r names unknown utility %r" % (s.id, s.utility_label))
        utility_of[s.id] = s.utility_label

    b = _Builder()
    for r in regs:
        b.add(r.id, ElementKind.ROUTER, Role.REGULATORY)
        b.add("sink:" + r.id, ElementKind.SINK)
        b.link(r.id, "sink:" + r.id)
    for u in utils:
        br, sink = "br:" + u.id, "sink:" + u.id
        b.add(u.id, ElementKind.ROUTER, Role.UTILITY)
        b.add(br, ElementKind.BRANCHER)
        b.add(sink, ElementKind.SINK)
        b.link(u.id, br)
        b.link(br, sink, 0.5)
        b.link(br, regulatory_of[u.id], 0.5)

    region: dict[str, list[Entity]] = {u.id: [] for u in utils}
    for s in subs:
        region[s.utility_label].append(s)
    for u in utils:
        members = region[u.id]
        wiring = TopologyKind.STAR if choices is None else choices[u.id]
        if wiring == TopologyKind.STAR:
            for s in members:
                b.add(s.id, ElementKind.ROUTER, s.role)
                b.add("gen:" + s.id, ElementKind.GENERATOR)
                b.link("gen:" + s.id, s.id)
                b.link(s.id, u.id)
            continue
        trans = [s for s in members if s.role == Role.TRANSMISSION]
        gens = [s for s in members if s.role == Role.GENERATION]
        if gens and not trans:
            raise NoTransmissionInRegion("utility %r has generation substations but no transmission" % u.id)
        fed = set()
        for t in trans:
            b.add(t.id, ElementKind.ROUTER, t.role)
            b.link(t.id, u.id)
        for g in gens:
            t = _closest(g, trans)
            fed.add(t.id)
            b.add(g.id, ElementKind.ROUTER, g.role)
            b.add("gen:" + g.id, ElementKind.GENERATOR)
            b.link("gen:" + g.id, g.id)
            b.link(g.id, t.id)
        for t in trans:
            if t.id not in fed:
                b.add("gen:" + t.id, ElementKind.GENERATOR)
                b.link("gen:" + t.id, t.id)

    coords = {e.id: e.coord for e in entities}
    monitored = [u.id for u in utils] + [r.id for r in regs]
    return Topology(b.nodes.values(), b.edges, kind, utility_of, regulatory_of, b.probs, monitored, coords)


def build_star(entities: list[Entity]) -> Topology:
    return _build(entities, None, TopologyKind.STAR)


def build_radial(entities: list[Entity]) -> Topology:
    _, utils, _ = _partition(entities)
    return _build(entities, {u.id: TopologyKind.RADIAL for u in utils}, TopologyKind.RADIAL)


def _severity_map(report) -> dict[str, int | None]:
    if hasattr(report, "severity_map"):
        return report.severity_map()
    return dict(report)


def hybrid_decisions(entities, star_report, radial_report) -> list[tuple[str, int, int, TopologyKind]]:
    """Rows (utility, R_s, R_r, choice) for every utility in the case."""
    _, utils, _ = _partition(entities)
    star, radial = _severity_map(star_report), _severity_map(radial_report)
    rows = []
    for u in utils:
        r_s, r_r = star.get(u.id), radial.get(u.id)
        if r_s is None or r_r is None:
            raise MissingUtilityInReport("no classified severity for utility %r" % u.id)
        rows.append((u.id, int(r_s), int(r_r), hybrid_choice(int(r_s), int(r_r))))
    return rows


def build_hybrid(entities: list[Entity], star_report, radial_report) -> Topology:
    rows = hybrid_decisions(entities, star_report, radial_report)
    return _build(entities, {u: choice for u, _, _, choice in rows}, TopologyKind.HYBRID)


def remove_node(topo: Topology, node_id: str) -> Topology:
    topo.node(node_id)
    nodes = [n for n in topo.nodes if n.id != node_id]
    edges = [(s, d) for s, d in topo.edges if node_id not in (s, d)]
    probs = {e: p for e, p in topo.branch_probs.items() if node_id not in e}
    # a brancher that lost a branch keeps its remaining shares proportional
    for br in {s for s, d in topo.branch_probs if d == node_id and s != node_id}:
        own = {e: p for e, p in probs.items() if e[0] == br}
        total = sum(own.values())
        for e, p in own.items():
            probs[e] = p / total
    utility_of = {s: u for s, u in topo.utility_of.items() if s != node_id}
    regulatory_of = {u: r for u, r in topo.regulatory_of.items() if u != node_id}
    monitored = [m for m in topo.monitored if m != node_id]
    coords = {k: v for k, v in topo.coords.items() if k != node_id}
    return Topology(nodes, edges, topo.kind, utility_of, regulatory_of, probs, monitored, coords)
