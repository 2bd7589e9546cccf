"""Global and local structure of the router graph.

All measures run on the undirected router-only graph: generators, sinks and
branchers are collapsed so a utility router is adjacent to its regulatory
router directly.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import eigsh

from .errors import EmptySet, NoEdges, TooSmall
from .topology import ElementKind, Topology, natural_key

DENSE_EIGEN_LIMIT = 2048
POWER_TOL = 1e-12
POWER_MAX_ITER = 100_000


class UndirectedGraph:
    def __init__(self, nodes: Iterable[str], edges: Iterable[tuple[str, str]]):
        self.ids: tuple[str, ...] = tuple(sorted(set(nodes), key=natural_key))
        self.index = {v: i for i, v in enumerate(self.ids)}
        pairs = set()
        for a, b in edges:
            if a == b:
                continue
            i, j = self.index[a], self.index[b]
            pairs.add((min(i, j), max(i, j)))
        self.edges: tuple[tuple[int, int], ...] = tuple(sorted(pairs))
        n = len(self.ids)
        if pairs:
            rows = np.array([p[0] for p in self.edges] + [p[1] for p in self.edges])
            cols = np.array([p[1] for p in self.edges] + [p[0] for p in self.edges])
            data = np.ones(len(rows))
        else:
            rows = cols = np.zeros(0, dtype=int)
            data = np.zeros(0)
        self.adjacency = sp.csr_matrix((data, (rows, cols)), shape=(n, n))
        self.degree = np.asarray(self.adjacency.sum(axis=1)).ravel()

    @property
    def n(self) -> int:
        return len(self.ids)

    def neighbors(self, i: int) -> np.ndarray:
        a = self.adjacency
        return a.indices[a.indptr[i]:a.indptr[i + 1]]

    def components(self) -> tuple[int, np.ndarray]:
        return connected_components(self.adjacency, directed=False)

    @classmethod
    def from_topology(cls, topo: Topology) -> "UndirectedGraph":
        routers = set(topo.routers)
        edges = []
        for r in routers:
            stack = list(topo.successors(r))
            seen = set()
            while stack:
                nxt = stack.pop()
                if nxt in seen:
                    continue
                seen.add(nxt)
                if nxt in routers:
                    edges.append((r, nxt))
                elif topo.node(nxt).kind == ElementKind.BRANCHER:
                    stack.extend(topo.successors(nxt))
        return cls(routers, edges)


def spectral_gap(g: UndirectedGraph, force_sparse: bool = False) -> float:
    """Second-smallest eigenvalue of the normalised Laplacian."""
    if g.n < 2:
        raise TooSmall("spectral gap needs at least two nodes")
    n_comp, _ = g.components()
    if n_comp > 1:
        return 0.0
    with np.errstate(divide="ignore"):
        inv_sqrt = np.where(g.degree > 0, 1.0 / np.sqrt(g.degree), 0.0)
    d = sp.diags(inv_sqrt)
    lap = sp.identity(g.n, format="csr") - d @ g.adjacency @ d
    if g.n <= DENSE_EIGEN_LIMIT and not force_sparse:
        vals = np.linalg.eigvalsh(lap.toarray())
    else:
        k = min(3, g.n - 1)
        vals = eigsh(lap.tocsc(), k=k, sigma=-1e-3, which="LM", return_eigenvectors=False, tol=1e-12)
    vals = np.sort(vals)
    return float(min(2.0, max(0.0, vals[1])))


def local_clustering(g: UndirectedGraph) -> np.ndarray:
    a = g.adjacency
    triangles = np.asarray((a @ a).multiply(a).sum(axis=1)).ravel() / 2.0
    deg = g.degree
    out = np.zeros(g.n)
    mask = deg >= 2
    out[mask] = 2.0 * triangles[mask] / (deg[mask] * (deg[mask] - 1))
    return out


def global_clustering(g: UndirectedGraph) -> float:
    if g.n < 1:
        raise TooSmall("clustering needs at least one node")
    return float(local_clustering(g).mean())


def _bfs_batches(g: UndirectedGraph, batch: int | None = None):
    """Yield (sources, dist, sigma) for column blocks of sources; dist is -1 where unreachable."""
    n = g.n
    a = g.adjacency
    if batch is None:
        batch = max(1, min(n, (1 << 21) // max(n, 1)))
    for start in range(0, n, batch):
        src = np.arange(start, min(n, start + batch))
        b = len(src)
        dist = np.full((n, b), -1, dtype=np.int64)
        sigma = np.zeros((n, b))
        dist[src, np.arange(b)] = 0
        sigma[src, np.arange(b)] = 1.0
        frontier = np.zeros((n, b))
        frontier[src, np.arange(b)] = 1.0
        level = 0
        while True:
            reach = a @ frontier
            new = (reach > 0) & (dist < 0)
            if not new.any():
                break
            level += 1
            dist[new] = level
            sigma[new] = reach[new]
            frontier = np.where(new, sigma, 0.0)
        yield src, dist, sigma


def _brandes(g: UndirectedGraph):
    """Betweenness (unordered pairs) and component-local closeness in one pass."""
    n = g.n
    a = g.adjacency
    between = np.zeros(n)
    close = np.zeros(n)
    for src, dist, sigma in _bfs_batches(g):
        b = len(src)
        total = np.where(dist > 0, dist, 0).sum(axis=0)
        with np.errstate(divide="ignore"):
            close[src] = np.where(total > 0, 1.0 / np.maximum(total, 1), 0.0)
        delta = np.zeros((n, b))
        depth = int(dist.max()) if dist.size else 0
        safe_sigma = np.where(sigma > 0, sigma, 1.0)
        for level in range(depth, 0, -1):
            coef = np.where(dist == level, (1.0 + delta) / safe_sigma, 0.0)
            pull = a @ coef
            parent = dist == level - 1
            delta += np.where(parent, sigma * pull, 0.0)
        delta[src, np.arange(b)] = 0.0
        between += delta.sum(axis=1)
    return between / 2.0, close


def _as_map(g: UndirectedGraph, values) -> dict[str, float]:
    return {v: float(values[i]) for i, v in enumerate(g.ids)}


def betweenness(g: UndirectedGraph) -> dict[str, float]:
    if g.n < 1:
        raise TooSmall("betweenness needs at least one node")
    return _as_map(g, _brandes(g)[0])


def closeness(g: UndirectedGraph) -> dict[str, float]:
    if g.n < 2:
        raise TooSmall("closeness needs at least two nodes")
    return _as_map(g, _brandes(g)[1])


def _largest_component(g: UndirectedGraph) -> np.ndarray:
    n_comp, labels = g.components()
    sizes = np.bincount(labels, minlength=n_comp)
    # equal sizes: the component holding the lowest-ordered node wins
    best = max(range(n_comp), key=lambda c: (sizes[c], -int(np.argmax(labels == c))))
    return np.flatnonzero(labels == best)


def eigenvector_centrality(g: UndirectedGraph) -> dict[str, float]:
    """Power iteration on A + I over the largest component; unit 2-norm."""
    if g.n == 0:
        raise NoEdges("empty graph")
    members = _largest_component(g)
    sub = g.adjacency[members][:, members]
    if sub.nnz == 0:
        raise NoEdges("largest component has no edges")
    x = np.full(len(members), 1.0 / np.sqrt(len(members)))
    prev_step = None
    for _ in range(POWER_MAX_ITER):
        nxt = sub @ x + x
        nxt /= np.linalg.norm(nxt)
        step = float(np.max(np.abs(nxt - x)))
        x = nxt
        # remaining error is about step * r / (1 - r) for contraction ratio r
        ratio = min(step / prev_step, 0.999999) if prev_step else 0.5
        if step == 0.0 or step * ratio / (1.0 - ratio) < POWER_TOL:
            break
        prev_step = step
    scores = np.zeros(g.n)
    scores[members] = np.abs(x)
    return _as_map(g, scores)


@dataclass(frozen=True)
class RankVector:
    ranking: Mapping[str, int]

    def __getitem__(self, node):
        return self.ranking[node]

    def nodes(self) -> list[str]:
        return sorted(self.ranking, key=lambda v: self.ranking[v])

    def as_dict(self) -> dict[str, int]:
        return dict(self.ranking)


def rank_from_scores(scores: Mapping[str, float], restrict_to: Iterable[str] | None = None) -> RankVector:
    """Rank 0 = highest score; ties go to the lowest id."""
    keys = list(scores) if restrict_to is None else list(restrict_to)
    if not keys:
        raise EmptySet("nothing to rank")
    missing = [k for k in keys if k not in scores]
    if missing:
        raise EmptySet("no score for %r" % missing[0])
    order = sorted(set(keys), key=lambda v: (-scores[v], natural_key(v)))
    return RankVector({v: i for i, v in enumerate(order)})


@dataclass
class CentralityTable:
    betweenness: dict[str, float]
    eigenvector: dict[str, float]
    closeness: dict[str, float]
    spectral_gap: float
    clustering: float
    nodes: tuple[str, ...] = field(default_factory=tuple)

    def ranks(self, restrict_to: Iterable[str]) -> dict[str, RankVector]:
        restrict_to = list(restrict_to)
        return {
            "betweenness": rank_from_scores(self.betweenness, restrict_to),
            "eigenvector": rank_from_scores(self.eigenvector, restrict_to),
            "closeness": rank_from_scores(self.closeness, restrict_to),
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["node", "betweenness", "eigenvector", "closeness"])
        for v in self.nodes:
            w.writerow([v, repr(self.betweenness[v]), repr(self.eigenvector[v]), repr(self.closeness[v])])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({
            "spectral_gap": self.spectral_gap,
            "clustering": self.clustering,
            "nodes": [
                {"node": v, "betweenness": self.betweenness[v], "eigenvector": self.eigenvector[v],
                 "closeness": self.closeness[v]}
                for v in self.nodes
            ],
        }, indent=1) + "\n"


def centrality_table(g: UndirectedGraph) -> CentralityTable:
    between, close = _brandes(g)
    try:
        eig = eigenvector_centrality(g)
    except NoEdges:
        eig = {v: 0.0 for v in g.ids}
    gap = spectral_gap(g) if g.n >= 2 else 0.0
    return CentralityTable(_as_map(g, between), eig, _as_map(g, close), gap, global_clustering(g), g.ids)
