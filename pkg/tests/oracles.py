"""Slow, obviously-correct reference computations used only by tests."""

import itertools
import math
from collections import deque

import numpy as np


def bfs_distances(adj, s):
    dist = {s: 0}
    q = deque([s])
    while q:
        v = q.popleft()
        for w in adj[v]:
            if w not in dist:
                dist[w] = dist[v] + 1
                q.append(w)
    return dist


def all_shortest_paths(adj, s, t):
    """Every shortest s-t path as a tuple of nodes, by explicit enumeration."""
    dist = bfs_distances(adj, s)
    if t not in dist:
        return []
    paths = []

    def extend(path):
        v = path[-1]
        if v == t:
            paths.append(tuple(path))
            return
        for w in adj[v]:
            if dist.get(w) == dist[v] + 1 and dist[w] <= dist[t]:
                extend(path + [w])

    extend([s])
    return [p for p in paths if len(p) - 1 == dist[t]]


def brute_betweenness(nodes, adj):
    score = {v: 0.0 for v in nodes}
    for s, t in itertools.combinations(nodes, 2):
        paths = all_shortest_paths(adj, s, t)
        if not paths:
            continue
        for v in nodes:
            if v in (s, t):
                continue
            through = sum(1 for p in paths if v in p)
            score[v] += through / len(paths)
    return score


def brute_closeness(nodes, adj):
    out = {}
    for v in nodes:
        total = sum(bfs_distances(adj, v).values())
        out[v] = 1.0 / total if total else 0.0
    return out


def brute_clustering(nodes, adj):
    vals = []
    for v in nodes:
        nb = sorted(adj[v])
        d = len(nb)
        if d < 2:
            vals.append(0.0)
            continue
        links = sum(1 for a, b in itertools.combinations(nb, 2) if b in adj[a])
        vals.append(2.0 * links / (d * (d - 1)))
    return sum(vals) / len(vals)


def dense_eigenvector(nodes, adj):
    """Perron vector of the adjacency matrix of a connected graph, unit norm, nonnegative."""
    idx = {v: i for i, v in enumerate(nodes)}
    a = np.zeros((len(nodes), len(nodes)))
    for v in nodes:
        for w in adj[v]:
            a[idx[v], idx[w]] = 1.0
    vals, vecs = np.linalg.eigh(a)
    x = np.abs(vecs[:, int(np.argmax(vals))])
    return {v: float(x[idx[v]]) for v in nodes}, float(vals.max()), a


def random_walk_gap(nodes, adj):
    """Second-smallest eigenvalue of I - D^-1 A (same spectrum as the normalised Laplacian)."""
    n = len(nodes)
    idx = {v: i for i, v in enumerate(nodes)}
    m = np.eye(n)
    for v in nodes:
        d = len(adj[v])
        for w in adj[v]:
            m[idx[v], idx[w]] -= 1.0 / d
    vals = np.sort(np.real(np.linalg.eigvals(m)))
    return float(vals[1])


def all_assignments(k):
    return np.array(list(itertools.permutations(range(k))), dtype=int)


def brute_T(S, cb, x, cc, w, alpha):
    """Lexicographically smallest minimiser of the ranking objective over all permutations."""
    k = len(S)
    perms = all_assignments(k)
    ra, rb, rc = 1.0 / w[0], 1.0 / w[1], 1.0 / w[2]
    S, cb, x, cc = (np.asarray(v, dtype=float) for v in (S, cb, x, cc))
    t = perms.astype(float)
    cost = (ra * (t - cb) ** 2 + rb * (t - x) ** 2 + rc * (t - cc) ** 2 + alpha * (t - S) ** 2).sum(axis=1)
    best = cost.min()
    tol = 1e-9 * max(1.0, abs(best))
    ties = perms[cost <= best + tol]
    return tuple(int(v) for v in min(map(tuple, ties))), float(best)


def nearest_by_scan(sub, utilities):
    def hav(a, b):
        r = 6371.0088
        p1, p2 = math.radians(a[0]), math.radians(b[0])
        dp, dl = p2 - p1, math.radians(b[1] - a[1])
        h = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
        return 2 * r * math.asin(math.sqrt(h))

    best = None
    for u in utilities:
        d = hav((sub.lat, sub.lon), (u.lat, u.lon))
        if best is None or d < best[0] - 1e-12:
            best = (d, u.id)
    return best[1]
