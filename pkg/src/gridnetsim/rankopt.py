"""Ranking reconciliation and DoS severity classification.

A consensus ranking T over k utilities trades off three centrality rankings
(weighted by 1/a, 1/b, 1/c) against the simulation ranking S (weighted by a
penalty alpha).  Because T must be a permutation the problem is a linear
assignment: utility v placed at rank r costs the weighted squared distance
of r to each reference rank.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from enum import IntEnum
from importlib import resources
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    InvalidParams,
    InvalidWeights,
    MissingUtility,
    NoConvergence,
    TooFewUtilities,
)
from .metrics import RankVector, rank_from_scores
from .topology import natural_key

WEIGHT_TOL = 1e-9
TIE_RTOL = 1e-9


class Severity(IntEnum):
    ELEVATED = 1
    EXTREME = 2
    HIGH = 3
    CRITICAL = 4
    SEVERE = 5
    CATASTROPHIC = 6

    @property
    def label(self) -> str:
        return "%s (%d)" % (self.name.capitalize(), self.value)


@dataclass(frozen=True)
class Weights:
    a: float
    b: float
    c: float

    def __post_init__(self):
        if min(self.a, self.b, self.c) <= 0:
            raise InvalidWeights("weights must be positive: %r" % (self,))
        if abs(self.a + self.b + self.c - 1.0) > WEIGHT_TOL:
            raise InvalidWeights("weights must sum to 1: %r" % (self,))
        if self.c > self.b + WEIGHT_TOL or self.b > self.a + WEIGHT_TOL:
            raise InvalidWeights("weights must satisfy c <= b <= a: %r" % (self,))

    def reciprocals(self) -> tuple[float, float, float]:
        return (1.0 / self.a, 1.0 / self.b, 1.0 / self.c)


DEFAULT_WEIGHTS = Weights(0.97, 0.02, 0.01)


def _as_ranks(r) -> dict[str, int]:
    if isinstance(r, RankVector):
        return dict(r.ranking)
    return {str(k): int(v) for k, v in dict(r).items()}


@dataclass(frozen=True)
class RankingInputs:
    """Simulation rank S and the three centrality ranks over one utility set."""

    S: Mapping[str, int]
    betweenness: Mapping[str, int]
    eigenvector: Mapping[str, int]
    closeness: Mapping[str, int]

    def __post_init__(self):
        ranks = [_as_ranks(x) for x in (self.S, self.betweenness, self.eigenvector, self.closeness)]
        keys = set(ranks[0])
        k = len(keys)
        if k == 0:
            raise InvalidParams("ranking inputs are empty")
        for r in ranks:
            if set(r) != keys:
                raise InvalidParams("rank vectors cover different utilities")
            if sorted(r.values()) != list(range(k)):
                raise InvalidParams("rank vector is not a permutation of 0..k-1")
        object.__setattr__(self, "S", ranks[0])
        object.__setattr__(self, "betweenness", ranks[1])
        object.__setattr__(self, "eigenvector", ranks[2])
        object.__setattr__(self, "closeness", ranks[3])

    @property
    def nodes(self) -> list[str]:
        return sorted(self.S, key=natural_key)

    @property
    def k(self) -> int:
        return len(self.S)

    def arrays(self):
        nodes = self.nodes
        pick = lambda m: np.array([m[v] for v in nodes], dtype=float)  # noqa: E731
        return nodes, pick(self.S), pick(self.betweenness), pick(self.eigenvector), pick(self.closeness)

    def restricted(self, keep: Iterable[str]) -> "RankingInputs":
        """Re-rank every vector over a subset, preserving relative order."""
        keep = list(keep)

        def squeeze(m):
            return rank_from_scores({v: -m[v] for v in keep}, keep).as_dict()

        return RankingInputs(squeeze(self.S), squeeze(self.betweenness), squeeze(self.eigenvector),
                             squeeze(self.closeness))


# assignment

def hungarian(cost: np.ndarray):
    """Minimum-cost perfect assignment on a square matrix.

    Returns (col_of_row, u, v) with reduced costs cost[i, j] - u[i] - v[j] >= 0
    and equality on the assignment.
    """
    cost = np.asarray(cost, dtype=float)
    n = cost.shape[0]
    if cost.shape != (n, n):
        raise InvalidParams("cost matrix must be square")
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    owner = np.zeros(n + 1, dtype=int)  # owner[j]: 1-based row holding column j
    way = np.zeros(n + 1, dtype=int)
    for i in range(1, n + 1):
        owner[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            cur = cost[i0 - 1] - u[i0] - v[1:]
            free = ~used[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            masked = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(masked)) + 1
            delta = masked[j1 - 1]
            u[owner[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1
    col_of_row = np.empty(n, dtype=int)
    col_of_row[owner[1:] - 1] = np.arange(n)
    return col_of_row, u[1:], v[1:]


def _rematch(row, tight, match_col, row_of_col, blocked_rows, blocked_cols, seen):
    """Kuhn step: find a tight column for ``row`` avoiding blocked rows/columns."""
    for col in tight[row]:
        if col in blocked_cols or col in seen:
            continue
        seen.add(col)
        holder = row_of_col[col]
        if holder is None or (holder not in blocked_rows and
                              _rematch(holder, tight, match_col, row_of_col, blocked_rows, blocked_cols, seen)):
            match_col[row] = col
            row_of_col[col] = row
            return True
    return False


def lex_smallest_assignment(cost: np.ndarray) -> np.ndarray:
    """Optimal assignment whose column vector (row order) is lexicographically smallest."""
    cost = np.asarray(cost, dtype=float)
    n = cost.shape[0]
    cols, u, v = hungarian(cost)
    reduced = cost - u[:, None] - v[None, :]
    tol = TIE_RTOL * max(1.0, float(np.max(np.abs(cost))))
    tight = [list(np.flatnonzero(reduced[i] <= tol)) for i in range(n)]
    match_col = [int(c) for c in cols]
    row_of_col: list = [None] * n
    for r, c in enumerate(match_col):
        row_of_col[c] = r
    fixed_cols: set = set()
    for row in range(n):
        current = match_col[row]
        for col in tight[row]:
            if col >= current:
                break
            if col in fixed_cols:
                continue
            # try handing ``col`` to ``row``; its holder must move elsewhere
            holder = row_of_col[col]
            trial_match = list(match_col)
            trial_rows = list(row_of_col)
            trial_match[row] = col
            trial_rows[col] = row
            trial_rows[current] = None
            blocked_rows = set(range(row + 1))
            if _rematch(holder, tight, trial_match, trial_rows, blocked_rows, fixed_cols | {col}, set()):
                match_col, row_of_col = trial_match, trial_rows
                break
        fixed_cols.add(match_col[row])
    return np.array(match_col, dtype=int)


def cost_matrix(inputs: RankingInputs, w: Weights, alpha: float) -> np.ndarray:
    _, s, cb, x, cc = inputs.arrays()
    ra, rb, rc = w.reciprocals()
    r = np.arange(inputs.k, dtype=float)[None, :]
    return (ra * (r - cb[:, None]) ** 2 + rb * (r - x[:, None]) ** 2 + rc * (r - cc[:, None]) ** 2
            + alpha * (r - s[:, None]) ** 2)


def objective(inputs: RankingInputs, w: Weights, alpha: float, T: Mapping[str, int]) -> float:
    nodes, s, cb, x, cc = inputs.arrays()
    t = np.array([T[v] for v in nodes], dtype=float)
    ra, rb, rc = w.reciprocals()
    terms = ra * (t - cb) ** 2 + rb * (t - x) ** 2 + rc * (t - cc) ** 2 + alpha * (t - s) ** 2
    return math.fsum(terms)


def solve_T(inputs: RankingInputs, w: Weights = DEFAULT_WEIGHTS, alpha: float = 0.0) -> RankVector:
    if not isinstance(w, Weights):
        raise InvalidWeights("weights must be a Weights value")
    if not (alpha >= 0 and math.isfinite(alpha)):
        raise InvalidParams("alpha must be finite and >= 0")
    cols = lex_smallest_assignment(cost_matrix(inputs, w, alpha))
    return RankVector({v: int(cols[i]) for i, v in enumerate(inputs.nodes)})


def weight_grid(step: float = 0.01):
    """All (a, b, c) on the simplex grid with c <= b <= a and each >= step."""
    units = round(1.0 / step)
    for cu in range(1, units):
        for bu in range(cu, units):
            au = units - bu - cu
            if au < bu:
                break
            yield au, bu, cu


def optimize_weights(inputs: RankingInputs, step: float = 0.01) -> tuple[Weights, RankVector]:
    """Grid search of (a, b, c) minimising the objective at alpha = 0.

    Ties go to the lexicographically largest (a, b).
    """
    units = round(1.0 / step)
    best = None
    for au, bu, cu in weight_grid(step):
        w = Weights(au / units, bu / units, cu / units)
        T = solve_T(inputs, w, 0.0)
        val = objective(inputs, w, 0.0, T)
        if best is None:
            best = (val, (au, bu), w, T)
            continue
        tol = TIE_RTOL * max(1.0, abs(best[0]))
        if val < best[0] - tol or (val <= best[0] + tol and (au, bu) > best[1]):
            best = (min(val, best[0]), (au, bu), w, T)
    return best[2], best[3]


@dataclass(frozen=True)
class AlphaPair:
    alpha0: float
    alpha1: float


def max_deviation(T: RankVector, S: Mapping[str, int]) -> int:
    return max(abs(T[v] - S[v]) for v in S)


def _threshold_indices(inputs: RankingInputs, w: Weights, step: float) -> list[float]:
    """Alpha values where the cost ordering of a pair of utilities flips."""
    _, s, cb, x, cc = inputs.arrays()
    ra, rb, rc = w.reciprocals()
    base = ra * cb + rb * x + rc * cc
    out = []
    k = inputs.k
    for i in range(k):
        for j in range(i + 1, k):
            ds = s[i] - s[j]
            if ds != 0:
                t = (base[j] - base[i]) / ds
                if t > 0:
                    out.append(t)
    return out


def pin_bound(inputs: RankingInputs, w: Weights, step: float) -> float:
    """Grid alpha beyond which T no longer changes."""
    thresholds = _threshold_indices(inputs, w, step)
    top = max(thresholds, default=0.0)
    return (math.floor(top / step) + 2) * step


def alpha_sweep(inputs: RankingInputs, w: Weights = DEFAULT_WEIGHTS, grid_step: float = 0.05,
                alpha_max: float | None = None, pinned: bool = False) -> AlphaPair:
    """Smallest grid alphas giving T = S (alpha0) and max|T - S| <= 1 (alpha1).

    ``alpha_max`` defaults to 10^3 * grid_step; ``pinned`` replaces it with the
    pin bound.  T is constant between order-flip thresholds, so only grid
    points that bracket a threshold need solving.
    """
    if not grid_step > 0:
        raise InvalidParams("grid_step must be positive")
    if pinned:
        alpha_max = pin_bound(inputs, w, grid_step)
    elif alpha_max is None:
        alpha_max = 1e3 * grid_step
    last = int(math.floor(alpha_max / grid_step + 1e-9))
    candidates = {0}
    for t in _threshold_indices(inputs, w, grid_step):
        base = int(math.floor(t / grid_step))
        candidates.update(i for i in (base - 1, base, base + 1, base + 2) if 0 <= i <= last)
    found = {}
    for idx in sorted(candidates):
        alpha = round(idx * grid_step, 12)
        dev = max_deviation(solve_T(inputs, w, alpha), inputs.S)
        if dev <= 1 and "alpha1" not in found:
            found["alpha1"] = alpha
        if dev == 0:
            found["alpha0"] = alpha
            break
    if "alpha0" not in found or "alpha1" not in found:
        raise NoConvergence("no grid alpha up to %g makes T match S" % (last * grid_step))
    return AlphaPair(found["alpha0"], found["alpha1"])


def deviation_profile(inputs: RankingInputs, w: Weights, grid_step: float, count: int) -> list[int]:
    """max|T - S| at the first ``count`` grid points (linear scan)."""
    return [max_deviation(solve_T(inputs, w, round(i * grid_step, 12)), inputs.S) for i in range(count)]


def simulation_rank(stats, utilities: Iterable[str]) -> RankVector:
    """Rank 0 = largest average waiting delay."""
    from .des import average_delay

    utilities = list(utilities)
    delays = {}
    for u in utilities:
        if u not in stats.nodes:
            raise MissingUtility("no delay recorded for utility %r" % u)
        delays[u] = average_delay(stats, u)
    return rank_from_scores(delays, utilities)


# severity

@dataclass
class SeverityRecord:
    utility: str
    alpha0: float
    alpha1: float
    substations_lost: int
    regulatory_affected: str | None = None
    severity: Severity | None = None
    score: float | None = None


CLASS_REMAINDER_ORDER = (6, 1, 5, 2, 4, 3)
DEFAULT_CLASS_WEIGHTS = (0.6, 0.3, 0.1)


def class_sizes(k: int) -> dict[int, int]:
    if k < 6:
        raise TooFewUtilities("need at least six utilities, got %d" % k)
    sizes = {c: k // 6 for c in range(1, 7)}
    for c in CLASS_REMAINDER_ORDER[: k % 6]:
        sizes[c] += 1
    return sizes


def _minmax(values: Sequence[float]) -> list[float]:
    lo, hi = min(values), max(values)
    if hi == lo:
        return [0.0] * len(values)
    return [(v - lo) / (hi - lo) for v in values]


def classify_severity(records: Iterable, weights: Sequence[float] = DEFAULT_CLASS_WEIGHTS) -> list[SeverityRecord]:
    """Composite-score ranking split into six contiguous classes, most severe first."""
    recs = []
    for r in records:
        if isinstance(r, SeverityRecord):
            recs.append(SeverityRecord(r.utility, r.alpha0, r.alpha1, r.substations_lost, r.regulatory_affected))
        else:
            u, a0, a1, lost = r[:4]
            recs.append(SeverityRecord(str(u), float(a0), float(a1), int(lost)))
    sizes = class_sizes(len(recs))
    w1, w2, w3 = weights
    z0 = _minmax([r.alpha0 for r in recs])
    zl = _minmax([r.substations_lost for r in recs])
    z1 = _minmax([r.alpha1 for r in recs])
    for r, a, b, c in zip(recs, z0, zl, z1):
        r.score = w1 * a + w2 * b + w3 * c
    ordered = sorted(recs, key=lambda r: (-r.score, natural_key(r.utility)))
    pos = 0
    for cls in range(6, 0, -1):
        for r in ordered[pos:pos + sizes[cls]]:
            r.severity = Severity(cls)
        pos += sizes[cls]
    return ordered


@dataclass
class SeverityReport:
    case: str
    kind: str
    records: list[SeverityRecord] = field(default_factory=list)

    def severity_map(self) -> dict[str, int | None]:
        return {r.utility: (int(r.severity) if r.severity is not None else None) for r in self.records}

    def record(self, utility: str) -> SeverityRecord:
        for r in self.records:
            if r.utility == utility:
                return r
        raise MissingUtility("utility %r not in report" % utility)

    def sorted_records(self) -> list[SeverityRecord]:
        return sorted(self.records, key=lambda r: (-(r.severity or 0), natural_key(r.utility)))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["status", "utility", "alpha0", "alpha1", "substations_lost", "regulatory"])
        for r in self.sorted_records():
            w.writerow([r.severity.label if r.severity else "", r.utility, repr(r.alpha0), repr(r.alpha1),
                        r.substations_lost, r.regulatory_affected or ""])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({
            "case": self.case,
            "kind": self.kind,
            "records": [
                {"utility": r.utility, "alpha0": r.alpha0, "alpha1": r.alpha1,
                 "substations_lost": r.substations_lost, "regulatory": r.regulatory_affected,
                 "severity": int(r.severity) if r.severity else None}
                for r in self.sorted_records()
            ],
        }, indent=1) + "\n"


# bundled reference tables

_CASE_SUFFIX = {"ACTIVSg500": "500", "ACTIVSg2000": "2000", "ACTIVSg10k": "10k",
                "500": "500", "2000": "2000", "10k": "10k"}


def _utility_id(raw: str) -> str:
    raw = raw.strip()
    return raw if not raw.isdigit() else "Utility %s" % raw


def _read_table(case: str, prefix: str, path=None):
    if path is None:
        name = "%s_%s.csv" % (prefix, _CASE_SUFFIX[case])
        handle = resources.files("gridnetsim").joinpath("data", name).open("r", encoding="utf-8")
    else:
        handle = open(path, "r", encoding="utf-8")
    with handle as fh:
        return list(csv.DictReader(fh))


def load_rank_fixture(case: str, kind: str, path=None) -> RankingInputs:
    rows = [r for r in _read_table(case, "ranks", path) if r["topology"].lower() == kind.lower()]
    if not rows:
        raise InvalidParams("no %s rows in rank fixture for %s" % (kind, case))
    pick = lambda col: {_utility_id(r["utility"]): int(r[col]) for r in rows}  # noqa: E731
    return RankingInputs(pick("sim"), pick("betweenness"), pick("eigenvector"), pick("closeness"))


def load_severity_fixture(case: str, kind: str, path=None) -> list[SeverityRecord]:
    rows = [r for r in _read_table(case, "severity", path) if r["topology"].lower() == kind.lower()]
    out = []
    for r in rows:
        reg = r.get("regulatory") or None
        out.append(SeverityRecord(
            _utility_id(r["utility"]), float(r["alpha0"]), float(r["alpha1"]), int(r["substations_lost"]),
            None if reg is None else "Regulatory %s" % reg if reg.isdigit() else reg,
            Severity(int(r["severity"])) if r.get("severity") else None,
        ))
    return sorted(out, key=lambda r: natural_key(r.utility))
