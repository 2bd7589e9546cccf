"""Deterministic synthetic stand-ins for the ACTIVSg500/2000/10k entity sets.

Entity totals and per-utility substation counts follow the published case
statistics bundled in ``data/``; coordinates are synthetic.  Each utility sits
on a lat/lon grid and its substations are scattered within a small disc so the
geographic nearest-utility rule agrees with the assigned labels.
"""

from __future__ import annotations

import csv
import json
import math
from importlib import resources

import numpy as np

CASE_TOTALS = {
    "ACTIVSg500": {"generation": 31, "transmission": 177, "utility": 4, "regulatory": 1},
    "ACTIVSg2000": {"generation": 188, "transmission": 1062, "utility": 20, "regulatory": 1},
    "ACTIVSg10k": {"generation": 851, "transmission": 3921, "utility": 80, "regulatory": 20},
}
CASE_TABLE = {"ACTIVSg500": "500", "ACTIVSg2000": "2000", "ACTIVSg10k": "10k"}
ALIASES = {"500": "ACTIVSg500", "2000": "ACTIVSg2000", "10k": "ACTIVSg10k"}

# Transmission counts for the 500 case: one fewer than the radial losses
# on the largest utility, so that totals land on 31 / 177.
_TRANS_500 = [56, 42, 36, 43]
_SEED = {"ACTIVSg500": 500, "ACTIVSg2000": 2000, "ACTIVSg10k": 10000}
_GRID_ORIGIN = (30.0, -100.0)
_LAT_STEP, _LON_STEP, _SPREAD = 1.0, 1.3, 0.3


def _severity_rows(case: str):
    name = "severity_%s.csv" % CASE_TABLE[case]
    with resources.files("gridnetsim").joinpath("data", name).open("r", encoding="utf-8") as fh:
        return [r for r in csv.DictReader(fh) if r["topology"] == "star"]


def _largest_remainder(total: int, weights: list[int]) -> list[int]:
    whole = sum(weights)
    quotas = [total * w / whole for w in weights]
    base = [math.floor(q) for q in quotas]
    order = sorted(range(len(weights)), key=lambda i: (-(quotas[i] - base[i]), i))
    for i in order[: total - sum(base)]:
        base[i] += 1
    return base


def _counts(case: str):
    rows = sorted(_severity_rows(case), key=lambda r: int(r["utility"]))
    subs = [int(r["substations_lost"]) for r in rows]
    regs = [r["regulatory"] for r in rows]
    totals = CASE_TOTALS[case]
    missing = totals["generation"] + totals["transmission"] - sum(subs)
    for i in range(missing):
        subs[i] += 1
    if case == "ACTIVSg500":
        trans = list(_TRANS_500)
    else:
        trans = _largest_remainder(totals["transmission"], subs)
        for i, n in enumerate(subs):
            if n and trans[i] == 0:
                donor = max(range(len(trans)), key=lambda j: (trans[j], -j))
                trans[donor] -= 1
                trans[i] = 1
    return subs, trans, regs


def generate_case(case: str) -> dict:
    """Return the JSON-ready case object for one of the three named cases."""
    subs, trans, regs = _counts(case)
    rng = np.random.default_rng(_SEED[case])
    k = len(subs)
    cols = math.ceil(math.sqrt(k))
    utilities, substations = [], []
    util_pos = []
    for u in range(k):
        lat = _GRID_ORIGIN[0] + (u // cols) * _LAT_STEP
        lon = _GRID_ORIGIN[1] + (u % cols) * _LON_STEP
        util_pos.append((lat, lon))
    sub_no = 0
    for u in range(k):
        lat0, lon0 = util_pos[u]
        uid = "Utility %d" % u
        rec = {"id": uid, "lat": round(lat0, 6), "lon": round(lon0, 6)}
        if regs[u]:
            rec["regulatory"] = "Regulatory %d" % int(regs[u])
        utilities.append(rec)
        for j in range(subs[u]):
            radius = _SPREAD * math.sqrt(rng.random())
            theta = 2 * math.pi * rng.random()
            sub_no += 1
            substations.append({
                "id": "Sub %d" % sub_no,
                "type": "trans" if j < trans[u] else "gen",
                "utility": uid,
                "lat": round(lat0 + radius * math.sin(theta), 6),
                "lon": round(lon0 + radius * math.cos(theta), 6),
            })
    reg_ids = sorted({int(r) for r in regs if r}) or [0]
    regulatories = []
    for r in reg_ids:
        members = [util_pos[u] for u in range(k) if not regs[u] or int(regs[u]) == r]
        lat = sum(p[0] for p in members) / len(members)
        lon = sum(p[1] for p in members) / len(members)
        regulatories.append({"id": "Regulatory %d" % r, "lat": round(lat, 6), "lon": round(lon, 6)})
    return {"substations": substations, "utilities": utilities, "regulatories": regulatories}


def generate_all() -> tuple[dict, dict]:
    cases = {name: generate_case(name) for name in CASE_TOTALS}
    return cases, {name: dict(t) for name, t in CASE_TOTALS.items()}


def dump(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def bundled_path(name: str):
    return resources.files("gridnetsim").joinpath("data", name)


def main() -> None:
    cases, manifest = generate_all()
    with open(bundled_path("cases.json"), "w", encoding="utf-8") as fh:
        fh.write(dump(cases))
    with open(bundled_path("manifest.json"), "w", encoding="utf-8") as fh:
        fh.write(dump(manifest))


if __name__ == "__main__":
    main()
