import csv
import json
import subprocess
import sys

import pytest

from gridnetsim.bridge import BridgePlan, Peer, find_free_base_port
from gridnetsim.cli import main
from gridnetsim.topology import Topology

from .conftest import case_topology
from .test_scenario import region_case


def run(argv, out):
    return main(list(argv) + ["--out", str(out)])


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_topology_summary(tmp_path, capsys):
    edges = tmp_path / "edges.tsv"
    assert run(["topology", "--case", "500", "--export-edges", str(edges)], tmp_path) == 0
    first = capsys.readouterr().out.splitlines()[0]
    assert first == "Star topology: 213 nodes, %d edges" % len(case_topology("500", "star").edges)
    again = Topology.from_edge_list(edges.read_text())
    assert again == case_topology("500", "star")


def test_topology_metrics_table(tmp_path):
    assert run(["topology", "--case", "500", "--kind", "radial", "--metrics"], tmp_path) == 0
    table = rows(tmp_path / "centrality.csv")
    assert len(table) == len(case_topology("500", "radial").routers)
    assert json.loads((tmp_path / "manifest.json").read_text())["kind"] == "Radial"


def test_radial_without_transmission_exits_2(tmp_path):
    doc = region_case(2)
    doc["substations"] = [s for s in doc["substations"] if s["type"] == "gen"]
    case = tmp_path / "case.json"
    case.write_text(json.dumps({"c": doc}))
    assert run(["topology", "--case", str(case), "--kind", "radial"], tmp_path) == 2
    assert run(["topology", "--case", "no-such-case"], tmp_path) == 2


def test_simulate_zero_horizon(tmp_path):
    assert run(["simulate", "--case", "500", "--until", "0"], tmp_path) == 0
    table = rows(tmp_path / "stats.csv")
    assert table and all(r["in"] == r["out"] == r["dropped"] == "0" for r in table)


def test_simulate_outputs_are_repeatable(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert run(["simulate", "--case", "500", "--until", "20", "--format", "json"], out) == 0
    assert (a / "stats.json").read_text() == (b / "stats.json").read_text()
    ma = json.loads((a / "manifest.json").read_text())
    mb = json.loads((b / "manifest.json").read_text())
    ma.pop("wall_clock"), mb.pop("wall_clock")
    assert ma == mb and ma["seed"] == 42


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("GRIDNETSIM_OUT", str(tmp_path / "env"))
    assert main(["simulate", "--case", "500", "--until", "1"]) == 0
    assert (tmp_path / "env" / "stats.csv").exists()


def test_dos_command(tmp_path):
    assert run(["dos", "--case", "500", "--target", "Utility 2", "--until", "10"], tmp_path) == 0
    doc = json.loads((tmp_path / "dos.json").read_text())
    assert doc["target"] == "Utility 2" and doc["alpha0"] is not None
    assert run(["dos", "--case", "500", "--target", "Utility 99", "--until", "10"], tmp_path) == 2


def test_sweep_replay_2000(tmp_path):
    assert run(["sweep", "--case", "2000", "--fixtures", "bundled"], tmp_path) == 0
    table = rows(tmp_path / "severity.csv")
    assert len(table) == 20
    assert len({r["status"] for r in table}) == 6


def test_rank_and_classify(tmp_path, capsys):
    assert run(["rank", "--case", "2000", "--fixtures", "bundled", "--sweep", "--pinned"], tmp_path) == 0
    assert len(rows(tmp_path / "ranks.csv")) == 20
    assert "alpha0" in capsys.readouterr().out
    assert run(["classify", "--case", "10k", "--kind", "radial", "--fixtures", "bundled"], tmp_path) == 0
    assert len(rows(tmp_path / "severity.csv")) > 0
    assert run(["classify", "--case", "500"], tmp_path) == 2


def test_hybrid_command(tmp_path):
    assert run(["hybrid", "--case", "2000", "--fixtures", "bundled", "--simulate", "--until", "5"], tmp_path) == 0
    assert len(rows(tmp_path / "hybrid_decisions.csv")) == 20
    topo = Topology.from_edge_list((tmp_path / "hybrid_edges.tsv").read_text())
    topo.validate()
    assert (tmp_path / "stats.csv").exists()


def test_compare_core(tmp_path, capsys):
    assert run(["compare-core", "--seeds", "3", "--packets-per-generator", "200"], tmp_path) == 0
    assert capsys.readouterr().out.strip().endswith("stable")
    assert len(rows(tmp_path / "core_order.csv")) == 3


def test_bridge_run_against_peer(tmp_path, capsys):
    topo = case_topology("500", "star")
    nodes = topo.utilities + topo.regulatories
    base = find_free_base_port(len(nodes))
    with Peer(BridgePlan(tuple(nodes), base_port=base)):
        code = run(["bridge-run", "--case", "500", "--packets", "300", "--drain", "--base-port", str(base)],
                   tmp_path)
    assert code == 0
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["bridge"]["sent"] == manifest["bridge"]["reinjected"]
    assert "generated 300" in capsys.readouterr().out


def test_bridge_run_without_peer_fails(tmp_path):
    base = find_free_base_port(5)
    code = run(["bridge-run", "--case", "500", "--packets", "10", "--drain", "--base-port", str(base),
                "--timeout", "1"], tmp_path)
    assert code not in (0, 2)


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "gridnetsim.cli", "topology", "--case", "2000", "--kind", "radial"],
                          capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0
    assert proc.stdout.startswith("Radial topology: 1271 nodes")


def test_peer_command_reports_counts(tmp_path):
    base = find_free_base_port(1)
    proc = subprocess.Popen([sys.executable, "-m", "gridnetsim.cli", "bridge-peer", "--nodes", "x",
                             "--base-port", str(base), "--duration", "1"],
                            stdout=subprocess.PIPE, text=True)
    out, _ = proc.communicate(timeout=60)
    assert proc.returncode == 0
    assert out.splitlines()[-1] == "%d 0 0" % base


@pytest.mark.parametrize("argv", [["simulate", "--case", "500", "--until", "-1"],
                                  ["rank", "--case", "500", "--fixtures", "bundled", "--weights", "1,1"]])
def test_bad_arguments_exit_2(tmp_path, argv):
    assert run(argv, tmp_path) == 2
