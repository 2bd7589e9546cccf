import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gridnetsim.des import (
    EnqueueResult,
    EventQueue,
    Network,
    Packet,
    Router,
    SimParams,
    SimStats,
    Simulator,
    Stream,
    average_delay,
    benchmark_params,
    brancher_route,
    monitor_sample,
    router_enqueue,
    run_simulation,
    sample_truncated_exp,
    split_budget,
)
from gridnetsim.errors import BadDistribution, InvalidParams, UnknownNode
from gridnetsim.scenario import core_params, core_topology
from gridnetsim.topology import ElementKind, Node, Topology, TopologyKind, remove_node

from .conftest import case_topology


def chain(n_routers=1, forward=None):
    """gen -> r0 -> ... -> sink"""
    routers = ["r%d" % i for i in range(n_routers)]
    nodes = [Node("g", None, ElementKind.GENERATOR), Node("s", None, ElementKind.SINK)]
    nodes += [Node(r, None, ElementKind.ROUTER) for r in routers]
    hops = ["g"] + routers + ["s"]
    return Topology(nodes, list(zip(hops, hops[1:])), TopologyKind.CUSTOM, monitored=routers)


def branch_topo():
    nodes = [Node("g", None, ElementKind.GENERATOR), Node("r", None, ElementKind.ROUTER),
             Node("b", None, ElementKind.BRANCHER), Node("s0", None, ElementKind.SINK),
             Node("s1", None, ElementKind.SINK)]
    edges = [("g", "r"), ("r", "b"), ("b", "s0"), ("b", "s1")]
    return Topology(nodes, edges, TopologyKind.CUSTOM, branch_probs={("b", "s0"): 0.5, ("b", "s1"): 0.5})


def conservation_holds(stats):
    for s in stats.nodes.values():
        assert s.packets_in == s.packets_out + s.packets_dropped + s.residual, s.node


# parameters

@pytest.mark.parametrize("change", [
    {"port_rate": 0}, {"mean_packet_size": -1}, {"interarrival_cap": 0.0}, {"forward_prob": 0.0},
    {"forward_prob": 1.5}, {"queue_capacity": float("inf")}, {"size_dist": "pareto"}, {"seed": -1},
    {"forward_overrides": {"r": 0.0}}, {"packet_budget": 2.5},
])
def test_params_validation(change):
    with pytest.raises(InvalidParams):
        SimParams(**change)


def test_params_file_roundtrip(tmp_path):
    p = SimParams(port_rate=3.0, forward_overrides={"u": 0.5}, seed=9)
    path = tmp_path / "p.json"
    path.write_text(json.dumps(p.to_dict()))
    assert SimParams.from_file(path) == p
    with pytest.raises(InvalidParams):
        SimParams.from_dict({"port_rte": 1.0})


def test_defaults():
    p = SimParams()
    assert (p.mean_packet_size, p.interarrival_cap, p.port_rate, p.monitor_cap, p.service_log_interval) == (
        3.4e6, 0.05, 2.2, 20.0, 0.5)
    assert p.queue_capacity is None and p.forward_prob == 1.0


# randomness

def test_truncated_exp_statistics():
    rng = np.random.default_rng(1)
    draws = [sample_truncated_exp(2.0, None, rng) for _ in range(100_000)]
    assert abs(np.mean(draws) - 2.0) / 2.0 < 0.02
    capped = [sample_truncated_exp(1.0, 0.3, rng) for _ in range(10_000)]
    assert max(capped) <= 0.3
    with pytest.raises(InvalidParams):
        sample_truncated_exp(0.0, None, rng)


def test_streams_repeat_and_separate():
    a = [Stream(42, "r1", "service").next() for _ in range(1)]
    s1, s2 = Stream(42, "r1", "service"), Stream(42, "r1", "service")
    first = [s1.next() for _ in range(100)]
    assert first == [s2.next() for _ in range(100)]
    assert a[0] == first[0]
    other = Stream(42, "r2", "service")
    assert [other.next() for _ in range(5)] != first[:5]


@given(st.lists(st.integers(1, 3000), min_size=1, max_size=6), st.integers(0, 50))
def test_stream_block_draws_concatenate(chunks, head):
    ref = Stream(7, "x", "size", block=64)
    flat = [ref.next() for _ in range(head + sum(chunks))]
    s = Stream(7, "x", "size", block=64)
    got = [s.next() for _ in range(head)]
    for c in chunks:
        got.extend(s.take(c).tolist())
    assert got == flat


def test_brancher_route():
    rng = np.random.default_rng(5)
    assert {brancher_route([1.0], rng) for _ in range(100)} == {0}
    picks = [brancher_route([0.5, 0.5], rng) for _ in range(100_000)]
    assert abs(picks.count(0) / len(picks) - 0.5) <= 0.01
    with pytest.raises(BadDistribution):
        brancher_route([0.3, 0.3, 0.3], rng)
    with pytest.raises(BadDistribution):
        brancher_route([], rng)


def test_branch_split_in_network():
    p = benchmark_params(20_000).replace(port_rate=1e6)
    stats = run_simulation(branch_topo(), p, None)
    frac = stats.nodes["s0"].packets_in / 20_000
    assert abs(frac - 0.5) <= 0.01


# engine

def test_event_queue_orders_by_time_then_insertion():
    q = EventQueue()
    for t, tag in [(2.0, "c"), (1.0, "a"), (1.0, "b"), (0.5, "z")]:
        q.push(t, tag)
    assert [q.pop()[2] for _ in range(4)] == ["z", "a", "b", "c"]


@given(st.lists(st.floats(0, 100, allow_nan=False), min_size=1, max_size=60))
def test_simulator_never_goes_back(times):
    sim = Simulator()
    seen = []
    for t in times:
        sim.at(t, lambda: seen.append(sim.now))
    sim.run()
    assert seen == sorted(seen) and len(seen) == len(times)


def test_until_bounds_execution():
    sim = Simulator()
    fired = []
    for t in (1.0, 2.0, 3.0):
        sim.at(t, lambda t=t: fired.append(t))
    sim.run(2.0)
    assert fired == [1.0, 2.0] and sim.now == 2.0


# routers

def bare_router(capacity=None):
    sim = Simulator()
    return Router(sim, "r", SimParams(queue_capacity=capacity))


def test_enqueue_capacity_boundary():
    r = bare_router(1000)
    assert router_enqueue(r, Packet(0, 0.0, 900, "g", "f"), 0.0) == EnqueueResult.ACCEPTED
    assert router_enqueue(r, Packet(1, 0.0, 100, "g", "f"), 0.0) == EnqueueResult.ACCEPTED
    r = bare_router(1000)
    router_enqueue(r, Packet(0, 0.0, 950, "g", "f"), 0.0)
    assert router_enqueue(r, Packet(1, 0.0, 100, "g", "f"), 0.0) == EnqueueResult.DROPPED
    assert r.packets_dropped == 1
    r = bare_router()
    assert all(router_enqueue(r, Packet(i, 0.0, 10 ** 9, "g", "f"), 0.0) == EnqueueResult.ACCEPTED
               for i in range(50))


def test_monitor_sample_snapshot():
    r = bare_router()
    assert monitor_sample(r, 1.0) == (1.0, 0, 0)
    for i in range(3):
        router_enqueue(r, Packet(i, 0.0, 10, "g", "f"), 0.0)
    assert monitor_sample(r, 2.0) == (2.0, 30, 3)
    assert r.queue_samples == [(1.0, 0, 0), (2.0, 30, 3)]


def test_fifo_departures():
    sim = Simulator()
    r = Router(sim, "r", SimParams(port_rate=1.0, mean_packet_size=10))
    out = []

    class Catch:
        def put(self, pkt):
            out.append((sim.now, pkt.seq))

    r.out = Catch()
    r.put(Packet(0, 0.0, 10, "g", "f"))
    r.put(Packet(1, 0.0, 10, "g", "f"))
    sim.run()
    assert [seq for _, seq in out] == [0, 1]
    assert out[0][0] < out[1][0]


def test_forward_probability_statistics():
    p = benchmark_params(10_000).replace(port_rate=1e6, forward_overrides={"r0": 0.01})
    stats = run_simulation(chain(), p, None)
    r = stats.nodes["r0"]
    assert r.packets_out + r.packets_dropped == 10_000
    assert abs(r.packets_out / 10_000 - 0.01) <= 0.003
    full = run_simulation(chain(), benchmark_params(1000).replace(port_rate=1e6), None)
    assert full.nodes["r0"].packets_dropped == 0


def test_uncontended_chain_delivers_everything():
    p = benchmark_params(500).replace(port_rate=1e4)
    stats = run_simulation(chain(3), p, None)
    assert stats.nodes["s"].packets_in == stats.generated() == 500
    assert all(s.packets_dropped == 0 for s in stats.nodes.values())


def test_mm1_waiting_time():
    # rho = 0.5: exponential arrivals at rate 1, exponential service at rate 2
    p = SimParams(mean_packet_size=100, size_dist="constant", interarrival_mean=1.0, interarrival_cap=None,
                  port_rate=2.0, monitor_cap=None, service_log_interval=None, packet_budget=100_000, seed=3)
    stats = run_simulation(chain(), p, None)
    rho, mu = 0.5, 2.0
    assert average_delay(stats, "r0") == pytest.approx(rho / (mu * (1 - rho)), rel=0.15)


def test_average_delay_definition():
    stats = SimStats(1.0)
    from gridnetsim.des import NodeStats

    stats.nodes["r"] = NodeStats("r", "Router", wait_sum=4.0, processed=2)
    stats.nodes["idle"] = NodeStats("idle", "Router")
    assert average_delay(stats, "r") == 2.0
    assert average_delay(stats, "idle") == 0.0
    with pytest.raises(UnknownNode):
        average_delay(stats, "zz")


# whole runs

def test_until_zero_counts_nothing(star_500):
    stats = run_simulation(star_500, SimParams(), 0.0)
    assert all(s.packets_in == s.packets_out == 0 for s in stats.nodes.values())


def test_negative_until_and_missing_budget(star_500):
    with pytest.raises(InvalidParams):
        run_simulation(star_500, SimParams(), -1.0)
    with pytest.raises(InvalidParams):
        run_simulation(star_500, SimParams(), None)


def test_default_run_conserves_and_stays_lossless(star_500):
    stats = run_simulation(star_500, SimParams(), 30.0)
    conservation_holds(stats)
    assert all(s.packets_dropped == 0 for s in stats.nodes.values())
    for sink in stats.of_kind(ElementKind.SINK):
        assert all(d >= 0 for d in sink.delays)
    for s in stats.nodes.values():
        times = [t for t, _, _ in s.queue_samples]
        assert times == sorted(times) and len(set(times)) == len(times)


def test_runs_are_byte_identical(star_500):
    a = run_simulation(star_500, SimParams(seed=5), 20.0)
    b = run_simulation(star_500, SimParams(seed=5), 20.0)
    assert a.to_json() == b.to_json() and a.to_csv() == b.to_csv()
    c = run_simulation(star_500, SimParams(seed=6), 20.0)
    assert c.to_json() != a.to_json()


def test_lazy_and_eager_sources_agree(star_500):
    p = SimParams(seed=2)
    lazy = Network(star_500, p).run(15.0)
    eager = Network(star_500, p, lazy_sources=False).run(15.0)
    assert lazy.to_csv() == eager.to_csv()
    for k in lazy.nodes:
        assert lazy.nodes[k].delays == eager.nodes[k].delays
        assert lazy.nodes[k].queue_samples == eager.nodes[k].queue_samples


def test_finite_queue_drops_and_conserves(star_500):
    p = SimParams(queue_capacity=2e7, seed=1)
    stats = run_simulation(star_500, p, 10.0)
    conservation_holds(stats)
    assert sum(s.packets_dropped for s in stats.nodes.values()) > 0


def test_sink_delay_is_arrival_minus_creation():
    p = benchmark_params(10).replace(port_rate=1e6, mean_packet_size=1e6)
    stats = run_simulation(chain(), p, None)
    delays = stats.nodes["s"].delays
    assert len(delays) == 10 and all(0 <= d < 1e-3 for d in delays)


def test_collect_is_repeatable(star_500):
    net = Network(star_500, SimParams())
    first = net.run(5.0)
    assert net.collect().to_json() == first.to_json()


@given(st.floats(0.005, 0.05))
def test_halving_the_cap_never_reduces_load(cap):
    topo = chain()
    base = SimParams(interarrival_cap=cap, seed=4, monitor_cap=None, service_log_interval=None)
    a = run_simulation(topo, base, 5.0).generated()
    b = run_simulation(topo, base.replace(interarrival_cap=cap / 2), 5.0).generated()
    assert b >= a


def test_dead_end_router_drops():
    topo = remove_node(chain(2), "r1")
    stats = run_simulation(topo, benchmark_params(50).replace(port_rate=1e4), None)
    r = stats.nodes["r0"]
    assert r.packets_dropped == 50 and r.packets_out == 0


def test_stats_serialisation_roundtrip(star_500):
    stats = run_simulation(star_500, SimParams(), 3.0)
    again = SimStats.from_json(stats.to_json())
    assert again.to_json() == stats.to_json()
    header = stats.to_csv().splitlines()[0]
    assert header == "id,in,out,dropped,mean_delay"


def test_split_budget():
    assert split_budget(7, ["a", "b", "c"]) == {"a": 3, "b": 2, "c": 2}
    assert split_budget(None, ["a"]) == {"a": None}


def test_benchmark_budget_respected():
    for case, n in (("500", 481), ("2000", 2449)):
        stats = run_simulation(case_topology(case, "star"), benchmark_params(n), None)
        assert stats.generated() == stats.delivered() == n


def test_core_fixture_delivers_everything():
    stats = run_simulation(core_topology(), core_params(0), None)
    assert stats.generated() == stats.delivered() == 2000
    conservation_holds(stats)
