"""Discrete-event engine and network elements.

The engine is a plain min-heap of ``(time, seq, callback, daemon)`` entries;
``seq`` keeps equal-time events in insertion order.  Daemon events (monitor
samples, service logs) never keep a drain-mode run alive.

Packet generators are arrival processes attached to the router they feed.
With unbounded queues the router pulls arrivals when it is ready to serve
instead of receiving one heap event per packet; arrivals still waiting at
the horizon are counted at the end.  With a finite queue every arrival is
delivered as an event so the capacity check sees it at its arrival time.
"""

from __future__ import annotations

import bisect
import csv
import dataclasses
import hashlib
import heapq
import io
import json
import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from itertools import count
from typing import Mapping

import numpy as np

from .errors import BadDistribution, InvalidParams, InvalidTopology, UnknownNode
from .topology import ElementKind, Topology, natural_key

_US = 1e6
_CHUNK = 256
_COUNT_CHUNK = 8192
INF = math.inf


@dataclass(frozen=True)
class SimParams:
    mean_packet_size: float = 3.4e6
    size_dist: str = "exponential"
    interarrival_mean: float = 0.05
    interarrival_cap: float | None = 0.05
    interarrival_dist: str = "exponential"
    port_rate: float = 2.2
    monitor_cap: float | None = 20.0
    service_log_interval: float | None = 0.5
    queue_capacity: float | None = None
    forward_prob: float = 1.0
    forward_overrides: Mapping[str, float] = field(default_factory=dict)
    packet_budget: int | None = None
    seed: int = 42

    def __post_init__(self):
        positive = {
            "mean_packet_size": self.mean_packet_size,
            "interarrival_mean": self.interarrival_mean,
            "port_rate": self.port_rate,
        }
        optional = {
            "interarrival_cap": self.interarrival_cap,
            "monitor_cap": self.monitor_cap,
            "service_log_interval": self.service_log_interval,
            "queue_capacity": self.queue_capacity,
        }
        for name, val in list(positive.items()) + [(k, v) for k, v in optional.items() if v is not None]:
            if not (isinstance(val, (int, float)) and math.isfinite(val) and val > 0):
                raise InvalidParams("%s must be a positive number, got %r" % (name, val))
        if self.size_dist not in ("exponential", "constant"):
            raise InvalidParams("size_dist must be 'exponential' or 'constant'")
        if self.interarrival_dist not in ("exponential", "constant"):
            raise InvalidParams("interarrival_dist must be 'exponential' or 'constant'")
        for name, p in [("forward_prob", self.forward_prob), *self.forward_overrides.items()]:
            if not (0 < p <= 1):
                raise InvalidParams("forward probability for %s must be in (0, 1], got %r" % (name, p))
        if self.packet_budget is not None and (int(self.packet_budget) != self.packet_budget or self.packet_budget < 0):
            raise InvalidParams("packet_budget must be a non-negative integer")
        if not (isinstance(self.seed, int) and 0 <= self.seed < 2 ** 64):
            raise InvalidParams("seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "forward_overrides", dict(self.forward_overrides))

    def forward_prob_of(self, router: str) -> float:
        return self.forward_overrides.get(router, self.forward_prob)

    def replace(self, **changes) -> "SimParams":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["forward_overrides"] = {k: self.forward_overrides[k] for k in sorted(self.forward_overrides, key=natural_key)}
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "SimParams":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidParams("unknown parameter(s): %s" % ", ".join(sorted(unknown)))
        return cls(**d)

    @classmethod
    def from_file(cls, path, **overrides) -> "SimParams":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidParams("%s: %s" % (path, exc)) from None
        d.update(overrides)
        return cls.from_dict(d)


def benchmark_params(packets: int, seed: int = 42) -> SimParams:
    """Fixed-size, fixed-spacing load used for wall-clock comparisons."""
    return SimParams(mean_packet_size=1500, size_dist="constant", interarrival_mean=0.05,
                     interarrival_cap=None, interarrival_dist="constant", monitor_cap=None,
                     service_log_interval=None, packet_budget=packets, seed=seed)


@dataclass(slots=True)
class Packet:
    seq: int
    created_at: float
    size: int
    src: str
    flow: str


# randomness

def stream_key(seed: int, element: str, purpose: str) -> int:
    digest = hashlib.blake2b(("%d|%s|%s" % (seed, element, purpose)).encode("utf-8"), digest_size=16).digest()
    return int.from_bytes(digest, "big")


class Stream:
    """Buffered draws from one counter-based generator keyed by (seed, element, purpose)."""

    __slots__ = ("_key", "_gen", "_buf", "_pos", "_uniform", "_block")

    def __init__(self, seed: int, element: str, purpose: str, uniform: bool = False, block: int = 1024):
        self._key = stream_key(seed, element, purpose)
        self._gen = None
        self._buf: list = []
        self._pos = 0
        self._uniform = uniform
        self._block = block

    def _draw(self, n: int) -> np.ndarray:
        if self._gen is None:
            self._gen = np.random.Generator(np.random.Philox(key=self._key))
        return self._gen.random(n) if self._uniform else self._gen.standard_exponential(n)

    def next(self) -> float:
        if self._pos >= len(self._buf):
            self._buf = self._draw(self._block).tolist()
            self._pos = 0
        val = self._buf[self._pos]
        self._pos += 1
        return val

    def take(self, n: int) -> np.ndarray:
        head = self._buf[self._pos:self._pos + n]
        self._pos += len(head)
        if len(head) == n:
            return np.array(head, dtype=float)
        return np.concatenate([np.array(head, dtype=float), self._draw(n - len(head))])

    def standard_exponential(self) -> float:
        return self.next()

    def random(self) -> float:
        return self.next()


def sample_truncated_exp(mean: float, cap: float | None, rng) -> float:
    """Exponential draw with the given mean, clamped at ``cap`` when present."""
    if not mean > 0:
        raise InvalidParams("mean must be positive")
    if cap is not None and not cap > 0:
        raise InvalidParams("cap must be positive")
    x = mean * rng.standard_exponential()
    return x if cap is None or x <= cap else cap


def brancher_route(probs, rng) -> int:
    total = math.fsum(probs)
    if not probs or abs(total - 1.0) > 1e-9 or any(p < 0 for p in probs):
        raise BadDistribution("branch probabilities must be non-negative and sum to 1, got %r" % (list(probs),))
    u = rng.random()
    acc = 0.0
    for i, p in enumerate(probs):
        acc += p
        if u < acc:
            return i
    return max(i for i, p in enumerate(probs) if p > 0)


# engine

class EventQueue:
    """Min-heap keyed by (time, insertion order)."""

    def __init__(self):
        self.heap: list = []
        self._seq = count()
        self.live = 0

    def push(self, time: float, callback, daemon: bool = False) -> None:
        heapq.heappush(self.heap, (time, next(self._seq), callback, daemon))
        if not daemon:
            self.live += 1

    def pop(self):
        item = heapq.heappop(self.heap)
        if not item[3]:
            self.live -= 1
        return item

    def peek_time(self) -> float:
        return self.heap[0][0] if self.heap else INF

    def __len__(self):
        return len(self.heap)


class Simulator:
    def __init__(self):
        self.now = 0.0
        self.queue = EventQueue()
        self.executed = 0

    def schedule(self, delay: float, callback, daemon: bool = False) -> None:
        self.queue.push(self.now + delay, callback, daemon)

    def at(self, time: float, callback, daemon: bool = False) -> None:
        self.queue.push(time, callback, daemon)

    def run(self, until: float | None = None) -> None:
        """Run events with time <= until; ``None`` drains all non-daemon work."""
        q = self.queue
        heap = q.heap
        pop = heapq.heappop
        executed = 0
        while heap:
            time = heap[0][0]
            if until is not None:
                if time > until:
                    break
            elif q.live == 0:
                break
            _, _, callback, daemon = pop(heap)
            if not daemon:
                q.live -= 1
            self.now = time
            callback()
            executed += 1
        self.executed += executed
        if until is not None:
            self.now = max(self.now, until)


# elements

class ArrivalProcess:
    """Packet arrivals of one generator, produced in chunks on demand."""

    def __init__(self, node_id: str, flow: str, params: SimParams, budget: int | None):
        self.id = node_id
        self.flow = flow
        self.budget = budget
        self.mean_ia = params.interarrival_mean
        self.cap = params.interarrival_cap
        self.const_ia = params.interarrival_dist == "constant"
        self.mean_size = params.mean_packet_size
        self.const_size = params.size_dist == "constant"
        self.ia_stream = Stream(params.seed, node_id, "interarrival")
        self.size_stream = Stream(params.seed, node_id, "size")
        self.t_raw = 0.0
        self.produced = 0
        self.taken = 0
        self.times: list = []
        self.sizes: list = []
        self.pos = 0
        self.next_time = INF
        self._refill()

    def _chunk(self, n: int):
        if self.budget is not None:
            n = min(n, self.budget - self.produced)
        if n <= 0:
            return None, None
        if self.const_ia:
            ia = np.full(n, float(self.mean_ia))
        else:
            ia = self.mean_ia * self.ia_stream.take(n)
            if self.cap is not None:
                np.minimum(ia, self.cap, out=ia)
        raw = np.cumsum(np.concatenate(([self.t_raw], ia)))[1:]
        self.t_raw = float(raw[-1])
        times = np.round(raw * _US) / _US
        if self.const_size:
            sizes = np.full(n, max(1, int(round(self.mean_size))), dtype=np.int64)
        else:
            sizes = np.maximum(1, np.rint(self.mean_size * self.size_stream.take(n))).astype(np.int64)
        self.produced += n
        return times, sizes

    def _refill(self) -> bool:
        times, sizes = self._chunk(_CHUNK)
        if times is None:
            if self.pos >= len(self.times):
                self.next_time = INF
            return False
        if self.pos:
            del self.times[:self.pos]
            del self.sizes[:self.pos]
            self.pos = 0
        self.times.extend(times.tolist())
        self.sizes.extend(sizes.tolist())
        self.next_time = self.times[self.pos]
        return True

    def take(self) -> Packet:
        t = self.times[self.pos]
        pkt = Packet(self.taken, t, self.sizes[self.pos], self.id, self.flow)
        self.pos += 1
        self.taken += 1
        if self.pos < len(self.times):
            self.next_time = self.times[self.pos]
        elif not self._refill():
            self.next_time = INF
        return pkt

    def pending(self, now: float) -> tuple[int, int]:
        """(count, bytes) of arrivals at or before ``now`` not yet taken."""
        while self.times and self.times[-1] <= now and self._refill():
            pass
        end = bisect.bisect_right(self.times, now, self.pos)
        return end - self.pos, sum(self.sizes[self.pos:end])

    def count_until(self, horizon: float) -> int:
        """Untaken arrivals at or before ``horizon``; consumes the process."""
        total = bisect.bisect_right(self.times, horizon, self.pos) - self.pos
        if self.times and self.times[-1] > horizon:
            return total
        while True:
            times, _ = self._chunk(_COUNT_CHUNK)
            if times is None:
                return total
            total += int(np.searchsorted(times, horizon, side="right"))
            if times[-1] > horizon:
                return total


class EnqueueResult(Enum):
    ACCEPTED = "Accepted"
    DROPPED = "Dropped"


class Router:
    def __init__(self, sim: Simulator, node_id: str, params: SimParams):
        self.sim = sim
        self.id = node_id
        self.rate = params.port_rate
        self.mean_size = params.mean_packet_size
        self.capacity = params.queue_capacity
        self.fwd = params.forward_prob_of(node_id)
        self.service_stream = Stream(params.seed, node_id, "service")
        self.forward_stream = Stream(params.seed, node_id, "forward", uniform=True)
        self.out = None
        self.sources: list[ArrivalProcess] = []
        self.fifo: deque = deque()
        self.fifo_bytes = 0
        self.busy = False
        self.current: Packet | None = None
        self.wake_at = None
        self.packets_in = 0
        self.packets_out = 0
        self.packets_dropped = 0
        self.wait_sum = 0.0
        self.processed = 0
        self.queue_samples: list = []
        self.service_log: list = []

    def enqueue(self, pkt: Packet, now: float) -> EnqueueResult:
        self.packets_in += 1
        if self.capacity is not None and self.fifo_bytes + pkt.size > self.capacity:
            self.packets_dropped += 1
            return EnqueueResult.DROPPED
        self.fifo.append((now, pkt))
        self.fifo_bytes += pkt.size
        return EnqueueResult.ACCEPTED

    def put(self, pkt: Packet) -> None:
        # inlined enqueue: this is the hottest path of a run
        self.packets_in += 1
        if self.capacity is not None and self.fifo_bytes + pkt.size > self.capacity:
            self.packets_dropped += 1
            return
        self.fifo.append((self.sim.now, pkt))
        self.fifo_bytes += pkt.size
        if not self.busy:
            self.start_service()

    def start_service(self):
        """Serve the earliest waiting packet; returns its departure time or None when idle."""
        sim = self.sim
        now = sim.now
        fifo = self.fifo
        best = fifo[0][0] if fifo else INF
        chosen = None
        if self.sources:
            for src in self.sources:
                if src.next_time < best:
                    best = src.next_time
                    chosen = src
        if best > now:
            if best < INF and (self.wake_at is None or best < self.wake_at):
                self.wake_at = best
                sim.queue.push(best, self._wake)
            return None
        if chosen is not None:
            pkt = chosen.take()
            self.packets_in += 1
            arrived = pkt.created_at
        else:
            arrived, pkt = fifo.popleft()
            self.fifo_bytes -= pkt.size
        self.busy = True
        self.current = pkt
        self.wait_sum += now - arrived
        self.processed += 1
        done = now + self.service_stream.next() / self.rate * (pkt.size / self.mean_size)
        sim.queue.push(done, self._finish)
        return done

    def _wake(self) -> None:
        if self.wake_at is not None and self.wake_at <= self.sim.now:
            self.wake_at = None
        if not self.busy:
            self.start_service()

    def _finish(self) -> None:
        pkt = self.current
        self.current = None
        self.busy = False
        if self.fwd >= 1.0 or self.forward_stream.next() < self.fwd:
            if self.out is None:
                self.packets_dropped += 1
            else:
                self.packets_out += 1
                self.out.put(pkt)
        else:
            self.packets_dropped += 1
        self.start_service()

    def snapshot(self, now: float) -> tuple[float, int, int]:
        length, size = len(self.fifo), self.fifo_bytes
        for src in self.sources:
            c, b = src.pending(now)
            length += c
            size += b
        return (now, size, length)

    def average_wait(self) -> float:
        return self.wait_sum / self.processed if self.processed else 0.0


def router_enqueue(router: Router, pkt: Packet, now: float) -> EnqueueResult:
    return router.enqueue(pkt, now)


def router_service(router: Router):
    return router.start_service()


def monitor_sample(router: Router, now: float) -> tuple[float, int, int]:
    snap = router.snapshot(now)
    router.queue_samples.append(snap)
    return snap


class Monitor:
    def __init__(self, sim: Simulator, router: Router, params: SimParams):
        self.sim = sim
        self.router = router
        self.interval = 1.0 / params.monitor_cap
        self.stream = Stream(params.seed, router.id, "monitor")

    def start(self) -> None:
        self.sim.schedule(self._gap(), self._sample, daemon=True)

    def _gap(self) -> float:
        return sample_truncated_exp(self.interval, self.interval, self.stream) or self.interval

    def _sample(self) -> None:
        monitor_sample(self.router, self.sim.now)
        self.sim.schedule(self._gap(), self._sample, daemon=True)


class ServiceLogger:
    def __init__(self, sim: Simulator, router: Router, interval: float):
        self.sim = sim
        self.router = router
        self.interval = interval

    def start(self) -> None:
        self.sim.schedule(self.interval, self._log, daemon=True)

    def _log(self) -> None:
        self.router.service_log.append((self.sim.now, self.router.average_wait()))
        self.sim.schedule(self.interval, self._log, daemon=True)


class Sink:
    def __init__(self, sim: Simulator, node_id: str):
        self.sim = sim
        self.id = node_id
        self.packets_in = 0
        self.delays: list = []
        self.interarrivals: list = []
        self.flows: dict = {}
        self.flow_delay: dict = {}
        self._last = None

    def put(self, pkt: Packet) -> None:
        now = self.sim.now
        delay = now - pkt.created_at
        self.packets_in += 1
        self.delays.append(delay)
        if self._last is not None:
            self.interarrivals.append(now - self._last)
        self._last = now
        self.flows[pkt.flow] = self.flows.get(pkt.flow, 0) + 1
        self.flow_delay[pkt.flow] = self.flow_delay.get(pkt.flow, 0.0) + delay


class Brancher:
    def __init__(self, sim: Simulator, node_id: str, probs: list, seed: int):
        self.sim = sim
        self.id = node_id
        self.probs = probs
        self.outs: list = []
        self.stream = Stream(seed, node_id, "branch", uniform=True)
        self.packets_in = 0
        self.packets_out = 0
        brancher_route(probs, _Fixed(0.0))

    def put(self, pkt: Packet) -> None:
        self.packets_in += 1
        self.packets_out += 1
        self.outs[brancher_route(self.probs, self.stream)].put(pkt)


class _Fixed:
    def __init__(self, value):
        self.value = value

    def random(self):
        return self.value


class EagerSource:
    """Delivers each arrival as a heap event (used with finite queues)."""

    def __init__(self, sim: Simulator, process: ArrivalProcess, router: Router):
        self.sim = sim
        self.process = process
        self.router = router

    def start(self) -> None:
        if self.process.next_time < INF:
            self.sim.at(self.process.next_time, self._arrive)

    def _arrive(self) -> None:
        self.router.put(self.process.take())
        self.start()


class ExternalRouter:
    """Router hosted by an external peer; the round trip takes no virtual time."""

    def __init__(self, sim: Simulator, node_id: str, link):
        self.sim = sim
        self.id = node_id
        self.link = link
        self.out = None
        self.packets_in = 0
        self.packets_out = 0
        self.packets_dropped = 0

    def put(self, pkt: Packet) -> None:
        self.packets_in += 1
        back = self.link.roundtrip(self.id, pkt)
        if self.out is None:
            self.packets_dropped += 1
            return
        self.packets_out += 1
        self.out.put(back)


# statistics

@dataclass
class NodeStats:
    node: str
    kind: str
    packets_in: int = 0
    packets_out: int = 0
    packets_dropped: int = 0
    residual: int = 0
    wait_sum: float = 0.0
    processed: int = 0
    queue_samples: list = field(default_factory=list)
    service_log: list = field(default_factory=list)
    delays: list = field(default_factory=list)
    interarrivals: list = field(default_factory=list)
    flows: dict = field(default_factory=dict)
    flow_delay: dict = field(default_factory=dict)

    def mean_delay(self) -> float:
        if self.kind == ElementKind.SINK.value:
            return math.fsum(self.delays) / len(self.delays) if self.delays else 0.0
        return self.wait_sum / self.processed if self.processed else 0.0


@dataclass
class SimStats:
    end_time: float
    nodes: dict = field(default_factory=dict)
    events: int = 0

    def of_kind(self, kind: ElementKind) -> list[NodeStats]:
        return [s for s in self.nodes.values() if s.kind == kind.value]

    def generated(self) -> int:
        return sum(s.packets_out for s in self.of_kind(ElementKind.GENERATOR))

    def delivered(self) -> int:
        return sum(s.packets_in for s in self.of_kind(ElementKind.SINK))

    def generated_by_flow(self) -> dict[str, int]:
        out: dict = {}
        for s in self.of_kind(ElementKind.GENERATOR):
            for f, c in s.flows.items():
                out[f] = out.get(f, 0) + c
        return out

    def delivered_by_flow(self, sinks=None) -> dict[str, int]:
        out: dict = {}
        for s in self.of_kind(ElementKind.SINK):
            if sinks is not None and s.node not in sinks:
                continue
            for f, c in s.flows.items():
                out[f] = out.get(f, 0) + c
        return out

    def mean_delay_by_flow(self) -> dict[str, float]:
        counts: dict = {}
        sums: dict = {}
        for s in self.of_kind(ElementKind.SINK):
            for f, c in s.flows.items():
                counts[f] = counts.get(f, 0) + c
                sums[f] = sums.get(f, 0.0) + s.flow_delay.get(f, 0.0)
        return {f: sums[f] / counts[f] for f in sorted(counts, key=natural_key)}

    def to_dict(self) -> dict:
        return {"end_time": self.end_time, "nodes": [dataclasses.asdict(self.nodes[k]) for k in self.nodes]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":")) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "SimStats":
        d = json.loads(text)
        nodes = {}
        for rec in d["nodes"]:
            rec["queue_samples"] = [tuple(x) for x in rec["queue_samples"]]
            rec["service_log"] = [tuple(x) for x in rec["service_log"]]
            nodes[rec["node"]] = NodeStats(**rec)
        return cls(d["end_time"], nodes)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["id", "in", "out", "dropped", "mean_delay"])
        for s in self.nodes.values():
            w.writerow([s.node, s.packets_in, s.packets_out, s.packets_dropped, repr(s.mean_delay())])
        return buf.getvalue()


def average_delay(stats: SimStats, node_id: str) -> float:
    if node_id not in stats.nodes:
        raise UnknownNode("no statistics for %r" % node_id)
    s = stats.nodes[node_id]
    return s.wait_sum / s.processed if s.processed else 0.0


# network assembly

def split_budget(total: int | None, generators: list[str]) -> dict[str, int | None]:
    """Spread a packet budget over generators in id order; earlier ids take the remainder."""
    if total is None:
        return {g: None for g in generators}
    if not generators:
        return {}
    base, extra = divmod(int(total), len(generators))
    return {g: base + (1 if i < extra else 0) for i, g in enumerate(generators)}


class Network:
    def __init__(self, topo: Topology, params: SimParams, external: Mapping | None = None,
                 lazy_sources: bool | None = None):
        if not isinstance(params, SimParams):
            raise InvalidParams("params must be SimParams")
        self.topo = topo
        self.params = params
        self.sim = Simulator()
        self.lazy = params.queue_capacity is None if lazy_sources is None else lazy_sources
        if self.lazy and params.queue_capacity is not None:
            raise InvalidParams("lazy sources need unbounded queues")
        external = dict(external or {})
        sim = self.sim
        self.elements: dict = {}
        self.processes: dict[str, ArrivalProcess] = {}
        gens = topo.ids(ElementKind.GENERATOR)
        budgets = split_budget(params.packet_budget, gens)
        for n in topo.nodes:
            if n.kind == ElementKind.ROUTER:
                link = external.get(n.id)
                self.elements[n.id] = ExternalRouter(sim, n.id, link) if link else Router(sim, n.id, params)
            elif n.kind == ElementKind.SINK:
                self.elements[n.id] = Sink(sim, n.id)
            elif n.kind == ElementKind.BRANCHER:
                outs = topo.successors(n.id)
                if not outs:
                    raise InvalidTopology("brancher %r has no branches" % n.id)
                probs = [topo.branch_probs.get((n.id, o), 1.0 / len(outs)) for o in outs]
                self.elements[n.id] = Brancher(sim, n.id, probs, params.seed)
        for n in topo.nodes:
            outs = topo.successors(n.id)
            el = self.elements.get(n.id)
            if n.kind == ElementKind.ROUTER:
                if len(outs) > 1:
                    raise InvalidTopology("router %r has %d out-edges" % (n.id, len(outs)))
                el.out = self.elements.get(outs[0]) if outs else None
                if outs and el.out is None:
                    raise InvalidTopology("router %r feeds a generator" % n.id)
            elif n.kind == ElementKind.BRANCHER:
                el.outs = [self.elements[o] for o in outs]
            elif n.kind == ElementKind.GENERATOR:
                if len(outs) != 1 or topo.node(outs[0]).kind != ElementKind.ROUTER:
                    raise InvalidTopology("generator %r must feed exactly one router" % n.id)
                flow = topo.utility_of.get(outs[0], outs[0])
                self.processes[n.id] = ArrivalProcess(n.id, flow, params, budgets[n.id])
        self.monitors = []
        for r in topo.monitored:
            router = self.elements.get(r)
            if not isinstance(router, Router):
                continue
            if params.monitor_cap is not None:
                self.monitors.append(Monitor(sim, router, params))
            if params.service_log_interval is not None:
                self.monitors.append(ServiceLogger(sim, router, params.service_log_interval))
        self._started = False
        self.horizon = None

    def start(self) -> None:
        if self._started:
            return
        self._started = True
        for g, proc in self.processes.items():
            router = self.elements[self.topo.successors(g)[0]]
            if self.lazy and isinstance(router, Router):
                router.sources.append(proc)
            else:
                EagerSource(self.sim, proc, router).start()
        for m in self.monitors:
            m.start()
        for el in self.elements.values():
            if isinstance(el, Router) and el.sources:
                el.start_service()

    def run(self, until: float | None) -> SimStats:
        if until is None:
            if self.params.packet_budget is None:
                raise InvalidParams("a run without a horizon needs a packet budget")
        elif not (math.isfinite(until) and until >= 0):
            raise InvalidParams("until must be a finite non-negative number of seconds")
        self.horizon = until
        self.start()
        self.sim.run(until)
        return self.collect()

    def collect(self) -> SimStats:
        horizon = self.sim.now if self.horizon is None else self.horizon
        stats = SimStats(horizon, events=self.sim.executed)
        topo = self.topo
        backlog: dict[str, int] = {}
        for n in topo.nodes:
            if n.kind == ElementKind.GENERATOR:
                proc = self.processes[n.id]
                target = topo.successors(n.id)[0]
                lazy = self.lazy and isinstance(self.elements[target], Router)
                waiting = proc.count_until(horizon) if lazy else 0
                backlog[target] = backlog.get(target, 0) + waiting
                total = proc.taken + waiting
                stats.nodes[n.id] = NodeStats(n.id, n.kind.value, total, total, 0, 0,
                                              flows={proc.flow: total} if total else {})
        for n in topo.nodes:
            el = self.elements.get(n.id)
            if n.kind == ElementKind.ROUTER:
                if isinstance(el, Router):
                    extra = backlog.get(n.id, 0)
                    residual = len(el.fifo) + (1 if el.busy else 0) + extra
                    stats.nodes[n.id] = NodeStats(
                        n.id, n.kind.value, el.packets_in + extra, el.packets_out, el.packets_dropped, residual,
                        el.wait_sum, el.processed, list(el.queue_samples), list(el.service_log))
                else:
                    stats.nodes[n.id] = NodeStats(n.id, n.kind.value, el.packets_in, el.packets_out,
                                                  el.packets_dropped, 0)
            elif n.kind == ElementKind.SINK:
                stats.nodes[n.id] = NodeStats(n.id, n.kind.value, el.packets_in, el.packets_in, 0, 0,
                                              delays=list(el.delays), interarrivals=list(el.interarrivals),
                                              flows=dict(sorted(el.flows.items())),
                                              flow_delay=dict(sorted(el.flow_delay.items())))
            elif n.kind == ElementKind.BRANCHER:
                stats.nodes[n.id] = NodeStats(n.id, n.kind.value, el.packets_in, el.packets_out, 0, 0)
        stats.nodes = {n.id: stats.nodes[n.id] for n in topo.nodes if n.id in stats.nodes}
        return stats


def run_simulation(topo: Topology, params: SimParams, until: float | None) -> SimStats:
    return Network(topo, params).run(until)
