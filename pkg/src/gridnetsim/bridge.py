"""TCP bridge that hosts selected routers in an external peer.

Frames are a 4-byte big-endian length followed by the packet record::

    seq        u64
    created_at i64   whole microseconds
    size       u64   bytes
    src        u16 length + utf-8
    dst        u16 length + utf-8

The simulator side blocks on each round trip, so virtual time stands still
while a packet is away.
"""

from __future__ import annotations

import logging
import math
import socket
import struct
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .des import Network, Packet, SimParams, SimStats
from .errors import BindFailure, BridgeTimeout, ConnectionLost, InvalidParams, Malformed, Truncated
from .topology import Topology

log = logging.getLogger(__name__)

_PREFIX = struct.Struct(">I")
_FIXED = struct.Struct(">QqQ")
_STRLEN = struct.Struct(">H")
DEFAULT_CAP_BPS = 60e6
DEFAULT_TIMEOUT = 5.0
LOW_PORT_BASE = 5000
HIGH_PORT_BASE = 35000
HIGH_RANGE_FROM = 25


def allocate_ports(n_external: int) -> int:
    if n_external < 1:
        raise InvalidParams("need at least one external node")
    return HIGH_PORT_BASE if n_external >= HIGH_RANGE_FROM else LOW_PORT_BASE


def encode_payload(pkt: Packet) -> bytes:
    src = pkt.src.encode("utf-8")
    dst = pkt.flow.encode("utf-8")
    if pkt.size <= 0 or pkt.created_at < 0 or len(src) > 0xFFFF or len(dst) > 0xFFFF:
        raise Malformed("packet cannot be framed: %r" % (pkt,))
    return (_FIXED.pack(pkt.seq, round(pkt.created_at * 1e6), pkt.size)
            + _STRLEN.pack(len(src)) + src + _STRLEN.pack(len(dst)) + dst)


def encode_frame(pkt: Packet) -> bytes:
    payload = encode_payload(pkt)
    return _PREFIX.pack(len(payload)) + payload


def decode_payload(payload: bytes) -> Packet:
    try:
        seq, created_us, size = _FIXED.unpack_from(payload, 0)
        pos = _FIXED.size
        (n,) = _STRLEN.unpack_from(payload, pos)
        pos += _STRLEN.size
        src = payload[pos:pos + n]
        if len(src) != n:
            raise Malformed("source id runs past the payload")
        pos += n
        (m,) = _STRLEN.unpack_from(payload, pos)
        pos += _STRLEN.size
        dst = payload[pos:pos + m]
        if len(dst) != m:
            raise Malformed("destination id runs past the payload")
        pos += m
        if pos != len(payload):
            raise Malformed("%d trailing payload bytes" % (len(payload) - pos))
        src_id, dst_id = src.decode("utf-8"), dst.decode("utf-8")
    except struct.error as exc:
        raise Malformed("short payload: %s" % exc) from None
    except UnicodeDecodeError as exc:
        raise Malformed("bad id encoding: %s" % exc) from None
    if size == 0 or created_us < 0:
        raise Malformed("packet fields out of range")
    return Packet(seq, created_us / 1e6, size, src_id, dst_id)


def decode_frame(data: bytes) -> Packet:
    if len(data) < _PREFIX.size:
        raise Truncated("frame shorter than its length prefix")
    (length,) = _PREFIX.unpack_from(data, 0)
    body = data[_PREFIX.size:]
    if len(body) < length:
        raise Truncated("frame announces %d payload bytes, got %d" % (length, len(body)))
    if len(body) > length:
        raise Malformed("%d bytes after the frame" % (len(body) - length))
    return decode_payload(body)


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    got = 0
    while got < n:
        chunk = sock.recv(n - got)
        if not chunk:
            raise Truncated("connection closed after %d of %d bytes" % (got, n))
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def read_frame(sock: socket.socket) -> bytes:
    """One raw payload from a stream socket; Truncated on EOF."""
    (length,) = _PREFIX.unpack(_recv_exact(sock, _PREFIX.size))
    return _recv_exact(sock, length)


@dataclass
class BridgePlan:
    external_nodes: tuple
    host: str = "127.0.0.1"
    base_port: int | None = None
    throughput_cap: float | None = DEFAULT_CAP_BPS
    port_of: dict = field(default_factory=dict)

    def __post_init__(self):
        self.external_nodes = tuple(self.external_nodes)
        if not self.external_nodes:
            raise InvalidParams("bridge plan needs at least one external node")
        if len(set(self.external_nodes)) != len(self.external_nodes):
            raise InvalidParams("external nodes must be distinct")
        if self.base_port is None:
            self.base_port = allocate_ports(len(self.external_nodes))
        if self.throughput_cap is not None and not self.throughput_cap > 0:
            raise InvalidParams("throughput cap must be positive")
        self.port_of = {node: self.base_port + i for i, node in enumerate(self.external_nodes)}

    @classmethod
    def for_topology(cls, topo: Topology, **kw) -> "BridgePlan":
        return cls(tuple(topo.utilities) + tuple(topo.regulatories), **kw)


class PortCounters:
    def __init__(self, ports):
        self._lock = threading.Lock()
        self.frames_in = {p: 0 for p in ports}
        self.frames_out = {p: 0 for p in ports}
        self.malformed = {p: 0 for p in ports}
        self.bytes_out = {p: 0 for p in ports}

    def bump(self, table, port, amount=1):
        with self._lock:
            table[port] += amount


class Peer:
    """Listens on every planned port and echoes each packet after the modelled service."""

    def __init__(self, plan: BridgePlan, service: str = "none", params: SimParams | None = None,
                 time_scale: float = 1.0, seed: int = 42):
        if service not in ("none", "model"):
            raise InvalidParams("service must be 'none' or 'model'")
        self.plan = plan
        self.service = service
        self.params = params or SimParams()
        self.time_scale = time_scale
        self.seed = seed
        self.counters = PortCounters(plan.port_of.values())
        self._listeners: list[socket.socket] = []
        self._conns: list[socket.socket] = []
        self._threads: list[threading.Thread] = []
        self._stop = threading.Event()
        self._lock = threading.Lock()

    def start(self) -> "Peer":
        try:
            for node, port in self.plan.port_of.items():
                srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
                srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
                srv.bind((self.plan.host, port))
                srv.listen(8)
                srv.settimeout(0.2)
                self._listeners.append(srv)
        except OSError as exc:
            self._close_listeners()
            raise BindFailure("cannot listen on %s:%s: %s" % (self.plan.host, port, exc)) from None
        for srv, (node, port) in zip(self._listeners, self.plan.port_of.items()):
            t = threading.Thread(target=self._accept_loop, args=(srv, node, port), daemon=True)
            t.start()
            self._threads.append(t)
        return self

    def _accept_loop(self, srv, node, port):
        while not self._stop.is_set():
            try:
                conn, _ = srv.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            with self._lock:
                self._conns.append(conn)
            t = threading.Thread(target=self._handle, args=(conn, node, port), daemon=True)
            t.start()
            self._threads.append(t)

    def _handle(self, conn, node, port):
        rng = np.random.default_rng([self.seed, port])
        cap = self.plan.throughput_cap
        next_free = time.monotonic()
        c = self.counters
        try:
            while not self._stop.is_set():
                try:
                    payload = read_frame(conn)
                except (Truncated, OSError):
                    return
                c.bump(c.frames_in, port)
                try:
                    pkt = decode_payload(payload)
                except Malformed:
                    c.bump(c.malformed, port)
                    continue
                if self.service == "model":
                    hold = rng.standard_exponential() / self.params.port_rate
                    time.sleep(hold * pkt.size / self.params.mean_packet_size * self.time_scale)
                if cap is not None:
                    now = time.monotonic()
                    next_free = max(next_free, now) + pkt.size * 8.0 / cap
                    delay = next_free - now
                    if delay > 0:
                        time.sleep(delay)
                try:
                    conn.sendall(_PREFIX.pack(len(payload)) + payload)
                except OSError:
                    return
                c.bump(c.frames_out, port)
                c.bump(c.bytes_out, port, pkt.size)
        finally:
            try:
                conn.close()
            except OSError:
                pass

    def _close_listeners(self):
        for srv in self._listeners:
            try:
                srv.close()
            except OSError:
                pass

    def stop(self) -> list[str]:
        """Shut down and return one 'port frames_in frames_out' line per port."""
        self._stop.set()
        self._close_listeners()
        with self._lock:
            for conn in self._conns:
                try:
                    conn.shutdown(socket.SHUT_RDWR)
                except OSError:
                    pass
                try:
                    conn.close()
                except OSError:
                    pass
        for t in list(self._threads):
            t.join(timeout=2.0)
        return self.stats_lines()

    def stats_lines(self) -> list[str]:
        c = self.counters
        return ["%d %d %d" % (p, c.frames_in[p], c.frames_out[p]) for p in sorted(c.frames_in)]

    def receipts_by_node(self) -> dict[str, int]:
        return {node: self.counters.frames_in[port] for node, port in self.plan.port_of.items()}

    def returns_by_node(self) -> dict[str, int]:
        return {node: self.counters.frames_out[port] for node, port in self.plan.port_of.items()}

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


def serve_peer(plan: BridgePlan, service: str = "none", params: SimParams | None = None,
               time_scale: float = 1.0) -> Peer:
    return Peer(plan, service, params, time_scale).start()


class BridgeLink:
    """Simulator-side connections, one per external node."""

    def __init__(self, plan: BridgePlan, timeout: float = DEFAULT_TIMEOUT):
        if not (timeout > 0 and math.isfinite(timeout)):
            raise InvalidParams("timeout must be positive")
        self.plan = plan
        self.timeout = timeout
        self.socks: dict[str, socket.socket] = {}
        self.sent = {n: 0 for n in plan.external_nodes}
        self.reinjected = {n: 0 for n in plan.external_nodes}

    def connect(self) -> "BridgeLink":
        for node, port in self.plan.port_of.items():
            try:
                sock = socket.create_connection((self.plan.host, port), timeout=self.timeout)
            except OSError as exc:
                self.close()
                raise ConnectionLost("cannot reach peer for %r on port %d: %s" % (node, port, exc)) from None
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            sock.settimeout(self.timeout)
            self.socks[node] = sock
        return self

    def roundtrip(self, node: str, pkt: Packet) -> Packet:
        sock = self.socks[node]
        try:
            sock.sendall(encode_frame(pkt))
            self.sent[node] += 1
            payload = read_frame(sock)
        except socket.timeout:
            raise BridgeTimeout("no reply for %r within %.1f s" % (node, self.timeout)) from None
        except (Truncated, OSError) as exc:
            raise ConnectionLost("peer link for %r failed: %s" % (node, exc)) from None
        back = decode_payload(payload)
        self.reinjected[node] += 1
        return back

    def close(self) -> None:
        for sock in self.socks.values():
            try:
                sock.close()
            except OSError:
                pass
        self.socks = {}


@dataclass
class BridgedResult:
    stats: SimStats
    wall_clock: float
    sent: dict
    reinjected: dict


def run_bridged(topo: Topology, params: SimParams, until: float | None, plan: BridgePlan,
                timeout: float = DEFAULT_TIMEOUT) -> BridgedResult:
    missing = [n for n in plan.external_nodes if n not in topo]
    if missing:
        raise InvalidParams("external node %r is not in the topology" % missing[0])
    link = BridgeLink(plan, timeout)
    started = time.perf_counter()
    link.connect()
    net = Network(topo, params, external={n: link for n in plan.external_nodes})
    try:
        stats = net.run(until)
    except (ConnectionLost, BridgeTimeout) as exc:
        # partial stats stop at the failure, not at the requested horizon
        net.horizon = net.sim.now
        exc.stats = net.collect()
        raise
    finally:
        link.close()
    return BridgedResult(stats, time.perf_counter() - started, dict(link.sent), dict(link.reinjected))


def find_free_base_port(count: int, start: int = 20000, stop: int = 60000, host: str = "127.0.0.1") -> int:
    """First base port with ``count`` consecutive bindable ports."""
    base = start
    while base + count <= stop:
        held = []
        ok = True
        for p in range(base, base + count):
            s = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            try:
                s.bind((host, p))
                held.append(s)
            except OSError:
                ok = False
                s.close()
                base = p + 1
                break
        for s in held:
            s.close()
        if ok:
            return base
    raise BindFailure("no run of %d free ports in [%d, %d)" % (count, start, stop))
