"""Seeded discrete-event world: nodes, links, EPR pools, routing, trace.

The :class:`World` owns the :class:`~qnetstack.qsim.StateRegistry`; its random
stream drives measurement, loss, corruption and channel noise alike, so a
run is a pure function of the topology, the workload and the seed.

Trace lines have the stable form ``time seq node action details``.
"""
from __future__ import annotations

import heapq
import math
from collections import Counter, deque
from dataclasses import dataclass, field
from enum import Enum
from itertools import count
from typing import Any, Callable

import numpy as np

from .primitives import EprPair, apply_pauli, nontrivial_paulis
from .qsim import QuditId, StateRegistry


class NetsimError(Exception):
    pass


class TopologyError(NetsimError):
    pass


class NotAdjacent(NetsimError):
    pass


class InsufficientPool(NetsimError):
    pass


class NoRoute(NetsimError):
    pass


class UnknownPosition(NetsimError):
    pass


class OwnershipError(NetsimError):
    """A qudit was handled by a node that does not hold it."""


class NodeKind(str, Enum):
    HOST = "host"
    ROUTER = "router"
    REPEATER = "repeater"


class QuantumMode(str, Enum):
    EPR_POOL = "epr_pool"
    DIRECT = "direct"


class Action(str, Enum):
    DELIVER_CLASSICAL = "deliver-classical"
    DELIVER_QUANTUM = "deliver-quantum"
    TIMEOUT = "timeout"
    POOL_REPLENISH = "pool-replenish"
    APP_SEND = "app-send"


class Fault(str, Enum):
    OK = "ok"
    LOSE = "lose"
    CORRUPT = "corrupt"


@dataclass
class Node:
    name: str
    kind: NodeKind = NodeKind.HOST
    quantum_capable: bool = True
    handler: Any = None


@dataclass
class Link:
    a: str
    b: str
    classical_delay: int = 1
    classical_loss_p: float = 0.0
    classical_corrupt_p: float = 0.0
    quantum_mode: QuantumMode = QuantumMode.EPR_POOL
    quantum_delay: int = 1
    quantum_loss_p: float = 0.0
    pauli_noise_eps: float = 0.0
    qudit_tx_time: int = 0
    tamper: bool = False
    pool_target: int = 0
    ttl: int | None = None
    low_watermark: int = 0

    def __post_init__(self):
        self.quantum_mode = QuantumMode(self.quantum_mode)
        for name in ("classical_loss_p", "classical_corrupt_p", "quantum_loss_p", "pauli_noise_eps"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise TopologyError(f"link {self.a}-{self.b}: {name}={p} is not a probability")
        for name in ("classical_delay", "quantum_delay", "qudit_tx_time", "pool_target", "low_watermark"):
            if getattr(self, name) < 0:
                raise TopologyError(f"link {self.a}-{self.b}: {name} must be non-negative")
        if self.a == self.b:
            raise TopologyError(f"self-loop on {self.a}")

    @property
    def key(self) -> tuple:
        return tuple(sorted((self.a, self.b)))

    @property
    def label(self) -> str:
        return "-".join(self.key)

    def other(self, node: str) -> str:
        return self.b if node == self.a else self.a


@dataclass
class Frame:
    """Network-layer envelope; ``data`` holds the serialized qUDP/qTCP packet."""

    src: str
    dst: str
    data: bytes
    link_seq: int = -1


@dataclass
class ReservedHalf:
    qudit: QuditId
    holder: str
    alloc_seq: int
    created_at: int


@dataclass
class EprPool:
    link: Link
    entries: dict = field(default_factory=dict)  # position -> EprPair, oldest first
    reserved: dict = field(default_factory=dict)  # position -> ReservedHalf
    next_position: int = 0

    @property
    def size(self) -> int:
        return len(self.entries)

    def half(self, pair: EprPair, node: str) -> QuditId:
        return pair.left if node == self.link.a else pair.right


@dataclass(order=True)
class Event:
    time: int
    seq: int
    action: Action = field(compare=False)
    node: str = field(compare=False)
    fn: Callable = field(compare=False, repr=False)
    detail: str = field(compare=False, default="")
    cancelled: bool = field(compare=False, default=False)


class EventQueue:
    def __init__(self):
        self._heap = []
        self._seq = count()

    def push(self, time, action, node, fn, detail="") -> Event:
        ev = Event(time, next(self._seq), action, node, fn, detail)
        heapq.heappush(self._heap, ev)
        return ev

    def pop(self) -> Event:
        return heapq.heappop(self._heap)

    def peek_time(self):
        return self._heap[0].time if self._heap else None

    def __len__(self):
        return len(self._heap)


class TraceLog:
    def __init__(self):
        self.lines: list[str] = []

    def append(self, time, seq, node, action, details=""):
        line = f"{time} {seq} {node} {action}"
        self.lines.append(f"{line} {details}" if details else line)

    def text(self) -> str:
        return "".join(line + "\n" for line in self.lines)

    def __len__(self):
        return len(self.lines)

    def __iter__(self):
        return iter(self.lines)

    def count(self, action: str) -> int:
        return sum(1 for line in self.lines if line.split(" ", 4)[3] == action)


class RoutingTable:
    """Hop-count routing with an EPR-pool-size tiebreak among equal-cost hops."""

    def __init__(self, world: "World"):
        self.world = world
        self.dist_q: dict = {}
        self.dist_c: dict = {}

    def recompute(self):
        w = self.world
        self.dist_c = {d: self._bfs(d, quantum=False) for d in w.nodes}
        self.dist_q = {d: self._bfs(d, quantum=True) for d in w.nodes if w.nodes[d].quantum_capable}

    def _bfs(self, dst, quantum):
        w = self.world
        dist = {dst: 0}
        frontier = deque([dst])
        while frontier:
            u = frontier.popleft()
            for v in w.neighbors(u):
                if v in dist or (quantum and not w.nodes[v].quantum_capable):
                    continue
                dist[v] = dist[u] + 1
                frontier.append(v)
        return dist

    def candidates(self, node: str, dst: str, quantum: bool = True) -> list:
        table = self.dist_q if quantum else self.dist_c
        dist = table.get(dst, {})
        if node not in dist:
            raise NoRoute(f"no {'quantum ' if quantum else ''}route {node} -> {dst}")
        if node == dst:
            return []
        hops = [v for v in self.world.neighbors(node) if dist.get(v) == dist[node] - 1]
        return sorted(hops, key=lambda v: (-self.world.pool_size(node, v), v))

    def next_hop(self, node: str, dst: str, quantum: bool = True) -> str:
        c = self.candidates(node, dst, quantum)
        if not c:
            raise NoRoute(f"{node} is the destination")
        return c[0]

    def hops(self, src: str, dst: str, quantum: bool = True) -> int:
        table = self.dist_q if quantum else self.dist_c
        try:
            return table[dst][src]
        except KeyError:
            raise NoRoute(f"no route {src} -> {dst}") from None


@dataclass
class AuditReport:
    leaks: list
    duplications: int
    unaccounted_pairs: list
    pair_status: Counter

    @property
    def clean(self) -> bool:
        return not self.leaks and not self.duplications and not self.unaccounted_pairs


class World:
    """The simulation: owns state, clock, event queue, topology and trace."""

    def __init__(self, seed: int = 0, max_qubits: float = 14.0, debug: bool = False,
                 trace: bool = True):
        self.seed = seed
        self.registry = StateRegistry(seed, max_qubits=max_qubits, debug=debug)
        self.now = 0
        self.queue = EventQueue()
        self.nodes: dict[str, Node] = {}
        self.links: dict[tuple, Link] = {}
        self.pools: dict[tuple, EprPool] = {}
        self.routing = RoutingTable(self)
        self.trace = TraceLog()
        self.tracing = trace
        self.distribution_log: list = []
        self.owner: dict[QuditId, str] = {}
        self.pair_status: dict[tuple, str] = {}
        self.pair_of: dict[QuditId, tuple] = {}
        self.counters: Counter = Counter()
        self.duplications = 0
        self.obligations: dict = {}
        self.fault_hook: Callable | None = None
        self.observers: list = []
        self.deadlocks: list = []
        self._adj: dict[str, list] = {}
        self._trace_seq = count()
        self._link_seq = count()
        self._routing_dirty = True

    @property
    def rng(self) -> np.random.Generator:
        return self.registry.rng

    # -- topology --------------------------------------------------------
    def add_node(self, name, kind=NodeKind.HOST, quantum_capable=True) -> Node:
        if name in self.nodes:
            raise TopologyError(f"duplicate node {name}")
        node = Node(name, NodeKind(kind), quantum_capable)
        self.nodes[name] = node
        self._adj[name] = []
        self._routing_dirty = True
        return node

    def add_link(self, link: Link) -> Link:
        for end in (link.a, link.b):
            if end not in self.nodes:
                raise TopologyError(f"link endpoint {end} is not a node")
        if link.key in self.links:
            raise TopologyError(f"duplicate link {link.label}")
        self.links[link.key] = link
        self._adj[link.a].append(link.b)
        self._adj[link.b].append(link.a)
        self._adj[link.a].sort()
        self._adj[link.b].sort()
        if link.quantum_mode is QuantumMode.EPR_POOL:
            self.pools[link.key] = EprPool(link)
        self._routing_dirty = True
        return link

    def neighbors(self, node: str) -> list:
        return self._adj[node]

    def link_between(self, a: str, b: str) -> Link:
        try:
            return self.links[tuple(sorted((a, b)))]
        except KeyError:
            raise NotAdjacent(f"{a} and {b} are not adjacent") from None

    def pool(self, a: str, b: str) -> EprPool:
        link = self.link_between(a, b)
        if link.key not in self.pools:
            raise NetsimError(f"link {link.label} has no EPR pool")
        return self.pools[link.key]

    def pool_size(self, a: str, b: str) -> int:
        p = self.pools.get(tuple(sorted((a, b))))
        return p.size if p else 0

    def refresh_routing(self):
        self.routing.recompute()
        self._routing_dirty = False

    def route(self, node, dst, quantum=True) -> str:
        if self._routing_dirty:
            self.refresh_routing()
        return self.routing.next_hop(node, dst, quantum)

    def route_candidates(self, node, dst, quantum=True) -> list:
        if self._routing_dirty:
            self.refresh_routing()
        return self.routing.candidates(node, dst, quantum)

    # -- events and trace ------------------------------------------------
    def log(self, node: str, action: str, details: str = ""):
        self.counters[action] += 1
        if self.tracing:
            self.trace.append(self.now, next(self._trace_seq), node, action, details)

    def schedule(self, delay: int, action: Action, node: str, fn: Callable, detail: str = "") -> Event:
        if delay < 0:
            raise ValueError("cannot schedule into the past")
        return self.queue.push(self.now + delay, Action(action), node, fn, detail)

    def cancel(self, event: Event | None):
        if event is not None:
            event.cancelled = True

    def step(self) -> bool:
        while len(self.queue):
            ev = self.queue.pop()
            if ev.cancelled:
                continue
            self.now = ev.time
            self.log(ev.node, ev.action.value, ev.detail)
            ev.fn()
            for obs in self.observers:
                obs(self, ev)
            return True
        return False

    def run_until(self, t_end: int | None = None) -> TraceLog:
        """Process events with ``time <= t_end`` (all events if ``None``)."""
        while len(self.queue):
            t = self.queue.peek_time()
            if t_end is not None and t > t_end:
                break
            self.step()
        if not len(self.queue) and self.obligations:
            for key, what in sorted(self.obligations.items(), key=lambda kv: str(kv[0])):
                self.deadlocks.append((key, what))
                self.log("world", "deadlock", f"{key} {what}")
        if t_end is not None and self.now < t_end and not len(self.queue):
            self.now = t_end
        return self.trace

    def run(self) -> TraceLog:
        return self.run_until(None)

    # -- qudit ownership -------------------------------------------------
    def hold(self, node: str, qudits) -> None:
        for q in qudits:
            cur = self.owner.get(q)
            if cur is not None and cur != node:
                self.duplications += 1
                self.log(node, "dup-claim", f"{q!r} held by {cur}")
                raise OwnershipError(f"{q!r} is held by {cur}, not {node}")
            self.owner[q] = node

    def take(self, node: str, qudits) -> list:
        qudits = list(qudits)
        for q in qudits:
            if self.owner.get(q) != node:
                raise OwnershipError(f"{node} does not hold {q!r} (holder {self.owner.get(q)})")
            if not self.registry.is_live(q):
                raise OwnershipError(f"{q!r} is not live")
        return qudits

    def alloc(self, node: str, dim: int = 2) -> QuditId:
        q = self.registry.alloc(dim)
        self.owner[q] = node
        return q

    def release(self, node: str, qudits, reason: str = "release") -> None:
        qudits = [q for q in qudits if self.registry.is_live(q)]
        if not qudits:
            return
        self.take(node, qudits)
        self.registry.discard(qudits)
        for q in qudits:
            self.owner.pop(q, None)
            self._pair_done(q, "discarded")
        self.log(node, "release", f"{reason} n={len(qudits)}")

    def consumed(self, qudits) -> None:
        """Record that pool halves were spent in a Bell measurement."""
        for q in qudits:
            self.owner.pop(q, None)
            self._pair_done(q, "consumed")

    def forget_dead(self) -> None:
        for q in [q for q in self.owner if not self.registry.is_live(q)]:
            del self.owner[q]

    def _pair_done(self, q, status):
        key = self.pair_of.pop(q, None)
        if key is not None and self.pair_status.get(key) in ("pooled", "allocated", "claimed"):
            self.pair_status[key] = status

    def audit(self) -> AuditReport:
        self.forget_dead()
        live = self.registry.live_qudits()
        leaks = [q for q in live if q not in self.owner]
        unaccounted = []
        for key, status in sorted(self.pair_status.items(), key=lambda kv: (kv[0][0], kv[0][1])):
            if status in ("consumed", "discarded"):
                continue
            link_key, pos = key
            pool = self.pools[link_key]
            if status == "pooled" and pos in pool.entries:
                pair = pool.entries[pos]
                if self.registry.is_live(pair.left) and self.registry.is_live(pair.right):
                    continue
            if status in ("allocated", "claimed"):
                continue  # halves are in protocol hands; covered by the qudit audit
            unaccounted.append(key)
        return AuditReport(leaks, self.duplications, unaccounted, Counter(self.pair_status.values()))

    def protocol_qudits(self) -> list:
        """Live qudits held by nodes outside of EPR pools and reservations."""
        self.forget_dead()
        pooled = set()
        for pool in self.pools.values():
            for pair in pool.entries.values():
                pooled.update((pair.left, pair.right))
            pooled.update(r.qudit for r in pool.reserved.values())
        return sorted(q for q, who in self.owner.items()
                      if q not in pooled and not who.startswith("app:"))

    # -- channels --------------------------------------------------------
    def _fault(self, plane: str, frm: str, to: str, frame, loss_p: float, corrupt_p: float) -> Fault:
        if self.fault_hook is not None:
            verdict = self.fault_hook(self, plane, frm, to, frame)
            if verdict is not None:
                return Fault(verdict)
        if loss_p > 0 and self.rng.random() < loss_p:
            return Fault.LOSE
        if corrupt_p > 0 and self.rng.random() < corrupt_p:
            return Fault.CORRUPT
        return Fault.OK

    def _corrupt(self, data: bytes) -> bytes:
        raw = bytearray(data)
        pos = int(self.rng.integers(len(raw)))
        raw[pos] ^= int(self.rng.integers(1, 256))
        return bytes(raw)

    def send_classical(self, frm: str, to: str, frame: Frame, on_lost: Callable | None = None) -> None:
        link = self.link_between(frm, to)
        frame.link_seq = next(self._link_seq)
        self.counters["classical-sent"] += 1
        fault = self._fault("classical", frm, to, frame, link.classical_loss_p, link.classical_corrupt_p)
        if fault is Fault.LOSE:
            self.counters["classical-lost"] += 1
            self.log(frm, "drop-classical", f"to={to} bytes={len(frame.data)}")
            if on_lost:
                on_lost()
            return
        if fault is Fault.CORRUPT:
            frame.data = self._corrupt(frame.data)
            self.log(frm, "corrupt-classical", f"to={to}")
        node = self.nodes[to]

        def deliver():
            node.handler.on_classical(frm, frame)

        self.schedule(link.classical_delay, Action.DELIVER_CLASSICAL, to, deliver,
                      f"from={frm} src={frame.src} dst={frame.dst} bytes={len(frame.data)}")

    def transmit(self, link: Link, frm: str, qudits: list, frame=None, plane: str = "quantum"):
        """Push qudits through ``link``'s physical channel.

        Returns the surviving qudits (possibly re-prepared by a tamperer), or
        ``None`` if the payload was lost (and destroyed).  The decision is
        atomic for the whole payload.
        """
        to = link.other(frm)
        fault = self._fault(plane, frm, to, frame, link.quantum_loss_p, link.classical_corrupt_p if frame else 0.0)
        if fault is Fault.LOSE:
            self.registry.discard(qudits)
            for q in qudits:
                self.owner.pop(q, None)
                self._pair_done(q, "discarded")
            self.counters["quantum-lost"] += 1
            self.log(frm, "drop-quantum", f"to={to} n={len(qudits)}")
            return None, fault
        if link.pauli_noise_eps > 0:
            for q in qudits:
                if self.rng.random() < link.pauli_noise_eps:
                    choices = nontrivial_paulis(q.dim)
                    a, b = choices[int(self.rng.integers(len(choices)))]
                    apply_pauli(self.registry, q, a, b)
                    self.counters["pauli-error"] += 1
                    self.log(frm, "noise", f"{q!r} pauli=({a},{b})")
        if link.tamper:
            out = []
            for q in qudits:
                rec = self.registry.measure_computational([q])
                self.registry.discard([q])
                self.owner.pop(q, None)
                fresh = self.registry.alloc(q.dim)
                if rec.outcome:
                    perm = np.roll(np.arange(q.dim), rec.outcome)
                    self.registry.apply_permutation([fresh], perm)
                self.owner[fresh] = f"link:{link.label}"
                out.append(fresh)
            self.counters["tampered"] += len(qudits)
            qudits = out
        return qudits, fault

    def send_quantum_direct(self, frm: str, to: str, qudits, frame: Frame) -> None:
        """Send a quantum-classical packet; qudits and escort arrive together or not at all."""
        link = self.link_between(frm, to)
        if link.quantum_mode is not QuantumMode.DIRECT:
            raise NetsimError(f"link {link.label} has no direct quantum channel")
        qudits = self.take(frm, qudits)
        for q in qudits:
            self.owner[q] = f"link:{link.label}"
        frame.link_seq = next(self._link_seq)
        self.counters["quantum-sent"] += 1
        survivors, fault = self.transmit(link, frm, qudits, frame)
        if survivors is None:
            return
        if fault is Fault.CORRUPT:
            frame.data = self._corrupt(frame.data)
            self.log(frm, "corrupt-classical", f"to={to}")
        node = self.nodes[to]

        def deliver():
            for q in survivors:
                self.owner[q] = to
            node.handler.on_quantum(frm, survivors, frame)

        delay = link.quantum_delay + link.qudit_tx_time * len(qudits)
        for q in survivors:
            self.owner[q] = f"link:{link.label}"
        self.schedule(delay, Action.DELIVER_QUANTUM, to, deliver,
                      f"from={frm} src={frame.src} dst={frame.dst} qudits={len(survivors)}")

    # -- EPR pools -------------------------------------------------------
    def purge_expired(self, pool: EprPool) -> int:
        ttl = pool.link.ttl
        if ttl is None:
            return 0
        dead = [pos for pos, pair in pool.entries.items() if self.now - pair.created_at > ttl]
        for pos in dead:
            pair = pool.entries.pop(pos)
            halves = [q for q in (pair.left, pair.right) if self.registry.is_live(q)]
            self.registry.discard(halves)
            for q in (pair.left, pair.right):
                self.owner.pop(q, None)
                self.pair_of.pop(q, None)
            self.pair_status[(pool.link.key, pos)] = "discarded"
        stale = [pos for pos, r in pool.reserved.items() if self.now - r.created_at > ttl]
        for pos in stale:
            r = pool.reserved.pop(pos)
            if self.registry.is_live(r.qudit):
                self.registry.discard([r.qudit])
            self.owner.pop(r.qudit, None)
            self._pair_done(r.qudit, "discarded")
        if dead or stale:
            self.log(pool.link.label, "epr-expire", f"pooled={len(dead)} reserved={len(stale)}")
            self._watermark(pool, pool.size + len(dead))
        return len(dead)

    def register_pair(self, link: Link, pair: EprPair) -> int:
        pool = self.pools[link.key]
        before = pool.size
        pos = pool.next_position
        pool.next_position += 1
        pair.position = pos
        pair.created_at = self.now
        pool.entries[pos] = pair
        self.owner[pair.left] = f"pool:{link.label}"
        self.owner[pair.right] = f"pool:{link.label}"
        self.pair_status[(link.key, pos)] = "pooled"
        self.pair_of[pair.left] = (link.key, pos)
        self.pair_of[pair.right] = (link.key, pos)
        self._watermark(pool, before)
        return pos

    def _watermark(self, pool: EprPool, before: int):
        mark = pool.link.low_watermark
        if (before < mark) != (pool.size < mark) or before == 0 or pool.size == 0:
            self._routing_dirty = True

    def pool_replenish(self, a: str, b: str, target: int | None = None) -> int:
        """Top the pool up to ``target`` (default: the link's pool target)."""
        from .stack.access import entanglement_distribution

        pool = self.pool(a, b)
        self.purge_expired(pool)
        want = (pool.link.pool_target if target is None else target) - pool.size
        if want <= 0:
            return 0
        made = entanglement_distribution(self, pool.link, want)
        self._routing_dirty = True
        return made

    def schedule_replenish(self, a: str, b: str, delay: int = 0) -> Event:
        label = self.link_between(a, b).label
        return self.schedule(delay, Action.POOL_REPLENISH, label, lambda: self.pool_replenish(a, b))

    def allocate_eprs(self, node: str, neighbor: str, count_: int) -> list:
        """Take ``count_`` pairs out of the pool; returns ``(position, local half)``.

        The partner's halves are parked as reservations until a packet naming
        their positions arrives.
        """
        pool = self.pool(node, neighbor)
        self.purge_expired(pool)
        if pool.size < count_:
            raise InsufficientPool(
                f"pool {pool.link.label} holds {pool.size} pairs, {count_} requested"
            )
        before = pool.size
        seq = next(self._link_seq)
        out = []
        for pos in list(pool.entries)[:count_]:
            pair = pool.entries.pop(pos)
            mine, theirs = pool.half(pair, node), pool.half(pair, neighbor)
            self.owner[mine] = node
            self.owner[theirs] = f"reserved:{pool.link.label}"
            pool.reserved[pos] = ReservedHalf(theirs, neighbor, seq, pair.created_at)
            self.pair_status[(pool.link.key, pos)] = "allocated"
            out.append((pos, mine))
        self.log(node, "epr-alloc", f"link={pool.link.label} n={count_} first={out[0][0] if out else '-'}")
        self._watermark(pool, before)
        return out

    def claim_eprs(self, node: str, neighbor: str, positions) -> list:
        pool = self.pool(node, neighbor)
        halves = []
        for pos in positions:
            r = pool.reserved.get(pos)
            if r is None or r.holder != node:
                raise UnknownPosition(f"no reserved half at position {pos} on {pool.link.label}")
        for pos in positions:
            r = pool.reserved.pop(pos)
            self.owner[r.qudit] = node
            halves.append(r.qudit)
        return halves

    def release_stale_reservations(self, node: str, neighbor: str, upto_seq: int) -> int:
        """Release halves reserved for ``node`` before frame ``upto_seq`` was sent."""
        pool = self.pool(node, neighbor)
        stale = [pos for pos, r in pool.reserved.items() if r.holder == node and r.alloc_seq < upto_seq]
        for pos in stale:
            r = pool.reserved.pop(pos)
            self.owner[r.qudit] = node
            self.release(node, [r.qudit], "stale-reservation")
        return len(stale)

    # -- convenience -----------------------------------------------------
    def hops(self, src, dst, quantum=True) -> int:
        if self._routing_dirty:
            self.refresh_routing()
        return self.routing.hops(src, dst, quantum)

    def path_delay(self, src: str, dst: str, quantum: bool = True) -> int:
        """Largest one-way classical+quantum delay along the current route."""
        total, node = 0, src
        while node != dst:
            nxt = self.route(node, dst, quantum)
            link = self.link_between(node, nxt)
            total += max(link.classical_delay, link.quantum_delay + link.qudit_tx_time * 16)
            node = nxt
        return total


@dataclass
class NodeSpec:
    name: str
    kind: NodeKind = NodeKind.HOST
    quantum_capable: bool = True


@dataclass
class FlowSpec:
    src: str
    dst: str
    quantum: bool = True


@dataclass
class ScenarioTopology:
    nodes: list
    links: list
    flows: list = field(default_factory=list)


def build_topology(spec: ScenarioTopology, seed: int = 0, **world_kwargs) -> World:
    """Create a :class:`World` with empty pools and computed routing."""
    world = World(seed, **world_kwargs)
    for n in spec.nodes:
        world.add_node(n.name, n.kind, n.quantum_capable)
    for link in spec.links:
        world.add_link(link)
    world.refresh_routing()
    for flow in spec.flows:
        for end in (flow.src, flow.dst):
            if end not in world.nodes:
                raise TopologyError(f"flow endpoint {end} is not a node")
        if flow.src not in world.routing.dist_c.get(flow.dst, {}):
            raise TopologyError(f"flow {flow.src}->{flow.dst}: endpoints are disconnected")
        if flow.quantum:
            if flow.dst not in world.routing.dist_q or flow.src not in world.routing.dist_q[flow.dst]:
                raise TopologyError(
                    f"flow {flow.src}->{flow.dst}: no path through quantum-capable nodes"
                )
    from .stack.node import install_stacks

    install_stacks(world)
    return world


def fill_pools(world: World) -> int:
    """Run entanglement distribution on every pooled link up to its target."""
    made = 0
    for key in sorted(world.pools):
        link = world.links[key]
        if link.pool_target:
            made += world.pool_replenish(link.a, link.b)
    world.refresh_routing()
    return made


def fidelity_floor(x: float) -> float:
    """Round a fidelity for trace output so tiny float noise stays stable."""
    return math.floor(x * 1e9 + 0.5) / 1e9
