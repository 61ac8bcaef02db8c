"""Per-node protocol handlers: hosts terminate qUDP/qTCP, routers forward."""
from __future__ import annotations

from dataclasses import dataclass

from ..netsim import Action, Frame, InsufficientPool, NodeKind, NoRoute, World
from ..packet import PacketError, QTcpPacket, QUdpPacket, parse, serialize
from .transport import (
    Arrival,
    pick_next_hop,
    receive_classical,
    receive_quantum,
    rewrite_hop,
    teleport_hop,
)


@dataclass
class Delivery:
    protocol: str
    src: str
    port: int
    ident: int
    qubits: list
    time: int


class RouterStack:
    """Store-decode-and-forward for repeater packets; store-and-forward for plain packets."""

    def __init__(self, world: World, name: str, queue_timeout: int = 20, retry_interval: int = 1):
        self.world = world
        self.name = name
        self.queue_timeout = queue_timeout
        self.retry_interval = retry_interval

    def on_classical(self, frm: str, frame: Frame) -> None:
        w = self.world
        if frame.dst == self.name:
            w.log(self.name, "drop-addressed-to-router", f"from={frm}")
            return
        if w.link_between(self.name, frm).key not in w.pools:
            # plain model: forwarded without inspection
            self._forward_plain_classical(frm, frame)
            return
        try:
            pkt = parse(frame.data)
        except PacketError as exc:
            # drop and release the halves this packet named
            w.log(self.name, "drop-corrupt", f"from={frm} {type(exc).__name__}")
            w.release_stale_reservations(self.name, frm, frame.link_seq)
            return
        if not pkt.indicator.repeater or pkt.payload.qubit_count == 0:
            self._forward_plain_classical(frm, frame)
            return
        w.log(self.name, "verify", f"from={frm} qubits={pkt.payload.qubit_count}")
        arrival = receive_classical(w, self.name, frm, frame, correct=False)
        if arrival is None:
            return
        self._swap_forward(arrival, deadline=w.now + self.queue_timeout)

    def _forward_plain_classical(self, frm: str, frame: Frame) -> None:
        w = self.world
        try:
            nxt = w.route(self.name, frame.dst, quantum=False)
        except NoRoute:
            w.log(self.name, "drop-no-route", f"dst={frame.dst}")
            return
        w.log(self.name, "forward", f"to={nxt} dst={frame.dst}")
        w.send_classical(self.name, nxt, Frame(frame.src, frame.dst, frame.data))

    def _swap_forward(self, arrival: Arrival, deadline: int) -> None:
        w = self.world
        pkt = arrival.packet
        n = len(arrival.qudits)
        try:
            nxt = pick_next_hop(w, self.name, arrival.frame.dst, n)
        except InsufficientPool:
            if w.now >= deadline:
                w.log(self.name, "drop-no-pool", f"dst={arrival.frame.dst} n={n}")
                w.release(self.name, arrival.qudits, "router-queue-timeout")
                return
            w.log(self.name, "queue", f"dst={arrival.frame.dst} n={n}")
            w.schedule(self.retry_interval, Action.TIMEOUT, self.name,
                       lambda: self._swap_forward(arrival, deadline), "router-retry")
            return
        # Bell-measure X against the fresh Y; outgoing word = incoming ^ new
        positions, fresh = teleport_hop(w, self.name, nxt, arrival.qudits)
        out = rewrite_hop(pkt, positions, pkt.payload.corrections ^ fresh)
        w.log(self.name, "swap-forward", f"to={nxt} n={n}")
        w.send_classical(self.name, nxt, Frame(arrival.frame.src, arrival.frame.dst, serialize(out)))

    def on_quantum(self, frm: str, qudits, frame: Frame) -> None:
        # store-and-forward: the whole packet has arrived; nothing is checked
        w = self.world
        try:
            nxt = w.route(self.name, frame.dst, quantum=True)
        except NoRoute:
            w.release(self.name, qudits, "no-route")
            return
        w.log(self.name, "forward", f"to={nxt} dst={frame.dst} qudits={len(qudits)}")
        w.send_quantum_direct(self.name, nxt, qudits, Frame(frame.src, frame.dst, frame.data))


class HostStack:
    """End-host transport: qUDP sockets and qTCP connections."""

    def __init__(self, world: World, name: str):
        self.world = world
        self.name = name
        self.udp_bindings: dict = {}
        self.fragments: dict = {}
        self.listeners: dict = {}
        self.connections: dict = {}
        self.closed_connections: list = []
        self.delivered: list[Delivery] = []
        self.next_message_id = 0
        self.fragment_timeout = 50

    # -- dispatch --------------------------------------------------------
    def on_classical(self, frm: str, frame: Frame) -> None:
        w = self.world
        if frame.dst != self.name:
            w.log(self.name, "drop-misrouted", f"dst={frame.dst}")
            return
        arrival = receive_classical(w, self.name, frm, frame)
        if arrival is not None:
            self._dispatch(arrival)

    def on_quantum(self, frm: str, qudits, frame: Frame) -> None:
        w = self.world
        if frame.dst != self.name:
            w.release(self.name, qudits, "misrouted")
            return
        arrival = receive_quantum(w, self.name, frm, qudits, frame)
        if arrival is not None:
            self._dispatch(arrival)

    def _dispatch(self, arrival: Arrival) -> None:
        from . import qtcp, qudp

        if isinstance(arrival.packet, QUdpPacket):
            qudp.on_fragment(self, arrival)
        elif isinstance(arrival.packet, QTcpPacket):
            qtcp.on_segment(self, arrival)

    def deliver(self, protocol: str, src: str, port: int, ident: int, qubits) -> Delivery:
        w = self.world
        for q in qubits:
            w.owner[q] = f"app:{self.name}"
        d = Delivery(protocol, src, port, ident, list(qubits), w.now)
        self.delivered.append(d)
        w.log(self.name, "deliver", f"{protocol} from={src} port={port} id={ident} n={len(qubits)}")
        return d


def install_stacks(world: World) -> None:
    for name, node in world.nodes.items():
        if node.kind is NodeKind.HOST:
            node.handler = HostStack(world, name)
        else:
            node.handler = RouterStack(world, name)
