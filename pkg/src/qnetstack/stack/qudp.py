"""qUDP: connectionless quantum datagrams (Protocols 1 and 2)."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

from ..netsim import Action, Event, Frame, InsufficientPool, World
from ..packet import ClassicalUdpHeader, QUdpPacket, QUdpPayload, serialize
from ..primitives import CheckFunctionSpec, check_encode, check_verify
from .transport import (
    PLAIN,
    REPEATER,
    Arrival,
    ensure_pool,
    indicator_for,
    rewrite_hop,
    send_packet,
    teleport_hop,
)

DEFAULT_MTU = 8


@dataclass
class UdpBinding:
    spec: CheckFunctionSpec
    model: str = REPEATER
    outer_spec: CheckFunctionSpec | None = None
    on_deliver: Callable | None = None


@dataclass
class FragmentSet:
    """Fragments of one datagram collected at the receiver."""

    key: tuple
    expected: int
    received: dict = field(default_factory=dict)  # group index -> qudits
    timer: Event | None = None

    @property
    def complete(self) -> bool:
        return len(self.received) == self.expected


def outer_spec_for(total: int) -> CheckFunctionSpec:
    """Access-layer parity wrapped around a plain-model block."""
    return CheckFunctionSpec.parity(total, max(1, math.ceil(total / 4)))


def split_sizes(total: int, mtu: int) -> list:
    """Ceiling split of ``total`` qubits into packets of at most ``mtu``."""
    if mtu < 1:
        raise ValueError("MTU must allow at least one qubit")
    return [min(mtu, total - i) for i in range(0, total, mtu)]


def plan_groups(world: World, src: str, dst: str, total: int, mtu: int = DEFAULT_MTU) -> list:
    """Greedy split by next-hop pool availability, then by MTU.

    Returns ``[(next_hop, size), ...]``.
    """
    cands = world.route_candidates(src, dst, quantum=True)
    for nbr in cands:
        world.purge_expired(world.pool(src, nbr))
    if sum(world.pool_size(src, n) for n in cands) < total and cands:
        ensure_pool(world, src, cands[0], total)
    groups, remaining = [], total
    for nbr in cands:
        take = min(world.pool_size(src, nbr), remaining)
        groups.extend((nbr, size) for size in split_sizes(take, mtu) if take)
        remaining -= take
        if not remaining:
            break
    if remaining:
        raise InsufficientPool(f"{src}: pools toward {dst} cannot carry {total} qubits")
    return groups


def qudp_send(world: World, src: str, dst: str, data, spec: CheckFunctionSpec, *,
              src_port: int = 0, dst_port: int = 0, model: str = REPEATER,
              mtu: int = DEFAULT_MTU, outer_spec: CheckFunctionSpec | None = None) -> int:
    """Check-encode ``data`` and send it as one or more qUDP fragments.

    Returns the datagram's message id.  Nothing is retained by the sender.
    """
    data = world.take(src, data)
    host = world.nodes[src].handler
    mid = host.next_message_id
    host.next_message_id = (mid + 1) & 0xFFFF
    total = spec.n + spec.k
    if model == REPEATER:
        groups = plan_groups(world, src, dst, total, mtu)
    else:
        world.route(src, dst, quantum=True)
        if outer_spec is None:
            outer_spec = outer_spec_for(total)
        total += outer_spec.k
        groups = [(None, size) for size in split_sizes(total, mtu)]
    reg = world.registry
    block = check_encode(reg, data, spec)
    if model == PLAIN:
        block = check_encode(reg, block, outer_spec)
    world.hold(src, block)
    world.log(src, "qudp-send", f"dst={dst} id={mid} qubits={len(block)} groups={len(groups)}")
    header = ClassicalUdpHeader(src_port, dst_port)
    ind = indicator_for("qudp", model)
    offset = 0
    for j, (nbr, size) in enumerate(groups):
        chunk = block[offset:offset + size]
        offset += size
        pkt = QUdpPacket(header, ind, QUdpPayload(mid, j, len(groups), size))
        if model == REPEATER:
            _send_via(world, src, dst, nbr, pkt, chunk)
        else:
            send_packet(world, src, dst, pkt, chunk, PLAIN)
    return mid


def _send_via(world, src, dst, nbr, pkt, chunk):
    positions, corrections = teleport_hop(world, src, nbr, chunk)
    out = rewrite_hop(pkt, positions, corrections)
    world.send_classical(src, nbr, Frame(src, dst, serialize(out)))


def bind(host, port: int, spec: CheckFunctionSpec, *, model: str = REPEATER,
         outer_spec: CheckFunctionSpec | None = None, on_deliver: Callable | None = None) -> UdpBinding:
    b = UdpBinding(spec, model, outer_spec, on_deliver)
    host.udp_bindings[port] = b
    return b


def on_fragment(host, arrival: Arrival) -> None:
    w = host.world
    pkt: QUdpPacket = arrival.packet
    src = arrival.frame.src
    key = (src, pkt.header.src_port, pkt.header.dst_port, pkt.payload.message_id)
    binding = host.udp_bindings.get(pkt.header.dst_port)
    if binding is None:
        w.release(host.name, arrival.qudits, "port-unreachable")
        return
    fs = host.fragments.get(key)
    if fs is None:
        fs = FragmentSet(key, pkt.payload.group_count)
        fs.timer = w.schedule(host.fragment_timeout, Action.TIMEOUT, host.name,
                              lambda: _expire(host, key), f"qudp-reassembly id={key[3]}")
        host.fragments[key] = fs
    j = pkt.payload.group_index
    if pkt.payload.group_count != fs.expected or j in fs.received:
        w.release(host.name, arrival.qudits, "duplicate-fragment")
        return
    fs.received[j] = arrival.qudits
    if fs.complete:
        w.cancel(fs.timer)
        del host.fragments[key]
        qudp_receive(host, fs, binding)


def _expire(host, key) -> None:
    fs = host.fragments.pop(key, None)
    if fs is None:
        return
    qudits = [q for j in sorted(fs.received) for q in fs.received[j]]
    host.world.log(host.name, "qudp-timeout", f"id={key[3]} have={len(fs.received)}/{fs.expected}")
    host.world.release(host.name, qudits, "fragment-timeout")


def qudp_receive(host, fs: FragmentSet, binding: UdpBinding):
    """Reassemble, verify and deliver; returns the delivered qubits or ``None``."""
    w = host.world
    reg = w.registry
    block = [q for j in range(fs.expected) for q in fs.received[j]]
    src, _, port, mid = fs.key
    specs = [binding.spec]
    if binding.model == PLAIN:
        specs.insert(0, binding.outer_spec or outer_spec_for(binding.spec.n + binding.spec.k))
    if len(block) != sum(s.n + s.k for s in specs[:1]):
        w.log(host.name, "qudp-drop", f"id={mid} size={len(block)}")
        w.release(host.name, block, "size-mismatch")
        return None
    for spec in specs:
        ok, block = check_verify(reg, block, spec)
        w.forget_dead()
        w.log(host.name, "qudp-verify", f"id={mid} k={spec.k} ok={int(ok)}")
        if not ok:
            w.release(host.name, block, "check-failed")
            return None
    d = host.deliver("qudp", src, port, mid, block)
    if binding.on_deliver:
        binding.on_deliver(d)
    return block
