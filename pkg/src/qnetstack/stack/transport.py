"""Hop-level quantum payload movement shared by qUDP and qTCP."""
from __future__ import annotations

from dataclasses import dataclass, replace

from ..netsim import Frame, InsufficientPool, UnknownPosition, World
from ..packet import Indicator, PacketError, QTcpPacket, QUdpPacket, parse, serialize
from ..primitives import CorrectionWord, pauli_correct, teleport_measure

REPEATER = "repeater"
PLAIN = "plain"
MODELS = (REPEATER, PLAIN)


def ensure_pool(world: World, node: str, nbr: str, need: int) -> bool:
    """Top up the pool on demand when the link has a replenish target."""
    pool = world.pool(node, nbr)
    world.purge_expired(pool)
    if pool.size >= need:
        return True
    if pool.link.pool_target:
        world.pool_replenish(node, nbr, target=max(pool.link.pool_target, need))
    return pool.size >= need


def pick_next_hop(world: World, node: str, dst: str, need: int) -> str:
    """First routing candidate whose pool can carry ``need`` qubits."""
    cands = world.route_candidates(node, dst, quantum=True)
    for nbr in cands:
        world.purge_expired(world.pool(node, nbr))
    for nbr in cands:
        if world.pool_size(node, nbr) >= need:
            return nbr
    for nbr in cands:
        if ensure_pool(world, node, nbr, need):
            return nbr
    raise InsufficientPool(f"{node}: no next hop toward {dst} can supply {need} pairs")


def teleport_hop(world: World, node: str, nbr: str, qubits) -> tuple:
    """Teleport ``qubits`` from ``node`` to ``nbr`` over pooled pairs.

    Returns ``(positions, corrections)`` for the packet that follows.
    """
    alloc = world.allocate_eprs(node, nbr, len(qubits))
    qubits = world.take(node, qubits)
    outcomes = []
    for (pos, half), q in zip(alloc, qubits):
        outcomes.append(teleport_measure(world.registry, q, half))
    world.consumed([h for _, h in alloc])
    for q in qubits:
        world.owner.pop(q, None)
    return [pos for pos, _ in alloc], CorrectionWord(outcomes)


def claim_and_correct(world: World, node: str, prev: str, positions, corrections) -> list:
    halves = world.claim_eprs(node, prev, positions)
    for q, word in zip(halves, corrections):
        pauli_correct(world.registry, q, word)
    return halves


def packet_qubit_count(pkt) -> int:
    return pkt.payload.qubit_count


@dataclass
class Arrival:
    """A parsed packet and the local qudits it delivered (already corrected)."""

    frm: str
    frame: Frame
    packet: QUdpPacket | QTcpPacket
    qudits: list


def receive_classical(world: World, node: str, frm: str, frame: Frame, *, correct: bool = True):
    """Parse a repeater-model frame at its final hop and claim its halves.

    Returns an :class:`Arrival`, or ``None`` after dropping a bad packet
    (reserved halves from before it are released).
    """
    try:
        pkt = parse(frame.data)
    except PacketError as exc:
        world.log(node, "drop-corrupt", f"from={frm} {type(exc).__name__}")
        if world.link_between(node, frm).key in world.pools:
            world.release_stale_reservations(node, frm, frame.link_seq)
        return None
    qudits = []
    if pkt.indicator.repeater and pkt.payload.qubit_count:
        try:
            if correct:
                qudits = claim_and_correct(world, node, frm, pkt.payload.epr_positions, pkt.payload.corrections)
            else:
                qudits = world.claim_eprs(node, frm, pkt.payload.epr_positions)
        except UnknownPosition as exc:
            world.log(node, "drop-position", f"from={frm} {exc}")
            return None
    return Arrival(frm, frame, pkt, qudits)


def receive_quantum(world: World, node: str, frm: str, qudits, frame: Frame):
    """Parse a plain-model escort; a bad escort takes its qudits down with it."""
    try:
        pkt = parse(frame.data)
    except PacketError as exc:
        world.log(node, "drop-corrupt", f"from={frm} {type(exc).__name__}")
        world.release(node, qudits, "corrupt-escort")
        return None
    if pkt.payload.qubit_count != len(qudits) or pkt.indicator.repeater:
        world.log(node, "drop-mismatch", f"from={frm} count={pkt.payload.qubit_count} got={len(qudits)}")
        world.release(node, qudits, "escort-mismatch")
        return None
    return Arrival(frm, frame, pkt, list(qudits))


def send_packet(world: World, node: str, dst: str, pkt, qubits=(), model: str = REPEATER) -> None:
    """Send ``pkt`` toward ``dst`` carrying ``qubits`` (one hop)."""
    qubits = list(qubits)
    if model == PLAIN:
        if qubits:
            nxt = world.route(node, dst, quantum=True)
            world.send_quantum_direct(node, nxt, qubits, Frame(node, dst, serialize(pkt)))
        else:
            nxt = world.route(node, dst, quantum=False)
            world.send_classical(node, nxt, Frame(node, dst, serialize(pkt)))
        return
    if not qubits:
        nxt = world.route(node, dst, quantum=False)
        world.send_classical(node, nxt, Frame(node, dst, serialize(pkt)))
        return
    nxt = pick_next_hop(world, node, dst, len(qubits))
    positions, corrections = teleport_hop(world, node, nxt, qubits)
    pkt = _with_teleport(pkt, positions, corrections)
    world.send_classical(node, nxt, Frame(node, dst, serialize(pkt)))


def _with_teleport(pkt, positions, corrections):
    return replace(pkt, payload=replace(pkt.payload, qubit_count=len(positions),
                                        epr_positions=tuple(positions), corrections=corrections))


def rewrite_hop(pkt, positions, corrections):
    """Packet ``pkt`` re-addressed to new pool positions and corrections."""
    return _with_teleport(pkt, positions, corrections)


def indicator_for(protocol: str, model: str) -> Indicator:
    return {
        ("qudp", REPEATER): Indicator.QUDP_REPEATER,
        ("qtcp", REPEATER): Indicator.QTCP_REPEATER,
        ("qudp", PLAIN): Indicator.QUDP_PLAIN,
        ("qtcp", PLAIN): Indicator.QTCP_PLAIN,
    }[(protocol, model)]
