"""Wire format for qUDP / qTCP packets (big-endian throughout).

qUDP::

    src_port:u16 dst_port:u16 length:u16 checksum:u16 | indicator:u8 | payload

qTCP::

    src_port:u16 dst_port:u16 seq:u32 ack:u32 flags:u8 rsv:u8 window:u16
    checksum:u16 length:u16 | indicator:u8 | pseudo_ack:u32 pseudo_window:u16
    | stage:u8 level:u8 round:u32 | payload

The payload of a repeater-model packet lists the EPR positions consumed on
the last hop and two correction bits per teleported qubit.  Plain-model
payloads carry only counts and ordering; the qudits travel alongside.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import IntEnum, IntFlag

from .kernels import ones_complement_sum
from .primitives import CorrectionWord


class PacketError(Exception):
    """Raised by :func:`parse` for any malformed buffer."""


class TruncatedPacket(PacketError):
    pass


class ChecksumMismatch(PacketError):
    pass


class UnknownIndicator(PacketError):
    pass


class LengthMismatch(PacketError):
    pass


class MalformedPacket(PacketError):
    pass


class Indicator(IntEnum):
    QUDP_REPEATER = 0x51
    QTCP_REPEATER = 0x52
    QUDP_PLAIN = 0x53
    QTCP_PLAIN = 0x54

    @property
    def repeater(self) -> bool:
        return self in (Indicator.QUDP_REPEATER, Indicator.QTCP_REPEATER)


class TcpFlags(IntFlag):
    NONE = 0
    SYN = 0x01
    ACK = 0x02
    FIN = 0x04
    RST = 0x08


class ReceiverStatus(IntEnum):
    WAITING_A2 = 0
    HAVE_A2_AWAITING_A3 = 1
    A3_INVALID = 2
    BOTH_VALID = 3


class Stage(IntEnum):
    """What a qTCP packet's quantum payload is."""

    CONTROL = 0
    SHARE_A2 = 1
    SHARE_A3 = 2
    HS_FORWARD = 3  # SYN: A2 out; SYN-ACK: loopback of B2
    HS_RETURN = 4  # SYN-ACK second packet: B3; ACK: A3 back


UDP_HEADER = struct.Struct("!HHHH")
TCP_HEADER = struct.Struct("!HHIIBBHHH")
QTCP_SEGMENT = struct.Struct("!BBI")
PAYLOAD_HEAD = struct.Struct("!HHHH")
MAX_ROUND = (1 << 30) - 1


def compute_checksum(data: bytes) -> int:
    """RFC 1071 Internet checksum."""
    return (~ones_complement_sum(data)) & 0xFFFF


def encode_pseudo_ack(status: ReceiverStatus, round_index: int) -> int:
    if not 0 <= round_index <= MAX_ROUND:
        raise OverflowError(f"round {round_index} does not fit in 30 bits")
    return (round_index << 2) | int(ReceiverStatus(status))


def decode_pseudo_ack(value: int) -> tuple:
    return ReceiverStatus(value & 0b11), value >> 2


@dataclass(frozen=True)
class ClassicalUdpHeader:
    src_port: int
    dst_port: int
    length: int = 0
    checksum: int = 0


@dataclass(frozen=True)
class ClassicalTcpHeader:
    src_port: int
    dst_port: int
    seq: int = 0
    ack: int = 0
    flags: TcpFlags = TcpFlags.NONE
    window: int = 0
    checksum: int = 0
    length: int = 0

    def __post_init__(self):
        flags = TcpFlags(self.flags)
        if TcpFlags.SYN in flags and TcpFlags.FIN in flags:
            raise ValueError("SYN and FIN cannot both be set")
        object.__setattr__(self, "flags", flags)


@dataclass(frozen=True)
class QUdpPayload:
    """Fragment ``group_index`` of ``group_count`` of datagram ``message_id``."""

    message_id: int = 0
    group_index: int = 0
    group_count: int = 1
    qubit_count: int = 0
    epr_positions: tuple = ()
    corrections: CorrectionWord = field(default_factory=CorrectionWord)

    def __post_init__(self):
        object.__setattr__(self, "epr_positions", tuple(self.epr_positions))
        if not isinstance(self.corrections, CorrectionWord):
            object.__setattr__(self, "corrections", CorrectionWord(self.corrections))


@dataclass(frozen=True)
class QUdpPacket:
    header: ClassicalUdpHeader
    indicator: Indicator
    payload: QUdpPayload


@dataclass(frozen=True)
class QTcpPacket:
    header: ClassicalTcpHeader
    indicator: Indicator
    pseudo_ack: int = 0
    pseudo_window: int = 0
    stage: Stage = Stage.CONTROL
    level: int = 0
    round: int = 0
    payload: QUdpPayload = field(default_factory=QUdpPayload)


def _pack_corrections(word: CorrectionWord) -> bytes:
    bits = 0
    for i, j in word:
        bits = (bits << 2) | (i << 1) | j
    nbytes = (2 * len(word) + 7) // 8
    bits <<= nbytes * 8 - 2 * len(word)
    return bits.to_bytes(nbytes, "big")


def _unpack_corrections(raw: bytes, count: int) -> CorrectionWord:
    bits = int.from_bytes(raw, "big") >> (len(raw) * 8 - 2 * count) if raw else 0
    pairs = []
    for idx in range(count):
        v = bits >> (2 * (count - 1 - idx)) & 0b11
        pairs.append((v >> 1, v & 1))
    if raw and int.from_bytes(raw, "big") & ((1 << (len(raw) * 8 - 2 * count)) - 1):
        raise MalformedPacket("nonzero padding after correction bits")
    return CorrectionWord(pairs)


def _encode_payload(p: QUdpPayload, repeater: bool) -> bytes:
    out = PAYLOAD_HEAD.pack(p.message_id, p.group_index, p.group_count, p.qubit_count)
    if repeater:
        if len(p.epr_positions) != p.qubit_count or len(p.corrections) != p.qubit_count:
            raise ValueError("repeater payload needs one position and one correction per qubit")
        out += struct.pack(f"!{p.qubit_count}I", *p.epr_positions)
        out += _pack_corrections(p.corrections)
    return out


def _decode_payload(raw: bytes, repeater: bool) -> QUdpPayload:
    if len(raw) < PAYLOAD_HEAD.size:
        raise TruncatedPacket("payload shorter than its fixed fields")
    mid, gi, gc, count = PAYLOAD_HEAD.unpack_from(raw)
    if gc == 0 or gi >= gc:
        raise MalformedPacket(f"group index {gi} outside group count {gc}")
    body = raw[PAYLOAD_HEAD.size:]
    if not repeater:
        if body:
            raise LengthMismatch("plain-model payload has trailing bytes")
        return QUdpPayload(mid, gi, gc, count)
    need = 4 * count + (2 * count + 7) // 8
    if len(body) != need:
        raise LengthMismatch(f"payload body is {len(body)} bytes, expected {need}")
    positions = struct.unpack_from(f"!{count}I", body)
    corrections = _unpack_corrections(body[4 * count:], count)
    return QUdpPayload(mid, gi, gc, count, positions, corrections)


def _with_checksum(raw: bytearray, offset: int) -> bytes:
    raw[offset:offset + 2] = b"\x00\x00"
    raw[offset:offset + 2] = compute_checksum(bytes(raw)).to_bytes(2, "big")
    return bytes(raw)


def serialize(p) -> bytes:
    """Bytes for ``p`` with length and checksum fields filled in."""
    if isinstance(p, QUdpPacket):
        ind = Indicator(p.indicator)
        if ind not in (Indicator.QUDP_REPEATER, Indicator.QUDP_PLAIN):
            raise ValueError(f"{ind!r} is not a qUDP indicator")
        body = bytes([ind]) + _encode_payload(p.payload, ind.repeater)
        length = UDP_HEADER.size + len(body)
        if length > 0xFFFF:
            raise ValueError("packet too long")
        raw = bytearray(UDP_HEADER.pack(p.header.src_port, p.header.dst_port, length, 0) + body)
        return _with_checksum(raw, 6)
    if isinstance(p, QTcpPacket):
        ind = Indicator(p.indicator)
        if ind not in (Indicator.QTCP_REPEATER, Indicator.QTCP_PLAIN):
            raise ValueError(f"{ind!r} is not a qTCP indicator")
        if not 0 <= p.round <= MAX_ROUND:
            raise OverflowError("round does not fit in 30 bits")
        body = (
            bytes([ind])
            + struct.pack("!IH", p.pseudo_ack, p.pseudo_window)
            + QTCP_SEGMENT.pack(int(p.stage), p.level, p.round)
            + _encode_payload(p.payload, ind.repeater)
        )
        length = TCP_HEADER.size + len(body)
        h = p.header
        raw = bytearray(
            TCP_HEADER.pack(h.src_port, h.dst_port, h.seq, h.ack, int(h.flags), 0, h.window, 0, length)
            + body
        )
        return _with_checksum(raw, 16)
    raise TypeError(f"cannot serialize {type(p).__name__}")


def _verify(b: bytes, length: int):
    if length != len(b):
        raise LengthMismatch(f"length field {length} but {len(b)} bytes")
    if ones_complement_sum(b) != 0xFFFF:
        raise ChecksumMismatch("checksum does not verify")


def parse(b: bytes):
    """Decode a packet, raising a :class:`PacketError` subclass on any defect."""
    b = bytes(b)
    if len(b) < UDP_HEADER.size + 1:
        raise TruncatedPacket(f"{len(b)} bytes is shorter than any packet")
    udp_like = b[8] in (Indicator.QUDP_REPEATER, Indicator.QUDP_PLAIN)
    tcp_like = len(b) > TCP_HEADER.size and b[20] in (Indicator.QTCP_REPEATER, Indicator.QTCP_PLAIN)
    try:
        if udp_like and (not tcp_like or UDP_HEADER.unpack_from(b)[2] == len(b)):
            return _parse_udp(b)
        if tcp_like:
            return _parse_tcp(b)
    except (struct.error, ValueError) as exc:
        raise MalformedPacket(str(exc)) from exc
    if len(b) <= TCP_HEADER.size:
        raise TruncatedPacket(f"{len(b)} bytes carries no recognizable indicator")
    raise UnknownIndicator("no known indicator at the UDP or TCP position")


def _parse_udp(b: bytes) -> QUdpPacket:
    src, dst, length, checksum = UDP_HEADER.unpack_from(b)
    _verify(b, length)
    ind = Indicator(b[8])
    payload = _decode_payload(b[9:], ind.repeater)
    return QUdpPacket(ClassicalUdpHeader(src, dst, length, checksum), ind, payload)


def _parse_tcp(b: bytes) -> QTcpPacket:
    src, dst, seq, ack, flags, rsv, window, checksum, length = TCP_HEADER.unpack_from(b)
    _verify(b, length)
    if rsv or flags & ~0x0F:
        raise MalformedPacket("reserved header bits set")
    if flags & TcpFlags.SYN and flags & TcpFlags.FIN:
        raise MalformedPacket("SYN and FIN both set")
    ind = Indicator(b[20])
    off = TCP_HEADER.size + 1
    if len(b) < off + 6 + QTCP_SEGMENT.size:
        raise TruncatedPacket("qTCP fields truncated")
    pseudo_ack, pseudo_window = struct.unpack_from("!IH", b, off)
    stage, level, rnd = QTCP_SEGMENT.unpack_from(b, off + 6)
    if stage not in Stage._value2member_map_:
        raise MalformedPacket(f"unknown stage tag {stage}")
    if rnd > MAX_ROUND:
        raise MalformedPacket("round exceeds 30 bits")
    payload = _decode_payload(b[off + 6 + QTCP_SEGMENT.size:], ind.repeater)
    header = ClassicalTcpHeader(src, dst, seq, ack, TcpFlags(flags), window, checksum, length)
    return QTcpPacket(header, ind, pseudo_ack, pseudo_window, Stage(stage), level, rnd, payload)


def normalized(p):
    """``p`` as it reads back from the wire (length and checksum filled in)."""
    return parse(serialize(p))
