"""qTCP: quantum three-way handshake, share-based retransmission, termination.

A block travels as three (2,3)-threshold shares.  ``A2`` goes first; once it
is acknowledged ``A3`` follows.  A lost ``A2`` is answered by rebuilding the
secret from ``A1 A3`` and re-encoding; a lost ``A3`` by encoding ``A1`` one
level deeper.  The receiver keeps one ``A2`` per level and unwinds the levels
when the final ``A3`` arrives.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum

from ..netsim import Action, Event, World
from ..packet import (
    ClassicalTcpHeader,
    QTcpPacket,
    QUdpPayload,
    ReceiverStatus,
    Stage,
    TcpFlags,
    decode_pseudo_ack,
    encode_pseudo_ack,
)
from ..primitives import (
    CheckFunctionSpec,
    check_encode,
    check_verify,
    embed_qubit,
    extract_qubit,
    make_epr,
    qss_decode,
    qss_encode,
    qubits_to_qutrit,
    qutrit_to_qubits,
)
from .transport import PLAIN, REPEATER, Arrival, indicator_for, send_packet

DEFAULT_MAX_ROUNDS = 40
DEFAULT_WINDOW = 4
SHARE_STAGES = (Stage.SHARE_A2, Stage.SHARE_A3)


class QTcpError(Exception):
    pass


class Phase(str, Enum):
    CLOSED = "closed"
    LISTEN = "listen"
    SYN_SENT = "syn-sent"
    SYN_RECEIVED = "syn-received"
    ESTABLISHED = "established"
    FIN_WAIT_1 = "fin-wait-1"
    FIN_WAIT_2 = "fin-wait-2"
    CLOSING = "closing"
    CLOSE_WAIT = "close-wait"
    LAST_ACK = "last-ack"


class Verdict(str, Enum):
    ESTABLISHED = "established"
    REFUSED_CLASSICAL = "refused-classical"
    REFUSED_QUANTUM = "refused-quantum"
    TIMEOUT = "timeout"
    RESET = "reset"


class SenderStatus(str, Enum):
    NOT_SENT_NOT_READY = "not-sent-not-ready"
    NOT_SENT_READY = "not-sent-ready"
    SENT_NOT_ACKED = "sent-not-acked"
    SENT_ACKED = "sent-acked"


class BlockStage(str, Enum):
    QUEUED = "queued"
    A2_INFLIGHT = "a2-inflight"
    A3_INFLIGHT = "a3-inflight"
    RECURSING = "recursing"
    DONE = "done"
    FAILED = "failed"


@dataclass
class TransferBlock:
    seq: int
    spec: CheckFunctionSpec
    secret: list  # level-0 qutrits until the first encoding
    status: SenderStatus = SenderStatus.NOT_SENT_NOT_READY
    stage: BlockStage = BlockStage.QUEUED
    round: int = -1
    levels: list = field(default_factory=list)  # per level: {share index: qutrits}
    level_rounds: list = field(default_factory=list)  # round that produced each level's A2
    transmissions: int = 0
    timer: Event | None = None
    failure: str = ""

    @property
    def level(self) -> int:
        return len(self.levels) - 1

    @property
    def finished(self) -> bool:
        return self.stage in (BlockStage.DONE, BlockStage.FAILED)

    def held(self) -> list:
        return [q for lvl in self.levels for share in lvl.values() for q in share]


@dataclass
class ReceiveBlock:
    seq: int
    status: ReceiverStatus = ReceiverStatus.WAITING_A2
    round: int = 0
    level: int = -1
    stored: dict = field(default_factory=dict)  # level -> (round, qutrits)
    history: list = field(default_factory=list)
    timer: Event | None = None
    done: bool = False
    failed: bool = False

    def set_status(self, status: ReceiverStatus, rnd: int):
        self.status, self.round = status, rnd
        self.history.append((status, rnd))

    def held(self) -> list:
        return [q for _, qs in self.stored.values() for q in qs]


ALLOWED_TRANSITIONS = {
    (ReceiverStatus.WAITING_A2, ReceiverStatus.HAVE_A2_AWAITING_A3),
    (ReceiverStatus.HAVE_A2_AWAITING_A3, ReceiverStatus.BOTH_VALID),
    (ReceiverStatus.HAVE_A2_AWAITING_A3, ReceiverStatus.A3_INVALID),
    (ReceiverStatus.A3_INVALID, ReceiverStatus.WAITING_A2),
}


def history_is_valid(history) -> bool:
    """Receiver statuses follow the allowed graph, starting from Waiting_A2."""
    prev = ReceiverStatus.WAITING_A2
    for status, _ in history:
        if (prev, status) not in ALLOWED_TRANSITIONS:
            return False
        prev = status
    return True


def reliability_holds(tb: TransferBlock, rb: ReceiveBlock | None) -> bool:
    """At least two shares of the live round are held by A or validly by B."""
    if tb.finished or tb.stage is BlockStage.QUEUED or (rb is not None and rb.done):
        return True

    def available(lvl: int) -> int:
        have = len(tb.levels[lvl]) if lvl == tb.level else int(available(lvl + 1) >= 2)
        if rb is not None and lvl in rb.stored and rb.stored[lvl][0] == tb.level_rounds[lvl]:
            have += 1
        return have

    return available(0) >= 2


class QTcpConnection:
    """One endpoint of a qTCP connection."""

    def __init__(self, host, peer: str, local_port: int, peer_port: int, *, model: str = REPEATER,
                 m: int = 3, spec: CheckFunctionSpec | None = None, window: int = DEFAULT_WINDOW,
                 max_rounds: int = DEFAULT_MAX_ROUNDS, rto: int | None = None,
                 auto_close: bool = False):
        if model not in (REPEATER, PLAIN):
            raise ValueError(f"unknown model {model!r}")
        if m < 1:
            raise ValueError("handshake needs m >= 1 EPR pairs")
        self.host = host
        self.world: World = host.world
        self.name = host.name
        self.peer = peer
        self.local_port = local_port
        self.peer_port = peer_port
        self.model = model
        self.m = m
        self.spec = spec
        self.window = window
        self.peer_window = 1
        self.max_rounds = max_rounds
        self.rto = rto if rto is not None else 2 * self.world.path_delay(self.name, peer) + 2
        self.phase = Phase.CLOSED
        self.verdict: Verdict | None = None
        self.check_outcomes: list = []
        self.quantum_check_passed: bool | None = None
        self.iss = 0
        self.irs = 0
        self.hs: dict = {}
        self.hs_timer: Event | None = None
        self.send_queue: deque = deque()
        self.outstanding: dict = {}
        self.blocks: list = []
        self.next_block = 0
        self.recv_blocks: dict = {}
        self.delivered: list = []
        self.fin_seq = None
        self.fin_timer: Event | None = None
        self.on_deliver = None
        self.on_established = None
        self.packets_sent = 0
        self._closing = False
        self.auto_close = auto_close

    # -- plumbing --------------------------------------------------------
    @property
    def key(self) -> tuple:
        return (self.local_port, self.peer, self.peer_port)

    def _log(self, action: str, details: str = ""):
        self.world.log(self.name, action, f"conn={self.local_port}->{self.peer}:{self.peer_port} {details}".rstrip())

    def _send(self, flags=TcpFlags.NONE, *, seq=0, ack=0, stage=Stage.CONTROL, level=0, rnd=0,
              pseudo_ack=0, qudits=(), qutrits=False):
        w = self.world
        qudits = list(qudits)
        if qutrits and self.model == REPEATER:
            carried = []
            for t in w.take(self.name, qudits):
                pair = qutrit_to_qubits(w.registry, t)
                w.owner.pop(t, None)
                w.hold(self.name, pair)
                carried.extend(pair)
            qudits = carried
        free = max(0, self.window - sum(1 for rb in self.recv_blocks.values() if not rb.done))
        header = ClassicalTcpHeader(self.local_port, self.peer_port, seq & 0xFFFFFFFF, ack & 0xFFFFFFFF,
                                    flags, min(free, 0xFFFF))
        pkt = QTcpPacket(header, indicator_for("qtcp", self.model), pseudo_ack, min(free, 0xFFFF),
                         stage, level, rnd, QUdpPayload(0, 0, 1, len(qudits)))
        self.packets_sent += 1
        send_packet(w, self.name, self.peer, pkt, qudits, self.model)

    def _unpack(self, arrival: Arrival, stage: Stage) -> list | None:
        """Local qudits of a share or handshake payload; ``None`` if unusable."""
        w = self.world
        qudits = list(arrival.qudits)
        if stage in SHARE_STAGES and self.model == REPEATER:
            if len(qudits) % 2:
                w.release(self.name, qudits, "odd-carrier")
                return None
            out = []
            for a, b in zip(qudits[::2], qudits[1::2]):
                t = qubits_to_qutrit(w.registry, (a, b))
                w.owner.pop(a, None)
                w.owner.pop(b, None)
                if t is None:
                    w.release(self.name, out + qudits[len(out) * 2 + 2:], "carrier-leak")
                    return None
                w.hold(self.name, [t])
                out.append(t)
            return out
        return qudits

    def _timer(self, delay, fn, detail) -> Event:
        return self.world.schedule(delay, Action.TIMEOUT, self.name, fn, detail)

    # -- handshake -------------------------------------------------------
    def connect(self):
        """Active open: SYN with ``A2`` halves of ``m`` local pairs."""
        if self.phase is not Phase.CLOSED:
            raise QTcpError(f"connect in phase {self.phase.value}")
        w = self.world
        self.iss = int(w.rng.integers(1 << 31))
        pairs = [make_epr(w.registry, w.now) for _ in range(self.m)]
        self.hs["A1"] = [p.left for p in pairs]
        a2 = [p.right for p in pairs]
        w.hold(self.name, self.hs["A1"] + a2)
        self.phase = Phase.SYN_SENT
        self._log("syn", f"m={self.m}")
        self._send(TcpFlags.SYN, seq=self.iss, stage=Stage.HS_FORWARD, qudits=a2)
        self.hs_timer = self._timer(3 * self.rto, self._handshake_timeout, "qtcp-syn")

    def _accept_syn(self, pkt: QTcpPacket, payload: list):
        w = self.world
        self.irs = pkt.header.seq
        self.peer_window = max(1, pkt.pseudo_window)
        self.iss = int(w.rng.integers(1 << 31))
        self.phase = Phase.SYN_RECEIVED
        self._log("syn-received", f"m={len(payload)}")
        if len(payload) != self.m:
            self._refuse(Verdict.REFUSED_CLASSICAL, payload)
            return
        flags = TcpFlags.SYN | TcpFlags.ACK
        self._send(flags, seq=self.iss, ack=self.irs + 1, stage=Stage.HS_FORWARD, qudits=payload)
        pairs = [make_epr(w.registry, w.now) for _ in range(self.m)]
        self.hs["B4"] = [p.right for p in pairs]
        b3 = [p.left for p in pairs]
        w.hold(self.name, self.hs["B4"] + b3)
        self._send(flags, seq=self.iss, ack=self.irs + 1, stage=Stage.HS_RETURN, qudits=b3)
        self.hs_timer = self._timer(3 * self.rto, self._handshake_timeout, "qtcp-synack")

    def _bell_check(self, left: list, right: list) -> bool:
        w = self.world
        outcomes = []
        for a, b in zip(left, right):
            outcomes.append(w.registry.bell_measure(a, b))
            w.registry.discard([a, b])
            w.owner.pop(a, None)
            w.owner.pop(b, None)
        self.check_outcomes = outcomes
        self.quantum_check_passed = all(o == (0, 0) for o in outcomes)
        return self.quantum_check_passed

    def _on_handshake(self, pkt: QTcpPacket, payload: list):
        h = pkt.header
        if self.phase is Phase.SYN_SENT and TcpFlags.SYN in h.flags and TcpFlags.ACK in h.flags:
            slot = "A2_back" if pkt.stage is Stage.HS_FORWARD else "A3"
            if slot in self.hs or len(payload) != self.m:
                self.world.release(self.name, payload, "duplicate-handshake")
                return
            self.hs[slot] = payload
            self.irs = h.seq
            self.peer_window = max(1, pkt.pseudo_window)
            if "A2_back" in self.hs and "A3" in self.hs:
                self.world.cancel(self.hs_timer)
                if h.ack != self.iss + 1:
                    self._refuse(Verdict.REFUSED_CLASSICAL)
                    return
                if not self._bell_check(self.hs.pop("A1"), self.hs.pop("A2_back")):
                    self._refuse(Verdict.REFUSED_QUANTUM)
                    return
                self._send(TcpFlags.ACK, seq=self.iss + 1, ack=self.irs + 1, stage=Stage.HS_RETURN,
                           qudits=self.hs.pop("A3"))
                self._established()
            return
        if self.phase is Phase.SYN_RECEIVED and pkt.stage is Stage.HS_RETURN and TcpFlags.ACK in h.flags:
            self.world.cancel(self.hs_timer)
            if h.ack != self.iss + 1 or h.seq != self.irs + 1 or len(payload) != self.m:
                self._refuse(Verdict.REFUSED_CLASSICAL, payload)
                return
            if not self._bell_check(self.hs.pop("B4"), payload):
                self._refuse(Verdict.REFUSED_QUANTUM)
                return
            self._established()
            return
        self.world.release(self.name, payload, "stray-handshake")

    def _established(self):
        self.phase = Phase.ESTABLISHED
        self.verdict = Verdict.ESTABLISHED
        self.hs.clear()
        self._log("established")
        if self.on_established:
            self.on_established(self)
        self._pump()

    def _release_handshake(self, extra=()):
        w = self.world
        qudits = [q for qs in self.hs.values() for q in qs] + list(extra)
        self.hs.clear()
        w.release(self.name, qudits, "handshake-abort")

    def _refuse(self, verdict: Verdict, extra=()):
        self.verdict = verdict
        self._log("refused", verdict.value)
        self._release_handshake(extra)
        self._send(TcpFlags.RST, seq=self.iss)
        self._teardown()

    def _handshake_timeout(self):
        self.verdict = Verdict.TIMEOUT
        self._log("handshake-timeout")
        self._release_handshake()
        self._teardown()

    # -- data transfer: sender -------------------------------------------
    def send_block(self, qubits, spec: CheckFunctionSpec | None = None) -> TransferBlock:
        """Queue ``qubits`` for reliable delivery as one block."""
        spec = spec or self.spec or CheckFunctionSpec.default_for_block(len(qubits))
        if self.spec is not None and spec != self.spec:
            raise QTcpError("block check spec differs from the connection's")
        if self.phase not in (Phase.ESTABLISHED, Phase.CLOSE_WAIT, Phase.SYN_SENT, Phase.SYN_RECEIVED):
            raise QTcpError(f"window closed: cannot send in phase {self.phase.value}")
        self.spec = spec
        w = self.world
        reg = w.registry
        block = check_encode(reg, w.take(self.name, qubits), spec)
        secret = []
        for q in block:
            t = embed_qubit(reg, q)
            w.owner.pop(q, None)
            secret.append(t)
        w.hold(self.name, secret)
        tb = TransferBlock(self.iss + 1 + self.next_block, spec, secret)
        self.next_block += 1
        self.blocks.append(tb)
        self.send_queue.append(tb)
        self._pump()
        return tb

    def _pump(self):
        if self.phase not in (Phase.ESTABLISHED, Phase.CLOSE_WAIT):
            return
        while self.send_queue:
            tb = self.send_queue[0]
            if len(self.outstanding) >= min(self.window, self.peer_window):
                tb.status = SenderStatus.NOT_SENT_NOT_READY
                return
            self.send_queue.popleft()
            tb.status = SenderStatus.NOT_SENT_READY
            self.outstanding[tb.seq] = tb
            secret, tb.secret = tb.secret, []
            self._start_round(tb, secret, level=0)

    def _start_round(self, tb: TransferBlock, secret: list, level: int):
        w = self.world
        if tb.round + 1 >= self.max_rounds:
            w.release(self.name, secret + tb.held(), "max-rounds")
            tb.levels.clear()
            self._fail_block(tb, "max-rounds")
            return
        tb.round += 1
        pack = qss_encode(w.registry, secret)
        w.hold(self.name, pack.all())
        del tb.levels[level:]
        del tb.level_rounds[level:]
        tb.levels.append({1: pack.share1, 2: pack.share2, 3: pack.share3})
        tb.level_rounds.append(tb.round)
        self._send_share(tb, Stage.SHARE_A2)

    def _send_share(self, tb: TransferBlock, stage: Stage):
        held = tb.levels[tb.level]
        share = held.pop(2 if stage is Stage.SHARE_A2 else 3)
        tb.stage = BlockStage.A2_INFLIGHT if stage is Stage.SHARE_A2 else BlockStage.A3_INFLIGHT
        tb.status = SenderStatus.SENT_NOT_ACKED
        tb.transmissions += 1
        self._log("share-send", f"block={tb.seq} stage={stage.name} level={tb.level} round={tb.round}")
        self._send(TcpFlags.NONE, seq=tb.seq, stage=stage, level=tb.level, rnd=tb.round,
                   qudits=share, qutrits=True)
        delay = self.rto if stage is Stage.SHARE_A2 else 2 * self.rto
        tb.timer = self._timer(delay, lambda: self._share_timeout(tb, tb.round, stage),
                               f"qtcp-rto block={tb.seq}")

    def _share_timeout(self, tb: TransferBlock, rnd: int, stage: Stage):
        if tb.finished or tb.round != rnd:
            return
        self._log("share-timeout", f"block={tb.seq} stage={stage.name} round={rnd}")
        if stage is Stage.SHARE_A2:
            self._regenerate(tb)
        else:
            self._recurse(tb)

    def _regenerate(self, tb: TransferBlock):
        """A2 failed: rebuild the level's secret from A1 and A3, re-encode."""
        held = tb.levels[tb.level]
        secret = qss_decode(self.world.registry, held.pop(1), held.pop(3), (1, 3))
        self.world.forget_dead()
        self._start_round(tb, secret, tb.level)

    def _recurse(self, tb: TransferBlock):
        """A3 failed: A1 becomes the secret one level deeper."""
        tb.stage = BlockStage.RECURSING
        secret = tb.levels[tb.level].pop(1)
        self._start_round(tb, secret, tb.level + 1)

    def _on_block_ack(self, pkt: QTcpPacket):
        tb = self.outstanding.get(pkt.header.ack)
        self.peer_window = max(1, pkt.pseudo_window)
        if tb is None or tb.finished:
            return
        status, rnd = decode_pseudo_ack(pkt.pseudo_ack)
        if TcpFlags.RST in pkt.header.flags:
            self.world.cancel(tb.timer)
            self.world.release(self.name, tb.held(), "block-reset")
            tb.levels.clear()
            self._fail_block(tb, "peer-verification-failed")
            return
        if rnd != tb.round:
            return
        if status is ReceiverStatus.HAVE_A2_AWAITING_A3 and tb.stage is BlockStage.A2_INFLIGHT:
            self.world.cancel(tb.timer)
            self._send_share(tb, Stage.SHARE_A3)
        elif status is ReceiverStatus.BOTH_VALID and tb.stage is BlockStage.A3_INFLIGHT:
            self.world.cancel(tb.timer)
            self.world.release(self.name, tb.held(), "release-A1")
            tb.levels.clear()
            tb.stage = BlockStage.DONE
            tb.status = SenderStatus.SENT_ACKED
            del self.outstanding[tb.seq]
            self._log("block-acked", f"block={tb.seq} rounds={tb.round + 1} tx={tb.transmissions}")
            self._pump()
            self._maybe_fin()
        elif status is ReceiverStatus.A3_INVALID and tb.stage is BlockStage.A3_INFLIGHT:
            self.world.cancel(tb.timer)
            self._recurse(tb)

    def _fail_block(self, tb: TransferBlock, why: str):
        tb.stage = BlockStage.FAILED
        tb.failure = why
        self.outstanding.pop(tb.seq, None)
        self._log("block-failed", f"block={tb.seq} {why}")
        if why == "max-rounds":
            self._send(TcpFlags.RST, seq=tb.seq, stage=Stage.SHARE_A2, level=0xFF)
        self._pump()
        self._maybe_fin()

    # -- data transfer: receiver -----------------------------------------
    def _ack_block(self, rb: ReceiveBlock, status: ReceiverStatus, rnd: int, reset: bool = False):
        flags = TcpFlags.ACK | (TcpFlags.RST if reset else TcpFlags.NONE)
        self._send(flags, ack=rb.seq, pseudo_ack=encode_pseudo_ack(status, rnd))

    def _on_share(self, pkt: QTcpPacket, payload: list):
        w = self.world
        seq = pkt.header.seq
        rb = self.recv_blocks.get(seq)
        if rb is None:
            active = sum(1 for b in self.recv_blocks.values() if not b.done)
            if active >= self.window or self.phase not in (Phase.ESTABLISHED, Phase.FIN_WAIT_1,
                                                            Phase.FIN_WAIT_2):
                w.release(self.name, payload, "window-full")
                return
            rb = self.recv_blocks[seq] = ReceiveBlock(seq)
        if rb.done or rb.failed:
            w.release(self.name, payload, "duplicate-share")
            if rb.done:
                self._ack_block(rb, ReceiverStatus.BOTH_VALID, rb.round)
            return
        if pkt.stage is Stage.SHARE_A2:
            if pkt.round < rb.round or (pkt.round == rb.round and rb.status is not ReceiverStatus.WAITING_A2):
                w.release(self.name, payload, "stale-A2")
                return
            for lvl in [lvl for lvl in rb.stored if lvl >= pkt.level]:
                w.release(self.name, rb.stored.pop(lvl)[1], "superseded-A2")
            rb.stored[pkt.level] = (pkt.round, payload)
            rb.level = pkt.level
            if rb.status is not ReceiverStatus.WAITING_A2:
                # the previous round's A3 was given up on by the sender
                rb.set_status(ReceiverStatus.A3_INVALID, rb.round)
                rb.set_status(ReceiverStatus.WAITING_A2, pkt.round)
            rb.set_status(ReceiverStatus.HAVE_A2_AWAITING_A3, pkt.round)
            w.cancel(rb.timer)
            rnd = pkt.round
            rb.timer = self._timer(self.rto, lambda: self._a3_missing(rb, rnd), f"qtcp-a3 block={seq}")
            self._ack_block(rb, ReceiverStatus.HAVE_A2_AWAITING_A3, pkt.round)
            return
        # A3
        if (rb.status is not ReceiverStatus.HAVE_A2_AWAITING_A3 or pkt.round != rb.round
                or pkt.level != rb.level):
            w.release(self.name, payload, "stale-A3")
            return
        w.cancel(rb.timer)
        self._decode_block(rb, payload)

    def _a3_missing(self, rb: ReceiveBlock, rnd: int):
        if rb.done or rb.status is not ReceiverStatus.HAVE_A2_AWAITING_A3 or rb.round != rnd:
            return
        rb.set_status(ReceiverStatus.A3_INVALID, rnd)
        self._ack_block(rb, ReceiverStatus.A3_INVALID, rnd)
        rb.set_status(ReceiverStatus.WAITING_A2, rnd + 1)

    def _decode_block(self, rb: ReceiveBlock, a3: list):
        w = self.world
        reg = w.registry
        top = rb.level
        if sorted(rb.stored) != list(range(top + 1)):
            w.release(self.name, rb.held() + a3, "level-gap")
            rb.stored.clear()
            self._receiver_failure(rb)
            return
        secret = qss_decode(reg, rb.stored.pop(top)[1], a3, (2, 3))
        for lvl in range(top - 1, -1, -1):
            secret = qss_decode(reg, secret, rb.stored.pop(lvl)[1], (1, 2))
        w.forget_dead()
        qubits, leaked = [], False
        for t in secret:
            q = extract_qubit(reg, t)
            w.owner.pop(t, None)
            if q is None:
                leaked = True
            else:
                qubits.append(q)
                w.hold(self.name, [q])
        spec = self.spec
        if leaked or spec is None or len(qubits) != spec.n + spec.k:
            w.release(self.name, qubits, "decode-failed")
            self._receiver_failure(rb)
            return
        ok, data = check_verify(reg, qubits, spec)
        w.forget_dead()
        self._log("block-verify", f"block={rb.seq} ok={int(ok)} levels={top + 1}")
        if not ok:
            w.release(self.name, data, "check-failed")
            self._receiver_failure(rb)
            return
        rb.set_status(ReceiverStatus.BOTH_VALID, rb.round)
        rb.done = True
        self._ack_block(rb, ReceiverStatus.BOTH_VALID, rb.round)
        d = self.host.deliver("qtcp", self.peer, self.local_port, rb.seq, data)
        self.delivered.append(d)
        if self.on_deliver:
            self.on_deliver(d)

    def _receiver_failure(self, rb: ReceiveBlock):
        rb.set_status(ReceiverStatus.A3_INVALID, rb.round)
        rb.failed = True
        self._ack_block(rb, ReceiverStatus.A3_INVALID, rb.round, reset=True)

    def _on_block_reset(self, seq: int):
        rb = self.recv_blocks.get(seq)
        if rb is None or rb.done:
            return
        self.world.cancel(rb.timer)
        self.world.release(self.name, rb.held(), "block-reset")
        rb.stored.clear()
        rb.failed = True

    def _release_receive_buffers(self, reason: str):
        w = self.world
        for rb in self.recv_blocks.values():
            w.cancel(rb.timer)
            if rb.stored:
                w.release(self.name, rb.held(), reason)
                rb.stored.clear()

    def _abort_sends(self, reason: str):
        w = self.world
        for tb in list(self.outstanding.values()) + list(self.send_queue):
            w.cancel(tb.timer)
            w.release(self.name, tb.held() + tb.secret, reason)
            tb.levels.clear()
            tb.secret = []
            tb.stage = BlockStage.FAILED
            tb.failure = reason
            self._log("block-aborted", f"block={tb.seq}")
        self.outstanding.clear()
        self.send_queue.clear()

    # -- termination -----------------------------------------------------
    def close(self, abort_inflight: bool = True):
        """Close our sending direction (FIN); in-flight blocks are aborted."""
        if self.phase not in (Phase.ESTABLISHED, Phase.CLOSE_WAIT):
            raise QTcpError(f"close in phase {self.phase.value}")
        if abort_inflight:
            self._abort_sends("close")
        self._closing = True
        self._maybe_fin()

    def _maybe_fin(self):
        if not self._closing or self.outstanding or self.send_queue:
            return
        if self.fin_seq is not None:
            return
        self.fin_seq = self.iss + 1 + self.next_block
        self.phase = Phase.FIN_WAIT_1 if self.phase is Phase.ESTABLISHED else Phase.LAST_ACK
        self._log("fin", f"phase={self.phase.value}")
        self._send(TcpFlags.FIN, seq=self.fin_seq)
        self.fin_timer = self._timer(3 * self.rto, self._fin_timeout, "qtcp-fin")

    def _on_fin(self, pkt: QTcpPacket):
        self._release_receive_buffers("peer-fin")
        self._send(TcpFlags.ACK, ack=pkt.header.seq + 1)
        if self.phase is Phase.ESTABLISHED:
            self.phase = Phase.CLOSE_WAIT
        elif self.phase is Phase.FIN_WAIT_1:
            self.phase = Phase.CLOSING
        self._log("fin-received", f"phase={self.phase.value}")
        if self.phase is Phase.FIN_WAIT_2:
            self._teardown()
        elif self.phase is Phase.CLOSE_WAIT and self.auto_close:
            self.close()

    def _on_fin_ack(self):
        self.world.cancel(self.fin_timer)
        self._log("fin-acked", f"phase={self.phase.value}")
        if self.phase is Phase.FIN_WAIT_1:
            self.phase = Phase.FIN_WAIT_2
        elif self.phase in (Phase.CLOSING, Phase.LAST_ACK):
            self._teardown()

    def _fin_timeout(self):
        self._log("fin-timeout")
        self._send(TcpFlags.RST, seq=self.fin_seq or 0)
        self.verdict = Verdict.RESET
        self._teardown()

    def _teardown(self):
        w = self.world
        self._abort_sends("teardown")
        self._release_receive_buffers("teardown")
        w.cancel(self.hs_timer)
        w.cancel(self.fin_timer)
        if self.hs:
            self._release_handshake()
        self.phase = Phase.CLOSED
        self._log("closed")
        self.host.connections.pop(self.key, None)
        self.host.closed_connections.append(self)

    # -- dispatch --------------------------------------------------------
    def on_packet(self, pkt: QTcpPacket, arrival: Arrival):
        w = self.world
        flags = pkt.header.flags
        payload = self._unpack(arrival, pkt.stage)
        if payload is None:
            return
        if TcpFlags.RST in flags and TcpFlags.ACK not in flags:
            if pkt.level == 0xFF:
                self._on_block_reset(pkt.header.seq)
                return
            w.release(self.name, payload, "reset")
            self._log("reset-received")
            if self.verdict in (None, Verdict.ESTABLISHED):
                self.verdict = Verdict.RESET
            self._teardown()
            return
        if pkt.stage in (Stage.HS_FORWARD, Stage.HS_RETURN):
            self._on_handshake(pkt, payload)
            return
        if pkt.stage in SHARE_STAGES:
            self._on_share(pkt, payload)
            return
        if TcpFlags.FIN in flags:
            self._on_fin(pkt)
            return
        if (TcpFlags.ACK in flags and self.fin_seq is not None and pkt.header.ack == self.fin_seq + 1
                and pkt.pseudo_ack == 0):
            self._on_fin_ack()
            return
        if TcpFlags.ACK in flags:
            self._on_block_ack(pkt)


def listen(host, port: int, **params):
    """Passive open on ``port``; ``params`` configure accepted connections."""
    host.listeners[port] = params
    return params


def connect(world: World, a: str, b: str, *, src_port: int = 1000, dst_port: int = 80,
            **params) -> QTcpConnection:
    host = world.nodes[a].handler
    conn = QTcpConnection(host, b, src_port, dst_port, **params)
    host.connections[conn.key] = conn
    conn.connect()
    return conn


qtcp_handshake_initiate = connect


def _reset_stray(host, src: str, pkt: QTcpPacket) -> None:
    """Answer a segment that matches no connection with a bare RST."""
    model = REPEATER if pkt.indicator.repeater else PLAIN
    header = ClassicalTcpHeader(pkt.header.dst_port, pkt.header.src_port, pkt.header.ack, 0, TcpFlags.RST)
    send_packet(host.world, host.name, src, QTcpPacket(header, indicator_for("qtcp", model)), [], model)


def on_segment(host, arrival: Arrival) -> None:
    w = host.world
    pkt: QTcpPacket = arrival.packet
    src = arrival.frame.src
    key = (pkt.header.dst_port, src, pkt.header.src_port)
    conn = host.connections.get(key)
    if conn is None:
        params = host.listeners.get(pkt.header.dst_port)
        is_syn = TcpFlags.SYN in pkt.header.flags and TcpFlags.ACK not in pkt.header.flags
        if params is None or not is_syn:
            w.release(host.name, arrival.qudits, "no-connection")
            if TcpFlags.RST not in pkt.header.flags:
                w.log(host.name, "qtcp-unreachable", f"port={pkt.header.dst_port}")
                _reset_stray(host, src, pkt)
            return
        conn = QTcpConnection(host, src, pkt.header.dst_port, pkt.header.src_port, **params)
        host.connections[key] = conn
        payload = conn._unpack(arrival, pkt.stage)
        if payload is not None:
            conn._accept_syn(pkt, payload)
        return
    conn.on_packet(pkt, arrival)
