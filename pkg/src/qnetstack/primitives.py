"""Protocol-level quantum building blocks.

Everything here operates on a :class:`~qnetstack.qsim.StateRegistry` passed in
by the caller.  Operations that model sending a state away (teleportation,
secret-sharing decode) consume their inputs, so no API offers a copy.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from itertools import product

import numpy as np

from .qsim import CNOT, H, PauliOp, QsimError, QuditId, StateRegistry, DimensionError

# ---------------------------------------------------------------------------
# EPR pairs, teleportation, swapping


@dataclass
class EprPair:
    left: QuditId
    right: QuditId
    created_at: int = 0
    position: int = -1


def make_epr(reg: StateRegistry, now: int = 0, position: int = -1) -> EprPair:
    left, right = reg.alloc(2), reg.alloc(2)
    reg._apply([left], H)
    reg._apply([left, right], CNOT)
    return EprPair(left, right, now, position)


@dataclass(frozen=True)
class CorrectionWord:
    """Per-qubit Pauli corrections ``(i, j)`` meaning ``X^i Z^j``."""

    pairs: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "pairs", tuple((int(i), int(j)) for i, j in self.pairs))

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def __xor__(self, other: "CorrectionWord") -> "CorrectionWord":
        return compose_corrections(self, other)

    @classmethod
    def zeros(cls, n: int) -> "CorrectionWord":
        return cls(((0, 0),) * n)


def compose_corrections(w1: CorrectionWord, w2: CorrectionWord) -> CorrectionWord:
    if len(w1) != len(w2):
        raise ValueError(f"correction words differ in length ({len(w1)} vs {len(w2)})")
    return CorrectionWord(tuple((a ^ c, b ^ d) for (a, b), (c, d) in zip(w1, w2)))


def _require_qubits(*qs):
    for q in qs:
        if q.dim != 2:
            raise DimensionError(f"{q!r} is not a qubit")


def teleport_measure(reg: StateRegistry, data: QuditId, epr_half: QuditId) -> tuple:
    """Bell-measure ``(epr_half, data)`` and discard both; returns ``(i, j)``.

    The remote half of the pair is left holding ``X^i Z^j |data>``.
    """
    _require_qubits(data, epr_half)
    i, j = reg.bell_measure(epr_half, data)
    reg.discard([epr_half, data])
    return i, j


def pauli_correct(reg: StateRegistry, target: QuditId, word) -> None:
    _require_qubits(target)
    i, j = word
    if i or j:
        reg.apply_unitary([target], PauliOp(i, j).matrix())


def entanglement_swap(reg: StateRegistry, b1: QuditId, b2: QuditId) -> tuple:
    """Bell-measure the two middle halves; the outer halves end in ``(I (x) X^i Z^j)|Phi+>``."""
    _require_qubits(b1, b2)
    i, j = reg.bell_measure(b1, b2)
    reg.discard([b1, b2])
    return i, j


# ---------------------------------------------------------------------------
# check-unitary error detection


class CheckKind(str, Enum):
    PARITY = "parity"
    CRC = "crc"


@dataclass(frozen=True)
class CheckFunctionSpec:
    """A classical check function ``f: {0,1}^n -> {0,1}^k``.

    Bit strings are read with the first qubit as the most significant bit.
    ``masks`` (parity) selects the data bits feeding each check bit;
    ``poly`` (crc) is the generator polynomial including its ``x^k`` term.
    """

    n: int
    k: int
    kind: CheckKind = CheckKind.PARITY
    masks: tuple = ()
    poly: int = 0

    def __post_init__(self):
        if self.n < 1 or self.k < 0:
            raise ValueError("need n >= 1 data qubits and k >= 0 check qubits")
        object.__setattr__(self, "kind", CheckKind(self.kind))
        if self.kind is CheckKind.PARITY:
            if not self.masks:
                masks = tuple(
                    sum(1 << (self.n - 1 - i) for i in range(self.n) if i % self.k == g)
                    for g in range(self.k)
                )
                object.__setattr__(self, "masks", masks)
            if len(self.masks) != self.k:
                raise ValueError("parity spec needs exactly k masks")
        elif self.poly.bit_length() != self.k + 1:
            raise ValueError(f"CRC-{self.k} polynomial must have degree {self.k}")

    @classmethod
    def parity(cls, n: int, k: int = 1) -> "CheckFunctionSpec":
        return cls(n, k, CheckKind.PARITY)

    @classmethod
    def crc(cls, n: int, poly: int) -> "CheckFunctionSpec":
        return cls(n, poly.bit_length() - 1, CheckKind.CRC, poly=poly)

    @classmethod
    def default_for_block(cls, n: int) -> "CheckFunctionSpec":
        return cls.parity(n, max(2, math.ceil(n / 4)))

    def __call__(self, j: int) -> int:
        if self.kind is CheckKind.PARITY:
            out = 0
            for m in self.masks:
                out = (out << 1) | (bin(j & m).count("1") & 1)
            return out
        rem = j << self.k
        for bit in range(self.n + self.k - 1, self.k - 1, -1):
            if rem >> bit & 1:
                rem ^= self.poly << (bit - self.k)
        return rem

    def permutation(self):
        """Basis permutation of ``U_f`` on ``n + k`` qubits (an involution)."""
        return _check_permutation(self)


@lru_cache(maxsize=64)
def _check_permutation(spec: CheckFunctionSpec):
    k = spec.k
    perm = np.empty(1 << (spec.n + k), dtype=np.int64)
    for j in range(1 << spec.n):
        fj = spec(j)
        for a in range(1 << k):
            perm[(j << k) | a] = (j << k) | (a ^ fj)
    perm.setflags(write=False)
    return perm


def check_encode(reg: StateRegistry, data, spec: CheckFunctionSpec) -> list:
    """Append ``k`` ancillas in ``|0>`` and apply ``U_f``; returns ``data + checks``."""
    data = list(data)
    if len(data) != spec.n:
        raise ValueError(f"expected {spec.n} data qubits, got {len(data)}")
    _require_qubits(*data)
    block = data + [reg.alloc(2) for _ in range(spec.k)]
    reg.apply_permutation(block, spec.permutation())
    return block


def check_verify(reg: StateRegistry, block, spec: CheckFunctionSpec):
    """Undo ``U_f`` and measure the check qubits.

    Returns ``(ok, data)``.  Check qubits are always consumed; on failure the
    data qubits stay allocated for the caller to release.
    """
    block = list(block)
    if len(block) != spec.n + spec.k:
        raise ValueError(f"expected {spec.n + spec.k} qubits, got {len(block)}")
    reg.apply_permutation(block, spec.permutation())
    data, checks = block[: spec.n], block[spec.n:]
    if not checks:
        return True, data
    rec = reg.measure_computational(checks)
    reg.discard(checks)
    return rec.outcome == 0, data


# ---------------------------------------------------------------------------
# (2,3)-threshold qutrit secret sharing
#
# share m of secret s carries x + (m - 1) s (mod 3) for a uniformly
# superposed x, so any two shares fix both s and x.


@dataclass
class SharePack:
    share1: list
    share2: list
    share3: list

    def share(self, index: int) -> list:
        return (self.share1, self.share2, self.share3)[index - 1]

    def all(self) -> list:
        return self.share1 + self.share2 + self.share3


_QFT3 = np.array([[np.exp(2j * np.pi * a * b / 3) for b in range(3)] for a in range(3)]) / math.sqrt(3)


@lru_cache(maxsize=None)
def _qss_encode_perm():
    # (s, x, c) -> (x + s, x, c + x + 2s) on (secret, share1, share3)
    perm = np.empty(27, dtype=np.int64)
    for s, x, c in product(range(3), repeat=3):
        perm[s * 9 + x * 3 + c] = ((x + s) % 3) * 9 + x * 3 + (c + x + 2 * s) % 3
    return perm


@lru_cache(maxsize=None)
def _qss_decode_perm(i: int, j: int):
    # (share i value, share j value) -> (secret, value of the missing share)
    m = ({1, 2, 3} - {i, j}).pop()
    inv = pow(j - i, -1, 3)
    perm = np.empty(9, dtype=np.int64)
    for a, b in product(range(3), repeat=2):
        s = ((b - a) * inv) % 3
        x = (a - (i - 1) * s) % 3
        perm[a * 3 + b] = s * 3 + (x + (m - 1) * s) % 3
    return perm


def qss_encode(reg: StateRegistry, secret) -> SharePack:
    """Encode one qutrit (or a list of qutrits) into three qutrit shares.

    The secret's own handle becomes share 2; two fresh qutrits become
    shares 1 and 3.
    """
    secrets = [secret] if isinstance(secret, QuditId) else list(secret)
    pack = SharePack([], [], [])
    for s in secrets:
        if s.dim != 3:
            raise DimensionError(f"{s!r} is not a qutrit; embed qubits first")
        x, c = reg.alloc(3), reg.alloc(3)
        reg.apply_unitary([x], _QFT3)
        reg.apply_permutation([s, x, c], _qss_encode_perm())
        pack.share1.append(x)
        pack.share2.append(s)
        pack.share3.append(c)
    return pack


def qss_decode(reg: StateRegistry, share_a, share_b, which: tuple) -> list:
    """Reconstruct the secret from two shares with indices ``which``.

    The second share's qutrits are consumed; the returned secret qutrits are
    the first share's handles.  The unused third share ends up in a product
    state with the secret.
    """
    i, j = which
    if i == j or {i, j} - {1, 2, 3}:
        raise ValueError(f"need two distinct share indices in 1..3, got {which}")
    share_a, share_b = list(share_a), list(share_b)
    if len(share_a) != len(share_b):
        raise ValueError("shares differ in length")
    perm = _qss_decode_perm(i, j)
    for a, b in zip(share_a, share_b):
        reg.apply_permutation([a, b], perm)
        reg.discard([b])
    return share_a


# ---------------------------------------------------------------------------
# carriers between qubits and qutrits

_SWAP_01_10 = np.array([0, 3, 2, 1, 4, 5])  # on (qubit, qutrit): |1,0> <-> |0,1>
_PACK_12 = np.array([0, 4, 8, 3, 1, 5, 6, 7, 2, 9, 10, 11])  # (qutrit, 2 qubits)


class CarrierError(QsimError):
    pass


def embed_qubit(reg: StateRegistry, q: QuditId) -> QuditId:
    """Isometry ``|0>, |1>`` onto a qutrit's ``|0>, |1>``; consumes ``q``."""
    _require_qubits(q)
    t = reg.alloc(3)
    reg.apply_permutation([q, t], _SWAP_01_10)
    reg.discard([q])
    return t


def extract_qubit(reg: StateRegistry, t: QuditId):
    """Inverse of :func:`embed_qubit`.

    Measures whether ``t`` left the qubit subspace; returns the qubit, or
    ``None`` (everything released) when ``|2>`` was found.
    """
    if t.dim != 3:
        raise DimensionError(f"{t!r} is not a qutrit")
    q = reg.alloc(2)
    reg.apply_permutation([q, t], _SWAP_01_10)
    rec = reg.measure_computational([t])
    reg.discard([t])
    if rec.outcome != 0:
        reg.discard([q])
        return None
    return q


def qutrit_to_qubits(reg: StateRegistry, t: QuditId) -> list:
    """Carry a qutrit on two qubits: ``|0>,|1>,|2> -> |00>,|01>,|10>``."""
    q1, q2 = reg.alloc(2), reg.alloc(2)
    reg.apply_permutation([t, q1, q2], _PACK_12)
    reg.discard([t])
    return [q1, q2]


def qubits_to_qutrit(reg: StateRegistry, pair):
    """Inverse of :func:`qutrit_to_qubits`; ``None`` if ``|11>`` was found."""
    q1, q2 = pair
    t = reg.alloc(3)
    reg.apply_permutation([t, q1, q2], _PACK_12)
    rec = reg.measure_computational([q1, q2])
    reg.discard([q1, q2])
    if rec.outcome != 0:
        reg.discard([t])
        return None
    return t


# ---------------------------------------------------------------------------
# Pauli / Weyl noise


def weyl(dim: int, a: int, b: int):
    """Generalized Pauli ``X^a Z^b``; for qubits index 1, 2, 3 -> X, Y, Z."""
    shift = np.roll(np.eye(dim, dtype=complex), 1, axis=0)
    clock = np.diag(np.exp(2j * np.pi * np.arange(dim) / dim))
    return np.linalg.matrix_power(shift, a) @ np.linalg.matrix_power(clock, b)


def nontrivial_paulis(dim: int) -> list:
    """The ``dim**2 - 1`` nontrivial ``(a, b)`` exponent pairs, fixed order."""
    return [(a, b) for a in range(dim) for b in range(dim) if (a, b) != (0, 0)]


def apply_pauli(reg: StateRegistry, q: QuditId, a: int, b: int) -> None:
    if a % q.dim or b % q.dim:
        reg.apply_unitary([q], weyl(q.dim, a, b))


# ---------------------------------------------------------------------------
# five-qubit perfect code

QEC5_GENERATORS = ("XZZXI", "IXZZX", "XIXZZ", "ZXIXZ")
_P1 = {"I": np.eye(2, dtype=complex), "X": np.array([[0, 1], [1, 0]], dtype=complex),
       "Z": np.diag([1, -1]).astype(complex)}
_P1["Y"] = 1j * _P1["X"] @ _P1["Z"]


def pauli_string(s: str):
    out = np.ones((1, 1), dtype=complex)
    for c in s:
        out = np.kron(out, _P1[c])
    return out


def _anticommutes(p: str, q: str) -> bool:
    n = sum(1 for a, b in zip(p, q) if a != "I" and b != "I" and a != b)
    return n % 2 == 1


@lru_cache(maxsize=None)
def qec5_encoder():
    """32x32 unitary with ``U|b>|0000> = |b_L>``."""
    proj = np.eye(32, dtype=complex)
    for g in QEC5_GENERATORS:
        proj = proj @ (np.eye(32) + pauli_string(g)) / 2
    zero = proj[:, 0] / np.linalg.norm(proj[:, 0])
    one = pauli_string("XXXXX") @ zero
    basis = [zero, one]
    for e in np.eye(32, dtype=complex):
        v = e - sum((b.conj() @ e) * b for b in basis)
        if np.linalg.norm(v) > 1e-8:
            basis.append(v / np.linalg.norm(v))
    rest = iter(basis[2:])
    u = np.empty((32, 32), dtype=complex)
    for col in range(32):
        u[:, col] = zero if col == 0 else one if col == 16 else next(rest)
    return u


@lru_cache(maxsize=None)
def qec5_syndrome_table() -> dict:
    """Syndrome bits (g1..g4, MSB first) -> single-qubit recovery string."""
    table = {0: "IIIII"}
    for pos, p in product(range(5), "XYZ"):
        err = "I" * pos + p + "I" * (4 - pos)
        syn = 0
        for g in QEC5_GENERATORS:
            syn = (syn << 1) | _anticommutes(err, g)
        table[syn] = err
    return table


@lru_cache(maxsize=None)
def _controlled(label: str):
    g = pauli_string(label)
    n = g.shape[0]
    u = np.eye(2 * n, dtype=complex)
    u[n:, n:] = g
    return u


def qec5_encode(reg: StateRegistry, q: QuditId) -> list:
    _require_qubits(q)
    block = [q] + [reg.alloc(2) for _ in range(4)]
    reg._apply(block, qec5_encoder())
    return block


def qec5_syndrome(reg: StateRegistry, block) -> int:
    syn = 0
    for g in QEC5_GENERATORS:
        anc = reg.alloc(2)
        reg._apply([anc], H)
        reg._apply([anc] + list(block), _controlled(g))
        reg._apply([anc], H)
        rec = reg.measure_computational([anc])
        reg.discard([anc])
        syn = (syn << 1) | rec.outcome
    return syn


def qec5_correct_decode(reg: StateRegistry, block) -> QuditId:
    """Measure the stabilizers, undo the indicated single-qubit Pauli, un-encode."""
    block = list(block)
    if len(block) != 5:
        raise ValueError(f"[[5,1,3]] block needs 5 qubits, got {len(block)}")
    recovery = qec5_syndrome_table()[qec5_syndrome(reg, block)]
    for q, p in zip(block, recovery):
        if p != "I":
            reg._apply([q], _P1[p])
    reg._apply(block, qec5_encoder().conj().T)
    reg.discard(block[1:])
    return block[0]
