"""Exact state-vector engine over dynamically merged entanglement islands.

Every live qudit belongs to exactly one :class:`StateFactor`.  Operations that
touch qudits in different factors first merge those factors by tensor
product.  Measured qudits are split back out as basis-state singletons, and
discarded qudits are removed, so factors only grow while entanglement does.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import count

import numpy as np

from . import kernels

NORM_TOL = 1e-10
PSD_TOL = 1e-8
SUPPORTED_DIMS = (2, 3)

SQRT_HALF = 1 / math.sqrt(2)
I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
Y = 1j * X @ Z
H = SQRT_HALF * np.array([[1, 1], [1, -1]], dtype=complex)
CNOT = np.array(
    [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex
)
PHI_PLUS = SQRT_HALF * np.array([1, 0, 0, 1], dtype=complex)

# columns are Phi_ij = (I (x) X^i Z^j) |Phi+>, column index 2*i + j
BELL_BASIS = np.column_stack(
    [np.kron(I2, np.linalg.matrix_power(X, i) @ np.linalg.matrix_power(Z, j)) @ PHI_PLUS
     for i in (0, 1) for j in (0, 1)]
)


class QsimError(Exception):
    """Base class for state-engine errors."""


class DeadQuditError(QsimError):
    pass


class DimensionError(QsimError):
    pass


class NotUnitaryError(QsimError):
    pass


class FactorSizeError(QsimError):
    """Raised instead of building a factor above the configured size."""


@dataclass(frozen=True, order=True)
class QuditId:
    id: int
    dim: int = 2

    def __repr__(self):
        kind = "q" if self.dim == 2 else "t"
        return f"{kind}{self.id}"


@dataclass(frozen=True)
class PauliOp:
    """``X^x Z^z`` up to global phase; composition is XOR of exponents."""

    x: int = 0
    z: int = 0

    def __mul__(self, other: "PauliOp") -> "PauliOp":
        return PauliOp(self.x ^ other.x, self.z ^ other.z)

    def matrix(self):
        return np.linalg.matrix_power(X, self.x) @ np.linalg.matrix_power(Z, self.z)


@dataclass(frozen=True)
class MeasurementRecord:
    outcome: int
    probability: float
    digits: tuple = ()


@dataclass
class StateFactor:
    members: list
    amplitudes: np.ndarray

    @property
    def dims(self):
        return [q.dim for q in self.members]

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    @property
    def qubit_equivalents(self) -> float:
        return sum(math.log2(q.dim) for q in self.members)


def _qubit_equivalents(qudits) -> float:
    return sum(math.log2(q.dim) for q in qudits)


@dataclass
class StateRegistry:
    """Owner of all simulated qudits and of the run's random stream.

    ``rng`` is the only source of randomness; every consumer (measurement,
    channel loss, noise) draws from it in operation order, so equal seeds and
    equal operation sequences reproduce a run exactly.
    """

    seed: int | None = None
    max_qubits: float = 14.0
    debug: bool = False
    rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        self.rng = np.random.default_rng(self.seed)
        self._ids = count()
        self._factor_of: dict[int, StateFactor] = {}

    # -- bookkeeping -----------------------------------------------------
    def alloc(self, dim: int = 2) -> QuditId:
        if dim not in SUPPORTED_DIMS:
            raise DimensionError(f"unsupported qudit dimension {dim}")
        q = QuditId(next(self._ids), dim)
        amps = np.zeros(dim, dtype=complex)
        amps[0] = 1.0
        self._factor_of[q.id] = StateFactor([q], amps)
        return q

    def is_live(self, q: QuditId) -> bool:
        f = self._factor_of.get(q.id)
        return f is not None and q in f.members

    def live_qudits(self) -> list:
        return sorted({q for f in self.factors() for q in f.members})

    def factors(self) -> list:
        seen, out = set(), []
        for f in self._factor_of.values():
            if id(f) not in seen:
                seen.add(id(f))
                out.append(f)
        return out

    def factor_of(self, q: QuditId) -> StateFactor:
        self._require_live([q])
        return self._factor_of[q.id]

    def _require_live(self, qudits):
        for q in qudits:
            if not self.is_live(q):
                raise DeadQuditError(f"{q!r} is not live")

    def _merged(self, qudits) -> StateFactor:
        """Single factor containing every qudit in ``qudits``."""
        self._require_live(qudits)
        parts = []
        for q in qudits:
            f = self._factor_of[q.id]
            if all(f is not p for p in parts):
                parts.append(f)
        if len(parts) == 1:
            return parts[0]
        members = [m for p in parts for m in p.members]
        size = _qubit_equivalents(members)
        if size > self.max_qubits + 1e-9:
            raise FactorSizeError(
                f"merge would create a {size:.2f}-qubit factor (limit {self.max_qubits})"
            )
        amps = parts[0].amplitudes
        for p in parts[1:]:
            amps = np.outer(amps, p.amplitudes).reshape(-1)
        merged = StateFactor(members, amps)
        for m in members:
            self._factor_of[m.id] = merged
        return merged

    def _check(self):
        if not self.debug:
            return
        owners = {}
        for f in self.factors():
            if abs(f.norm - 1) > NORM_TOL:
                raise QsimError(f"factor norm drifted to {f.norm!r}")
            if f.amplitudes.shape[0] != math.prod(f.dims):
                raise QsimError("factor length does not match member dims")
            for m in f.members:
                if m.id in owners:
                    raise QsimError(f"{m!r} belongs to two factors")
                owners[m.id] = f

    # -- evolution -------------------------------------------------------
    def apply_unitary(self, targets, u) -> None:
        targets = list(targets)
        if len(set(targets)) != len(targets):
            raise ValueError("duplicate targets")
        u = np.asarray(u, dtype=complex)
        size = math.prod(q.dim for q in targets)
        if u.shape != (size, size):
            raise DimensionError(f"matrix shape {u.shape} does not match target space {size}")
        if not np.allclose(u.conj().T @ u, np.eye(size), atol=NORM_TOL):
            raise NotUnitaryError("matrix is not unitary")
        self._apply(targets, u)

    def _apply(self, targets, u):
        f = self._merged(targets)
        idx = [f.members.index(q) for q in targets]
        f.amplitudes = kernels.apply_matrix(f.amplitudes, f.dims, idx, u)
        self._check()

    def apply_permutation(self, targets, perm) -> None:
        """Apply the basis permutation ``|i> -> |perm[i]>`` on ``targets``."""
        targets = list(targets)
        perm = np.asarray(perm)
        size = math.prod(q.dim for q in targets)
        if perm.shape != (size,) or not np.array_equal(np.sort(perm), np.arange(size)):
            raise NotUnitaryError("not a permutation of the target basis")
        f = self._merged(targets)
        k = len(targets)
        idx = [f.members.index(q) for q in targets]
        tensor = np.moveaxis(f.amplitudes.reshape(f.dims), idx, range(k))
        rest = tensor.shape[k:]
        flat = tensor.reshape(size, -1)
        out = np.empty_like(flat)
        out[perm] = flat
        out = np.moveaxis(out.reshape(tuple(q.dim for q in targets) + rest), range(k), idx)
        f.amplitudes = np.ascontiguousarray(out).reshape(-1)
        self._check()

    # -- measurement -----------------------------------------------------
    def measure_computational(self, targets) -> MeasurementRecord:
        targets = list(targets)
        f = self._merged(targets)
        idx = [f.members.index(q) for q in targets]
        probs = kernels.marginal_probs(f.amplitudes, f.dims, idx)
        probs = np.clip(probs, 0.0, None)
        total = probs.sum()
        cdf = np.cumsum(probs)
        outcome = min(int(np.searchsorted(cdf, self.rng.random() * total, side="right")), len(probs) - 1)
        digits = np.unravel_index(outcome, [q.dim for q in targets])
        digits = tuple(int(d) for d in digits)
        self._collapse(f, targets, digits, probs[outcome])
        self._check()
        return MeasurementRecord(outcome, float(probs[outcome] / total), digits)

    def _collapse(self, f: StateFactor, targets, digits, p):
        """Project ``targets`` onto ``digits`` and split them out as singletons."""
        idx = [f.members.index(q) for q in targets]
        offsets, bases = kernels.index_tables(f.dims, idx)
        rest_members = [m for m in f.members if m not in targets]
        pick = np.ravel_multi_index(digits, [q.dim for q in targets])
        amps = f.amplitudes[bases + offsets[pick]] / math.sqrt(p)
        if rest_members:
            rest = StateFactor(rest_members, np.ascontiguousarray(amps))
            for m in rest_members:
                self._factor_of[m.id] = rest
        for q, d in zip(targets, digits):
            single = np.zeros(q.dim, dtype=complex)
            single[d] = 1.0
            self._factor_of[q.id] = StateFactor([q], single)

    def bell_measure(self, a: QuditId, b: QuditId) -> tuple:
        """Project ``(a, b)`` onto ``Phi_ij = (I (x) X^i Z^j)|Phi+>``; returns ``(i, j)``.

        Both qubits are left in ``Phi_ij``.
        """
        if a.dim != 2 or b.dim != 2:
            raise DimensionError("Bell measurement needs two qubits")
        self._apply([a, b], BELL_BASIS.conj().T)
        rec = self.measure_computational([a, b])
        i, j = rec.digits
        self._apply([a, b], BELL_BASIS)
        return i, j

    def bell_probabilities(self, a: QuditId, b: QuditId):
        """Outcome distribution of :meth:`bell_measure` without sampling (diagnostic)."""
        rho = self.density_of([a, b])
        return np.real(np.einsum("ki,kl,li->i", BELL_BASIS.conj(), rho, BELL_BASIS))

    def discard(self, targets) -> None:
        """Measure ``targets`` in the computational basis and forget them."""
        targets = list(targets)
        self._require_live(targets)
        if not targets:
            return
        entangled = [q for q in targets if len(self._factor_of[q.id].members) > 1]
        if entangled:
            self.measure_computational(entangled)
        for q in targets:
            del self._factor_of[q.id]

    # -- diagnostics -----------------------------------------------------
    def density_of(self, targets):
        """Reduced density operator of ``targets`` (ordered as given)."""
        targets = list(targets)
        self._require_live(targets)
        groups = []
        for q in targets:
            f = self._factor_of[q.id]
            if all(f is not g for g in groups):
                groups.append(f)
        rho = np.ones((1, 1), dtype=complex)
        order = []
        for f in groups:
            mine = [q for q in targets if q in f.members]
            idx = [f.members.index(q) for q in mine]
            k = len(idx)
            size = math.prod(q.dim for q in mine)
            t = np.moveaxis(f.amplitudes.reshape(f.dims), idx, range(k)).reshape(size, -1)
            rho = np.kron(rho, t @ t.conj().T)
            order.extend(mine)
        if order != targets:
            dims = [q.dim for q in order]
            n = len(order)
            perm = [order.index(q) for q in targets]
            rho = rho.reshape(dims + dims)
            rho = rho.transpose(perm + [p + n for p in perm])
            size = math.prod(dims)
            rho = rho.reshape(size, size)
        return rho

    def fidelity(self, targets, reference) -> float:
        """``<ref|rho|ref>`` for the reduced state of ``targets``."""
        rho = self.density_of(targets)
        ref = np.asarray(reference, dtype=complex).reshape(-1)
        if ref.shape[0] != rho.shape[0]:
            raise DimensionError("reference dimension does not match targets")
        ref = ref / np.linalg.norm(ref)
        return float(np.clip(np.real(ref.conj() @ rho @ ref), 0.0, 1.0))

    def dump(self, q: QuditId) -> list:
        """Lines ``label re im`` for the nonzero amplitudes of ``q``'s factor."""
        f = self.factor_of(q)
        head = " ".join(repr(m) for m in f.members)
        lines = [f"# {head}"]
        for index, amp in enumerate(f.amplitudes):
            if abs(amp) < 1e-12:
                continue
            label = "".join(str(int(d)) for d in np.unravel_index(index, f.dims))
            lines.append(f"{label} {amp.real:+.12f} {amp.imag:+.12f}")
        return lines


def random_state(rng: np.random.Generator, dim: int):
    """Haar-random pure state of dimension ``dim``."""
    v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return v / np.linalg.norm(v)


def prepare(reg: StateRegistry, qudits, state) -> None:
    """Load an arbitrary pure ``state`` into freshly allocated ``qudits`` (all in |0>)."""
    state = np.asarray(state, dtype=complex).reshape(-1)
    state = state / np.linalg.norm(state)
    size = state.shape[0]
    # Householder-style unitary mapping |0> to state
    e0 = np.zeros(size, dtype=complex)
    e0[0] = 1
    phase = state[0] / abs(state[0]) if abs(state[0]) > 1e-15 else 1.0
    v = state / phase
    w = e0 - v
    if np.linalg.norm(w) < 1e-15:
        u = np.eye(size, dtype=complex) * phase
    else:
        w = w / np.linalg.norm(w)
        u = (np.eye(size) - 2 * np.outer(w, w.conj())) * phase
    reg.apply_unitary(list(qudits), u)
