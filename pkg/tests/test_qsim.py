import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qnetstack.qsim import (
    CNOT,
    H,
    PHI_PLUS,
    X,
    DeadQuditError,
    DimensionError,
    FactorSizeError,
    NotUnitaryError,
    StateRegistry,
    prepare,
    random_state,
)

from oracles import haar, partial_trace_keep


def amps(reg, q):
    return reg.factor_of(q).amplitudes


class TestAlloc:
    def test_qubit_starts_in_zero(self, reg):
        q = reg.alloc(2)
        np.testing.assert_allclose(amps(reg, q), [1, 0])

    def test_qutrit_starts_in_zero(self, reg):
        t = reg.alloc(3)
        np.testing.assert_allclose(amps(reg, t), [1, 0, 0])

    def test_two_allocs_are_disjoint_singletons(self, reg):
        a, b = reg.alloc(), reg.alloc()
        assert reg.factor_of(a) is not reg.factor_of(b)
        assert len(reg.factors()) == 2

    def test_unsupported_dimension(self, reg):
        with pytest.raises(DimensionError):
            reg.alloc(5)


class TestUnitary:
    def test_x_flips(self, reg):
        q = reg.alloc()
        reg.apply_unitary([q], X)
        np.testing.assert_allclose(amps(reg, q), [0, 1])

    def test_hh_is_identity(self, reg):
        q = reg.alloc()
        reg.apply_unitary([q], H)
        reg.apply_unitary([q], H)
        np.testing.assert_allclose(amps(reg, q), [1, 0], atol=1e-10)

    def test_epr_construction(self, reg):
        a, b = reg.alloc(), reg.alloc()
        reg.apply_unitary([a], H)
        reg.apply_unitary([a, b], CNOT)
        np.testing.assert_allclose(amps(reg, a), PHI_PLUS, atol=1e-12)

    def test_rejects_non_unitary(self, reg):
        q = reg.alloc()
        with pytest.raises(NotUnitaryError):
            reg.apply_unitary([q], np.array([[1, 1], [0, 1]]))

    def test_rejects_shape_mismatch(self, reg):
        q = reg.alloc()
        with pytest.raises(DimensionError):
            reg.apply_unitary([q], CNOT)

    def test_rejects_duplicate_targets(self, reg):
        q = reg.alloc()
        with pytest.raises(ValueError):
            reg.apply_unitary([q, q], CNOT)

    def test_reversed_target_order(self, reg):
        # CNOT with control b, target a
        a, b = reg.alloc(), reg.alloc()
        reg.apply_unitary([b], X)
        reg.apply_unitary([b, a], CNOT)
        assert reg.measure_computational([a, b]).digits == (1, 1)

    def test_factor_limit(self):
        reg = StateRegistry(0, max_qubits=3)
        qs = [reg.alloc() for _ in range(4)]
        reg.apply_unitary(qs[:2], CNOT)
        reg.apply_unitary(qs[1:3], CNOT)
        with pytest.raises(FactorSizeError):
            reg.apply_unitary(qs[2:], CNOT)


class TestMeasure:
    def test_basis_state(self, reg):
        q = reg.alloc()
        reg.apply_unitary([q], X)
        rec = reg.measure_computational([q])
        assert (rec.outcome, rec.probability) == (1, 1.0)

    def test_epr_halves_agree(self):
        counts = Counter()
        for seed in range(400):
            reg = StateRegistry(seed)
            a, b = reg.alloc(), reg.alloc()
            reg.apply_unitary([a], H)
            reg.apply_unitary([a, b], CNOT)
            ra = reg.measure_computational([a])
            assert ra.probability == pytest.approx(0.5)
            rb = reg.measure_computational([b])
            assert rb.outcome == ra.outcome and rb.probability == pytest.approx(1.0)
            counts[ra.outcome] += 1
        assert abs(counts[0] - 200) < 3 * math.sqrt(100)

    def test_qutrit_ghz_like(self):
        target = np.zeros(9, dtype=complex)
        target[[0, 4, 8]] = 1 / math.sqrt(3)
        seen = Counter()
        for seed in range(300):
            reg = StateRegistry(seed)
            a, b = reg.alloc(3), reg.alloc(3)
            prepare(reg, [a, b], target)
            rec = reg.measure_computational([a, b])
            assert rec.digits[0] == rec.digits[1]
            assert rec.probability == pytest.approx(1 / 3)
            seen[rec.digits[0]] += 1
        assert set(seen) == {0, 1, 2}

    def test_measured_qudits_split_out(self, reg):
        a, b = reg.alloc(), reg.alloc()
        reg.apply_unitary([a], H)
        reg.apply_unitary([a, b], CNOT)
        reg.measure_computational([a])
        assert reg.factor_of(a) is not reg.factor_of(b)


class TestBell:
    def _epr(self, reg):
        a, b = reg.alloc(), reg.alloc()
        reg.apply_unitary([a], H)
        reg.apply_unitary([a, b], CNOT)
        return a, b

    def test_phi_plus_reads_00(self, reg):
        a, b = self._epr(reg)
        assert reg.bell_measure(a, b) == (0, 0)

    def test_x_on_second_reads_10(self, reg):
        a, b = self._epr(reg)
        reg.apply_unitary([b], X)
        assert reg.bell_measure(a, b) == (1, 0)

    def test_product_zero_state(self):
        seen = Counter()
        for seed in range(200):
            reg = StateRegistry(seed)
            a, b = reg.alloc(), reg.alloc()
            np.testing.assert_allclose(reg.bell_probabilities(a, b), [0.5, 0.5, 0, 0], atol=1e-12)
            seen[reg.bell_measure(a, b)] += 1
        assert set(seen) == {(0, 0), (0, 1)}

    def test_needs_qubits(self, reg):
        with pytest.raises(DimensionError):
            reg.bell_measure(reg.alloc(3), reg.alloc())


class TestDiagnostics:
    def test_half_epr_is_maximally_mixed(self, reg):
        a, b = reg.alloc(), reg.alloc()
        reg.apply_unitary([a], H)
        reg.apply_unitary([a, b], CNOT)
        np.testing.assert_allclose(reg.density_of([a]), np.eye(2) / 2, atol=1e-12)
        assert reg.fidelity([a], [1, 0]) == pytest.approx(0.5)

    def test_zero_state_density(self, reg):
        q = reg.alloc()
        np.testing.assert_allclose(reg.density_of([q]), np.diag([1, 0]))
        assert reg.fidelity([q], [1, 0]) == pytest.approx(1.0)
        assert reg.fidelity([q], [0, 1]) == pytest.approx(0.0)

    def test_density_order_follows_arguments(self, reg):
        a, b = reg.alloc(), reg.alloc()
        reg.apply_unitary([b], X)
        assert reg.fidelity([a, b], [0, 1, 0, 0]) == pytest.approx(1.0)
        assert reg.fidelity([b, a], [0, 0, 1, 0]) == pytest.approx(1.0)

    def test_dump_lists_nonzero_amplitudes(self, reg):
        a = reg.alloc()
        reg.apply_unitary([a], X)
        assert reg.dump(a) == [f"# {a!r}", "1 +1.000000000000 +0.000000000000"]


class TestDiscard:
    def test_discard_singleton(self, reg):
        q = reg.alloc()
        reg.apply_unitary([q], H)
        reg.discard([q])
        assert not reg.is_live(q)
        assert q not in reg.live_qudits()

    def test_discard_half_collapses_partner(self, reg):
        a, b = reg.alloc(), reg.alloc()
        reg.apply_unitary([a], H)
        reg.apply_unitary([a, b], CNOT)
        reg.discard([a])
        rho = reg.density_of([b])
        assert sorted(np.round(np.diag(rho).real, 12)) == [0.0, 1.0]

    def test_reuse_after_discard(self, reg):
        q = reg.alloc()
        reg.discard([q])
        with pytest.raises(DeadQuditError):
            reg.apply_unitary([q], X)


@given(seed=st.integers(0, 2 ** 32 - 1), n=st.integers(1, 4))
def test_prepare_loads_state(seed, n):
    reg = StateRegistry(seed, debug=True)
    psi = random_state(np.random.default_rng(seed), 2 ** n)
    qs = [reg.alloc() for _ in range(n)]
    prepare(reg, qs, psi)
    assert reg.fidelity(qs, psi) == pytest.approx(1.0, abs=1e-10)


@given(seed=st.integers(0, 2 ** 32 - 1))
def test_reduced_state_matches_partial_trace(seed):
    rng = np.random.default_rng(seed)
    dims = [2, 3, 2]
    psi = haar(rng, 12)
    reg = StateRegistry(seed)
    qs = [reg.alloc(d) for d in dims]
    prepare(reg, qs, psi)
    np.testing.assert_allclose(reg.density_of([qs[0], qs[2]]), partial_trace_keep(psi, dims, [0, 2]),
                               atol=1e-10)


@given(seed=st.integers(0, 2 ** 32 - 1), ops=st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)),
                                                         min_size=1, max_size=12))
def test_norm_and_partition_preserved(seed, ops):
    reg = StateRegistry(seed, debug=True)
    qs = [reg.alloc() for _ in range(4)]
    rng = np.random.default_rng(seed)
    for a, b in ops:
        if a == b:
            reg.apply_unitary([qs[a]], H)
        else:
            reg.apply_unitary([qs[a], qs[b]], CNOT)
        if rng.random() < 0.2:
            reg.measure_computational([qs[a]])
    for f in reg.factors():
        assert f.norm == pytest.approx(1.0, abs=1e-10)
    assert sorted(q for f in reg.factors() for q in f.members) == sorted(qs)
