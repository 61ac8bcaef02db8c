import numpy as np
import pytest
from hypothesis import given, strategies as st

from qnetstack import _kernels_py, kernels

from oracles import inet_checksum

try:
    from qnetstack import _ckernels
except ImportError:  # pragma: no cover - depends on the build
    _ckernels = None

needs_ext = pytest.mark.skipif(_ckernels is None, reason="compiled kernels not built")


@st.composite
def system(draw):
    dims = draw(st.lists(st.sampled_from([2, 3]), min_size=1, max_size=5))
    k = draw(st.integers(1, min(3, len(dims))))
    targets = draw(st.permutations(range(len(dims))))[:k]
    seed = draw(st.integers(0, 2 ** 32 - 1))
    rng = np.random.default_rng(seed)
    size = int(np.prod(dims))
    psi = rng.normal(size=size) + 1j * rng.normal(size=size)
    tsize = int(np.prod([dims[t] for t in targets]))
    u = rng.normal(size=(tsize, tsize)) + 1j * rng.normal(size=(tsize, tsize))
    return dims, list(targets), psi / np.linalg.norm(psi), u


def einsum_apply(psi, dims, targets, u):
    """Oracle: reshape the operator to a tensor and contract with einsum."""
    n = len(dims)
    letters = "abcdefghij"
    tdims = [dims[t] for t in targets]
    ut = u.reshape(tdims + tdims)
    outs = "".join(letters[n + i] for i in range(len(targets)))
    ins = "".join(letters[t] for t in targets)
    state = "".join(letters[:n])
    result = list(state)
    for i, t in enumerate(targets):
        result[t] = letters[n + i]
    return np.einsum(f"{outs}{ins},{state}->{''.join(result)}", ut, psi.reshape(dims)).reshape(-1)


@given(system())
def test_python_apply_matches_einsum(sys_):
    dims, targets, psi, u = sys_
    np.testing.assert_allclose(_kernels_py.apply_matrix(psi, dims, targets, u),
                               einsum_apply(psi, dims, targets, u), atol=1e-10)


@needs_ext
@given(system())
def test_compiled_apply_matches_python(sys_):
    dims, targets, psi, u = sys_
    offsets, bases = kernels.index_tables(dims, targets)
    got = _ckernels.apply_indexed(psi.copy(), np.ascontiguousarray(u), offsets, bases)
    np.testing.assert_allclose(got, _kernels_py.apply_matrix(psi, dims, targets, u), atol=1e-10)


@needs_ext
@given(system())
def test_compiled_marginals_match_python(sys_):
    dims, targets, psi, _ = sys_
    offsets, bases = kernels.index_tables(dims, targets)
    np.testing.assert_allclose(_ckernels.marginal_indexed(psi, offsets, bases),
                               _kernels_py.marginal_probs(psi, dims, targets), atol=1e-12)


@given(system())
def test_marginals_sum_to_one(sys_):
    dims, targets, psi, _ = sys_
    p = kernels.marginal_probs(psi, dims, targets)
    assert p.sum() == pytest.approx(1.0)
    assert p.shape == (int(np.prod([dims[t] for t in targets])),)


@given(st.binary(max_size=200))
def test_checksum_backends_agree(data):
    ref = (~inet_checksum(data)) & 0xFFFF  # oracle returns the complement
    assert _kernels_py.ones_complement_sum(data) == ref
    assert kernels.ones_complement_sum(data) == _kernels_py.ones_complement_sum(data)


def test_backend_is_reported():
    assert kernels.BACKEND in ("cython", "python")
