"""Kernel dispatch: compiled extension when importable, numpy otherwise.

Set ``QNETSTACK_KERNELS=python`` to force the numpy fallback.
"""
import os
from functools import lru_cache
from math import prod

import numpy as np

from . import _kernels_py

_ext = None
if os.environ.get("QNETSTACK_KERNELS", "").lower() != "python":
    try:
        from . import _ckernels as _ext
    except ImportError:
        _ext = None

BACKEND = "cython" if _ext is not None else "python"

# index tables above this many amplitudes are rebuilt on every call
_CACHE_LIMIT = 1 << 16


def _build_tables(dims, targets):
    strides = [1] * len(dims)
    for i in range(len(dims) - 2, -1, -1):
        strides[i] = strides[i + 1] * dims[i + 1]
    offsets = np.zeros(1, dtype=np.int64)
    for t in targets:
        digit = np.arange(dims[t], dtype=np.int64) * strides[t]
        offsets = (offsets[:, None] + digit[None, :]).reshape(-1)
    bases = np.zeros(1, dtype=np.int64)
    for i, d in enumerate(dims):
        if i in targets:
            continue
        digit = np.arange(d, dtype=np.int64) * strides[i]
        bases = (bases[:, None] + digit[None, :]).reshape(-1)
    return offsets, bases


_cached_tables = lru_cache(maxsize=4096)(_build_tables)


def index_tables(dims, targets):
    """Flat offsets of the target sub-basis and base indices of the rest."""
    dims, targets = tuple(dims), tuple(targets)
    if prod(dims) <= _CACHE_LIMIT:
        return _cached_tables(dims, targets)
    return _build_tables(dims, targets)


def apply_matrix(psi, dims, targets, u):
    if _ext is None:
        return _kernels_py.apply_matrix(psi, dims, targets, u)
    offsets, bases = index_tables(dims, targets)
    return _ext.apply_indexed(psi, np.ascontiguousarray(u, dtype=np.complex128), offsets, bases)


def marginal_probs(psi, dims, targets):
    if _ext is None:
        return _kernels_py.marginal_probs(psi, dims, targets)
    offsets, bases = index_tables(dims, targets)
    return _ext.marginal_indexed(psi, offsets, bases)


def ones_complement_sum(data):
    if _ext is None:
        return _kernels_py.ones_complement_sum(data)
    return _ext.ones_complement_sum(data)
