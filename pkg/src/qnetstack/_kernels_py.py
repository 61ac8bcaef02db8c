"""Reference numpy kernels.

Used when the compiled ``_ckernels`` extension is unavailable, and as the
oracle the compiled kernels are checked against.
"""
from math import prod

import numpy as np


def apply_matrix(psi, dims, targets, u):
    """Apply ``u`` to the ``targets`` axes of a flat mixed-radix state vector."""
    k = len(targets)
    tdims = tuple(dims[t] for t in targets)
    tensor = psi.reshape(tuple(dims))
    tensor = np.moveaxis(tensor, targets, range(k))
    rest = tensor.shape[k:]
    mat = tensor.reshape(prod(tdims), -1)
    out = (u @ mat).reshape(tdims + rest)
    out = np.moveaxis(out, range(k), targets)
    return np.ascontiguousarray(out).reshape(-1)


def marginal_probs(psi, dims, targets):
    """Born probabilities of the joint computational-basis outcome on ``targets``."""
    p = (psi.real ** 2 + psi.imag ** 2).reshape(tuple(dims))
    others = tuple(i for i in range(len(dims)) if i not in targets)
    p = p.sum(axis=others) if others else p
    # p's remaining axes are in ascending member order; reorder to ``targets``
    order = sorted(range(len(targets)), key=lambda i: targets[i])
    p = np.transpose(p, np.argsort(order)) if len(targets) > 1 else p
    return np.ascontiguousarray(p).reshape(-1)


def ones_complement_sum(data):
    """16-bit one's-complement sum of big-endian words, odd tail zero-padded."""
    if len(data) % 2:
        data = bytes(data) + b"\x00"
    words = np.frombuffer(bytes(data), dtype=">u2")
    total = int(words.sum(dtype=np.uint64))
    while total > 0xFFFF:
        total = (total & 0xFFFF) + (total >> 16)
    return total
