"""Reference calculations written independently of the package under test."""
import math
from fractions import Fraction

import numpy as np


def inet_checksum(data: bytes) -> int:
    """Byte-at-a-time RFC 1071 checksum."""
    total = 0
    for i in range(0, len(data), 2):
        hi = data[i]
        lo = data[i + 1] if i + 1 < len(data) else 0
        total += (hi << 8) | lo
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def expected_trials_two_in_a_row(q) -> float:
    """Mean Bernoulli(q) trials until two consecutive successes.

    Solves the two-state absorbing chain ``E0 = 1 + q E1 + p E0``,
    ``E1 = 1 + p E0`` by elimination with exact fractions.
    """
    q = Fraction(q).limit_denominator(10 ** 9)
    p = 1 - q
    # E1 = 1 + p E0  ->  E0 (1 - p - q p) = 1 + q
    e0 = (1 + q) / (1 - p - q * p)
    return float(e0)


def trials_variance_two_in_a_row(q, horizon: int = 400) -> float:
    """Variance of the same count via the distribution (dynamic programming)."""
    p = 1 - q
    state = {0: 1.0}  # consecutive successes so far -> probability mass
    mean = second = 0.0
    for t in range(1, horizon + 1):
        nxt = {0: 0.0, 1: 0.0}
        done = 0.0
        for s, mass in state.items():
            nxt[0] += mass * p
            if s == 1:
                done += mass * q
            else:
                nxt[1] += mass * q
        mean += t * done
        second += t * t * done
        state = nxt
    return second - mean ** 2


def p_weight_at_least_2(eps: float, n: int = 5) -> float:
    return sum(math.comb(n, w) * eps ** w * (1 - eps) ** (n - w) for w in range(2, n + 1))


def cgl_codeword(secret) -> np.ndarray:
    """Joint (share1, share2, share3) state for a qutrit secret, from the explicit map
    |0> -> |000>+|111>+|222>, |1> -> |012>+|120>+|201>, |2> -> |021>+|102>+|210>."""
    words = {0: ["000", "111", "222"], 1: ["012", "120", "201"], 2: ["021", "102", "210"]}
    out = np.zeros(27, dtype=complex)
    for s, amp in enumerate(secret):
        for w in words[s]:
            out[int(w, 3)] += amp / math.sqrt(3)
    return out


def kron_all(*vs):
    out = np.ones(1, dtype=complex)
    for v in vs:
        out = np.kron(out, v)
    return out


def partial_trace_keep(psi, dims, keep):
    """Reduced density matrix of subsystems ``keep`` (in ascending order)."""
    t = psi.reshape(dims)
    n = len(dims)
    rest = [i for i in range(n) if i not in keep]
    t = np.transpose(t, list(keep) + rest)
    a = int(np.prod([dims[i] for i in keep]))
    m = t.reshape(a, -1)
    return m @ m.conj().T


def haar(rng, dim):
    v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return v / np.linalg.norm(v)


def three_sigma_band(p: float, n: int) -> float:
    return 3 * math.sqrt(p * (1 - p) / n)
