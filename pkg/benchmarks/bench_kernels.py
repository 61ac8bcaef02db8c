"""Compare the compiled kernels with the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N]

Both backends are loaded side by side; results are checked for agreement
before timing.
"""
import argparse
import timeit

import numpy as np

from qnetstack import _kernels_py, kernels

try:
    from qnetstack import _ckernels
except ImportError:
    _ckernels = None


def compiled_apply(psi, dims, targets, u):
    offsets, bases = kernels.index_tables(dims, targets)
    return _ckernels.apply_indexed(psi, u, offsets, bases)


def compiled_marginal(psi, dims, targets):
    offsets, bases = kernels.index_tables(dims, targets)
    return _ckernels.marginal_indexed(psi, offsets, bases)


def cases(rng):
    for n in (6, 10, 14, 18):
        dims = (2,) * n
        psi = rng.normal(size=2 ** n) + 1j * rng.normal(size=2 ** n)
        psi /= np.linalg.norm(psi)
        u, _ = np.linalg.qr(rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4)))
        yield f"apply 2q gate, {n} qubits", (
            lambda: _kernels_py.apply_matrix(psi, dims, (1, n - 1), u),
            lambda: compiled_apply(psi, dims, (1, n - 1), np.ascontiguousarray(u)),
        )
        yield f"marginal 1q, {n} qubits", (
            lambda: _kernels_py.marginal_probs(psi, dims, (n // 2,)),
            lambda: compiled_marginal(psi, dims, (n // 2,)),
        )
    for size in (64, 1500):
        data = rng.integers(0, 256, size).astype(np.uint8).tobytes()
        yield f"checksum, {size} bytes", (
            lambda: _kernels_py.ones_complement_sum(data),
            lambda: _ckernels.ones_complement_sum(data),
        )


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _ckernels is None:
        print("compiled kernels not built; only the numpy fallback is available")
        return
    rng = np.random.default_rng(0)
    print(f"{'case':32s} {'numpy (us)':>12s} {'cython (us)':>12s} {'speedup':>8s}")
    for name, (py, cy) in cases(rng):
        np.testing.assert_allclose(py(), cy(), atol=1e-12)
        number = 50
        t_py = min(timeit.repeat(py, number=number, repeat=args.repeat)) / number * 1e6
        t_cy = min(timeit.repeat(cy, number=number, repeat=args.repeat)) / number * 1e6
        print(f"{name:32s} {t_py:12.1f} {t_cy:12.1f} {t_py / t_cy:7.2f}x")


if __name__ == "__main__":
    main()
