"""Compare the numba and numpy kernel backends.

    python benchmarks/bench_kernels.py [--cells 16] [--repeat 20]

Times the CSR matvec and weighted dot on the 3D rot operator, then a full
CG solve of the rot-rot normal equations under each backend.
"""

import argparse
import time

import numpy as np

from hilbert_apost import _kernels
from hilbert_apost.instances import GridSpec, build_grid3d
from hilbert_apost.linalg import cg_solve


def best_of(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--cells", type=int, default=16)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()

    cx = build_grid3d(GridSpec(3, args.cells, gamma_t="all"))
    A = cx.op(1).csr
    x = np.random.default_rng(0).standard_normal(A.shape[1])
    w = cx.gram(1).diag
    m = A.shape[0]
    print("rot operator %d x %d, nnz %d" % (A.shape[0], A.shape[1], A.nnz))

    # warm up the jit so compile time is not measured
    _kernels.numba_csr_matvec(A.indptr, A.indices, A.data, x, m)
    _kernels.numba_wdot(w, x, x)

    rows = [
        ("csr_matvec", lambda: _kernels.numba_csr_matvec(A.indptr, A.indices, A.data, x, m),
         lambda: _kernels.numpy_csr_matvec(A.indptr, A.indices, A.data, x, m)),
        ("wdot", lambda: _kernels.numba_wdot(w, x, x), lambda: _kernels.numpy_wdot(w, x, x)),
    ]
    for name, fa, fb in rows:
        ta, tb = best_of(fa, args.repeat), best_of(fb, args.repeat)
        print("%-12s numba %9.2f us   numpy %9.2f us   speedup %.2fx" % (name, ta * 1e6, tb * 1e6, tb / ta))

    b = cx.apply_adj(1, cx.apply(1, x))
    normal = lambda v: cx.apply_adj(1, cx.apply(1, v))
    for backend in (True, False):
        _kernels.USE_NUMBA = backend and _kernels.HAVE_NUMBA
        t = best_of(lambda: cg_solve(normal, cx.gram(1), b, tol=1e-10), max(1, args.repeat // 5))
        print("cg_solve     %-5s %9.2f ms" % (_kernels.backend(), t * 1e3))


if __name__ == "__main__":
    main()
