"""Hot inner-loop kernels with a numba path and a pure-numpy fallback.

The backend is chosen once at import time.  Set ``HILBERT_APOST_NUMBA=0`` to
force the numpy path (useful for debugging and for the benchmark comparison).
Both implementations are always importable as ``numba_*`` / ``numpy_*`` so
that tests can compare them directly.
"""

import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in CI
    HAVE_NUMBA = False

_flag = os.environ.get("HILBERT_APOST_NUMBA", "1").strip().lower()
USE_NUMBA = HAVE_NUMBA and _flag not in ("0", "false", "no", "off")


def backend():
    return "numba" if USE_NUMBA else "numpy"


# --------------------------------------------------------------------------
# numpy reference implementations


def numpy_csr_matvec(indptr, indices, data, x, nrows):
    row = np.repeat(np.arange(nrows), np.diff(indptr))
    return np.bincount(row, weights=data * x[indices], minlength=nrows).astype(np.float64)


def numpy_wdot(w, u, v):
    return float(np.dot(w, u * v))


def numpy_axpby(a, x, b, y):
    return a * x + b * y


def numpy_cg_step(x, r, p, ap, alpha):
    x += alpha * p
    r -= alpha * ap


# --------------------------------------------------------------------------
# numba implementations

if HAVE_NUMBA:

    @njit(cache=True)
    def numba_csr_matvec(indptr, indices, data, x, nrows):
        out = np.zeros(nrows, dtype=np.float64)
        for i in range(nrows):
            acc = 0.0
            for jj in range(indptr[i], indptr[i + 1]):
                acc += data[jj] * x[indices[jj]]
            out[i] = acc
        return out

    @njit(cache=True)
    def numba_wdot(w, u, v):
        acc = 0.0
        for i in range(u.shape[0]):
            acc += w[i] * (u[i] * v[i])
        return acc

    @njit(cache=True)
    def numba_axpby(a, x, b, y):
        out = np.empty_like(x)
        for i in range(x.shape[0]):
            out[i] = a * x[i] + b * y[i]
        return out

    @njit(cache=True)
    def numba_cg_step(x, r, p, ap, alpha):
        for i in range(x.shape[0]):
            x[i] += alpha * p[i]
            r[i] -= alpha * ap[i]

else:  # pragma: no cover
    numba_csr_matvec = numpy_csr_matvec
    numba_wdot = numpy_wdot
    numba_axpby = numpy_axpby
    numba_cg_step = numpy_cg_step


def csr_matvec(indptr, indices, data, x, nrows):
    """y = A @ x for a CSR triple; ``x`` must be float64 and contiguous."""
    if USE_NUMBA:
        return numba_csr_matvec(indptr, indices, data, x, nrows)
    return numpy_csr_matvec(indptr, indices, data, x, nrows)


def wdot(w, u, v):
    """Diagonally weighted inner product sum(w * (u * v)), exactly symmetric in u, v."""
    if USE_NUMBA:
        return float(numba_wdot(w, u, v))
    return numpy_wdot(w, u, v)


def axpby(a, x, b, y):
    if USE_NUMBA:
        return numba_axpby(float(a), x, float(b), y)
    return numpy_axpby(a, x, b, y)


def cg_step(x, r, p, ap, alpha):
    """In-place x += alpha p, r -= alpha Ap."""
    if USE_NUMBA:
        numba_cg_step(x, r, p, ap, float(alpha))
    else:
        numpy_cg_step(x, r, p, ap, alpha)
