"""Sparse/dense numerical kernel: operators, weighted inner products, CG,
Lanczos and a dense SVD oracle for small instances."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.io
import scipy.linalg
import scipy.sparse as sp

from . import _kernels

DENSE_CAP = 2000
# singular values below this fraction of sigma_max count as zero
KERNEL_RTOL = 1e-10


class ConvergenceError(RuntimeError):
    pass


class OracleCapError(ValueError):
    pass


# --------------------------------------------------------------------------
# operators


class SparseOperator:
    """Immutable real sparse matrix in CSR form.

    Duplicate coordinate entries are summed at assembly, so every (row, col)
    pair appears at most once.
    """

    __slots__ = ("_csr", "_t")

    def __init__(self, matrix):
        csr = sp.csr_matrix(matrix, dtype=np.float64, copy=True)
        csr.sum_duplicates()
        csr.sort_indices()
        csr.indptr = csr.indptr.astype(np.int64)
        csr.indices = csr.indices.astype(np.int64)
        self._csr = csr
        self._t = None

    @classmethod
    def from_coo(cls, rows, cols, values, shape):
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        m, n = shape
        if rows.size and (rows.min() < 0 or rows.max() >= m or cols.min() < 0 or cols.max() >= n):
            raise IndexError("coordinate entry out of range for shape %r" % (shape,))
        return cls(sp.coo_matrix((np.asarray(values, dtype=np.float64), (rows, cols)), shape=shape))

    @classmethod
    def zeros(cls, shape):
        return cls(sp.csr_matrix(shape, dtype=np.float64))

    @property
    def shape(self):
        return self._csr.shape

    @property
    def nnz(self):
        return self._csr.nnz

    @property
    def csr(self):
        return self._csr

    def matvec(self, x):
        x = np.ascontiguousarray(x, dtype=np.float64)
        m, n = self.shape
        if x.shape != (n,):
            raise ValueError("dimension mismatch: operator %r applied to vector of length %d" % (self.shape, x.size))
        if self.nnz == 0:
            return np.zeros(m)
        c = self._csr
        return _kernels.csr_matvec(c.indptr, c.indices, c.data, x, m)

    @property
    def T(self):
        if self._t is None:
            self._t = SparseOperator(self._csr.T)
        return self._t

    def __matmul__(self, other):
        if isinstance(other, SparseOperator):
            return SparseOperator(self._csr @ other._csr)
        return self.matvec(other)

    def scaled_rows(self, d):
        return SparseOperator(sp.diags(np.asarray(d, dtype=np.float64)) @ self._csr)

    def scaled_cols(self, d):
        return SparseOperator(self._csr @ sp.diags(np.asarray(d, dtype=np.float64)))

    def scale(self):
        """Largest absolute entry (0 for an empty operator)."""
        return float(np.abs(self._csr.data).max()) if self.nnz else 0.0

    def max_abs(self):
        return self.scale()

    def toarray(self):
        return self._csr.toarray()

    def triplets(self):
        coo = self._csr.tocoo()
        return coo.row, coo.col, coo.data

    def __repr__(self):
        return "SparseOperator(shape=%r, nnz=%d)" % (self.shape, self.nnz)


class GramOperator:
    """Symmetric positive definite Gram matrix of a weighted inner product.

    Diagonal (lumped) Grams are the default and keep adjoints explicit.  A
    general SPD matrix is accepted too; it is Cholesky-factored on
    construction, which doubles as the SPD check.
    """

    def __init__(self, diagonal=None, matrix=None):
        if (diagonal is None) == (matrix is None):
            raise ValueError("give exactly one of diagonal= or matrix=")
        if diagonal is not None:
            d = np.array(diagonal, dtype=np.float64).ravel()
            if d.size and not np.all(d > 0):
                raise ValueError("diagonal Gram entries must be positive")
            self.diag = d
            self.matrix = None
            self._chol = None
            self.dim = d.size
        else:
            a = sp.csr_matrix(matrix, dtype=np.float64)
            if a.shape[0] != a.shape[1]:
                raise ValueError("Gram matrix must be square")
            dense = a.toarray()
            if not np.allclose(dense, dense.T, rtol=1e-13, atol=0.0):
                raise ValueError("Gram matrix must be symmetric")
            try:
                self._chol = scipy.linalg.cholesky(dense, lower=True)
            except np.linalg.LinAlgError as exc:
                raise ValueError("Gram matrix is not positive definite") from exc
            self.diag = None
            self.matrix = a
            self.dim = a.shape[0]

    @classmethod
    def identity(cls, n):
        return cls(diagonal=np.ones(n))

    @property
    def is_diagonal(self):
        return self.diag is not None

    def apply(self, u):
        if self.diag is not None:
            return self.diag * u
        return self.matrix @ u

    def solve(self, u):
        if self.diag is not None:
            return u / self.diag
        return scipy.linalg.cho_solve((self._chol, True), u)

    def dot(self, u, v):
        if self.diag is not None:
            return _kernels.wdot(self.diag, np.ascontiguousarray(u, dtype=np.float64),
                                 np.ascontiguousarray(v, dtype=np.float64))
        return float(np.dot(self.matrix @ u, v))

    def norm(self, u):
        return math.sqrt(max(self.dot(u, u), 0.0))

    def half(self):
        """Dense factor L with M = L L^T (diagonal: sqrt of the weights)."""
        if self.diag is not None:
            return np.diag(np.sqrt(self.diag))
        return self._chol

    def toarray(self):
        if self.diag is not None:
            return np.diag(self.diag)
        return self.matrix.toarray()


def weighted_dot(M: GramOperator, u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != (M.dim,) or v.shape != (M.dim,):
        raise ValueError("dimension mismatch: Gram of dim %d, vectors %r and %r" % (M.dim, u.shape, v.shape))
    return M.dot(u, v)


# --------------------------------------------------------------------------
# Krylov methods


@dataclass
class IterStats:
    iterations: int
    final_residual: float
    converged: bool
    breakdown_reason: Optional[str] = None

    def as_dict(self):
        return {
            "iterations": self.iterations,
            "final_residual": self.final_residual,
            "converged": self.converged,
            "breakdown_reason": self.breakdown_reason,
        }


def _deflate(v, M, basis):
    for q in basis:
        v = v - M.dot(v, q) * q
    return v


MAX_RESTARTS = 3


def cg_solve(
    apply_A: Callable[[np.ndarray], np.ndarray],
    M: GramOperator,
    b,
    tol: float = 1e-10,
    maxit: Optional[int] = None,
    x0=None,
    kernel_basis: Sequence[np.ndarray] = (),
    precond=None,
    atol: float = 0.0,
):
    """Conjugate gradients in the M-inner product.

    ``apply_A`` must be self-adjoint and positive semidefinite with respect to
    M.  Convergence means ||A x - b||_M <= max(tol * ||b||_M, atol).  On semidefinite
    systems the iterates stay in the range of A when x0 does, which yields the
    minimum-norm solution; ``kernel_basis`` (M-orthonormal) is projected out
    of b and of every residual.  ``precond`` is an optional positive diagonal
    scaling.
    """
    b = np.array(b, dtype=np.float64)
    n = b.size
    if M.dim != n:
        raise ValueError("dimension mismatch between Gram (%d) and rhs (%d)" % (M.dim, n))
    if maxit is None:
        maxit = 10 * max(n, 1)
    kernel_basis = list(kernel_basis)
    if kernel_basis:
        b = _deflate(b, M, kernel_basis)
    bnorm = M.norm(b)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64)
    if kernel_basis and x0 is not None:
        x = _deflate(x, M, kernel_basis)
    if bnorm == 0.0:
        return np.zeros(n), IterStats(0, 0.0, True)
    target = max(tol * bnorm, atol)
    r = b - apply_A(x) if x0 is not None else b.copy()
    if kernel_basis:
        r = _deflate(r, M, kernel_basis)
    z = r * precond if precond is not None else r
    p = z.copy()
    rz = M.dot(r, z)
    res = M.norm(r)
    if res <= target:
        return x, IterStats(0, res / bnorm, True)
    best_x, best_res = x.copy(), res
    breakdown = None
    stall = 0
    restarts = 0
    it = 0
    for it in range(1, maxit + 1):
        ap = apply_A(p)
        pap = M.dot(p, ap)
        pnorm2 = M.dot(p, p)
        if pap <= 1e-300 or pap <= 1e-30 * pnorm2:
            breakdown = "zero_curvature"
        else:
            alpha = rz / pap
            _kernels.cg_step(x, r, p, ap, alpha)
            if kernel_basis:
                r = _deflate(r, M, kernel_basis)
            res = M.norm(r)
            if res < best_res:
                if res < 0.999 * best_res:
                    stall = 0
                best_x, best_res = x.copy(), res
            else:
                stall += 1
            if res <= target:
                break
            if stall > max(50, n // 2):
                breakdown = "stagnation"
        if breakdown is not None:
            # on semidefinite systems the recurred residual drifts into the
            # kernel; replace it by the true residual and restart
            if restarts >= MAX_RESTARTS:
                break
            restarts += 1
            breakdown, stall = None, 0
            x = best_x.copy()
            r = b - apply_A(x)
            if kernel_basis:
                r = _deflate(r, M, kernel_basis)
            res = M.norm(r)
            if res <= target:
                best_x, best_res = x.copy(), res
                break
            z = r * precond if precond is not None else r
            p = z.copy()
            rz = M.dot(r, z)
            continue
        z = r * precond if precond is not None else r
        rz_new = M.dot(r, z)
        beta = rz_new / rz
        rz = rz_new
        p = _kernels.axpby(1.0, z, beta, p)
    if best_res < res:
        x, res = best_x, best_res
    converged = res <= target
    if breakdown == "zero_curvature" and not converged:
        breakdown = "inconsistent_rhs"
    return x, IterStats(it, res / bnorm, converged, None if converged else (breakdown or "maxit"))


def _start_vector(n):
    i = np.arange(n, dtype=np.float64)
    return 1.0 + 0.5 * np.sin(1.7 * i + 0.3) + 0.25 * np.cos(0.37 * i * i)


def check_orthonormal(M: GramOperator, basis, tol=1e-10):
    if not len(basis):
        return
    B = np.column_stack(basis)
    G = B.T @ np.column_stack([M.apply(q) for q in basis])
    if np.max(np.abs(G - np.eye(len(basis)))) > tol:
        raise ValueError("kernel basis is not M-orthonormal")


@dataclass
class LanczosResult:
    value: float
    iterations: int
    residual: float
    invariant: bool


def lanczos_extremal(
    apply_A: Callable[[np.ndarray], np.ndarray],
    M: GramOperator,
    which: str = "smallest-nonzero",
    kernel_basis: Sequence[np.ndarray] = (),
    tol: float = 1e-10,
    maxit: Optional[int] = None,
    start=None,
    full_output: bool = False,
):
    """Extremal eigenvalue of an M-self-adjoint PSD operator.

    Lanczos with full (twice-applied) reorthogonalisation in the M-inner
    product.  The start vector is deterministic; ``kernel_basis`` is
    deflated from it and from every new Lanczos vector.  Starting inside the
    range of A (pass ``start``) deflates an unknown kernel implicitly.
    """
    if which not in ("smallest-nonzero", "largest"):
        raise ValueError("which must be 'smallest-nonzero' or 'largest'")
    n = M.dim
    kernel_basis = list(kernel_basis)
    check_orthonormal(M, kernel_basis)
    if maxit is None:
        maxit = n
    maxit = min(maxit, n)
    v = _start_vector(n) if start is None else np.array(start, dtype=np.float64)
    v = _deflate(v, M, kernel_basis)
    nv = M.norm(v)
    if nv == 0.0:
        raise ValueError("start vector lies in the deflated kernel")
    V = np.zeros((n, maxit + 1))
    MV = np.zeros((n, maxit + 1))
    V[:, 0] = v / nv
    MV[:, 0] = M.apply(V[:, 0])
    alpha = np.zeros(maxit)
    beta = np.zeros(maxit)
    theta = math.nan
    resid = math.inf
    invariant = False
    m = 0
    for j in range(maxit):
        w = apply_A(V[:, j])
        alpha[j] = float(np.dot(MV[:, j], w))
        for _ in range(2):
            w = w - V[:, : j + 1] @ (MV[:, : j + 1].T @ w)
        w = _deflate(w, M, kernel_basis)
        bj = M.norm(w)
        beta[j] = bj
        m = j + 1
        scale = max(np.max(np.abs(alpha[:m])), 1e-300)
        if bj <= 1e-12 * scale:
            invariant = True
        if invariant or m % 4 == 0 or m == maxit:
            evals, evecs = scipy.linalg.eigh_tridiagonal(alpha[:m], beta[: m - 1]) if m > 1 else (
                alpha[:1].copy(), np.ones((1, 1)))
            if which == "largest":
                idx = m - 1
            else:
                nz = np.nonzero(evals > 1e-12 * max(evals[-1], 0.0))[0]
                if nz.size == 0:
                    idx = None
                else:
                    idx = nz[0]
            if idx is not None:
                theta = float(evals[idx])
                resid = abs(bj * evecs[-1, idx])
                if invariant or resid <= tol * abs(theta):
                    break
        if invariant:
            break
        V[:, j + 1] = w / bj
        MV[:, j + 1] = M.apply(V[:, j + 1])
    if math.isnan(theta):
        raise ConvergenceError("operator has no nonzero eigenvalue on the explored subspace")
    converged = invariant or resid <= tol * abs(theta)
    if not converged:
        raise ConvergenceError("Lanczos did not converge in %d steps (residual %.3g)" % (m, resid))
    if full_output:
        return LanczosResult(theta, m, resid, invariant)
    return theta


# --------------------------------------------------------------------------
# dense oracle


@dataclass
class DenseOracle:
    """Dense weighted SVD ground truth for one operator between Gram spaces.

    ``range_basis`` is M_cod-orthonormal and spans R(A); ``null_basis`` is
    M_dom-orthonormal and spans N(A); ``corange_basis`` spans R(A*).
    """

    singular_values: np.ndarray
    rank: int
    threshold: float
    null_basis: np.ndarray
    range_basis: np.ndarray
    corange_basis: np.ndarray
    _pinv: np.ndarray = field(repr=False, default=None)

    def pinv(self, b):
        """Minimum-norm weighted least-squares solution of A x = b."""
        return self._pinv @ b

    def project_range(self, y, gram_cod: GramOperator):
        B = self.range_basis
        return B @ (B.T @ gram_cod.apply(y))

    def project_corange(self, x, gram_dom: GramOperator):
        B = self.corange_basis
        return B @ (B.T @ gram_dom.apply(x))

    @property
    def sigma_min_nonzero(self):
        return float(self.singular_values[self.rank - 1]) if self.rank else math.nan


def _dense_op(op):
    if isinstance(op, SparseOperator):
        return op.toarray()
    if sp.issparse(op):
        return op.toarray()
    return np.asarray(op, dtype=np.float64)


def dense_oracle(op, gram_dom: GramOperator, gram_cod: GramOperator, cap: int = DENSE_CAP) -> DenseOracle:
    m, n = op.shape
    if m + n > cap:
        raise OracleCapError("dense oracle capped at total dimension %d (got %d)" % (cap, m + n))
    A = _dense_op(op)
    Ld = gram_dom.half()
    Lc = gram_cod.half()
    # weighted representation W = Lc^T A Ld^{-T}
    W = Lc.T @ A
    W = scipy.linalg.solve_triangular(Ld, W.T, lower=True).T if n else W
    if m == 0 or n == 0:
        s = np.zeros(0)
        U = np.zeros((m, 0))
        Vt = np.eye(n)
    else:
        U, s, Vt = np.linalg.svd(W)
    smax = float(s[0]) if s.size else 0.0
    thr = KERNEL_RTOL * smax
    rank = int(np.sum(s > thr)) if smax > 0 else 0
    Vt_full = Vt if Vt.shape[0] == n else np.eye(n)
    # map back to coefficient space: x = Ld^{-T} v, y = Lc^{-T} u
    def from_dom(v):
        return scipy.linalg.solve_triangular(Ld.T, v, lower=False) if n else v

    def from_cod(u):
        return scipy.linalg.solve_triangular(Lc.T, u, lower=False) if m else u

    null_basis = from_dom(Vt_full[rank:].T) if n else np.zeros((0, 0))
    corange = from_dom(Vt_full[:rank].T) if n else np.zeros((0, 0))
    range_basis = from_cod(U[:, :rank]) if m else np.zeros((0, 0))
    if rank:
        # x = Ld^{-T} V S^+ U^T Lc^T b
        core = Vt_full[:rank].T @ np.diag(1.0 / s[:rank]) @ U[:, :rank].T @ Lc.T
        pinv = from_dom(core)
    else:
        pinv = np.zeros((n, m))
    return DenseOracle(
        singular_values=np.asarray(s),
        rank=rank,
        threshold=thr,
        null_basis=null_basis.reshape(n, -1),
        range_basis=range_basis.reshape(m, -1),
        corange_basis=corange.reshape(n, -1),
        _pinv=pinv,
    )


def weighted_matrix(op, gram_dom: GramOperator, gram_cod: GramOperator):
    """Dense Lc^T A Ld^{-T}: the operator in orthonormal coordinates."""
    A = _dense_op(op)
    W = gram_cod.half().T @ A
    if A.shape[1]:
        W = scipy.linalg.solve_triangular(gram_dom.half(), W.T, lower=True).T
    return W


# --------------------------------------------------------------------------
# file formats


def write_matrix_market(path, op: SparseOperator):
    scipy.io.mmwrite(str(path), op.csr.tocoo(), field="real", precision=17, symmetry="general")


def read_matrix_market(path) -> SparseOperator:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    return SparseOperator(scipy.io.mmread(io.StringIO(text)))


def write_vector_csv(path, v):
    v = np.asarray(v, dtype=np.float64).ravel()
    Path(path).write_text("".join("%.17g\n" % x for x in v), encoding="utf-8")


def read_vector_csv(path):
    lines = Path(path).read_text(encoding="utf-8").split()
    return np.array([float(s) for s in lines], dtype=np.float64)
