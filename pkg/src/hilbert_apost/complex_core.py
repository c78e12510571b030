"""Finite Hilbert complexes and their toolbox: adjoints, complex checks,
range projections, Helmholtz decomposition, cohomology and
Friedrichs/Poincare constants.

Levels are 0-based.  ``cx.op(l)`` maps H_l to H_{l+1}; operators outside
``0..L-2`` are zero maps to or from zero-dimensional spaces, so the ends of a
complex never need special-casing by callers.  Fields are plain float arrays;
the level they live on is always passed explicitly.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import scipy.linalg

from .linalg import (
    DENSE_CAP,
    KERNEL_RTOL,
    ConvergenceError,
    GramOperator,
    OracleCapError,
    SparseOperator,
    cg_solve,
    dense_oracle,
    lanczos_extremal,
    _start_vector,
    weighted_matrix,
)

COMPLEX_RTOL = 1e-14
RANK_STABILITY = 1e3
PROJ_TOL = 1e-12


class IllPosedError(ValueError):
    """Smallest nonzero singular value too close to the kernel threshold."""


class WeightedSpace:
    """Coefficient space R^dim with the inner product given by ``gram``.

    ``coords`` optionally carries one location per degree of freedom (used by
    manufactured-solution recipes).
    """

    def __init__(self, dim, gram: Optional[GramOperator] = None, name=None, coords=None, kind=None):
        dim = int(dim)
        if gram is None:
            gram = GramOperator.identity(dim)
        if gram.dim != dim:
            raise ValueError("Gram of dim %d does not match space dim %d" % (gram.dim, dim))
        self.dim = dim
        self.gram = gram
        self.name = name
        self.kind = kind
        self.coords = None if coords is None else np.asarray(coords, dtype=np.float64)

    def dot(self, u, v):
        return self.gram.dot(u, v)

    def norm(self, u):
        return self.gram.norm(u)

    def __repr__(self):
        return "WeightedSpace(dim=%d, name=%r)" % (self.dim, self.name)


class _ImplicitAdjoint:
    """Action of M_dom^{-1} A^T M_cod for a general (factored) Gram."""

    def __init__(self, op: SparseOperator, gram_dom: GramOperator, gram_cod: GramOperator):
        self._op = op
        self._dom = gram_dom
        self._cod = gram_cod
        self.shape = (op.shape[1], op.shape[0])

    def matvec(self, y):
        return self._dom.solve(self._op.T.matvec(self._cod.apply(y)))

    def __matmul__(self, y):
        return self.matvec(y)

    def toarray(self):
        A = self._op.toarray()
        return self._dom.solve(A.T @ self._cod.toarray())


class HilbertComplex:
    def __init__(self, spaces: Sequence[WeightedSpace], ops: Sequence[SparseOperator], names=None, meta=None):
        spaces = list(spaces)
        ops = list(ops)
        if len(ops) != len(spaces) - 1:
            raise ValueError("need len(spaces) - 1 operators, got %d for %d spaces" % (len(ops), len(spaces)))
        for l, A in enumerate(ops):
            want = (spaces[l + 1].dim, spaces[l].dim)
            if A.shape != want:
                raise ValueError("operator %d has shape %r, expected %r" % (l, A.shape, want))
        self.spaces = spaces
        self.ops = ops
        self.names = list(names) if names is not None else ["A%d" % l for l in range(len(ops))]
        self.meta = dict(meta or {})
        self._lock = threading.Lock()
        self._adj = {}
        self._cache = {}

    # -- structure -----------------------------------------------------------

    @property
    def n_spaces(self):
        return len(self.spaces)

    def dim(self, l):
        return self.spaces[l].dim if 0 <= l < len(self.spaces) else 0

    def gram(self, l) -> GramOperator:
        if 0 <= l < len(self.spaces):
            return self.spaces[l].gram
        return GramOperator(diagonal=np.zeros(0))

    def op(self, l) -> SparseOperator:
        if 0 <= l < len(self.ops):
            return self.ops[l]
        return SparseOperator.zeros((self.dim(l + 1), self.dim(l)))

    def dot(self, l, u, v):
        return self.gram(l).dot(u, v)

    def norm(self, l, u):
        return self.gram(l).norm(u)

    def apply(self, l, x):
        return self.op(l).matvec(x)

    def adjoint(self, l):
        """A_l^* = M_l^{-1} A_l^T M_{l+1}: sparse for diagonal Grams, implicit otherwise."""
        with self._lock:
            if l not in self._adj:
                A = self.op(l)
                Md, Mc = self.gram(l), self.gram(l + 1)
                if Md.is_diagonal and Mc.is_diagonal:
                    self._adj[l] = A.T.scaled_rows(1.0 / Md.diag).scaled_cols(Mc.diag) if A.shape[0] and A.shape[1] else SparseOperator.zeros((A.shape[1], A.shape[0]))
                else:
                    self._adj[l] = _ImplicitAdjoint(A, Md, Mc)
            return self._adj[l]

    def apply_adj(self, l, y):
        return self.adjoint(l).matvec(y)

    def reversed(self, names=None):
        """Dual complex: spaces in reverse order, operators replaced by adjoints."""
        L = len(self.ops)
        ops = []
        for j in range(L):
            adj = self.adjoint(L - 1 - j)
            if not isinstance(adj, SparseOperator):
                adj = SparseOperator(adj.toarray())
            ops.append(adj)
        if names is None:
            names = [self.names[L - 1 - j] + "*" for j in range(L)]
        return HilbertComplex(self.spaces[::-1], ops, names=names, meta=dict(self.meta, reversed=True))

    def cached(self, key, fn):
        """Compute-once cache; the first writer wins, readers never block on math."""
        with self._lock:
            if key in self._cache:
                return self._cache[key]
        val = fn()
        with self._lock:
            return self._cache.setdefault(key, val)

    def __repr__(self):
        return "HilbertComplex(dims=%r, names=%r)" % ([s.dim for s in self.spaces], self.names)


# ----------------------------------------------------------------------------
# verification


@dataclass
class LevelCheck:
    level: int
    primal_max: float
    adjoint_max: float
    threshold: float
    passed: bool


def verify_complex(cx: HilbertComplex) -> List[LevelCheck]:
    out = []
    for l in range(len(cx.ops) - 1):
        A, B = cx.op(l), cx.op(l + 1)
        thr = COMPLEX_RTOL * B.scale() * A.scale()
        prim = (B @ A).max_abs()
        As, Bs = cx.adjoint(l), cx.adjoint(l + 1)
        if isinstance(As, SparseOperator) and isinstance(Bs, SparseOperator):
            adj_prod = As @ Bs
            adj = adj_prod.max_abs()
            # the adjoint entries carry Gram ratios, so rescale the threshold
            adj_thr = COMPLEX_RTOL * As.scale() * Bs.scale()
        else:
            adj = float(np.abs(As.toarray() @ Bs.toarray()).max()) if As.shape[0] and Bs.shape[1] else 0.0
            adj_thr = COMPLEX_RTOL * float(np.abs(As.toarray()).max(initial=0)) * float(np.abs(Bs.toarray()).max(initial=0))
        out.append(LevelCheck(l, prim, adj, thr, prim <= thr and adj <= max(adj_thr, thr)))
    return out


def adjointness_gap(cx: HilbertComplex, l, u, v):
    """|<A u, v> - <u, A* v>| relative to |A u| |v| (u in H_l, v in H_{l+1})."""
    lhs = cx.dot(l + 1, cx.apply(l, u), v)
    rhs = cx.dot(l, u, cx.apply_adj(l, v))
    den = cx.norm(l + 1, cx.apply(l, u)) * cx.norm(l + 1, v)
    return abs(lhs - rhs) / den if den else abs(lhs - rhs)


# ----------------------------------------------------------------------------
# projections


def _check_stats(stats, tol, what):
    if not stats.converged and stats.final_residual > max(100 * tol, 1e-9):
        raise ConvergenceError("%s: CG failed (%s, residual %.3g)" % (what, stats.breakdown_reason, stats.final_residual))


def operator_norm_estimate(cx: HilbertComplex, l, steps=30):
    """Power-iteration estimate of the weighted norm of A_l (cached)."""
    def compute():
        if cx.dim(l) == 0 or cx.op(l).nnz == 0:
            return 0.0
        M = cx.gram(l)
        v = _start_vector(cx.dim(l))
        v /= M.norm(v)
        lam = 0.0
        for _ in range(steps):
            w = cx.apply_adj(l, cx.apply(l, v))
            lam = M.norm(w)
            if lam == 0.0:
                return 0.0
            v = w / lam
        return math.sqrt(lam)

    return cx.cached(("opnorm", l, steps), compute)


def prev_potential(cx: HilbertComplex, l, x, tol=PROJ_TOL, x0=None):
    """Minimum-norm z in H_{l-1} with A_{l-1} z = pi_{R(A_{l-1})} x.

    Convergence is judged against the size of x as well as the size of the
    normal-equation rhs, so nearly harmonic inputs do not ask for a residual
    below rounding.
    """
    if cx.dim(l - 1) == 0 or cx.op(l - 1).nnz == 0:
        return np.zeros(cx.dim(l - 1)), None
    rhs = cx.apply_adj(l - 1, x)
    normal = lambda z: cx.apply_adj(l - 1, cx.apply(l - 1, z))
    atol = tol * operator_norm_estimate(cx, l - 1) * cx.norm(l, x)
    z, st = cg_solve(normal, cx.gram(l - 1), rhs, tol=tol, x0=x0, atol=atol)
    _check_stats(st, tol, "range projection (prev)")
    return z, st


def adj_potential(cx: HilbertComplex, l, x, tol=PROJ_TOL, x0=None):
    """Minimum-norm y in H_{l+1} with A_l^* y = pi_{R(A_l^*)} x."""
    if cx.dim(l + 1) == 0 or cx.op(l).nnz == 0:
        return np.zeros(cx.dim(l + 1)), None
    rhs = cx.apply(l, x)
    normal = lambda y: cx.apply(l, cx.apply_adj(l, y))
    atol = tol * operator_norm_estimate(cx, l) * cx.norm(l, x)
    y, st = cg_solve(normal, cx.gram(l + 1), rhs, tol=tol, x0=x0, atol=atol)
    _check_stats(st, tol, "range projection (adj)")
    return y, st


def project_range(cx: HilbertComplex, side, l, x, tol=PROJ_TOL):
    """M-orthogonal projection of x in H_l onto R(A_{l-1}) ('prev') or R(A_l^*) ('adj')."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (cx.dim(l),):
        raise ValueError("field of length %d does not live in H_%d (dim %d)" % (x.size, l, cx.dim(l)))
    if side == "prev":
        z, _ = prev_potential(cx, l, x, tol)
        return cx.apply(l - 1, z)
    if side == "adj":
        y, _ = adj_potential(cx, l, x, tol)
        return cx.apply_adj(l, y)
    raise ValueError("side must be 'prev' or 'adj'")


@dataclass
class Helmholtz:
    prev: np.ndarray
    kernel: np.ndarray
    adj: np.ndarray
    prev_potential: np.ndarray
    adj_potential: np.ndarray

    def as_tuple(self):
        return self.prev, self.kernel, self.adj


def helmholtz_decompose(cx: HilbertComplex, l, x, tol=PROJ_TOL, basis=None) -> Helmholtz:
    """x = x_prev + x_K + x_adj in R(A_{l-1}) + K_l + R(A_l^*).

    The kernel part is what remains after removing both range parts; when a
    cohomology basis is supplied the kernel part is re-projected onto it to
    wash out solver residue.
    """
    x = np.asarray(x, dtype=np.float64)
    z, _ = prev_potential(cx, l, x, tol)
    y, _ = adj_potential(cx, l, x, tol)
    p = cx.apply(l - 1, z)
    q = cx.apply_adj(l, y)
    k = x - p - q
    if basis is not None:
        k = basis.project(k)
    return Helmholtz(p, k, q, z, y)


# ----------------------------------------------------------------------------
# cohomology


def _gram_cols(M: GramOperator, X):
    return M.diag[:, None] * X if M.is_diagonal else M.matrix @ X


def _mgs(vectors, M: GramOperator, rtol, max_dim=None):
    basis = []
    for v in vectors:
        n0 = M.norm(v)
        if n0 == 0.0:
            continue
        w = v.copy()
        for _ in range(2):
            for q in basis:
                w -= M.dot(w, q) * q
        nw = M.norm(w)
        if nw > rtol * n0:
            basis.append(w / nw)
            if max_dim is not None and len(basis) >= max_dim:
                break
    return basis


@dataclass
class CohomologyBasis:
    level: int
    vectors: List[np.ndarray]
    gram: GramOperator = field(repr=False)
    method: str = "dense"

    @property
    def dim(self):
        return len(self.vectors)

    def project(self, x):
        out = np.zeros_like(np.asarray(x, dtype=np.float64))
        for q in self.vectors:
            out += self.gram.dot(x, q) * q
        return out

    def coefficients(self, x):
        return np.array([self.gram.dot(x, q) for q in self.vectors])

    def matrix(self):
        n = self.gram.dim
        return np.column_stack(self.vectors) if self.vectors else np.zeros((n, 0))


def hodge_weighted_stack(cx: HilbertComplex, l):
    """[W_l ; W_{l-1}^T] in orthonormal coordinates of H_l; its null space is K_l."""
    W1 = weighted_matrix(cx.op(l), cx.gram(l), cx.gram(l + 1))
    W0 = weighted_matrix(cx.op(l - 1), cx.gram(l - 1), cx.gram(l))
    return np.vstack([W1, W0.T])


def _dense_kernel(cx: HilbertComplex, l):
    n = cx.dim(l)
    S = hodge_weighted_stack(cx, l)
    if S.shape[0] == 0:
        return np.eye(n), 0.0
    _, s, Vt = np.linalg.svd(S)
    smax = float(s[0]) if s.size else 0.0
    rank = int(np.sum(s > KERNEL_RTOL * smax)) if smax > 0 else 0
    V0 = Vt[rank:].T
    return V0, smax


def cohomology_basis(cx: HilbertComplex, l, tol=1e-10, method="auto", cap=DENSE_CAP, seed=0) -> CohomologyBasis:
    """M-orthonormal basis of K_l = N(A_l) cap N(A_{l-1}^*).

    The dense path takes the null space of the stacked weighted operator and
    then canonicalises it by projecting unit vectors in index order followed by
    modified Gram-Schmidt, so the result is independent of SVD sign choices.
    Above the cap, seeded probe vectors are stripped of both range parts and
    orthonormalised until three consecutive probes add nothing new.
    """
    def compute():
        n = cx.dim(l)
        M = cx.gram(l)
        total = n + cx.dim(l + 1) + cx.dim(l - 1)
        use_dense = method == "dense" or (method == "auto" and total <= cap)
        if method == "dense" and total > cap:
            raise OracleCapError("dense cohomology capped at total dimension %d (got %d)" % (cap, total))
        if n == 0:
            return CohomologyBasis(l, [], M, "dense")
        if use_dense:
            V0, _ = _dense_kernel(cx, l)
            kdim = V0.shape[1]
            if kdim == 0:
                return CohomologyBasis(l, [], M, "dense")
            Linv_T = lambda v: scipy.linalg.solve_triangular(M.half().T, v, lower=False)
            Q = Linv_T(V0)  # M-orthonormal columns spanning K_l
            QtM = _gram_cols(M, Q).T
            cands = (Q @ QtM[:, i] for i in range(n))
            vecs = _mgs(cands, M, 1e-8, max_dim=kdim)
            return CohomologyBasis(l, vecs, M, "dense")
        rng = np.random.default_rng(seed)
        vecs = []
        misses = 0
        while misses < 3 and len(vecs) < n:
            x = rng.standard_normal(n)
            k = helmholtz_decompose(cx, l, x).kernel
            for q in vecs:
                k -= M.dot(k, q) * q
            nk = M.norm(k)
            if nk > 1e-6 * M.norm(x):
                k = helmholtz_decompose(cx, l, k).kernel  # clean residue
                for q in vecs:
                    k -= M.dot(k, q) * q
                vecs.append(k / M.norm(k))
                misses = 0
            else:
                misses += 1
        return CohomologyBasis(l, vecs, M, "probe")

    return cx.cached(("cohomology", l, tol, method, cap, seed), compute)


def hodge_nullity_dense(cx: HilbertComplex, l):
    """Independent oracle: nullity of A_l^* A_l + A_{l-1} A_{l-1}^* (dense eigen)."""
    n = cx.dim(l)
    if n == 0:
        return 0
    S = hodge_weighted_stack(cx, l)
    H = S.T @ S
    ev = np.linalg.eigvalsh(H)
    top = max(float(ev[-1]), 0.0)
    # eigenvalues are squared singular values, so round-off sits near eps*top;
    # nonzero ones are far above KERNEL_RTOL*top on well-posed instances
    return int(np.sum(ev <= KERNEL_RTOL * top)) if top > 0 else n


# ----------------------------------------------------------------------------
# constants


@dataclass
class ConstantsReport:
    level: int
    c_l: float
    method: str
    tolerance: float
    deflated_dim: int
    adjoint: bool = False
    sigma_min: float = math.nan
    sigma_max: float = math.nan
    note: Optional[str] = None

    def as_dict(self):
        return {
            "level": self.level,
            "c": self.c_l,
            "method": self.method,
            "tolerance": self.tolerance,
            "deflated_dim": self.deflated_dim,
            "adjoint": self.adjoint,
            "sigma_min": self.sigma_min,
            "sigma_max": self.sigma_max,
            "note": self.note,
        }


def poincare_constant(cx: HilbertComplex, l, tol=1e-10, method="lanczos", adjoint=False, cap=DENSE_CAP) -> ConstantsReport:
    """c_l = 1 / smallest nonzero weighted singular value of A_l.

    With ``adjoint=True`` the same number is computed from A_l A_l^* on
    H_{l+1} (c_l^*).  Lanczos starts inside the range of the normal operator,
    so the kernel is deflated implicitly; a stalled Lanczos run falls back to
    the dense SVD when the instance fits under the cap.
    """
    def compute():
        A = cx.op(l)
        m, n = A.shape
        if A.nnz == 0 or m == 0 or n == 0:
            return ConstantsReport(l, math.inf, method, tol, n if not adjoint else m, adjoint,
                                   0.0, 0.0, "no nonzero singular value")
        meth = method
        if meth == "lanczos":
            try:
                return _lanczos_constant(cx, l, tol, adjoint)
            except ConvergenceError:
                if m + n > cap:
                    raise
                meth = "dense"
        orc = dense_oracle(A, cx.gram(l), cx.gram(l + 1), cap=cap)
        if orc.rank == 0:
            return ConstantsReport(l, math.inf, "dense", tol, n, adjoint, 0.0, 0.0, "no nonzero singular value")
        smin = orc.sigma_min_nonzero
        smax = float(orc.singular_values[0])
        _rank_check(smin, smax, l)
        return ConstantsReport(l, 1.0 / smin, "dense", tol, (m if adjoint else n) - orc.rank, adjoint, smin, smax)

    return cx.cached(("const", l, tol, method, adjoint, cap), compute)


def _rank_check(smin, smax, l):
    if smin <= RANK_STABILITY * KERNEL_RTOL * smax:
        raise IllPosedError("level %d: smallest nonzero singular value %.3g is not separated from the kernel" % (l, smin))


def _lanczos_constant(cx, l, tol, adjoint):
    if adjoint:
        M = cx.gram(l + 1)
        normal = lambda y: cx.apply(l, cx.apply_adj(l, y))
        start = cx.apply(l, _start_vector(cx.dim(l)))
    else:
        M = cx.gram(l)
        normal = lambda x: cx.apply_adj(l, cx.apply(l, x))
        start = cx.apply_adj(l, _start_vector(cx.dim(l + 1)))
    lo = lanczos_extremal(normal, M, "smallest-nonzero", tol=tol, start=start, full_output=True)
    hi = lanczos_extremal(normal, M, "largest", tol=tol, start=start, full_output=True)
    smin = math.sqrt(lo.value)
    smax = math.sqrt(hi.value)
    _rank_check(smin, smax, l)
    return ConstantsReport(l, 1.0 / smin, "lanczos", tol, 0, adjoint, smin, smax)


def dense_constant(cx: HilbertComplex, l, cap=DENSE_CAP):
    """Oracle c_l straight from the weighted SVD."""
    orc = dense_oracle(cx.op(l), cx.gram(l), cx.gram(l + 1), cap=cap)
    return math.inf if orc.rank == 0 else 1.0 / orc.sigma_min_nonzero
