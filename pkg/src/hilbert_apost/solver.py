"""First- and second-order systems on a Hilbert complex.

First order at level l:   A_l x = f,  A_{l-1}^* x = g,  pi_K x = k.
Second order at level l:  A_l^* A_l x = f,  A_{l-1}^* x = g,  pi_K x = k.

The variational backend solves the two normal equations by CG; the saddle
backend solves the constrained block systems with MINRES and is kept as an
independent cross-check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .complex_core import HilbertComplex, cohomology_basis, project_range
from .linalg import IterStats, cg_solve

COMPAT_TOL = 1e-8
SOLVE_TOL = 1e-12


class IncompatibleDataError(ValueError):
    def __init__(self, report):
        self.report = report
        super().__init__("data incompatible: " + ", ".join(
            "%s distance %.3g (norm %.3g)" % (n, report.distances[n], report.norms[n]) for n in report.failed()))


class SolverFailure(RuntimeError):
    pass


@dataclass
class FirstOrderProblem:
    complex: HilbertComplex
    level: int
    f: np.ndarray
    g: np.ndarray
    k: np.ndarray

    def __post_init__(self):
        cx, l = self.complex, self.level
        self.f = _field(self.f, cx.dim(l + 1), "f")
        self.g = _field(self.g, cx.dim(l - 1), "g")
        self.k = _field(self.k, cx.dim(l), "k")


@dataclass
class SecondOrderProblem(FirstOrderProblem):
    """Same fields; here f lives in H_l (it must lie in R(A_l^*))."""

    def __post_init__(self):
        cx, l = self.complex, self.level
        self.f = _field(self.f, cx.dim(l), "f")
        self.g = _field(self.g, cx.dim(l - 1), "g")
        self.k = _field(self.k, cx.dim(l), "k")


def _field(v, n, name):
    if v is None:
        return np.zeros(n)
    v = np.asarray(v, dtype=np.float64).ravel()
    if v.shape != (n,):
        raise ValueError("%s has length %d, expected %d" % (name, v.size, n))
    return v


@dataclass
class CompatibilityReport:
    distances: Dict[str, float]
    norms: Dict[str, float]
    projected: Dict[str, np.ndarray] = field(repr=False)
    tol: float = COMPAT_TOL

    def ok(self, name):
        return self.distances[name] <= self.tol * self.norms[name]

    def failed(self):
        return [n for n in ("f", "g", "k") if not self.ok(n)]

    @property
    def passed(self):
        return not self.failed()

    def as_dict(self):
        return {"distances": dict(self.distances), "norms": dict(self.norms), "tol": self.tol, "passed": self.passed}


def check_compatibility(problem: FirstOrderProblem, tol=COMPAT_TOL, second_order=None) -> CompatibilityReport:
    """Distances of f, g, k to R(A_l) (or R(A_l^*) for second order), R(A_{l-1}^*) and K_l."""
    cx, l = problem.complex, problem.level
    if second_order is None:
        second_order = isinstance(problem, SecondOrderProblem)
    if second_order:
        pf = project_range(cx, "adj", l, problem.f)
        fn = cx.norm(l, problem.f)
        fd = cx.norm(l, problem.f - pf)
    else:
        pf = project_range(cx, "prev", l + 1, problem.f)
        fn = cx.norm(l + 1, problem.f)
        fd = cx.norm(l + 1, problem.f - pf)
    pg = project_range(cx, "adj", l - 1, problem.g)
    pk = cohomology_basis(cx, l).project(problem.k)
    return CompatibilityReport(
        distances={"f": fd, "g": cx.norm(l - 1, problem.g - pg), "k": cx.norm(l, problem.k - pk)},
        norms={"f": fn, "g": cx.norm(l - 1, problem.g), "k": cx.norm(l, problem.k)},
        projected={"f": pf, "g": pg, "k": pk},
        tol=tol,
    )


@dataclass
class SolveReport:
    x: np.ndarray
    x_f: np.ndarray
    x_g: np.ndarray
    k: np.ndarray
    y_f: np.ndarray
    z_g: np.ndarray
    residuals: Dict[str, float]
    stats: Dict[str, Optional[IterStats]]
    norm_identity_gap: float
    compatibility: Optional[CompatibilityReport] = None
    backend: str = "variational"
    y: Optional[np.ndarray] = None
    multiplier_norms: Dict[str, float] = field(default_factory=dict)

    def summary(self, cx, level):
        out = {
            "backend": self.backend,
            "norms": {
                "x": cx.norm(level, self.x),
                "x_f": cx.norm(level, self.x_f),
                "x_g": cx.norm(level, self.x_g),
                "k": cx.norm(level, self.k),
            },
            "residuals": dict(self.residuals),
            "norm_identity_gap": self.norm_identity_gap,
            "stats": {n: (s.as_dict() if s is not None else None) for n, s in sorted(self.stats.items())},
        }
        if self.compatibility is not None:
            out["compatibility"] = self.compatibility.as_dict()
        if self.multiplier_norms:
            out["multiplier_norms"] = dict(self.multiplier_norms)
        return out


def _checked(stats, what, tol):
    if stats is not None and not stats.converged and stats.final_residual > max(100 * tol, 1e-9):
        raise SolverFailure("%s did not converge (%s, residual %.3g)" % (what, stats.breakdown_reason, stats.final_residual))


def f_part(cx: HilbertComplex, l, f, tol=SOLVE_TOL):
    """x_f = A_l^* y_f with A_l A_l^* y_f = f (y_f minimal)."""
    if cx.dim(l + 1) == 0 or cx.op(l).nnz == 0:
        return np.zeros(cx.dim(l)), np.zeros(cx.dim(l + 1)), None
    normal = lambda y: cx.apply(l, cx.apply_adj(l, y))
    y, st = cg_solve(normal, cx.gram(l + 1), f, tol=tol)
    _checked(st, "f-part", tol)
    return cx.apply_adj(l, y), y, st


def g_part(cx: HilbertComplex, l, g, tol=SOLVE_TOL):
    """x_g = A_{l-1} z_g with A_{l-1}^* A_{l-1} z_g = g (z_g minimal)."""
    if cx.dim(l - 1) == 0 or cx.op(l - 1).nnz == 0:
        return np.zeros(cx.dim(l)), np.zeros(cx.dim(l - 1)), None
    normal = lambda z: cx.apply_adj(l - 1, cx.apply(l - 1, z))
    z, st = cg_solve(normal, cx.gram(l - 1), g, tol=tol)
    _checked(st, "g-part", tol)
    return cx.apply(l - 1, z), z, st


def _finish(cx, l, x_f, x_g, k, f, g):
    x = x_f + x_g + k
    basis = cohomology_basis(cx, l)
    nx2 = cx.dot(l, x, x)
    parts = cx.dot(l, x_f, x_f) + cx.dot(l, x_g, x_g) + cx.dot(l, k, k)
    gap = abs(nx2 - parts) / nx2 if nx2 > 0 else abs(parts)
    res = {
        "A x - f": cx.norm(l + 1, cx.apply(l, x) - f),
        "A_prev^* x - g": cx.norm(l - 1, cx.apply_adj(l - 1, x) - g),
        "pi_K x - k": cx.norm(l, basis.project(x) - k),
    }
    return x, res, gap


def solve_first_order(problem: FirstOrderProblem, backend="variational", tol=SOLVE_TOL, compat_tol=COMPAT_TOL) -> SolveReport:
    cx, l = problem.complex, problem.level
    comp = check_compatibility(problem, compat_tol, second_order=False)
    if not comp.passed:
        raise IncompatibleDataError(comp)
    f, g, k = comp.projected["f"], comp.projected["g"], comp.projected["k"]
    mult = {}
    if backend == "variational":
        x_f, y_f, sf = f_part(cx, l, f, tol)
        x_g, z_g, sg = g_part(cx, l, g, tol)
    elif backend == "saddle":
        rf = solve_saddle(cx, l, f=f, part="f", tol=tol)
        rg = solve_saddle(cx, l, g=g, part="g", tol=tol)
        x_f, y_f, sf = rf.x_part, rf.potential, rf.stats
        x_g, z_g, sg = rg.x_part, rg.potential, rg.stats
        nf, ng = cx.norm(l + 1, f), cx.norm(l - 1, g)
        mult = {"f": rf.multiplier_residual / nf if nf else rf.multiplier_residual,
                "g": rg.multiplier_residual / ng if ng else rg.multiplier_residual}
    else:
        raise ValueError("backend must be 'variational' or 'saddle'")
    x, res, gap = _finish(cx, l, x_f, x_g, k, f, g)
    return SolveReport(x, x_f, x_g, k, y_f, z_g, res, {"f": sf, "g": sg}, gap, comp, backend, multiplier_norms=mult)


# ----------------------------------------------------------------------------
# saddle-point forms


@dataclass
class SaddleResult:
    potential: np.ndarray
    multiplier: np.ndarray
    kernel_multiplier: np.ndarray
    x_part: np.ndarray
    multiplier_residual: float
    stats: IterStats


def _diag_or_dense(M):
    return sp.diags(M.diag) if M.is_diagonal else sp.csr_matrix(M.toarray())


def _minv(M):
    return sp.diags(1.0 / M.diag) if M.is_diagonal else sp.csr_matrix(np.linalg.inv(M.toarray()))


def _f_blocks(cx, l, f, augmented):
    """Blocks for y in H_{l+1}: K11 = M A M^-1 A^T M, constraint A_{l+1} y = 0, y orthogonal to K_{l+1}."""
    A = cx.op(l).csr
    Mc = _diag_or_dense(cx.gram(l + 1))
    K11 = Mc @ A @ _minv(cx.gram(l)) @ A.T @ Mc
    B = cx.op(l + 1).csr.T @ _diag_or_dense(cx.gram(l + 2))
    kb = cohomology_basis(cx, l + 1)
    if augmented and kb.dim:
        raise ValueError("augmented saddle form needs trivial cohomology at level %d (dim %d)" % (l + 1, kb.dim))
    C = sp.csr_matrix(Mc @ kb.matrix()) if kb.dim else None
    rhs = Mc @ f
    return K11, B, C, rhs


def _g_blocks(cx, l, g, augmented):
    """Blocks for z in H_{l-1}: K11 = A^T M A, constraint z orthogonal to R(A_{l-2}) and K_{l-1}."""
    A = cx.op(l - 1).csr
    K11 = A.T @ _diag_or_dense(cx.gram(l)) @ A
    Md = _diag_or_dense(cx.gram(l - 1))
    B = Md @ cx.op(l - 2).csr
    kb = cohomology_basis(cx, l - 1)
    if augmented and kb.dim:
        raise ValueError("augmented saddle form needs trivial cohomology at level %d (dim %d)" % (l - 1, kb.dim))
    C = sp.csr_matrix(Md @ kb.matrix()) if kb.dim else None
    rhs = Md @ g
    return K11, B, C, rhs


def _assemble(K11, B, C):
    cols = [B] if C is None else [B, C]
    Bfull = sp.hstack(cols, format="csr") if cols else None
    m = Bfull.shape[1]
    return sp.bmat([[K11, Bfull], [Bfull.T, None]], format="csr"), m


def _minres(S, rhs, tol):
    """MINRES on a symmetric (possibly singular, consistent) system with Jacobi-type scaling."""
    d = np.abs(S.diagonal())
    rowmax = abs(S).max(axis=1).toarray().ravel()
    scale = np.where(d > 0, d, np.where(rowmax > 0, rowmax, 1.0))
    Dm = sp.diags(1.0 / np.sqrt(scale))
    Ss = Dm @ S @ Dm
    bs = Dm @ rhs
    nb = np.linalg.norm(bs)
    if nb == 0:
        return np.zeros_like(rhs), IterStats(0, 0.0, True)
    it = [0]

    def cb(_):
        it[0] += 1

    u, info = spla.minres(Ss, bs, rtol=tol, maxiter=20 * S.shape[0], callback=cb)
    res = float(np.linalg.norm(Ss @ u - bs) / nb)
    return Dm @ u, IterStats(it[0], res, info == 0 or res <= 10 * tol, None if info == 0 else "minres info %d" % info)


def solve_saddle(cx: HilbertComplex, l, f=None, g=None, part="f", augmented=False, tol=SOLVE_TOL):
    """Saddle-point form of the f- or g-part potential problem.

    The multiplier enforces the potential's membership in the correct range;
    for compatible data it vanishes in the sense A_{l+1}^* v = 0 (f-part) or
    A_{l-2} w = 0 (g-part), which is reported as ``multiplier_residual``.
    ``part='both'`` solves the two blocks as one block-diagonal system.
    """
    if part == "both":
        Kf, Bf, Cf, rf = _f_blocks(cx, l, _field(f, cx.dim(l + 1), "f"), augmented)
        Kg, Bg, Cg, rg = _g_blocks(cx, l, _field(g, cx.dim(l - 1), "g"), augmented)
        Sf, mf = _assemble(Kf, Bf, Cf)
        Sg, mg = _assemble(Kg, Bg, Cg)
        S = sp.block_diag([Sf, Sg], format="csr")
        u, st = _minres(S, np.concatenate([rf, np.zeros(mf), rg, np.zeros(mg)]), tol)
        nf = Sf.shape[0]
        out_f = _unpack(cx, l, "f", u[:nf], Kf.shape[0], Bf.shape[1], st)
        out_g = _unpack(cx, l, "g", u[nf:], Kg.shape[0], Bg.shape[1], st)
        return out_f, out_g
    if part == "f":
        K11, B, C, rhs = _f_blocks(cx, l, _field(f, cx.dim(l + 1), "f"), augmented)
    elif part == "g":
        K11, B, C, rhs = _g_blocks(cx, l, _field(g, cx.dim(l - 1), "g"), augmented)
    else:
        raise ValueError("part must be 'f', 'g' or 'both'")
    n = K11.shape[0]
    if n == 0 or not np.any(rhs):
        return _unpack(cx, l, part, np.zeros(n + B.shape[1] + (C.shape[1] if C is not None else 0)), n, B.shape[1],
                       IterStats(0, 0.0, True))
    S, m = _assemble(K11, B, C)
    u, st = _minres(S, np.concatenate([rhs, np.zeros(m)]), tol)
    return _unpack(cx, l, part, u, n, B.shape[1], st)


def _unpack(cx, l, part, u, n, nb, st):
    pot = u[:n]
    mult = u[n: n + nb]
    kmult = u[n + nb:]
    if part == "f":
        x_part = cx.apply_adj(l, pot)
        mres = cx.norm(l + 1, cx.apply_adj(l + 1, mult))
    else:
        x_part = cx.apply(l - 1, pot)
        mres = cx.norm(l - 1, cx.apply(l - 2, mult))
    return SaddleResult(pot, mult, kmult, x_part, mres, st)


# ----------------------------------------------------------------------------
# second order


def solve_second_order(problem: SecondOrderProblem, tol=SOLVE_TOL, compat_tol=COMPAT_TOL) -> SolveReport:
    """Cascade: y in R(A_l) with A_l^* y = f, then x = x_f(y) + x_g(g) + k."""
    cx, l = problem.complex, problem.level
    comp = check_compatibility(problem, compat_tol, second_order=True)
    if not comp.passed:
        raise IncompatibleDataError(comp)
    f, g, k = comp.projected["f"], comp.projected["g"], comp.projected["k"]
    # y = A u with A^* A u = f  (that is, the g-part solve one level up)
    y, u, su = g_part(cx, l + 1, f, tol)
    x_f, y_f, sf = f_part(cx, l, y, tol)
    x_g, z_g, sg = g_part(cx, l, g, tol)
    x, res, gap = _finish(cx, l, x_f, x_g, k, y, g)
    res["A^* y - f"] = cx.norm(l, cx.apply_adj(l, y) - f)
    res["A^*A x - f"] = cx.norm(l, cx.apply_adj(l, cx.apply(l, x)) - f)
    rep = SolveReport(x, x_f, x_g, k, y_f, z_g, res, {"y": su, "f": sf, "g": sg}, gap, comp, "variational", y=y)
    return rep


def energy_identity_gap(cx, l, rep: SolveReport, f, g):
    """| |x|^2_D - (|x_f|^2 + |f|^2 + |x_g|^2 + |g|^2 + |k|^2) | relative to |x|^2_D."""
    x = rep.x
    lhs = cx.dot(l, x, x) + cx.dot(l + 1, cx.apply(l, x), cx.apply(l, x)) + \
        cx.dot(l - 1, cx.apply_adj(l - 1, x), cx.apply_adj(l - 1, x))
    rhs = (cx.dot(l, rep.x_f, rep.x_f) + cx.dot(l + 1, f, f) + cx.dot(l, rep.x_g, rep.x_g)
           + cx.dot(l - 1, g, g) + cx.dot(l, rep.k, rep.k))
    return abs(lhs - rhs) / lhs if lhs > 0 else abs(rhs)


def inf_sup_dense(cx: HilbertComplex, l):
    """Dense inf-sup constant of the f-part multiplier form in graph norms.

    inf over v in R(A_{l+1}) of sup over phi of <A_{l+1}^* v, phi> / (|phi|_D |v|_D)
    with |phi|_D^2 = |phi|^2 + |A_l^* phi|^2 and |v|_D^2 = |v|^2 + |A_{l+1}^* v|^2.
    Returned together with the reference value (c_{l+1}^2 + 1)^{-1/2}.
    """
    from .complex_core import dense_constant
    from .linalg import weighted_matrix

    n = cx.dim(l + 1)
    W_adj = weighted_matrix(cx.op(l), cx.gram(l), cx.gram(l + 1)).T
    W_next = weighted_matrix(cx.op(l + 1), cx.gram(l + 1), cx.gram(l + 2))
    if W_next.size == 0 or not np.any(W_next):
        return math.inf, math.inf
    Lphi = np.linalg.cholesky(np.eye(n) + W_adj.T @ W_adj)
    U, s, _ = np.linalg.svd(W_next)
    r = int(np.sum(s > 1e-10 * s[0]))
    R = U[:, :r]
    Bv = W_next.T @ R  # A_{l+1}^* on the multiplier basis
    Lv = np.linalg.cholesky(np.eye(r) + Bv.T @ Bv)
    T = np.linalg.solve(Lphi, Bv) @ np.linalg.inv(Lv.T)
    sv = np.linalg.svd(T, compute_uv=False)
    return float(sv[-1]), 1.0 / math.sqrt(dense_constant(cx, l + 1) ** 2 + 1.0)
