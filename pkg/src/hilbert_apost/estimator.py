"""Guaranteed two-sided functional error bounds.

For an arbitrary approximation xt of the solution x at level l the error
e = x - xt splits M-orthogonally into

    e_prev in R(A_{l-1}),  e_K in K_l,  e_adj in R(A_l^*).

Each part has a computable upper bound (a minimum over trial fields) and a
computable lower bound (a maximum over trial fields), both sharp.  Nothing
here needs the exact solution: the bounds only use the data f, g, k, the
approximation and the constants c_{l-1}, c_l.  Exact solutions are only used
to report efficiency indices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .complex_core import (
    HilbertComplex,
    adj_potential,
    cohomology_basis,
    helmholtz_decompose,
    poincare_constant,
    prev_potential,
)
from .linalg import ConvergenceError, GramOperator, cg_solve
from .solver import SolverFailure, f_part, g_part

ALG_TOL = 1e-6
ALG_BUDGET = 20
CG_TOL = 1e-12
# relative safety margins on computed constants: Lanczos eigenvalues carry
# ~1e-12 relative error at the default tolerance, dense SVD ~1e-15
C_INFLATE = {"lanczos": 1e-9, "dense": 1e-12, "user": 0.0}
ROUND = 1e-13
KERNEL_SKIP_RTOL = 1e-12


# ----------------------------------------------------------------------------
# error decomposition


@dataclass
class ErrorDecomposition:
    e: np.ndarray
    e_prev: np.ndarray
    e_kernel: np.ndarray
    e_adj: np.ndarray
    pythagoras_gap: float

    def norms(self, cx, l):
        return {
            "e": cx.norm(l, self.e),
            "prev": cx.norm(l, self.e_prev),
            "kernel": cx.norm(l, self.e_kernel),
            "adj": cx.norm(l, self.e_adj),
        }


def decompose_error(cx: HilbertComplex, l, x_approx, x, tol=CG_TOL) -> ErrorDecomposition:
    e = np.asarray(x, dtype=np.float64) - np.asarray(x_approx, dtype=np.float64)
    parts = helmholtz_decompose(cx, l, e, tol, basis=cohomology_basis(cx, l))
    ne2 = cx.dot(l, e, e)
    s = cx.dot(l, parts.prev, parts.prev) + cx.dot(l, parts.kernel, parts.kernel) + cx.dot(l, parts.adj, parts.adj)
    gap = abs(ne2 - s) / ne2 if ne2 > 0 else s
    return ErrorDecomposition(e, parts.prev, parts.kernel, parts.adj, gap)


# ----------------------------------------------------------------------------
# bound forms (all valid for arbitrary trial fields)


def upper_bound_g_part(cx: HilbertComplex, l, x_approx, g, zeta, c_prev):
    """c_{l-1} |A_{l-1}^* zeta - g| + |zeta - xt|  >=  |e_prev|."""
    r = cx.norm(l - 1, cx.apply_adj(l - 1, zeta) - g)
    return (c_prev * r if r else 0.0) + cx.norm(l, zeta - x_approx)


def upper_bound_f_part(cx: HilbertComplex, l, x_approx, f, xi, c):
    """c_l |A_l xi - f| + |xi - xt|  >=  |e_adj|."""
    r = cx.norm(l + 1, cx.apply(l, xi) - f)
    return (c * r if r else 0.0) + cx.norm(l, xi - x_approx)


def upper_bound_kernel_part(cx: HilbertComplex, l, x_approx, k, phi, phi_adj):
    """|k - xt + A_{l-1} phi + A_l^* phi'|  >=  |e_K|."""
    return cx.norm(l, k - x_approx + cx.apply(l - 1, phi) + cx.apply_adj(l, phi_adj))


def lower_bound_g_part(cx: HilbertComplex, l, x_approx, g, phi):
    """2<g, phi> - <2 xt + A_{l-1} phi, A_{l-1} phi>  <=  |e_prev|^2."""
    a = cx.apply(l - 1, phi)
    return 2.0 * cx.dot(l - 1, g, phi) - cx.dot(l, 2.0 * x_approx + a, a)


def lower_bound_f_part(cx: HilbertComplex, l, x_approx, f, phi_adj):
    """2<f, phi'> - <2 xt + A_l^* phi', A_l^* phi'>  <=  |e_adj|^2."""
    a = cx.apply_adj(l, phi_adj)
    return 2.0 * cx.dot(l + 1, f, phi_adj) - cx.dot(l, 2.0 * x_approx + a, a)


def lower_bound_kernel_part(cx: HilbertComplex, l, x_approx, k, theta, project=True):
    """<2(k - xt) - theta, theta>  <=  |e_K|^2 for theta in K_l.

    theta is projected onto K_l first (the inequality needs theta there).
    """
    if project:
        theta = cohomology_basis(cx, l).project(theta)
    return cx.dot(l, 2.0 * (k - x_approx) - theta, theta)


def _scale_terms(*vals):
    return ROUND * sum(abs(v) for v in vals)


def _lower_g_safe(cx, l, x_approx, g, phi):
    a = cx.apply(l - 1, phi)
    t1 = 2.0 * cx.dot(l - 1, g, phi)
    t2 = cx.dot(l, 2.0 * x_approx + a, a)
    return t1 - t2 - _scale_terms(t1, t2)


def _lower_f_safe(cx, l, x_approx, f, phi_adj):
    a = cx.apply_adj(l, phi_adj)
    t1 = 2.0 * cx.dot(l + 1, f, phi_adj)
    t2 = cx.dot(l, 2.0 * x_approx + a, a)
    return t1 - t2 - _scale_terms(t1, t2)


# ----------------------------------------------------------------------------
# attaining arguments (need the exact error; used for sharpness checks)


def attaining_arguments(cx: HilbertComplex, l, x_approx, x, tol=CG_TOL):
    """Trial fields at which every first-order bound is an equality."""
    d = decompose_error(cx, l, x_approx, x, tol)
    # A_{l-1} phi = e_prev and A_l^* phi' = e_adj
    phi_low, _ = prev_potential(cx, l, d.e, tol)
    phi_adj_low, _ = adj_potential(cx, l, d.e, tol)
    # A_{l-1} phi = pi_prev xt and A_l^* phi' = pi_adj xt
    phi_up, _ = prev_potential(cx, l, x_approx, tol)
    phi_adj_up, _ = adj_potential(cx, l, x_approx, tol)
    return {
        "zeta": d.e_prev + x_approx,
        "xi": d.e_adj + x_approx,
        "kernel_phi": phi_up,
        "kernel_phi_adj": phi_adj_up,
        "phi": phi_low,
        "phi_adj": phi_adj_low,
        "theta": d.e_kernel,
        "decomposition": d,
    }


# ----------------------------------------------------------------------------
# alternating minimisation


@dataclass
class MinimizationResult:
    t: float
    arg: np.ndarray
    bound: float
    functional: float
    log: List[dict]
    converged: bool
    iterations: int
    budget_exhausted: bool
    c: float

    def trace_rows(self):
        return [(r["n"], r["t"], r["F"], r["upper"]) for r in self.log]


def _alternating(apply_T, apply_Tadj, norm_dom, norm_cod, M: GramOperator, data, x_approx, c,
                 tol=ALG_TOL, maxit=ALG_BUDGET, start=None, cg_tol=CG_TOL):
    """Minimise F(xi, t) = (1 + 1/t) c^2 |T xi - data|^2 + (1 + t) |xi - xt|^2.

    Alternates the closed-form optimal t for fixed xi with the coercive
    solve (c^2 T^* T + t) xi = c^2 T^* data + t xt for fixed t.
    """
    def upper(xi):
        r = norm_cod(apply_T(xi) - data)
        return (c * r if r else 0.0) + norm_dom(xi - x_approx), r

    def F(xi, t):
        u, r = upper(xi)
        d = norm_dom(xi - x_approx)
        return (1.0 + 1.0 / t) * c * c * r * r + (1.0 + t) * d * d

    res0 = norm_cod(apply_T(x_approx) - data)
    if res0 == 0.0:
        # xt already satisfies the constraint: the bound is zero at xi = xt
        return MinimizationResult(0.0, x_approx.copy(), 0.0, 0.0, [], True, 0, False, c)
    if start is None:
        start = np.zeros_like(x_approx)
        if norm_dom(start - x_approx) == 0.0:
            start = apply_Tadj(data)
    xi = np.array(start, dtype=np.float64)
    rhs_data = c * c * apply_Tadj(data)
    log = []
    F_prev = math.inf
    converged = False
    n = 0
    t = math.nan
    for n in range(1, maxit + 1):
        u, r = upper(xi)
        d = norm_dom(xi - x_approx)
        if d == 0.0:
            break
        t = c * r / d
        if t == 0.0:
            # xi already meets the constraint; no smaller bound from here
            converged = True
            break
        if n == 1:
            log.append({"n": 0, "t": t, "F": F(xi, t), "upper": u, "cg_iterations": 0})
        op = lambda v, t=t: c * c * apply_Tadj(apply_T(v)) + t * v
        xi, st = cg_solve(op, M, rhs_data + t * x_approx, tol=cg_tol, x0=xi)
        if not st.converged and st.final_residual > 1e-8:
            raise SolverFailure("inner coercive solve failed (%s)" % st.breakdown_reason)
        Fn = F(xi, t)
        u, _ = upper(xi)
        log.append({"n": n, "t": t, "F": Fn, "upper": u, "cg_iterations": st.iterations})
        if F_prev < math.inf and (F_prev - Fn) <= tol * Fn:
            converged = True
            break
        F_prev = Fn
    u, _ = upper(xi)
    Fv = log[-1]["F"] if log else u * u
    return MinimizationResult(t, xi, u, Fv, log, converged, n, not converged, c)


def minimize_upper_f(cx: HilbertComplex, l, x_approx, f, c=None, tol=ALG_TOL, maxit=ALG_BUDGET, start=None):
    """Upper bound for |e_adj| by alternating minimisation over (t, xi)."""
    if c is None:
        c = constant_for(cx, l)[0]
    return _alternating(
        lambda v: cx.apply(l, v), lambda w: cx.apply_adj(l, w),
        lambda v: cx.norm(l, v), lambda w: cx.norm(l + 1, w),
        cx.gram(l), np.asarray(f, dtype=np.float64), np.asarray(x_approx, dtype=np.float64), c, tol, maxit, start)


def minimize_upper_g(cx: HilbertComplex, l, x_approx, g, c=None, tol=ALG_TOL, maxit=ALG_BUDGET, start=None):
    """Upper bound for |e_prev| by alternating minimisation over (t, zeta)."""
    if c is None:
        c = constant_for(cx, l - 1)[0]
    return _alternating(
        lambda v: cx.apply_adj(l - 1, v), lambda w: cx.apply(l - 1, w),
        lambda v: cx.norm(l, v), lambda w: cx.norm(l - 1, w),
        cx.gram(l), np.asarray(g, dtype=np.float64), np.asarray(x_approx, dtype=np.float64), c, tol, maxit, start)


def functional_value(cx, l, x_approx, f, xi, t, c):
    """F(xt; xi, t) for the f-part (used to probe the optimality of t)."""
    r = cx.norm(l + 1, cx.apply(l, xi) - f)
    d = cx.norm(l, xi - x_approx)
    return (1.0 + 1.0 / t) * c * c * r * r + (1.0 + t) * d * d


def constant_for(cx: HilbertComplex, level, override=None, method="lanczos"):
    """(inflated constant, method tag) for use in upper bounds."""
    if override is not None:
        return float(override), "user"
    rep = poincare_constant(cx, level, method=method)
    if math.isinf(rep.c_l):
        return math.inf, rep.method
    return rep.c_l * (1.0 + C_INFLATE[rep.method]), rep.method


# ----------------------------------------------------------------------------
# reports


@dataclass
class ComponentBound:
    name: str
    lower: float = 0.0
    upper: float = 0.0
    lower_sq: float = 0.0
    converged: bool = True
    skipped: bool = False
    valid: bool = True
    note: Optional[str] = None
    log: List[dict] = field(default_factory=list)
    attaining: Dict[str, np.ndarray] = field(default_factory=dict, repr=False)
    exact: Optional[float] = None
    constant: Optional[float] = None

    def as_dict(self):
        out = {
            "lower": self.lower,
            "upper": self.upper,
            "lower_sq": self.lower_sq,
            "converged": self.converged,
            "skipped": self.skipped,
            "valid": self.valid,
            "note": self.note,
            "iterations": len([r for r in self.log if r["n"] > 0]),
            "log": self.log,
            "constant": self.constant,
        }
        if self.exact is not None:
            out["exact"] = self.exact
            out["efficiency_upper"] = self.upper / self.exact if self.exact > 0 else None
            out["efficiency_lower"] = self.lower / self.exact if self.exact > 0 else None
        return out


@dataclass
class BoundReport:
    components: Dict[str, ComponentBound]
    exact_error: Optional[float] = None

    @property
    def valid(self):
        return all(c.valid for c in self.components.values())

    @property
    def budget_exhausted(self):
        return any(not c.converged for c in self.components.values() if c.valid and not c.skipped)

    def _ok(self):
        return [c for c in self.components.values() if c.valid]

    @property
    def lower_total(self):
        return math.sqrt(sum(c.lower ** 2 for c in self._ok()))

    @property
    def upper_total(self):
        return math.sqrt(sum(c.upper ** 2 for c in self._ok()))

    @property
    def efficiency_index(self):
        if self.exact_error is None or self.exact_error == 0:
            return None
        return self.upper_total / self.exact_error

    def as_dict(self):
        out = {
            "components": {n: c.as_dict() for n, c in sorted(self.components.items())},
            "totals": {"lower_total": self.lower_total, "upper_total": self.upper_total, "valid": self.valid,
                       "budget_exhausted": self.budget_exhausted},
        }
        if self.exact_error is not None:
            out["totals"]["exact_error"] = self.exact_error
            out["totals"]["efficiency_index"] = self.efficiency_index
            out["totals"]["lower_efficiency"] = self.lower_total / self.exact_error if self.exact_error else None
        return out


def _guarded(name, fn):
    try:
        return fn()
    except (ConvergenceError, SolverFailure) as exc:
        return ComponentBound(name, valid=False, converged=False, note="failed: %s" % exc)


def _g_component(cx, l, x_approx, g, c, budget, tol, name="prev"):
    if cx.dim(l - 1) == 0 or cx.op(l - 1).nnz == 0:
        return ComponentBound(name, skipped=True, note="R(A_{l-1}) is trivial")
    run = minimize_upper_g(cx, l, x_approx, g, c, tol, budget)
    up = run.bound * (1.0 + ROUND)
    # maximiser of the concave lower quadratic: A^*A phi = g - A^* xt
    normal = lambda z: cx.apply_adj(l - 1, cx.apply(l - 1, z))
    phi, st = cg_solve(normal, cx.gram(l - 1), g - cx.apply_adj(l - 1, x_approx), tol=CG_TOL)
    low_sq = max(_lower_g_safe(cx, l, x_approx, g, phi), 0.0)
    return ComponentBound(name, math.sqrt(low_sq), up, low_sq,
                          run.converged, log=run.log, attaining={"zeta": run.arg, "phi": phi}, constant=c)


def _f_component(cx, l, x_approx, f, c, budget, tol, name="adj"):
    if cx.dim(l + 1) == 0 or cx.op(l).nnz == 0:
        return ComponentBound(name, skipped=True, note="R(A_l^*) is trivial")
    run = minimize_upper_f(cx, l, x_approx, f, c, tol, budget)
    up = run.bound * (1.0 + ROUND)
    normal = lambda y: cx.apply(l, cx.apply_adj(l, y))
    phi, st = cg_solve(normal, cx.gram(l + 1), f - cx.apply(l, x_approx), tol=CG_TOL)
    low_sq = max(_lower_f_safe(cx, l, x_approx, f, phi), 0.0)
    return ComponentBound(name, math.sqrt(low_sq), up, low_sq,
                          run.converged, log=run.log, attaining={"xi": run.arg, "phi_adj": phi}, constant=c)


def _kernel_component(cx, l, x_approx, k, name="kernel"):
    basis = cohomology_basis(cx, l)
    if basis.dim == 0:
        return ComponentBound(name, skipped=True, note="K_l is trivial")
    kx = basis.project(x_approx)
    scale = max(cx.norm(l, x_approx), cx.norm(l, k), 1e-300)
    if cx.norm(l, kx - k) <= KERNEL_SKIP_RTOL * scale:
        return ComponentBound(name, skipped=True, note="approximation is K-orthogonal: no kernel error")
    theta = basis.project(k - x_approx)
    t1 = cx.dot(l, 2.0 * (k - x_approx) - theta, theta)
    low_sq = max(t1 - _scale_terms(t1), 0.0)
    phi, _ = prev_potential(cx, l, x_approx)
    phi_adj, _ = adj_potential(cx, l, x_approx)
    up = upper_bound_kernel_part(cx, l, x_approx, k, phi, phi_adj) * (1.0 + ROUND)
    return ComponentBound(name, math.sqrt(low_sq), up, low_sq, True,
                          attaining={"theta": theta, "phi": phi, "phi_adj": phi_adj})


def two_sided_estimate(cx: HilbertComplex, l, x_approx, f, g, k, budget=ALG_BUDGET, tol=ALG_TOL,
                       constants=None, exact_x=None, method="lanczos") -> BoundReport:
    """Lower and upper bounds for |e_prev|, |e_adj|, |e_K| and their totals.

    ``constants`` may override c_{l-1} ('prev') and c_l ('adj') with any
    upper bounds for them (analytic ones keep the upper bounds valid).
    """
    constants = constants or {}
    x_approx = np.asarray(x_approx, dtype=np.float64)
    c_prev, _ = constant_for(cx, l - 1, constants.get("prev"), method) if cx.op(l - 1).nnz else (math.inf, None)
    c_adj, _ = constant_for(cx, l, constants.get("adj"), method) if cx.op(l).nnz else (math.inf, None)
    comps = {
        "prev": _guarded("prev", lambda: _g_component(cx, l, x_approx, g, c_prev, budget, tol)),
        "adj": _guarded("adj", lambda: _f_component(cx, l, x_approx, f, c_adj, budget, tol)),
        "kernel": _guarded("kernel", lambda: _kernel_component(cx, l, x_approx, k)),
    }
    exact = None
    if exact_x is not None:
        d = decompose_error(cx, l, x_approx, exact_x)
        nrm = d.norms(cx, l)
        for n in comps:
            comps[n].exact = nrm[n]
        exact = nrm["e"]
    return BoundReport(comps, exact)


def conforming_functional(cx: HilbertComplex, l, x_approx, f, g, k, c_adj=None, c_prev=None):
    """|k - pi_K xt|^2 + (1 + c_l^2)|A_l xt - f|^2 + (1 + c_{l-1}^2)|A_{l-1}^* xt - g|^2."""
    if c_adj is None:
        c_adj = constant_for(cx, l)[0] if cx.op(l).nnz else 0.0
    if c_prev is None:
        c_prev = constant_for(cx, l - 1)[0] if cx.op(l - 1).nnz else 0.0
    kx = cohomology_basis(cx, l).project(x_approx)
    rf = cx.norm(l + 1, cx.apply(l, x_approx) - f)
    rg = cx.norm(l - 1, cx.apply_adj(l - 1, x_approx) - g)
    return cx.dot(l, k - kx, k - kx) + (1 + c_adj ** 2) * rf ** 2 + (1 + c_prev ** 2) * rg ** 2


def graph_norm_sq(cx: HilbertComplex, l, e):
    """|e|^2 + |A_l e|^2 + |A_{l-1}^* e|^2."""
    a = cx.apply(l, e)
    b = cx.apply_adj(l - 1, e)
    return cx.dot(l, e, e) + cx.dot(l + 1, a, a) + cx.dot(l - 1, b, b)


# ----------------------------------------------------------------------------
# second order


def upper_bound_second_order(cx: HilbertComplex, l, x_approx, f, xi, c, zeta=None):
    """c^2 |A^* zeta - f| + c |A xi - zeta| + |xi - xt| >= |e_adj| for zeta in R(A_l).

    With the default zeta = A_l xi this is c^2 |A^*A xi - f| + |xi - xt|.
    """
    if zeta is None:
        zeta = cx.apply(l, xi)
    r1 = cx.norm(l, cx.apply_adj(l, zeta) - f)
    r2 = cx.norm(l + 1, cx.apply(l, xi) - zeta)
    return (c * c * r1 if r1 else 0.0) + (c * r2 if r2 else 0.0) + cx.norm(l, xi - x_approx)


def lower_bound_second_order(cx: HilbertComplex, l, x_approx, f, phi):
    """2<f, phi> - <2 xt + A^*A phi, A^*A phi>  <=  |e_adj|^2."""
    a = cx.apply_adj(l, cx.apply(l, phi))
    return 2.0 * cx.dot(l, f, phi) - cx.dot(l, 2.0 * x_approx + a, a)


def _lower_second_safe(cx, l, x_approx, f, phi):
    a = cx.apply_adj(l, cx.apply(l, phi))
    t1 = 2.0 * cx.dot(l, f, phi)
    t2 = cx.dot(l, 2.0 * x_approx + a, a)
    return t1 - t2 - _scale_terms(t1, t2)


def _second_f_component(cx, l, x_approx, f, c, budget, tol):
    if cx.dim(l + 1) == 0 or cx.op(l).nnz == 0:
        return ComponentBound("adj", skipped=True, note="R(A_l^*) is trivial")
    # zeta = A u with A^*A u = f lies in R(A_l) by construction
    zeta, _, _ = g_part(cx, l + 1, f, CG_TOL)
    run = minimize_upper_f(cx, l, x_approx, zeta, c, tol, budget)
    xi = run.arg
    up = upper_bound_second_order(cx, l, x_approx, f, xi, c, zeta=zeta) * (1.0 + ROUND)
    # nested solves: A^*A w = f - A^*A xt, then A^*A phi = w
    normal = lambda v: cx.apply_adj(l, cx.apply(l, v))
    rhs = f - normal(x_approx)
    w, _ = cg_solve(normal, cx.gram(l), rhs, tol=CG_TOL)
    phi, _ = cg_solve(normal, cx.gram(l), w, tol=CG_TOL)
    low_sq = max(_lower_second_safe(cx, l, x_approx, f, phi), 0.0)
    log = [dict(r, composite=True) for r in run.log]
    return ComponentBound("adj", math.sqrt(low_sq), up, low_sq, run.converged, log=log,
                          attaining={"xi": xi, "zeta": zeta, "phi": phi}, constant=c)


def _in_range(cx, l, y_approx):
    """y in R(A_l) up to round-off: A_{l+1} y = 0 and no K_{l+1} part."""
    B = cx.op(l + 1)
    ref = np.abs(B.csr) @ np.abs(y_approx)
    num = cx.norm(l + 2, B.matvec(y_approx))
    if num > KERNEL_SKIP_RTOL * max(cx.norm(l + 2, ref), 1e-300) and num > 0:
        return False
    kb = cohomology_basis(cx, l + 1)
    return cx.norm(l + 1, kb.project(y_approx)) <= KERNEL_SKIP_RTOL * max(cx.norm(l + 1, y_approx), 1e-300)


def _h_adj_component(cx, m, y_approx, c_next):
    """h part in R(A_m^*) at level m = l + 1 (exact field has A_m y = 0)."""
    if cx.dim(m + 1) == 0 or cx.op(m).nnz == 0:
        return ComponentBound("adj", skipped=True, note="R(A_{l+1}^*) is trivial")
    yp, _ = adj_potential(cx, m, y_approx)
    proj = cx.apply_adj(m, yp)
    xi = y_approx - proj
    r = cx.norm(m + 1, cx.apply(m, xi))
    up = ((c_next * r if r else 0.0) + cx.norm(m, proj)) * (1.0 + ROUND)
    low_sq = max(_lower_f_safe(cx, m, y_approx, np.zeros(cx.dim(m + 1)), -yp), 0.0)
    return ComponentBound("adj", math.sqrt(low_sq), up, low_sq, attaining={"xi": xi, "phi_adj": -yp},
                          constant=c_next, note="constant-free form")


@dataclass
class SecondOrderReport:
    e: BoundReport
    h: BoundReport

    def as_dict(self):
        return {"e": self.e.as_dict(), "h": self.h.as_dict()}

    @property
    def valid(self):
        return self.e.valid and self.h.valid

    @property
    def budget_exhausted(self):
        return self.e.budget_exhausted or self.h.budget_exhausted


def second_order_estimate(cx: HilbertComplex, l, x_approx, y_approx, f, g, k, budget=ALG_BUDGET, tol=ALG_TOL,
                          constants=None, exact_x=None, method="lanczos") -> SecondOrderReport:
    """Bounds for e = x - xt at level l and h = A_l x - yt at level l + 1.

    The field y = A_l x satisfies A_l^* y = f, A_{l+1} y = 0 and has no
    K_{l+1} part, so h is estimated with the first-order machinery one
    level up using data (f, 0, 0).
    """
    constants = constants or {}
    x_approx = np.asarray(x_approx, dtype=np.float64)
    y_approx = np.asarray(y_approx, dtype=np.float64)
    c_prev, _ = constant_for(cx, l - 1, constants.get("prev"), method) if cx.op(l - 1).nnz else (math.inf, None)
    c_adj, _ = constant_for(cx, l, constants.get("adj"), method) if cx.op(l).nnz else (math.inf, None)
    c_next, _ = constant_for(cx, l + 1, constants.get("next"), method) if cx.op(l + 1).nnz else (math.inf, None)
    m = l + 1
    e_comps = {
        "prev": _guarded("prev", lambda: _g_component(cx, l, x_approx, g, c_prev, budget, tol)),
        "adj": _guarded("adj", lambda: _second_f_component(cx, l, x_approx, f, c_adj, budget, tol)),
        "kernel": _guarded("kernel", lambda: _kernel_component(cx, l, x_approx, k)),
    }
    zero_k = np.zeros(cx.dim(m))
    h_comps = {"prev": _guarded("prev", lambda: _g_component(cx, m, y_approx, f, c_adj, budget, tol))}
    if _in_range(cx, l, y_approx):
        h_comps["adj"] = ComponentBound("adj", skipped=True, note="approximation lies in R(A_l): exactly zero")
        h_comps["kernel"] = ComponentBound("kernel", skipped=True, note="approximation lies in R(A_l): exactly zero")
    else:
        h_comps["adj"] = _guarded("adj", lambda: _h_adj_component(cx, m, y_approx, c_next))
        h_comps["kernel"] = _guarded("kernel", lambda: _kernel_component(cx, m, y_approx, zero_k))
    ex_e = ex_h = None
    if exact_x is not None:
        d = decompose_error(cx, l, x_approx, exact_x)
        nrm = d.norms(cx, l)
        for n in e_comps:
            e_comps[n].exact = nrm[n]
        ex_e = nrm["e"]
        y = cx.apply(l, exact_x)
        dh = decompose_error(cx, m, y_approx, y)
        nh = dh.norms(cx, m)
        for n in h_comps:
            h_comps[n].exact = nh[n]
        ex_h = nh["e"]
    return SecondOrderReport(BoundReport(e_comps, ex_e), BoundReport(h_comps, ex_h))
