import math

import numpy as np
import pytest

from hilbert_apost.complex_core import cohomology_basis, poincare_constant
from hilbert_apost.instances import build_cycle, manufacture, manufacture_second_order
from hilbert_apost.linalg import dense_oracle
from hilbert_apost.solver import (
    FirstOrderProblem,
    IncompatibleDataError,
    SecondOrderProblem,
    check_compatibility,
    energy_identity_gap,
    f_part,
    g_part,
    inf_sup_dense,
    solve_first_order,
    solve_saddle,
    solve_second_order,
)

import _shared


def problem_for(name, l, recipe="smooth-potential", seed=0):
    cx = _shared.instance(name)
    sc = manufacture(cx, recipe, seed=seed, level=l)
    return sc, FirstOrderProblem(cx, l, sc.f, sc.g, sc.k)


@pytest.mark.parametrize("name,l", _shared.FIRST_ORDER)
def test_first_order_recovers_manufactured_solution(name, l):
    sc, pb = problem_for(name, l)
    rep = solve_first_order(pb)
    cx = pb.complex
    assert cx.norm(l, rep.x - sc.exact_x) <= 1e-9 * max(1.0, cx.norm(l, sc.exact_x))
    assert energy_identity_gap(cx, l, rep, pb.f, pb.g) <= 1e-10
    assert rep.norm_identity_gap <= 1e-10


@pytest.mark.parametrize("recipe", ["range-pair", "kernel-shift"])
def test_first_order_other_recipes(recipe):
    sc, pb = problem_for("annulus-eps", 1, recipe, seed=3)
    rep = solve_first_order(pb)
    assert pb.complex.norm(1, rep.x - sc.exact_x) <= 1e-9 * max(1.0, pb.complex.norm(1, sc.exact_x))


def test_first_order_matches_dense_least_squares():
    # x is the unique solution of the stacked system [A_l; A_{l-1}^*; pi_K] x = [f; g; k]
    cx = _shared.instance("cycle12")
    l = 1
    sc = manufacture(cx, "range-pair", seed=8, level=l)
    n = cx.dim(l)
    Q = cohomology_basis(cx, l).matrix()
    Ml = cx.gram(l).toarray()
    rows = [cx.op(l).toarray(), cx.adjoint(l - 1).toarray(), Q.T @ Ml]
    rhs = [sc.f, sc.g, Q.T @ Ml @ sc.k]
    A = np.vstack([r for r in rows if r.size]).reshape(-1, n)
    b = np.concatenate([r for r in rhs if r.size])
    x_ref = np.linalg.lstsq(A, b, rcond=None)[0]
    rep = solve_first_order(FirstOrderProblem(cx, l, sc.f, sc.g, sc.k))
    assert np.allclose(rep.x, x_ref, rtol=1e-9, atol=1e-10)


def test_parts_are_in_the_right_ranges():
    sc, pb = problem_for("grid3d-mixed", 1)
    cx, l = pb.complex, 1
    rep = solve_first_order(pb)
    # x_f in R(A_l^*), x_g in R(A_{l-1}), mutually orthogonal and orthogonal to k
    assert np.allclose(rep.x_f, cx.apply_adj(l, rep.y_f))
    assert np.allclose(rep.x_g, cx.apply(l - 1, rep.z_g))
    n = cx.norm(l, rep.x) ** 2
    assert abs(cx.dot(l, rep.x_f, rep.x_g)) <= 1e-10 * n
    assert abs(cx.dot(l, rep.x_f, rep.k)) <= 1e-10 * n


def test_zero_data_gives_zero_solution():
    cx = _shared.instance("grid2d-8")
    rep = solve_first_order(FirstOrderProblem(cx, 1, None, None, None))
    assert not np.any(rep.x)


def test_field_length_checked():
    cx = _shared.instance("grid2d-8")
    with pytest.raises(ValueError):
        FirstOrderProblem(cx, 1, np.ones(3), None, None)


# --- compatibility -------------------------------------------------------------------


def test_incompatible_f_rejected_with_distances():
    sc, pb = problem_for("grid3d-4", 1)
    cx = pb.complex
    # R(div^*) is orthogonal to R(rot)
    y = cx.apply_adj(2, np.random.default_rng(0).standard_normal(cx.dim(3)))
    bad = FirstOrderProblem(cx, 1, pb.f + y, pb.g, pb.k)
    with pytest.raises(IncompatibleDataError) as exc:
        solve_first_order(bad)
    rep = exc.value.report
    assert rep.failed() == ["f"]
    assert rep.distances["f"] == pytest.approx(cx.norm(2, y), rel=1e-8)


def test_incompatible_k_rejected():
    sc, pb = problem_for("annulus", 1)
    cx = pb.complex
    # a gradient field is orthogonal to the harmonic fields
    bad = FirstOrderProblem(cx, 1, pb.f, pb.g, pb.k + cx.apply(0, np.arange(cx.dim(0), dtype=float)))
    assert check_compatibility(bad).failed() == ["k"]


def test_nearly_compatible_data_is_projected():
    sc, pb = problem_for("annulus-eps", 1)
    cx = pb.complex
    w = np.random.default_rng(2).standard_normal(cx.dim(2))
    w *= 1e-11 * cx.norm(2, pb.f) / cx.norm(2, w)
    rep = solve_first_order(FirstOrderProblem(cx, 1, pb.f + w, pb.g, pb.k))
    assert rep.compatibility.passed
    assert cx.norm(1, rep.x - sc.exact_x) <= 1e-9 * cx.norm(1, sc.exact_x)


# --- saddle backend -----------------------------------------------------------------------


@pytest.mark.parametrize("name,l", [("grid2d-8", 1), ("annulus-eps", 1), ("grid3d-4", 1), ("grid3d-mixed", 2)])
def test_saddle_matches_variational(name, l):
    sc, pb = problem_for(name, l)
    v = solve_first_order(pb, backend="variational")
    s = solve_first_order(pb, backend="saddle")
    cx = pb.complex
    assert cx.norm(l, v.x - s.x) <= 1e-8 * cx.norm(l, v.x)
    assert all(m <= 1e-8 for m in s.multiplier_norms.values())


def test_saddle_both_parts_block_diagonal():
    sc, pb = problem_for("grid3d-4", 1)
    cx = pb.complex
    rf, rg = solve_saddle(cx, 1, f=pb.f, g=pb.g, part="both")
    xf, _, _ = f_part(cx, 1, pb.f)
    xg, _, _ = g_part(cx, 1, pb.g)
    assert cx.norm(1, rf.x_part - xf) <= 1e-8 * cx.norm(1, xf)
    assert cx.norm(1, rg.x_part - xg) <= 1e-8 * cx.norm(1, xg)


def test_saddle_augmented_requires_trivial_cohomology():
    cx = _shared.instance("annulus")
    # the f-part potential at level 0 lives in H_1, where the annulus has a harmonic field
    f = cx.apply(0, np.arange(cx.dim(0), dtype=float))
    with pytest.raises(ValueError):
        solve_saddle(cx, 0, f=f, part="f", augmented=True)
    # trivial K_1 on the Dirichlet grid: augmented and default forms agree
    gx = _shared.instance("grid2d-8")
    f = gx.apply(0, np.arange(gx.dim(0), dtype=float))
    a = solve_saddle(gx, 0, f=f, part="f", augmented=True)
    b = solve_saddle(gx, 0, f=f, part="f")
    assert a.stats.converged
    assert gx.norm(0, a.x_part - b.x_part) <= 1e-8 * gx.norm(0, b.x_part)


def test_saddle_rejects_unknown_part():
    cx = _shared.instance("grid2d-8")
    with pytest.raises(ValueError):
        solve_saddle(cx, 1, part="x")


def test_inf_sup_matches_reference():
    cx = _shared.instance("grid3d-2")
    val, ref = inf_sup_dense(cx, 0)
    assert val == pytest.approx(ref, rel=1e-8)
    assert ref == pytest.approx(1 / math.sqrt(poincare_constant(cx, 1).c_l ** 2 + 1), rel=1e-9)


# --- second order -----------------------------------------------------------------------------


@pytest.mark.parametrize("name,l", [("grid2d-8", 0), ("rotrot-4", 1), ("annulus-eps", 1)])
def test_second_order_recovers_solution(name, l):
    cx = _shared.instance(name)
    sc = manufacture_second_order(cx, seed=4, level=l)
    rep = solve_second_order(SecondOrderProblem(cx, l, sc.f, sc.g, sc.k))
    assert cx.norm(l, rep.x - sc.exact_x) <= 1e-8 * max(1.0, cx.norm(l, sc.exact_x))
    assert cx.norm(l + 1, rep.y - sc.extra["y"]) <= 1e-8 * cx.norm(l + 1, sc.extra["y"])


def test_second_order_laplacian_against_dense():
    cx = _shared.instance("grid2d-8")
    L = cx.adjoint(0).toarray() @ cx.op(0).toarray()
    u = np.random.default_rng(5).standard_normal(cx.dim(0))
    f = L @ u
    rep = solve_second_order(SecondOrderProblem(cx, 0, f, None, None))
    assert np.allclose(rep.x, np.linalg.solve(L, f), rtol=1e-9, atol=1e-10)


def test_second_order_incompatible_f():
    cx = build_cycle(8)
    # constants are not in the range of the cycle Laplacian
    with pytest.raises(IncompatibleDataError):
        solve_second_order(SecondOrderProblem(cx, 0, np.ones(8), None, None))


def test_dense_pinv_oracle_agrees_with_f_part():
    cx = _shared.instance("annulus-eps")
    f = cx.apply(1, np.random.default_rng(0).standard_normal(cx.dim(1)))
    orc = dense_oracle(cx.op(1), cx.gram(1), cx.gram(2))
    xf, _, _ = f_part(cx, 1, f)
    assert cx.norm(1, xf - orc.pinv(f)) <= 1e-9 * cx.norm(1, xf)
