import math
import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hilbert_apost.complex_core import (
    HilbertComplex,
    IllPosedError,
    WeightedSpace,
    adjointness_gap,
    cohomology_basis,
    dense_constant,
    helmholtz_decompose,
    hodge_nullity_dense,
    poincare_constant,
    project_range,
    verify_complex,
)
from hilbert_apost.instances import build_cycle, build_path
from hilbert_apost.linalg import GramOperator, SparseOperator, dense_oracle

import _shared

# Betti numbers of the relative cohomology of each domain, read off its topology
TOPOLOGY = {
    "path4-both": [0, 1],
    "path8-none": [1, 0],
    "path16-left": [0, 0],
    "cycle5": [1, 1],
    "grid2d-8": [0, 0, 1],
    "annulus": [1, 1, 0],
    "annulus-eps": [0, 1, 0],
    "grid3d-2": [0, 0, 0, 1],
    "grid3d-4": [0, 0, 0, 1],
    "grid3d-mixed": [0, 0, 1, 0],
    "rotrot-4": [1, 0, 0, 0],
}


@pytest.mark.parametrize("name", _shared.ALL)
def test_complex_property_every_instance(name):
    checks = verify_complex(_shared.instance(name))
    assert all(c.passed for c in checks), checks


def test_complex_property_detects_violation():
    M = GramOperator.identity(2)
    A = SparseOperator(np.eye(2))
    cx = HilbertComplex([WeightedSpace(2, M)] * 3, [A, A])
    assert not verify_complex(cx)[0].passed


def test_complex_rejects_shape_mismatch():
    with pytest.raises(ValueError):
        HilbertComplex([WeightedSpace(2), WeightedSpace(3)], [SparseOperator(np.eye(2))])


@pytest.mark.parametrize("name", ["annulus-eps", "grid3d-mixed", "rotrot-4", "path16-left"])
def test_adjointness(name):
    cx = _shared.instance(name)
    rng = np.random.default_rng(4)
    for l in range(len(cx.ops)):
        u, v = rng.standard_normal(cx.dim(l)), rng.standard_normal(cx.dim(l + 1))
        assert adjointness_gap(cx, l, u, v) <= 1e-12


def test_adjoint_general_gram_matches_explicit_formula():
    rng = np.random.default_rng(7)
    B = rng.standard_normal((4, 4))
    G0 = B @ B.T + 4 * np.eye(4)
    G1 = np.diag(rng.uniform(1, 2, 3))
    A = SparseOperator(rng.standard_normal((3, 4)))
    cx = HilbertComplex([WeightedSpace(4, GramOperator(matrix=G0)), WeightedSpace(3, GramOperator(matrix=G1))], [A])
    explicit = np.linalg.solve(G0, A.toarray().T @ G1)
    assert np.allclose(cx.adjoint(0).toarray(), explicit, rtol=1e-12, atol=1e-13)
    u, v = rng.standard_normal(4), rng.standard_normal(3)
    assert adjointness_gap(cx, 0, u, v) <= 1e-12


def test_adjoint_cache_thread_safe():
    cx = build_cycle(30)
    out = []
    ts = [threading.Thread(target=lambda: out.append(cx.adjoint(0))) for _ in range(8)]
    for t in ts:
        t.start()
    for t in ts:
        t.join()
    assert all(o is out[0] for o in out)


def test_out_of_range_ops_are_zero_maps():
    cx = build_path(4)
    assert cx.op(-1).shape == (cx.dim(0), 0)
    assert cx.op(1).shape == (0, cx.dim(1))
    assert cx.apply(-1, np.zeros(0)).shape == (cx.dim(0),)


def test_reversed_swaps_operators_and_adjoints():
    cx = _shared.instance("grid3d-4")
    rv = _shared.instance("rotrot-4")
    assert [rv.dim(l) for l in range(4)] == [cx.dim(3 - l) for l in range(4)]
    rng = np.random.default_rng(0)
    y = rng.standard_normal(rv.dim(1))
    assert np.allclose(rv.apply(1, y), cx.op(1).toarray().T @ y)
    assert np.allclose(rv.op(1).toarray(), cx.op(1).toarray().T)


# --- cohomology ---------------------------------------------------------------


@pytest.mark.parametrize("name", list(TOPOLOGY))
def test_cohomology_dimension_matches_topology(name):
    cx = _shared.instance(name)
    dims = [cohomology_basis(cx, l).dim for l in range(cx.n_spaces)]
    assert dims == TOPOLOGY[name]
    assert dims == [hodge_nullity_dense(cx, l) for l in range(cx.n_spaces)]


@pytest.mark.parametrize("name", ["annulus", "grid3d-mixed", "cycle12"])
def test_cohomology_basis_orthonormal_and_harmonic(name):
    cx = _shared.instance(name)
    for l in range(cx.n_spaces):
        B = cohomology_basis(cx, l)
        Q = B.matrix()
        if B.dim == 0:
            continue
        G = np.array([[cx.dot(l, a, b) for b in B.vectors] for a in B.vectors])
        assert np.allclose(G, np.eye(B.dim), atol=1e-12)
        for q in B.vectors:
            assert cx.norm(l + 1, cx.apply(l, q)) <= 1e-10 * cx.norm(l, q) * max(1.0, cx.op(l).scale())
            assert cx.norm(l - 1, cx.apply_adj(l - 1, q)) <= 1e-10 * max(1.0, cx.op(l - 1).scale())
        assert Q.shape == (cx.dim(l), B.dim)


def test_cohomology_probe_matches_dense():
    cx = _shared.instance("grid3d-mixed")
    dense = cohomology_basis(cx, 2, method="dense")
    probe = cohomology_basis(cx, 2, method="probe", seed=3)
    assert probe.dim == dense.dim == 1
    # same subspace: the projector images agree
    x = np.random.default_rng(1).standard_normal(cx.dim(2))
    assert cx.norm(2, dense.project(x) - probe.project(x)) <= 1e-8 * cx.norm(2, x)


def test_cohomology_deterministic():
    cx = _shared.instance("annulus")
    a = cohomology_basis(cx, 1, method="dense").matrix()
    b = cohomology_basis(build_cycle(5), 1).matrix()
    assert np.array_equal(a, cohomology_basis(cx, 1, method="dense").matrix())
    assert b.shape == (5, 1)


def test_cycle_harmonic_one_form_is_constant():
    cx = build_cycle(7)
    q = cohomology_basis(cx, 1).vectors[0]
    assert np.allclose(q / q[0], 1.0)


# --- Helmholtz decomposition -------------------------------------------------------


@pytest.mark.parametrize("name,l", [("annulus-eps", 1), ("grid3d-mixed", 1), ("grid3d-mixed", 2), ("cycle12", 1)])
def test_helmholtz_reconstruction_and_orthogonality(name, l):
    cx = _shared.instance(name)
    x = np.random.default_rng(11).standard_normal(cx.dim(l))
    hd = helmholtz_decompose(cx, l, x, basis=cohomology_basis(cx, l))
    nx = cx.norm(l, x)
    assert cx.norm(l, hd.prev + hd.kernel + hd.adj - x) <= 1e-10 * nx
    for a, b in [(hd.prev, hd.kernel), (hd.prev, hd.adj), (hd.kernel, hd.adj)]:
        assert abs(cx.dot(l, a, b)) <= 1e-10 * nx * nx
    assert nx**2 == pytest.approx(sum(cx.norm(l, p) ** 2 for p in hd.as_tuple()), rel=1e-10)


def test_project_range_matches_dense_oracle():
    cx = _shared.instance("annulus-eps")
    x = np.random.default_rng(2).standard_normal(cx.dim(1))
    orc = dense_oracle(cx.op(0), cx.gram(0), cx.gram(1))
    p = project_range(cx, "prev", 1, x)
    assert cx.norm(1, p - orc.project_range(x, cx.gram(1))) <= 1e-9 * cx.norm(1, x)
    q = project_range(cx, "adj", 1, x)
    orc1 = dense_oracle(cx.op(1), cx.gram(1), cx.gram(2))
    assert cx.norm(1, q - orc1.project_corange(x, cx.gram(1))) <= 1e-9 * cx.norm(1, x)
    with pytest.raises(ValueError):
        project_range(cx, "both", 1, x)


# --- Poincare constants --------------------------------------------------------------


@pytest.mark.parametrize("n", [4, 8, 16])
def test_path_dirichlet_constant_closed_form(n):
    h = 1.0 / n
    rep = poincare_constant(build_path(n, "both"), 0)
    assert rep.c_l == pytest.approx(h / (2 * math.sin(math.pi * h / 2)), rel=1e-9)


def test_path_h_quarter_value():
    assert poincare_constant(_shared.instance("path4-both"), 0).c_l == pytest.approx(0.3266407412190941, rel=1e-12)


def test_cycle_constant_closed_form():
    n = 12
    rep = poincare_constant(build_cycle(n), 0)
    h = 1.0 / n
    assert rep.c_l == pytest.approx(h / (2 * math.sin(math.pi / n)), rel=1e-9)


@pytest.mark.parametrize("name,l", [("annulus-eps", 0), ("annulus-eps", 1), ("grid3d-mixed", 1), ("grid3d-mixed", 2),
                                    ("rotrot-4", 1)])
def test_lanczos_constant_matches_dense(name, l):
    cx = _shared.instance(name)
    rep = poincare_constant(cx, l)
    assert rep.method == "lanczos"
    assert rep.c_l == pytest.approx(dense_constant(cx, l), rel=1e-8)
    adj = poincare_constant(cx, l, adjoint=True)
    assert adj.c_l == pytest.approx(rep.c_l, rel=1e-8)


def test_constant_of_zero_operator_is_infinite():
    cx = HilbertComplex([WeightedSpace(3), WeightedSpace(2)], [SparseOperator.zeros((2, 3))])
    rep = poincare_constant(cx, 0)
    assert math.isinf(rep.c_l) and rep.note


def test_ill_posed_operator_raises():
    A = SparseOperator(np.diag([1.0, 1e-8, 1.0]))
    cx = HilbertComplex([WeightedSpace(3), WeightedSpace(3)], [A])
    with pytest.raises(IllPosedError):
        poincare_constant(cx, 0, method="dense")


def test_constants_cached():
    cx = _shared.instance("grid3d-4")
    assert poincare_constant(cx, 1) is poincare_constant(cx, 1)


@settings(max_examples=15, deadline=None)
@given(n=st.integers(3, 40), seed=st.integers(0, 10_000))
def test_constant_lower_bounds_rayleigh_quotient(n, seed):
    # c_l |A x| >= |x| for x orthogonal to the kernel
    cx = build_cycle(n)
    c = poincare_constant(cx, 0).c_l
    x = np.random.default_rng(seed).standard_normal(n)
    x -= x.mean()
    assert c * cx.norm(1, cx.apply(0, x)) >= cx.norm(0, x) * (1 - 1e-10)
