"""Concrete discrete complexes and manufactured-solution scenarios.

Grids are cubical complexes on a box of ``cells`` cells per axis.  Every
entity (node, edge, face, cell) is a point of the doubled lattice
{0..2N}^d whose odd coordinates are the axes it spans, so one coboundary
routine builds grad, rot and div in any dimension.  Entries are exactly
+-1/h, which makes A_{l+1} A_l = 0 hold without round-off.

Gram matrices are lumped: an entity's weight is h^d times the (epsilon-
weighted, for the edge space) number of active cells around it divided by
the number of cells that can touch it.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from .complex_core import HilbertComplex, WeightedSpace, cohomology_basis
from .linalg import GramOperator, SparseOperator

FACE_NAMES = ("x-min", "x-max", "y-min", "y-max", "z-min", "z-max")
OP_NAMES = {1: ["grad"], 2: ["grad", "rot"], 3: ["grad", "rot", "div"]}
SPACE_NAMES = {1: ["nodes", "edges"], 2: ["nodes", "edges", "cells"], 3: ["nodes", "edges", "faces", "cells"]}


class SpecError(ValueError):
    pass


@dataclass
class GridSpec:
    dimension: int
    cells: tuple
    h: Optional[float] = None
    hole: Optional[tuple] = None  # per axis (lo, hi) in cell indices, half open
    gamma_t: frozenset = frozenset()
    epsilon: object = 1.0  # scalar or array shaped like ``cells``

    def __post_init__(self):
        d = int(self.dimension)
        if d not in (1, 2, 3):
            raise SpecError("dimension must be 1, 2 or 3")
        self.dimension = d
        cells = self.cells
        if np.isscalar(cells):
            cells = (int(cells),) * d
        cells = tuple(int(c) for c in cells)
        if len(cells) != d or min(cells) < 2:
            raise SpecError("need %d cell counts, each >= 2" % d)
        self.cells = cells
        if self.h is None:
            self.h = 1.0 / cells[0]
        if not self.h > 0:
            raise SpecError("spacing h must be positive")
        gt = self.gamma_t
        if isinstance(gt, str):
            gt = [s.strip() for s in gt.split(",") if s.strip()]
        gt = set(gt)
        valid = set(FACE_NAMES[: 2 * d]) | {"hole"}
        if "all" in gt:
            gt = (gt - {"all"}) | set(FACE_NAMES[: 2 * d]) | ({"hole"} if self.hole is not None else set())
        gt.discard("none")
        bad = gt - valid
        if bad:
            raise SpecError("invalid boundary faces for dimension %d: %s" % (d, sorted(bad)))
        if self.hole is not None:
            hole = tuple((int(a), int(b)) for a, b in self.hole)
            if d == 1 or len(hole) != d:
                raise SpecError("hole needs one (lo, hi) range per axis in 2D/3D")
            for (a, b), n in zip(hole, cells):
                if not (1 <= a < b <= n - 1):
                    raise SpecError("hole must lie strictly inside the box")
            self.hole = hole
        elif "hole" in gt:
            raise SpecError("'hole' boundary given without a hole")
        self.gamma_t = frozenset(gt)
        eps = np.asarray(self.epsilon, dtype=np.float64)
        if eps.ndim and eps.shape != cells:
            raise SpecError("epsilon must be a scalar or shaped %r" % (cells,))
        if np.any(eps <= 0):
            raise SpecError("epsilon must be positive")

    def epsilon_array(self):
        return np.broadcast_to(np.asarray(self.epsilon, dtype=np.float64), self.cells).copy()

    def describe(self):
        return {
            "dimension": self.dimension,
            "cells": list(self.cells),
            "h": self.h,
            "hole": [list(r) for r in self.hole] if self.hole else None,
            "gamma_t": sorted(self.gamma_t),
        }


def _cell_mask(spec: GridSpec):
    active = np.ones(spec.cells, dtype=bool)
    if spec.hole is not None:
        active[tuple(slice(a, b) for a, b in spec.hole)] = False
    return active


def _neighbour_sum(lattice_vals):
    """Sum over the 3^d neighbourhood of every lattice point (zero padded)."""
    d = lattice_vals.ndim
    padded = np.pad(lattice_vals, 1)
    out = np.zeros_like(lattice_vals)
    shape = lattice_vals.shape
    for off in itertools.product((0, 1, 2), repeat=d):
        out += padded[tuple(slice(o, o + s) for o, s in zip(off, shape))]
    return out


def build_cubical(spec: GridSpec) -> HilbertComplex:
    d = spec.dimension
    N = np.array(spec.cells)
    h = spec.h
    lshape = tuple(2 * N + 1)
    active = _cell_mask(spec)
    eps = spec.epsilon_array()

    cell_slots = tuple(slice(1, None, 2) for _ in range(d))
    act_lat = np.zeros(lshape)
    act_lat[cell_slots] = active
    eps_lat = np.zeros(lshape)
    eps_lat[cell_slots] = np.where(active, eps, 0.0)
    hole_lat = np.zeros(lshape)
    hole_lat[cell_slots] = ~active

    n_active = _neighbour_sum(act_lat)
    n_eps = _neighbour_sum(eps_lat)
    n_hole = _neighbour_sum(hole_lat)

    grid = np.indices(lshape)
    odd = grid % 2 == 1
    edim = odd.sum(axis=0)

    removed = n_active == 0
    for a in range(d):
        if FACE_NAMES[2 * a] in spec.gamma_t:
            removed |= grid[a] == 0
        if FACE_NAMES[2 * a + 1] in spec.gamma_t:
            removed |= grid[a] == 2 * N[a]
    if "hole" in spec.gamma_t:
        removed |= (n_hole > 0) & (n_active > 0)
    keep = ~removed

    index = np.full(lshape, -1, dtype=np.int64)
    spaces = []
    points = []
    for k in range(d + 1):
        sel = keep & (edim == k)
        pts = np.argwhere(sel)  # row-major lattice order: deterministic numbering
        index[tuple(pts.T)] = np.arange(len(pts))
        points.append(pts)
        possible = 2 ** (d - k)
        counts = (n_eps if k == 1 else n_active)[tuple(pts.T)]
        weights = h ** d * counts / possible
        spaces.append(WeightedSpace(len(pts), GramOperator(diagonal=weights), name=SPACE_NAMES[d][k],
                                    coords=pts * (h / 2.0), kind=k))

    ops = []
    for k in range(d):
        hi = points[k + 1]
        rows, cols, vals = [], [], []
        oddhi = hi % 2 == 1
        for a in range(d):
            before = oddhi[:, :a].sum(axis=1) if a else np.zeros(len(hi), dtype=int)
            base = np.where(before % 2 == 0, 1.0, -1.0)
            spans = oddhi[:, a]
            for side, sgn in ((-1, -1.0), (1, 1.0)):
                p = hi.copy()
                p[:, a] += side
                ok = spans.copy()
                j = np.full(len(hi), -1, dtype=np.int64)
                j[ok] = index[tuple(p[ok].T)]
                ok &= j >= 0
                rows.append(np.nonzero(ok)[0])
                cols.append(j[ok])
                vals.append(base[ok] * sgn / h)
        ops.append(SparseOperator.from_coo(np.concatenate(rows), np.concatenate(cols), np.concatenate(vals),
                                           (len(hi), len(points[k]))))
    suffix = "_Gt" if spec.gamma_t else ""
    names = [n + suffix for n in OP_NAMES[d]]
    meta = {"kind": "grid%dd" % d, "spec": spec.describe(), "h": h}
    return HilbertComplex(spaces, ops, names=names, meta=meta)


def build_path(n, dirichlet="none") -> HilbertComplex:
    """Unit interval with n edges (h = 1/n); nodes -> edges via grad."""
    if int(n) != n or n < 2:
        raise SpecError("path needs n >= 2 edges")
    gt = {"none": (), "left": ("x-min",), "both": ("x-min", "x-max")}
    if dirichlet not in gt:
        raise SpecError("dirichlet must be none, left or both")
    cx = build_cubical(GridSpec(1, (int(n),), gamma_t=frozenset(gt[dirichlet])))
    cx.meta.update(kind="path", dirichlet=dirichlet, n=int(n))
    return cx


def build_cycle(n) -> HilbertComplex:
    """Periodic path: n nodes, n edges, edge i runs from node i to node i+1 mod n."""
    if int(n) != n or n < 3:
        raise SpecError("cycle needs n >= 3")
    n = int(n)
    h = 1.0 / n
    i = np.arange(n)
    rows = np.concatenate([i, i])
    cols = np.concatenate([i, (i + 1) % n])
    vals = np.concatenate([-np.ones(n), np.ones(n)]) / h
    grad = SparseOperator.from_coo(rows, cols, vals, (n, n))
    t = i * h
    spaces = [
        WeightedSpace(n, GramOperator(diagonal=np.full(n, h)), name="nodes", coords=t[:, None], kind=0),
        WeightedSpace(n, GramOperator(diagonal=np.full(n, h)), name="edges", coords=(t + h / 2)[:, None], kind=1),
    ]
    return HilbertComplex(spaces, [grad], names=["grad"], meta={"kind": "cycle", "n": n, "h": h})


def build_grid2d(spec: GridSpec) -> HilbertComplex:
    if spec.dimension != 2:
        raise SpecError("build_grid2d needs a 2D spec")
    return build_cubical(spec)


def build_grid3d(spec: GridSpec) -> HilbertComplex:
    if spec.dimension != 3:
        raise SpecError("build_grid3d needs a 3D spec")
    return build_cubical(spec)


def em_level(cx: HilbertComplex):
    """Level of the E-field space (edges) in a grid complex."""
    return 1


# ----------------------------------------------------------------------------
# manufactured solutions


@dataclass
class ManufacturedScenario:
    name: str
    complex: HilbertComplex
    level: int
    exact_x: np.ndarray
    f: np.ndarray
    g: np.ndarray
    k: np.ndarray
    description: str = ""
    extra: Dict[str, np.ndarray] = field(default_factory=dict)


RECIPES = ("smooth-potential", "range-pair", "kernel-shift")


def _smooth_field(space: WeightedSpace, rng):
    n = space.dim
    if n == 0:
        return np.zeros(0)
    if space.coords is None:
        return rng.standard_normal(n)
    X = space.coords
    out = np.zeros(n)
    for _ in range(3):
        freq = rng.uniform(0.5, 2.5, size=X.shape[1]) * np.pi
        phase = rng.uniform(0, 2 * np.pi, size=X.shape[1])
        amp = rng.standard_normal()
        out += amp * np.prod(np.sin(freq * X + phase), axis=1)
    return out


def _kernel_part(cx, level, rng, scale=1.0):
    basis = cohomology_basis(cx, level)
    if basis.dim == 0:
        return np.zeros(cx.dim(level))
    coef = rng.standard_normal(basis.dim) * scale
    return basis.matrix() @ coef


def manufacture(cx: HilbertComplex, recipe="smooth-potential", seed=0, level=None) -> ManufacturedScenario:
    """exact_x = A_{l-1} u + A_l^* w + kappa with data taken as its images.

    ``smooth-potential`` samples u, w from smooth functions of the entity
    coordinates, ``range-pair`` from seeded Gaussians, ``kernel-shift`` uses a
    pure cohomology field.  Identical (complex, recipe, seed) always gives the
    same scenario.
    """
    if recipe not in RECIPES:
        raise ValueError("unknown recipe %r; choose from %s" % (recipe, ", ".join(RECIPES)))
    if level is None:
        level = 1
    rng = np.random.default_rng(seed)
    n = cx.dim(level)
    if recipe == "kernel-shift":
        x = _kernel_part(cx, level, rng)
    else:
        prev = cx.spaces[level - 1] if level >= 1 else None
        nxt = cx.spaces[level + 1] if level + 1 < cx.n_spaces else None
        if recipe == "smooth-potential":
            u = _smooth_field(prev, rng) if prev is not None else np.zeros(0)
            w = _smooth_field(nxt, rng) if nxt is not None else np.zeros(0)
        else:
            u = rng.standard_normal(cx.dim(level - 1))
            w = rng.standard_normal(cx.dim(level + 1))
        x = cx.apply(level - 1, u) + cx.apply_adj(level, w)
        # harmonic part of comparable size to the range parts
        volume = cx.norm(level, np.ones(n)) if n else 1.0
        scale = cx.norm(level, x) / volume if volume else 1.0
        x = x + _kernel_part(cx, level, rng, scale=scale or 1.0)
    f = cx.apply(level, x)
    g = cx.apply_adj(level - 1, x)
    k = cohomology_basis(cx, level).project(x)
    return ManufacturedScenario("%s:%s:%d" % (cx.meta.get("kind", "complex"), recipe, seed), cx, level, x, f, g, k,
                                description="recipe %s, seed %d, level %d" % (recipe, seed, level))


def manufacture_second_order(cx: HilbertComplex, recipe="smooth-potential", seed=0, level=0) -> ManufacturedScenario:
    """Second-order data: y = A_l x, f = A_l^* y, plus g and k as above."""
    sc = manufacture(cx, recipe, seed, level)
    y = cx.apply(level, sc.exact_x)
    f2 = cx.apply_adj(level, y)
    return ManufacturedScenario(sc.name + ":second", cx, level, sc.exact_x, f2, sc.g, sc.k,
                                description=sc.description + ", second order", extra={"y": y})


def perturb(cx: HilbertComplex, level, x, rel=0.1, seed=0, component=None):
    """x plus a seeded perturbation of relative size ``rel``.

    ``component`` restricts the perturbation to 'prev' (range of A_{l-1}),
    'adj' (range of A_l^*) or 'kernel'; None perturbs everything.
    """
    from .complex_core import helmholtz_decompose

    rng = np.random.default_rng(seed)
    v = _smooth_field(cx.spaces[level], rng) + 0.1 * rng.standard_normal(cx.dim(level))
    if component is not None:
        parts = helmholtz_decompose(cx, level, v)
        v = {"prev": parts.prev, "adj": parts.adj, "kernel": parts.kernel}[component]
    nx = cx.norm(level, x)
    nv = cx.norm(level, v)
    if nv == 0:
        return x.copy()
    return x + v * (rel * (nx if nx else 1.0) / nv)
