"""Command-line front end.

    hilbert-apost build     --config spec.ini --out DIR
    hilbert-apost solve     --manifest DIR/manifest.json [--f F --g G --k K] [--backend saddle] [--order 2]
    hilbert-apost constants --manifest M
    hilbert-apost estimate  --manifest M [--x-approx X] [--budget 20] [--order 2]
    hilbert-apost decompose --manifest M --x-approx X
    hilbert-apost report    --runs DIR

Exit codes: 0 ok, 2 configuration error, 3 incompatible data, 4 solver
failure, 5 budget exhausted before the bounds converged.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import datetime
import io
import json
import logging
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import estimator, instances, solver
from .complex_core import IllPosedError, helmholtz_decompose, poincare_constant, cohomology_basis
from .linalg import ConvergenceError, read_vector_csv, write_vector_csv
from .serialization import ManifestError, data_path, read_manifest, write_manifest, write_report, write_trace_csv

log = logging.getLogger("hilbert_apost")

EXIT_OK, EXIT_CONFIG, EXIT_INCOMPATIBLE, EXIT_SOLVER, EXIT_BUDGET = 0, 2, 3, 4, 5


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    solver_tol: float = 1e-12
    bound_tol: float = 1e-6
    budget: int = 20
    seed: int = 0
    out: str = "."

    def validate(self):
        if not (self.solver_tol > 0 and self.bound_tol > 0):
            raise ConfigError("tolerances must be positive")
        if self.budget < 1:
            raise ConfigError("budget must be at least 1")
        return self


def _read_config(path):
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    if path is not None:
        if not Path(path).is_file():
            raise ConfigError("config file %s not found" % path)
        try:
            cp.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from exc
    return cp


def _run_config(args, cp):
    sec = cp["tolerances"] if cp.has_section("tolerances") else {}
    try:
        rc = RunConfig(
            solver_tol=float(args.tol if getattr(args, "tol", None) is not None else sec.get("solver_tol", 1e-12)),
            bound_tol=float(sec.get("bound_tol", 1e-6)),
            budget=int(args.budget if getattr(args, "budget", None) is not None else sec.get("budget", 20)),
            seed=int(args.seed if getattr(args, "seed", None) is not None else
                     (cp["manufacture"].get("seed", 0) if cp.has_section("manufacture") else 0)),
            out=getattr(args, "out", None) or ".",
        )
    except ValueError as exc:
        raise ConfigError("bad tolerance block: %s" % exc) from exc
    return rc.validate()


# ----------------------------------------------------------------------------
# build


def _parse_ints(s):
    return tuple(int(v) for v in s.replace(" ", "").split(",") if v)


def _parse_hole(s):
    if not s or s.strip().lower() in ("none", ""):
        return None
    try:
        return tuple(tuple(int(v) for v in part.split(":")) for part in s.replace(" ", "").split(","))
    except ValueError as exc:
        raise ConfigError("hole must look like 'lo:hi,lo:hi[,lo:hi]'") from exc


def build_from_config(cp):
    if not cp.has_section("instance"):
        raise ConfigError("config needs an [instance] section")
    sec = cp["instance"]
    kind = sec.get("kind", "").strip()
    try:
        if kind == "path":
            cx = instances.build_path(int(sec.get("n", 8)), sec.get("dirichlet", "none"))
        elif kind == "cycle":
            cx = instances.build_cycle(int(sec.get("n", 8)))
        elif kind in ("grid2d", "grid3d"):
            d = 2 if kind == "grid2d" else 3
            cells = _parse_ints(sec.get("cells", ",".join(["4"] * d)))
            if len(cells) == 1:
                cells = cells * d
            h = sec.get("h")
            spec = instances.GridSpec(d, cells, h=float(h) if h else None, hole=_parse_hole(sec.get("hole", "")),
                                      gamma_t=sec.get("gamma_t", "none"), epsilon=float(sec.get("epsilon", 1.0)))
            cx = instances.build_cubical(spec)
        else:
            raise ConfigError("unknown instance kind %r" % kind)
    except instances.SpecError as exc:
        raise ConfigError(str(exc)) from exc
    except ValueError as exc:
        raise ConfigError("bad instance parameter: %s" % exc) from exc
    if sec.getboolean("reversed", fallback=False):
        cx = cx.reversed()
    level = int(sec.get("level", 1 if cx.n_spaces > 1 else 0))
    if not 0 <= level < cx.n_spaces:
        raise ConfigError("level %d out of range for %d spaces" % (level, cx.n_spaces))
    return cx, level


def cmd_build(args):
    cp = _read_config(args.config)
    rc = _run_config(args, cp)
    cx, level = build_from_config(cp)
    out = Path(rc.out)
    data = {}
    if cp.has_section("manufacture"):
        ms = cp["manufacture"]
        recipe = ms.get("recipe", "smooth-potential")
        order = int(ms.get("order", 1))
        rel = float(ms.get("perturbation", 0.1))
        if recipe not in instances.RECIPES:
            raise ConfigError("unknown recipe %r" % recipe)
        out.mkdir(parents=True, exist_ok=True)
        if order == 2:
            sc = instances.manufacture_second_order(cx, recipe, rc.seed, level)
            y = sc.extra["y"]
            xt = instances.perturb(cx, level, sc.exact_x, rel, seed=rc.seed + 1)
            yt = instances.perturb(cx, level + 1, y, rel, seed=rc.seed + 2)
            write_vector_csv(out / "y_exact.csv", y)
            write_vector_csv(out / "y_approx.csv", yt)
            data.update(y_exact="y_exact.csv", y_approx="y_approx.csv")
        else:
            sc = instances.manufacture(cx, recipe, rc.seed, level)
            xt = instances.perturb(cx, level, sc.exact_x, rel, seed=rc.seed + 1)
        for name, v in (("exact_x", sc.exact_x), ("f", sc.f), ("g", sc.g), ("k", sc.k), ("x_approx", xt)):
            write_vector_csv(out / (name + ".csv"), v)
            data[name] = name + ".csv"
        data["order"] = str(order)
    path = write_manifest(cx, out, level=level, data=data)
    print(str(path))
    return EXIT_OK


# ----------------------------------------------------------------------------
# shared loading


def _load(args):
    if not args.manifest:
        raise ConfigError("--manifest is required")
    cx, man = read_manifest(args.manifest)
    level = args.level if getattr(args, "level", None) is not None else int(man.get("level", 1))
    return cx, man, level


def _vec(args, man, key, flag_value, n, required=False):
    path = flag_value if flag_value else data_path(args.manifest, man, key)
    if path is None:
        if required:
            raise ConfigError("no %s given (flag or manifest data entry)" % key)
        return np.zeros(n)
    try:
        v = read_vector_csv(path)
    except (OSError, ValueError) as exc:
        raise ConfigError("cannot read %s from %s: %s" % (key, path, exc)) from exc
    if v.size != n:
        raise ConfigError("%s has length %d, expected %d" % (key, v.size, n))
    return v


def _order(args, man):
    if getattr(args, "order", None) is not None:
        return int(args.order)
    return int(man.get("data", {}).get("order", 1))


def _stamp():
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _emit(obj, out_path):
    if out_path:
        write_report(out_path, obj, timestamp=_stamp())
        print(str(out_path))
    else:
        from .serialization import dumps

        print(dumps(obj))


def _report_path(args, default_name):
    if not args.out:
        return None
    p = Path(args.out)
    return p / default_name if (p.is_dir() or not p.suffix) else p


# ----------------------------------------------------------------------------
# commands


def cmd_solve(args):
    cp = _read_config(args.config)
    rc = _run_config(args, cp)
    cx, man, l = _load(args)
    order = _order(args, man)
    f = _vec(args, man, "f", args.f, cx.dim(l) if order == 2 else cx.dim(l + 1))
    g = _vec(args, man, "g", args.g, cx.dim(l - 1))
    k = _vec(args, man, "k", args.k, cx.dim(l))
    if order == 2:
        if args.backend == "saddle":
            raise ConfigError("second-order solves use the variational cascade only")
        rep = solver.solve_second_order(solver.SecondOrderProblem(cx, l, f, g, k), tol=rc.solver_tol)
    else:
        rep = solver.solve_first_order(solver.FirstOrderProblem(cx, l, f, g, k), backend=args.backend, tol=rc.solver_tol)
    out = {"command": "solve", "level": l, "order": order, "report": rep.summary(cx, l)}
    ex = data_path(args.manifest, man, "exact_x")
    if ex is not None and ex.exists():
        x = read_vector_csv(ex)
        nx = cx.norm(l, x)
        out["relative_error_vs_exact"] = cx.norm(l, rep.x - x) / nx if nx else cx.norm(l, rep.x - x)
    rp = _report_path(args, "solve.json")
    if rp is not None:
        rp.parent.mkdir(parents=True, exist_ok=True)
        write_vector_csv(rp.with_name("x.csv"), rep.x)
    _emit(out, rp)
    return EXIT_OK


def cmd_constants(args):
    cx, man, _ = _load(args)
    levels = [args.level] if args.level is not None else list(range(len(cx.ops)))
    rows = []
    for l in levels:
        r = poincare_constant(cx, l, method=args.method)
        rs = poincare_constant(cx, l, method=args.method, adjoint=True)
        gap = abs(r.c_l - rs.c_l) / r.c_l if math.isfinite(r.c_l) and math.isfinite(rs.c_l) else 0.0
        rows.append({"level": l, "label": cx.names[l] if l < len(cx.names) else None, "c": r.as_dict(),
                     "c_adjoint": rs.as_dict(), "relative_gap": gap,
                     "cohomology_dims": [cohomology_basis(cx, l).dim, cohomology_basis(cx, l + 1).dim]})
        print("level %d (%s): c = %.17g   c* = %.17g   gap %.3g%s" % (
            l, rows[-1]["label"], r.c_l, rs.c_l, gap, ("   [%s]" % r.note) if r.note else ""), file=sys.stderr)
    _emit({"command": "constants", "constants": rows}, _report_path(args, "constants.json"))
    return EXIT_OK


def cmd_estimate(args):
    cp = _read_config(args.config)
    rc = _run_config(args, cp)
    cx, man, l = _load(args)
    order = _order(args, man)
    xt = _vec(args, man, "x_approx", args.x_approx, cx.dim(l), required=True)
    f = _vec(args, man, "f", args.f, cx.dim(l) if order == 2 else cx.dim(l + 1))
    g = _vec(args, man, "g", args.g, cx.dim(l - 1))
    k = _vec(args, man, "k", args.k, cx.dim(l))
    ex_path = data_path(args.manifest, man, "exact_x")
    exact = read_vector_csv(ex_path) if ex_path is not None and ex_path.exists() else None
    # reject incompatible data before estimating
    prob_cls = solver.SecondOrderProblem if order == 2 else solver.FirstOrderProblem
    comp = solver.check_compatibility(prob_cls(cx, l, f, g, k), second_order=(order == 2))
    if not comp.passed:
        raise solver.IncompatibleDataError(comp)
    consts = {}
    if args.c_prev is not None:
        consts["prev"] = args.c_prev
    if args.c_adj is not None:
        consts["adj"] = args.c_adj
    if order == 2:
        yt = _vec(args, man, "y_approx", args.y_approx, cx.dim(l + 1), required=True)
        rep = estimator.second_order_estimate(cx, l, xt, yt, f, g, k, budget=rc.budget, tol=rc.bound_tol,
                                              constants=consts, exact_x=exact)
        body = rep.as_dict()
        reports = {"e": rep.e, "h": rep.h}
    else:
        rep = estimator.two_sided_estimate(cx, l, xt, f, g, k, budget=rc.budget, tol=rc.bound_tol,
                                           constants=consts, exact_x=exact)
        body = {"e": rep.as_dict()}
        reports = {"e": rep}
    out = {"command": "estimate", "level": l, "order": order, "budget": rc.budget, "bound_tol": rc.bound_tol,
           "bounds": body}
    rp = _report_path(args, "estimate.json")
    if rp is not None:
        rp.parent.mkdir(parents=True, exist_ok=True)
        for tag, br in reports.items():
            for name, comp_b in sorted(br.components.items()):
                if comp_b.log:
                    write_trace_csv(rp.with_name("trace_%s_%s.csv" % (tag, name)),
                                    [(r["n"], r["t"], r["F"], r["upper"]) for r in comp_b.log])
    _emit(out, rp)
    if not all(r.valid for r in reports.values()):
        return EXIT_SOLVER
    if any(r.budget_exhausted for r in reports.values()):
        return EXIT_BUDGET
    return EXIT_OK


def cmd_decompose(args):
    cx, man, l = _load(args)
    x = _vec(args, man, "x_approx", args.x_approx, cx.dim(l), required=True)
    parts = helmholtz_decompose(cx, l, x, basis=cohomology_basis(cx, l))
    norms = {n: cx.norm(l, v) for n, v in (("x", x), ("prev", parts.prev), ("kernel", parts.kernel), ("adj", parts.adj))}
    rp = _report_path(args, "decompose.json")
    if rp is not None:
        rp.parent.mkdir(parents=True, exist_ok=True)
        for n in ("prev", "kernel", "adj"):
            write_vector_csv(rp.with_name("x_%s.csv" % n), getattr(parts, n))
    _emit({"command": "decompose", "level": l, "norms": norms}, rp)
    return EXIT_OK


REPORT_COLUMNS = ("run", "status", "command", "lower_total", "upper_total", "exact_error", "efficiency_index")


def cmd_report(args):
    root = Path(args.runs)
    if not root.is_dir():
        raise ConfigError("run directory %s not found" % root)
    names = list(args.expect or [])
    found = sorted(p.name for p in root.iterdir() if p.is_dir())
    rows = []
    for name in sorted(set(found) | set(names)):
        run = root / name
        files = sorted(run.glob("*.json")) if run.is_dir() else []
        reps = [p for p in files if p.name != "manifest.json"]
        if not reps:
            log.warning("run %s has no report", name)
            rows.append({"run": name, "status": "missing"})
            continue
        for p in reps:
            try:
                obj = json.loads(p.read_text(encoding="utf-8"))
            except json.JSONDecodeError:
                rows.append({"run": name, "status": "unreadable"})
                continue
            row = {"run": name + "/" + p.stem, "status": "ok", "command": obj.get("command")}
            tot = obj.get("bounds", {}).get("e", {}).get("totals")
            if tot:
                row.update({k: tot.get(k) for k in ("lower_total", "upper_total", "exact_error", "efficiency_index")})
            rows.append(row)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=REPORT_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({c: ("%.17g" % r[c]) if isinstance(r.get(c), float) else r.get(c, "") for c in REPORT_COLUMNS})
    if args.out:
        Path(args.out).write_text(buf.getvalue(), encoding="utf-8")
        print(args.out)
    else:
        sys.stdout.write(buf.getvalue())
    return EXIT_OK


# ----------------------------------------------------------------------------


def make_parser():
    p = argparse.ArgumentParser(prog="hilbert-apost", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, manifest=True):
        sp.add_argument("--config", help="INI file with [instance], [manufacture], [tolerances]")
        if manifest:
            sp.add_argument("--manifest")
            sp.add_argument("--level", type=int)
        sp.add_argument("--out")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--tol", type=float)
        sp.add_argument("--budget", type=int)

    b = sub.add_parser("build", help="build an instance (and manufactured data) into a directory")
    common(b, manifest=False)
    b.set_defaults(fn=cmd_build)

    s = sub.add_parser("solve", help="solve the first- or second-order system")
    common(s)
    for flag in ("--f", "--g", "--k"):
        s.add_argument(flag)
    s.add_argument("--backend", choices=("variational", "saddle"), default="variational")
    s.add_argument("--order", type=int, choices=(1, 2))
    s.set_defaults(fn=cmd_solve)

    c = sub.add_parser("constants", help="Friedrichs/Poincare constants per level")
    common(c)
    c.add_argument("--method", choices=("lanczos", "dense"), default="lanczos")
    c.set_defaults(fn=cmd_constants)

    e = sub.add_parser("estimate", help="two-sided error bounds for an approximation")
    common(e)
    for flag in ("--x-approx", "--y-approx", "--f", "--g", "--k"):
        e.add_argument(flag)
    e.add_argument("--order", type=int, choices=(1, 2))
    e.add_argument("--c-prev", type=float, help="override c_{l-1} with a known upper bound")
    e.add_argument("--c-adj", type=float, help="override c_l with a known upper bound")
    e.set_defaults(fn=cmd_estimate)

    d = sub.add_parser("decompose", help="Helmholtz decomposition of a field")
    common(d)
    d.add_argument("--x-approx")
    d.set_defaults(fn=cmd_decompose)

    r = sub.add_parser("report", help="aggregate run directories into a CSV table")
    r.add_argument("--runs", required=True)
    r.add_argument("--out")
    r.add_argument("--expect", nargs="*", help="run names that must be present")
    r.set_defaults(fn=cmd_report)
    return p


def main(argv=None):
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except (ConfigError, ManifestError, instances.SpecError) as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return EXIT_CONFIG
    except solver.IncompatibleDataError as exc:
        print("incompatible data: %s" % exc, file=sys.stderr)
        print(json.dumps(exc.report.as_dict(), sort_keys=True), file=sys.stderr)
        return EXIT_INCOMPATIBLE
    except (solver.SolverFailure, ConvergenceError, IllPosedError) as exc:
        print("solver failure: %s" % exc, file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
