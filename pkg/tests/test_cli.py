import json
import subprocess
import sys

import numpy as np
import pytest

from hilbert_apost.cli import main
from hilbert_apost.linalg import read_vector_csv, write_vector_csv
from hilbert_apost.serialization import read_manifest, strip_timestamp

GRID3D = """
[instance]
kind = grid3d
cells = 4
gamma_t = all
level = 1

[manufacture]
recipe = smooth-potential
seed = 3
perturbation = 0.1

[tolerances]
solver_tol = 1e-12
bound_tol = 1e-6
budget = 20
"""

LAPLACE2 = """
[instance]
kind = grid2d
cells = 6
gamma_t = all
level = 0

[manufacture]
order = 2
seed = 1
perturbation = 0.05
"""


def build(tmp_path, text, name="run"):
    cfg = tmp_path / (name + ".ini")
    cfg.write_text(text)
    out = tmp_path / name
    assert main(["build", "--config", str(cfg), "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def grid_run(tmp_path_factory):
    return build(tmp_path_factory.mktemp("cli"), GRID3D)


def test_build_writes_manifest_and_data(grid_run):
    cx, man = read_manifest(grid_run / "manifest.json")
    assert man["level"] == 1
    assert [cx.dim(l) for l in range(4)] == [27, 108, 144, 64]
    for key in ("exact_x", "f", "g", "k", "x_approx"):
        assert (grid_run / man["data"][key]).exists()


def test_manifest_round_trip_is_exact(grid_run, tmp_path):
    from hilbert_apost.instances import GridSpec, build_cubical

    cx, _ = read_manifest(grid_run / "manifest.json")
    ref = build_cubical(GridSpec(3, 4, gamma_t="all"))
    for l in range(3):
        assert np.array_equal(cx.op(l).toarray(), ref.op(l).toarray())
    for l in range(4):
        assert np.array_equal(cx.gram(l).diag, ref.gram(l).diag)


def test_solve_recovers_exact(grid_run, tmp_path):
    out = tmp_path / "solve.json"
    assert main(["solve", "--manifest", str(grid_run / "manifest.json"), "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["relative_error_vs_exact"] <= 1e-9
    x = read_vector_csv(tmp_path / "x.csv")
    assert np.allclose(x, read_vector_csv(grid_run / "exact_x.csv"), atol=1e-9)


def test_solve_saddle_backend(grid_run, tmp_path):
    out = tmp_path / "s.json"
    assert main(["solve", "--manifest", str(grid_run / "manifest.json"), "--backend", "saddle", "--out", str(out)]) == 0
    assert json.loads(out.read_text())["relative_error_vs_exact"] <= 1e-8


def test_constants_command(grid_run, tmp_path):
    out = tmp_path / "c.json"
    assert main(["constants", "--manifest", str(grid_run / "manifest.json"), "--out", str(out)]) == 0
    rows = json.loads(out.read_text())["constants"]
    assert [r["level"] for r in rows] == [0, 1, 2]
    for r in rows:
        assert r["relative_gap"] <= 1e-8


def test_estimate_writes_bounds_and_traces(grid_run, tmp_path):
    out = tmp_path / "est" / "estimate.json"
    code = main(["estimate", "--manifest", str(grid_run / "manifest.json"), "--out", str(out)])
    assert code in (0, 5)
    rep = json.loads(out.read_text())
    tot = rep["bounds"]["e"]["totals"]
    assert tot["lower_total"] <= tot["exact_error"] <= tot["upper_total"]
    assert code == (5 if tot["budget_exhausted"] else 0)
    assert (out.parent / "trace_e_adj.csv").exists()
    head = (out.parent / "trace_e_adj.csv").read_text().splitlines()[0]
    assert head.split(",")[:3] == ["n", "t", "F"]


def test_estimate_second_order(tmp_path):
    run = build(tmp_path, LAPLACE2, "lap")
    out = tmp_path / "e2.json"
    code = main(["estimate", "--manifest", str(run / "manifest.json"), "--out", str(out)])
    assert code in (0, 5)
    rep = json.loads(out.read_text())
    for part in ("e", "h"):
        tot = rep["bounds"][part]["totals"]
        assert tot["lower_total"] <= tot["exact_error"] <= tot["upper_total"]


def test_decompose_command(grid_run, tmp_path):
    out = tmp_path / "d.json"
    assert main(["decompose", "--manifest", str(grid_run / "manifest.json"), "--out", str(out)]) == 0
    n = json.loads(out.read_text())["norms"]
    assert n["x"] ** 2 == pytest.approx(n["prev"] ** 2 + n["kernel"] ** 2 + n["adj"] ** 2, rel=1e-10)


def test_report_aggregates_and_flags_missing(grid_run, tmp_path):
    runs = tmp_path / "runs"
    (runs / "a").mkdir(parents=True)
    assert main(["estimate", "--manifest", str(grid_run / "manifest.json"), "--out", str(runs / "a" / "e.json")]) in (0, 5)
    out = tmp_path / "table.csv"
    assert main(["report", "--runs", str(runs), "--expect", "a", "b", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("run,status")
    assert any(line.startswith("a/e,ok,estimate") for line in lines)
    assert any(line.startswith("b,missing") for line in lines)


def test_deterministic_output(grid_run, tmp_path):
    outs = []
    for i in range(2):
        out = tmp_path / ("r%d.json" % i)
        main(["estimate", "--manifest", str(grid_run / "manifest.json"), "--out", str(out)])
        outs.append(strip_timestamp(out.read_text()))
    assert outs[0] == outs[1]


# --- exit codes ----------------------------------------------------------------------------


def test_invalid_hole_is_config_error(tmp_path):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[instance]\nkind = grid2d\ncells = 4\nhole = 0:9,1:2\n")
    assert main(["build", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


@pytest.mark.parametrize("text", [
    "[instance]\nkind = torus\n",
    "[instance]\nkind = grid3d\ncells = 2\ngamma_t = w-min\n",
    "[instance]\nkind = path\nn = 4\nlevel = 7\n",
    "[instance]\nkind = grid2d\ncells = 4\n[tolerances]\nbudget = 0\n",
    "[nothing]\n",
])
def test_bad_configs(tmp_path, text):
    cfg = tmp_path / "bad.ini"
    cfg.write_text(text)
    assert main(["build", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_missing_manifest_and_bad_flags(tmp_path):
    assert main(["solve", "--manifest", str(tmp_path / "nope.json")]) == 2
    assert main(["solve"]) == 2
    assert main(["frobnicate"]) == 2


def test_wrong_length_field(grid_run, tmp_path):
    bad = tmp_path / "f.csv"
    write_vector_csv(bad, np.ones(5))
    assert main(["solve", "--manifest", str(grid_run / "manifest.json"), "--f", str(bad)]) == 2


def test_incompatible_f_exit_code(grid_run, tmp_path, capsys):
    cx, man = read_manifest(grid_run / "manifest.json")
    f = read_vector_csv(grid_run / "f.csv") + cx.apply_adj(2, np.arange(cx.dim(3), dtype=float))
    p = tmp_path / "f.csv"
    write_vector_csv(p, f)
    assert main(["solve", "--manifest", str(grid_run / "manifest.json"), "--f", str(p)]) == 3
    err = capsys.readouterr().err
    assert "incompatible data" in err and '"f"' in err
    assert main(["estimate", "--manifest", str(grid_run / "manifest.json"), "--f", str(p)]) == 3


def test_budget_exhausted_exit_code(grid_run, tmp_path):
    assert main(["estimate", "--manifest", str(grid_run / "manifest.json"), "--budget", "1",
                 "--out", str(tmp_path / "e.json")]) == 5


def test_console_script_module_entry(grid_run):
    proc = subprocess.run([sys.executable, "-m", "hilbert_apost.cli", "constants", "--manifest",
                           str(grid_run / "manifest.json"), "--level", "0"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["constants"][0]["level"] == 0


def test_config_inline_comments_and_scalar_epsilon(tmp_path):
    text = "[instance]\nkind = grid2d   # comment\ncells = 4\ngamma_t = all ; other\nepsilon = 2.0\nlevel = 1\n"
    cx, _ = read_manifest(build(tmp_path, text) / "manifest.json")
    # the edge Gram weights scale linearly with epsilon
    ref, _ = read_manifest(build(tmp_path, text.replace("epsilon = 2.0", "epsilon = 1.0"), "ref") / "manifest.json")
    assert np.allclose(cx.gram(1).diag, 2.0 * ref.gram(1).diag)
