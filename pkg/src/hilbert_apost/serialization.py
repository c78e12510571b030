"""Manifest, vector and report files.

A manifest is a JSON file next to its operator (Matrix Market) and Gram
(CSV diagonal or Matrix Market matrix) files; all paths inside are relative
to the manifest's directory.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .complex_core import HilbertComplex, WeightedSpace
from .linalg import GramOperator, read_matrix_market, read_vector_csv, write_matrix_market, write_vector_csv

MANIFEST_FORMAT = "hilbert-apost-manifest"
TIMESTAMP_KEY = "generated_at"


def write_manifest(cx: HilbertComplex, out_dir, level=None, data=None, extra_meta=None):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spaces = []
    for i, s in enumerate(cx.spaces):
        if s.gram.is_diagonal:
            fname = "gram_%d.csv" % i
            write_vector_csv(out / fname, s.gram.diag)
            kind = "diagonal"
        else:
            from .linalg import SparseOperator

            fname = "gram_%d.mtx" % i
            write_matrix_market(out / fname, SparseOperator(s.gram.matrix))
            kind = "matrix"
        spaces.append({"dim": s.dim, "gram": fname, "gram_kind": kind, "name": s.name})
    ops = []
    for i, (A, name) in enumerate(zip(cx.ops, cx.names)):
        fname = "op_%d.mtx" % i
        write_matrix_market(out / fname, A)
        ops.append({"file": fname, "label": name, "shape": list(A.shape)})
    meta = {k: v for k, v in cx.meta.items() if _jsonable(v)}
    meta.update(extra_meta or {})
    man = {
        "format": MANIFEST_FORMAT,
        "version": 1,
        "spaces": spaces,
        "operators": ops,
        "level": level if level is not None else 1,
        "data": dict(sorted((data or {}).items())),
        "meta": meta,
    }
    path = out / "manifest.json"
    path.write_text(dumps(man) + "\n", encoding="utf-8")
    return path


def _jsonable(v):
    try:
        json.dumps(v)
        return True
    except TypeError:
        return False


class ManifestError(ValueError):
    pass


def read_manifest(path):
    path = Path(path)
    try:
        man = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError("cannot read manifest %s: %s" % (path, exc)) from exc
    if man.get("format") != MANIFEST_FORMAT:
        raise ManifestError("%s is not a complex manifest" % path)
    base = path.parent
    spaces = []
    try:
        for s in man["spaces"]:
            gfile = base / s["gram"]
            if s.get("gram_kind", "diagonal") == "diagonal":
                gram = GramOperator(diagonal=read_vector_csv(gfile)) if s["dim"] else GramOperator(diagonal=np.zeros(0))
            else:
                gram = GramOperator(matrix=read_matrix_market(gfile).csr)
            spaces.append(WeightedSpace(s["dim"], gram, name=s.get("name")))
        ops = [read_matrix_market(base / o["file"]) for o in man["operators"]]
        names = [o.get("label") for o in man["operators"]]
        cx = HilbertComplex(spaces, ops, names=names, meta=man.get("meta", {}))
    except (KeyError, OSError, ValueError) as exc:
        raise ManifestError("invalid manifest %s: %s" % (path, exc)) from exc
    return cx, man


def data_path(manifest_path, man, key):
    rel = man.get("data", {}).get(key)
    return None if rel is None else Path(manifest_path).parent / rel


# ----------------------------------------------------------------------------
# diff-stable JSON


def _fmt_float(x):
    if math.isnan(x):
        return '"nan"'
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    return "%.17g" % x


def _dump(obj, indent, level, out):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, bool) or obj is None:
        out.append(json.dumps(obj))
    elif isinstance(obj, (float, np.floating)):
        out.append(_fmt_float(float(obj)))
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, str):
        out.append(json.dumps(obj, ensure_ascii=False))
    elif isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{\n")
        items = sorted(obj.items(), key=lambda kv: str(kv[0]))
        for i, (k, v) in enumerate(items):
            out.append(pad + json.dumps(str(k)) + ": ")
            _dump(v, indent, level + 1, out)
            out.append(",\n" if i < len(items) - 1 else "\n")
        out.append(end + "}")
    elif isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            out.append("[]")
            return
        out.append("[\n")
        for i, v in enumerate(seq):
            out.append(pad)
            _dump(v, indent, level + 1, out)
            out.append(",\n" if i < len(seq) - 1 else "\n")
        out.append(end + "]")
    else:
        raise TypeError("cannot serialise %r" % type(obj))


def dumps(obj, indent=2):
    """JSON with sorted keys and every float written with 17 significant digits."""
    out = []
    _dump(obj, indent, 0, out)
    return "".join(out)


def write_report(path, obj, timestamp=None):
    obj = dict(obj)
    if timestamp is not None:
        obj[TIMESTAMP_KEY] = timestamp
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(dumps(obj) + "\n", encoding="utf-8")


def strip_timestamp(text):
    """Report text with the timestamp line removed (for determinism checks)."""
    return "\n".join(line for line in text.splitlines() if not line.strip().startswith('"%s"' % TIMESTAMP_KEY))


def write_trace_csv(path, rows, header=("n", "t", "F", "upper")):
    lines = [",".join(header)]
    for r in rows:
        lines.append(",".join(_fmt_float(float(v)).strip('"') if not isinstance(v, (int, np.integer)) else str(v) for v in r))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


__all__ = [
    "write_manifest", "read_manifest", "data_path", "dumps", "write_report", "strip_timestamp",
    "write_trace_csv", "read_vector_csv", "write_vector_csv", "ManifestError",
]
