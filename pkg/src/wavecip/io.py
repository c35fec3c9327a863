"""CSV readers and writers for traces, fields, iteration logs and summaries.

Every file starts with one ``#`` comment line of ``key=value`` pairs that
records where it came from (config hash, seed, package version).  Floats
are written as their shortest round-trip ``repr``, so reading back is
lossless and two identical runs give identical bytes.
"""

import csv
import io as _io
import math
from pathlib import Path

import numpy as np

from . import __version__
from .exceptions import DataError
from .forward import ObservationTrace
from .refine import SUMMARY_COLUMNS  # noqa: F401

REPORT_COLUMNS = ("test", "delta", "mesh", "max_rho", "err_rho_pct", "N_rho", "max_p",
                  "err_p_pct", "N_p")


def fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return "" if v is None else str(v)


def provenance(cfg=None, seed=None, **extra):
    items = {}
    if cfg is not None:
        items["config"] = cfg.digest()
        items["seed"] = cfg.noise.seed if seed is None else seed
    elif seed is not None:
        items["seed"] = seed
    items.update(extra)
    items["version"] = __version__
    return "# " + " ".join(f"{k}={fmt(v)}" for k, v in items.items())


def parse_header(line, lineno=1):
    line = line.strip()
    if not line.startswith("#"):
        raise DataError(f"line {lineno}: expected a '#' header line")
    out = {}
    for tok in line[1:].split():
        if "=" not in tok:
            raise DataError(f"line {lineno}: malformed header token {tok!r}")
        k, v = tok.split("=", 1)
        out[k] = v
    return out


def _write(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _rows(array):
    return "".join(",".join(map(repr, row)) + "\n" for row in np.atleast_2d(array).tolist())


# traces ---------------------------------------------------------------------

def write_trace(path, trace, cfg=None):
    """Line 1: ``# tau= nt= nodes= ds= ...``; line 2: ``# x1,...``; then one row per step."""
    m = trace.meta
    head = dict(tau=trace.tau, nt=trace.nt, nodes=trace.n_nodes, ds=trace.ds)
    for key in ("test", "delta", "fine"):
        if key in m:
            head[key] = m[key]
    seed = m.get("seed", cfg.noise.seed if cfg is not None else None)
    line1 = ("# " + " ".join(f"{k}={fmt(v)}" for k, v in head.items()) + " "
             + provenance(cfg, seed=seed)[2:])
    line2 = "# x1," + ",".join(map(repr, trace.x1.tolist()))
    _write(path, line1 + "\n" + line2 + "\n" + _rows(trace.values))


def _num(text, lineno, what):
    try:
        v = float(text)
    except ValueError:
        raise DataError(f"line {lineno}: bad {what} {text!r}") from None
    if not math.isfinite(v):
        raise DataError(f"line {lineno}: non-finite {what}")
    return v


def read_trace(path):
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except FileNotFoundError:
        raise DataError(f"trace file not found: {path}") from None
    if len(lines) < 3:
        raise DataError(f"line {len(lines) + 1}: trace file is truncated")
    head = parse_header(lines[0], 1)
    for key in ("tau", "nt", "nodes", "ds"):
        if key not in head:
            raise DataError(f"line 1: header lacks {key}=")
    tau = _num(head["tau"], 1, "tau")
    nt = int(_num(head["nt"], 1, "nt"))
    nodes = int(_num(head["nodes"], 1, "nodes"))
    ds = _num(head["ds"], 1, "ds")
    if not lines[1].startswith("# x1,"):
        raise DataError("line 2: expected '# x1,...' node list")
    x1 = np.array([_num(v, 2, "x1") for v in lines[1][5:].split(",")])
    if x1.size != nodes:
        raise DataError(f"line 2: {x1.size} node abscissae, header says {nodes}")
    body = lines[2:]
    if len(body) != nt + 1:
        raise DataError(f"line {len(lines) + (0 if len(body) > nt + 1 else 1)}: expected "
                        f"{nt + 1} time rows, found {len(body)}")
    values = np.empty((nt + 1, nodes))
    for n, line in enumerate(body):
        lineno = n + 3
        parts = line.split(",")
        if len(parts) != nodes:
            raise DataError(f"line {lineno}: expected {nodes} values, found {len(parts)}")
        values[n] = [_num(v, lineno, "value") for v in parts]
    meta = {}
    if "test" in head:
        meta["test"] = int(_num(head["test"], 1, "test"))
    if "delta" in head:
        meta["delta"] = _num(head["delta"], 1, "delta")
    if "seed" in head:
        meta["seed"] = int(_num(head["seed"], 1, "seed"))
    if "fine" in head:
        meta["fine"] = head["fine"] == "1"
    if "config" in head:
        meta["config"] = head["config"]
    return ObservationTrace(values, x1, tau, nt, ds, meta)


# fields and tables ----------------------------------------------------------

def write_field(path, field, header, names=("rho", "p"), arrays=None):
    """Nodal CSV ``x1,x2,<names>`` in row-major node order."""
    X1, X2 = field.grid.mesh
    arrays = arrays or (field.rho, field.p)
    data = np.column_stack([X1.ravel(), X2.ravel()] + [np.asarray(a).ravel() for a in arrays])
    _write(path, header + "\n" + ",".join(("x1", "x2") + tuple(names)) + "\n" + _rows(data))


def read_field(path):
    """``(header dict, column names, data array)`` of a nodal CSV."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if len(lines) < 2:
        raise DataError(f"line {len(lines) + 1}: field file is truncated")
    head = parse_header(lines[0], 1)
    cols = lines[1].split(",")
    data = []
    for k, line in enumerate(lines[2:], start=3):
        parts = line.split(",")
        if len(parts) != len(cols):
            raise DataError(f"line {k}: expected {len(cols)} columns")
        data.append([_num(v, k, "value") for v in parts])
    return head, cols, np.array(data).reshape(-1, len(cols))


def write_table(path, header, columns, rows):
    buf = _io.StringIO()
    buf.write(header + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(row.get(c)) for c in columns])
    _write(path, buf.getvalue())


def read_table(path):
    """``(header dict, rows as dicts of strings)``."""
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DataError("line 1: empty table")
    head = parse_header(lines[0], 1)
    rows = list(csv.DictReader(lines[1:]))
    return head, rows
