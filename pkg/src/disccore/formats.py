"""On-disk formats: point input (CSV / NDJSON), coreset and sketch NDJSON files.

Every file written here starts with a header record carrying ``format`` and
``format_version``. JSON is emitted with sorted keys and compact separators
and floats in shortest round-trip form, so a read/write cycle reproduces
the file byte for byte.
"""

from __future__ import annotations

import csv
import io
import json
import sys

import numpy as np

from .coreset import WeightedCoreset
from .families import FunctionFamily
from .streaming import Budget, Compactor, CompactorStack

SKETCH_FORMAT = "disccore-sketch"
CORESET_FORMAT = "disccore-coreset"
SKETCH_VERSION = 1
CORESET_VERSION = 1


class DataFormatError(ValueError):
    pass


class SketchFormatError(ValueError):
    pass


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def _open_text(path):
    if path == "-":
        return sys.stdin
    return open(path, "r", newline="")


# -- point input ---------------------------------------------------------------

def _parse_ndjson(lines):
    coords, labels = [], []
    for lineno, line in lines:
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"line {lineno}: invalid JSON ({exc.msg})") from None
        if not isinstance(rec, dict):
            raise DataFormatError(f"line {lineno}: expected a JSON object")
        x = rec.get("x", rec.get("q"))
        if isinstance(x, (int, float)):
            x = [x]
        if not isinstance(x, list) or not x:
            raise DataFormatError(f"line {lineno}: missing coordinate list 'x'")
        try:
            coords.append([float(v) for v in x])
        except (TypeError, ValueError):
            raise DataFormatError(f"line {lineno}: non-numeric coordinate") from None
        labels.append(rec.get("y"))
        if coords[-1] and len(coords[-1]) != len(coords[0]):
            raise DataFormatError(f"line {lineno}: expected {len(coords[0])} coordinates, got {len(coords[-1])}")
    return coords, labels


def _parse_csv(lines, label_col):
    coords, labels = [], []
    width = None
    for k, (lineno, line) in enumerate(lines):
        row = next(csv.reader([line]))
        try:
            vals = [float(v) for v in row]
        except ValueError:
            if k == 0:
                continue  # header row
            raise DataFormatError(f"line {lineno}: non-numeric field in {line.strip()!r}") from None
        if width is None:
            width = len(vals)
        elif len(vals) != width:
            raise DataFormatError(f"line {lineno}: expected {width} fields, got {len(vals)}")
        y = None
        if label_col is not None:
            try:
                y = vals.pop(label_col)
            except IndexError:
                raise DataFormatError(f"line {lineno}: no label column {label_col}") from None
        coords.append(vals)
        labels.append(y)
    return coords, labels


def read_points(path, label_col: int | None = None):
    """Read points from CSV or NDJSON (sniffed from the first record).

    Returns (coords array of shape (n, d), labels array or None). Blank
    lines and lines starting with '#' are skipped.
    """
    fh = _open_text(path)
    try:
        lines = [(i, ln) for i, ln in enumerate(fh, start=1)
                 if ln.strip() and not ln.lstrip().startswith("#")]
    finally:
        if fh is not sys.stdin:
            fh.close()
    if not lines:
        return np.zeros((0, 0)), None
    if lines[0][1].lstrip().startswith("{"):
        coords, labels = _parse_ndjson(lines)
    else:
        coords, labels = _parse_csv(lines, label_col)
    if not coords:
        return np.zeros((0, 0)), None
    X = np.asarray(coords, dtype=np.float64)
    if all(y is None for y in labels):
        return X, None
    if any(y is None for y in labels):
        raise DataFormatError("labels given for some points but not all")
    y = np.asarray(labels, dtype=np.float64)
    bad = np.flatnonzero(np.abs(y) != 1)
    if len(bad):
        raise DataFormatError(f"line {lines[bad[0]][0]}: label must be +1 or -1")
    return X, y


# -- coresets --------------------------------------------------------------------

def coreset_to_text(core: WeightedCoreset) -> str:
    head = {
        "format": CORESET_FORMAT, "format_version": CORESET_VERSION,
        "family": core.family.to_dict(), "source_size": int(core.source_size),
        "size": len(core), "certificate": float(core.certificate),
        "halving_rounds": int(core.halving_rounds),
        "round_certificates": [float(c) for c in core.round_certificates],
        "engine": core.engine,
    }
    out = [_dumps(head)]
    for x, w in zip(core.points.tolist(), core.weights.tolist()):
        out.append(_dumps({"w": w, "x": x}))
    return "\n".join(out) + "\n"


def coreset_from_text(text: str) -> WeightedCoreset:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise SketchFormatError("empty coreset file")
    head = json.loads(lines[0])
    if head.get("format") != CORESET_FORMAT:
        raise SketchFormatError(f"not a coreset file (format={head.get('format')!r})")
    if head.get("format_version") != CORESET_VERSION:
        raise SketchFormatError(f"unsupported coreset format_version {head.get('format_version')!r}")
    family = FunctionFamily.from_dict(head["family"])
    recs = [json.loads(ln) for ln in lines[1:]]
    P = np.asarray([r["x"] for r in recs], dtype=np.float64).reshape(len(recs), family.dim)
    W = np.asarray([r["w"] for r in recs], dtype=np.float64)
    return WeightedCoreset(family, P, W, head["source_size"], head["halving_rounds"],
                           head["certificate"], tuple(head["round_certificates"]), head["engine"])


# -- sketches --------------------------------------------------------------------

def sketch_to_text(stack: CompactorStack) -> str:
    budget = getattr(stack, "budget", None)
    head = {
        "format": SKETCH_FORMAT, "format_version": SKETCH_VERSION,
        "family": stack.family.to_dict(), "policy": stack.policy, "engine": stack.engine,
        "m": stack.m, "seed": stack.seed, "h_prime_offset": stack.h_prime_offset,
        "n_tilde": stack.n_tilde, "epsilon": stack.epsilon, "delta": stack.delta,
        "n": stack.n, "H": stack.H, "h_prime": stack.h_prime,
        "certificate": stack.certificate(), "random_certificate": stack.random_certificate(),
        "queries": None if stack.queries is None else stack.queries.tolist(),
        "budget": None if budget is None else {
            "c": budget.c, "rate": budget.rate, "n_hint": budget.n_hint},
    }
    out = [_dumps(head)]
    dim = stack.family.dim
    for c in stack.levels:
        out.append(_dumps({
            "level": c.level, "capacity": c.capacity, "mode": c.mode, "count": c.count,
            "compactions": c.compactions, "certificate": c.certificate,
            "random_certificate": c.random_certificate, "points": c.items(dim).tolist(),
        }))
    return "\n".join(out) + "\n"


def sketch_from_text(text: str) -> CompactorStack:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise SketchFormatError("empty sketch file")
    try:
        head = json.loads(lines[0])
    except json.JSONDecodeError:
        raise SketchFormatError("sketch header is not valid JSON") from None
    if head.get("format") != SKETCH_FORMAT:
        raise SketchFormatError(f"not a sketch file (format={head.get('format')!r})")
    if head.get("format_version") != SKETCH_VERSION:
        raise SketchFormatError(f"unsupported sketch format_version {head.get('format_version')!r}")
    family = FunctionFamily.from_dict(head["family"])
    stack = CompactorStack(family, head["m"], head["policy"], head["engine"], head["seed"],
                           head["h_prime_offset"], head["n_tilde"], head["queries"],
                           head["epsilon"], head["delta"])
    if head.get("budget") is not None:
        b = head["budget"]
        stack.budget = Budget(head["policy"], head["m"], head["epsilon"], head["delta"], b["c"],
                              b["rate"], b["n_hint"], head["h_prime_offset"], head["n_tilde"])
    stack.n = head["n"]
    levels = []
    for h, ln in enumerate(lines[1:]):
        r = json.loads(ln)
        if r["level"] != h:
            raise SketchFormatError(f"level records out of order at level {h}")
        c = Compactor(h, r["capacity"], r["mode"], r["count"], r["compactions"],
                      r["certificate"], r["random_certificate"])
        pts = np.asarray(r["points"], dtype=np.float64).reshape(len(r["points"]), family.dim)
        c.append(pts)
        levels.append(c)
    if len(levels) != head["H"] + 1:
        raise SketchFormatError(f"header says H={head['H']} but {len(levels)} levels follow")
    stack.levels = levels
    return stack


def write_text(path, text: str):
    if path == "-":
        sys.stdout.write(text)
        return
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


def read_text(path) -> str:
    if path == "-":
        return sys.stdin.read()
    with open(path, "r") as fh:
        return fh.read()


def read_any(path):
    """Load a sketch or coreset file, dispatching on the header's format tag."""
    text = read_text(path)
    first = text.lstrip().split("\n", 1)[0]
    try:
        fmt = json.loads(first).get("format")
    except (json.JSONDecodeError, AttributeError):
        raise SketchFormatError(f"{path}: not a disccore file") from None
    if fmt == SKETCH_FORMAT:
        return sketch_from_text(text)
    if fmt == CORESET_FORMAT:
        return coreset_from_text(text)
    raise SketchFormatError(f"{path}: unknown format {fmt!r}")


def queries_to_csv(Q, columns: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    d = Q.shape[1]
    w.writerow([f"q{i}" for i in range(d)] + list(columns))
    cols = [np.asarray(v) for v in columns.values()]
    for j in range(len(Q)):
        w.writerow([repr(float(v)) for v in Q[j]] + [repr(float(c[j])) for c in cols])
    return buf.getvalue()
