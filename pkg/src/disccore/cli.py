"""disccore command line: build, stream, merge, finalize, query, oracle, bench."""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import harness
from .coreset import WeightedCoreset, build_coreset
from .discrepancy import ENGINES, EXHAUSTIVE_CAP, exhaustive_signs
from .families import KINDS, DomainError, FunctionFamily, exact_sums, prepare_points, sample_queries
from .formats import (DataFormatError, SketchFormatError, coreset_to_text, queries_to_csv,
                      read_any, read_points, read_text, sketch_from_text, sketch_to_text,
                      write_text)
from .streaming import (DEFAULT_N_HINT, POLICIES, CompactorStack, ParameterMismatch, budget_for,
                        finalize, merge)


class CliError(Exception):
    pass


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("DISCCORE_SEED")
    if env is None or env == "":
        return 0
    try:
        return int(env)
    except ValueError:
        raise CliError(f"DISCCORE_SEED must be an integer, got {env!r}") from None


def _report(msg: str):
    print(msg, file=sys.stderr)


def _family_from_args(args, dim: int | None) -> FunctionFamily:
    d = args.dim if args.dim is not None else (dim or 1)
    if dim and args.dim is not None and dim != args.dim:
        raise CliError(f"--dim {args.dim} does not match input dimension {dim}")
    return FunctionFamily(args.family, d, args.bandwidth, args.radius)


def _load_input(args, family_required=True):
    coords, labels = read_points(args.input, args.label_col)
    dim = coords.shape[1] if coords.size else None
    family = _family_from_args(args, dim) if family_required else None
    X = prepare_points(family, coords, labels, rescale=args.rescale) if family else coords
    return family, X


def _load_queries(path, family: FunctionFamily) -> np.ndarray:
    Q, _ = read_points(path)
    if Q.size == 0:
        raise CliError(f"{path}: no queries")
    if Q.shape[1] != family.dim:
        raise CliError(f"{path}: queries have dimension {Q.shape[1]}, family expects {family.dim}")
    return family.check_queries(Q)


def grid_queries(family: FunctionFamily, count: int, data=None, seed: int = 0) -> np.ndarray:
    """Regular grid over the data range for d <= 2; seeded samples otherwise."""
    d = family.dim
    if family.is_inner_product or d > 2:
        return sample_queries(family, count, seed=seed, data=data).queries
    if data is not None and len(data):
        lo, hi = data.min(axis=0), data.max(axis=0)
    else:
        lo, hi = np.zeros(d), np.ones(d)
    if family.is_kernel:
        lo, hi = lo - 3 * family.bandwidth, hi + 3 * family.bandwidth
    if d == 1:
        return np.linspace(lo[0], hi[0], count)[:, None]
    k = max(2, math.isqrt(count))
    gx, gy = np.meshgrid(np.linspace(lo[0], hi[0], k), np.linspace(lo[1], hi[1], k))
    return np.column_stack([gx.ravel(), gy.ravel()])


# -- commands ----------------------------------------------------------------------

def cmd_build(args) -> int:
    family, X = _load_input(args)
    queries = _load_queries(args.queries, family) if args.queries else None
    if args.engine == "exhaustive" and queries is None:
        queries = sample_queries(family, args.n_queries, seed=_seed(args), data=X).queries
    core = build_coreset(family, X, target_size=args.target_size, epsilon=args.epsilon,
                         engine=args.engine, queries=queries)
    # the kept half is never the larger one, so weight can only shrink
    assert core.total_weight <= len(X) + 1e-9, "coreset weight exceeds input size"
    write_text(args.out, coreset_to_text(core))
    _report(f"n={len(X)} size={len(core)} rounds={core.halving_rounds} "
            f"certificate={core.certificate!r} engine={core.engine}")
    return 0


def _new_stack(args, family, seed) -> CompactorStack:
    if args.epsilon is None:
        raise CliError("stream needs --epsilon (or --resume)")
    queries = _load_queries(args.queries, family) if args.queries else None
    budget = budget_for(args.policy, args.epsilon, args.delta, n_hint=args.n_hint, c=args.c,
                        rate=args.rate)
    return CompactorStack.from_budget(family, budget, engine=args.engine, seed=seed, queries=queries)


def cmd_stream(args) -> int:
    if args.resume:
        stack = sketch_from_text(read_text(args.resume))
        fam = stack.family
        if args.family is not None and args.family != fam.kind:
            raise CliError(f"--family {args.family} does not match resumed sketch ({fam.kind})")
        if args.policy is not None and args.policy != stack.policy:
            raise CliError(f"--policy {args.policy} does not match resumed sketch ({stack.policy})")
        coords, labels = read_points(args.input, args.label_col)
        X = prepare_points(fam, coords, labels, rescale=args.rescale)
    else:
        if args.family is None:
            raise CliError("stream needs --family (or --resume)")
        args.policy = args.policy or "det_halving"
        family, X = _load_input(args)
        stack = _new_stack(args, family, _seed(args))
    stack.push_many(X)
    stack.check_invariants()
    write_text(args.out, sketch_to_text(stack))
    _report(f"n={stack.n} H={stack.H} live={stack.live_items} m={stack.m} "
            f"certificate={stack.certificate()!r} random_certificate={stack.random_certificate()!r}")
    return 0


def cmd_merge(args) -> int:
    a = sketch_from_text(read_text(args.a))
    b = sketch_from_text(read_text(args.b))
    out = merge(a, b)
    out.check_invariants()
    write_text(args.out, sketch_to_text(out))
    _report(f"n={out.n} H={out.H} live={out.live_items}")
    return 0


def _as_coreset(obj) -> WeightedCoreset:
    if isinstance(obj, CompactorStack):
        return finalize(obj).coreset
    return obj


def cmd_finalize(args) -> int:
    obj = read_any(args.sketch)
    core = _as_coreset(obj)
    write_text(args.out, coreset_to_text(core))
    _report(f"n={core.source_size} size={len(core)} certificate={core.certificate!r}")
    return 0


def cmd_query(args) -> int:
    core = _as_coreset(read_any(args.sketch))
    family = core.family
    data = None
    if args.data:
        coords, labels = read_points(args.data, args.label_col)
        data = prepare_points(family, coords, labels, rescale=args.rescale)
    if args.queries:
        Q = _load_queries(args.queries, family)
    else:
        ref = data if data is not None else core.points
        Q = grid_queries(family, args.grid, ref, seed=_seed(args))
    est = core.evaluate_many(Q) if len(core) else np.zeros(len(Q))
    cols = {"estimate": est}
    if data is not None:
        exact = exact_sums(family, data, Q)
        cols["exact"] = exact
        cols["abs_error"] = np.abs(exact - est)
        _report(f"queries={len(Q)} max_abs_error={float(cols['abs_error'].max())!r} "
                f"certificate={core.certificate!r}")
    write_text(args.out, queries_to_csv(Q, cols))
    return 0


def cmd_oracle(args) -> int:
    family, X = _load_input(args)
    if len(X) > EXHAUSTIVE_CAP:
        raise CliError(f"oracle input has {len(X)} points; the cap is {EXHAUSTIVE_CAP}")
    if args.queries:
        Q = _load_queries(args.queries, family)
    else:
        Q = sample_queries(family, args.n_queries, seed=_seed(args), data=X).queries
    sa = exhaustive_signs(family, X, Q)
    out = {"m": len(X), "n_queries": len(Q), "signs": sa.signs.tolist(),
           "certificate": sa.certificate, "normalized": sa.certificate / len(X) if len(X) else 0.0}
    write_text(args.out, json.dumps(out, sort_keys=True) + "\n")
    return 0


def cmd_bench(args) -> int:
    with open(args.config) as fh:
        cfg = json.load(fh)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    seed = cfg.get("seed", _seed(args))
    summary = {"scaling": [], "kde": None}
    for i, run in enumerate(cfg.get("scaling", [])):
        name = run.get("name", f"scaling_{i}")
        fam = FunctionFamily(run["family"], run["d"], run.get("bandwidth"), run.get("radius", 1.0))
        res = harness.discrepancy_scaling_experiment(
            fam, run["d"], run["m_values"], trials=run.get("trials", 20), seed=run.get("seed", seed),
            engines=tuple(run.get("engines", ("greedy_kernel", "random"))),
            n_queries=run.get("n_queries", 500), clusters=run.get("clusters"))
        res.write_csv(outdir / f"{name}.csv")
        summary["scaling"].append({"name": name, "slopes": res.slopes, "intercepts": res.intercepts,
                                   "half_slope_intercepts": res.half_slope_intercepts})
        _report(f"{name}: slopes {res.slopes}")
    if cfg.get("kde") is not None:
        kw = dict(cfg["kde"])
        kw.setdefault("seed", seed)
        report = harness.kde_clustered_benchmark(**kw)
        harness.write_json(report, outdir / "kde.json")
        summary["kde"] = {k: v for k, v in report.items() if k != "per_seed"}
        _report(f"kde: greedy wins {report['greedy_wins']}/{report['trials']}")
    harness.write_json(summary, outdir / "summary.json")
    return 0


# -- parser --------------------------------------------------------------------------

def _family_flags(p, required=True):
    p.add_argument("--family", choices=KINDS, required=required)
    p.add_argument("--dim", type=int, help="point dimension (default: inferred from input)")
    p.add_argument("--bandwidth", type=float, help="kernel bandwidth lambda (default 1)")
    p.add_argument("--radius", type=float, default=1.0, help="query norm bound R for inner-product kinds")
    _input_flags(p)


def _input_flags(p):
    p.add_argument("--label-col", type=int, help="CSV column holding a +1/-1 label (negative counts from the end)")
    p.add_argument("--rescale", action="store_true", help="divide all points by the largest norm if it exceeds 1")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="disccore", description=__doc__)
    ap.add_argument("--seed", type=int, default=None, help="RNG seed (default: $DISCCORE_SEED or 0)")
    sub = ap.add_subparsers(dest="command", required=True)
    _add = sub.add_parser

    def add_parser(*a, **kw):
        p = _add(*a, **kw)
        # also accepted after the subcommand; SUPPRESS keeps a global --seed intact
        p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="RNG seed")
        return p

    sub.add_parser = add_parser

    p = sub.add_parser("build", help="offline coreset by repeated halving")
    p.add_argument("input", help="CSV or NDJSON points, '-' for stdin")
    _family_flags(p)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--target-size", type=int)
    g.add_argument("--epsilon", type=float)
    p.add_argument("--engine", choices=ENGINES)
    p.add_argument("--queries", help="query file for the exhaustive engine")
    p.add_argument("--n-queries", type=int, default=200)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("stream", help="push points through a compactor stack")
    p.add_argument("input", help="CSV or NDJSON points, '-' for stdin")
    _family_flags(p, required=False)
    p.add_argument("--policy", choices=POLICIES)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--c", type=float, default=1.0, help="discrepancy constant in the budget")
    p.add_argument("--rate", choices=("inverse", "sqrt"), default="inverse")
    p.add_argument("--n-hint", type=int, default=DEFAULT_N_HINT)
    p.add_argument("--engine", choices=ENGINES)
    p.add_argument("--queries", help="query file (required by the exhaustive engine)")
    p.add_argument("--resume", help="continue from this sketch file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_stream)

    p = sub.add_parser("merge", help="merge two sketch files")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("finalize", help="turn a sketch file into a coreset file")
    p.add_argument("sketch")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_finalize)

    p = sub.add_parser("query", help="evaluate a sketch or coreset at queries (CSV out)")
    p.add_argument("sketch")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--queries")
    g.add_argument("--grid", type=int)
    p.add_argument("--data", help="original points, adds exact and abs_error columns")
    _input_flags(p)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("oracle", help="exhaustive minimum-discrepancy signs for a small input")
    p.add_argument("input")
    _family_flags(p)
    p.add_argument("--queries")
    p.add_argument("--n-queries", type=int, default=200)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("bench", help="run harness experiments from a JSON config")
    p.add_argument("config")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, DataFormatError, SketchFormatError, DomainError, ParameterMismatch,
            ValueError, OSError, AssertionError) as exc:
        print(f"disccore: error: {exc or type(exc).__name__}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
