"""Ground-truth error sweeps and the discrepancy / KDE experiments."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .coreset import build_coreset, random_sample_coreset
from .discrepancy import (EXHAUSTIVE_CAP, assign_signs, empirical_discrepancy)
from .families import FunctionFamily, QuerySet, exact_sums, sample_queries
from .streaming import SketchSummary

SCALING_COLUMNS = ("engine", "m", "d", "trials", "mean_disc", "stderr")


class SweepResult(NamedTuple):
    max_abs_error: float
    mean_abs_error: float
    errors: np.ndarray


def error_sweep(family: FunctionFamily, points, summary, queries) -> SweepResult:
    """|F(q) - F~(q)| for every query; F by compensated summation over the data."""
    coreset = summary.coreset if isinstance(summary, SketchSummary) else summary
    Q = queries.queries if isinstance(queries, QuerySet) else queries
    exact = exact_sums(family, points, Q)
    approx = coreset.evaluate_many(Q) if len(coreset) else np.zeros(len(exact))
    err = np.abs(exact - approx)
    if len(err) == 0:
        return SweepResult(0.0, 0.0, err)
    return SweepResult(float(err.max()), float(err.mean()), err)


def make_points(family: FunctionFamily, m: int, rng, clusters: int | None = None) -> np.ndarray:
    """Synthetic data for experiments.

    Kernel kinds: standard normal scaled by the bandwidth, or a mixture of
    ``clusters`` tight blobs. Inner-product kinds: uniform in the unit ball.
    Quantile: uniform on [0, 1].
    """
    d = family.dim
    if family.kind == "quantile_indicator":
        return rng.random((m, 1))
    if family.is_inner_product:
        g = rng.standard_normal((m, d))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        return g * (rng.random(m) ** (1.0 / d))[:, None]
    lam = family.bandwidth
    if not clusters:
        return lam * rng.standard_normal((m, d))
    centers = rng.uniform(-8 * lam, 8 * lam, size=(clusters, d))
    labels = rng.integers(0, clusters, m)
    return centers[labels] + 0.3 * lam * rng.standard_normal((m, d))


@dataclass
class ScalingResult:
    rows: list
    slopes: dict
    intercepts: dict
    # intercept of a line with slope -1/2 through the points (least squares)
    half_slope_intercepts: dict = None

    def write_csv(self, path):
        write_table(self.rows, path)


def write_table(rows, path, columns=SCALING_COLUMNS):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow(r)


def _engine_signs(engine, family, X, queries, rng):
    if engine == "random":
        return rng.choice(np.array([-1, 1], dtype=np.int8), size=len(X))
    return assign_signs(engine, family, X, queries).signs


def discrepancy_scaling_experiment(family: FunctionFamily, d: int, m_values, trials: int = 20,
                                   seed: int = 0, engines=("greedy_kernel", "random"),
                                   n_queries: int = 500, clusters: int | None = None) -> ScalingResult:
    """Mean normalized empirical discrepancy per (engine, m), with log-log fits.

    Each trial draws fresh points and a query set built from them; every
    engine is scored on the same points and queries.
    """
    if family.dim != d:
        family = FunctionFamily(family.kind, d, family.bandwidth, family.radius)
    rows = []
    table = {e: [] for e in engines}
    for m in m_values:
        vals = {e: [] for e in engines}
        for t in range(trials):
            rng = np.random.default_rng([seed, m, t])
            X = make_points(family, m, rng, clusters)
            Q = sample_queries(family, n_queries, seed=seed * 1_000_003 + m * 1009 + t, data=X)
            if family.kind == "quantile_indicator":
                # every distinct threshold interval, plus the sampled ones
                xs = np.sort(X[:, 0])
                mids = np.concatenate([[xs[0] - 1], (xs[:-1] + xs[1:]) / 2, [xs[-1] + 1]])
                Q = QuerySet(np.concatenate([Q.queries, mids[:, None]]), Q.provenance + ("grid",))
            for e in engines:
                if e == "exhaustive" and m > EXHAUSTIVE_CAP:
                    continue
                s = _engine_signs(e, family, X, Q, rng)
                vals[e].append(empirical_discrepancy(family, X, s, Q, normalized=True))
        for e in engines:
            v = np.asarray(vals[e])
            if len(v) == 0:
                continue
            mean = float(v.mean())
            se = float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else 0.0
            rows.append({"engine": e, "m": m, "d": d, "trials": len(v), "mean_disc": mean, "stderr": se})
            table[e].append((m, mean))
    slopes, intercepts, half = {}, {}, {}
    for e, pts in table.items():
        pts = [(m, v) for m, v in pts if v > 0]
        if pts:
            lm, lv = np.log([p[0] for p in pts]), np.log([p[1] for p in pts])
            half[e] = float(np.mean(lv + 0.5 * lm))
        if len(pts) >= 2:
            slope, icpt = np.polyfit(lm, lv, 1)
            slopes[e], intercepts[e] = float(slope), float(icpt)
    return ScalingResult(rows, slopes, intercepts, half)


def kde_clustered_benchmark(n: int = 4096, clusters: int = 10, bandwidth: float = 1.0, m: int = 64,
                            seed: int = 0, trials: int = 20, d: int = 2, n_queries: int = 1000) -> dict:
    """Greedy-halving coreset against a uniform sample of equal size on clustered data."""
    family = FunctionFamily("gaussian_kernel", d, bandwidth)
    per_seed = []
    for t in range(trials):
        rng = np.random.default_rng([seed, t])
        X = make_points(family, n, rng, clusters)
        Q = sample_queries(family, n_queries, seed=seed * 7919 + t, data=X)
        greedy = build_coreset(family, X, target_size=m, engine="greedy_kernel")
        uniform = random_sample_coreset(family, X, len(greedy), seed=seed * 104729 + t)
        g_err = error_sweep(family, X, greedy, Q).max_abs_error
        u_err = error_sweep(family, X, uniform, Q).max_abs_error
        per_seed.append({"seed": t, "size": len(greedy), "greedy_max_error": g_err,
                         "certificate": greedy.certificate, "uniform_max_error": u_err})
    g = np.array([r["greedy_max_error"] for r in per_seed])
    u = np.array([r["uniform_max_error"] for r in per_seed])
    return {
        "n": n, "clusters": clusters, "bandwidth": bandwidth, "m": m, "d": d,
        "trials": trials, "seed": seed,
        "greedy_mean_max_error": float(g.mean()),
        "uniform_mean_max_error": float(u.mean()),
        "mean_certificate": float(np.mean([r["certificate"] for r in per_seed])),
        "greedy_wins": int((g < u).sum()),
        "certificate_sound": bool(all(r["greedy_max_error"] <= r["certificate"] + 1e-9 for r in per_seed)),
        "per_seed": per_seed,
    }


def write_json(report: dict, path):
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")

