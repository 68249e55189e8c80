"""Offline coresets by iterated halving, and weighted-coreset evaluation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .discrepancy import ENGINE_RATE, SignAssignment, assign_signs, default_engine
from .families import FunctionFamily, QuerySet, exact_sums


@dataclass(frozen=True)
class WeightedCoreset:
    """Points with positive weights; F~(q) = sum_i w_i f(x_i, q).

    ``certificate`` bounds |F~(q) - F(q)| for every admissible q when the
    engine certificates are sound bounds (gram_bound); for the exhaustive
    engine it only holds on the query set used for sign selection.
    """

    family: FunctionFamily
    points: np.ndarray
    weights: np.ndarray
    source_size: int
    halving_rounds: int = 0
    certificate: float = 0.0
    round_certificates: tuple = field(default=())
    engine: str | None = None

    def __len__(self):
        return len(self.points)

    @property
    def total_weight(self) -> float:
        return math.fsum(self.weights.tolist())

    def evaluate(self, q) -> float:
        return coreset_evaluate(self, q)

    def evaluate_many(self, queries) -> np.ndarray:
        Q = queries.queries if isinstance(queries, QuerySet) else queries
        return exact_sums(self.family, self.points, Q, weights=self.weights)


def coreset_evaluate(coreset: WeightedCoreset, q) -> float:
    if len(coreset) == 0:
        return 0.0
    q = np.atleast_1d(np.asarray(q, dtype=np.float64))
    return float(coreset.evaluate_many(q[None, :])[0])


class HalvingResult(NamedTuple):
    points: np.ndarray
    weights: np.ndarray
    certificate: float
    signs: SignAssignment | None


def halve(family: FunctionFamily, points, weights=1.0, engine: str | None = None,
          queries=None) -> HalvingResult:
    """Split by a sign engine and keep the smaller half at double weight.

    On equal halves the +1 half is kept. The returned certificate is the
    engine certificate times the common input weight.
    """
    engine = engine or default_engine(family)
    X = family._check_points(points) if np.size(points) else np.zeros((0, family.dim))
    w = np.broadcast_to(np.asarray(weights, dtype=np.float64), (len(X),))
    if len(X) == 0:
        return HalvingResult(X, np.zeros(0), 0.0, None)
    if np.any(w != w[0]):
        raise ValueError("halve needs uniform input weights")
    if not w[0] > 0:
        raise ValueError("weights must be positive")
    sa = assign_signs(engine, family, X, queries)
    plus = sa.signs == 1
    n_plus = int(plus.sum())
    keep = plus if n_plus <= len(X) - n_plus else ~plus
    kept = X[keep]
    return HalvingResult(kept, np.full(len(kept), 2.0 * w[0]), sa.certificate * float(w[0]), sa)


def target_from_epsilon(epsilon: float, engine: str) -> int:
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    if ENGINE_RATE[engine] == "sqrt":
        return math.ceil(1.0 / epsilon**2)
    return math.ceil(1.0 / epsilon)


def build_coreset(family: FunctionFamily, points, target_size: int | None = None,
                  epsilon: float | None = None, engine: str | None = None,
                  queries=None) -> WeightedCoreset:
    """Halve repeatedly until at most ``target_size`` points remain.

    With ``epsilon`` the target is ceil(1/eps^2) for sqrt-rate engines and
    ceil(1/eps) for 1/m-rate engines. The certificate accumulates the
    weighted per-round certificates.
    """
    engine = engine or default_engine(family)
    if (target_size is None) == (epsilon is None):
        raise ValueError("give exactly one of target_size and epsilon")
    m = target_size if target_size is not None else target_from_epsilon(epsilon, engine)
    if m < 1:
        raise ValueError("target_size must be >= 1")
    X = family._check_points(points) if np.size(points) else np.zeros((0, family.dim))
    n = len(X)
    w = np.ones(n)
    rounds, certs = 0, []
    while len(X) > m:
        X, w, cert, _ = halve(family, X, w, engine, queries)
        certs.append(cert)
        rounds += 1
    return WeightedCoreset(family, X, w, n, rounds, math.fsum(certs), tuple(certs), engine)


def random_sample_coreset(family: FunctionFamily, points, size: int, seed: int = 0) -> WeightedCoreset:
    """Uniform sample without replacement, each point weighted n / size."""
    X = family._check_points(points)
    n = len(X)
    size = min(size, n)
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(n, size=size, replace=False))
    return WeightedCoreset(family, X[idx], np.full(size, n / size if size else 0.0), n,
                           certificate=math.inf, engine="uniform_sample")


class ErmResult(NamedTuple):
    q_star: np.ndarray
    q_tilde: np.ndarray
    gap: float
    bound: float

    @property
    def ok(self) -> bool:
        return self.gap <= self.bound + 1e-12


def erm_transfer_check(family: FunctionFamily, points, coreset: WeightedCoreset, queries) -> ErmResult:
    """Risk gap between the full-data minimiser and the coreset minimiser.

    Both argmins run over the finite query set. gap = (F(q~) - F(q*)) / n
    and the bound is 2 * certificate / n.
    """
    Q = queries.queries if isinstance(queries, QuerySet) else np.asarray(queries, dtype=np.float64)
    if len(Q) == 0:
        raise ValueError("erm_transfer_check needs at least one query")
    n = len(points)
    F = exact_sums(family, points, Q)
    Ft = coreset.evaluate_many(Q)
    i_star, i_tilde = int(np.argmin(F)), int(np.argmin(Ft))
    if n == 0:
        return ErmResult(Q[i_star], Q[i_tilde], 0.0, 0.0)
    gap = (F[i_tilde] - F[i_star]) / n
    return ErmResult(Q[i_star], Q[i_tilde], float(gap), 2.0 * coreset.certificate / n)
