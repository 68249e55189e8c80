"""Sign assignments sigma in {-1,+1}^m with small max_q |sum_i sigma_i f(x_i, q)|."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .families import FunctionFamily, QuerySet

EXHAUSTIVE_CAP = 20
ENGINES = ("greedy_kernel", "sorted_quantile", "exhaustive")
# how an engine's certificate scales with the buffer size m
ENGINE_RATE = {"greedy_kernel": "sqrt", "sorted_quantile": "inverse", "exhaustive": "inverse"}

CERT_KINDS = ("gram_bound", "empirical", "exhaustive")


class InvariantError(AssertionError):
    pass


@dataclass(frozen=True)
class SignAssignment:
    signs: np.ndarray
    certificate: float
    certificate_kind: str

    def __len__(self):
        return len(self.signs)

    def flipped(self) -> "SignAssignment":
        return SignAssignment(-self.signs, self.certificate, self.certificate_kind)


def _as_signs(signs) -> np.ndarray:
    if isinstance(signs, SignAssignment):
        signs = signs.signs
    return np.asarray(signs, dtype=np.float64)


def greedy_kernel_signs(family: FunctionFamily, points, check_invariant: bool = False,
                        block: int = 512) -> SignAssignment:
    """Greedy balancing for PSD kernels.

    sigma_1 = +1 and sigma_i = -sign(sum_{j<i} sigma_j K(x_j, x_i)) with
    sign(0) = +1. The running squared norm ||sum_j sigma_j phi(x_j)||^2 is
    carried along, so the Gram certificate costs nothing extra. Cross terms
    are accumulated block-wise; total work is O(m^2) kernel evaluations.
    """
    if not family.is_psd:
        raise ValueError(f"greedy_kernel_signs needs a PSD kernel family, got {family.kind}")
    X = family._check_points(points)
    m = len(X)
    signs = np.empty(m, dtype=np.int8)
    if m == 0:
        return SignAssignment(signs, 0.0, "gram_bound")
    diag = family.feature_sq_norms(X)
    carried = np.zeros(m)  # contributions of finished blocks
    sq_norm = 0.0
    diag_sum = 0.0
    for a in range(0, m, block):
        b = min(a + block, m)
        K = family.feature_kernel(X[a:b], X[a:b])
        sig = np.zeros(b - a)
        for t in range(b - a):
            i = a + t
            r = carried[i] + (K[t, :t] @ sig[:t] if t else 0.0)
            s = 1.0 if i == 0 else (-1.0 if r >= 0 else 1.0)
            sig[t] = s
            sq_norm += diag[i] + 2.0 * s * r
            diag_sum += diag[i]
            if check_invariant and sq_norm > diag_sum * (1 + 1e-12) + 1e-12:
                raise InvariantError(f"prefix {i + 1}: squared norm {sq_norm} > {diag_sum}")
        signs[a:b] = sig
        if b < m:
            carried[b:] += family.feature_kernel(X[a:b], X[b:]).T @ sig
    cert = math.sqrt(max(0.0, sq_norm)) * family.feature_norm_bound
    return SignAssignment(signs, cert, "gram_bound")


def sorted_quantile_signs(points) -> SignAssignment:
    """Alternate signs along the (stable) sorted order; every threshold sees |E| <= 1."""
    X = np.asarray(points, dtype=np.float64)
    if X.ndim == 2:
        if X.shape[1] != 1:
            raise ValueError("sorted_quantile_signs needs scalar points (d == 1)")
        X = X[:, 0]
    elif X.ndim != 1:
        raise ValueError("sorted_quantile_signs needs scalar points (d == 1)")
    m = len(X)
    signs = np.empty(m, dtype=np.int8)
    order = np.argsort(X, kind="stable")
    signs[order] = np.where(np.arange(m) % 2 == 0, 1, -1)
    return SignAssignment(signs, 1.0 if m else 0.0, "gram_bound")


def _sign_block(start: int, stop: int, m: int) -> np.ndarray:
    idx = np.arange(start, stop, dtype=np.int64)
    shifts = np.arange(m - 2, -1, -1, dtype=np.int64)
    bits = (idx[:, None] >> shifts[None, :]) & 1
    S = np.empty((stop - start, m))
    S[:, 0] = 1.0
    S[:, 1:] = 1.0 - 2.0 * bits
    return S


def exhaustive_signs(family: FunctionFamily, points, queries, cap: int = EXHAUSTIVE_CAP) -> SignAssignment:
    """Brute-force minimiser of the max signed sum over a finite query set.

    sigma_1 is pinned to +1. Among equal optima the lexicographically
    smallest sigma wins, ordering +1 before -1.
    """
    X = family._check_points(points)
    m = len(X)
    if m > cap:
        raise ValueError(f"exhaustive_signs is capped at m <= {cap}, got {m}")
    if m == 0:
        return SignAssignment(np.empty(0, dtype=np.int8), 0.0, "exhaustive")
    Q = queries.queries if isinstance(queries, QuerySet) else queries
    V = family.matrix(X, Q)
    total = 1 << (m - 1)
    step = max(1, min(total, (1 << 22) // max(1, V.shape[1])))
    best_val, best_idx = math.inf, 0
    for start in range(0, total, step):
        stop = min(total, start + step)
        vals = np.abs(_sign_block(start, stop, m) @ V).max(axis=1)
        j = int(np.argmin(vals))
        if vals[j] < best_val:
            best_val, best_idx = float(vals[j]), start + j
    signs = _sign_block(best_idx, best_idx + 1, m)[0].astype(np.int8)
    cert = empirical_discrepancy(family, X, signs, Q)
    return SignAssignment(signs, cert, "exhaustive")


def empirical_discrepancy(family: FunctionFamily, points, signs, queries, normalized: bool = False) -> float:
    """max over the queries of |sum_i sigma_i f(x_i, q)|, or that value / m."""
    s = _as_signs(signs)
    X = family._check_points(points)
    if len(s) != len(X):
        raise ValueError("signs and points differ in length")
    Q = queries.queries if isinstance(queries, QuerySet) else queries
    if len(X) == 0 or len(Q) == 0:
        return 0.0
    val = float(np.abs(s @ family.matrix(X, Q)).max())
    return val / len(X) if normalized else val


def gram_certificate(family: FunctionFamily, points, signs, block: int = 2048) -> float:
    """sqrt(sigma^T G sigma) scaled by the query feature-norm bound.

    Sound upper bound on sup_q |sum_i sigma_i K(x_i, q)| over every
    admissible query, via Cauchy-Schwarz in feature space.
    """
    if not family.is_psd:
        raise ValueError(f"gram_certificate needs a PSD kernel family, got {family.kind}")
    s = _as_signs(signs)
    X = family._check_points(points)
    if len(s) != len(X):
        raise ValueError("signs and points differ in length")
    total = 0.0
    for a in range(0, len(X), block):
        total += float(s[a:a + block] @ (family.feature_kernel(X[a:a + block], X) @ s))
    return math.sqrt(max(0.0, total)) * family.feature_norm_bound


def assign_signs(engine: str, family: FunctionFamily, points, queries=None) -> SignAssignment:
    """Dispatch to a sign engine by name."""
    if engine == "greedy_kernel":
        return greedy_kernel_signs(family, points)
    if engine == "sorted_quantile":
        if family.dim != 1:
            raise ValueError("sorted_quantile engine needs a scalar family")
        return sorted_quantile_signs(points)
    if engine == "exhaustive":
        if queries is None:
            raise ValueError("exhaustive engine needs a query set")
        return exhaustive_signs(family, points, queries)
    raise ValueError(f"unknown engine {engine!r}; expected one of {ENGINES}")


def default_engine(family: FunctionFamily) -> str:
    if family.kind == "quantile_indicator":
        return "sorted_quantile"
    if family.is_psd:
        return "greedy_kernel"
    return "exhaustive"
