"""Function families f(x, q), their evaluation and query generation.

Points are stored as float64 arrays of shape (n, d); scalar data for the
quantile family uses d = 1. Labels, when present, are folded into the
points at ingestion (x <- y * x) so nothing downstream needs them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

KERNEL_KINDS = ("gaussian_kernel", "laplacian_kernel", "cauchy_kernel")
INNER_PRODUCT_KINDS = ("logistic_loss", "sigmoid_loss", "covariance")
KINDS = KERNEL_KINDS + INNER_PRODUCT_KINDS + ("quantile_indicator",)

# kinds with an explicit feature map phi and a bound on ||phi(q)||
PSD_KINDS = KERNEL_KINDS + ("covariance",)

EXP_CLAMP = 700.0
NORM_TOL = 1e-12


class DomainError(ValueError):
    """A point or query violates the family's domain."""


@dataclass(frozen=True)
class FunctionFamily:
    kind: str
    dim: int
    bandwidth: float | None = None
    radius: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown family kind {self.kind!r}")
        if int(self.dim) < 1:
            raise ValueError("dim must be a positive integer")
        object.__setattr__(self, "dim", int(self.dim))
        if self.kind in KERNEL_KINDS:
            if self.bandwidth is None:
                object.__setattr__(self, "bandwidth", 1.0)
            if not self.bandwidth > 0:
                raise ValueError("bandwidth must be positive")
            object.__setattr__(self, "bandwidth", float(self.bandwidth))
        elif self.bandwidth is not None:
            raise ValueError(f"{self.kind} takes no bandwidth")
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        object.__setattr__(self, "radius", float(self.radius))
        if self.kind == "quantile_indicator" and self.dim != 1:
            raise ValueError("quantile_indicator requires dim == 1")

    @property
    def is_kernel(self) -> bool:
        return self.kind in KERNEL_KINDS

    @property
    def is_inner_product(self) -> bool:
        return self.kind in INNER_PRODUCT_KINDS

    @property
    def is_psd(self) -> bool:
        return self.kind in PSD_KINDS

    @property
    def feature_norm_bound(self) -> float:
        """Upper bound on ||phi(q)|| over admissible queries (PSD kinds only)."""
        if self.kind == "covariance":
            return self.radius**2
        return 1.0

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "dim": self.dim, "radius": self.radius}
        if self.bandwidth is not None:
            d["bandwidth"] = self.bandwidth
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FunctionFamily":
        return cls(kind=d["kind"], dim=d["dim"], bandwidth=d.get("bandwidth"),
                   radius=d.get("radius", 1.0))

    # -- evaluation ---------------------------------------------------------

    def matrix(self, points, queries) -> np.ndarray:
        """Values f(x_i, q_j) as an (n, k) array."""
        X = self._check_points(points)
        Q = self.check_queries(queries)
        if self.is_kernel:
            d2 = cdist(X, Q, "sqeuclidean")
            return self._kernel_of_sqdist(d2)
        if self.kind == "quantile_indicator":
            return (Q[:, 0][None, :] > X[:, 0][:, None]).astype(np.float64)
        z = X @ Q.T
        if self.kind == "covariance":
            return z * z
        z = np.clip(z, -EXP_CLAMP, EXP_CLAMP)
        if self.kind == "logistic_loss":
            return np.logaddexp(0.0, z)
        return 1.0 / (1.0 + np.exp(z))

    def gram(self, points) -> np.ndarray:
        """Gram matrix of the feature map; only defined for PSD kinds."""
        X = self._check_points(points)
        return self.feature_kernel(X, X)

    def feature_kernel(self, A, B) -> np.ndarray:
        """<phi(a), phi(b)> for rows of A and B, without query-domain checks."""
        if not self.is_psd:
            raise ValueError(f"{self.kind} is not a PSD kernel kind")
        if self.kind == "covariance":
            z = A @ B.T
            return z * z
        return self._kernel_of_sqdist(cdist(A, B, "sqeuclidean"))

    def feature_sq_norms(self, X) -> np.ndarray:
        """K(x, x) for each row."""
        if self.kind == "covariance":
            s = np.einsum("ij,ij->i", X, X)
            return s * s
        return np.ones(len(X))

    def _kernel_of_sqdist(self, d2):
        lam = self.bandwidth
        if self.kind == "gaussian_kernel":
            return np.exp(np.maximum(-d2 / (lam * lam), -EXP_CLAMP))
        if self.kind == "laplacian_kernel":
            return np.exp(np.maximum(-np.sqrt(d2) / lam, -EXP_CLAMP))
        return 1.0 / (1.0 + d2 / (lam * lam))

    def _check_points(self, points) -> np.ndarray:
        X = np.asarray(points, dtype=np.float64)
        if X.ndim == 1 and self.dim == 1:
            X = X[:, None]
        if X.ndim != 2 or X.shape[1] != self.dim:
            raise DomainError(f"points must have shape (n, {self.dim}), got {X.shape}")
        return X

    def check_queries(self, queries) -> np.ndarray:
        Q = np.asarray(queries, dtype=np.float64)
        if Q.ndim == 1:
            Q = Q[:, None] if self.dim == 1 else Q[None, :]
        if Q.ndim != 2 or Q.shape[1] != self.dim:
            raise DomainError(f"queries must have shape (k, {self.dim}), got {Q.shape}")
        if not np.all(np.isfinite(Q)):
            raise DomainError("queries must be finite")
        if self.is_inner_product and len(Q):
            norms = np.linalg.norm(Q, axis=1)
            if np.max(norms) > self.radius * (1 + NORM_TOL):
                raise DomainError(f"query norm {np.max(norms):.6g} exceeds radius {self.radius}")
        return Q


def evaluate(family: FunctionFamily, x, q) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    q = np.atleast_1d(np.asarray(q, dtype=np.float64))
    if x.shape != (family.dim,) or q.shape != (family.dim,):
        raise DomainError(f"expected vectors of length {family.dim}")
    return float(family.matrix(x[None, :], q[None, :])[0, 0])


def sum_evaluate(family: FunctionFamily, points, q) -> float:
    """Exact F(q) = sum_i f(x_i, q) using compensated summation."""
    X = np.asarray(points, dtype=np.float64)
    if X.size == 0:
        return 0.0
    q = np.atleast_1d(np.asarray(q, dtype=np.float64))
    return math.fsum(family.matrix(X, q[None, :])[:, 0].tolist())


def exact_sums(family: FunctionFamily, points, queries, weights=None, chunk: int = 2_000_000) -> np.ndarray:
    """F(q) for every query, each column summed with math.fsum."""
    Q = family.check_queries(queries)
    X = np.asarray(points, dtype=np.float64)
    out = np.zeros(len(Q))
    if X.size == 0 or len(Q) == 0:
        return out
    X = family._check_points(X)
    w = None if weights is None else np.asarray(weights, dtype=np.float64)
    step = max(1, chunk // max(1, len(X)))
    for s in range(0, len(Q), step):
        V = family.matrix(X, Q[s:s + step])
        if w is not None:
            V = V * w[:, None]
        for j in range(V.shape[1]):
            out[s + j] = math.fsum(V[:, j].tolist())
    return out


def prepare_points(family: FunctionFamily, coords, labels=None, rescale: bool = False) -> np.ndarray:
    """Validate raw coordinates and fold labels in.

    For inner-product families every point must satisfy ||x|| <= 1; with
    ``rescale=True`` the whole set is divided by its largest norm instead
    of being rejected.
    """
    X = np.array(coords, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None] if family.dim == 1 else X[None, :]
    if X.size == 0:
        return np.zeros((0, family.dim))
    if X.shape[1] != family.dim:
        raise DomainError(f"points have dimension {X.shape[1]}, family expects {family.dim}")
    if not np.all(np.isfinite(X)):
        raise DomainError("coordinates must be finite")
    if labels is not None and family.kind in ("logistic_loss", "sigmoid_loss", "covariance"):
        y = np.asarray(labels, dtype=np.float64)
        if y.shape != (len(X),) or not np.all(np.abs(y) == 1):
            raise DomainError("labels must be +1 or -1, one per point")
        X = X * y[:, None]
    if family.is_inner_product:
        norms = np.linalg.norm(X, axis=1)
        top = float(norms.max())
        if top > 1 + NORM_TOL:
            if not rescale:
                i = int(np.argmax(norms))
                raise DomainError(f"point {i} has norm {top:.6g} > 1")
            X = X / top
    return X


@dataclass(frozen=True)
class QuerySet:
    queries: np.ndarray
    provenance: tuple = field(default=())

    def __len__(self):
        return len(self.queries)


def _bounds(family, data):
    if data is None or len(data) == 0:
        lo = np.zeros(family.dim)
        return lo, lo + 1.0
    X = family._check_points(data)
    return X.min(axis=0), X.max(axis=0)


def sample_queries(family: FunctionFamily, count: int, seed: int = 0, data=None) -> QuerySet:
    """Deterministic finite query set standing in for the sup over all queries.

    Kernel kinds mix data positions, a grid (d <= 2) and uniform draws from
    the data bounding box inflated by 3 bandwidths. Inner-product kinds draw
    uniform directions with norms in (0, R]. Quantile thresholds mix data
    values and uniform draws in [min, max] of the data.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng([int(seed), count, KINDS.index(family.kind)])
    d = family.dim

    if family.is_inner_product:
        g = rng.standard_normal((count, d))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        r = family.radius * (1.0 - rng.random(count)) ** (1.0 / d)
        return QuerySet(g * r[:, None], ("random_seeded",))

    lo, hi = _bounds(family, data)
    parts, tags = [], []
    n_data = 0
    if data is not None and len(data) and count >= 3:
        X = family._check_points(data)
        n_data = min(count // 3, len(X))
        idx = np.sort(rng.choice(len(X), size=n_data, replace=False))
        parts.append(X[idx])
        tags.append("data_points")
    if family.is_kernel:
        pad = 3.0 * family.bandwidth
        lo, hi = lo - pad, hi + pad
        n_grid = (count - n_data) // 2 if count >= 3 else 0
        if d == 1 and n_grid:
            parts.append(np.linspace(lo[0], hi[0], n_grid)[:, None])
            tags.append("grid")
        elif d == 2 and n_grid:
            k = int(math.isqrt(n_grid))
            if k >= 2:
                gx, gy = np.meshgrid(np.linspace(lo[0], hi[0], k), np.linspace(lo[1], hi[1], k))
                parts.append(np.column_stack([gx.ravel(), gy.ravel()]))
                tags.append("grid")
    used = sum(len(p) for p in parts)
    if count - used > 0:
        parts.append(lo + (hi - lo) * rng.random((count - used, d)))
        tags.append("random_seeded")
    return QuerySet(np.concatenate(parts, axis=0), tuple(tags))


def sphere_queries(family: FunctionFamily, count: int, seed: int = 0) -> QuerySet:
    """Uniform queries on the sphere of radius R (inner-product kinds)."""
    if not family.is_inner_product:
        raise ValueError("sphere_queries is for inner-product families")
    rng = np.random.default_rng([int(seed), count, 7])
    g = rng.standard_normal((count, family.dim))
    g *= family.radius / np.linalg.norm(g, axis=1, keepdims=True)
    return QuerySet(g, ("random_seeded",))
