"""Mergeable streaming coresets built from stacks of compactors.

A compactor at level h holds items of weight 2^h. When its buffer reaches
capacity it splits the buffer with a sign engine and forwards one half, at
weight 2^(h+1), to level h+1. Three policies are supported:

det_halving
    every level is deterministic and forwards the smaller half.
kll_shrinking
    levels h <= H' = H - offset forward X+ or X- with probability 1/2 and
    shrink their capacity to max(2, ceil((2/3)^(H'-h) m)); capacity 2 means
    plain pair sampling.
sample_then_sketch
    a level that has seen more than n_tilde items switches to pair sampling
    (keep one item of each consecutive pair uniformly at random).

Randomness is keyed by (seed, level, compaction index), so the result does
not depend on how the input is batched.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np

from .coreset import WeightedCoreset
from .discrepancy import ENGINE_RATE, assign_signs, default_engine
from .families import FunctionFamily, QuerySet

POLICIES = ("det_halving", "kll_shrinking", "sample_then_sketch")
MODES = ("deterministic", "shrinking", "reservoir")
DEFAULT_N_HINT = 2**64
COIN_BLOCK = 4096


class ParameterMismatch(ValueError):
    pass


@dataclass(frozen=True)
class Budget:
    policy: str
    m: int
    epsilon: float
    delta: float | None = None
    c: float = 1.0
    rate: str = "inverse"
    n_hint: int = DEFAULT_N_HINT
    h_prime_offset: int | None = None
    n_tilde: int | None = None


def _det_m(epsilon, n, c, rate):
    if rate == "inverse":
        return math.ceil(4 * c * math.log(max(2.0, epsilon * n / c)) / epsilon)
    return math.ceil(4 * c * c * math.log(max(2.0, epsilon**2 * n / c**2)) ** 2 / epsilon**2)


def budget_for(policy: str, epsilon: float, delta: float | None = None,
               n_hint: int = DEFAULT_N_HINT, c: float = 1.0, rate: str = "inverse") -> Budget:
    """Concrete buffer sizes for a target additive error epsilon * n.

    det_halving:  m = ceil(4c ln(max(2, eps n/c)) / eps)            (1/m rate)
                  m = ceil(4c^2 ln^2(max(2, eps^2 n/c^2)) / eps^2)  (1/sqrt(m) rate)
    sample_then_sketch: n_tilde = ceil(8 ln(2/delta) / eps^2), m as above
                  with n = 2 n_tilde
    kll_shrinking: offset L = ceil(log2 log2(max(4, n_hint/delta))),
                  H' = H - L, m = ceil(4c(L+1)/eps) or ceil(4c^2(L+1)^2/eps^2)
    """
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}")
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    if delta is not None and not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if rate not in ("inverse", "sqrt"):
        raise ValueError("rate must be 'inverse' or 'sqrt'")
    if n_hint < 1 or c <= 0:
        raise ValueError("n_hint must be >= 1 and c > 0")
    if policy == "det_halving":
        m = _det_m(epsilon, n_hint, c, rate)
        return Budget(policy, max(2, m), epsilon, delta, c, rate, n_hint)
    if delta is None:
        raise ValueError(f"{policy} needs delta")
    if policy == "sample_then_sketch":
        n_tilde = math.ceil(8 * math.log(2 / delta) / epsilon**2)
        m = _det_m(epsilon, 2 * n_tilde, c, rate)
        return Budget(policy, max(2, m), epsilon, delta, c, rate, n_hint, n_tilde=n_tilde)
    L = math.ceil(math.log2(math.log2(max(4.0, n_hint / delta))))
    if rate == "inverse":
        m = math.ceil(4 * c * (L + 1) / epsilon)
    else:
        m = math.ceil(4 * c * c * (L + 1) ** 2 / epsilon**2)
    return Budget(policy, max(2, m), epsilon, delta, c, rate, n_hint, h_prime_offset=L)


def shrunk_capacity(m: int, h: int, h_prime: int) -> int:
    """max(2, ceil((2/3)^(H'-h) m)) in exact integer arithmetic."""
    if h > h_prime:
        return m
    k = h_prime - h
    return max(2, -(-m * 2**k // 3**k))


def pair_bounds(family: FunctionFamily, engine: str, A, B, queries=None) -> np.ndarray:
    """Per-pair bound on |f(a,q) - f(b,q)|, the error of keeping one of (a, b)."""
    if engine == "greedy_kernel":
        if family.kind == "covariance":
            kab = np.einsum("ij,ij->i", A, B) ** 2
        else:
            kab = family._kernel_of_sqdist(np.einsum("ij,ij->i", A - B, A - B))
        d = family.feature_sq_norms(A) + family.feature_sq_norms(B) - 2 * kab
        return np.sqrt(np.maximum(d, 0.0)) * family.feature_norm_bound
    if engine == "sorted_quantile":
        return np.ones(len(A))
    return np.abs(family.matrix(A, queries) - family.matrix(B, queries)).max(axis=1)


@dataclass
class Compactor:
    level: int
    capacity: int
    mode: str = "deterministic"
    count: int = 0            # n_h, items observed
    compactions: int = 0      # index for the RNG; each sampled pair counts once
    certificate: float = 0.0  # deterministic compactions, weighted
    random_certificate: float = 0.0  # worst case of randomized compactions, weighted
    chunks: list = field(default_factory=list)
    size: int = 0

    @property
    def weight(self) -> float:
        return float(2**self.level)

    def __len__(self):
        return self.size

    def append(self, X):
        if len(X):
            self.chunks.append(X)
            self.size += len(X)

    def items(self, dim: int) -> np.ndarray:
        if not self.chunks:
            return np.zeros((0, dim))
        if len(self.chunks) > 1:
            self.chunks = [np.concatenate(self.chunks, axis=0)]
        return self.chunks[0]

    def take_all(self, dim: int) -> np.ndarray:
        X = self.items(dim)
        self.chunks, self.size = [], 0
        return X


@dataclass(frozen=True)
class SketchSummary:
    coreset: WeightedCoreset
    level_compactions: tuple
    certificate: float
    random_certificate: float
    policy: str
    epsilon: float | None = None
    delta: float | None = None

    @property
    def worst_case_bound(self) -> float:
        return self.certificate + self.random_certificate

    def evaluate(self, q) -> float:
        return self.coreset.evaluate(q)

    def evaluate_many(self, queries) -> np.ndarray:
        return self.coreset.evaluate_many(queries)


class CompactorStack:
    """Levels 0..H of compactors; the union of live buffers is the sketch."""

    def __init__(self, family: FunctionFamily, m: int, policy: str = "det_halving",
                 engine: str | None = None, seed: int = 0, h_prime_offset: int | None = None,
                 n_tilde: int | None = None, queries=None, epsilon: float | None = None,
                 delta: float | None = None, debug: bool = False):
        if policy not in POLICIES:
            raise ValueError(f"unknown policy {policy!r}")
        if m < 2:
            raise ValueError("base budget m must be >= 2")
        if policy == "kll_shrinking" and h_prime_offset is None:
            raise ValueError("kll_shrinking needs h_prime_offset")
        if policy == "sample_then_sketch" and n_tilde is None:
            raise ValueError("sample_then_sketch needs n_tilde")
        if seed < 0:
            raise ValueError("seed must be non-negative")
        self.family = family
        self.m = int(m)
        self.policy = policy
        self.engine = engine or default_engine(family)
        if self.engine not in ENGINE_RATE:
            raise ValueError(f"unknown engine {self.engine!r}")
        if self.engine == "exhaustive" and queries is None:
            raise ValueError("exhaustive engine needs a query set")
        self.queries = None if queries is None else family.check_queries(
            queries.queries if isinstance(queries, QuerySet) else queries)
        self.seed = int(seed)
        self.h_prime_offset = h_prime_offset if policy == "kll_shrinking" else None
        self.n_tilde = n_tilde if policy == "sample_then_sketch" else None
        self.epsilon = epsilon
        self.delta = delta
        self.debug = debug
        self.budget: Budget | None = None
        self.n = 0
        self.levels = [Compactor(0, self.m)]
        self._coin_cache: dict = {}

    @classmethod
    def from_budget(cls, family, budget: Budget, engine=None, seed=0, queries=None, debug=False):
        stack = cls(family, budget.m, budget.policy, engine, seed, budget.h_prime_offset,
                    budget.n_tilde, queries, budget.epsilon, budget.delta, debug)
        stack.budget = budget
        return stack

    # -- structure ------------------------------------------------------------

    @property
    def H(self) -> int:
        return len(self.levels) - 1

    @property
    def h_prime(self) -> int | None:
        if self.policy != "kll_shrinking":
            return None
        return self.H - self.h_prime_offset

    @property
    def live_items(self) -> int:
        return sum(len(c) for c in self.levels)

    def params(self) -> tuple:
        q = None if self.queries is None else self.queries.tobytes()
        return (self.family, self.m, self.policy, self.engine, self.h_prime_offset, self.n_tilde, q)

    # -- ingestion ------------------------------------------------------------

    def push(self, x) -> "CompactorStack":
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        return self.push_many(x[None, :])

    def push_many(self, points) -> "CompactorStack":
        X = self.family._check_points(points) if np.size(points) else np.zeros((0, self.family.dim))
        if not np.all(np.isfinite(X)):
            raise ValueError("points must be finite")
        if len(X):
            X = np.array(X, dtype=np.float64)
            self.n += len(X)
            self._insert(0, X)
        if self.debug:
            self.check_invariants()
        return self

    def _insert(self, h: int, X: np.ndarray):
        c = self.levels[h]
        pos = 0
        while pos < len(X):
            if (self.n_tilde is not None and c.mode == "deterministic"
                    and c.count >= self.n_tilde):
                c.mode, c.capacity = "reservoir", 2
            if c.mode == "reservoir":
                c.count += len(X) - pos
                self._pair_off(h, X[pos:])
                return
            take = min(c.capacity - len(c), len(X) - pos)
            if self.n_tilde is not None:
                take = min(take, self.n_tilde - c.count)
            c.append(X[pos:pos + take])
            c.count += take
            pos += take
            if len(c) >= c.capacity:
                self._compact(h)

    # -- compaction -----------------------------------------------------------

    def _coins(self, h: int, start: int, k: int) -> np.ndarray:
        """Fair bits for compaction indices start .. start+k-1 at level h."""
        out = np.empty(k, dtype=np.int64)
        i = 0
        while i < k:
            idx = start + i
            blk, off = divmod(idx, COIN_BLOCK)
            key = (h, blk)
            bits = self._coin_cache.get(key)
            if bits is None:
                bits = np.random.default_rng([self.seed, h, blk]).integers(0, 2, COIN_BLOCK)
                if len(self._coin_cache) > 64:
                    self._coin_cache.clear()
                self._coin_cache[key] = bits
            n = min(k - i, COIN_BLOCK - off)
            out[i:i + n] = bits[off:off + n]
            i += n
        return out

    def _pair_off(self, h: int, incoming: np.ndarray):
        c = self.levels[h]
        items = np.concatenate([c.take_all(self.family.dim), incoming], axis=0)
        k = len(items) // 2
        if len(items) % 2:
            c.append(items[-1:])
        if k == 0:
            return
        coins = self._coins(h, c.compactions, k)
        c.compactions += k
        first, second = items[0:2 * k:2], items[1:2 * k:2]
        c.random_certificate += c.weight * math.fsum(pair_bounds(self.family, self.engine, first, second, self.queries).tolist())
        self._emit(h, items[2 * np.arange(k) + coins])

    def _compact(self, h: int):
        c = self.levels[h]
        if c.mode == "reservoir":
            self._pair_off(h, np.zeros((0, self.family.dim)))
            return
        X = c.take_all(self.family.dim)
        sa = assign_signs(self.engine, self.family, X, self.queries)
        plus = sa.signs == 1
        if c.mode == "deterministic":
            keep_plus = int(plus.sum()) <= len(X) - int(plus.sum())
            c.certificate += c.weight * sa.certificate
        else:
            keep_plus = self._coins(h, c.compactions, 1)[0] == 0
            c.random_certificate += c.weight * sa.certificate
        c.compactions += 1
        self._emit(h, X[plus] if keep_plus else X[~plus])

    def _emit(self, h: int, items: np.ndarray):
        if len(items) == 0:
            return
        grew = h == self.H
        if grew:
            self.levels.append(Compactor(h + 1, self.m))
        self._insert(h + 1, items)
        if grew:
            self._on_height_change()

    def _on_height_change(self):
        if self.policy != "kll_shrinking":
            return
        hp = self.h_prime
        for c in self.levels:
            if c.level <= hp:
                c.capacity = shrunk_capacity(self.m, c.level, hp)
                c.mode = "reservoir" if c.capacity == 2 else "shrinking"
        self._drain()

    def _drain(self):
        """Compact every buffer that is at or over its (possibly new) capacity."""
        h = 0
        while h < len(self.levels):
            c = self.levels[h]
            if c.mode == "reservoir":
                if len(c) >= 2:
                    self._pair_off(h, np.zeros((0, self.family.dim)))
            elif len(c) >= c.capacity:
                self._compact(h)
            h += 1

    # -- checks ---------------------------------------------------------------

    def check_invariants(self):
        for c in self.levels:
            assert len(c) <= c.capacity, f"level {c.level} over capacity"
            if c.mode == "reservoir":
                assert c.capacity == 2 and len(c) <= 1, f"level {c.level} reservoir state"
            else:
                assert len(c) < c.capacity, f"level {c.level} full but not compacted"
        assert self.live_items <= sum(c.capacity for c in self.levels)
        if self.policy == "kll_shrinking":
            hp = self.h_prime
            for c in self.levels:
                expect = shrunk_capacity(self.m, c.level, hp)
                assert c.capacity == expect, f"level {c.level} capacity {c.capacity} != {expect}"
                assert (c.capacity == 2) == (c.mode == "reservoir") or c.level > hp
            if hp >= 0:
                low = sum(c.capacity for c in self.levels if c.level <= hp)
                assert low <= 3 * self.m + 2 * hp, "shrinking levels exceed memory bound"
        if self.policy == "sample_then_sketch":
            for c in self.levels:
                assert (c.mode == "reservoir") == (c.count > self.n_tilde)
        if self.policy == "det_halving" and self.H >= 1:
            assert self.H <= math.floor(math.log2(self.n / self.m)) + 1, "height bound violated"

    # -- output ---------------------------------------------------------------

    def certificate(self) -> float:
        return math.fsum(c.certificate for c in self.levels)

    def random_certificate(self) -> float:
        return math.fsum(c.random_certificate for c in self.levels)

    def copy(self) -> "CompactorStack":
        return copy.deepcopy(self)


def push(stack: CompactorStack, x) -> CompactorStack:
    return stack.push(x)


def compact_buffer(family: FunctionFamily, points, weight: float, mode: str,
                   engine: str | None = None, rng=None, queries=None):
    """One compaction of a full buffer, outside any stack.

    Returns (emitted points, weighted certificate). An odd trailing item in
    reservoir mode is neither emitted nor counted; callers keep it.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    engine = engine or default_engine(family)
    X = family._check_points(points)
    rng = rng if rng is not None else np.random.default_rng()
    if mode == "reservoir":
        k = len(X) // 2
        coins = rng.integers(0, 2, k)
        bound = pair_bounds(family, engine, X[0:2 * k:2], X[1:2 * k:2], queries)
        return X[2 * np.arange(k) + coins], float(weight) * math.fsum(bound.tolist())
    sa = assign_signs(engine, family, X, queries)
    plus = sa.signs == 1
    if mode == "deterministic":
        keep_plus = int(plus.sum()) <= len(X) - int(plus.sum())
    else:
        keep_plus = bool(rng.integers(0, 2) == 0)
    return (X[plus] if keep_plus else X[~plus]), float(weight) * sa.certificate


def merge(a: CompactorStack, b: CompactorStack) -> CompactorStack:
    """Sketch of the concatenated streams of a and b.

    Level buffers are concatenated, counters summed, then any buffer at or
    over capacity is compacted. Neither input is modified.
    """
    if a.params() != b.params():
        raise ParameterMismatch("cannot merge stacks with different family/engine/policy/budget")
    if b.n == 0 and b.live_items == 0:
        return a.copy()
    if a.n == 0 and a.live_items == 0:
        return b.copy()
    out = a.copy()
    out.debug = a.debug or b.debug
    dim = out.family.dim
    for cb in b.levels:
        if cb.level >= len(out.levels):
            cc = copy.deepcopy(cb)
            cc.capacity = out.m
            cc.mode = "deterministic"
            out.levels.append(cc)
            continue
        ca = out.levels[cb.level]
        ca.append(cb.items(dim).copy())
        ca.count += cb.count
        ca.compactions += cb.compactions
        ca.certificate += cb.certificate
        ca.random_certificate += cb.random_certificate
    out.n += b.n
    if out.policy == "sample_then_sketch":
        for c in out.levels:
            if c.count > out.n_tilde:
                c.mode, c.capacity = "reservoir", 2
            else:
                c.mode, c.capacity = "deterministic", out.m
    elif out.policy == "kll_shrinking":
        hp = out.h_prime
        for c in out.levels:
            c.capacity = shrunk_capacity(out.m, c.level, hp)
            c.mode = "deterministic" if c.level > hp else (
                "reservoir" if c.capacity == 2 else "shrinking")
    out._drain()
    if out.debug:
        out.check_invariants()
    return out


def finalize(stack: CompactorStack) -> SketchSummary:
    """All buffered items with weights 2^h, plus certificates."""
    dim = stack.family.dim
    pts, wts = [], []
    for c in stack.levels:
        X = c.items(dim)
        if len(X):
            pts.append(X.copy())
            wts.append(np.full(len(X), c.weight))
    P = np.concatenate(pts, axis=0) if pts else np.zeros((0, dim))
    W = np.concatenate(wts) if wts else np.zeros(0)
    det, rnd = stack.certificate(), stack.random_certificate()
    core = WeightedCoreset(stack.family, P, W, stack.n, stack.H, det + rnd,
                           tuple(c.certificate + c.random_certificate for c in stack.levels),
                           stack.engine)
    return SketchSummary(core, tuple(c.compactions for c in stack.levels), det, rnd,
                         stack.policy, stack.epsilon, stack.delta)
