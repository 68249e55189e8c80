import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from disccore import CompactorStack, FunctionFamily, budget_for, finalize, merge, sample_queries
from disccore.families import exact_sums
from disccore.streaming import ParameterMismatch, compact_buffer, shrunk_capacity


def det_stack(family, m, **kw):
    return CompactorStack(family, m, "det_halving", **kw)


def rank_errors(stack, X):
    """Max over all thresholds of |estimated rank - true rank| as exact integers."""
    core = finalize(stack).coreset
    xs = np.sort(X[:, 0])
    Q = np.concatenate([[xs[0] - 1], np.unique(xs) + 0.0])
    Q = np.concatenate([Q, np.nextafter(np.unique(xs), np.inf)])[:, None]
    exact = np.searchsorted(xs, Q[:, 0], side="left")
    cs = np.sort(core.points[:, 0])
    order = np.argsort(core.points[:, 0], kind="stable")
    cw = np.concatenate([[0], np.cumsum(core.weights[order].astype(np.int64))])
    est = cw[np.searchsorted(cs, Q[:, 0], side="left")]
    return int(np.abs(est - exact).max())


# -- budget_for --------------------------------------------------------------------

def test_budget_det_small():
    assert budget_for("det_halving", 0.5, c=1, n_hint=16).m == 17


def test_budget_monotone_in_epsilon():
    for policy, delta in (("det_halving", None), ("kll_shrinking", 0.1), ("sample_then_sketch", 0.1)):
        prev = 0
        for eps in (0.5, 0.2, 0.1, 0.05, 0.01):
            m = budget_for(policy, eps, delta, n_hint=10**6).m
            assert m > prev
            prev = m


@pytest.mark.parametrize("eps", [0.05, 0.1, 0.2, 0.3])
@pytest.mark.parametrize("delta", [0.2, 0.1, 0.01])
def test_budget_n_tilde_halving_delta(eps, delta):
    a = budget_for("sample_then_sketch", eps, delta).n_tilde
    b = budget_for("sample_then_sketch", eps, delta / 2).n_tilde
    step = 8 * math.log(2) / eps**2
    # ceilings of x and x + step differ by floor(step) or ceil(step)
    assert math.floor(step) <= b - a <= math.ceil(step)


def test_budget_values():
    b = budget_for("sample_then_sketch", 0.05, 0.1)
    assert b.n_tilde == math.ceil(8 * math.log(20) / 0.0025)
    k = budget_for("kll_shrinking", 0.05, 0.1, n_hint=50_000)
    L = math.ceil(math.log2(math.log2(500_000)))
    assert k.h_prime_offset == L == 5
    assert k.m == math.ceil(4 * (L + 1) / 0.05) == 480
    s = budget_for("det_halving", 0.1, rate="sqrt", n_hint=10**6)
    assert s.m == math.ceil(4 * math.log(0.01 * 10**6) ** 2 / 0.01)


def test_budget_errors():
    with pytest.raises(ValueError):
        budget_for("kll_shrinking", 0.1)
    with pytest.raises(ValueError):
        budget_for("det_halving", 1.5)
    with pytest.raises(ValueError):
        budget_for("nope", 0.1)


def test_shrunk_capacity():
    assert shrunk_capacity(480, 5, 5) == 480
    assert shrunk_capacity(480, 4, 5) == 320
    assert shrunk_capacity(480, 3, 5) == 214  # ceil(480 * 4 / 9)
    assert shrunk_capacity(480, 0, 20) == 2
    assert shrunk_capacity(480, 9, 5) == 480
    caps = [shrunk_capacity(100, h, 8) for h in range(9)]
    assert caps == sorted(caps)


# -- stack behaviour ---------------------------------------------------------------

def test_push_one_item(gauss2):
    s = det_stack(gauss2, 8).push([1.0, 2.0])
    assert s.H == 0 and len(s.levels[0]) == 1
    assert s.levels[0].compactions == 0
    np.testing.assert_array_equal(s.levels[0].items(2), [[1.0, 2.0]])


def test_push_m_identical(gauss2):
    m = 9
    s = det_stack(gauss2, m)
    for _ in range(m):
        s.push([0.5, 0.5])
    assert s.levels[0].compactions == 1
    assert len(s.levels[1]) <= math.ceil(m / 2)
    assert s.certificate() <= 1.0


def test_sorted_stream_per_compaction_error(quant):
    m = 16
    s = det_stack(quant, m)
    s.push_many(np.arange(10 * m, dtype=float)[:, None])
    for c in s.levels:
        assert c.certificate == c.compactions * c.weight
    X = np.arange(10 * m, dtype=float)[:, None]
    assert rank_errors(s, X) <= s.certificate()


def test_compact_buffer_identical_pair(gauss2):
    out, err = compact_buffer(gauss2, [[1.0, 1.0], [1.0, 1.0]], 1.0, "deterministic")
    assert len(out) == 1 and err == 0.0


def test_compact_buffer_shrinking_reproducible(quant):
    X = np.array([[4.0], [1.0], [3.0], [2.0]])
    a, _ = compact_buffer(quant, X, 1.0, "shrinking", rng=np.random.default_rng(5))
    b, _ = compact_buffer(quant, X, 1.0, "shrinking", rng=np.random.default_rng(5))
    np.testing.assert_array_equal(a, b)
    assert sorted(a[:, 0].tolist()) in ([1.0, 3.0], [2.0, 4.0])


def test_randomized_compaction_zero_mean(quant):
    # error of one shrinking compaction at a fixed threshold, over many seeds
    X = np.array([[0.1], [0.4], [0.5], [0.8], [0.9], [0.2]])
    q = np.array([[0.45]])
    exact = exact_sums(quant, X, q)[0]
    errs = []
    for seed in range(4000):
        out, _ = compact_buffer(quant, X, 1.0, "shrinking", rng=np.random.default_rng(seed))
        errs.append(2 * exact_sums(quant, out, q)[0] - exact)
    errs = np.array(errs)
    assert abs(errs.mean()) <= 3 * errs.std(ddof=1) / math.sqrt(len(errs))


def test_merge_identities(quant, rng):
    s = det_stack(quant, 32).push_many(rng.random((500, 1)))
    e = det_stack(quant, 32)
    for out in (merge(s, e), merge(e, s)):
        assert out.n == s.n
        np.testing.assert_array_equal(finalize(out).coreset.points, finalize(s).coreset.points)


def test_merge_mismatch(quant, gauss2):
    with pytest.raises(ParameterMismatch):
        merge(det_stack(quant, 32), det_stack(quant, 64))
    with pytest.raises(ParameterMismatch):
        merge(det_stack(quant, 32), CompactorStack(quant, 32, "kll_shrinking", h_prime_offset=2))


def test_merge_two_quantile_streams(quant):
    b = budget_for("det_halving", 0.05, n_hint=5000)
    r = np.random.default_rng(11)
    A, B = r.random((5000, 1)), r.random((5000, 1)) * 2
    sa = CompactorStack.from_budget(quant, b).push_many(A)
    sb = CompactorStack.from_budget(quant, b).push_many(B)
    out = merge(sa, sb)
    out.check_invariants()
    assert out.n == 10_000
    assert rank_errors(out, np.concatenate([A, B])) <= 0.05 * 5000 * 2


def test_finalize_uncompacted(gauss2, rng):
    X = rng.standard_normal((5, 2))
    summ = finalize(det_stack(gauss2, 8).push_many(X))
    np.testing.assert_array_equal(summ.coreset.points, X)
    assert summ.coreset.weights.tolist() == [1.0] * 5
    assert summ.certificate == 0.0
    Q = rng.standard_normal((10, 2))
    np.testing.assert_array_equal(summ.evaluate_many(Q), exact_sums(gauss2, X, Q))


def test_quantile_summary_size(quant):
    b = budget_for("det_halving", 0.01, n_hint=100_000)
    s = CompactorStack.from_budget(quant, b)
    X = np.random.default_rng(3).random((100_000, 1))
    s.push_many(X)
    assert len(finalize(s).coreset) <= (s.H + 1) * s.m


def test_det_gaussian_stream_sound(gauss2, rng):
    X = rng.standard_normal((4000, 2))
    s = det_stack(gauss2, 200).push_many(X)
    summ = finalize(s)
    Q = sample_queries(gauss2, 300, seed=2, data=X)
    err = np.abs(exact_sums(gauss2, X, Q.queries) - summ.evaluate_many(Q))
    assert err.max() <= summ.certificate


def test_kll_invariants_and_memory(quant):
    b = budget_for("kll_shrinking", 0.05, 0.1, n_hint=50_000)
    s = CompactorStack.from_budget(quant, b, seed=4, debug=True)
    X = np.random.default_rng(4).random((50_000, 1))
    for chunk in np.array_split(X, 37):
        s.push_many(chunk)
    hp = s.h_prime
    assert hp >= 0
    low = sum(c.capacity for c in s.levels if c.level <= hp)
    assert low <= 3 * s.m + 2 * hp
    assert s.levels[0].mode in ("reservoir", "shrinking")


def test_sample_then_sketch_switch(gauss2):
    s = CompactorStack(gauss2, 16, "sample_then_sketch", n_tilde=40, debug=True)
    s.push_many(np.random.default_rng(0).standard_normal((200, 2)))
    assert s.levels[0].mode == "reservoir"
    assert s.levels[0].count == 200


def test_check_invariants_detects_overflow(quant):
    s = det_stack(quant, 4)
    s.levels[0].append(np.zeros((5, 1)))
    with pytest.raises(AssertionError):
        s.check_invariants()


POLICY_CASES = [
    ("det_halving", {}),
    ("kll_shrinking", {"h_prime_offset": 2}),
    ("sample_then_sketch", {"n_tilde": 50}),
]


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(POLICY_CASES), st.lists(st.integers(1, 200), min_size=1, max_size=8),
       st.integers(0, 1000))
def test_batching_independence(case, cuts, seed):
    policy, kw = case
    f = FunctionFamily("quantile_indicator", 1)
    X = np.random.default_rng(seed).random((sum(cuts), 1))
    a = CompactorStack(f, 8, policy, seed=seed, **kw)
    b = CompactorStack(f, 8, policy, seed=seed, debug=True, **kw)
    a.push_many(X)
    pos = 0
    for c in cuts:
        b.push_many(X[pos:pos + c])
        pos += c
    fa, fb = finalize(a), finalize(b)
    np.testing.assert_array_equal(fa.coreset.points, fb.coreset.points)
    np.testing.assert_array_equal(fa.coreset.weights, fb.coreset.weights)
    assert fa.certificate == fb.certificate


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3000), st.integers(2, 64))
def test_det_quantile_dominance(n, m):
    f = FunctionFamily("quantile_indicator", 1)
    X = np.random.default_rng(n * 97 + m).random((n, 1))
    s = det_stack(f, m).push_many(X)
    s.check_invariants()
    assert rank_errors(s, X) <= s.certificate()
    assert finalize(s).coreset.total_weight <= n
