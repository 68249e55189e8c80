import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from disccore import (DomainError, FunctionFamily, evaluate, prepare_points, sample_queries,
                      sum_evaluate)
from disccore.families import KERNEL_KINDS, KINDS, PSD_KINDS, exact_sums, sphere_queries


def test_gaussian_self_is_one(gauss2):
    assert evaluate(gauss2, [0.3, -1.2], [0.3, -1.2]) == 1.0


def test_gaussian_unit_distance():
    f = FunctionFamily("gaussian_kernel", 1, 1.0)
    assert evaluate(f, [0.0], [1.0]) == pytest.approx(math.exp(-1), rel=1e-15)
    assert evaluate(f, [0.0], [1.0]) == pytest.approx(0.3679, abs=1e-4)


def test_logistic_at_origin():
    f = FunctionFamily("logistic_loss", 3)
    assert evaluate(f, [0, 0, 0], [0.1, -0.5, 0.7]) == pytest.approx(math.log(2), rel=1e-15)


def test_quantile_step(quant):
    assert evaluate(quant, [3], [5]) == 1.0
    assert evaluate(quant, [3], [2]) == 0.0
    assert evaluate(quant, [3], [3]) == 0.0


def test_other_kernels_by_hand():
    x, q = np.array([0.5, 0.0]), np.array([0.0, 1.0])
    d2 = 1.25
    assert evaluate(FunctionFamily("laplacian_kernel", 2, 2.0), x, q) == pytest.approx(math.exp(-math.sqrt(d2) / 2))
    assert evaluate(FunctionFamily("cauchy_kernel", 2, 2.0), x, q) == pytest.approx(1 / (1 + d2 / 4))
    assert evaluate(FunctionFamily("sigmoid_loss", 2), x * 0.5, q) == pytest.approx(1 / (1 + math.exp(0.0)))
    assert evaluate(FunctionFamily("covariance", 2), [0.6, 0.0], [0.5, 0.5]) == pytest.approx(0.09)


def test_sum_duplicate_point(gauss2):
    assert sum_evaluate(gauss2, np.array([[1.0, 2.0], [1.0, 2.0]]), [1.0, 2.0]) == 2.0


@pytest.mark.parametrize("kind", KINDS)
def test_sum_empty_set(kind):
    f = FunctionFamily(kind, 1)
    assert sum_evaluate(f, np.zeros((0, 1)), [0.5]) == 0.0


def test_sum_five_points_frozen(gauss2):
    # oracle: pure-python math.exp per term, summed with math.fsum
    pts = np.array([(0, 0), (1, 0), (0, 1), (1, 1), (0.5, -0.5)], dtype=float)
    assert sum_evaluate(gauss2, pts, [0.2, 0.3]) == pytest.approx(2.753551637201574, rel=1e-12)


def test_exact_sums_matches_sum_evaluate(gauss2, rng):
    X = rng.standard_normal((50, 2))
    Q = rng.standard_normal((7, 2))
    got = exact_sums(gauss2, X, Q)
    for j in range(7):
        assert got[j] == sum_evaluate(gauss2, X, Q[j])
    w = rng.random(50)
    assert exact_sums(gauss2, X, Q, weights=w)[0] == pytest.approx(float(w @ gauss2.matrix(X, Q[:1])[:, 0]))


def test_family_validation():
    with pytest.raises(ValueError):
        FunctionFamily("quantile_indicator", 2)
    with pytest.raises(ValueError):
        FunctionFamily("gaussian_kernel", 2, -1.0)
    with pytest.raises(ValueError):
        FunctionFamily("logistic_loss", 2, 1.0)
    with pytest.raises(ValueError):
        FunctionFamily("nope", 1)
    assert FunctionFamily("gaussian_kernel", 1).bandwidth == 1.0


def test_family_dict_round_trip():
    for kind in KINDS:
        f = FunctionFamily(kind, 1)
        assert FunctionFamily.from_dict(f.to_dict()) == f


def test_query_norm_enforced():
    f = FunctionFamily("logistic_loss", 2)
    with pytest.raises(DomainError):
        evaluate(f, [0.1, 0.1], [1.0, 1.0])


def test_prepare_points_norms_and_labels():
    f = FunctionFamily("logistic_loss", 2)
    with pytest.raises(DomainError):
        prepare_points(f, [[3.0, 4.0], [0.1, 0.0]])
    X = prepare_points(f, [[3.0, 4.0], [0.1, 0.0]], labels=[1, -1], rescale=True)
    np.testing.assert_allclose(X, [[0.6, 0.8], [-0.02, 0.0]])
    with pytest.raises(DomainError):
        prepare_points(f, [[0.1, 0.0]], labels=[0.5])
    # kernels ignore labels
    g = FunctionFamily("gaussian_kernel", 2)
    np.testing.assert_array_equal(prepare_points(g, [[3.0, 4.0]], labels=[-1]), [[3.0, 4.0]])


def test_sample_queries_quantile_single(quant):
    data = np.linspace(0, 10, 30)[:, None]
    qs = sample_queries(quant, 1, seed=3, data=data)
    assert qs.queries.shape == (1, 1)
    assert 0 <= qs.queries[0, 0] <= 10


def test_sample_queries_deterministic(gauss2, rng):
    data = rng.standard_normal((40, 2))
    a = sample_queries(gauss2, 100, seed=9, data=data)
    b = sample_queries(gauss2, 100, seed=9, data=data)
    np.testing.assert_array_equal(a.queries, b.queries)
    assert a.provenance == b.provenance


def test_sample_queries_in_inflated_box(gauss2, rng):
    data = rng.standard_normal((40, 2))
    qs = sample_queries(gauss2, 100, seed=1, data=data).queries
    assert qs.shape == (100, 2)
    lo, hi = data.min(axis=0) - 3, data.max(axis=0) + 3
    assert np.all(qs >= lo - 1e-12) and np.all(qs <= hi + 1e-12)


def test_inner_product_queries_in_ball():
    f = FunctionFamily("covariance", 4, radius=2.0)
    qs = sample_queries(f, 300, seed=0).queries
    assert np.all(np.linalg.norm(qs, axis=1) <= 2.0 + 1e-12)
    s = sphere_queries(f, 50, seed=0).queries
    np.testing.assert_allclose(np.linalg.norm(s, axis=1), 2.0)


pts_strategy = arrays(np.float64, st.tuples(st.integers(1, 12), st.just(3)),
                      elements=st.floats(-3, 3, allow_nan=False, width=64))


@settings(max_examples=60, deadline=None)
@given(pts_strategy, st.sampled_from(KERNEL_KINDS), st.floats(0.2, 5.0))
def test_kernel_gram_psd_and_symmetric(X, kind, lam):
    f = FunctionFamily(kind, 3, lam)
    G = f.gram(X)
    np.testing.assert_array_equal(G, G.T)
    assert np.all(np.diag(G) == 1.0)
    assert np.linalg.eigvalsh(G).min() >= -1e-9 * len(X)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 10), st.just(3)),
              elements=st.floats(-0.5, 0.5, allow_nan=False, width=64)))
def test_covariance_feature_kernel_psd(X):
    f = FunctionFamily("covariance", 3)
    G = f.gram(X)
    assert np.linalg.eigvalsh(G).min() >= -1e-12
    np.testing.assert_allclose(np.diag(G), f.feature_sq_norms(X))


@settings(max_examples=60, deadline=None)
@given(pts_strategy, pts_strategy, st.sampled_from(KERNEL_KINDS))
def test_kernel_symmetry(X, Y, kind):
    f = FunctionFamily(kind, 3)
    np.testing.assert_array_equal(f.matrix(X, Y), f.matrix(Y, X).T)


def test_psd_kinds():
    assert set(PSD_KINDS) == {"gaussian_kernel", "laplacian_kernel", "cauchy_kernel", "covariance"}
