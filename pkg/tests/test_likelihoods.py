import numpy as np
import pytest
from scipy.special import softmax
from scipy.stats import multivariate_normal

from helpers import central_diff, random_spd
from transferhb.likelihoods import (
    GaussianParams,
    GaussianStats,
    MultinomialParams,
    NotPositiveDefinite,
    apply_ridge,
    gaussian_grad,
    gaussian_loglik,
    gaussian_ml,
    gaussian_stats,
    multinomial_grad,
    multinomial_loglik,
    multinomial_ml,
    nb_doc_loglik,
    nb_docs_loglik,
    pack_sym,
    sym_grad_to_triu,
    unpack_sym,
)


def rand_params(rng, d):
    return GaussianParams.from_matrix(rng.normal(size=d), random_spd(rng, d))


# -- sufficient statistics -----------------------------------------------------------


def test_empty_stats():
    s = gaussian_stats(np.zeros((0, 3)), 3)
    assert s.count == 0
    np.testing.assert_array_equal(s.sum, np.zeros(3))
    np.testing.assert_array_equal(s.scatter, np.zeros((3, 3)))


def test_one_row_stats():
    s = gaussian_stats([[1.0, 2.0]])
    assert s.count == 1
    np.testing.assert_array_equal(s.sum, [1, 2])
    np.testing.assert_array_equal(s.scatter, [[1, 2], [2, 4]])


def test_scatter_matches_loop():
    x = np.random.default_rng(0).normal(size=(5, 3))
    want = sum(np.outer(r, r) for r in x)
    np.testing.assert_allclose(gaussian_stats(x).scatter, want, rtol=1e-13)


def test_ragged_rows_rejected():
    with pytest.raises(ValueError):
        gaussian_stats([[1.0, 2.0], [3.0]])
    with pytest.raises(ValueError):
        gaussian_stats([[1.0, np.nan]])


def test_stats_add():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(3, 2)), rng.normal(size=(4, 2))
    both = gaussian_stats(a) + gaussian_stats(b)
    ref = gaussian_stats(np.vstack([a, b]))
    assert both.count == 7
    np.testing.assert_allclose(both.scatter, ref.scatter)


# -- Gaussian log-likelihood ---------------------------------------------------------


def test_loglik_at_mean_identity():
    s = gaussian_stats([[0.5, -1.0]])
    p = GaussianParams.from_matrix([0.5, -1.0], np.eye(2))
    assert gaussian_loglik(s, p) == pytest.approx(-np.log(2 * np.pi), abs=1e-12)


def test_loglik_empty_is_zero():
    p = GaussianParams.from_matrix(np.zeros(2), np.eye(2))
    assert gaussian_loglik(GaussianStats.empty(2), p) == 0.0


def test_loglik_matches_density_oracle():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(7, 4))
    p = rand_params(rng, 4)
    cov = np.linalg.inv(p.precision_matrix)
    want = multivariate_normal(p.mean, cov).logpdf(x).sum()
    assert gaussian_loglik(gaussian_stats(x), p) == pytest.approx(want, rel=1e-10)


def test_loglik_row_order_invariant():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(6, 2))
    p = rand_params(rng, 2)
    a = gaussian_loglik(gaussian_stats(x), p)
    b = gaussian_loglik(gaussian_stats(x[::-1]), p)
    assert a == pytest.approx(b, rel=1e-14)


def test_non_pd_precision_raises():
    s = gaussian_stats([[0.0, 0.0]])
    bad = GaussianParams.from_matrix(np.zeros(2), np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(NotPositiveDefinite):
        gaussian_loglik(s, bad)
    with pytest.raises(NotPositiveDefinite):
        gaussian_grad(s, bad)


def test_loglik_concave_in_each_block():
    rng = np.random.default_rng(4)
    s = gaussian_stats(rng.normal(size=(8, 3)))
    base = rand_params(rng, 3)
    for _ in range(100):
        m1, m2 = rng.normal(size=3) * 2, rng.normal(size=3) * 2
        f = [gaussian_loglik(s, GaussianParams(m, base.precision)) for m in (m1, m2, (m1 + m2) / 2)]
        assert f[2] >= 0.5 * (f[0] + f[1]) - 1e-9
        k1, k2 = pack_sym(random_spd(rng, 3)), pack_sym(random_spd(rng, 3))
        f = [gaussian_loglik(s, GaussianParams(base.mean, k)) for k in (k1, k2, (k1 + k2) / 2)]
        assert f[2] >= 0.5 * (f[0] + f[1]) - 1e-9


# -- Gaussian gradient ---------------------------------------------------------------


def test_gradient_vanishes_at_ml():
    rng = np.random.default_rng(5)
    s = gaussian_stats(rng.normal(size=(9, 3)))
    gm, gk = gaussian_grad(s, gaussian_ml(s))
    assert np.max(np.abs(gm)) < 1e-10
    assert np.max(np.abs(gk)) < 1e-10


def test_gradient_zero_count():
    p = GaussianParams.from_matrix(np.ones(2), np.eye(2))
    gm, gk = gaussian_grad(GaussianStats.empty(2), p)
    assert not gm.any() and not gk.any()


@pytest.mark.parametrize("d", [1, 2, 3, 5])
def test_gradient_matches_finite_differences(d):
    rng = np.random.default_rng(d)
    s = apply_ridge(gaussian_stats(rng.normal(size=(d + 3, d))), 0.2)
    p = rand_params(rng, d)
    x = np.concatenate([p.mean, p.precision])
    gm, gk = gaussian_grad(s, p)
    num = central_diff(lambda v: gaussian_loglik(s, GaussianParams(v[:d], v[d:])), x)
    np.testing.assert_allclose(np.concatenate([gm, gk]), num, rtol=1e-6, atol=1e-8)


def test_symmetric_storage_doubles_off_diagonals():
    g = np.array([[1.0, 2.0], [2.0, 3.0]])
    np.testing.assert_array_equal(sym_grad_to_triu(g), [1.0, 4.0, 3.0])
    m = random_spd(np.random.default_rng(6), 4)
    np.testing.assert_array_equal(unpack_sym(pack_sym(m)), m)


# -- ridge ---------------------------------------------------------------------------


def test_ridge_zero_is_identity():
    s = gaussian_stats(np.random.default_rng(7).normal(size=(4, 2)))
    r = apply_ridge(s, 0.0)
    np.testing.assert_array_equal(r.scatter, s.scatter)


def test_ridge_on_repeated_point():
    s = gaussian_stats(np.tile([1.0, -2.0], (5, 1)))
    p = gaussian_ml(s, 0.1)
    np.testing.assert_allclose(np.linalg.inv(p.precision_matrix), 0.1 * np.eye(2), atol=1e-12)


def test_ridge_closed_form():
    x = np.random.default_rng(8).normal(size=(10, 3))
    p = gaussian_ml(gaussian_stats(x), 0.5)
    want = np.linalg.inv(np.cov(x.T, bias=True) + 0.5 * np.eye(3))
    np.testing.assert_allclose(p.precision_matrix, want, atol=1e-8)
    np.testing.assert_allclose(p.mean, x.mean(axis=0), atol=1e-12)


def test_negative_ridge_rejected():
    with pytest.raises(ValueError):
        apply_ridge(GaussianStats.empty(2), -1.0)


# -- multinomial ---------------------------------------------------------------------


def test_uniform_two_way():
    assert multinomial_loglik([1.0, 0.0], MultinomialParams([0.0, 0.0])) == pytest.approx(np.log(0.5))


def test_gauge_invariance():
    rng = np.random.default_rng(9)
    c, th = rng.integers(0, 6, 7).astype(float), rng.normal(size=7)
    a = multinomial_loglik(c, MultinomialParams(th), 0.5)
    b = multinomial_loglik(c, MultinomialParams(th + 3.7), 0.5)
    assert a == pytest.approx(b, rel=1e-12)


def test_multinomial_loglik_oracle():
    rng = np.random.default_rng(10)
    c, th = rng.integers(0, 6, 5).astype(float), rng.normal(size=5)
    p = softmax(th)
    want = float(np.sum((c + 1) * np.log(p)))
    assert multinomial_loglik(c, MultinomialParams(th), 1.0) == pytest.approx(want, rel=1e-10)


def test_multinomial_gradient_at_smoothed_ml():
    c = np.array([3.0, 0.0, 1.0, 5.0])
    th = multinomial_ml(c, 1.0).logits
    assert np.max(np.abs(multinomial_grad(c, MultinomialParams(th), 1.0))) < 1e-12


def test_multinomial_gradient_zero_counts():
    assert not multinomial_grad(np.zeros(4), MultinomialParams(np.arange(4.0))).any()


def test_multinomial_gradient_fd():
    rng = np.random.default_rng(11)
    c, th = rng.integers(0, 6, 8).astype(float), rng.normal(size=8)
    num = central_diff(lambda t: multinomial_loglik(c, MultinomialParams(t), 0.3), th)
    np.testing.assert_allclose(multinomial_grad(c, MultinomialParams(th), 0.3), num, rtol=1e-6,
                               atol=1e-9)


def test_multinomial_concave():
    rng = np.random.default_rng(12)
    c = rng.integers(0, 6, 6).astype(float)
    for _ in range(100):
        a, b = rng.normal(size=6) * 2, rng.normal(size=6) * 2
        f = [multinomial_loglik(c, MultinomialParams(t)) for t in (a, b, (a + b) / 2)]
        assert f[2] >= 0.5 * (f[0] + f[1]) - 1e-9


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        multinomial_loglik([1.0, 2.0], MultinomialParams([0.0, 0.0, 0.0]))


def test_nb_doc_examples():
    assert nb_doc_loglik(np.zeros(3), MultinomialParams(np.zeros(3))) == 0.0
    assert nb_doc_loglik([0, 1, 0, 0], MultinomialParams(np.zeros(4))) == pytest.approx(np.log(0.25))
    rng = np.random.default_rng(13)
    d, th = rng.integers(0, 4, 6).astype(float), rng.normal(size=6)
    assert nb_doc_loglik(d, MultinomialParams(th)) == multinomial_loglik(d, MultinomialParams(th), 0.0)


def test_zero_probability_words():
    logits = multinomial_ml([3.0, 0.0, 1.0]).logits
    assert logits[1] == -np.inf
    np.testing.assert_allclose(MultinomialParams(logits).probabilities, [0.75, 0.0, 0.25])
    out = nb_docs_loglik(np.array([[1.0, 0.0, 1.0], [0.0, 1.0, 0.0]]), logits)
    assert np.isfinite(out[0]) and out[1] == -np.inf
