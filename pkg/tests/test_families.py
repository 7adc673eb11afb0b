import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, stats

from ellipgof.families import (ConstantsError, DegenerateDataError, decomposition_constants,
                               fit_mle, get_family, sample_null, standardize)

from conftest import random_affine

ALL = [("mvn", 2), ("mvn", 3), ("laplace", 2), ("laplace", 3), ("logistic", 2),
       ("logistic", 3), ("pearson2", 2), ("pearson2", 3)]


@pytest.mark.parametrize("name", ["mvn", "laplace", "logistic", "pearson2"])
def test_density_integrates_to_one_m2(name):
    fam = get_family(name, 2)
    lim = 1.0 if name == "pearson2" else 40.0
    # polar integral of the density over the plane
    val = integrate.quad(lambda r: 2 * np.pi * r * np.exp(fam.logpdf([[r, 0.0]])[0]),
                         0, lim, limit=200)[0]
    assert val == pytest.approx(1.0, abs=1e-8)


def test_mvn_logpdf_matches_scipy(rng):
    fam = get_family("mvn", 3)
    A = rng.standard_normal((3, 3))
    V = A @ A.T + np.eye(3)
    mu = rng.standard_normal(3)
    x = rng.standard_normal((5, 3))
    np.testing.assert_allclose(fam.logpdf(x, mu, V),
                               stats.multivariate_normal(mu, V).logpdf(x), rtol=1e-12)


@pytest.mark.parametrize("name,m", ALL)
def test_radius_sampler_matches_law(name, m):
    fam = get_family(name, m)
    r = fam.sample_radius(np.random.default_rng(5), 20000)
    # compare E[T] and E[T^2] with the moment table; 5 standard errors
    t = r ** 2
    for q in (1, 2):
        se = np.sqrt(fam.r2_moment(2 * q) - fam.r2_moment(q) ** 2) / np.sqrt(t.size)
        assert abs((t ** q).mean() - fam.r2_moment(q)) < 5 * se


def test_logistic_radius_ks():
    fam = get_family("logistic", 2)
    r = fam.sample_radius(np.random.default_rng(3), 5000)
    assert stats.kstest(r, fam.radius_cdf).pvalue > 1e-3


@pytest.mark.parametrize("name,m", ALL)
def test_sample_null_is_spherical(name, m):
    x = sample_null(get_family(name, m), 50000, seed=1)
    assert np.abs(x.mean(axis=0)).max() < 0.05 * np.sqrt(np.diag(np.cov(x.T))).max()
    C = np.corrcoef(x.T)
    assert np.abs(C - np.eye(m)).max() < 0.03


def test_pearson_support():
    x = sample_null(get_family("pearson2", 3, 3.0), 2000, seed=2)
    assert (np.einsum("ij,ij->i", x, x) < 1).all()


@pytest.mark.parametrize("m", [2, 3])
def test_mvn_fit_identities(m, rng):
    x = rng.standard_normal((60, m)) @ rng.standard_normal((m, m)) + 4
    s = standardize(fit_mle(get_family("mvn", m), x), x)
    Y = s.Y
    assert np.abs(Y.sum(axis=0)).max() < 1e-10
    np.testing.assert_allclose(Y.T @ Y / len(Y), np.eye(m), atol=1e-10)


@pytest.mark.parametrize("name,m", [a for a in ALL if a[0] != "mvn"])
def test_mle_solves_score_equations(name, m):
    fam = get_family(name, m)
    x = sample_null(fam, 300, seed=11) @ np.array([[2.0] + [0.3] * (m - 1)] + [
        [0.0] * i + [1.0] + [0.0] * (m - i - 1) for i in range(1, m)]) + 1.5
    p = fit_mle(fam, x)
    s = standardize(p, x)
    w = fam.g(s.R ** 2)
    # sum g(T) Y = 0 and mean g(T) Y Y' = I at the maximiser
    assert np.abs((w[:, None] * s.Y).mean(axis=0)).max() < 1e-8
    np.testing.assert_allclose((s.Y * w[:, None]).T @ s.Y / s.n, np.eye(m), atol=1e-8)


@pytest.mark.parametrize("name", ["logistic", "pearson2", "laplace"])
def test_mle_beats_perturbations(name):
    fam = get_family(name, 2)
    x = sample_null(fam, 200, seed=4)
    p = fit_mle(fam, x)
    best = fam.logpdf(x, p.mu, p.V).sum()
    rng = np.random.default_rng(0)
    for _ in range(20):
        mu = p.mu + 0.01 * rng.standard_normal(2)
        E = 0.01 * rng.standard_normal((2, 2))
        V = p.V + E @ E.T - 0.01 * np.eye(2) * rng.random()
        if np.linalg.eigvalsh(V).min() <= 0:
            continue
        val = fam.logpdf(x, mu, V).sum()
        assert not val > best + 1e-9


@given(st.sampled_from(["mvn", "logistic", "pearson2"]), st.integers(0, 2 ** 31))
def test_fit_is_affine_equivariant(name, seed):
    rng = np.random.default_rng(seed)
    fam = get_family(name, 2)
    x = sample_null(fam, 120, rng=rng)
    A, b = random_affine(rng, 2)
    p0 = fit_mle(fam, x)
    p1 = fit_mle(fam, x @ A.T + b)
    np.testing.assert_allclose(p1.mu, A @ p0.mu + b, atol=1e-7)
    np.testing.assert_allclose(p1.V, A @ p0.V @ A.T, rtol=1e-6, atol=1e-7)


def test_degenerate_inputs():
    fam = get_family("mvn", 2)
    with pytest.raises(DegenerateDataError):
        fit_mle(fam, np.ones((2, 2)))
    with pytest.raises(DegenerateDataError):
        fit_mle(fam, np.column_stack([np.arange(10.0), 2 * np.arange(10.0)]))
    with pytest.raises(DegenerateDataError):
        fit_mle(fam, np.array([[0.0, 1.0], [np.nan, 2.0], [1.0, 1.0], [2.0, 0.0]]))
    with pytest.raises(ValueError):
        fit_mle(fam, np.zeros((10, 3)))


def test_laplace_centre_on_observation_is_reported():
    # a tight cluster around one point pulls the Laplace maximiser onto it
    rng = np.random.default_rng(0)
    x = np.vstack([np.zeros((1, 2)), rng.standard_normal((6, 2)) * 5])
    with pytest.raises(DegenerateDataError):
        fit_mle(get_family("laplace", 2), x)


def test_standardize_rejects_centre():
    fam = get_family("mvn", 2)
    x = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0], [0.0, 0.0]])
    with pytest.raises(DegenerateDataError):
        standardize(fit_mle(fam, x), x)


def test_get_family_errors():
    with pytest.raises(ValueError):
        get_family("cauchy", 2)
    with pytest.raises(ValueError):
        get_family("mvn", 2, 3.0)
    with pytest.raises(ValueError):
        get_family("pearson2", 2, 0.5)
    assert get_family("pearson2", 2).alpha == 2.0


@pytest.mark.parametrize("m", [2, 3, 4])
def test_mvn_constants(m):
    c = decomposition_constants(get_family("mvn", m), K=5)
    assert c.sigma1 == pytest.approx(m)
    assert c.sigma2 == pytest.approx(1.0)
    # g = 1, so only the degree-one radial terms correlate with zeta = T
    np.testing.assert_allclose(c.c0, [-np.sqrt(2 * m), 0.0], atol=1e-10)
    np.testing.assert_allclose(c.c1, [1.0, 0.0, 0.0], atol=1e-10)
    np.testing.assert_allclose(c.c2, [-np.sqrt(m * (m + 2)), 0.0], atol=1e-10)
    assert c.d0 == c.d1 == c.d2 == 0.0


def test_constant_identities_laplace():
    # sigma1 = E[T g^2] = 1 and E[zeta^2] = E[T] for g = T^{-1/2}
    fam = get_family("laplace", 2)
    c = decomposition_constants(fam, K=5)
    assert c.sigma1 == pytest.approx(1.0, abs=1e-12)
    assert c.E_zeta2 == pytest.approx(fam.r2_moment(1), rel=1e-12)
    assert c.sigma2 == pytest.approx(2 * 4 / c.E_zeta2)


def test_constants_dimension_check():
    with pytest.raises(ValueError):
        decomposition_constants(get_family("logistic", 2), m=3)
    assert issubclass(ConstantsError, ArithmeticError)
