import math

import numpy as np
import pytest
from scipy import integrate, stats

from polyqcal.design import (
    Hypercube, InvChi, PriorSpec, is_latin, lhd_maximin, min_distance,
    prior_hypercube, prior_logpdf, random_lhd, sample_prior,
)
from polyqcal.netmodel import load_builtin_model
from polyqcal.rng import substream


@pytest.fixture(scope="module")
def priors():
    return PriorSpec.from_network(load_builtin_model())


def test_prior_centre_and_halfwidth(priors):
    cube = prior_hypercube(priors, coverage=0.99)
    centre = (cube.upper + cube.lower) / 2
    assert centre[0] == pytest.approx(math.log(1e-7), abs=1e-12)
    half = (cube.upper - cube.lower) / 2
    expected = stats.norm.ppf(0.995) * math.sqrt(5.0)
    assert expected == pytest.approx(5.7595, abs=5e-4)
    assert np.allclose(half, expected)


def test_prior_hypercube_coverage_is_exact(priors):
    for coverage in (0.5, 0.9, 0.99):
        cube = prior_hypercube(priors, coverage)
        for j in range(priors.n_theta):
            mu = priors.log_medians[j]
            sd = math.sqrt(priors.log_variance)
            mass = (stats.norm.cdf(cube.upper[j], mu, sd)
                    - stats.norm.cdf(cube.lower[j], mu, sd))
            assert mass == pytest.approx(coverage, abs=1e-12)


def test_prior_hypercube_degenerate_limit(priors):
    cube = prior_hypercube(priors, 0.0)
    assert np.allclose(cube.lower, priors.log_medians, atol=1e-9)
    assert np.allclose(cube.upper, priors.log_medians, atol=1e-9)


def test_invchi_density_normalises_by_quadrature():
    for law in (InvChi(2.0, 0.12), InvChi(0.75, 0.05)):
        total, err = integrate.quad(lambda s: math.exp(law.logpdf(s)),
                                    1e-9, np.inf, limit=400)
        assert total == pytest.approx(1.0, abs=1e-6)


def test_prior_logpdf_components(priors):
    theta = priors.log_medians.copy()
    lp = prior_logpdf(priors, theta, 0.3, 0.3)
    # at the medians every normal component contributes -log(2 pi * 5)/2
    expected_theta = -0.5 * priors.n_theta * math.log(2 * math.pi * 5.0)
    assert priors.theta_logpdf(theta) == pytest.approx(expected_theta, rel=1e-12)
    assert math.isfinite(lp)
    assert prior_logpdf(priors, theta, 0.0, 0.3) == -math.inf
    assert prior_logpdf(priors, theta, 0.3, -1.0) == -math.inf


def test_sample_prior_moments_and_support(priors):
    rng = substream(11, 1)
    n = 100_000
    thetas = np.empty((n, priors.n_theta))
    sds = np.empty(n)
    sis = np.empty(n)
    for i in range(n):
        thetas[i], sds[i], sis[i] = sample_prior(priors, rng)
    # theta_5 median: log(2e-4); MC error of the median ~ 1.25 sd/sqrt(n)
    med = np.median(thetas[:, 4])
    tol = 4 * 1.2533 * math.sqrt(5.0 / n)
    assert abs(med - math.log(2e-4)) < tol
    # prior variance 5 per component
    v = thetas.var(axis=0, ddof=1)
    se_var = 5.0 * math.sqrt(2.0 / (n - 1))
    assert np.all(np.abs(v - 5.0) < 5 * se_var)
    assert np.all(sds > 0) and np.all(sis > 0)


def test_sampler_matches_density_goodness_of_fit(priors):
    rng = substream(12, 1)
    n = 20_000
    draws = np.array([sample_prior(priors, rng) for _ in range(n)], dtype=object)
    theta0 = np.array([d[0][0] for d in draws])
    sds = np.array([d[1] for d in draws])
    sis = np.array([d[2] for d in draws])
    p1 = stats.kstest(theta0, "norm",
                      args=(priors.log_medians[0], math.sqrt(5.0))).pvalue
    assert p1 > 1e-3

    def sigma_cdf(s, law):
        return stats.gamma.sf(1.0 / np.square(s), a=law.shape,
                              scale=1.0 / law.rate)

    p2 = stats.kstest(sds, lambda s: sigma_cdf(s, priors.sigma_d)).pvalue
    p3 = stats.kstest(sis, lambda s: sigma_cdf(s, priors.sigma_i)).pvalue
    assert p2 > 1e-3 and p3 > 1e-3


def test_invchi_quantile_inverts_cdf():
    law = InvChi(2.0, 0.12)
    for q in (0.01, 0.5, 0.99):
        s = law.quantile(q)
        cdf = stats.gamma.sf(1.0 / s ** 2, a=law.shape, scale=1.0 / law.rate)
        assert cdf == pytest.approx(q, abs=1e-10)


# --- Latin hypercube designs ---------------------------------------------------

def test_random_lhd_latin_property():
    rng = substream(13, 1)
    for n, d in ((2, 1), (17, 3), (100, 11)):
        unit = random_lhd(n, d, rng)
        assert is_latin(unit)
        # occupancy histogram per dimension is all ones
        for j in range(d):
            bins = np.floor(unit[:, j] * n).astype(int)
            assert np.array_equal(np.sort(bins), np.arange(n))


def test_two_point_one_dim_distinct_halves():
    cube = Hypercube(np.array([0.0]), np.array([1.0]))
    dm = lhd_maximin(2, cube, restarts=2, iterations=50, rng=substream(14, 1))
    pts = np.sort(dm.points[:, 0])
    assert pts[0] < 0.5 <= pts[1]


def test_maximin_improves_and_stays_latin():
    cube = Hypercube(np.zeros(4), np.ones(4))
    dm = lhd_maximin(30, cube, restarts=3, iterations=800, rng=substream(15, 1))
    assert is_latin(dm.unit)
    assert dm.score >= dm.init_score
    assert dm.score == pytest.approx(min_distance(dm.unit), rel=1e-12)
    # mapping to the cube preserves the Latin property
    assert is_latin(cube.to_unit(dm.points))


def test_maximin_deterministic_under_seed():
    cube = Hypercube(np.zeros(3), np.ones(3))
    a = lhd_maximin(20, cube, restarts=2, iterations=300, rng=substream(16, 1))
    b = lhd_maximin(20, cube, restarts=2, iterations=300, rng=substream(16, 1))
    assert np.array_equal(a.unit, b.unit)


def test_hypercube_validation():
    with pytest.raises(ValueError):
        Hypercube(np.array([0.0, 1.0]), np.array([1.0, 1.0]))
