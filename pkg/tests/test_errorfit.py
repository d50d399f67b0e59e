import numpy as np
import pytest
from numpy.polynomial import hermite_e
from scipy import integrate, stats

from transdiff.densities import MixtureDensity
from transdiff.errorfit import (ErrorModelParams, _bartlett_geometric, beta_fraction,
                                empirical_acf, expected_acf, fit_error_model, fit_marginal,
                                hac_covariance, hermite_spectrum, integrated_autocorrelation_time,
                                marginal_z_pdf, rho_y, rho_z, simulate_rho_y)
from transdiff.simulate import Path, ou_path, simulate_with_error
from transdiff.transform import TransformedDiffusion

from conftest import FIT1, FIT2

PARAMS = ErrorModelParams((0.05, 0.4, -1.0, 0.5, 1.0, 0.6), 0.5, 0.2)


def test_beta_fraction_formula():
    p = ErrorModelParams(tuple(FIT2), 0.43, 0.88)
    a, m1, s1, m2, s2 = FIT2[1:]
    g2 = 0.88
    ref = g2 / (a * (s1 ** 2 + g2) + (1 - a) * (s2 ** 2 + g2) + a * (1 - a) * (m1 - m2) ** 2)
    assert beta_fraction(p) == pytest.approx(ref, rel=1e-14)
    assert p.beta == pytest.approx(0.102206, abs=1e-6)


def test_marginal_z_density_is_convolution():
    d = PARAMS.target
    for z in (-1.3, 0.0, 0.8):
        ref = integrate.quad(lambda y: d.pdf(y) * stats.norm.pdf(z - y, 0, np.sqrt(0.2)), -8, 8)[0]
        assert marginal_z_pdf(PARAMS, z) == pytest.approx(ref, rel=1e-9)


def test_params_validation_and_roundtrip():
    assert ErrorModelParams.from_dict(PARAMS.to_dict()) == PARAMS
    with pytest.raises(ValueError):
        ErrorModelParams(PARAMS.theta, 0.0, 0.1)
    with pytest.raises(ValueError):
        ErrorModelParams(PARAMS.theta, 1.0, -0.1)


def test_rho_z_decomposition():
    t = np.array([0.0, 1.0, 5.0])
    ry = np.exp(-0.1 * t)
    out = rho_z(PARAMS, t, ry)
    b = PARAMS.beta
    np.testing.assert_allclose(out, (1 - b) * ry + b * np.exp(-0.5 * t))
    np.testing.assert_allclose(rho_z(PARAMS, t, lambda s: np.exp(-0.1 * s)), out)


@pytest.mark.parametrize("target", [MixtureDensity.standard_normal(),
                                    MixtureDensity([1.0], [3.0], [2.0])])
def test_gaussian_target_gives_exponential_acf(target):
    t = TransformedDiffusion.ou(0.3, target)
    times = np.array([0.0, 0.5, 2.0, 10.0])
    np.testing.assert_allclose(rho_y(t, times), np.exp(-0.3 * times), atol=1e-10)


def test_mehler_series_matches_direct_double_integral():
    t = TransformedDiffusion.from_theta([1.0, *FIT1[1:]])
    lag = 0.7
    r = np.exp(-lag)
    gx, gw = hermite_e.hermegauss(120)
    gw = gw / gw.sum()
    x0 = gx[:, None]
    x1 = r * x0 + np.sqrt(1 - r * r) * gx[None, :]
    with np.errstate(all="ignore"):
        import warnings
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            y0, y1 = t.tau(x0), t.tau(x1)
    m = t.target.mean
    cov = np.einsum("i,j,ij->", gw, gw, (y0 - m) * (y1 - m))
    assert rho_y(t, lag) == pytest.approx(cov / t.target.variance, abs=1e-6)


def test_spectrum_properties():
    t = TransformedDiffusion.from_theta(FIT1)
    s = hermite_spectrum(t)
    assert s(0.0) == pytest.approx(1.0, abs=1e-12)
    assert s.tail / s.variance < 0.01
    assert np.all(np.diff(s(np.linspace(0, 200, 50))) < 0)
    # lag_sum agrees with brute force
    n = 300
    h = np.arange(1, n)
    brute = np.sum((1 - h / n) * s.with_rate(0.071)(h))
    assert s.with_rate(0.071).lag_sum(n) == pytest.approx(brute, rel=1e-10)


def test_bartlett_geometric():
    r = np.array([0.3, 0.9, 0.999])
    n = 50
    h = np.arange(1, n)
    brute = [(1 - h / n) @ ri ** h for ri in r]
    np.testing.assert_allclose(_bartlett_geometric(r, n), brute, rtol=1e-10)


def test_mehler_acf_matches_simulation(rng):
    t = TransformedDiffusion.from_theta([0.2, *FIT1[1:]])
    lags = np.array([1, 5, 20])
    rho, se = simulate_rho_y(t, lags, 100_000, 1.0, rng)
    np.testing.assert_array_less(np.abs(rho - rho_y(t, lags)), 4 * se + 1e-3)


def test_empirical_acf_matches_direct(rng):
    x = rng.standard_normal(500).cumsum()
    xc = x - x.mean()
    direct = np.array([xc[: len(x) - k] @ xc[k:] for k in range(6)]) / (xc @ xc)
    np.testing.assert_allclose(empirical_acf(x, 5), direct, atol=1e-12)
    np.testing.assert_array_equal(empirical_acf(np.ones(10), 2), [1, 0, 0])


def test_integrated_autocorrelation_time_ar1(rng):
    rho = np.exp(-0.1)
    x = ou_path(0.1, 200_000, 1.0, "stationary", rng)
    assert integrated_autocorrelation_time(x) == pytest.approx((1 + rho) / (1 - rho), rel=0.15)


def test_hac_covariance_zero_bandwidth_is_sample_covariance(rng):
    s = rng.standard_normal((1000, 3))
    np.testing.assert_allclose(hac_covariance(s, 0), np.cov(s.T, bias=True), atol=1e-12)


def test_expected_acf_limits():
    s = hermite_spectrum(TransformedDiffusion.from_theta([1.0, *FIT1[1:]])).with_rate(0.05)
    lags = np.arange(1, 11)
    np.testing.assert_allclose(expected_acf(s, 0.2, 0.5, lags),
                               0.8 * s(lags) + 0.2 * np.exp(-0.5 * lags))
    big = expected_acf(s, 0.2, 0.5, lags, n=10 ** 9)
    np.testing.assert_allclose(big, expected_acf(s, 0.2, 0.5, lags), atol=1e-6)


def test_fit_marginal_recovers_inflated_mixture(rng):
    t = TransformedDiffusion.from_theta(PARAMS.theta)
    z, _, _ = simulate_with_error(t, PARAMS.kappa, PARAMS.gamma2, 20_000, 1.0, rng)
    m = fit_marginal(z)
    zm = PARAMS.z_mixture
    truth = np.array([zm.weights[0], *zm.locs, *(zm.scales ** 2)])
    assert np.all(np.abs(m.estimates - truth) < 4 * m.stderr)
    with pytest.raises(ValueError):
        fit_marginal(Path(1.0, np.zeros(100)))


@pytest.mark.slow
def test_error_model_fit_recovers_parameters():
    p = ErrorModelParams(tuple(FIT2), 0.43, 0.88)
    t = TransformedDiffusion.from_theta(p.theta)
    z, _, _ = simulate_with_error(t, p.kappa, p.gamma2, 20_000, 1.0, 4)
    fit = fit_error_model(z, lags=100, n_bootstrap=20, rng=np.random.default_rng(5))
    truth = np.array([*p.theta, p.kappa, p.gamma2])
    assert np.all(np.abs(fit.estimates - truth) < 4 * fit.stderr)
    d = fit.to_dict()
    assert set(d["estimates"]) == {"nu", "alpha", "mu1", "sigma1", "mu2", "sigma2", "kappa", "gamma2"}
    with pytest.raises(ValueError):
        fit_error_model(z, n_bootstrap=2)
