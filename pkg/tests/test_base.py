import numpy as np
import pytest
from scipy import integrate, stats

from transdiff.base import Diffusion1D, OUProcess, stationary_check


def test_ou_transition_moments_and_density():
    ou = OUProcess(0.7)
    m, v = ou.transition_moments(1.2, 0.5)
    assert m == pytest.approx(1.2 * np.exp(-0.35))
    assert v == pytest.approx(1 - np.exp(-0.7))
    x = np.linspace(-3, 3, 7)
    np.testing.assert_allclose(ou.transition_density(x, 1.2, 0.5), stats.norm.pdf(x, m, np.sqrt(v)))
    np.testing.assert_allclose(np.exp(ou.transition_logpdf(x, 1.2, 0.5)),
                               ou.transition_density(x, 1.2, 0.5), rtol=1e-13)


def test_ou_stationary_law_is_standard_normal():
    ou = OUProcess(2.0)
    x = np.linspace(-4, 4, 9)
    np.testing.assert_allclose(ou.stationary_cdf(x), stats.norm.cdf(x))
    np.testing.assert_allclose(ou.stationary_isf(1e-20), stats.norm.isf(1e-20))
    # stationarity: integrating the transition density against N(0,1) returns N(0,1)
    val = integrate.quad(lambda x0: ou.transition_density(0.4, x0, 0.3) * ou.stationary_pdf(x0),
                         -np.inf, np.inf)[0]
    assert val == pytest.approx(ou.stationary_pdf(0.4), rel=1e-10)


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_hermite_eigenpairs_satisfy_generator_equation(k):
    ou = OUProcess(0.3)
    x = np.linspace(-3, 3, 13)
    for pair in ou.eigenpairs(k):
        lhs = ou.generator(pair, pair.deriv, lambda u: pair.deriv(u, 2), x)
        np.testing.assert_allclose(lhs, -pair.eigenvalue * pair(x), atol=1e-12)


def test_eigenpairs_k2_are_x_and_x2_minus_1():
    g1, g2 = OUProcess(1.0).eigenpairs(2)
    x = np.array([-1.5, 0.0, 2.0])
    np.testing.assert_allclose(g1(x), x)
    np.testing.assert_allclose(g2(x), x * x - 1)
    assert (g1.eigenvalue, g2.eigenvalue) == (1.0, 2.0)


def test_ou_conditional_expectation_of_eigenfunction():
    ou = OUProcess(0.5)
    for pair in ou.eigenpairs(3):
        x0, d = 0.8, 0.7
        val = integrate.quad(lambda x: pair(x) * ou.transition_density(x, x0, d), -np.inf, np.inf)[0]
        assert val == pytest.approx(np.exp(-pair.eigenvalue * d) * pair(x0), rel=1e-9)


def test_ou_scale_and_speed_match_generic_quadrature():
    ou = OUProcess(0.4)
    generic = Diffusion1D(ou.drift, ou.diffusion)
    x = np.array([-1.0, 0.3, 2.0])
    np.testing.assert_allclose(generic.scale_density(x), ou.scale_density(x), rtol=1e-10)
    np.testing.assert_allclose(generic.speed_density(x), ou.speed_density(x), rtol=1e-10)
    np.testing.assert_allclose(generic.lamperti(x), ou.lamperti(x), rtol=1e-10)


def test_stationary_check_accepts_ou_and_rejects_brownian_motion():
    assert stationary_check(OUProcess(1.0)).passed
    bm = Diffusion1D(lambda x: 0.0 * x, lambda x: 1.0 + 0.0 * x)
    rep = stationary_check(bm)
    assert not rep.passed
    assert "speed integral diverges" in rep.notes


def test_stationary_check_flags_transient_drift():
    rep = stationary_check(Diffusion1D(lambda x: 1.0 + 0 * x, lambda x: 1.0 + 0 * x))
    assert not rep.passed
    assert any("right boundary" in n for n in rep.notes)


def test_invalid_rate():
    with pytest.raises(ValueError):
        OUProcess(0.0)
    with pytest.raises(ValueError):
        OUProcess(1.0).transition_sample(0.0, -1.0, np.random.default_rng(0))
