import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from transdiff.densities import MixtureDensity, norm_pdf

params = st.tuples(
    st.floats(0.05, 0.95), st.floats(-5, 5), st.floats(0.1, 3), st.floats(-5, 5), st.floats(0.1, 3))


def test_pdf_cdf_match_scipy(bimodal):
    y = np.linspace(-5, 6, 41)
    ref_pdf = 0.3 * stats.norm.pdf(y, -1, 0.6) + 0.7 * stats.norm.pdf(y, 1.5, 0.9)
    ref_cdf = 0.3 * stats.norm.cdf(y, -1, 0.6) + 0.7 * stats.norm.cdf(y, 1.5, 0.9)
    np.testing.assert_allclose(bimodal.pdf(y), ref_pdf, rtol=1e-13)
    np.testing.assert_allclose(bimodal.cdf(y), ref_cdf, rtol=1e-13)
    np.testing.assert_allclose(bimodal.sf(y), 1 - ref_cdf, rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(bimodal.logpdf(y), np.log(ref_pdf), rtol=1e-13)


def test_pdf_integrates_to_one(bimodal):
    val, _ = integrate.quad(bimodal.pdf, -np.inf, np.inf)
    assert val == pytest.approx(1.0, abs=1e-10)


@settings(max_examples=50, deadline=None)
@given(params, st.floats(1e-12, 1 - 1e-12))
def test_quantile_inverts_cdf(p, u):
    d = MixtureDensity.bimodal(*p)
    y = d.quantile(u)
    assert d.cdf(y) == pytest.approx(u, rel=1e-9, abs=1e-15)


@settings(max_examples=30, deadline=None)
@given(params, st.floats(1e-300, 1e-3))
def test_isf_accurate_in_far_upper_tail(p, q):
    d = MixtureDensity.bimodal(*p)
    assert d.sf(d.isf(q)) == pytest.approx(q, rel=1e-8)


def test_quantile_rejects_boundary(bimodal):
    with pytest.raises(ValueError):
        bimodal.quantile(0.0)
    with pytest.raises(ValueError):
        bimodal.isf(1.0)


def test_dpdf_matches_finite_difference(bimodal):
    y = np.linspace(-3, 4, 15)
    h = 1e-6
    fd = (bimodal.pdf(y + h) - bimodal.pdf(y - h)) / (2 * h)
    np.testing.assert_allclose(bimodal.dpdf(y), fd, rtol=1e-6, atol=1e-10)


@pytest.mark.parametrize("which", ["grad_cdf_params", "grad_pdf_params"])
def test_parameter_gradients_match_finite_difference(bimodal, which):
    y = np.linspace(-3, 4, 9)
    p0 = bimodal.params
    analytic = getattr(bimodal, which)(y)
    func = "cdf" if which == "grad_cdf_params" else "pdf"
    for i in range(len(p0)):
        h = 1e-6
        up, dn = p0.copy(), p0.copy()
        up[i] += h
        dn[i] -= h
        fd = (getattr(MixtureDensity.from_params(up), func)(y)
              - getattr(MixtureDensity.from_params(dn), func)(y)) / (2 * h)
        np.testing.assert_allclose(analytic[i], fd, rtol=1e-6, atol=1e-9)


def test_moments_match_quadrature(bimodal):
    for k in (1, 2, 3, 4):
        ref, _ = integrate.quad(lambda y: y ** k * bimodal.pdf(y), -np.inf, np.inf)
        assert bimodal.moment(k) == pytest.approx(ref, rel=1e-9)
    assert bimodal.variance == pytest.approx(bimodal.moment(2) - bimodal.mean ** 2)


def test_mode_conventions():
    d = MixtureDensity.bimodal(0.5, -2.0, 0.5, 2.0, 0.5)
    np.testing.assert_allclose(d.mode_points("means"), [-2, 2])
    np.testing.assert_allclose(d.mode_points("density"), [-2, 2], atol=1e-6)
    assert d.n_modes() == 2
    assert MixtureDensity.bimodal(0.5, -0.5, 1, 0.5, 1).n_modes() == 1
    with pytest.raises(ValueError):
        d.mode_points("median")


def test_params_roundtrip(bimodal):
    assert MixtureDensity.from_params(bimodal.params) == bimodal
    assert MixtureDensity.from_dict(bimodal.to_dict()) == bimodal
    three = MixtureDensity([0.2, 0.3, 0.5], [-1, 0, 2], [1, 0.5, 0.3])
    assert MixtureDensity.from_dict(three.to_dict()) == three
    assert MixtureDensity.from_params(three.params, 3) == three


@pytest.mark.parametrize("bad", [
    dict(weights=[0.0, 1.0], locs=[0, 1], scales=[1, 1]),
    dict(weights=[0.5, 0.6], locs=[0, 1], scales=[1, 1]),
    dict(weights=[0.5, 0.5], locs=[0, 1], scales=[1, -1]),
    dict(weights=[0.5, 0.5], locs=[0, np.nan], scales=[1, 1]),
])
def test_invalid_parameters_rejected(bad):
    with pytest.raises(ValueError):
        MixtureDensity(**bad)


def test_sample_matches_cdf(bimodal, rng):
    ks = stats.kstest(bimodal.sample(20000, rng), bimodal.cdf)
    assert ks.pvalue > 1e-3


def test_norm_pdf():
    np.testing.assert_allclose(norm_pdf(1.3, 0.2, 2.0), stats.norm.pdf(1.3, 0.2, 2.0))
