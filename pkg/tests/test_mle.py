import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from transdiff.errors import OutOfRangeError
from transdiff.mle import (FitResult, auto_init, fit_mixture_em, fit_mle, from_unconstrained,
                           loglik_transformed_ou, relabel, score_transformed_ou,
                           to_unconstrained, unconstrained_jacobian)
from transdiff.simulate import Path, simulate_transformed_ou
from transdiff.transform import TransformedDiffusion

THETA = np.array([0.5, 0.35, -1.0, 0.5, 1.2, 0.7])


@pytest.fixture(scope="module")
def path():
    t = TransformedDiffusion.from_theta(THETA)
    return simulate_transformed_ou(t, 3000, 0.5, "stationary", 11)


def test_loglik_equals_sum_of_log_transition_densities(path):
    t = TransformedDiffusion.from_theta(THETA)
    y = path.values
    ref = np.sum(np.log(t.transition_density(y[1:], y[:-1], path.delta)))
    assert loglik_transformed_ou(THETA, path) == pytest.approx(ref, rel=1e-10)
    ref0 = ref + np.log(t.target.pdf(y[0]))
    assert loglik_transformed_ou(THETA, path, stationary=True) == pytest.approx(ref0, rel=1e-10)


def test_identity_target_reduces_to_gaussian_ar1():
    theta = np.array([0.8, 0.0, 1.0])
    p = Path(0.3, np.random.default_rng(0).standard_normal(50).cumsum() * 0.2)
    rho, v = np.exp(-0.24), 1 - np.exp(-0.48)
    y = p.values
    ref = np.sum(-0.5 * (y[1:] - rho * y[:-1]) ** 2 / v - 0.5 * np.log(2 * np.pi * v))
    assert loglik_transformed_ou(theta, p) == pytest.approx(ref, rel=1e-10)


@pytest.mark.parametrize("stationary", [False, True])
def test_score_matches_finite_difference(path, stationary):
    g = score_transformed_ou(THETA, path, stationary)
    for i in range(len(THETA)):
        h = 1e-6 * max(1.0, abs(THETA[i]))
        up, dn = THETA.copy(), THETA.copy()
        up[i] += h
        dn[i] -= h
        fd = (loglik_transformed_ou(up, path, stationary)
              - loglik_transformed_ou(dn, path, stationary)) / (2 * h)
        assert g[i] == pytest.approx(fd, rel=1e-5, abs=1e-4)


@settings(max_examples=40, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3), st.floats(-2, 2),
       st.floats(-2, 2))
def test_unconstrained_roundtrip(a, b, c, d, e, f):
    u = np.array([a, b, c, d, e, f])
    np.testing.assert_allclose(to_unconstrained(from_unconstrained(u)), u, atol=1e-9)


def test_unconstrained_jacobian():
    u = to_unconstrained(THETA)
    jac = unconstrained_jacobian(u)
    for j in range(len(u)):
        e = np.zeros_like(u)
        e[j] = 1e-6
        np.testing.assert_allclose(jac[:, j], (from_unconstrained(u + e) - from_unconstrained(u - e)) / 2e-6,
                                   rtol=1e-6, atol=1e-9)


def test_relabel_orders_means_and_preserves_density():
    swapped = np.array([0.5, 0.65, 1.2, 0.7, -1.0, 0.5])
    out = relabel(swapped)
    np.testing.assert_allclose(out, THETA)


def test_em_recovers_mixture(rng):
    from transdiff.densities import MixtureDensity
    d = MixtureDensity.bimodal(0.3, -2.0, 0.5, 1.0, 1.0)
    w, locs, scales, ll, it = fit_mixture_em(d.sample(20000, rng))
    np.testing.assert_allclose(w, [0.3, 0.7], atol=0.02)
    np.testing.assert_allclose(locs, [-2, 1], atol=0.05)
    np.testing.assert_allclose(scales, [0.5, 1.0], atol=0.05)


def test_fit_recovers_parameters_within_wald_intervals(path):
    fit = fit_mle(path)
    assert fit.converged
    z = (fit.theta - THETA) / fit.stderr
    assert np.all(np.abs(z) < 3.5)
    # all starts agree at the optimum
    lls = [v for v in fit.trace["start_logliks"] if v is not None]
    assert max(lls) == pytest.approx(fit.loglik, rel=1e-9)


def test_fit_from_given_start_and_json_roundtrip(path):
    fit = fit_mle(path, THETA, n_starts=1)
    again = FitResult.from_dict(json.loads(fit.to_json()))
    np.testing.assert_allclose(again.theta, fit.theta)
    np.testing.assert_allclose(again.stderr, fit.stderr)
    assert again.model().target == fit.model().target


def test_fit_rejects_short_series():
    with pytest.raises(ValueError):
        fit_mle(Path(1.0, np.arange(10.0)))


def test_auto_init_flags_unimodal_data(rng):
    t = TransformedDiffusion.from_theta([1.0, 0.5, -0.3, 1.0, 0.3, 1.0])
    p = simulate_transformed_ou(t, 2000, 1.0, "stationary", rng)
    assert auto_init(p).unimodal
    constant = auto_init(Path(1.0, np.ones(60)))
    assert constant.degenerate


def test_saturating_observation_raises_with_index():
    p = Path(1.0, np.array([0.0, 0.5, 1e4, 0.1]))
    with pytest.raises(OutOfRangeError) as exc:
        loglik_transformed_ou(THETA, p)
    assert exc.value.index == 2
