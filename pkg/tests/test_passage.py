import warnings

import numpy as np
import pytest
from scipy import integrate, special

from transdiff.base import Diffusion1D, OUProcess
from transdiff.errors import AstronomicalPassageWarning
from transdiff.passage import (mean_passage_general, mean_passage_ou, mean_passage_transformed,
                               monte_carlo_passage, passage_report)
from transdiff.transform import TransformedDiffusion

from conftest import FIT1, SYMMETRIC


def test_ou_closed_form_matches_general_quadrature():
    ou = OUProcess(0.7)
    for a, b in [(-1.0, 1.0), (1.0, -1.0), (0.0, 2.0), (0.5, -0.3)]:
        assert mean_passage_ou(0.7, a, b) == pytest.approx(mean_passage_general(ou, a, b), rel=1e-8)


def test_ou_passage_to_mean_from_above_equals_from_below():
    assert mean_passage_ou(1.0, -1.3, 0.0) == pytest.approx(mean_passage_ou(1.0, 1.3, 0.0))


def test_brownian_motion_with_reflection_analogue():
    # constant drift -1, unit diffusion, from 0 down to -1: E T = 1
    bm = Diffusion1D(lambda x: -1.0 + 0 * x, lambda x: 1.0 + 0 * x)
    assert mean_passage_general(bm, 0.0, -1.0) == pytest.approx(1.0, rel=1e-6)


def test_passage_from_level_to_itself_is_zero():
    t = TransformedDiffusion.from_theta(SYMMETRIC)
    assert mean_passage_transformed(t, 0.5, 0.5) == 0.0


def test_passage_is_invariant_under_the_transformation():
    t = TransformedDiffusion.from_theta(SYMMETRIC)
    a, b = -1.0, 1.0
    xa, xb = t.tau_inv(np.array([a, b]))
    assert mean_passage_transformed(t, a, b) == pytest.approx(mean_passage_ou(1.0, xa, xb))


@pytest.mark.slow
def test_passage_time_with_transformed_coefficients():
    t = TransformedDiffusion.from_theta(SYMMETRIC)
    gen = Diffusion1D(t.drift, t.diffusion, state_space=(-3.5, 3.5), reference_point=0.0)
    lo, hi = t.target.mode_points()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        direct = mean_passage_general(gen, lo, hi, epsrel=1e-6)
    assert direct == pytest.approx(mean_passage_transformed(t, lo, hi), rel=1e-4)


def test_passage_time_scales_inversely_with_rate():
    a = mean_passage_ou(0.5, -1, 1)
    assert mean_passage_ou(1.0, -1, 1) == pytest.approx(a / 2)


def test_astronomical_warning():
    with pytest.warns(AstronomicalPassageWarning):
        v = mean_passage_ou(1.0, 0.0, 9.0)
    assert v > 1e15


def test_report_fit1_and_dict():
    rep = passage_report(TransformedDiffusion.from_theta(FIT1))
    assert (rep.lower, rep.upper) == (25.41, 29.02)
    assert rep.ratio == pytest.approx(rep.down / rep.up)
    d = rep.to_dict()
    assert d["mode_convention"] == "means" and isinstance(d["E_T_upper_from_lower"], float)


def test_report_density_convention_and_unimodal():
    t = TransformedDiffusion.from_theta(SYMMETRIC)
    rep = passage_report(t, convention="density")
    assert rep.up == pytest.approx(rep.down, rel=1e-10)
    uni = TransformedDiffusion.from_theta([1.0, 0.5, -0.2, 1.0, 0.2, 1.0])
    with pytest.raises(ValueError):
        passage_report(uni, convention="density")
    assert passage_report(uni, -1.0, 1.0).convention == "explicit levels"


def test_monte_carlo_ou_passage(rng):
    t = TransformedDiffusion.from_theta([1.0, 0.5, -1.0, 1.0, 1.0, 1.0])
    xa, xb = t.tau_inv(np.array([-0.5, 0.5]))
    exact = mean_passage_ou(1.0, xa, xb)
    est = monte_carlo_passage(t, -0.5, 0.5, 1e-3, 1000, rng)
    assert est.n_censored == 0
    # discrete monitoring overshoots by O(sqrt(delta))
    assert exact - 3 * est.se < est.mean < exact + 3 * est.se + 0.6 * np.sqrt(2e-3)


def test_monte_carlo_discretisation_bias_is_monotone(rng):
    t = TransformedDiffusion.from_theta(SYMMETRIC)
    est = monte_carlo_passage(t, -1.0, 1.0, 1e-3, 400, rng, monitor_every=[1, 4, 16])
    means = [e.mean for e in est]
    assert means[0] <= means[1] <= means[2]


def test_ou_integrand_is_stable_far_in_tail():
    # the erfcx form stays finite where Phi(x) exp(x^2/2) overflows
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", AstronomicalPassageWarning)
        v = mean_passage_ou(1.0, -40.0, 0.0)
    ref = np.sqrt(2 * np.pi) * integrate.quad(lambda x: 0.5 * special.erfcx(-x / np.sqrt(2)), -40, 0)[0]
    assert v == pytest.approx(ref, rel=1e-9)
