import numpy as np
import pytest
from scipy import stats

from transdiff.densities import MixtureDensity
from transdiff.errors import OutOfRangeError
from transdiff.pure_diffusion import pure_diffusion_coefficients, simulate_pure_diffusion

TARGET = MixtureDensity.bimodal(0.4, -1.0, 0.5, 1.0, 0.6)


def test_coefficients():
    d = MixtureDensity.bimodal(0.5, -1, 0.5, 1, 0.5)
    mu, sig = pure_diffusion_coefficients(d, 0.8, np.array([0.0, 1.0]))
    np.testing.assert_array_equal(mu, 0.0)
    np.testing.assert_allclose(sig, 0.8 / np.sqrt(d.pdf(np.array([0.0, 1.0]))))
    with pytest.raises(OutOfRangeError):
        pure_diffusion_coefficients(d, 0.8, np.array([0.0, 60.0]))
    with pytest.raises(ValueError):
        pure_diffusion_coefficients(d, 0.0, 0.0)


def test_coefficient_locally_minimal_at_modes():
    grid = np.linspace(-2, 2.5, 4501)
    sig = pure_diffusion_coefficients(TARGET, 1.0, grid)[1]
    interior = np.flatnonzero((sig[1:-1] < sig[:-2]) & (sig[1:-1] < sig[2:])) + 1
    np.testing.assert_allclose(np.sort(grid[interior]), TARGET.mode_points("density"), atol=2e-3)


def test_sigma_doubling_doubles_coefficient():
    y = np.linspace(-2, 2, 9)
    a = pure_diffusion_coefficients(TARGET, 0.7, y)[1]
    b = pure_diffusion_coefficients(TARGET, 1.4, y)[1]
    np.testing.assert_allclose(b, 2 * a)


def test_single_path_shape_and_seed():
    p = simulate_pure_diffusion(TARGET, 1.0, 20, 0.1, 3, substeps=8)
    q = simulate_pure_diffusion(TARGET, 1.0, 20, 0.1, 3, substeps=8)
    assert p.values.shape == (20,) and p.values[0] == TARGET.mean
    np.testing.assert_array_equal(p.values, q.values)


def test_ensemble_reaches_target_law(rng):
    p = simulate_pure_diffusion(TARGET, 1.0, 100, 0.1, rng, substeps=32,
                                x0=TARGET.sample(500, rng))
    assert stats.kstest(p.values[10:].ravel(), TARGET.cdf).statistic < 0.03


@pytest.mark.slow
def test_long_simulation_marginal_matches_target():
    # 10^6 recorded values after burn-in, 64 substeps
    p = simulate_pure_diffusion(TARGET, 1.0, 1100, 0.1, np.random.default_rng(1), substeps=64,
                                x0=TARGET.sample(1000, np.random.default_rng(2)))
    values = p.values[100:].ravel()
    assert values.size == 10 ** 6
    assert stats.kstest(values, TARGET.cdf).statistic < 0.02
