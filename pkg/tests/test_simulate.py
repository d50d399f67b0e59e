import io

import numpy as np
import pytest
from scipy import integrate, stats

from transdiff.cli import ingest_csv
from transdiff.errors import SimulationError
from transdiff.simulate import (Path, as_generator, double_well_coefficients,
                                double_well_log_density, ou_path, simulate_euler,
                                simulate_transformed_ou, simulate_with_error)
from transdiff.transform import TransformedDiffusion

from conftest import SYMMETRIC


def test_as_generator_requires_explicit_source():
    g, seed = as_generator(5)
    assert seed == 5 and isinstance(g, np.random.Generator)
    with pytest.raises(TypeError):
        as_generator(None)


def test_ou_path_lag_one_regression(rng):
    nu, d = 0.3, 0.5
    x = ou_path(nu, 200_000, d, "stationary", rng)
    assert abs(x.mean()) < 0.05 and x.var() == pytest.approx(1.0, abs=0.03)
    slope = np.dot(x[:-1], x[1:]) / np.dot(x[:-1], x[:-1])
    assert slope == pytest.approx(np.exp(-nu * d), abs=0.005)


def test_ou_path_fixed_start():
    x = ou_path(1.0, 5, 0.1, 2.5, 0)
    assert x[0] == 2.5 and len(x) == 5


def test_same_seed_same_path():
    t = TransformedDiffusion.from_theta(SYMMETRIC)
    a = simulate_transformed_ou(t, 100, 0.1, "stationary", 7)
    b = simulate_transformed_ou(t, 100, 0.1, "stationary", 7)
    np.testing.assert_array_equal(a.values, b.values)
    assert a.seed == 7


def test_transformed_path_starts_at_given_point():
    t = TransformedDiffusion.from_theta(SYMMETRIC)
    p = simulate_transformed_ou(t, 10, 0.1, 0.3, 1)
    assert p.values[0] == 0.3


def test_transformed_path_marginal(rng):
    t = TransformedDiffusion.from_theta([5.0, 0.5, -1.0, 0.5, 1.0, 0.5])
    y = simulate_transformed_ou(t, 40_000, 1.0, "stationary", rng).values
    assert stats.kstest(y, t.target.cdf).pvalue > 1e-3


def test_error_model_components(rng):
    t = TransformedDiffusion.from_theta([2.0, 0.5, -1.0, 0.5, 1.0, 0.5])
    z, y, e = simulate_with_error(t, 1.5, 0.25, 50_000, 1.0, rng)
    np.testing.assert_allclose(z.values, y.values + e.values)
    assert e.values.var() == pytest.approx(0.25, rel=0.05)
    r1 = np.corrcoef(e.values[:-1], e.values[1:])[0, 1]
    assert r1 == pytest.approx(np.exp(-1.5), abs=0.02)
    with pytest.raises(ValueError):
        simulate_with_error(t, 0.0, 0.25, 10, 1.0, rng)


def test_euler_double_well_ensemble_matches_invariant_density(rng):
    theta, sigma = 1.0, 1.0
    drift, diff = double_well_coefficients(theta, sigma)
    p = simulate_euler(drift, diff, 200, 0.05, 20, np.zeros(4000), rng)
    final = p.values[-1]
    logf = double_well_log_density(theta, sigma)
    norm = integrate.quad(lambda y: np.exp(logf(y)), -4, 4)[0]

    def cdf(y):
        return np.array([integrate.quad(lambda u: np.exp(logf(u)), -4, v)[0] for v in np.atleast_1d(y)]) / norm

    assert stats.kstest(final, cdf).pvalue > 1e-3


def test_euler_divergence_raises_with_step():
    with pytest.raises(SimulationError) as exc, np.errstate(over="ignore", invalid="ignore"):
        simulate_euler(lambda x: x ** 3, lambda x: 0 * x + 1, 100, 1.0, 4, 10.0, 0)
    assert exc.value.index is not None


def test_path_csv_roundtrip(tmp_path):
    p = Path(0.25, np.array([1.0, 2.5, -0.125]))
    f = tmp_path / "p.csv"
    p.to_csv(str(f), comments=["seed 3"])
    q = ingest_csv(f)
    assert q.delta == 0.25
    np.testing.assert_array_equal(q.values, p.values)
    buf = io.StringIO()
    p.to_csv(buf, extra={"eps": [0.0, 1.0, 2.0]})
    assert buf.getvalue().splitlines()[0] == "index,time,value,eps"


def test_path_validation():
    with pytest.raises(ValueError):
        Path(0.0, np.ones(3))
