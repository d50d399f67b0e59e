"""
Path simulation
===============

Exact simulation of the transformed OU process and of the additive-error
model, plus an Euler-Maruyama integrator for general scalar SDEs (double-well,
pure-diffusion and nonlinear models).

Every routine takes ``rng``: either a ``numpy.random.Generator`` or an integer
seed.  Nothing is ever seeded from ambient entropy.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .base import OUProcess
from .errors import SimulationError
from .transform import TransformedDiffusion

DEFAULT_SUBSTEPS = 32


def as_generator(rng):
    """Return ``(generator, seed_record)`` for a Generator or an integer seed."""
    if isinstance(rng, np.random.Generator):
        return rng, None
    if isinstance(rng, (int, np.integer)) and not isinstance(rng, bool):
        return np.random.default_rng(int(rng)), int(rng)
    raise TypeError("rng must be a numpy Generator or an integer seed")


@dataclass(frozen=True)
class Path:
    """
    Equally spaced observations.

    ``values`` has shape ``(n,)`` for a single path, or ``(n, m)`` for an
    ensemble of ``m`` independent chains recorded on the same grid.
    """

    delta: float
    values: np.ndarray
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("sampling interval must be positive")
        if len(self.values) < 1:
            raise ValueError("a path needs at least one value")

    def __len__(self):
        return len(self.values)

    @property
    def times(self):
        return self.delta * np.arange(len(self.values))

    def to_csv(self, file, extra=None, comments=()):
        """Write ``index,time,value`` (plus any ``extra`` named columns)."""
        if self.values.ndim != 1:
            raise ValueError("only single paths can be exported to CSV")
        extra = extra or {}
        own = isinstance(file, str)
        fh = open(file, "w", newline="") if own else file
        try:
            for line in comments:
                fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow(["index", "time", "value", *extra])
            cols = [np.asarray(v) for v in extra.values()]
            for i, (t, v) in enumerate(zip(self.times, self.values)):
                w.writerow([i, repr(float(t)), repr(float(v)), *(repr(float(c[i])) for c in cols)])
        finally:
            if own:
                fh.close()


def ou_path(nu, n, delta, x0, rng):
    """
    Exact OU path ``x_0..x_{n-1}`` of ``dX = -nu X dt + sqrt(2 nu) dB``.

    ``x0`` may be a number or ``"stationary"``.
    """
    gen, _ = as_generator(rng)
    rho = np.exp(-nu * delta)
    sd = np.sqrt(-np.expm1(-2.0 * nu * delta))
    start = gen.standard_normal() if isinstance(x0, str) and x0 == "stationary" else float(x0)
    if n == 1:
        return np.array([start])
    innov = sd * gen.standard_normal(n - 1)
    rest, _ = signal.lfilter([1.0], [1.0, -rho], innov, zi=[rho * start])
    return np.concatenate([[start], rest])


def simulate_transformed_ou(t: TransformedDiffusion, n, delta, y0="stationary", rng=None):
    """
    Exact path of the transformed OU process: simulate X by exact OU
    transitions and map through ``tau``.
    """
    if not isinstance(t.base, OUProcess):
        raise TypeError("exact simulation requires an OU base")
    gen, seed = as_generator(rng)
    x0 = y0 if isinstance(y0, str) else float(t.tau_inv(y0))
    x = ou_path(t.base.rate, n, delta, x0, gen)
    fast = t.with_acceleration() if n > 5000 else t
    y = fast.tau(x)
    if not isinstance(y0, str):
        y[0] = y0
    return Path(delta, y, seed)


def simulate_with_error(t: TransformedDiffusion, kappa, gamma2, n, delta, rng):
    """
    Additive error model ``Z = Y + eps`` with ``eps`` an OU process of rate
    ``kappa`` and stationary variance ``gamma2``, independent of ``Y``.

    Returns the three paths ``(Z, Y, eps)``.
    """
    if kappa <= 0 or gamma2 < 0:
        raise ValueError("need kappa > 0 and gamma2 >= 0")
    gen, seed = as_generator(rng)
    ypath = simulate_transformed_ou(t, n, delta, "stationary", gen)
    eps = np.sqrt(gamma2) * ou_path(kappa, n, delta, "stationary", gen)
    z = ypath.values + eps
    return Path(delta, z, seed), Path(delta, ypath.values, seed), Path(delta, eps, seed)


def simulate_euler(drift, diffusion, n, delta, substeps=DEFAULT_SUBSTEPS, x0=0.0, rng=None):
    """
    Euler-Maruyama integration recorded every ``delta``.

    Parameters
    ----------
    drift, diffusion : callable
        Vectorised coefficient functions of the state.
    n : int
        Number of recorded values, including ``x0``.
    delta : float
        Recording interval; the internal step is ``delta / substeps``.
    x0 : float or array
        Initial state.  An array starts an ensemble of independent chains
        and the returned values have shape ``(n, len(x0))``.
    """
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    gen, seed = as_generator(rng)
    h = delta / substeps
    sqh = np.sqrt(h)
    x = np.array(x0, dtype=float)
    out = np.empty((n,) + x.shape)
    out[0] = x
    for i in range(1, n):
        for _ in range(substeps):
            dw = gen.standard_normal(x.shape)
            x = x + drift(x) * h + diffusion(x) * sqh * dw
        if not np.all(np.isfinite(x)):
            raise SimulationError("Euler path diverged", i)
        out[i] = x
    return Path(delta, out, seed)


def double_well_coefficients(theta, sigma):
    """
    Drift ``-V'(y)`` and constant diffusion ``sigma`` for the potential
    ``V(y) = theta y^2 (y^2 - 2)``; invariant density is proportional to
    ``exp(-2 V / sigma^2)``.
    """
    def drift(y):
        return -4.0 * theta * (y ** 3 - y)

    def diffusion(y):
        return sigma * np.ones_like(y)

    return drift, diffusion


def double_well_log_density(theta, sigma):
    """Unnormalised log invariant density of the double-well model."""
    return lambda y: -2.0 * theta * y ** 2 * (y ** 2 - 2.0) / sigma ** 2


def nonlinear_coefficients(a_m1, a0, a1, a2, b0, b1, b2, gamma):
    """
    Coefficients of ``dX = (a_m1/X + a0 + a1 X + a2 X^2) dt
    + sqrt(b0 + b1 X + b2 X^gamma) dB`` (demo use only; stationarity
    conditions are not checked).
    """
    def drift(x):
        return a_m1 / x + a0 + a1 * x + a2 * x * x

    def diffusion(x):
        return np.sqrt(b0 + b1 * x + b2 * np.abs(x) ** gamma)

    return drift, diffusion
