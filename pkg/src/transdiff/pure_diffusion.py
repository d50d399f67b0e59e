"""
Drift-free diffusion with a prescribed invariant density
========================================================

``dX = sigma / sqrt(f(X)) dB`` is ergodic with invariant density ``f``: the
speed density ``1 / (s sigma_X^2) = f / sigma^2`` is proportional to ``f``.
Fluctuations are smallest where ``f`` is largest, so the process lingers at
the modes.  Only simulation (Euler) is provided.
"""
from __future__ import annotations

import numpy as np

from .densities import MixtureDensity
from .errors import OutOfRangeError
from .errors import SimulationError
from .simulate import Path, as_generator

_PDF_FLOOR = 1e-300
REFLECT_MASS = 1e-10


def pure_diffusion_coefficients(d: MixtureDensity, sigma, y):
    """Return ``(0, sigma / sqrt(f(y)))``."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    y = np.asarray(y, dtype=float)
    f = d.pdf(y)
    if np.any(f < _PDF_FLOOR):
        idx = int(np.flatnonzero(np.ravel(f < _PDF_FLOOR))[0])
        raise OutOfRangeError("density underflows", idx)
    return np.zeros_like(f), sigma / np.sqrt(f)


def pure_diffusion_model(d: MixtureDensity, sigma):
    """Drift and diffusion callables for :func:`transdiff.simulate.simulate_euler`."""
    def drift(y):
        return np.zeros_like(np.asarray(y, dtype=float))

    def diffusion(y):
        return sigma / np.sqrt(np.maximum(d.pdf(y), _PDF_FLOOR))

    return drift, diffusion


def simulate_pure_diffusion(d: MixtureDensity, sigma, n, delta, rng, substeps=64, x0=None,
                            max_increment_sd=None):
    """
    Euler path(s) with a step cap in the tails.

    Parameters
    ----------
    n : int
        Number of recorded values, including the start.
    substeps : int
        Bulk Euler steps per recording interval.
    x0 : float or array, optional
        Start; defaults to the mean of ``d``.  An array starts an ensemble
        and the values have shape ``(n, len(x0))``.
    max_increment_sd : float, optional
        ``eta``; defaults to half the smallest component scale.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    gen, seed = as_generator(rng)
    eta = 0.5 * float(np.min(d.scales)) if max_increment_sd is None else float(max_increment_sd)
    cap = eta * eta / (sigma * sigma)
    h = delta / substeps
    lo, hi = float(d.quantile(REFLECT_MASS)), float(d.isf(REFLECT_MASS))
    start = np.array(d.mean if x0 is None else x0, dtype=float)
    x = np.atleast_1d(start).copy()
    out = np.empty((n,) + x.shape)
    out[0] = x
    for i in range(1, n):
        left = np.full(x.shape, float(delta))
        active = np.ones(x.shape, dtype=bool)
        while active.any():
            xa = x[active]
            f = np.maximum(d.pdf(xa), _PDF_FLOOR)
            step = np.minimum(np.minimum(h, left[active]), cap * f)
            xn = xa + sigma * np.sqrt(step / f) * gen.standard_normal(xa.shape)
            xn = np.where(xn < lo, 2 * lo - xn, xn)
            x[active] = np.where(xn > hi, 2 * hi - xn, xn)
            left[active] -= step
            active = left > 1e-9 * delta
        if not np.all(np.isfinite(x)):
            raise SimulationError("path diverged", i)
        out[i] = x
    values = out if start.ndim else out[:, 0]
    return Path(delta, values, seed)
