"""
Quantile-transformed diffusions
===============================

Given a base diffusion X with stationary cdf ``Pi`` and a target mixture with
cdf ``F``, the process ``Y = tau(X)`` with ``tau = F^{-1} o Pi`` is a
stationary diffusion with invariant density ``f``.  Its coefficients follow
from Ito's formula and its transition density from a change of variables.
"""
from __future__ import annotations

import warnings

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicHermiteSpline

from .base import BaseDiffusion, OUProcess
from .densities import MixtureDensity
from .errors import OutOfRangeError, TailClampWarning

TAIL_CLAMP = 1e-15
_SPLINE_KNOTS = 2048
_SPLINE_PROB = 1e-10


class TransformedDiffusion:
    """
    Diffusion obtained by transforming ``base`` so its invariant law is ``target``.

    Parameters
    ----------
    base : BaseDiffusion
        Base diffusion with a known stationary law (OU in practice).
    target : MixtureDensity
        Target invariant density.
    accelerate : bool
        Build a cubic Hermite spline of ``tau`` (2048 knots spanning the base
        quantiles of 1e-10 .. 1 - 1e-10) for fast repeated evaluation.
        Points outside the knot range fall back to exact inversion.
    """

    def __init__(self, base: BaseDiffusion, target: MixtureDensity, accelerate=False):
        self.base = base
        self.target = target
        self._spline = None
        if accelerate:
            lo = float(base.stationary_ppf(_SPLINE_PROB))
            hi = float(base.stationary_isf(_SPLINE_PROB))
            knots = np.linspace(lo, hi, _SPLINE_KNOTS)
            vals = self._tau_exact(knots)
            slopes = base.stationary_pdf(knots) / target.pdf(vals)
            self._spline = CubicHermiteSpline(knots, vals, slopes, extrapolate=False)
            self._spline_range = (lo, hi)

    @classmethod
    def ou(cls, nu, target, accelerate=False):
        return cls(OUProcess(nu), target, accelerate=accelerate)

    @classmethod
    def from_theta(cls, theta, n_components=2, accelerate=False):
        """Transformed OU from ``theta = (nu, *target.params)``."""
        theta = np.asarray(theta, dtype=float)
        return cls(OUProcess(theta[0]), MixtureDensity.from_params(theta[1:], n_components),
                   accelerate=accelerate)

    @property
    def theta(self):
        return np.concatenate([self.base.params, self.target.params])

    @property
    def param_names(self):
        return ("nu",) + self.target.param_names

    def __repr__(self):
        return f"TransformedDiffusion(base={self.base!r}, target={self.target!r})"

    @property
    def accelerated(self):
        return self._spline is not None

    def with_acceleration(self):
        if self.accelerated:
            return self
        return TransformedDiffusion(self.base, self.target, accelerate=True)

    # the transformation ------------------------------------------------------

    def _tau_exact(self, x):
        x = np.asarray(x, dtype=float)
        lower = x <= 0
        p = np.where(lower, self.base.stationary_cdf(x), self.base.stationary_sf(x))
        clamped = p < TAIL_CLAMP
        if np.any(clamped):
            warnings.warn(f"{int(np.sum(clamped))} tail probabilities clamped to {TAIL_CLAMP}",
                          TailClampWarning, stacklevel=3)
            p = np.maximum(p, TAIL_CLAMP)
        out = np.empty_like(p)
        if np.any(lower):
            out[lower] = self.target.quantile(p[lower])
        if np.any(~lower):
            out[~lower] = self.target.isf(p[~lower])
        return out

    def tau(self, x):
        """``F^{-1}(Pi(x))``, strictly increasing."""
        x = np.asarray(x, dtype=float)
        if self._spline is None:
            return self._tau_exact(x)
        lo, hi = self._spline_range
        inside = (x >= lo) & (x <= hi)
        if np.all(inside):
            return self._spline(x)
        out = np.empty(x.shape)
        out[inside] = self._spline(x[inside])
        out[~inside] = self._tau_exact(x[~inside])
        return out

    def tau_inv(self, y):
        """``Pi^{-1}(F(y))``; raises :class:`OutOfRangeError` on saturation."""
        y = np.asarray(y, dtype=float)
        if not np.all(np.isfinite(y)):
            raise OutOfRangeError("non-finite observation", _first_bad(~np.isfinite(y)))
        p = self.target.cdf(y)
        lower = p <= 0.5
        with np.errstate(divide="ignore"):
            x = np.where(lower, self.base.stationary_ppf(p),
                         self.base.stationary_isf(self.target.sf(y)))
        bad = ~np.isfinite(x)
        if np.any(bad):
            raise OutOfRangeError("tau^{-1} saturated: F(y) rounds to 0 or 1", _first_bad(bad))
        return x

    def dtau(self, x):
        """tau'(x) = pi(x) / f(tau(x))."""
        return self.base.stationary_pdf(x) / self.target.pdf(self.tau(x))

    def dtau_inv(self, y):
        """(tau^{-1})'(y) = f(y) / pi(tau^{-1} y)."""
        return self.target.pdf(y) / self.base.stationary_pdf(self.tau_inv(y))

    def grad_tau_inv_params(self, y):
        """
        Derivatives of ``tau^{-1}(y)`` with respect to the target parameters,
        ``dF/dpsi (y) / pi(tau^{-1} y)``; shape ``(n_params,) + y.shape``.
        The base parameters do not enter ``Pi^{-1} o F`` for the OU base.
        """
        y = np.asarray(y, dtype=float)
        return self.target.grad_cdf_params(y) / self.base.stationary_pdf(self.tau_inv(y))

    # dynamics ---------------------------------------------------------------

    def coefficients(self, y):
        """
        Drift and diffusion coefficient of Y at ``y``.

        Evaluated in Ito form ``tau' mu + tau'' sigma^2 / 2`` and
        ``sigma tau'`` with ``tau' = pi / f`` and
        ``tau'' = pi'/f - pi^2 f' / f^3`` at ``x = tau^{-1}(y)``.
        """
        y = np.asarray(y, dtype=float)
        f = self.target.pdf(y)
        if np.any(f < 1e-300):
            raise OutOfRangeError("target density underflows", _first_bad(f < 1e-300))
        x = self.tau_inv(y)
        pi = self.base.stationary_pdf(x)
        dpi = self.base.stationary_dpdf(x)
        df = self.target.dpdf(y)
        mu = self.base.drift(x)
        sig = self.base.diffusion(x)
        d1 = pi / f
        d2 = dpi / f - pi * pi * df / f ** 3
        return d1 * mu + 0.5 * d2 * sig * sig, sig * d1

    transformed_coefficients = coefficients

    def drift(self, y):
        return self.coefficients(y)[0]

    def diffusion(self, y):
        return self.coefficients(y)[1]

    def generator(self, u, du, d2u, y):
        mu, sig = self.coefficients(y)
        return mu * du + 0.5 * sig * sig * d2u

    def transition_density(self, y, y0, delta):
        """``q(y | y0, delta) = p(tau^{-1} y | tau^{-1} y0, delta) f(y) / pi(tau^{-1} y)``."""
        x = self.tau_inv(y)
        x0 = self.tau_inv(y0)
        return (self.base.transition_density(x, x0, delta) * self.target.pdf(y)
                / self.base.stationary_pdf(x))

    def log_transition_density(self, y, y0, delta):
        x = self.tau_inv(y)
        x0 = self.tau_inv(y0)
        if isinstance(self.base, OUProcess):
            lp = self.base.transition_logpdf(x, x0, delta) + 0.5 * x * x + 0.5 * np.log(2 * np.pi)
        else:
            lp = (np.log(self.base.transition_density(x, x0, delta))
                  - np.log(self.base.stationary_pdf(x)))
        return lp + self.target.logpdf(y)

    def stationary_pdf(self, y):
        return self.target.pdf(y)

    def sample_stationary(self, n, rng):
        return self.tau(self.base.stationary_ppf(rng.uniform(size=n)))

    def lamperti_check(self, x):
        """
        Lamperti coordinates of Y at ``tau(x)`` and of X at ``x``.

        The first integrates ``1 / sigma_Y`` from ``tau(x#)`` to ``tau(x)``
        numerically; the second is the base's own Lamperti map.  Both should
        coincide whatever the target density.
        """
        x0 = self.base.reference_point
        ya = float(self.tau(x0))
        yb = float(self.tau(x))
        val, err = integrate.quad(lambda y: 1.0 / self.diffusion(y), ya, yb,
                                  epsabs=1e-12, epsrel=1e-10, limit=200)
        return val, float(self.base.lamperti(x))


def _first_bad(mask):
    idx = np.flatnonzero(np.ravel(mask))
    return int(idx[0]) if idx.size else None
