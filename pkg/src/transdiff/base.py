"""
Base diffusions
===============

Tractable stationary diffusions ``dX = mu(X) dt + sigma(X) dB`` that serve as
the starting point of the quantile transformation.  ``OUProcess`` is the
fully worked case (``dX = -nu X dt + sqrt(2 nu) dB``, standard normal
stationary law, Hermite eigenfunctions).  Other Pearson diffusions plug in by
subclassing ``BaseDiffusion`` and supplying the stationary law, transition
density and eigenpairs.
"""
from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import hermite_e, polynomial
from scipy import integrate, special

from .densities import norm_pdf


@dataclass(frozen=True)
class EigenPair:
    """
    Polynomial eigenfunction ``g(x) = sum_l coef[l] x**l`` of a generator
    with eigenvalue ``eigenvalue``; ``eigenvalue_grad`` is d(eigenvalue)/d(nu).
    """

    coef: tuple
    eigenvalue: float
    eigenvalue_grad: float = 0.0

    def __call__(self, x):
        return polynomial.polyval(x, self.coef)

    def deriv(self, x, m=1):
        return polynomial.polyval(x, polynomial.polyder(self.coef, m))


class BaseDiffusion(ABC):
    """
    Scalar diffusion on ``state_space = (left, right)``.

    Subclasses must provide :meth:`drift` and :meth:`diffusion`.  The scale
    and speed densities are computed by quadrature unless overridden.
    """

    state_space = (-np.inf, np.inf)
    reference_point = 0.0

    @abstractmethod
    def drift(self, x):
        ...

    @abstractmethod
    def diffusion(self, x):
        ...

    def _check_inside(self, x):
        left, right = self.state_space
        x = np.asarray(x, dtype=float)
        if np.any((x <= left) | (x >= right)) or np.any(np.isnan(x)):
            raise ValueError(f"point outside state space {self.state_space}")

    def scale_density(self, x):
        r"""``s(x) = exp(-2 \int_{x#}^x mu/sigma^2)`` by adaptive quadrature."""
        self._check_inside(x)
        x0 = self.reference_point

        def one(xi):
            val, _ = integrate.quad(lambda u: self.drift(u) / self.diffusion(u) ** 2, x0, xi,
                                    limit=200)
            return np.exp(-2.0 * val)

        with np.errstate(over="ignore"):
            return np.vectorize(one, otypes=[float])(x)

    def speed_density(self, x):
        with np.errstate(divide="ignore"):
            return 1.0 / (self.scale_density(x) * self.diffusion(x) ** 2)

    def lamperti(self, x):
        r"""``\int_{x#}^x 1/sigma(u) du``."""
        x0 = self.reference_point

        def one(xi):
            return integrate.quad(lambda u: 1.0 / self.diffusion(u), x0, xi, limit=200)[0]

        return np.vectorize(one, otypes=[float])(x)

    def generator(self, g, dg, d2g, x):
        """Apply ``mu g' + sigma^2 g'' / 2`` given callables for g and derivatives."""
        return self.drift(x) * dg(x) + 0.5 * self.diffusion(x) ** 2 * d2g(x)

    # interfaces that tractable subclasses implement
    def stationary_pdf(self, x):
        raise NotImplementedError

    def stationary_dpdf(self, x):
        raise NotImplementedError

    def stationary_cdf(self, x):
        raise NotImplementedError

    def stationary_sf(self, x):
        return 1.0 - self.stationary_cdf(x)

    def stationary_ppf(self, p):
        raise NotImplementedError

    def stationary_isf(self, q):
        return self.stationary_ppf(1.0 - np.asarray(q))

    def transition_density(self, x, x0, delta):
        raise NotImplementedError

    def eigenpairs(self, k):
        raise NotImplementedError


class Diffusion1D(BaseDiffusion):
    """Diffusion given by plain drift/diffusion callables (no closed-form law)."""

    def __init__(self, drift, diffusion, state_space=(-np.inf, np.inf), reference_point=0.0):
        self._drift = drift
        self._diffusion = diffusion
        self.state_space = tuple(state_space)
        self.reference_point = reference_point

    def drift(self, x):
        return self._drift(x)

    def diffusion(self, x):
        return self._diffusion(x)


class OUProcess(BaseDiffusion):
    """
    Stationary Ornstein-Uhlenbeck process ``dX = -nu X dt + sqrt(2 nu) dB``.

    The stationary law is N(0, 1) and the autocorrelation is ``exp(-nu t)``.
    """

    def __init__(self, rate):
        rate = float(rate)
        if not rate > 0.0 or not np.isfinite(rate):
            raise ValueError(f"OU rate must be positive and finite, got {rate}")
        self.rate = rate

    def __repr__(self):
        return f"OUProcess(rate={self.rate!r})"

    @property
    def params(self):
        return np.array([self.rate])

    def drift(self, x):
        return -self.rate * np.asarray(x, dtype=float)

    def diffusion(self, x):
        return np.sqrt(2.0 * self.rate) * np.ones_like(np.asarray(x, dtype=float))

    def scale_density(self, x):
        x = np.asarray(x, dtype=float)
        self._check_inside(x)
        return np.exp(0.5 * x * x)

    def speed_density(self, x):
        x = np.asarray(x, dtype=float)
        return np.exp(-0.5 * x * x) / (2.0 * self.rate)

    def lamperti(self, x):
        return np.asarray(x, dtype=float) / np.sqrt(2.0 * self.rate)

    def stationary_pdf(self, x):
        return norm_pdf(x)

    def stationary_dpdf(self, x):
        x = np.asarray(x, dtype=float)
        return -x * norm_pdf(x)

    def stationary_cdf(self, x):
        return special.ndtr(x)

    def stationary_sf(self, x):
        return special.ndtr(-np.asarray(x, dtype=float))

    def stationary_ppf(self, p):
        return special.ndtri(p)

    def stationary_isf(self, q):
        return -special.ndtri(q)

    def transition_moments(self, x0, delta):
        """Conditional mean and variance of X_delta given X_0 = x0."""
        rho = np.exp(-self.rate * delta)
        return rho * np.asarray(x0, dtype=float), -np.expm1(-2.0 * self.rate * delta)

    def transition_density(self, x, x0, delta):
        m, v = self.transition_moments(x0, delta)
        return norm_pdf(x, m, np.sqrt(v))

    def transition_logpdf(self, x, x0, delta):
        m, v = self.transition_moments(x0, delta)
        r = np.asarray(x, dtype=float) - m
        return -0.5 * r * r / v - 0.5 * np.log(2.0 * np.pi * v)

    def transition_sample(self, x0, delta, rng, size=None):
        """Exact draw from N(exp(-nu delta) x0, 1 - exp(-2 nu delta))."""
        if delta <= 0:
            raise ValueError("delta must be positive")
        m, v = self.transition_moments(x0, delta)
        shape = np.shape(m) if size is None else size
        return m + np.sqrt(v) * rng.standard_normal(shape)

    def eigenpairs(self, k):
        """
        Probabilists' Hermite polynomials He_1..He_k with eigenvalues j*nu.

        ``k = 2`` gives exactly ``x`` and ``x**2 - 1``.
        """
        if k < 1:
            raise ValueError("need at least one eigenpair")
        pairs = []
        for j in range(1, k + 1):
            basis = np.zeros(j + 1)
            basis[j] = 1.0
            coef = tuple(float(c) for c in hermite_e.herme2poly(basis))
            pairs.append(EigenPair(coef, j * self.rate, float(j)))
        return pairs


@dataclass(frozen=True)
class StationarityReport:
    passed: bool
    scale_left: float
    scale_right: float
    speed: float
    notes: tuple = ()


_DIVERGENCE_THRESHOLD = 1e8


def _window_integral(func, start, end, n_windows):
    """
    Integrate ``func`` from ``start`` toward ``end`` over geometrically growing
    windows.  Returns (total, converged).  The integral is declared divergent
    when it exceeds 1e8, becomes non-finite, or the last window still adds a
    non-negligible amount.
    """
    sign = 1.0 if end > start else -1.0
    if np.isinf(end):
        edges = start + sign * np.concatenate([[0.0], 2.0 ** np.arange(n_windows)])
    else:
        gap = abs(end - start)
        edges = end - sign * gap * 2.0 ** -np.arange(n_windows + 1.0)
    total = 0.0
    last = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        with np.errstate(over="ignore"):
            last, _ = integrate.quad(func, min(a, b), max(a, b), limit=200)
        total += last
        if not np.isfinite(total) or total > _DIVERGENCE_THRESHOLD:
            return np.inf, False
    if abs(last) > 1e-8 * (1.0 + abs(total)):
        return total, False
    return total, True


def stationary_check(b: BaseDiffusion, n_windows=12):
    """
    Numerical check of the stationarity conditions.

    Both scale integrals must diverge and the speed integral must be finite.
    Divergence cannot be decided numerically; integrals over expanding windows
    that exceed 1e8 or keep growing are treated as divergent.
    """
    left, right = b.state_space
    x0 = b.reference_point

    def scale(u):
        with np.errstate(over="ignore"):
            return float(b.scale_density(u))

    def speed(u):
        with np.errstate(over="ignore", divide="ignore"):
            return float(b.speed_density(u))

    sl, sl_conv = _window_integral(scale, x0, left, n_windows)
    sr, sr_conv = _window_integral(scale, x0, right, n_windows)
    ml, ml_conv = _window_integral(speed, x0, left, n_windows)
    mr, mr_conv = _window_integral(speed, x0, right, n_windows)
    speed_total = ml + mr if (ml_conv and mr_conv) else np.inf
    notes = []
    if sl_conv:
        notes.append("scale integral converges at the left boundary")
    if sr_conv:
        notes.append("scale integral converges at the right boundary")
    if not np.isfinite(speed_total):
        notes.append("speed integral diverges")
    passed = (not sl_conv) and (not sr_conv) and np.isfinite(speed_total)
    return StationarityReport(
        passed=bool(passed),
        scale_left=float(np.inf if not sl_conv else sl),
        scale_right=float(np.inf if not sr_conv else sr),
        speed=float(speed_total),
        notes=tuple(notes),
    )
