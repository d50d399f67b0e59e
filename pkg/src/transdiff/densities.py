"""
Normal mixture densities
========================

``MixtureDensity`` is the parametric multi-modal target law of a transformed
diffusion.  Besides pdf/cdf/quantile it carries the parameter derivatives
needed by the likelihood score and the martingale estimating functions.

Parameter vector layout for ``k`` components::

    (w_1, ..., w_{k-1}, mu_1, sigma_1, ..., mu_k, sigma_k)

so that the bimodal case is ``(alpha, mu1, sigma1, mu2, sigma2)``.
"""
from __future__ import annotations

import numpy as np
from scipy import optimize, special

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


def log_sum_exp(a):
    """Stable ``log(sum(exp(a)))`` over the last axis."""
    a = np.asarray(a, dtype=float)
    if a.shape[-1] == 2:
        return np.logaddexp(a[..., 0], a[..., 1])
    return np.logaddexp.reduce(a, axis=-1)


def norm_pdf(y, loc=0.0, scale=1.0):
    z = (np.asarray(y, dtype=float) - loc) / scale
    return np.exp(-0.5 * z * z - _LOG_SQRT_2PI) / scale


class MixtureDensity:
    """
    Finite mixture of normal densities.

    Parameters
    ----------
    weights : sequence of float
        Mixture weights, each in (0, 1), summing to one.
    locs : sequence of float
        Component means.
    scales : sequence of float
        Component standard deviations, strictly positive.
    """

    def __init__(self, weights, locs, scales):
        w = np.array(weights, dtype=float).ravel()
        m = np.array(locs, dtype=float).ravel()
        s = np.array(scales, dtype=float).ravel()
        if not (w.size == m.size == s.size) or w.size < 1:
            raise ValueError("weights, locs and scales must have equal nonzero length")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(m)) and np.all(np.isfinite(s))):
            raise ValueError("mixture parameters must be finite")
        if w.size > 1 and np.any((w <= 0.0) | (w >= 1.0)):
            raise ValueError(f"weights must lie strictly inside (0, 1), got {w}")
        if abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1, got {w.sum()}")
        if np.any(s <= 0.0):
            raise ValueError(f"scales must be positive, got {s}")
        w = w / w.sum()
        for a in (w, m, s):
            a.setflags(write=False)
        self.weights, self.locs, self.scales = w, m, s

    # construction -----------------------------------------------------------

    @classmethod
    def bimodal(cls, alpha, mu1, sigma1, mu2, sigma2):
        return cls([alpha, 1.0 - alpha], [mu1, mu2], [sigma1, sigma2])

    @classmethod
    def standard_normal(cls):
        return cls([1.0], [0.0], [1.0])

    @classmethod
    def from_params(cls, params, n_components=2):
        p = np.asarray(params, dtype=float).ravel()
        k = n_components
        if p.size != 3 * k - 1:
            raise ValueError(f"expected {3 * k - 1} parameters for {k} components, got {p.size}")
        w = np.empty(k)
        w[:-1] = p[: k - 1]
        w[-1] = 1.0 - p[: k - 1].sum()
        rest = p[k - 1:].reshape(k, 2)
        return cls(w, rest[:, 0], rest[:, 1])

    @property
    def n_components(self):
        return self.weights.size

    @property
    def n_params(self):
        return 3 * self.n_components - 1

    @property
    def params(self):
        k = self.n_components
        out = np.empty(3 * k - 1)
        out[: k - 1] = self.weights[:-1]
        out[k - 1:] = np.column_stack([self.locs, self.scales]).ravel()
        return out

    @property
    def param_names(self):
        k = self.n_components
        if k == 2:
            return ("alpha", "mu1", "sigma1", "mu2", "sigma2")
        names = [f"w{i + 1}" for i in range(k - 1)]
        for i in range(k):
            names += [f"mu{i + 1}", f"sigma{i + 1}"]
        return tuple(names)

    def to_dict(self):
        if self.n_components == 2:
            return dict(zip(self.param_names, map(float, self.params)))
        return {"components": [
            {"weight": float(w), "loc": float(m), "scale": float(s)}
            for w, m, s in zip(self.weights, self.locs, self.scales)
        ]}

    @classmethod
    def from_dict(cls, d):
        if "components" in d:
            comps = d["components"]
            return cls([c["weight"] for c in comps], [c["loc"] for c in comps],
                       [c["scale"] for c in comps])
        return cls.bimodal(d["alpha"], d["mu1"], d["sigma1"], d["mu2"], d["sigma2"])

    def __repr__(self):
        return (f"MixtureDensity(weights={self.weights.tolist()}, "
                f"locs={self.locs.tolist()}, scales={self.scales.tolist()})")

    def __eq__(self, other):
        if not isinstance(other, MixtureDensity):
            return NotImplemented
        return (self.n_components == other.n_components
                and np.array_equal(self.params, other.params))

    def __hash__(self):
        return hash(tuple(self.params))

    # evaluation -------------------------------------------------------------

    def _z(self, y):
        y = np.asarray(y, dtype=float)
        return (y[..., None] - self.locs) / self.scales

    def _component_pdf(self, y):
        z = self._z(y)
        return np.exp(-0.5 * z * z - _LOG_SQRT_2PI) / self.scales

    def pdf(self, y):
        """Mixture density at ``y``; raises on non-finite input."""
        _check_finite(y)
        return self._component_pdf(y) @ self.weights

    def logpdf(self, y):
        _check_finite(y)
        z = self._z(y)
        terms = np.log(self.weights) - np.log(self.scales) - 0.5 * z * z - _LOG_SQRT_2PI
        return log_sum_exp(terms)

    def dpdf(self, y):
        """First derivative f'(y)."""
        z = self._z(y)
        return (self._component_pdf(y) * (-z / self.scales)) @ self.weights

    def cdf(self, y):
        return special.ndtr(self._z(y)) @ self.weights

    def sf(self, y):
        return special.ndtr(-self._z(y)) @ self.weights

    def logcdf(self, y):
        return log_sum_exp(special.log_ndtr(self._z(y)) + np.log(self.weights))

    def logsf(self, y):
        return log_sum_exp(special.log_ndtr(-self._z(y)) + np.log(self.weights))

    # inversion --------------------------------------------------------------

    def quantile(self, p):
        """
        Inverse of :meth:`cdf`.

        Safeguarded Newton iteration inside a bracket given by the extreme
        component quantiles; ``p`` must lie in (0, 1).
        """
        p = np.asarray(p, dtype=float)
        if np.any(~(p > 0.0) | ~(p < 1.0)):
            raise ValueError("quantile requires probabilities strictly inside (0, 1)")
        return self._invert(p, upper=False)

    def isf(self, q):
        """Inverse survival function: solves ``sf(y) = q``; accurate for tiny ``q``."""
        q = np.asarray(q, dtype=float)
        if np.any(~(q > 0.0) | ~(q < 1.0)):
            raise ValueError("isf requires probabilities strictly inside (0, 1)")
        return self._invert(q, upper=True)

    def _invert(self, p, upper):
        shape = p.shape
        p = p.ravel()
        if self.n_components == 1:
            z = -special.ndtri(p) if upper else special.ndtri(p)
            return (self.locs[0] + self.scales[0] * z).reshape(shape)
        zq = -special.ndtri(p) if upper else special.ndtri(p)
        cand = self.locs + self.scales * zq[:, None]
        lo = cand.min(axis=1)
        hi = cand.max(axis=1)
        logp = np.log(p)

        # residual is increasing in y in both modes
        def resid(y, lp):
            if upper:
                return lp - self.logsf(y)
            return self.logcdf(y) - lp

        def dresid(y):
            lf = self.logpdf(y)
            return np.exp(lf - (self.logsf(y) if upper else self.logcdf(y)))

        y = 0.5 * (lo + hi)
        width = hi - lo
        active = width > 0
        y[~active] = lo[~active]
        for _ in range(200):
            if not active.any():
                break
            ya = y[active]
            r = resid(ya, logp[active])
            pos = r > 0
            hi_a, lo_a = hi[active], lo[active]
            hi_a = np.where(pos, ya, hi_a)
            lo_a = np.where(pos, lo_a, ya)
            d = dresid(ya)
            with np.errstate(divide="ignore", invalid="ignore"):
                step = r / d
            ynew = ya - step
            bad = ~np.isfinite(ynew) | (ynew < lo_a) | (ynew > hi_a)
            ynew = np.where(bad, 0.5 * (lo_a + hi_a), ynew)
            ynew = np.where(r == 0, ya, ynew)
            tol = 4e-16 * (1.0 + np.abs(ynew))
            done = (np.abs(ynew - ya) <= tol) | (hi_a - lo_a <= tol)
            y[active] = ynew
            hi[active], lo[active] = hi_a, lo_a
            idx = np.flatnonzero(active)
            active[idx[done]] = False
        return y.reshape(shape)

    # parameter calculus -----------------------------------------------------

    def grad_cdf_params(self, y):
        """
        Partial derivatives of F(y) with respect to the parameter vector.

        Returns an array of shape ``(n_params,) + y.shape``.  In the bimodal
        case the rows are

        * ``Phi(y; mu1, s1) - Phi(y; mu2, s2)``
        * ``-(alpha / s1) phi(y; mu1, s1)``
        * ``-alpha (y - mu1) / s1**2 phi(y; mu1, s1)``
        * and likewise for the second component with weight ``1 - alpha``.
        """
        y = np.asarray(y, dtype=float)
        k = self.n_components
        z = self._z(y)
        comp_pdf = self._component_pdf(y)
        out = np.empty((3 * k - 1,) + y.shape)
        if k > 1:
            upper = (self.cdf(y) > 0.5)[..., None]
            comp_cdf = np.where(upper, -special.ndtr(-z), special.ndtr(z))
            for i in range(k - 1):
                out[i] = comp_cdf[..., i] - comp_cdf[..., -1]
        for i in range(k):
            wp = self.weights[i] * comp_pdf[..., i]
            out[k - 1 + 2 * i] = -wp
            out[k + 2 * i] = -wp * z[..., i]
        return out

    def grad_pdf_params(self, y):
        """Partial derivatives of f(y) w.r.t. the parameter vector, same layout."""
        y = np.asarray(y, dtype=float)
        k = self.n_components
        z = self._z(y)
        comp_pdf = self._component_pdf(y)
        out = np.empty((3 * k - 1,) + y.shape)
        for i in range(k - 1):
            out[i] = comp_pdf[..., i] - comp_pdf[..., -1]
        for i in range(k):
            wp = self.weights[i] * comp_pdf[..., i]
            s = self.scales[i]
            out[k - 1 + 2 * i] = wp * z[..., i] / s
            out[k + 2 * i] = wp * (z[..., i] ** 2 - 1.0) / s
        return out

    # moments and modes ------------------------------------------------------

    def moment(self, order):
        """Raw moment E[Y**order] as the weighted sum of component moments."""
        if order < 1:
            raise ValueError("moment order must be >= 1")
        return float(self.weights @ _normal_raw_moments(self.locs, self.scales ** 2, order)[order])

    @property
    def mean(self):
        return float(self.weights @ self.locs)

    @property
    def variance(self):
        m = self.mean
        return float(self.weights @ (self.scales ** 2 + (self.locs - m) ** 2))

    def mode_points(self, convention="means", n_grid=10_000):
        """
        Mode locations.

        ``convention="means"`` returns the sorted component means, which is
        how the mode levels are read off a fitted mixture for passage-time
        reporting.  ``convention="density"`` locates the local maxima of the
        density numerically (grid scan over +-8 pooled standard deviations,
        then root refinement of f').
        """
        if convention == "means":
            return np.sort(self.locs)
        if convention != "density":
            raise ValueError(f"unknown mode convention {convention!r}")
        sd = np.sqrt(self.variance)
        grid = np.linspace(self.mean - 8 * sd, self.mean + 8 * sd, n_grid)
        d = self.dpdf(grid)
        idx = np.flatnonzero((d[:-1] > 0) & (d[1:] <= 0))
        modes = []
        for i in idx:
            if d[i + 1] == 0.0:
                modes.append(grid[i + 1])
            else:
                modes.append(optimize.brentq(self.dpdf, grid[i], grid[i + 1], xtol=1e-13))
        return np.array(modes)

    def n_modes(self):
        return len(self.mode_points("density"))

    def sample(self, n, rng):
        comp = rng.choice(self.n_components, size=n, p=self.weights)
        return self.locs[comp] + self.scales[comp] * rng.standard_normal(n)


def _normal_raw_moments(mean, var, order):
    """Raw moments 0..order of N(mean, var) via M_n = m M_{n-1} + (n-1) v M_{n-2}."""
    mean = np.asarray(mean, dtype=float)
    var = np.asarray(var, dtype=float)
    out = np.empty((order + 1,) + np.broadcast(mean, var).shape)
    out[0] = 1.0
    if order >= 1:
        out[1] = mean
    for n in range(2, order + 1):
        out[n] = mean * out[n - 1] + (n - 1) * var * out[n - 2]
    return out


def _check_finite(y):
    if not np.all(np.isfinite(y)):
        raise ValueError("density evaluation requires finite arguments")
