"""
Model checking
==============

Uniform (probability integral transform) residuals from the one-step
transition law, marginal goodness of fit, and local-linear kernel estimates
of the drift and squared diffusion coefficient.

KS statistics computed here assume independent observations.  Uniform
residuals are independent under the model, but raw observations of a
diffusion are not, so marginal p-values are reported with a caveat.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

from .base import OUProcess
from .densities import MixtureDensity
from .transform import TransformedDiffusion

DEPENDENCE_CAVEAT = ("KS calibration assumes independent observations; "
                     "p-values for raw (dependent) diffusion data are not valid")
DEFAULT_BANDWIDTH = 0.1


def _values(path):
    return np.asarray(getattr(path, "values", path), dtype=float)


@dataclass(frozen=True)
class ResidualReport:
    """Uniform residuals with a KS test against U(0,1) and lag-1 rank correlation."""

    u: np.ndarray
    ks_statistic: float
    ks_pvalue: float
    lag1_rank_corr: float
    rank_corr_pvalue: float
    notes: tuple = ()

    def __len__(self):
        return len(self.u)

    def to_dict(self):
        return {"n": len(self.u), "ks_statistic": self.ks_statistic, "ks_pvalue": self.ks_pvalue,
                "lag1_rank_corr": self.lag1_rank_corr, "rank_corr_pvalue": self.rank_corr_pvalue,
                "notes": list(self.notes)}

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)


def uniform_residuals(t: TransformedDiffusion, path):
    """
    ``u_i = Phi((x_i - exp(-nu delta) x_{i-1}) / sqrt(1 - exp(-2 nu delta)))``
    with ``x_i = tau^{-1}(y_i)``; i.i.d. U(0,1) under the model.
    """
    if not isinstance(t.base, OUProcess):
        raise TypeError("uniform residuals need the OU transition law")
    y = _values(path)
    if len(y) < 2:
        return ResidualReport(np.empty(0), np.nan, np.nan, np.nan, np.nan, ("fewer than two observations",))
    x = t.tau_inv(y)
    m, v = t.base.transition_moments(x[:-1], path.delta)
    u = special.ndtr((x[1:] - m) / np.sqrt(v))
    ks = stats.kstest(u, "uniform")
    if len(u) > 2:
        rc = stats.spearmanr(u[:-1], u[1:])
        corr, pval = float(rc.statistic), float(rc.pvalue)
    else:
        corr, pval = np.nan, np.nan
    return ResidualReport(u, float(ks.statistic), float(ks.pvalue), corr, pval)


def transition_quantile(t: TransformedDiffusion, u, y_prev, delta):
    """Inverse of the one-step transition cdf: ``tau(rho x_prev + s Phi^{-1}(u))``."""
    x_prev = t.tau_inv(y_prev)
    m, v = t.base.transition_moments(x_prev, delta)
    return t.tau(m + np.sqrt(v) * special.ndtri(u))


def qq_data(report: ResidualReport):
    """Sorted residuals against uniform plotting positions ``(i - 0.5)/n``."""
    n = len(report.u)
    return (np.arange(1, n + 1) - 0.5) / n, np.sort(report.u)


def lag_data(report: ResidualReport):
    """Pairs ``(u_{i-1}, u_i)`` for a lag plot."""
    return report.u[:-1], report.u[1:]


@dataclass(frozen=True)
class LocalLinearEstimate:
    grid: np.ndarray
    drift: np.ndarray
    diffusion2: np.ndarray
    valid: np.ndarray
    bandwidth: float
    notes: tuple = field(default=())


def _local_linear(xc, resp, grid, h, min_eff):
    est = np.full((resp.shape[0], len(grid)), np.nan)
    valid = np.zeros(len(grid), dtype=bool)
    for g, pt in enumerate(grid):
        d = xc - pt
        w = np.exp(-0.5 * (d / h) ** 2)
        s0 = w.sum()
        if s0 <= 0 or s0 * s0 / np.dot(w, w) < min_eff:
            continue
        s1, s2 = np.dot(w, d), np.dot(w, d * d)
        t0, t1 = resp @ w, resp @ (w * d)
        den = s0 * s2 - s1 * s1
        if den > 1e-12 * s0 * s2:
            est[:, g] = (s2 * t0 - s1 * t1) / den
        else:
            est[:, g] = t0 / s0
        valid[g] = True
    return est, valid


def local_linear_coefficients(path, bandwidth=DEFAULT_BANDWIDTH, grid=None, min_effective=5.0):
    """
    Local-linear (Gaussian kernel) regression of ``(y_i - y_{i-1}) / delta``
    and ``(y_i - y_{i-1})^2 / delta`` on ``y_{i-1}``.

    Grid points whose kernel window holds fewer than ``min_effective``
    effective observations are skipped (``nan``, ``valid = False``).
    """
    if not bandwidth > 0:
        raise ValueError("bandwidth must be positive")
    y = _values(path)
    delta = float(path.delta)
    if grid is None:
        grid = np.linspace(np.quantile(y, 0.01), np.quantile(y, 0.99), 101)
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    inc = np.diff(y)
    resp = np.vstack([inc / delta, inc * inc / delta])
    est, valid = _local_linear(y[:-1], resp, grid, bandwidth, min_effective)
    notes = () if valid.all() else (f"{int((~valid).sum())} grid points skipped: empty kernel window",)
    return LocalLinearEstimate(grid, est[0], est[1], valid, float(bandwidth), notes)


@dataclass(frozen=True)
class MarginalGof:
    ks_statistic: float
    ks_pvalue: float
    edges: np.ndarray
    empirical_density: np.ndarray
    model_density: np.ndarray
    notes: tuple = (DEPENDENCE_CAVEAT,)

    def to_dict(self):
        return {"ks_statistic": self.ks_statistic, "ks_pvalue": self.ks_pvalue,
                "notes": list(self.notes),
                "histogram": {"left": self.edges[:-1].tolist(), "right": self.edges[1:].tolist(),
                              "empirical_density": self.empirical_density.tolist(),
                              "model_density": self.model_density.tolist()}}


def marginal_gof(d: MixtureDensity, path, bins=50):
    """KS distance between the empirical cdf of the data and ``F``, plus a histogram table."""
    y = _values(path)
    if len(y) < 100:
        raise ValueError("marginal goodness of fit needs at least 100 observations")
    ks = stats.kstest(y, d.cdf)
    lo, hi = y.min(), y.max()
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    dens, edges = np.histogram(y, bins=bins, range=(lo, hi), density=True)
    model = np.diff(d.cdf(edges)) / np.diff(edges)
    return MarginalGof(float(ks.statistic), float(ks.pvalue), edges, dens, model)
