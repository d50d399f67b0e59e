"""
Martingale estimating functions
===============================

With ``x_i = tau^{-1}(y_i)`` and base eigenfunctions ``g_j`` (eigenvalue
``lambda_j``), the increments

    h_j(x_{i-1}, x_i) = g_j(x_i) - exp(-lambda_j delta) g_j(x_{i-1})

have zero conditional mean given the past, so

    G_N(theta) = sum_i w(y_{i-1}) h(x_{i-1}, x_i)

is a martingale estimating function for any weight matrix ``w`` that depends
on the past only through ``y_{i-1}``.  The optimal weights are
``w* = B V^{-1}`` with ``V`` the conditional covariance of ``h`` and
``B = E[d h / d theta | y_{i-1}]``.  For the OU base ``V`` and the
``nu``-block of ``B`` are exact Gaussian moment algebra; the mixture
parameters enter through ``tau^{-1}`` and their block ``B~`` needs a
conditional expectation, computed either by simulation or by a first-order
expansion in ``delta`` using the generator.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, replace
from functools import lru_cache

import numpy as np
from numpy.polynomial import polynomial
from scipy import optimize, special
from scipy.interpolate import CubicSpline

from .base import OUProcess
from .densities import MixtureDensity, norm_pdf
from .errors import ConvergenceError, OutOfRangeError, TailClampWarning
from .mle import FitResult, auto_init, from_unconstrained, relabel, to_unconstrained
from .transform import TransformedDiffusion

WEIGHT_MODES = ("optimal-simulated", "delta-expansion", "fixed")
_COND_LIMIT = 1e12


class SingularWeightError(OutOfRangeError):
    """The conditional covariance ``V`` (or the Godambe matrix) is numerically singular."""

    def __init__(self, message, index=None, condition=np.inf):
        super().__init__(f"{message}; condition number {condition:.3g}", index)
        self.condition = condition


@dataclass(frozen=True)
class EstimatingFunctionSpec:
    """
    Configuration of a martingale estimating function.

    Parameters
    ----------
    k : int
        Number of eigenfunctions (``k = 2`` gives the quadratic function
        built from ``x`` and ``x**2 - 1``).
    weights : {"optimal-simulated", "delta-expansion", "fixed"}
        How the mixture-parameter block of the optimal weights is obtained.
        ``"fixed"`` uses ``fixed_weights`` (ones by default) everywhere.
    mc_size : int
        Number of simulated transitions per conditioning point (at least
        1000, even) in ``"optimal-simulated"`` mode.
    delta : float or None
        Sampling interval; taken from the path when ``None``.
    seed : int
        Seed of the common random numbers used for every ``theta``.
    fixed_target : MixtureDensity or None
        When given, the target is known and only ``nu`` is estimated.
    grid_size : int
        Conditioning points of the interpolation grid for the simulated
        block, spread uniformly over ``|x| <= grid_halfwidth`` in the base
        coordinate.
    """

    k: int = 2
    weights: str = "optimal-simulated"
    mc_size: int = 1000
    delta: float | None = None
    seed: int = 0
    n_components: int = 2
    fixed_target: MixtureDensity | None = None
    fixed_weights: tuple | None = None
    grid_size: int = 257
    grid_halfwidth: float = 6.0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("need at least one eigenfunction")
        if self.weights not in WEIGHT_MODES:
            raise ValueError(f"weights must be one of {WEIGHT_MODES}")
        if self.weights == "optimal-simulated" and (self.mc_size < 1000 or self.mc_size % 2):
            raise ValueError("mc_size must be an even number >= 1000")
        if self.delta is not None and not self.delta > 0:
            raise ValueError("delta must be positive")

    @property
    def n_params(self):
        return 1 if self.fixed_target is not None else 3 * self.n_components

    def model(self, theta, accelerate=False):
        theta = np.asarray(theta, dtype=float)
        if self.fixed_target is not None:
            return TransformedDiffusion.ou(theta[0], self.fixed_target, accelerate=accelerate)
        return TransformedDiffusion.from_theta(theta, self.n_components, accelerate=accelerate)

    def to_dict(self):
        d = asdict(self)
        d["fixed_target"] = None if self.fixed_target is None else self.fixed_target.to_dict()
        return d

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("fixed_target") is not None:
            d["fixed_target"] = MixtureDensity.from_dict(d["fixed_target"])
        if d.get("fixed_weights") is not None:
            d["fixed_weights"] = tuple(map(tuple, d["fixed_weights"]))
        return cls(**d)


@lru_cache(maxsize=16)
def _common_normals(seed, m):
    """Antithetic, randomly stratified standard normal draws (common random numbers)."""
    rng = np.random.default_rng(seed)
    half = m // 2
    u = (np.arange(half) + rng.uniform(size=half)) / m + 0.5
    z = special.ndtri(u)
    z = np.concatenate([z, -z])
    z.setflags(write=False)
    return z


def _gaussian_moments(mean, var, order):
    """Raw moments ``E[X^n]``, ``n = 0..order``, of ``N(mean, var)``; shape ``(order+1,) + mean.shape``."""
    mean = np.asarray(mean, dtype=float)
    out = np.empty((order + 1,) + mean.shape)
    out[0] = 1.0
    if order >= 1:
        out[1] = mean
    for n in range(2, order + 1):
        out[n] = mean * out[n - 1] + (n - 1) * var * out[n - 2]
    return out


class WeightFunction:
    """
    Weight matrices ``w(y)`` of shape ``(p, k)`` for one parameter value.

    Building the object does all ``theta``-dependent preparation (the
    simulated ``B~`` grid in particular), so evaluating it at many points
    is cheap.
    """

    def __init__(self, spec: EstimatingFunctionSpec, theta, delta=None):
        self.spec = spec
        self.theta = np.asarray(theta, dtype=float)
        self.delta = float(delta if delta is not None else spec.delta)
        if not self.delta > 0:
            raise ValueError("the sampling interval is required")
        self.model = spec.model(self.theta)
        if not isinstance(self.model.base, OUProcess):
            raise NotImplementedError("closed-form weights are implemented for the OU base")
        self.pairs = self.model.base.eigenpairs(spec.k)
        self.lam = np.array([p.eigenvalue for p in self.pairs])
        self.decay = np.exp(-self.lam * self.delta)
        self.p = spec.n_params
        self._grid = None
        if spec.weights == "optimal-simulated" and self.p > 1:
            self._fast = self.model.with_acceleration()
            xs = np.linspace(-spec.grid_halfwidth, spec.grid_halfwidth, spec.grid_size)
            self._grid = CubicSpline(xs, self._btilde_mc(xs), axis=0)
            self._grid_range = (xs[0], xs[-1])

    # pieces of B and V -----------------------------------------------------------

    def g(self, x):
        return np.stack([p(x) for p in self.pairs], axis=-1)

    def dg(self, x):
        return np.stack([p.deriv(x) for p in self.pairs], axis=-1)

    def increments(self, x_prev, x_next):
        """``h_j = g_j(x_next) - exp(-lambda_j delta) g_j(x_prev)``; shape ``(n, k)``."""
        return self.g(x_next) - self.decay * self.g(x_prev)

    def v_matrix(self, x0):
        """Conditional covariance of the increments given ``X_0 = x0``; shape ``(n, k, k)``."""
        x0 = np.atleast_1d(np.asarray(x0, dtype=float))
        m, s2 = self.model.base.transition_moments(x0, self.delta)
        k = self.spec.k
        mom = _gaussian_moments(m, s2, 2 * k)
        mean = self.decay * self.g(x0)
        out = np.empty(x0.shape + (k, k))
        for a in range(k):
            for b in range(a, k):
                c = polynomial.polymul(self.pairs[a].coef, self.pairs[b].coef)
                second = np.tensordot(c, mom[:len(c)], axes=(0, 0))
                out[..., a, b] = out[..., b, a] = second - mean[..., a] * mean[..., b]
        return out

    def b_nu(self, x0):
        """``E[d h / d nu | x0] = lambda_j' delta exp(-lambda_j delta) g_j(x0)``; shape ``(n, k)``."""
        grad = np.array([p.eigenvalue_grad for p in self.pairs])
        return grad * self.delta * self.decay * self.g(np.atleast_1d(x0))

    def _dx_dpsi(self, x, y=None, model=None):
        """``d tau^{-1}(y) / d psi`` at ``y = tau(x)``; shape ``(p2,) + x.shape``."""
        model = model or self.model
        if y is None:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", TailClampWarning)
                y = model.tau(x)
        phi = norm_pdf(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            d = self.model.target.grad_cdf_params(y) / phi
        return np.where(np.isfinite(d), d, 0.0)

    def _btilde_mc(self, x0, chunk=64):
        """Simulated ``B~`` at base points ``x0``; shape ``(n, p2, k)``."""
        x0 = np.atleast_1d(np.asarray(x0, dtype=float))
        z = _common_normals(self.spec.seed, self.spec.mc_size)
        m, s2 = self.model.base.transition_moments(x0, self.delta)
        out = np.empty((len(x0), self.p - 1, self.spec.k))
        for lo in range(0, len(x0), chunk):
            sl = slice(lo, lo + chunk)
            xs = m[sl, None] + np.sqrt(s2) * z[None, :]
            d = self._dx_dpsi(xs, model=self._fast)
            dg = self.dg(xs)
            out[sl] = np.einsum("pnm,nmk->npk", d, dg) / len(z)
        d0 = self._dx_dpsi(x0)
        out -= np.einsum("pn,nk->npk", d0, self.decay * self.dg(x0))
        return out

    def btilde_simulated(self, y):
        """Mixture-parameter block ``B~`` at observations ``y``; shape ``(n, p2, k)``."""
        x0 = self.model.tau_inv(np.atleast_1d(y))
        if self._grid is None:
            if not hasattr(self, "_fast"):
                self._fast = self.model.with_acceleration()
            return self._btilde_mc(x0)
        lo, hi = self._grid_range
        inside = (x0 >= lo) & (x0 <= hi)
        out = np.empty((len(x0), self.p - 1, self.spec.k))
        out[inside] = self._grid(x0[inside])
        if np.any(~inside):
            out[~inside] = self._btilde_mc(x0[~inside])
        return out

    def btilde_expansion(self, y):
        """
        First-order approximation ``delta (L u_j + lambda_j u_j)`` of ``B~``.

        ``u_j(y) = g_j'(tau^{-1} y) d tau^{-1}(y) / d psi`` and ``L`` is the
        generator of Y, applied with five-point finite differences in ``y``.
        The approximation error is ``O(delta^2)``.
        """
        y = np.atleast_1d(np.asarray(y, dtype=float))
        h = 1e-2 * float(np.min(self.model.target.scales))
        offsets = np.array([-2, -1, 0, 1, 2]) * h
        yy = y[None, :] + offsets[:, None]
        x = self.model.tau_inv(yy)
        u = self._dx_dpsi(x, yy)[..., None] * self.dg(x)[None]
        du = (u[:, 0] - 8 * u[:, 1] + 8 * u[:, 3] - u[:, 4]) / (12 * h)
        d2u = (-u[:, 0] + 16 * u[:, 1] - 30 * u[:, 2] + 16 * u[:, 3] - u[:, 4]) / (12 * h * h)
        mu, sig = self.model.coefficients(y)
        gen = mu[None, :, None] * du + 0.5 * (sig ** 2)[None, :, None] * d2u
        out = self.delta * (gen + self.lam * u[:, 2])
        return np.moveaxis(out, 0, 1)

    def b_matrix(self, y):
        """Full ``B`` at observations ``y``; shape ``(n, p, k)``."""
        y = np.atleast_1d(np.asarray(y, dtype=float))
        x0 = self.model.tau_inv(y)
        out = np.zeros((len(y), self.p, self.spec.k))
        out[:, 0, :] = self.b_nu(x0)
        if self.p > 1:
            if self.spec.weights == "delta-expansion":
                out[:, 1:, :] = self.btilde_expansion(y)
            else:
                out[:, 1:, :] = self.btilde_simulated(y)
        return out

    def __call__(self, y):
        """Weights at observations ``y``; shape ``(n, p, k)``."""
        y = np.atleast_1d(np.asarray(y, dtype=float))
        if self.spec.weights == "fixed":
            fw = self.spec.fixed_weights
            w = np.ones((self.p, self.spec.k)) if fw is None else np.asarray(fw, dtype=float)
            if w.shape != (self.p, self.spec.k):
                raise ValueError(f"fixed weights must have shape {(self.p, self.spec.k)}")
            return np.broadcast_to(w, (len(y),) + w.shape)
        b = self.b_matrix(y)
        v = self.v_matrix(self.model.tau_inv(y))
        _check_conditioning(v, "conditional covariance V is singular")
        return np.linalg.solve(v, np.swapaxes(b, 1, 2)).swapaxes(1, 2)


def _check_conditioning(mats, message):
    cond = np.linalg.cond(mats)
    bad = ~(cond < _COND_LIMIT)
    if np.any(bad):
        i = int(np.flatnonzero(np.ravel(bad))[0]) if np.ndim(cond) else None
        raise SingularWeightError(message, i, float(np.ravel(cond)[i or 0]))


def _series(path, spec):
    y = np.asarray(getattr(path, "values", path), dtype=float)
    delta = float(getattr(path, "delta", spec.delta or np.nan))
    if spec.delta is not None and not np.isclose(delta, spec.delta, rtol=1e-12):
        raise ValueError("path sampling interval differs from the specification")
    if not delta > 0:
        raise ValueError("sampling interval unknown")
    return y, delta


def optimal_weights(spec: EstimatingFunctionSpec, theta, y):
    """
    ``w*(y) = B(y) V(y)^{-1}`` in the mode set by ``spec`` (``(p, k)`` for scalar ``y``).

    Raises
    ------
    SingularWeightError
        When ``V`` is numerically singular (condition number reported).
    """
    w = WeightFunction(spec, theta)(y)
    return w[0] if np.ndim(y) == 0 else w


def delta_expansion_weights(spec: EstimatingFunctionSpec, theta, y):
    """Optimal weights with ``B~`` replaced by its first-order expansion in ``delta``."""
    return optimal_weights(replace(spec, weights="delta-expansion"), theta, y)


def gn_terms(spec, theta, path, weights=None):
    """Per-transition terms ``w(y_{i-1}) h_i``; shape ``(N, p)``."""
    y, delta = _series(path, spec)
    wf = weights if weights is not None else WeightFunction(spec, theta, delta)
    x = wf.model.tau_inv(y)
    h = wf.increments(x[:-1], x[1:])
    w = wf(y[:-1])
    return np.einsum("npk,nk->np", w, h)


def gn(spec: EstimatingFunctionSpec, theta, path, weights=None):
    """
    ``G_N(theta) = sum_i w(y_{i-1}) h(x_{i-1}, x_i)``, a vector of length ``p``.

    ``weights`` may carry a prebuilt :class:`WeightFunction` for ``theta``.
    """
    return gn_terms(spec, theta, path, weights).sum(axis=0)


def godambe_information(spec: EstimatingFunctionSpec, theta, path, weights=None):
    """
    Observed Godambe information ``(1/N) sum_i B V^{-1} B^T`` at ``y_{i-1}``.

    The asymptotic covariance of the estimator is ``J^{-1} / N``.
    """
    y, delta = _series(path, spec)
    wf = weights if weights is not None else WeightFunction(spec, theta, delta)
    yp = y[:-1]
    b = wf.b_matrix(yp)
    v = wf.v_matrix(wf.model.tau_inv(yp))
    _check_conditioning(v, "conditional covariance V is singular")
    vib = np.linalg.solve(v, np.swapaxes(b, 1, 2))
    j = np.einsum("npk,nkq->pq", b, vib) / len(yp)
    j = 0.5 * (j + j.T)
    _check_conditioning(j, "Godambe information is singular")
    return j


def godambe_stderr(j, n):
    return np.sqrt(np.clip(np.diag(np.linalg.inv(j)), 0.0, None) / n)


# root solving --------------------------------------------------------------------------------

def _to_u(spec, theta):
    theta = np.asarray(theta, dtype=float)
    return np.log(theta[:1]) if spec.fixed_target is not None else to_unconstrained(theta)


def _from_u(spec, u):
    return np.exp(u[:1]) if spec.fixed_target is not None else from_unconstrained(u)


def solve_mef(spec: EstimatingFunctionSpec, path, theta_init="auto", xtol=1e-13, maxfev=400):
    """
    Solve ``G_N(theta) = 0``.

    The root is found by a trust-region least-squares iteration on
    ``G_N / N`` in the unconstrained coordinates used by :func:`fit_mle`,
    with the weights recomputed at every trial value (simulated blocks use
    common random numbers, so the objective is smooth in ``theta``).
    Standard errors come from the Godambe information.
    """
    y, delta = _series(path, spec)
    spec = replace(spec, delta=delta)
    n = len(y) - 1
    if isinstance(theta_init, str):
        guess = np.asarray(auto_init(path, spec.n_components).theta)
        theta0 = guess[:1] if spec.fixed_target is not None else guess
    else:
        theta0 = np.asarray(theta_init, dtype=float)
    evals = [0]

    def resid(u):
        evals[0] += 1
        try:
            return gn(spec, _from_u(spec, u), path) / n
        except (OutOfRangeError, ValueError):
            return np.full(len(u), 1e6)

    u0 = _to_u(spec, theta0)
    res = optimize.least_squares(resid, u0, method="trf", x_scale="jac", xtol=xtol,
                                 ftol=1e-15, gtol=1e-15, max_nfev=maxfev)
    theta = _from_u(spec, res.x)
    if spec.fixed_target is None:
        theta = relabel(theta)
    g = gn(spec, theta, path) / n
    resid_norm = float(np.linalg.norm(g))
    converged = resid_norm < 1e-6
    names = ("nu",) if spec.fixed_target is not None else spec.model(theta).param_names
    try:
        j = godambe_information(spec, theta, path)
        cov = np.linalg.inv(j) / n
        se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    except (SingularWeightError, np.linalg.LinAlgError):
        cov, se = None, np.full(len(theta), np.nan)
    trace = {"residual_norm": resid_norm, "function_evals": evals[0],
             "optimizer_message": res.message, "spec": spec.to_dict()}
    if not converged and res.status <= 0:
        trace["failure"] = "no root found"
    return FitResult(theta=theta, names=names, loglik=None, stderr=se, iterations=int(res.nfev),
                     converged=bool(converged), delta=delta, method="mef", cov=cov,
                     n_obs=len(y), trace=trace)


def solve_base_mef(x, delta, k=2, nu_bracket=(1e-6, 1e3)):
    """
    Optimal martingale estimating function for ``nu`` applied directly to
    OU data ``x`` (e.g. ``tau^{-1}`` of observations under a known target).
    Solved by bracketing root search.
    """
    x = np.asarray(x, dtype=float)
    spec = EstimatingFunctionSpec(k=k, weights="optimal-simulated", delta=delta,
                                  fixed_target=MixtureDensity.standard_normal())

    def g(nu):
        wf = WeightFunction(spec, [nu], delta)
        h = wf.increments(x[:-1], x[1:])
        b = wf.b_nu(x[:-1])[:, None, :]
        v = wf.v_matrix(x[:-1])
        w = np.linalg.solve(v, np.swapaxes(b, 1, 2)).swapaxes(1, 2)
        return float(np.einsum("npk,nk->p", w, h)[0]) / (len(x) - 1)

    grid = np.geomspace(*nu_bracket, 61)
    vals = np.array([g(v) for v in grid])
    sign = np.flatnonzero(np.sign(vals[:-1]) != np.sign(vals[1:]))
    if not len(sign):
        raise ConvergenceError("no sign change of the estimating function in the bracket")
    i = sign[0]
    return optimize.brentq(g, grid[i], grid[i + 1], xtol=1e-15, rtol=4 * np.finfo(float).eps)
