"""
Diffusion observed with autocorrelated measurement error
========================================================

``Z_t = Y_t + eps_t`` with ``Y`` the transformed OU process and ``eps`` an
independent OU process with rate ``kappa`` and stationary variance
``gamma2``.  The marginal law of ``Z`` is the target mixture with every
component variance inflated by ``gamma2``, and

    rho_Z(t) = (1 - beta) rho_Y(t) + beta exp(-kappa t),

where ``beta`` is the share of the variance of ``Z`` due to the error.

Estimation is two-stage: a marginal mixture fit that treats the observations
as independent, then a least-squares fit of ``rho_Z`` to the empirical
autocorrelation function over ``(nu, kappa, beta)``.

``rho_Y`` is evaluated exactly from the Hermite expansion of ``tau``: with
``c_j = E[tau(X) h_j(X)]`` for the orthonormal Hermite polynomials ``h_j``,
Mehler's formula gives ``cov(Y_0, Y_t) = sum_j c_j^2 exp(-j nu t)``.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import fft, optimize

from .densities import MixtureDensity
from .errors import TailClampWarning
from .mle import _jsonable, fit_mixture_em
from .simulate import as_generator, simulate_transformed_ou, simulate_with_error
from .transform import TransformedDiffusion

HERMITE_ORDER = 200
_QUAD_POINTS = 2001
_QUAD_HALFWIDTH = 9.0
DEFAULT_LAGS = 100


@dataclass(frozen=True)
class ErrorModelParams:
    """
    Parameters of ``Z = Y + eps``.

    ``theta = (nu, *psi)`` are the diffusion parameters, ``kappa`` the error
    rate (1/time) and ``gamma2`` the error variance.
    """

    theta: tuple
    kappa: float
    gamma2: float

    def __post_init__(self):
        object.__setattr__(self, "theta", tuple(float(v) for v in self.theta))
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if self.gamma2 < 0:
            raise ValueError("gamma2 must be nonnegative")

    @classmethod
    def from_values(cls, nu, alpha, mu1, sigma1, mu2, sigma2, kappa, gamma2):
        return cls((nu, alpha, mu1, sigma1, mu2, sigma2), kappa, gamma2)

    @property
    def nu(self):
        return self.theta[0]

    @property
    def target(self):
        return MixtureDensity.from_params(self.theta[1:], len(self.theta) // 3)

    @property
    def diffusion(self):
        return TransformedDiffusion.from_theta(self.theta, len(self.theta) // 3)

    @property
    def z_mixture(self):
        """Marginal law of Z: the target with inflated component variances."""
        d = self.target
        return MixtureDensity(d.weights, d.locs, np.sqrt(d.scales ** 2 + self.gamma2))

    @property
    def var_z(self):
        return self.z_mixture.variance

    @property
    def beta(self):
        return beta_fraction(self)

    def to_dict(self):
        names = self.diffusion.param_names
        return {**dict(zip(names, self.theta)), "kappa": self.kappa, "gamma2": self.gamma2}

    @classmethod
    def from_dict(cls, d):
        names = ("nu", "alpha", "mu1", "sigma1", "mu2", "sigma2")
        return cls(tuple(d[n] for n in names), d["kappa"], d["gamma2"])


def marginal_z_pdf(p: ErrorModelParams, z):
    """Stationary density of Z: the mixture with variances ``sigma_i^2 + gamma2``."""
    return p.z_mixture.pdf(z)


def beta_fraction(p: ErrorModelParams):
    """``gamma2 / var(Z)``, the share of the variance of Z due to the error."""
    return float(p.gamma2 / p.var_z)


def rho_z(p: ErrorModelParams, t, rho_y):
    """
    ``(1 - beta) rho_Y(t) + beta exp(-kappa t)``.

    ``rho_y`` is a callable of ``t`` or an array of values at ``t``.
    """
    t = np.asarray(t, dtype=float)
    ry = rho_y(t) if callable(rho_y) else np.asarray(rho_y, dtype=float)
    b = p.beta
    return (1.0 - b) * ry + b * np.exp(-p.kappa * t)


# exact autocorrelation of Y ---------------------------------------------------------

def _hermite_table(x, order):
    """Orthonormal probabilists' Hermite polynomials ``h_0..h_order`` at ``x``."""
    out = np.empty((order + 1, len(x)))
    out[0] = 1.0
    out[1] = x
    for j in range(1, order):
        out[j + 1] = (x * out[j] - np.sqrt(j) * out[j - 1]) / np.sqrt(j + 1.0)
    return out


_GRID_CACHE = {}


def _quad_grid(order):
    key = order
    if key not in _GRID_CACHE:
        x = np.linspace(-_QUAD_HALFWIDTH, _QUAD_HALFWIDTH, _QUAD_POINTS)
        w = np.full_like(x, x[1] - x[0])
        w[[0, -1]] *= 0.5
        w *= np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
        _GRID_CACHE[key] = (x, _hermite_table(x, order) * w)
    return _GRID_CACHE[key]


@dataclass(frozen=True)
class HermiteSpectrum:
    """
    ``b_j = c_j^2`` for ``j = 1..J`` with the truncation remainder ``tail``
    (analytic variance minus the partial sum), attributed to order ``J + 1``.
    """

    nu: float
    b: np.ndarray
    tail: float
    variance: float

    def autocovariance(self, t):
        t = np.asarray(t, dtype=float)
        j = np.arange(1, len(self.b) + 1)
        decay = np.exp(-self.nu * np.multiply.outer(t, j))
        return decay @ self.b + self.tail * np.exp(-self.nu * (len(self.b) + 1) * t)

    def __call__(self, t):
        return self.autocovariance(t) / self.variance

    def with_rate(self, nu):
        return replace(self, nu=float(nu))

    def lag_sum(self, n):
        """``sum_{h=1}^{n-1} (1 - h/n) rho(h)`` for unit lag spacing (see :func:`expected_acf`)."""
        j = np.arange(1, len(self.b) + 2)
        r = np.exp(-self.nu * j)
        return (np.append(self.b, self.tail) @ _bartlett_geometric(r, n)) / self.variance


def hermite_spectrum(t: TransformedDiffusion, order=HERMITE_ORDER):
    """Mehler coefficients of ``tau`` for an OU base; see :class:`HermiteSpectrum`."""
    x, hw = _quad_grid(order)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TailClampWarning)
        y = t.tau(x)
    c = hw[1:] @ y
    b = c * c
    var = t.target.variance
    return HermiteSpectrum(t.base.rate, b, max(var - b.sum(), 0.0), var)


def rho_y(t: TransformedDiffusion, times, order=HERMITE_ORDER):
    """Exact autocorrelation of the transformed OU process at ``times``."""
    return hermite_spectrum(t, order)(times)


def _bartlett_geometric(r, n):
    """``sum_{h=1}^{n-1} (1 - h/n) r^h`` elementwise."""
    r = np.asarray(r, dtype=float)
    one = 1.0 - r
    return r / one - r * (1.0 - r ** n) / (n * one * one)


def simulate_rho_y(t: TransformedDiffusion, lags, n_sim, delta, rng, n_blocks=20):
    """
    Empirical autocorrelation of one exact transformed-OU path at integer
    ``lags`` (in units of ``delta``), with delete-one-block jackknife
    standard errors.  Returns ``(rho, se)``.
    """
    lags = np.atleast_1d(np.asarray(lags, dtype=int))
    if lags.max() > n_sim / 10:
        raise ValueError("lags must not exceed n_sim / 10")
    y = simulate_transformed_ou(t, n_sim, delta, "stationary", rng).values
    rho = empirical_acf(y, lags.max())[lags]
    size = n_sim // n_blocks
    reps = []
    for b in range(n_blocks):
        keep = np.concatenate([y[:b * size], y[(b + 1) * size:]])
        reps.append(empirical_acf(keep, lags.max())[lags])
    reps = np.array(reps)
    se = np.sqrt((n_blocks - 1) / n_blocks * ((reps - reps.mean(axis=0)) ** 2).sum(axis=0))
    return rho, se


def empirical_acf(x, max_lag):
    """Autocorrelation at lags ``0..max_lag`` with the biased (1/n) normalisation."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    xc = x - x.mean()
    size = fft.next_fast_len(2 * n)
    f = fft.rfft(xc, size)
    acov = fft.irfft(f * np.conj(f), size)[:max_lag + 1] / n
    if acov[0] == 0:
        return np.where(np.arange(max_lag + 1) == 0, 1.0, 0.0)
    return acov / acov[0]


def integrated_autocorrelation_time(x, c=5.0):
    """Sokal's self-consistent window estimate of ``1 + 2 sum rho(t)``."""
    x = np.asarray(x, dtype=float)
    rho = empirical_acf(x, len(x) - 1)
    tau = 2.0 * np.cumsum(rho) - 1.0
    window = np.arange(len(tau)) >= c * tau
    m = int(np.argmax(window)) if np.any(window) else len(tau) - 1
    return float(max(tau[m], 1.0))


# stage 1: marginal fit ---------------------------------------------------------------

MARGINAL_NAMES = ("alpha", "mu1", "mu2", "v1", "v2")


@dataclass(frozen=True)
class MarginalFit:
    """Pseudo-likelihood estimates of ``(alpha, mu1, mu2, sigma1^2+gamma2, sigma2^2+gamma2)``."""

    estimates: np.ndarray
    stderr: np.ndarray
    loglik: float
    iterations: int
    bandwidth: int
    flags: tuple = ()

    @property
    def alpha(self):
        return float(self.estimates[0])

    @property
    def locs(self):
        return self.estimates[1:3]

    @property
    def inflated_variances(self):
        return self.estimates[3:5]

    @property
    def mixture(self):
        a = self.alpha
        return MixtureDensity([a, 1 - a], self.locs, np.sqrt(self.inflated_variances))

    @property
    def var_z(self):
        return self.mixture.variance

    def to_dict(self):
        return {"estimates": dict(zip(MARGINAL_NAMES, map(float, self.estimates))),
                "stderr": dict(zip(MARGINAL_NAMES, map(float, self.stderr))),
                "loglik": self.loglik, "iterations": self.iterations,
                "hac_bandwidth": self.bandwidth, "flags": list(self.flags)}


def _marginal_scores(est, z):
    """Per-observation gradient of the log mixture density; shape ``(n, 5)``."""
    a, m1, m2, v1, v2 = est
    p1 = a * np.exp(-0.5 * (z - m1) ** 2 / v1) / np.sqrt(2 * np.pi * v1)
    p2 = (1 - a) * np.exp(-0.5 * (z - m2) ** 2 / v2) / np.sqrt(2 * np.pi * v2)
    f = p1 + p2
    r1, r2 = p1 / f, p2 / f
    return np.column_stack([
        r1 / a - r2 / (1 - a),
        r1 * (z - m1) / v1,
        r2 * (z - m2) / v2,
        r1 * 0.5 * ((z - m1) ** 2 / v1 - 1.0) / v1,
        r2 * 0.5 * ((z - m2) ** 2 / v2 - 1.0) / v2,
    ])


def hac_covariance(scores, bandwidth):
    """Bartlett-kernel long-run covariance of the rows of ``scores``."""
    s = scores - scores.mean(axis=0)
    n = len(s)
    bw = int(bandwidth)
    spec = fft.rfft(s, 2 * n, axis=0)
    # cross[l, a, b] = sum_t s[t, a] s[t + l, b]
    cross = fft.irfft(spec[:, :, None].conj() * spec[:, None, :], 2 * n, axis=0)[: bw + 1] / n
    w = 1.0 - np.arange(1, bw + 1) / (bandwidth + 1.0)
    lagged = np.einsum("l,lab->ab", w, cross[1:])
    return cross[0] + lagged + lagged.T


def fit_marginal(path, max_iter=2000, tol=1e-12, stderr=True, init=None):
    """
    Stage 1: maximise the marginal likelihood as if the observations were
    independent (consistent, not efficient).

    Standard errors use the sandwich ``H^{-1} S H^{-1} / n`` with ``S`` the
    Bartlett long-run covariance of the scores; the bandwidth is
    ``min(n/3, 5 tau_int)`` with ``tau_int`` the integrated autocorrelation
    time of the data.  ``stderr=False`` skips them (bootstrap refits).
    ``init`` is an optional EM start ``(weights, locs, scales)``.
    """
    z = np.asarray(getattr(path, "values", path), dtype=float)
    n = len(z)
    if n < 500:
        raise ValueError("the marginal fit needs at least 500 observations")
    w, locs, scales, ll, it = fit_mixture_em(z, 2, max_iter=max_iter, tol=tol, init=init)
    est = np.array([w[0], locs[0], locs[1], scales[0] ** 2, scales[1] ** 2])
    flags = []
    if min(w) < 0.01:
        flags.append("vanishing component")
    if it >= max_iter:
        flags.append("EM did not converge")
    if not stderr:
        return MarginalFit(est, np.full(5, np.nan), ll, it, 0, tuple(flags))
    scores = _marginal_scores(est, z)
    hess = np.empty((5, 5))
    for j in range(5):
        e = np.zeros(5)
        e[j] = 1e-5 * max(abs(est[j]), 1e-3)
        hess[:, j] = (_marginal_scores(est + e, z).mean(0) - _marginal_scores(est - e, z).mean(0)) / (2 * e[j])
    hess = 0.5 * (hess + hess.T)
    bw = int(min(n / 3, 5 * integrated_autocorrelation_time(z)))
    s = hac_covariance(scores, bw)
    try:
        hinv = np.linalg.inv(hess)
        cov = hinv @ s @ hinv / n
        se = np.sqrt(np.clip(np.diag(cov), 0, None))
    except np.linalg.LinAlgError:
        se = np.full(5, np.nan)
        flags.append("singular marginal information")
    return MarginalFit(est, se, ll, it, bw, tuple(flags))


# stage 2: autocorrelation least squares ---------------------------------------------------

def mean_variance_fraction(spectrum: HermiteSpectrum, beta, kappa, n):
    """``var(mean of n consecutive values) / var(Z)`` under the model (unit spacing)."""
    lag_sum = (1.0 - beta) * spectrum.lag_sum(n) + beta * float(_bartlett_geometric(np.exp(-kappa), n))
    return (1.0 + 2.0 * lag_sum) / n


def expected_acf(spectrum: HermiteSpectrum, beta, kappa, lags, n=None):
    """
    Model autocorrelation of Z at integer ``lags`` (unit spacing, rates per
    sampling interval).

    With ``n`` given, returns the approximate expectation of the biased
    empirical ACF of a length-``n`` series: mean subtraction removes
    ``var(mean)`` from every autocovariance and the 1/n normalisation
    scales lag ``k`` by ``1 - k/n``.
    """
    lags = np.asarray(lags, dtype=float)
    rho = (1.0 - beta) * spectrum(lags) + beta * np.exp(-kappa * lags)
    if n is None:
        return rho
    vbar = mean_variance_fraction(spectrum, beta, kappa, n)
    return (1.0 - lags / n) * (rho - vbar) / (1.0 - vbar)


@dataclass(frozen=True)
class AcfFit:
    params: ErrorModelParams
    beta: float
    cost: float
    lags: np.ndarray
    empirical: np.ndarray
    fitted: np.ndarray
    flags: tuple = ()
    nfev: int = 0

    def to_dict(self):
        return {"params": self.params.to_dict(), "beta": self.beta, "cost": self.cost,
                "flags": list(self.flags), "nfev": self.nfev,
                "acf": {"lag": self.lags.tolist(), "empirical": self.empirical.tolist(),
                        "fitted": self.fitted.tolist()}}


def _acf_init(acf, lags, beta_max):
    """Initial ``(nu, kappa, beta)`` assuming ``nu << kappa``."""
    tail = lags >= lags[len(lags) // 2]
    pos = tail & (acf > 1e-3)
    if pos.sum() >= 2:
        slope, icpt = np.polyfit(lags[pos], np.log(acf[pos]), 1)
        nu0 = max(-slope, 1e-6)
        beta0 = float(np.clip(1.0 - np.exp(icpt), 1e-3, 0.9 * beta_max))
    else:
        nu0, beta0 = 1.0 / max(lags[-1], 1), 0.5 * beta_max
    fast = acf[0] - (1.0 - beta0) * np.exp(-nu0 * lags[0])
    kappa0 = -np.log(np.clip(fast / beta0, 1e-6, 0.99)) / lags[0]
    return nu0, max(kappa0, 5 * nu0), beta0


def fit_acf(path, marginal: MarginalFit, lags=DEFAULT_LAGS, mean_correction=True,
            order=HERMITE_ORDER, init=None):
    """
    Stage 2: least-squares fit of the model ACF to the empirical ACF.

    Minimises ``sum_{j=1..L} (rho_hat_Z(j delta) - rho_Z(j delta))^2`` over
    ``(nu, kappa, beta)``.  ``rho_Y`` depends on ``nu`` and on the target,
    whose component variances are ``v_i - gamma2`` with
    ``gamma2 = beta var(Z)``; hence ``beta`` is bounded by
    ``min(v_i) / var(Z)``.  With ``mean_correction`` the model is the
    expected biased empirical ACF of a series of this length, and
    ``gamma2`` is divided by ``1 - var(mean)/var(Z)`` because the stage-1
    variances carry the same finite-sample deficit.

    Rates are returned per unit time (divided by ``delta``).
    """
    z = np.asarray(path.values, dtype=float)
    delta = float(path.delta)
    if lags < 20:
        raise ValueError("use at least 20 lags")
    n = len(z)
    lag_idx = np.arange(1, lags + 1)
    acf = empirical_acf(z, lags)[1:]
    var_z = marginal.var_z
    v = marginal.inflated_variances
    beta_max = float(min(v) / var_z) * (1.0 - 1e-9)
    a, locs = marginal.alpha, marginal.locs
    cache = {}

    def spectrum(beta):
        key = round(float(beta), 12)
        if key not in cache:
            g2 = beta * var_z
            d = MixtureDensity([a, 1 - a], locs, np.sqrt(np.maximum(v - g2, 1e-12)))
            cache[key] = hermite_spectrum(TransformedDiffusion.ou(1.0, d), order)
        return cache[key]

    def model(q):
        nu, kappa, beta = np.exp(q[0]), np.exp(q[1]), q[2]
        return expected_acf(spectrum(beta).with_rate(nu), beta, kappa, lag_idx,
                            n if mean_correction else None)

    if init is None:
        nu0, kappa0, beta0 = _acf_init(acf, lag_idx.astype(float), beta_max)
    else:
        nu0, kappa0, beta0 = init[0] * delta, init[1] * delta, init[2]
    q0 = np.array([np.log(nu0), np.log(kappa0), min(beta0, 0.99 * beta_max)])
    res = optimize.least_squares(lambda q: model(q) - acf, q0,
                                 bounds=([-np.inf, -np.inf, 0.0], [np.inf, np.inf, beta_max]),
                                 method="trf", x_scale=[1.0, 1.0, 0.1], xtol=1e-12, ftol=1e-12)
    nu, kappa, beta = np.exp(res.x[0]) / delta, np.exp(res.x[1]) / delta, float(res.x[2])
    flags = []
    jac = res.jac
    col = np.linalg.norm(jac, axis=0)
    if col[2] < 1e-8 or np.linalg.cond(jac.T @ jac) > 1e12:
        flags.append("beta weakly identified (flat objective)")
    if beta >= 0.999 * beta_max:
        flags.append("beta at its upper bound")
    if kappa < 2 * nu:
        flags.append("kappa not much larger than nu")
    g2 = beta * var_z
    if mean_correction:
        # stage-1 variances inherit the mean-subtraction bias of a finite persistent series
        spec = spectrum(beta).with_rate(np.exp(res.x[0]))
        g2 /= 1.0 - mean_variance_fraction(spec, beta, np.exp(res.x[1]), n)
    if g2 >= min(v):
        flags.append("error variance exceeds a stage-1 component variance")
        g2 = float(min(v)) * (1.0 - 1e-6)
    sig = np.sqrt(v - g2)
    theta = (nu, a, locs[0], sig[0], locs[1], sig[1])
    params = ErrorModelParams(theta, kappa, g2)
    return AcfFit(params, beta, float(res.cost), lag_idx * delta, acf, model(res.x),
                  tuple(flags), int(res.nfev))


# full pipeline ------------------------------------------------------------------------------

ERROR_MODEL_NAMES = ("nu", "alpha", "mu1", "sigma1", "mu2", "sigma2", "kappa", "gamma2")


@dataclass(frozen=True)
class ErrorModelFit:
    """Both stages, with parametric-bootstrap standard errors when requested."""

    marginal: MarginalFit
    acf: AcfFit
    stderr: np.ndarray | None = None
    n_bootstrap: int = 0
    delta: float = 1.0
    trace: dict = field(default_factory=dict)

    @property
    def params(self):
        return self.acf.params

    @property
    def estimates(self):
        p = self.acf.params
        return np.array(list(p.theta) + [p.kappa, p.gamma2])

    def to_dict(self):
        out = {"stage1": self.marginal.to_dict(), "stage2": self.acf.to_dict(),
               "estimates": dict(zip(ERROR_MODEL_NAMES, map(float, self.estimates))),
               "n_bootstrap": self.n_bootstrap, "delta": self.delta,
               "trace": _jsonable(self.trace)}
        if self.stderr is not None:
            out["stderr"] = dict(zip(ERROR_MODEL_NAMES, map(float, self.stderr)))
        return out

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)


def fit_error_model(path, lags=DEFAULT_LAGS, n_bootstrap=0, rng=None, mean_correction=True):
    """
    Two-stage fit of the diffusion-plus-error model.

    With ``n_bootstrap > 0`` paths of the same length are simulated at the
    estimates (``rng`` required), both stages are refitted on each, and the
    standard deviation of the refitted values is reported as standard error.
    """
    marginal = fit_marginal(path)
    acf = fit_acf(path, marginal, lags, mean_correction)
    se = None
    trace = {}
    if n_bootstrap > 0:
        if rng is None:
            raise ValueError("bootstrap standard errors need an rng")
        gen, _ = as_generator(rng)
        p = acf.params
        t = p.diffusion.with_acceleration()
        em0 = ([marginal.alpha, 1.0 - marginal.alpha], marginal.locs,
               np.sqrt(marginal.inflated_variances))
        reps = []
        failures = 0
        for _ in range(n_bootstrap):
            zb, _, _ = simulate_with_error(t, p.kappa, p.gamma2, len(path.values), path.delta, gen)
            try:
                mb = fit_marginal(zb, stderr=False, init=em0)
                ab = fit_acf(zb, mb, lags, mean_correction,
                             init=(p.nu, p.kappa, acf.beta))
            except (ValueError, np.linalg.LinAlgError):
                failures += 1
                continue
            reps.append(list(ab.params.theta) + [ab.params.kappa, ab.params.gamma2])
        reps = np.array(reps)
        se = reps.std(axis=0, ddof=1) if len(reps) > 1 else None
        trace = {"bootstrap_failures": failures}
    return ErrorModelFit(marginal, acf, se, n_bootstrap, float(path.delta), trace)
