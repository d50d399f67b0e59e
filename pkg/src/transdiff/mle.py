"""
Exact maximum likelihood for the transformed OU process
=======================================================

With ``x_i = tau^{-1}(y_i)`` the transition density of the observed process is
a Gaussian AR(1) density in ``x`` times the Jacobian ``f(y) / phi(x)``, so the
log-likelihood and its score are available in closed form.

Optimisation runs in unconstrained coordinates: ``log nu``, additive log-ratio
of the mixture weights (the logit for two components), the means, and
``log sigma``.  Components are relabelled on output so the means increase.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special

from .densities import MixtureDensity, log_sum_exp, norm_pdf
from .errors import ConvergenceError, OutOfRangeError
from .transform import TransformedDiffusion

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)

MIN_FIT_LENGTH = 50
HESSIAN_STEP = 1e-4


@dataclass(frozen=True)
class FitResult:
    """
    Parameter estimates with standard errors and convergence metadata.

    ``theta`` is ordered as ``names``; for the transformed OU this is
    ``(nu, alpha, mu1, sigma1, mu2, sigma2)``.
    """

    theta: np.ndarray
    names: tuple
    loglik: float
    stderr: np.ndarray
    iterations: int
    converged: bool
    delta: float
    method: str = "mle"
    cov: np.ndarray | None = None
    n_obs: int = 0
    trace: dict = field(default_factory=dict)

    @property
    def params(self):
        return dict(zip(self.names, map(float, self.theta)))

    def model(self, accelerate=False):
        return TransformedDiffusion.from_theta(self.theta, n_components_of(self.theta),
                                               accelerate=accelerate)

    def to_dict(self):
        out = {
            "method": self.method,
            "parameters": self.params,
            "stderr": dict(zip(self.names, map(float, self.stderr))),
            "loglik": None if self.loglik is None else float(self.loglik),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "delta": float(self.delta),
            "n_obs": int(self.n_obs),
            "trace": _jsonable(self.trace),
        }
        if self.cov is not None:
            out["cov"] = np.asarray(self.cov).tolist()
        return out

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d):
        names = tuple(d["parameters"])
        cov = d.get("cov")
        return cls(
            theta=np.array([d["parameters"][n] for n in names]),
            names=names,
            loglik=d.get("loglik"),
            stderr=np.array([d["stderr"].get(n, np.nan) for n in names]),
            iterations=d.get("iterations", 0),
            converged=d.get("converged", False),
            delta=d["delta"],
            method=d.get("method", "mle"),
            cov=None if cov is None else np.array(cov),
            n_obs=d.get("n_obs", 0),
            trace=d.get("trace", {}),
        )


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


# parameter transforms -----------------------------------------------------------

def n_components_of(theta):
    """Number of mixture components for ``theta = (nu, *psi)``."""
    k, rem = divmod(len(theta), 3)
    if rem != 0 or k < 1:
        raise ValueError(f"parameter vector of length {len(theta)} is not (nu, psi)")
    return k


def to_unconstrained(theta):
    theta = np.asarray(theta, dtype=float)
    k = n_components_of(theta)
    w = theta[1:k]
    wk = 1.0 - w.sum()
    if np.any(w <= 0) or wk <= 0 or theta[0] <= 0:
        raise ValueError("parameters outside the admissible region")
    u = np.empty_like(theta)
    u[0] = np.log(theta[0])
    u[1:k] = np.log(w / wk)
    locs = theta[k::2]
    scales = theta[k + 1::2]
    if np.any(scales <= 0):
        raise ValueError("component scales must be positive")
    u[k::2] = locs
    u[k + 1::2] = np.log(scales)
    return u


def from_unconstrained(u):
    u = np.asarray(u, dtype=float)
    k = n_components_of(u)
    theta = np.empty_like(u)
    theta[0] = np.exp(u[0])
    a = np.concatenate([u[1:k], [0.0]])
    theta[1:k] = special.softmax(a)[:-1]
    theta[k::2] = u[k::2]
    theta[k + 1::2] = np.exp(u[k + 1::2])
    return theta


def unconstrained_jacobian(u):
    """``d theta / d u`` as a square matrix."""
    u = np.asarray(u, dtype=float)
    k = n_components_of(u)
    theta = from_unconstrained(u)
    jac = np.zeros((len(u), len(u)))
    jac[0, 0] = theta[0]
    w = theta[1:k]
    jac[1:k, 1:k] = np.diag(w) - np.outer(w, w)
    idx = np.arange(k, len(u))
    jac[idx, idx] = np.where((idx - k) % 2 == 0, 1.0, theta[idx])
    return jac


def relabel(theta):
    """Reorder mixture components by increasing mean."""
    theta = np.asarray(theta, dtype=float)
    k = n_components_of(theta)
    w = np.append(theta[1:k], 1.0 - theta[1:k].sum())
    locs, scales = theta[k::2], theta[k + 1::2]
    order = np.argsort(locs, kind="stable")
    out = theta.copy()
    out[1:k] = w[order][:-1]
    out[k::2] = locs[order]
    out[k + 1::2] = scales[order]
    return out


# likelihood -----------------------------------------------------------------------

def _series(path):
    values = np.asarray(getattr(path, "values", path), dtype=float)
    if values.ndim != 1:
        raise ValueError("expected a single observed path")
    return values, float(path.delta)


def _loglik_and_grad(theta, y, delta, stationary=False, need_grad=True):
    theta = np.asarray(theta, dtype=float)
    k = n_components_of(theta)
    t = TransformedDiffusion.from_theta(theta, k)
    d = t.target
    nu = theta[0]
    x = t.tau_inv(y)
    rho = np.exp(-nu * delta)
    v = -np.expm1(-2.0 * nu * delta)
    r = x[1:] - rho * x[:-1]
    m = len(r)
    lf = d.logpdf(y)
    ll = -0.5 * np.dot(r, r) / v - 0.5 * m * np.log(v) + 0.5 * np.dot(x[1:], x[1:]) + lf[1:].sum()
    if stationary:
        ll += lf[0]
    if not need_grad:
        return float(ll), None
    gx = np.zeros_like(x)
    gx[1:] += x[1:] - r / v
    gx[:-1] += rho * r / v
    phi = norm_pdf(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        dx = np.where(phi > 0, d.grad_cdf_params(y) / phi, 0.0)
        dlogf = d.grad_pdf_params(y) / d.pdf(y)
    grad = np.empty_like(theta)
    gpsi = dx @ gx + dlogf[:, 1:].sum(axis=1)
    if stationary:
        gpsi += dlogf[:, 0]
    grad[1:] = gpsi
    grad[0] = (-delta * rho * np.dot(r, x[:-1]) / v + delta * rho ** 2 * np.dot(r, r) / v ** 2
               - m * delta * rho ** 2 / v)
    return float(ll), grad


def loglik_transformed_ou(theta, path, stationary=False):
    """
    Exact log-likelihood of a transformed OU path, conditional on ``y_0``.

    Parameters
    ----------
    theta : array_like
        ``(nu, *psi)`` with ``psi`` in :class:`MixtureDensity` parameter layout.
    path : Path
        Observations with sampling interval ``path.delta``; at least 2 values.
    stationary : bool
        Add ``log f(y_0)``, i.e. start from the stationary law.

    Raises
    ------
    OutOfRangeError
        When ``tau^{-1}`` saturates at some observation (index reported).
    """
    y, delta = _series(path)
    if len(y) < 2:
        raise ValueError("need at least two observations")
    return _loglik_and_grad(theta, y, delta, stationary, need_grad=False)[0]


def score_transformed_ou(theta, path, stationary=False):
    """Analytic gradient of :func:`loglik_transformed_ou` in natural parameters."""
    y, delta = _series(path)
    return _loglik_and_grad(theta, y, delta, stationary)[1]


# initialisation ---------------------------------------------------------------------

@dataclass(frozen=True)
class InitialGuess:
    theta: np.ndarray
    unimodal: bool = False
    degenerate: bool = False
    note: str = ""

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.theta, dtype=dtype)


def fit_mixture_em(y, k=2, max_iter=500, tol=1e-10, init=None, min_scale=1e-8):
    """
    Normal-mixture maximum likelihood for i.i.d.-treated data by EM.

    Returns ``(weights, locs, scales, loglik, iterations)``; components are
    sorted by location.  ``init`` is an optional ``(weights, locs, scales)``.
    """
    y = np.asarray(y, dtype=float)
    sd = y.std()
    if init is None:
        qs = (np.arange(k) + 0.5) / k
        locs = np.quantile(y, qs)
        scales = np.full(k, sd / k if sd > 0 else 1.0)
        weights = np.full(k, 1.0 / k)
    else:
        weights, locs, scales = (np.array(a, dtype=float) for a in init)
    floor = max(min_scale, 1e-6 * sd)
    prev = -np.inf
    yc = y[:, None]
    for it in range(1, max_iter + 1):
        logp = np.log(weights / scales) - _LOG_SQRT_2PI - 0.5 * ((yc - locs) / scales) ** 2
        lse = log_sum_exp(logp)
        ll = lse.sum()
        resp = np.exp(logp - lse[:, None])
        nk = resp.sum(axis=0) + 1e-300
        weights = nk / len(y)
        locs = (y @ resp) / nk
        var = np.einsum("nk,nk->k", resp, (yc - locs) ** 2) / nk
        scales = np.sqrt(np.maximum(var, floor ** 2))
        if abs(ll - prev) <= tol * (1.0 + abs(ll)):
            break
        prev = ll
    order = np.argsort(locs)
    return weights[order], locs[order], scales[order], float(ll), it


def normal_scores(y):
    """``Phi^{-1}`` of the empirical cdf, ranks scaled by ``1/(n+1)``."""
    from scipy import stats

    ranks = stats.rankdata(y)
    return special.ndtri(ranks / (len(y) + 1.0))


def auto_init(path, n_components=2):
    """
    Starting values from the data.

    Mixture parameters come from an EM pass on the marginal values; ``nu``
    from ``-log(rho_1) / delta`` where ``rho_1`` is the lag-1
    autocorrelation of the normal scores ``Phi^{-1}(F_hat(y_i))``.
    """
    y, delta = _series(path)
    k = n_components
    sd = y.std()
    if len(y) < 3 or not sd > 0:
        c = float(y.mean())
        theta = np.concatenate([[1.0 / delta], np.full(k - 1, 1.0 / k),
                                np.ravel([[c + j, 1.0] for j in range(k)])])
        return InitialGuess(theta, unimodal=True, degenerate=True, note="constant series")
    z = normal_scores(y)
    zc = z - z.mean()
    rho1 = float(np.dot(zc[1:], zc[:-1]) / np.dot(zc, zc))
    nu = -np.log(np.clip(rho1, 1e-3, 1.0 - 1e-9)) / delta
    # a rough optimum suffices: the likelihood maximisation refines it
    w, locs, scales, _, _ = fit_mixture_em(y, k, tol=1e-8)
    unimodal = bool(np.min(w) < 0.02)
    if not unimodal:
        unimodal = MixtureDensity(w, locs, scales).n_modes() < 2
    theta = np.concatenate([[nu], w[:-1], np.ravel(np.column_stack([locs, scales]))])
    return InitialGuess(theta, unimodal=unimodal, note="one mode found" if unimodal else "")


# fitting --------------------------------------------------------------------------------

class _Objective:
    """Negative mean log-likelihood in unconstrained coordinates."""

    def __init__(self, y, delta, stationary):
        self.y, self.delta, self.stationary = y, delta, stationary
        self.scale = 1.0 / (len(y) - 1)
        self.evals = 0

    def __call__(self, u):
        self.evals += 1
        try:
            theta = from_unconstrained(u)
            ll, g = _loglik_and_grad(theta, self.y, self.delta, self.stationary)
        except (OutOfRangeError, ValueError, FloatingPointError):
            return np.inf, np.zeros_like(u)
        if not np.isfinite(ll) or not np.all(np.isfinite(g)):
            return np.inf, np.zeros_like(u)
        gu = unconstrained_jacobian(u).T @ g
        return -ll * self.scale, -gu * self.scale


def observed_information(theta, y, delta, stationary=False, step=HESSIAN_STEP):
    """
    Observed information in unconstrained coordinates by central differences
    of the analytic score.  Returns ``(info_u, jacobian)``.
    """
    u = to_unconstrained(theta)
    obj = _Objective(y, delta, stationary)
    p = len(u)
    hess = np.empty((p, p))
    for j in range(p):
        e = np.zeros(p)
        e[j] = step
        gp = obj(u + e)[1]
        gm = obj(u - e)[1]
        hess[:, j] = (gp - gm) / (2.0 * step)
    hess = 0.5 * (hess + hess.T) / obj.scale
    return hess, unconstrained_jacobian(u)


def _stderr_from_info(info_u, jac):
    try:
        cov_u = np.linalg.inv(info_u)
    except np.linalg.LinAlgError:
        cov_u = np.linalg.pinv(info_u)
    cov = jac @ cov_u @ jac.T
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return cov, se


def _jitter(theta, rng):
    u = to_unconstrained(theta)
    k = n_components_of(theta)
    spread = np.sqrt(np.mean(theta[k + 1::2] ** 2))
    u = u.copy()
    u[0] += 0.5 * rng.standard_normal()
    u[1:k] += 0.5 * rng.standard_normal(k - 1)
    u[k::2] += 0.3 * spread * rng.standard_normal(k)
    u[k + 1::2] += 0.2 * rng.standard_normal(k)
    return from_unconstrained(u)


def fit_mle(path, theta_init="auto", n_components=2, n_starts=5, jitter_seed=0,
            stationary=False, gtol=1e-7, maxiter=2000):
    """
    Maximise the exact log-likelihood of a transformed OU path.

    Parameters
    ----------
    path : Path
        At least 50 equally spaced observations.
    theta_init : array_like or "auto"
        Starting values ``(nu, *psi)``; ``"auto"`` uses :func:`auto_init`.
    n_starts : int
        Number of starts: the initial value plus ``n_starts - 1`` jittered
        copies drawn from a generator seeded with ``jitter_seed``.
    stationary : bool
        Include the stationary density of the first observation.

    Returns
    -------
    FitResult
        Standard errors from the inverse observed information, computed by
        central differences of the analytic score.
    """
    y, delta = _series(path)
    if len(y) < MIN_FIT_LENGTH:
        raise ValueError(f"need at least {MIN_FIT_LENGTH} observations, got {len(y)}")
    init_note = ""
    if isinstance(theta_init, str):
        if theta_init != "auto":
            raise ValueError("theta_init must be a vector or 'auto'")
        guess = auto_init(path, n_components)
        init_note = guess.note
        theta0 = guess.theta
    else:
        theta0 = np.asarray(theta_init, dtype=float)
    theta0 = relabel(theta0)
    obj = _Objective(y, delta, stationary)
    ll0 = -obj(to_unconstrained(theta0))[0] / obj.scale
    rng = np.random.default_rng(jitter_seed)
    starts = [theta0] + [_jitter(theta0, rng) for _ in range(max(n_starts, 1) - 1)]
    runs = []
    for s in starts:
        res = optimize.minimize(obj, to_unconstrained(s), jac=True, method="BFGS",
                                options={"gtol": gtol, "maxiter": maxiter})
        runs.append(res)
    finite = [r for r in runs if np.isfinite(r.fun)]
    if not finite:
        raise ConvergenceError("likelihood could not be evaluated from any start")
    best = min(finite, key=lambda r: r.fun)
    theta = relabel(from_unconstrained(best.x))
    ll, g = _loglik_and_grad(theta, y, delta, stationary)
    info_u, jac = observed_information(theta, y, delta, stationary)
    cov, se = _stderr_from_info(info_u, jac)
    score_u = jac.T @ g / (len(y) - 1)
    score_norm = float(np.linalg.norm(score_u))
    converged = bool(best.success or score_norm < 1e-5)
    t = TransformedDiffusion.from_theta(theta, n_components)
    trace = {
        "loglik_init": ll0,
        "start_logliks": [float(-r.fun / obj.scale) if np.isfinite(r.fun) else None for r in runs],
        "score_norm": score_norm,
        "function_evals": obj.evals,
        "optimizer_message": str(best.message),
        "init_note": init_note,
    }
    return FitResult(theta=theta, names=t.param_names, loglik=ll, stderr=se,
                     iterations=int(best.nit), converged=converged, delta=delta,
                     method="mle", cov=cov, n_obs=len(y), trace=trace)
