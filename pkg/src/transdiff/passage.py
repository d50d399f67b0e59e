"""
Mean first-passage times
========================

For a stationary diffusion with scale density ``s`` and speed density
``m = 1 / (s sigma^2)`` on ``(l, r)``, the mean time to reach ``b`` from
``a`` is

* ``2 int_a^b s(y) int_l^y m(x) dx dy`` when ``a < b``,
* ``2 int_b^a s(y) int_y^r m(x) dx dy`` when ``a > b``.

Because the quantile transformation is strictly increasing, passage times of
``Y = tau(X)`` between ``a`` and ``b`` are those of ``X`` between
``tau^{-1}(a)`` and ``tau^{-1}(b)``.  For the OU base the inner integral is a
normal cdf and the outer one reduces to a single quadrature of
``Phi(x) exp(x^2/2)`` (or ``(1 - Phi(x)) exp(x^2/2)``), both written with the
scaled complementary error function so nothing overflows for moderate ``x``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate, signal, special

from .base import BaseDiffusion, OUProcess
from .errors import AstronomicalPassageWarning, ConvergenceError
from .transform import TransformedDiffusion

ASTRONOMICAL = 8.0
_SQRT2 = np.sqrt(2.0)
_SQRT2PI = np.sqrt(2.0 * np.pi)


class PassageQuadratureError(ConvergenceError):
    """Quadrature did not reach the requested accuracy; ``partial`` holds the value."""

    def __init__(self, message, partial):
        super().__init__(f"{message} (partial value {partial:.6g})")
        self.partial = partial


def _quad(func, a, b, **kw):
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            return integrate.quad(func, a, b, limit=200, **kw)[0]
        except integrate.IntegrationWarning as exc:
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            partial = integrate.quad(func, a, b, limit=200, **kw)[0]
            raise PassageQuadratureError(str(exc).splitlines()[0], partial) from None


def mean_passage_general(b: BaseDiffusion, a, bpt, epsrel=1e-10):
    """
    Mean passage time from ``a`` to ``bpt`` by nested adaptive quadrature.

    Works for any :class:`BaseDiffusion` whose scale and speed densities can
    be evaluated; the integral over the state space is taken from the
    boundary nearest to the starting side (``l`` for up-crossings, ``r`` for
    down-crossings).

    Raises
    ------
    PassageQuadratureError
        When a quadrature reports non-convergence (e.g. fast scale growth).
    """
    a, bpt = float(a), float(bpt)
    if a == bpt:
        return 0.0
    left, right = b.state_space

    def speed(x):
        return float(b.speed_density(x))

    def scale(y):
        return float(b.scale_density(y))

    if a < bpt:
        def outer(y):
            return scale(y) * _quad(speed, left, y, epsrel=epsrel)
        return 2.0 * _quad(outer, a, bpt, epsrel=epsrel)

    def outer(y):
        return scale(y) * _quad(speed, y, right, epsrel=epsrel)
    return 2.0 * _quad(outer, bpt, a, epsrel=epsrel)


def _phi_weight_up(x):
    """``Phi(x) exp(x^2/2)``."""
    return 0.5 * special.erfcx(-x / _SQRT2)


def _phi_weight_down(x):
    """``(1 - Phi(x)) exp(x^2/2)``."""
    return 0.5 * special.erfcx(x / _SQRT2)


def mean_passage_ou(nu, xa, xb):
    """
    Closed-form mean passage time of ``dX = -nu X dt + sqrt(2 nu) dB``.

    ``sqrt(2 pi)/nu * int_{xa}^{xb} Phi(x) e^{x^2/2} dx`` for ``xa < xb`` and
    the mirror image with ``1 - Phi`` for ``xa > xb``.  Endpoints beyond
    ``|x| = 8`` trigger :class:`AstronomicalPassageWarning`: the value is
    still returned but exceeds any practical time horizon.
    """
    xa, xb = float(xa), float(xb)
    if xa == xb:
        return 0.0
    if max(abs(xa), abs(xb)) > ASTRONOMICAL:
        warnings.warn(f"passage between base points {xa:.3g} and {xb:.3g} reaches beyond "
                      f"|x| = {ASTRONOMICAL}; the value is astronomical",
                      AstronomicalPassageWarning, stacklevel=2)
    if xa < xb:
        val = _quad(_phi_weight_up, xa, xb, epsabs=0.0, epsrel=1e-12)
    else:
        val = _quad(_phi_weight_down, xb, xa, epsabs=0.0, epsrel=1e-12)
    return float(_SQRT2PI / nu * val)


def mean_passage_transformed(t: TransformedDiffusion, a, bpt):
    """
    Mean passage time of the transformed process from ``a`` to ``bpt``.

    Both points are mapped through ``tau^{-1}``; the OU base uses the closed
    form, other bases the general double quadrature.
    """
    if float(a) == float(bpt):
        return 0.0
    xa, xb = (float(v) for v in t.tau_inv(np.array([a, bpt], dtype=float)))
    if isinstance(t.base, OUProcess):
        return mean_passage_ou(t.base.rate, xa, xb)
    return mean_passage_general(t.base, xa, xb)


@dataclass(frozen=True)
class PassageReport:
    """Mean passage times between a lower and an upper level."""

    lower: float
    upper: float
    up: float
    down: float
    convention: str

    @property
    def ratio(self):
        """``E(T_lower | upper) / E(T_upper | lower)``: relative occupancy of the upper level."""
        return float(self.down / self.up) if self.up > 0 else np.nan

    def to_dict(self):
        return {"lower": self.lower, "upper": self.upper,
                "E_T_upper_from_lower": self.up, "E_T_lower_from_upper": self.down,
                "ratio_down_over_up": self.ratio, "mode_convention": self.convention}


def passage_report(t: TransformedDiffusion, lower=None, upper=None, convention="means"):
    """
    Passage times in both directions between two levels.

    Unless given, the levels are the outermost mode points of the target
    under ``convention`` (``"means"`` uses the component means, ``"density"``
    the local maxima of ``f``).
    """
    if lower is None or upper is None:
        pts = np.sort(t.target.mode_points(convention))
        if len(pts) < 2:
            raise ValueError("target has a single mode; give the levels explicitly")
        lower = pts[0] if lower is None else lower
        upper = pts[-1] if upper is None else upper
        used = convention
    else:
        used = "explicit levels"
    lower, upper = float(lower), float(upper)
    return PassageReport(lower, upper, mean_passage_transformed(t, lower, upper),
                         mean_passage_transformed(t, upper, lower), used)


# Monte Carlo validation ------------------------------------------------------------

@dataclass(frozen=True)
class PassageEstimate:
    mean: float
    se: float
    n_paths: int
    n_censored: int
    delta_sim: float


def monte_carlo_passage(t: TransformedDiffusion, a, bpt, delta_sim, n_paths, rng,
                        max_time=None, monitor_every=1, block=512):
    """
    First-crossing times of simulated exact OU paths mapped through ``tau``.

    Paths start at ``tau^{-1}(a)`` and are advanced by exact OU transitions of
    length ``delta_sim``.  Because ``tau`` is increasing, crossing ``bpt`` in
    Y is crossing ``tau^{-1}(bpt)`` in X.  Crossings are checked every
    ``monitor_every`` steps; an int gives one :class:`PassageEstimate`, a
    sequence gives a list computed from the same paths (nested grids, so the
    discretisation bias is pathwise monotone in the monitoring interval).

    Crossing detection on a grid overshoots, so estimates are biased upward
    by roughly ``O(sqrt(delta_sim))``.  Paths still running at ``max_time``
    (default 50 times the quadrature mean) are censored at that time and a
    ``RuntimeWarning`` is issued.
    """
    if not isinstance(t.base, OUProcess):
        raise TypeError("exact passage simulation requires an OU base")
    factors = [monitor_every] if np.isscalar(monitor_every) else list(monitor_every)
    single = np.isscalar(monitor_every)
    if float(a) == float(bpt):
        out = [PassageEstimate(0.0, 0.0, n_paths, 0, delta_sim * f) for f in factors]
        return out[0] if single else out
    xa, xb = (float(v) for v in t.tau_inv(np.array([a, bpt], dtype=float)))
    up = xb > xa
    nu = t.base.rate
    if max_time is None:
        max_time = 50.0 * mean_passage_ou(nu, xa, xb)
    n_steps = int(np.ceil(max_time / delta_sim))
    rho = np.exp(-nu * delta_sim)
    sd = np.sqrt(-np.expm1(-2.0 * nu * delta_sim))
    x = np.full(n_paths, xa)
    hit = {f: np.full(n_paths, -1, dtype=np.int64) for f in factors}
    done = 0
    while done < n_steps and any(np.any(h < 0) for h in hit.values()):
        m = min(block, n_steps - done)
        eps = sd * rng.standard_normal((m, n_paths))
        xs, _ = signal.lfilter([1.0], [1.0, -rho], eps, axis=0, zi=(rho * x)[None, :])
        steps = done + 1 + np.arange(m)
        crossed = xs >= xb if up else xs <= xb
        for f, h in hit.items():
            mask = crossed & (steps % f == 0)[:, None]
            first = np.argmax(mask, axis=0)
            new = (h < 0) & mask[first, np.arange(n_paths)]
            h[new] = steps[first[new]]
        x = xs[-1]
        done += m
    out = []
    for f in factors:
        h = hit[f]
        cens = h < 0
        if np.any(cens):
            warnings.warn(f"{int(cens.sum())} of {n_paths} paths did not cross before "
                          f"t = {max_time:.4g}; estimate is censored", RuntimeWarning,
                          stacklevel=2)
        times = np.where(cens, n_steps, h) * delta_sim
        out.append(PassageEstimate(float(times.mean()), float(times.std(ddof=1) / np.sqrt(n_paths)),
                                   n_paths, int(cens.sum()), delta_sim * f))
    return out[0] if single else out
