"""
Command-line interface
======================

``transdiff <command> [options]`` with commands ``ingest-check``, ``fit``,
``passage``, ``simulate``, ``diagnose`` and ``acf``.

Structured results are written as JSON, series as CSV (``#`` comment lines
carry the configuration, seed and library version).  Wall-clock timing goes
only into ``manifest.json`` so that CSV outputs of identical runs are
byte-identical.  Options may also come from a JSON document given with
``--config``; keys match the long option names with dashes replaced by
underscores, and explicit command-line flags win.

Exit status: 0 success, 1 numerical failure, 2 usage or I/O error.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from dataclasses import dataclass

import numpy as np

from . import __version__
from .densities import MixtureDensity
from .errors import ConvergenceError, OutOfRangeError, SimulationError
from .simulate import Path

EXIT_OK, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2
MODELS = ("transformed-ou", "transformed-ou+error", "double-well", "pure")
THETA_NAMES = ("nu", "alpha", "mu1", "sigma1", "mu2", "sigma2")
SPACING_RTOL = 1e-9


class UsageError(Exception):
    """Invalid configuration or unreadable input (exit status 2)."""


# ingestion -----------------------------------------------------------------------------------

def _rows(fh):
    for lineno, line in enumerate(fh, start=1):
        s = line.strip()
        if s and not s.startswith("#"):
            yield lineno, s


def ingest_csv(file, delta=None):
    """
    Read an equally spaced series.

    The file needs a header naming a ``value`` column and optionally a
    ``time`` column (other columns are ignored).  Without ``time`` the
    sampling interval must be given.  Raises :class:`UsageError` naming the
    offending line numbers for non-numeric or missing values and unequal
    spacing.
    """
    try:
        fh = open(file, newline="")
    except OSError as exc:
        raise UsageError(f"cannot read {file}: {exc.strerror or exc}") from None
    with fh:
        rows = list(_rows(fh))
    if not rows:
        raise UsageError(f"{file}: no header line")
    header_line, header = rows[0]
    cols = [c.strip().lower() for c in next(csv.reader([header]))]
    if "value" not in cols:
        if len(cols) == 1:
            cols = ["value"]
            rows = [(header_line, header)] + rows[1:]
            try:
                float(header)
            except ValueError:
                raise UsageError(f"{file}: header must name a 'value' column") from None
        else:
            raise UsageError(f"{file}: header must name a 'value' column")
    else:
        rows = rows[1:]
    iv = cols.index("value")
    it = cols.index("time") if "time" in cols else None
    values, times, bad, gaps = [], [], [], []
    for lineno, line in rows:
        fields = next(csv.reader([line]))
        try:
            v = float(fields[iv])
            tm = float(fields[it]) if it is not None else None
        except (ValueError, IndexError):
            bad.append(lineno)
            continue
        if not math.isfinite(v) or (tm is not None and not math.isfinite(tm)):
            gaps.append(lineno)
        values.append(v)
        times.append(tm)
    if bad:
        raise UsageError(f"{file}: non-numeric rows at lines {_fmt_lines(bad)}")
    if gaps:
        raise UsageError(f"{file}: missing (NaN/inf) values at lines {_fmt_lines(gaps)}")
    if not values:
        raise UsageError(f"{file}: no observations")
    lines = [ln for ln, _ in rows]
    if it is not None:
        t = np.array(times)
        if len(t) > 1:
            steps = np.diff(t)
            step = float(np.median(steps))
            if not step > 0:
                raise UsageError(f"{file}: times must increase")
            off = np.flatnonzero(np.abs(steps - step) > SPACING_RTOL * abs(step))
            if len(off):
                raise UsageError(f"{file}: unequal spacing at lines "
                                 f"{_fmt_lines([lines[i + 1] for i in off])}")
            if delta is not None and abs(step - delta) > SPACING_RTOL * delta:
                raise UsageError(f"{file}: time spacing {step} disagrees with --delta {delta}")
            delta = step
        elif delta is None:
            raise UsageError("a single observation needs --delta")
        start = float(t[0])
    else:
        if delta is None:
            raise UsageError(f"{file}: no time column; give --delta")
        start = 0.0
    return Path(float(delta), np.array(values), None, {"source": str(file), "start": start})


def _fmt_lines(lines, limit=20):
    shown = ", ".join(map(str, lines[:limit]))
    return shown + (f" and {len(lines) - limit} more" if len(lines) > limit else "")


# parameters -----------------------------------------------------------------------------

def load_params(spec):
    """
    Parameters from a JSON string or file: either a flat object
    (``nu, alpha, mu1, sigma1, mu2, sigma2`` and optionally ``kappa``,
    ``gamma2``, ``theta``, ``sigma``) or a ``fit.json`` written by ``fit``.
    """
    if spec is None:
        return {}
    if isinstance(spec, dict):
        d = spec
    elif os.path.exists(spec):
        with open(spec) as fh:
            d = json.load(fh)
    else:
        try:
            d = json.loads(spec)
        except json.JSONDecodeError:
            raise UsageError(f"--params is neither a file nor JSON: {spec!r}") from None
    if "estimates" in d:
        d = d["estimates"]
    elif "parameters" in d:
        d = d["parameters"]
    if not isinstance(d, dict):
        raise UsageError("parameters must be a JSON object")
    return {k: float(v) for k, v in d.items() if isinstance(v, (int, float))}


def _theta(params):
    missing = [n for n in THETA_NAMES if n not in params]
    if missing:
        raise UsageError(f"missing parameters: {', '.join(missing)}")
    return np.array([params[n] for n in THETA_NAMES])


def _model(params):
    from .transform import TransformedDiffusion

    try:
        return TransformedDiffusion.from_theta(_theta(params))
    except ValueError as exc:
        raise UsageError(f"invalid parameters: {exc}") from None


# output ------------------------------------------------------------------------------

@dataclass
class Outputs:
    """Writes result files and the run manifest."""

    directory: str | None
    config: dict
    started: float

    def path(self, name):
        if self.directory is None:
            return None
        os.makedirs(self.directory, exist_ok=True)
        return os.path.join(self.directory, name)

    def header(self):
        return [f"transdiff {__version__}", f"seed {self.config.get('seed')}",
                "config " + json.dumps({k: v for k, v in self.config.items() if k != "out"},
                                       sort_keys=True)]

    def json(self, name, payload):
        p = self.path(name)
        if p is None:
            return
        doc = {"library_version": __version__, "seed": self.config.get("seed"),
               "config": self.config, **payload}
        with open(p, "w") as fh:
            json.dump(_clean(doc), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def csv(self, name, columns):
        p = self.path(name)
        if p is None:
            return
        keys = list(columns)
        cols = [np.asarray(columns[k]) for k in keys]
        with open(p, "w", newline="") as fh:
            for line in self.header():
                fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow(keys)
            for row in zip(*cols):
                w.writerow([_fmt(v) for v in row])

    def manifest(self, files, status):
        p = self.path("manifest.json")
        if p is None:
            return
        with open(p, "w") as fh:
            json.dump(_clean({"library_version": __version__, "seed": self.config.get("seed"),
                              "config": self.config, "files": files, "status": status,
                              "wall_clock_seconds": time.perf_counter() - self.started,
                              "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S%z")}),
                      fh, indent=2, sort_keys=True)
            fh.write("\n")


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def _table(rows, out=sys.stdout):
    width = max(len(str(r[0])) for r in rows)
    for row in rows:
        cells = "  ".join(f"{v:>14.6g}" if isinstance(v, (float, np.floating)) else f"{v!s:>14}"
                          for v in row[1:])
        print(f"{row[0]:<{width}}  {cells}", file=out)


# commands ---------------------------------------------------------------------------

def _require_input(cfg):
    if not cfg.get("input"):
        raise UsageError("--input is required")
    return ingest_csv(cfg["input"], cfg.get("delta"))


def cmd_ingest_check(cfg, out):
    path = _require_input(cfg)
    y = path.values
    summary = {"n": len(y), "delta": path.delta, "mean": float(y.mean()),
               "sd": float(y.std(ddof=1)) if len(y) > 1 else 0.0,
               "min": float(y.min()), "max": float(y.max())}
    for k, v in summary.items():
        print(f"{k:>6}: {v}")
    out.json("ingest.json", {"summary": summary})
    return ["ingest.json"]


def cmd_fit(cfg, out):
    from .diagnostics import uniform_residuals
    from .errorfit import empirical_acf, fit_error_model, hermite_spectrum
    from .mef import EstimatingFunctionSpec, solve_mef
    from .mle import fit_mle

    path = _require_input(cfg)
    model = cfg.get("model") or "transformed-ou"
    lags = int(cfg.get("lags") or 100)
    if model == "transformed-ou":
        init = _theta(load_params(cfg["params"])) if cfg.get("params") else "auto"
        if cfg.get("method", "mle") == "mef":
            fit = solve_mef(EstimatingFunctionSpec(k=2, delta=path.delta), path, init)
        else:
            fit = fit_mle(path, init)
        names = fit.names
        rows = [("parameter", "estimate", "stderr")] + [
            (n, float(v), float(s)) for n, v, s in zip(names, fit.theta, fit.stderr)]
        _table(rows)
        t = fit.model()
        rep = uniform_residuals(t, path)
        maxlag = min(lags, len(path.values) - 1)
        emp = empirical_acf(path.values, maxlag)
        tl = np.arange(maxlag + 1) * path.delta
        theo = hermite_spectrum(t)(tl)
        out.json("fit.json", {"model": model, "fit": fit.to_dict(),
                              "estimates": fit.params, "residuals": rep.to_dict()})
        out.csv("residuals.csv", {"index": np.arange(1, len(rep.u) + 1), "u": rep.u})
        out.csv("acf.csv", {"lag": np.arange(maxlag + 1), "time": tl, "empirical": emp,
                            "model": theo})
        return ["fit.json", "residuals.csv", "acf.csv"]
    if model == "transformed-ou+error":
        rng = np.random.default_rng(int(cfg.get("seed") or 0))
        fit = fit_error_model(path, lags, int(cfg.get("bootstrap") or 0), rng)
        se = fit.stderr if fit.stderr is not None else [np.nan] * 8
        from .errorfit import ERROR_MODEL_NAMES
        rows = [("parameter", "estimate", "stderr")] + [
            (n, float(v), float(s)) for n, v, s in zip(ERROR_MODEL_NAMES, fit.estimates, se)]
        _table(rows)
        out.json("fit.json", {"model": model, **fit.to_dict()})
        a = fit.acf
        out.csv("acf.csv", {"lag": np.arange(1, len(a.lags) + 1), "time": a.lags,
                            "empirical": a.empirical, "model": a.fitted})
        return ["fit.json", "acf.csv"]
    raise UsageError(f"fitting is not available for model {model!r}")


def cmd_passage(cfg, out):
    from .passage import passage_report

    params = load_params(cfg.get("params"))
    if not params:
        raise UsageError("--params is required")
    t = _model(params)
    a, b = cfg.get("a"), cfg.get("b")
    conv = cfg.get("convention") or "means"
    if a is not None and b is not None and float(a) == float(b):
        print("E(T_b | a) = 0 (a equals b)")
        out.json("passage.json", {"passage": {"a": a, "b": b, "mean_time": 0.0}})
        return ["passage.json"]
    lower = None if a is None else min(float(a), float(b if b is not None else a))
    upper = None if b is None else max(float(b), float(a if a is not None else b))
    try:
        rep = passage_report(t, lower, upper, conv)
    except ValueError as exc:
        if isinstance(exc, OutOfRangeError):
            raise
        raise UsageError(str(exc)) from None
    print(f"levels: lower = {rep.lower:.6g}, upper = {rep.upper:.6g} ({rep.convention})")
    print(f"E(T_upper | lower) = {rep.up:.6g}")
    print(f"E(T_lower | upper) = {rep.down:.6g}")
    print(f"ratio E(T_lower | upper) / E(T_upper | lower) = {rep.ratio:.6g}")
    out.json("passage.json", {"passage": rep.to_dict()})
    return ["passage.json"]


def cmd_simulate(cfg, out):
    from .pure_diffusion import simulate_pure_diffusion
    from .simulate import (double_well_coefficients, simulate_euler, simulate_transformed_ou,
                           simulate_with_error)

    model = cfg.get("model") or "transformed-ou"
    n = int(cfg.get("n") or 1000)
    delta = float(cfg.get("delta") or 1.0)
    seed = int(cfg.get("seed") or 0)
    rng = np.random.default_rng(seed)
    params = load_params(cfg.get("params"))
    substeps = int(cfg.get("substeps") or 32)
    extra = {}
    if model in ("transformed-ou", "transformed-ou+error"):
        t = _model(params).with_acceleration()
        if model == "transformed-ou+error" or cfg.get("with_error"):
            if "kappa" not in params or "gamma2" not in params:
                raise UsageError("the error model needs kappa and gamma2")
            z, y, e = simulate_with_error(t, params["kappa"], params["gamma2"], n, delta, rng)
            values = z.values
            extra = {"y": y.values, "eps": e.values}
        else:
            values = simulate_transformed_ou(t, n, delta, "stationary", rng).values
    elif model == "double-well":
        drift, diff = double_well_coefficients(params.get("theta", 1.0),
                                               params.get("sigma", math.sqrt(2.0)))
        values = simulate_euler(drift, diff, n, delta, substeps, params.get("x0", 0.0), rng).values
    elif model == "pure":
        d = MixtureDensity.from_params(_theta({"nu": 1.0, **params})[1:])
        values = simulate_pure_diffusion(d, params.get("sigma", 1.0), n, delta, rng,
                                         substeps).values
    else:
        raise UsageError(f"unknown model {model!r}")
    out.csv("path.csv", {"index": np.arange(n), "time": np.arange(n) * delta,
                         "value": values, **extra})
    if out.directory is None:
        w = csv.writer(sys.stdout)
        w.writerow(["index", "time", "value", *extra])
        for i in range(n):
            w.writerow([i, _fmt(i * delta), _fmt(values[i]), *(_fmt(c[i]) for c in extra.values())])
    return ["path.csv"]


def cmd_diagnose(cfg, out):
    from .diagnostics import (lag_data, local_linear_coefficients, marginal_gof, qq_data,
                              uniform_residuals)

    path = _require_input(cfg)
    params = load_params(cfg.get("params"))
    if not params:
        raise UsageError("--params is required")
    t = _model(params)
    rep = uniform_residuals(t, path)
    files = ["diagnostics.json", "qq.csv", "lag.csv", "drift_diffusion.csv"]
    gof = marginal_gof(t.target, path) if len(path.values) >= 100 else None
    bw = float(cfg.get("bandwidth") or 0.1)
    ll = local_linear_coefficients(path, bw)
    mu, sig = t.coefficients(ll.grid)
    print(f"uniform residuals: KS = {rep.ks_statistic:.4g} (p = {rep.ks_pvalue:.3g}), "
          f"lag-1 rank correlation = {rep.lag1_rank_corr:.4g} (p = {rep.rank_corr_pvalue:.3g})")
    if gof is not None:
        print(f"marginal KS = {gof.ks_statistic:.4g}; {gof.notes[0]}")
    out.json("diagnostics.json", {"residuals": rep.to_dict(),
                                  "marginal": None if gof is None else gof.to_dict(),
                                  "local_linear": {"bandwidth": bw, "notes": list(ll.notes)}})
    qx, qy = qq_data(rep)
    out.csv("qq.csv", {"x": qx, "y": qy})
    lx, ly = lag_data(rep)
    out.csv("lag.csv", {"x": lx, "y": ly})
    out.csv("drift_diffusion.csv", {"y": ll.grid, "drift_estimate": ll.drift,
                                    "diffusion2_estimate": ll.diffusion2, "valid": ll.valid,
                                    "drift_model": mu, "diffusion2_model": sig ** 2})
    return files


def cmd_acf(cfg, out):
    from .errorfit import ErrorModelParams, empirical_acf, hermite_spectrum, rho_z

    path = _require_input(cfg)
    lags = min(int(cfg.get("lags") or 100), len(path.values) - 1)
    emp = empirical_acf(path.values, lags)
    tl = np.arange(lags + 1) * path.delta
    cols = {"lag": np.arange(lags + 1), "time": tl, "empirical": emp}
    params = load_params(cfg.get("params"))
    if params:
        t = _model(params)
        ry = hermite_spectrum(t)(tl)
        cols["rho_y"] = ry
        if "kappa" in params and "gamma2" in params:
            p = ErrorModelParams(_theta(params), params["kappa"], params["gamma2"])
            cols["rho_z"] = rho_z(p, tl, ry)
    out.csv("acf.csv", cols)
    if out.directory is None:
        w = csv.writer(sys.stdout)
        w.writerow(list(cols))
        for row in zip(*cols.values()):
            w.writerow([_fmt(v) for v in row])
    return ["acf.csv"]


COMMANDS = {"ingest-check": cmd_ingest_check, "fit": cmd_fit, "passage": cmd_passage,
            "simulate": cmd_simulate, "diagnose": cmd_diagnose, "acf": cmd_acf}


def build_parser():
    p = argparse.ArgumentParser(prog="transdiff", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=f"transdiff {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="JSON file with option values")
        s.add_argument("--input", help="CSV with a value column (and optionally time)")
        s.add_argument("--delta", type=float, help="sampling interval")
        s.add_argument("--model", choices=MODELS)
        s.add_argument("--params", help="JSON object or file (fit.json accepted)")
        s.add_argument("--seed", type=int)
        s.add_argument("--out", help="output directory")
        s.add_argument("--lags", type=int)
        s.add_argument("--bandwidth", type=float)
        s.add_argument("--with-error", action="store_true", default=None)
        if name == "fit":
            s.add_argument("--method", choices=("mle", "mef"))
            s.add_argument("--bootstrap", type=int, help="bootstrap replications (error model)")
        if name == "passage":
            s.add_argument("--a", type=float, help="start level")
            s.add_argument("--b", type=float, help="target level")
            s.add_argument("--convention", choices=("means", "density"))
        if name == "simulate":
            s.add_argument("--n", type=int, help="number of observations")
            s.add_argument("--substeps", type=int)
    return p


def _config(args):
    cfg = {}
    if args.config:
        try:
            with open(args.config) as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
    for k, v in vars(args).items():
        if k != "config" and v is not None:
            cfg[k] = v
    cfg.setdefault("seed", 0)
    if cfg.get("delta") is not None and not float(cfg["delta"]) > 0:
        raise UsageError("--delta must be positive")
    return cfg


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    started = time.perf_counter()
    try:
        cfg = _config(args)
        out = Outputs(cfg.get("out"), cfg, started)
        files = COMMANDS[args.command](cfg, out)
        out.manifest(files, "ok")
        return EXIT_OK
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OutOfRangeError, ConvergenceError, SimulationError, np.linalg.LinAlgError,
            FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
