"""Command-line driver.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numerical
failure.  Every option may also be given in a key-value config file
(``--config``); command-line flags take precedence.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
import warnings
from pathlib import Path

import numpy as np
from scipy import stats

from . import bayes, inference, io, margins, models, summaries
from .errors import (ConfigError, DataError, DomainError, EstimationError, ExtremeDepError,
                     NumericError, TransformError, UnsupportedError, ValidationError)

OUTPUT_ENV = "EXTREMEDEP_OUTPUT_DIR"
DEFAULT_FAMILIES = ("TD", "PB", "HR", "ET")
DEFAULT_PERIODS = (2, 5, 10, 20, 50, 100, 200, 500)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


class Settings:
    """Merged view of flags, config-file entries and defaults."""

    def __init__(self, args):
        self.args = args
        self.cfg = {}
        if getattr(args, "config", None):
            raw = io.read_keyvalue(args.config)
            self.cfg = {k.replace("-", "_"): v for k, v in raw.items()}

    def get(self, key, default=None, conv=str):
        v = getattr(self.args, key, None)
        if v is not None:
            return v
        if key in self.cfg:
            try:
                return conv(self.cfg[key])
            except (TypeError, ValueError):
                raise ConfigError(f"invalid value {self.cfg[key]!r} for {key}") from None
        return default

    def require(self, key, conv=str):
        v = self.get(key, None, conv)
        if v is None:
            raise ConfigError(f"missing required option --{key.replace('_', '-')}")
        return v

    def output_dir(self):
        out = Path(self.get("output_dir", None) or os.environ.get(OUTPUT_ENV) or ".")
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"cannot create output directory {out}: {exc.strerror}") from None
        return out

    def plots(self):
        v = self.get("plots", True, _boolean)
        return bool(v)


def _boolean(s):
    if isinstance(s, bool):
        return s
    t = str(s).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(s)


def _list(s):
    if isinstance(s, (list, tuple)):
        return list(s)
    return [t.strip() for t in str(s).split(",") if t.strip()]


def _floats(s):
    try:
        return [float(t) for t in _list(s)]
    except ValueError:
        raise ConfigError(f"expected a comma-separated list of numbers, got {s!r}") from None


def _note(msg):
    print(msg, file=sys.stderr)


def _emit(text):
    sys.stdout.write(text)


# =============================================================================
# fit


def cmd_fit(st):
    path = st.require("input")
    cols = st.get("columns", None, _list)
    cols = _list(cols) if cols is not None else None
    q = st.get("threshold_quantile", margins.DEFAULT_QUANTILE, float)
    fams = [models.normalize_family(f) for f in _list(st.get("families", ",".join(DEFAULT_FAMILIES)))]
    if not fams:
        raise ConfigError("no families selected")
    if len(set(fams)) != len(fams):
        raise ConfigError("families must be distinct")
    engine = st.get("engine", "mle").lower()
    if engine not in ("mle", "bayes", "both"):
        raise ConfigError("engine must be mle, bayes or both")
    seed = st.get("seed", inference.DEFAULT_SEED, int)
    n_starts = st.get("n_starts", inference.DEFAULT_STARTS, int)
    n_iter = st.get("n_iter", bayes.DEFAULT_ITER, int)
    burn = st.get("burn_in", bayes.DEFAULT_BURN, int)
    if not (0.0 < q < 1.0):
        raise ConfigError("threshold quantile must lie in (0, 1)")
    if engine != "mle" and not (0 <= burn < n_iter):
        raise ConfigError("need 0 <= burn_in < n_iter")

    names, X = io.read_csv(path, cols)
    d = X.shape[1]
    if not 2 <= d <= 4:
        raise ConfigError(f"the command line handles 2 to 4 columns, got {d}")
    k = st.get("k", 200 if d == 4 else 100, int)
    if k < 1 or k > X.shape[0]:
        raise ConfigError(f"k = {k} excesses requested but the data have {X.shape[0]} rows")
    out = st.output_dir()
    plots = st.plots()

    try:
        mm = margins.fit_margins(X, q, names)
    except (ValidationError, EstimationError) as exc:
        raise DataError(str(exc)) from None
    io.write_json(out / "margins.json", [m.to_dict() for m in mm])
    Y = margins.transform_data(X, mm)
    ext = margins.select_extremes(margins.to_pseudo_polar(Y), k)
    W = ext.angles
    io.write_csv(out / "excesses.csv", ["row", "radius"] + names,
                 [[str(int(i) + 1), r, *w] for i, r, w in zip(ext.index, ext.radii, W)])

    fits, failures, table = [], [], []
    for fam in fams:
        if fam == "PB" and d < 3:
            _note("skipping PB: needs at least three columns")
            continue
        fit = None
        if engine in ("mle", "both"):
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", inference.FitWarning)
                    fit = inference.fit_mle(fam, W, n_starts=n_starts, seed=seed)
            except ExtremeDepError as exc:
                failures.append(fam)
                _note(f"{fam} maximum likelihood failed: {exc}")
            else:
                fits.append(fit)
                io.write_json(out / f"fit_{fam}.json", fit.to_dict())
                io.write_text(out / f"model_{fam}.txt", io.model_to_text(
                    fit.model, names, mm, {"estimate": "mle", "k": k}))
                for name, v, s in zip(fit.model.param_names(), fit.theta_hat, fit.std_errors):
                    table.append([fam, "mle", name, v, s, fit.loglik, fit.tic, fit.bic])
                if plots and d == 3:
                    _density_plot(fit.model, out / f"density_{fam}.png", names, W,
                                  f"{models.FAMILY_NAMES[fam]} (maximum likelihood)")
        if engine in ("bayes", "both"):
            if fam == "AL":
                _note("skipping Bayesian fit for AL: not supported")
                continue
            try:
                start = fit.theta_hat if fit is not None else None
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", bayes.ChainWarning)
                    ch = bayes.mh_sample(fam, W, n_iter=n_iter, burn_in=burn, seed=seed, start=start)
            except ExtremeDepError as exc:
                failures.append(fam)
                _note(f"{fam} posterior sampling failed: {exc}")
                continue
            s = ch.summaries()
            io.write_csv(out / f"chain_{fam}.csv", ch.param_names, ch.retained)
            io.write_json(out / f"chain_{fam}.json", ch.to_dict())
            io.write_text(out / f"model_{fam}_bayes.txt", io.model_to_text(
                ch.posterior_mean_model(), names, mm, {"estimate": "posterior_mean", "k": k}))
            ll = inference.log_likelihood(ch.posterior_mean_model(), inference.nudge(W))
            for j, name in enumerate(ch.param_names):
                table.append([fam, "bayes", name, s["mean"][j], s["sd"][j], ll, None, None])
            if plots:
                from . import plotting

                plotting.traces(ch.draws, ch.param_names, out / f"trace_{fam}.png", ch.burn_in)

    header = ["family", "engine", "parameter", "estimate", "std_error", "loglik", "tic", "bic"]
    io.write_csv(out / "summary.csv", header, table)
    text = io.csv_text(header, table)
    if len(fits) >= 2:
        by_tic = inference.select_model(fits, "TIC")
        by_bic = inference.select_model(fits, "BIC")
        rows = [[f.family, str(by_tic.index(f) + 1), str(by_bic.index(f) + 1), str(f.n_params),
                 f.loglik, f.tic, f.bic] for f in by_tic]
        rh = ["family", "rank_tic", "rank_bic", "n_params", "loglik", "tic", "bic"]
        io.write_csv(out / "ranking.csv", rh, rows)
        text += "\n" + io.csv_text(rh, rows)
    _emit(text)
    if plots and d == 3:
        from . import plotting

        plotting.simplex_scatter(W, out / "excesses.png", names, f"{k} largest observations")
    if failures:
        return EXIT_NUMERIC
    return EXIT_OK


def _grid_points(res):
    """Lattice points with spacing 1 / (2 res) at distance >= 1 / (2 res) from every edge."""
    n = 2 * int(res)
    pts = [(i, j, n - i - j) for i in range(1, n) for j in range(1, n - i)]
    return np.array(pts, dtype=float) / n


def _density_plot(model, path, names, W, title, res=40):
    from . import plotting

    g = _grid_points(res)
    plotting.density_triangle(g, model.log_density(g), path, names, W, title)


# =============================================================================
# predict


def _margins_for(st, model, cols, mm_file):
    """Margins refitted from --data when given, else those stored with the model."""
    data = st.get("data", None)
    if data:
        names, X = io.read_csv(data, cols)
        q = mm_file[0].threshold_quantile if mm_file else margins.DEFAULT_QUANTILE
        try:
            mm = margins.fit_margins(X, q, names)
        except (ValidationError, EstimationError) as exc:
            raise DataError(str(exc)) from None
        return mm, X
    if not mm_file:
        raise ConfigError("the model file has no margins; pass --data")
    return mm_file, None


def _model_and_margins(st):
    model, cols, mm = io.read_model(st.require("model"))
    cols = cols or [f"x{j + 1}" for j in range(model.d)]
    mm, X = _margins_for(st, model, cols, mm)
    if X is None:
        mm = [margins.MarginalModel(m.threshold_quantile, m.threshold_value, m.gpd_scale,
                                    m.gpd_shape, m.below, m.n, None, c) for m, c in zip(mm, cols)]
    return model, cols, mm, X


def _normal_ci(k, n):
    p = k / n
    h = 1.959963984540054 * math.sqrt(p * (1 - p) / n)
    return max(p - h, 0.0), min(p + h, 1.0)


def _exact_ci(k, n):
    lo = 0.0 if k == 0 else stats.beta.ppf(0.025, k, n - k + 1)
    hi = 1.0 if k == n else stats.beta.ppf(0.975, k + 1, n - k)
    return float(lo), float(hi)


def cmd_predict(st):
    model, cols, mm, X = _model_and_margins(st)
    events = _read_events(st.require("events"), cols)
    out = st.output_dir()
    header = ["event", "mode"] + cols + ["probability", "excess", "n", "empirical",
                                         "ci_lower", "ci_upper", "flags"]
    rows = []
    for name, mode, raw in events:
        flags = []
        ev = summaries.FailureEvent.from_raw(raw, mm, mode)
        if ev.below_fit_range.any():
            flags.append("below_fit_range")
            _note(f"warning: event {name} has thresholds below the marginal threshold")
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", summaries.ApproximationWarning)
            prob = summaries.event_probability(model, ev)
        if any(issubclass(w.category, summaries.ApproximationWarning) for w in caught):
            flags.append("approximation_regime")
            _note(f"warning: event {name}: thresholds outside the tail approximation regime")
        emp = [None, None, None, None, None]
        if X is not None:
            used = ~np.isnan(raw)
            hit = X[:, used] > raw[used]
            cnt = int((hit.all(axis=1) if mode == "intersection" else hit.any(axis=1)).sum())
            n = X.shape[0]
            lo, hi = _normal_ci(cnt, n)
            emp = [str(cnt), str(n), cnt / n, lo, hi]
        rows.append([name, mode] + [("" if np.isnan(v) else io.fmt(v)) for v in raw]
                    + [prob] + emp + [";".join(flags)])
    io.write_csv(out / "predictions.csv", header, rows)
    _emit(io.csv_text(header, rows))
    return EXIT_OK


def _read_events(path, cols):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise DataError(f"{path} lists no events")
    head = [h.strip() for h in lines[0].split(",")]
    unknown = [h for h in head if h not in cols and h not in ("event", "mode")]
    if unknown:
        raise ConfigError(f"{path}: unknown columns {unknown}; model columns are {cols}")
    events = []
    for k, line in enumerate(lines[1:], start=1):
        cells = [c.strip() for c in line.split(",")]
        if len(cells) != len(head):
            raise DataError(f"{path}: event row {k} has {len(cells)} fields, expected {len(head)}")
        rec = dict(zip(head, cells))
        mode = rec.get("mode", "") or "intersection"
        if mode not in summaries.MODES:
            raise ConfigError(f"{path}: event row {k}: mode must be union or intersection")
        raw = np.full(len(cols), np.nan)
        for j, c in enumerate(cols):
            v = rec.get(c, "")
            if v:
                try:
                    raw[j] = float(v)
                except ValueError:
                    raise DataError(f"{path}: event row {k}: bad threshold {v!r}") from None
        if np.all(np.isnan(raw)):
            raise DataError(f"{path}: event row {k} sets no threshold")
        events.append((rec.get("event") or str(k), mode, raw))
    return events


# =============================================================================
# return levels


def _parse_fixed(spec, cols):
    raw = np.full(len(cols), np.nan)
    for item in _list(spec):
        if "=" not in item:
            raise ConfigError(f"fixed thresholds take NAME=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        k = k.strip()
        if k not in cols:
            raise ConfigError(f"unknown column {k!r}; model columns are {cols}")
        try:
            raw[cols.index(k)] = float(v)
        except ValueError:
            raise ConfigError(f"bad threshold {v!r} for {k}") from None
    return raw


def _empirical_level(X, j, fixed_mask, fixed_raw, p):
    """Empirical joint return level and pointwise 95% interval at probability p."""
    n = X.shape[0]
    ok = np.all(X[:, fixed_mask] > fixed_raw[fixed_mask], axis=1)
    vals = np.sort(X[ok, j])[::-1]

    def level(cnt):
        c = int(round(cnt))
        return float(vals[c - 1]) if 1 <= c <= vals.size else float("nan")

    k = p * n
    if p > 0.02:
        h = 1.959963984540054 * math.sqrt(n * p * (1 - p))
        lo_c, hi_c = k - h, k + h
    else:
        lo_c, hi_c = stats.binom.ppf(0.025, n, p), stats.binom.ppf(0.975, n, p)
    # more exceedances correspond to a lower level
    return level(k), level(hi_c), level(max(lo_c, 1))


def cmd_return_levels(st):
    model, cols, mm, X = _model_and_margins(st)
    free = _list(st.require("free"))
    if len(free) not in (1, 2) or len(set(free)) != len(free):
        raise ConfigError("--free takes one or two distinct column names")
    for f in free:
        if f not in cols:
            raise ConfigError(f"unknown column {f!r}; model columns are {cols}")
    J = [cols.index(f) for f in free]
    fixed_raw = _parse_fixed(st.get("fixed", ""), cols)
    for j in J:
        if not np.isnan(fixed_raw[j]):
            raise ConfigError("a free column cannot also be fixed")
    periods = _floats(st.get("periods", ",".join(str(p) for p in DEFAULT_PERIODS)))
    if not periods or any(not (p > 1) for p in periods):
        raise ConfigError("return periods must exceed 1")
    n_points = st.get("n_points", 60, int)
    if n_points < 50:
        raise ConfigError("contours need at least 50 points")
    out = st.output_dir()
    plots = st.plots()
    used = ~np.isnan(fixed_raw)
    if len(J) == 1:
        header = ["p", "return_period", "level_frechet", "level"]
        if X is not None:
            header += ["empirical_level", "ci_lower", "ci_upper"]
        rows, emp, skipped = [], [], []
        for T in periods:
            p = 1.0 / T
            try:
                lf = summaries.joint_return_level(model, p, J, _frechet_fixed(fixed_raw, mm, J))
            except DomainError as exc:
                skipped.append(exc)
                _note(f"warning: return period {T:g} skipped: {exc}")
                continue
            lv = float(mm[J[0]].from_frechet(lf))
            row = [p, T, lf, lv]
            if X is not None:
                e = _empirical_level(X, J[0], used, fixed_raw, p)
                row += list(e)
                emp.append([T, *e])
            rows.append(row)
        if not rows:
            raise skipped[-1]
        io.write_csv(out / "return_levels.csv", header, rows)
        _emit(io.csv_text(header, rows))
        if plots:
            from . import plotting

            plotting.return_level_curve([r[1] for r in rows], [r[3] for r in rows],
                                        out / "return_levels.png", free[0],
                                        np.array(emp) if emp else None,
                                        _given_text(cols, fixed_raw))
        return EXIT_OK
    header = ["p", "return_period", free[0], free[1]]
    rows, curves, skipped = [], {}, []
    for T in periods:
        p = 1.0 / T
        try:
            pts = summaries.joint_return_level(model, p, J, _frechet_fixed(fixed_raw, mm, J),
                                               n_points=n_points)
        except DomainError as exc:
            skipped.append(exc)
            _note(f"warning: return period {T:g} skipped: {exc}")
            continue
        raw = np.column_stack([mm[J[0]].from_frechet(pts[:, 0]), mm[J[1]].from_frechet(pts[:, 1])])
        curves[T] = raw
        rows += [[p, T, a, b] for a, b in raw]
    if not rows:
        raise skipped[-1]
    io.write_csv(out / "return_levels.csv", header, rows)
    _emit(io.csv_text(header, rows))
    if plots:
        from . import plotting

        plotting.return_level_contours(curves, out / "return_levels.png", free,
                                       _given_text(cols, fixed_raw))
    return EXIT_OK


def _frechet_fixed(fixed_raw, mm, J):
    x = np.zeros(len(mm))
    for k, (v, m) in enumerate(zip(fixed_raw, mm)):
        if k in J or np.isnan(v):
            continue
        x[k] = margins.to_unit_frechet(v, m)
    return x


def _given_text(cols, raw):
    parts = [f"{c} > {v:g}" for c, v in zip(cols, raw) if not np.isnan(v)]
    return ("given " + ", ".join(parts)) if parts else ""


# =============================================================================
# density grid, simulate, diagnose


def cmd_density_grid(st):
    model, cols, _ = io.read_model(st.require("model"))
    if model.d != 3:
        raise UnsupportedError(f"density grids need d = 3, the model has d = {model.d}")
    res = st.get("resolution", 20, int)
    if res < 2:
        raise ConfigError("resolution must be at least 2")
    out = st.output_dir()
    g = _grid_points(res)
    ld = model.log_density(g)
    header = ["w1", "w2", "w3", "log_density"]
    rows = [[*w, v] for w, v in zip(g, ld)]
    io.write_csv(out / "density_grid.csv", header, rows)
    io.write_csv(out / "vertex_masses.csv", ["vertex", "mass"],
                 [[str(j + 1), model.vertex_mass(j)] for j in range(3)])
    _emit(io.csv_text(header, rows))
    if st.plots():
        from . import plotting

        plotting.density_triangle(g, ld, out / "density_grid.png", cols or ("w1", "w2", "w3"),
                                  title=models.FAMILY_NAMES[model.family])
    return EXIT_OK


def cmd_simulate(st):
    model, cols, _ = io.read_model(st.require("model"))
    n = st.require("n", int)
    if n < 0:
        raise ConfigError("n must be nonnegative")
    seed = st.get("seed", inference.DEFAULT_SEED, int)
    out = st.output_dir()
    W = models.sample_angular(model, n, seed)
    header = [f"w{j + 1}" for j in range(model.d)]
    io.write_csv(out / "simulated.csv", header, W)
    _emit(io.csv_text(header, W))
    if st.plots() and n > 0:
        from . import plotting

        plotting.simplex_scatter(W, out / "simulated.png", cols, f"{n} draws")
    return EXIT_OK


def cmd_diagnose(st):
    names, X = io.read_csv(st.require("chain"))
    burn = st.get("burn_in", 0, int)
    if not 0 <= burn < X.shape[0]:
        raise ConfigError("burn-in must be smaller than the chain length")
    out = st.output_dir()
    x = X[burn:]
    diag = bayes.chain_diagnostics(x, names)
    header = ["parameter", "mean", "sd", "geweke_z", "heidel_pass", "heidel_start"]
    rows = []
    for j, nm in enumerate(names):
        e = diag[nm]
        hp = e.get("heidel_pass")
        hs = e.get("heidel_start")
        rows.append([nm, x[:, j].mean(), x[:, j].std(ddof=1) if len(x) > 1 else float("nan"),
                     e.get("geweke_z"), "" if hp is None else str(hp).lower(),
                     "" if hs is None else str(hs)])
    io.write_csv(out / "diagnostics.csv", header, rows)
    io.write_json(out / "diagnostics.json", {"burn_in": burn, "n": int(len(x)), "parameters": diag})
    _emit(io.csv_text(header, rows))
    if st.plots():
        from . import plotting

        plotting.traces(X, names, out / "diagnostics_trace.png", burn)
    failed = [nm for nm in names if diag[nm].get("numeric_failure")]
    if failed:
        _note(f"numeric error: diagnostics failed for {', '.join(failed)} (constant chain?)")
        return EXIT_NUMERIC
    return EXIT_OK


# =============================================================================


def build_parser():
    p = _Parser(prog="extremedep", description="Angular dependence models for multivariate extremes.")
    sub = p.add_subparsers(dest="command", metavar="command")

    def common(sp):
        sp.add_argument("--config", help="key-value config file; flags override it")
        sp.add_argument("--output-dir", help=f"output directory (default ${OUTPUT_ENV} or .)")
        sp.add_argument("--plots", dest="plots", action="store_const", const=True, default=None)
        sp.add_argument("--no-plots", dest="plots", action="store_const", const=False)

    sp = sub.add_parser("fit", help="fit margins and dependence models to a CSV")
    common(sp)
    sp.add_argument("--input")
    sp.add_argument("--columns")
    sp.add_argument("--threshold-quantile", type=float)
    sp.add_argument("--k", type=int, help="number of largest observations kept")
    sp.add_argument("--families", help="comma-separated: AL,TD,PB,HR,ET")
    sp.add_argument("--engine", choices=["mle", "bayes", "both"])
    sp.add_argument("--seed", type=int)
    sp.add_argument("--n-starts", type=int)
    sp.add_argument("--n-iter", type=int)
    sp.add_argument("--burn-in", type=int)
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("predict", help="probabilities of joint exceedance events")
    common(sp)
    sp.add_argument("--model")
    sp.add_argument("--events")
    sp.add_argument("--data")
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("return-levels", help="joint return levels and contours")
    common(sp)
    sp.add_argument("--model")
    sp.add_argument("--free")
    sp.add_argument("--fixed")
    sp.add_argument("--periods")
    sp.add_argument("--data")
    sp.add_argument("--n-points", type=int)
    sp.set_defaults(func=cmd_return_levels)

    sp = sub.add_parser("density-grid", help="log angular density on a simplex grid (d = 3)")
    common(sp)
    sp.add_argument("--model")
    sp.add_argument("--resolution", type=int)
    sp.set_defaults(func=cmd_density_grid)

    sp = sub.add_parser("simulate", help="draw angles from a model")
    common(sp)
    sp.add_argument("--model")
    sp.add_argument("--n", type=int)
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("diagnose", help="convergence diagnostics for a chain CSV")
    common(sp)
    sp.add_argument("--chain")
    sp.add_argument("--burn-in", type=int)
    sp.set_defaults(func=cmd_diagnose)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        if not getattr(args, "command", None):
            raise ConfigError("a command is required: fit, predict, return-levels, "
                              "density-grid, simulate or diagnose")
        return args.func(Settings(args))
    except (ConfigError, UnsupportedError) as exc:
        _note(f"error: {exc}")
        return EXIT_CONFIG
    except (DataError, TransformError) as exc:
        _note(f"data error: {exc}")
        return EXIT_DATA
    except ValidationError as exc:
        _note(f"error: {exc}")
        return EXIT_CONFIG
    except (NumericError, ExtremeDepError, FloatingPointError) as exc:
        _note(f"numerical failure: {exc}")
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
