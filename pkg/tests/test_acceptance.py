"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL|SKIP`` line (visible in
``pytest -v`` output) and then asserts, so a failure is never hidden by the
report line.
"""

import csv
import json
import os
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import special, stats

from extremedep import (AsymmetricLogistic, ExtremalT, HuslerReiss, PairwiseBeta,
                        TiltedDirichlet, mvgauss)
from extremedep.bayes import (default_prior, geweke, heidelberger_welch, mh_sample,
                              spectrum0_ar)
from extremedep.cli import main
from extremedep.inference import _tic, bic, fit_mle, log_likelihood
from extremedep.io import model_to_text, read_csv

DATA = Path(__file__).parent / "data"
LEEDS_ENV = "EXTREMEDEP_LEEDS_CSV"


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail=""):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok

    return emit


# -- parameter sets ------------------------------------------------------------------

# twenty trivariate showcase densities across the families, plus sets in d = 2 and 4
SHOWCASE_SETS = [
    AsymmetricLogistic.exchangeable(5.75, [0.5, 0.5, 0.5]),
    AsymmetricLogistic.exchangeable(1.01, [0.9, 0.9, 0.9]),
    AsymmetricLogistic.exchangeable(1.25, [0.5, 0.5, 0.5]),
    AsymmetricLogistic.exchangeable(1.4, [0.7, 0.15, 0.15]),
    TiltedDirichlet([2, 2, 2]),
    TiltedDirichlet([0.5, 0.5, 0.5]),
    TiltedDirichlet([2, 2.5, 30]),
    TiltedDirichlet([0.1, 0.25, 0.95]),
    PairwiseBeta(4, [2, 2, 2]),
    PairwiseBeta(0.5, [1, 1, 1]),
    PairwiseBeta(1, [2, 4, 15]),
    PairwiseBeta(1, [10, 10, 10]),
    HuslerReiss(np.array([0.3, 0.3, 0.3])),
    HuslerReiss(np.array([1.4, 1.4, 1.4])),
    HuslerReiss(np.array([1.7, 0.7, 1.1])),
    HuslerReiss(np.array([0.52, 0.71, 0.52])),
    ExtremalT(np.array([0.95, 0.95, 0.95]), 2),
    ExtremalT(np.array([-0.3, -0.3, -0.3]), 5),
    ExtremalT(np.array([0.52, 0.71, 0.52]), 3),
    ExtremalT(np.array([0.52, 0.71, 0.52]), 2),
]
EXTRA_SETS = [
    AsymmetricLogistic.exchangeable(2.0, [0.4, 0.8]),
    TiltedDirichlet([1.5, 0.7]),
    HuslerReiss(np.array([0.8])),
    ExtremalT(np.array([0.4]), 3.0),
    TiltedDirichlet([1.2, 0.8, 2.0, 0.6]),
    HuslerReiss(np.array([0.6, 0.9, 1.1, 0.7, 0.8, 1.0])),
]


def random_model(family, d, rng):
    k = d * (d - 1) // 2
    if family == "AL":
        return AsymmetricLogistic.exchangeable(rng.uniform(1.1, 4), rng.uniform(0.1, 1, d))
    if family == "TD":
        return TiltedDirichlet(rng.uniform(0.3, 4, d))
    if family == "PB":
        return PairwiseBeta(rng.uniform(0.3, 4), rng.uniform(0.3, 6, k))
    if family == "HR":
        # squared Euclidean distances always form a valid variogram
        x = rng.normal(0, 0.6, size=(d, d))
        dist = np.sqrt(((x[:, None] - x[None]) ** 2).sum(-1))
        return HuslerReiss(np.maximum(dist[np.triu_indices(d, 1)], 0.05))
    while True:
        rho = rng.uniform(-0.5, 0.9, k)
        m = np.eye(d)
        m[np.triu_indices(d, 1)] = rho
        m = m + m.T - np.eye(d)
        if np.linalg.eigvalsh(m)[0] > 0.05:
            return ExtremalT(rho, rng.uniform(1, 8))


# -- 1 ----------------------------------------------------------------------------------


def test_criterion_1_moment_conditions(report):
    t0 = time.perf_counter()
    worst = 0.0
    for m in SHOWCASE_SETS + EXTRA_SETS:
        mom = m.moments(tol=1e-6 if m.d < 4 else 1e-4)
        worst = max(worst, float(np.max(np.abs(mom - 1.0 / m.d))))
    dt = time.perf_counter() - t0
    fams = {m.family for m in SHOWCASE_SETS + EXTRA_SETS}
    n = len(SHOWCASE_SETS + EXTRA_SETS)
    ok = worst < 1e-3 and dt < 120 and n >= 12 and len(fams) == 5
    report(1, ok, f"{n} sets, max |mean - 1/d| = {worst:.2e}, {dt:.1f} s")
    assert ok


# -- 2 ----------------------------------------------------------------------------------


def test_criterion_2_exponent_properties(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    bad = []
    for fam in ("AL", "TD", "PB", "HR", "ET"):
        tol = 1e-9 if fam in ("AL", "HR", "ET") else 1e-6
        for _ in range(20):
            m = random_model(fam, 3, rng)
            y = rng.uniform(0.2, 5, 3)
            a = rng.uniform(0.1, 10)
            v = float(m.exponent(y))
            if abs(float(m.exponent(a * y)) - v / a) > tol * max(1, v / a):
                bad.append((fam, "homogeneity"))
            if not (np.max(1 / y) - 1e-9 <= v <= np.sum(1 / y) + 1e-9):
                bad.append((fam, "bounds"))
            y2 = rng.uniform(0.2, 5, 3)
            mid = float(m.exponent(0.5 * (y + y2)))
            if mid > 0.5 * (v + float(m.exponent(y2))) + 1e-9:
                bad.append((fam, "convexity"))
    dt = time.perf_counter() - t0
    ok = not bad and dt < 60
    report(2, ok, f"100 random triples, violations {bad[:3]}, {dt:.1f} s")
    assert ok


# -- 3 ----------------------------------------------------------------------------------


def test_criterion_3_et_to_hr_limit(report):
    # run exactly as stated: rho = 1 - lambda^2 / nu
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    nu = 1e6
    worst = 0.0
    for lam in (0.3, 0.65, 1.4):
        et = ExtremalT(np.array([1 - lam**2 / nu]), nu)
        hr = HuslerReiss(np.array([lam]))
        for y in rng.uniform(0.2, 5, size=(20, 2)):
            worst = max(worst, abs(float(et.exponent(y)) - float(hr.exponent(y))))
    dt = time.perf_counter() - t0
    ok = worst < 1e-3 and dt < 10
    report(3, ok, f"max |V_ET - V_HR| = {worst:.3g}, {dt:.1f} s")
    assert ok


# -- 4 ----------------------------------------------------------------------------------


def test_criterion_4_inclusion_exclusion(report):
    rng = np.random.default_rng(4)
    worst = 0.0
    for fam in ("AL", "HR", "ET"):
        for _ in range(10):
            m = random_model(fam, 2, rng)
            y = rng.uniform(0.3, 10, 2)
            r = float(m.tail_dependence(y, method="quadrature"))
            worst = max(worst, abs(r - (np.sum(1 / y) - float(m.exponent(y)))))
    ok = worst < 1e-6
    report(4, ok, f"max deviation {worst:.2e}")
    assert ok


# -- 5 ----------------------------------------------------------------------------------


def test_criterion_5_information_criteria(report):
    b = bic(234.51, 3, 100)
    J = np.array([[3.0, 0.4, 0.1], [0.4, 2.0, -0.2], [0.1, -0.2, 1.5]])
    aic_gap = _tic(234.51, J, J) - (-2 * (234.51 - 3))
    ok = abs(b - (-449.69)) <= 0.05 and abs(b - (-449.67)) <= 0.05 and aic_gap == 0.0
    report(5, ok, f"bic = {b:.3f} (reference -449.67), TIC - AIC = {aic_gap}")
    assert ok


# -- 6 ----------------------------------------------------------------------------------


def test_criterion_6_simulation_recovery(report):
    t0 = time.perf_counter()
    truths = {"HR": HuslerReiss(np.array([0.65, 0.90, 0.98])),
              "TD": TiltedDirichlet([1.20, 0.67, 0.41])}
    rates = {}
    for fam, m in truths.items():
        hits = 0
        for seed in range(20):
            W = m.sample(2000, seed=1000 + seed)
            fit = fit_mle(fam, W)
            hits += bool(np.all(np.abs(fit.theta_hat - m.params()) < 3 * fit.std_errors))
        rates[fam] = hits / 20
    dt = time.perf_counter() - t0
    ok = all(r >= 0.95 for r in rates.values()) and dt < 300
    report(6, ok, f"coverage {rates}, {dt:.0f} s")
    assert ok


# -- 7 ----------------------------------------------------------------------------------


def owen_bvn(h, k, r):
    s = np.sqrt(1 - r * r)
    ah = (k - r * h) / (h * s) if h != 0 else np.inf * np.sign(k - r * h or 1)
    ak = (h - r * k) / (k * s) if k != 0 else np.inf * np.sign(h - r * k or 1)
    corr = 0.5 if (h * k < 0 or (h * k == 0 and h + k < 0)) else 0.0
    return (0.5 * special.ndtr(h) + 0.5 * special.ndtr(k)
            - special.owens_t(h, ah) - special.owens_t(k, ak) - corr)


def test_criterion_7_mvn_mvt_kernels(report):
    oracle = json.loads((DATA / "mc_oracle.json").read_text())
    misses = []
    for k, c in enumerate(oracle["cases"]):
        if c["kind"] == "mvn":
            v = mvgauss.mvn_cdf(c["upper"], c["corr"])
        else:
            v = mvgauss.mvt_cdf(c["upper"], c["corr"], c["df"])
        z = abs(v - c["p"]) / c["se"]
        if z >= 3:
            misses.append((k, c["kind"], len(c["upper"]), round(z, 2)))
    rng = np.random.default_rng(7)
    closed = 0.0
    for _ in range(200):
        h, kk = rng.uniform(-3, 3, 2)
        r = rng.uniform(-0.99, 0.99)
        v = mvgauss.mvn_cdf([h, kk], np.array([[1, r], [r, 1]]))
        closed = max(closed, abs(v - owen_bvn(h, kk, r)))
    ok = not misses and closed < 1e-7
    report(7, ok, f"{len(oracle['cases'])} Monte Carlo cases, beyond 3 SE: {misses}; "
                  f"bivariate closed form max error {closed:.1e}")
    assert ok


# -- 8 ----------------------------------------------------------------------------------


def test_criterion_8_mcmc_calibration(report):
    W = HuslerReiss(np.array([0.8])).sample(150, seed=21)
    pr = default_prior("HR", 2)
    grid = np.linspace(-1.5, 0.5, 4001)
    lp = np.array([pr.log_density([np.exp(u)]) + log_likelihood(HuslerReiss(np.array([np.exp(u)])), W)
                   for u in grid])
    wts = np.exp(lp - lp.max())
    exact = float(np.sum(np.exp(grid) * wts) / np.sum(wts))
    ch = mh_sample("HR", W, n_iter=25_000, burn_in=5_000, seed=3)
    x = ch.retained[:, 0]
    mcse = float(np.sqrt(spectrum0_ar(x) / x.size))
    mean_ok = abs(x.mean() - exact) < 3 * mcse

    rng = np.random.default_rng(88)
    z = np.array([geweke(rng.normal(size=100_000)) for _ in range(500)])
    alarm = float(np.mean(np.abs(z) >= 1.96))
    n = 5000
    trend_rejected = not heidelberger_welch(np.arange(n) / n)["passed"]
    ok = mean_ok and alarm <= 0.06 and trend_rejected
    report(8, ok, f"posterior mean {x.mean():.5f} vs {exact:.5f} (3 MCSE {3 * mcse:.1e}), "
                  f"Geweke false alarms {alarm:.3f}, trend rejected {trend_rejected}")
    assert ok


# -- 9 ----------------------------------------------------------------------------------

REFERENCE_FITS = {
    ("PM10,NO,SO2", "TD"): ([1.20, 0.67, 0.41], 199.63),
    ("NO2,SO2,NO", "TD"): ([0.85, 0.39, 0.90], 200.84),
    ("PM10,NO,NO2", "TD"): ([1.43, 1.55, 1.28], 186.35),
    ("PM10,NO,SO2", "PB"): ([3.21, 0.47, 0.45, 0.68], 95.95),
    ("NO2,SO2,NO", "PB"): ([0.40, 3.74, 0.50, 0.64], 102.59),
    ("PM10,NO,NO2", "PB"): ([3.75, 0.71, 3.18, 1.35], 84.31),
    ("PM10,NO,SO2", "HR"): ([0.65, 0.90, 0.98], 234.51),
    ("NO2,SO2,NO", "HR"): ([1.00, 0.56, 0.96], 251.80),
    ("PM10,NO,NO2", "HR"): ([0.60, 0.70, 0.51], 198.23),
    ("PM10,NO,SO2", "ET"): ([0.87, 0.74, 0.66, 3.89], 152.13),
    ("NO2,SO2,NO", "ET"): ([0.58, 0.87, 0.64, 3.50], 141.92),
    ("PM10,NO,NO2", "ET"): ([0.88, 0.82, 0.89, 3.70], 180.74),
}
REFERENCE_EVENTS = [
    ("event1", {"PM10": 95, "NO": 270, "SO2": 95}, 0.038),
    ("event2", {"NO2": 110, "SO2": 95, "NO": 270}, 0.030),
    ("event3", {"PM10": 95, "NO": 270, "NO2": 110, "SO2": 95}, 0.030),
]


@pytest.mark.slow
def test_criterion_9_leeds_reproduction(report, tmp_path, capsys):
    path = os.environ.get(LEEDS_ENV)
    if not path or not Path(path).exists():
        with capsys.disabled():
            print(f"\ncriterion 9: SKIP  set {LEEDS_ENV} to the winter CSV to run it")
        pytest.skip("dataset not supplied")
    bad = []
    for (cols, fam), (est, ll) in REFERENCE_FITS.items():
        out = tmp_path / f"{cols.replace(',', '_')}_{fam}"
        assert main(["fit", "--input", path, "--columns", cols, "--families", fam,
                     "--k", "100", "--output-dir", str(out), "--no-plots"]) == 0
        fit = json.loads((out / f"fit_{fam}.json").read_text())
        got = fit["estimates"]
        if np.max(np.abs(np.array(got) - est)) > 0.02 or abs(fit["loglik"] - ll) > 0.5:
            bad.append((cols, fam, np.round(got, 3).tolist(), round(fit["loglik"], 2)))
    quad = tmp_path / "quad"
    assert main(["fit", "--input", path, "--columns", "PM10,NO,NO2,SO2", "--families", "HR",
                 "--engine", "bayes", "--k", "200", "--output-dir", str(quad),
                 "--no-plots"]) == 0
    model = quad / "model_HR_bayes.txt"
    ev = tmp_path / "events.csv"
    with ev.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["event", "mode", "PM10", "NO", "NO2", "SO2"])
        for name, thr, _ in REFERENCE_EVENTS:
            w.writerow([name, "intersection"] + [thr.get(c, "") for c in ("PM10", "NO", "NO2", "SO2")])
    assert main(["predict", "--model", str(model), "--events", str(ev), "--data", path,
                 "--output-dir", str(tmp_path), "--no-plots"]) == 0
    rows = list(csv.DictReader((tmp_path / "predictions.csv").open()))
    for (name, _, p), r in zip(REFERENCE_EVENTS, rows):
        if abs(float(r["probability"]) - p) > 0.005:
            bad.append((name, float(r["probability"])))
    assert main(["return-levels", "--model", str(model), "--free", "PM10",
                 "--fixed", "NO=270,NO2=110,SO2=95", "--periods", "50", "--data", path,
                 "--output-dir", str(tmp_path), "--no-plots"]) == 0
    level = float(next(csv.DictReader((tmp_path / "return_levels.csv").open()))["level"])
    if abs(level - 166) > 3:
        bad.append(("return level", level))
    ok = not bad
    report(9, ok, f"mismatches {bad}")
    assert ok


# -- 10 ---------------------------------------------------------------------------------


def _snapshot(d):
    return {p.name: p.read_bytes() for p in sorted(Path(d).iterdir()) if p.is_file()}


def _synthetic_csv(path):
    rng = np.random.default_rng(10)
    W = HuslerReiss(np.array([0.65, 0.9, 0.98])).sample(600, seed=10)
    X = np.log1p(3 * (1.0 / rng.uniform(size=600))[:, None] * W)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["a", "b", "c"])
        w.writerows(X.round(6))
    return X


def test_criterion_10_cli_determinism(report, tmp_path):
    data = tmp_path / "data.csv"
    X = _synthetic_csv(data)
    model = tmp_path / "td.txt"
    model.write_text(model_to_text(TiltedDirichlet([1.5, 2.0, 0.8]), ["a", "b", "c"]))
    q = np.quantile(X, 0.9, axis=0)
    ev = tmp_path / "events.csv"
    ev.write_text(f"event,mode,a,b,c\ne1,intersection,{q[0]},{q[1]},\ne2,union,,{q[1]},{q[2]}\n")

    def commands(out):
        return [
            ["fit", "--input", data, "--families", "HR,TD", "--engine", "both", "--k", "100",
             "--n-starts", "2", "--n-iter", "1500", "--burn-in", "500", "--seed", "5"],
            ["predict", "--model", out / "fit" / "model_HR.txt", "--events", ev, "--data", data],
            ["return-levels", "--model", out / "fit" / "model_HR.txt", "--free", "a",
             "--fixed", f"b={q[1]}", "--periods", "20,50", "--data", data],
            ["return-levels", "--model", out / "fit" / "model_HR.txt", "--free", "a,b",
             "--periods", "50", "--n-points", "50"],
            ["density-grid", "--model", model, "--resolution", "10"],
            ["simulate", "--model", model, "--n", "200", "--seed", "9"],
            ["diagnose", "--chain", out / "fit" / "chain_HR.csv", "--burn-in", "100"],
        ]

    snaps = []
    for run in ("r1", "r2"):
        out = tmp_path / run
        snap = {}
        for k, cmd in enumerate(commands(out)):
            where = out / ("fit" if k == 0 else f"cmd{k}")
            assert main([str(c) for c in cmd] + ["--output-dir", str(where)]) == 0, cmd
            snap.update({f"{where.name}/{n}": b for n, b in _snapshot(where).items()})
        snaps.append(snap)
    differing = sorted(n for n in snaps[0] if snaps[0][n] != snaps[1].get(n))
    ok = not differing and snaps[0].keys() == snaps[1].keys()
    report(10, ok, f"{len(snaps[0])} files over 6 commands, differing: {differing}")
    assert ok
