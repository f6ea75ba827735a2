import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special, stats

from extremedep import mvgauss
from extremedep.errors import NumericError, UnsupportedError, ValidationError

ORACLE = json.loads((Path(__file__).parent / "data" / "mc_oracle.json").read_text())


def owen_bvn(h, k, r):
    """Bivariate normal CDF through Owen's T function."""
    s = np.sqrt(1 - r * r)
    ah = (k - r * h) / (h * s) if h != 0 else np.inf * np.sign(k - r * h or 1)
    ak = (h - r * k) / (k * s) if k != 0 else np.inf * np.sign(h - r * k or 1)
    corr = 0.5 if (h * k < 0 or (h * k == 0 and h + k < 0)) else 0.0
    return (0.5 * special.ndtr(h) + 0.5 * special.ndtr(k)
            - special.owens_t(h, ah) - special.owens_t(k, ak) - corr)


def equi(d, r):
    c = np.full((d, d), r)
    np.fill_diagonal(c, 1.0)
    return c


def random_corr(rng, d):
    a = rng.normal(size=(d, d + 2))
    s = a @ a.T
    s /= np.sqrt(np.outer(np.diag(s), np.diag(s)))
    np.fill_diagonal(s, 1.0)
    return s


def test_trivial_values():
    assert mvgauss.mvn_cdf([0.0], [[1.0]]) == pytest.approx(0.5, abs=1e-15)
    assert mvgauss.mvn_cdf([0.0, 0.0], np.eye(2)) == pytest.approx(0.25, abs=1e-12)
    for df in (0.7, 3.0, 40.0):
        assert mvgauss.mvt_cdf([0.0], [[1.0]], df) == pytest.approx(0.5, abs=1e-12)


@pytest.mark.parametrize("d", [2, 3, 4])
def test_orthant_closed_forms(d):
    # with correlation 1/2 the orthant probability is 1 / (d + 1)
    r = 0.5
    exact = 1.0 / (d + 1)
    assert mvgauss.mvn_cdf(np.zeros(d), equi(d, r)) == pytest.approx(exact, abs=2e-7)


def test_trivariate_against_monte_carlo():
    case = next(c for c in ORACLE["special"] if c["name"] == "mvn3_equi_half_origin")
    v = mvgauss.mvn_cdf(case["upper"], case["corr"])
    assert abs(v - case["p"]) < 3 * case["se"]


def test_bivariate_t_against_monte_carlo():
    case = next(c for c in ORACLE["special"] if c["name"] == "mvt2_indep_df5")
    v = mvgauss.mvt_cdf(case["upper"], case["corr"], case["df"])
    assert abs(v - case["p"]) < 3 * case["se"]
    # the shared chi-square scale makes the components dependent
    assert abs(v - stats.t.cdf(0.5, 5) ** 2) > 10 * case["se"]


def test_t_large_df_matches_normal():
    c = equi(2, 0.3)
    assert mvgauss.mvt_cdf([1.0, 1.0], c, 1e6) == pytest.approx(mvgauss.mvn_cdf([1.0, 1.0], c), abs=1e-4)


@pytest.mark.parametrize("seed", range(6))
def test_bivariate_closed_form(seed):
    rng = np.random.default_rng(seed)
    for _ in range(20):
        h, k = rng.uniform(-3, 3, size=2)
        r = rng.uniform(-0.99, 0.99)
        assert mvgauss.mvn_cdf([h, k], equi(2, r)) == pytest.approx(owen_bvn(h, k, r), abs=1e-10)


def test_bivariate_t_orthant():
    # elliptical orthant probability does not depend on df
    for df in (1.0, 2.5, 9.0):
        for r in (-0.6, 0.1, 0.8):
            v = mvgauss.mvt_cdf([0.0, 0.0], equi(2, r), df)
            assert v == pytest.approx(0.25 + np.arcsin(r) / (2 * np.pi), abs=1e-8)


def test_outlying_oracle_case_is_monte_carlo_noise():
    # the one frozen Monte Carlo value more than 3 SE away is a bivariate case
    # whose exact value is available independently
    for c in ORACLE["cases"]:
        if c["kind"] == "mvn" and len(c["upper"]) == 2:
            corr = np.array(c["corr"])
            ex = owen_bvn(c["upper"][0], c["upper"][1], corr[0, 1])
            assert mvgauss.mvn_cdf(c["upper"], corr) == pytest.approx(ex, abs=1e-10)


@pytest.mark.parametrize("d", [2, 3, 4])
def test_limits(d):
    c = random_corr(np.random.default_rng(d), d)
    assert mvgauss.mvn_cdf(np.full(d, np.inf), c) == pytest.approx(1.0, abs=1e-12)
    assert mvgauss.mvn_cdf(np.full(d, 8.0), c) == pytest.approx(1.0, abs=1e-7)
    up = np.full(d, 2.0)
    up[0] = -8.0
    assert mvgauss.mvn_cdf(up, c) < 1e-7


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 4), st.integers(0, 10**6), st.floats(0.05, 2.0))
def test_monotone_in_upper(d, seed, step):
    rng = np.random.default_rng(seed)
    c = random_corr(rng, d)
    a = rng.uniform(-2, 2, size=d)
    b = a.copy()
    b[rng.integers(d)] += step
    assert mvgauss.mvn_cdf(b, c) >= mvgauss.mvn_cdf(a, c) - 1e-7


def test_t_large_df_battery():
    rng = np.random.default_rng(5)
    for d in (2, 3, 4):
        for _ in range(3):
            c = random_corr(rng, d)
            up = rng.uniform(-1, 2, size=d)
            assert mvgauss.mvt_cdf(up, c, 1e6) == pytest.approx(mvgauss.mvn_cdf(up, c), abs=1e-4)


def test_errors():
    with pytest.raises(UnsupportedError):
        mvgauss.mvn_cdf(np.zeros(5), np.eye(5))
    bad = np.array([[1, 0.9, -0.9], [0.9, 1, 0.9], [-0.9, 0.9, 1]])
    with pytest.raises(NumericError):
        mvgauss.mvn_cdf(np.zeros(3), bad)
    with pytest.raises(ValidationError):
        mvgauss.mvt_cdf([0.0, 0.0], np.eye(2), -1.0)


def test_deterministic_qmc():
    c = random_corr(np.random.default_rng(1), 4)
    up = np.array([0.3, -0.2, 1.0, 0.5])
    assert mvgauss.mvn_cdf(up, c) == mvgauss.mvn_cdf(up, c)
    assert mvgauss.mvt_cdf(up, c, 4.0) == mvgauss.mvt_cdf(up, c, 4.0)


def test_partial_corr_hr():
    lam = np.full((3, 3), 0.7)
    assert mvgauss.partial_corr_hr(lam, 0)[0, 1] == pytest.approx(0.5, abs=1e-15)
    lam = np.array([[0, 0.65, 0.90], [0.65, 0, 0.98], [0.90, 0.98, 0]])
    out = mvgauss.partial_corr_hr(lam, 0)
    assert out[0, 1] == pytest.approx((0.65**2 + 0.90**2 - 0.98**2) / (2 * 0.65 * 0.90), abs=1e-15)
    assert out[0, 1] == pytest.approx(0.2325641025641, abs=1e-12)
    assert np.array_equal(out, out.T)
    with pytest.raises(ValidationError):
        mvgauss.partial_corr_hr(np.array([[0, 0.1, 3.0], [0.1, 0, 0.1], [3.0, 0.1, 0]]), 0)


def test_partial_corr_et():
    assert np.array_equal(mvgauss.partial_corr_et(np.eye(4), 2), np.eye(3))
    rho = np.array([[1, 0.52, 0.71], [0.52, 1, 0.52], [0.71, 0.52, 1]])
    v = mvgauss.partial_corr_et(rho, 0)[0, 1]
    assert v == pytest.approx((0.52 - 0.71 * 0.52) / np.sqrt((1 - 0.71**2) * (1 - 0.52**2)), abs=1e-15)
    assert v == pytest.approx(0.25070, abs=1e-5)
    with pytest.raises(ValidationError):
        mvgauss.partial_corr_et(np.array([[1, 1.0, 0.2], [1.0, 1, 0.2], [0.2, 0.2, 1]]), 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.integers(3, 5))
def test_partial_corr_et_psd(seed, d):
    rng = np.random.default_rng(seed)
    c = random_corr(rng, d) * 0.98
    np.fill_diagonal(c, 1.0)
    out = mvgauss.partial_corr_et(c, int(rng.integers(d)))
    assert np.linalg.eigvalsh(out)[0] > -1e-10
