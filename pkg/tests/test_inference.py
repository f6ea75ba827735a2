import numpy as np
import pytest

from extremedep import HuslerReiss, TiltedDirichlet, ExtremalT
from extremedep.errors import ValidationError
from extremedep.inference import (FitResult, FitWarning, Transform, _objective, _tic, bic,
                                  fit_mle, log_likelihood, nudge, per_obs_scores, select_model,
                                  tic)

LAM = np.array([[0, 0.65, 0.9], [0.65, 0, 0.98], [0.9, 0.98, 0]])


@pytest.fixture(scope="module")
def hr_fit():
    W = HuslerReiss(LAM).sample(2000, seed=101)
    return W, fit_mle("HR", W, n_starts=3)


@pytest.fixture(scope="module")
def td_fit():
    W = TiltedDirichlet([1.5, 2.5, 0.8]).sample(5000, seed=102)
    return W, fit_mle("TD", W, n_starts=2)


def test_single_point_loglik():
    m = TiltedDirichlet([2.0, 2.0, 2.0])
    assert log_likelihood(m, np.full((1, 3), 1 / 3)) == pytest.approx(np.log(40 / 9), abs=1e-12)
    assert log_likelihood(m, np.full((1, 3), 1 / 3)) == pytest.approx(1.4917, abs=1e-4)


def test_loglik_additive():
    m = HuslerReiss(LAM)
    W = m.sample(60, seed=3)
    assert log_likelihood(m, W) == pytest.approx(
        log_likelihood(m, W[:25]) + log_likelihood(m, W[25:]), rel=1e-12)


def test_boundary_points_nudged():
    W = np.array([[0.0, 0.5, 0.5], [0.2, 0.3, 0.5]])
    out = nudge(W)
    assert out.min() > 0
    assert np.allclose(out.sum(axis=1), 1.0)
    m = TiltedDirichlet([1.0, 1.0, 1.0])
    with pytest.raises(ValidationError):
        log_likelihood(m, W)
    assert np.isfinite(log_likelihood(m, out))


def test_bic_values():
    assert bic(234.51, 3, 100) == pytest.approx(-449.69, abs=0.01)
    assert bic(200.84, 3, 100) == pytest.approx(-382.35, abs=0.01)
    assert bic(0.0, 0, 100) == 0.0
    with pytest.raises(ValidationError):
        bic(1.0, 1, 0)


def test_tic_equals_aic_when_k_equals_j():
    J = np.array([[2.0, 0.3], [0.3, 1.0]])
    assert _tic(10.0, J, J) == pytest.approx(-2 * (10.0 - 2), abs=1e-12)


def test_hr_recovery(hr_fit):
    _, fit = hr_fit
    truth = LAM[np.triu_indices(3, 1)]
    assert fit.converged
    assert np.all(np.abs(fit.theta_hat - truth) < 3 * fit.std_errors)


def test_fit_result_invariants(hr_fit):
    _, fit = hr_fit
    cov = fit.sandwich_cov
    assert np.allclose(cov, cov.T, atol=1e-12)
    assert np.linalg.eigvalsh(cov)[0] > -1e-8
    assert np.array_equal(fit.std_errors, np.sqrt(np.diag(cov)))
    assert fit.tic == pytest.approx(tic(fit), rel=1e-12)
    assert fit.bic == pytest.approx(bic(fit.loglik, 3, 2000), rel=1e-12)
    assert np.isfinite(fit.loglik)
    d = fit.to_dict()
    assert d["family"] == "HR" and len(d["estimates"]) == 3


def test_scores_match_likelihood_gradient(hr_fit):
    W, fit = hr_fit
    tr = Transform(fit.model)
    obj = _objective(tr, W)
    rng = np.random.default_rng(7)
    for _ in range(5):
        z = fit.z_hat + rng.normal(0, 0.1, size=3)
        g = per_obs_scores(tr, z, W).sum(axis=0)
        h = 1e-4
        ref = np.array([(obj(z - h * e) - obj(z + h * e)) / (2 * h) for e in np.eye(3)])
        assert np.allclose(g, ref, rtol=1e-4, atol=1e-4 * np.abs(ref).max())


def test_information_equality(td_fit):
    _, fit = td_fit
    ratio = np.linalg.norm(fit.K - fit.J) / np.linalg.norm(fit.J)
    assert ratio < 0.15


def test_row_order_invariance():
    W = TiltedDirichlet([1.5, 2.5, 0.8]).sample(300, seed=5)
    a = fit_mle("TD", W, n_starts=1)
    b = fit_mle("TD", W[np.random.default_rng(0).permutation(300)], n_starts=1)
    assert np.allclose(a.theta_hat, b.theta_hat, rtol=1e-5)
    assert a.loglik == pytest.approx(b.loglik, rel=1e-10)
    assert a.data_id == b.data_id


def test_et_fit_flags_and_bounds():
    rho = np.array([[1, 0.6, 0.4], [0.6, 1, 0.5], [0.4, 0.5, 1]])
    W = ExtremalT(rho, 4.0).sample(400, seed=8)
    fit = fit_mle("ET", W, n_starts=1)
    assert 0.5 <= fit.model.nu <= 50
    assert isinstance(fit.flags, list)


def test_few_observations_warn():
    W = HuslerReiss(LAM).sample(12, seed=2)
    with pytest.warns(FitWarning):
        fit_mle("HR", W, n_starts=1)


def test_select_model(hr_fit):
    W, fit = hr_fit
    td = fit_mle("TD", W, n_starts=1)
    ranked = select_model([td, fit], "TIC")
    assert ranked[0].family == "HR"
    assert select_model([td, fit], "bic")[0].family == "HR"
    with pytest.raises(ValidationError):
        select_model([fit])
    other = fit_mle("TD", W[:500], n_starts=1)
    with pytest.raises(ValidationError):
        select_model([fit, other])
    with pytest.raises(ValidationError):
        select_model([td, fit], "AIC")


def test_select_model_tie_break():
    base = dict(theta_hat=np.zeros(1), loglik=0.0, J=np.eye(1), K=np.eye(1),
                sandwich_cov=np.eye(1), std_errors=np.ones(1), bic=1.0, m=10,
                converged=True, data_id="x")
    big = FitResult(model=HuslerReiss(LAM), tic=5.0, **base)
    small = FitResult(model=TiltedDirichlet([1.0, 1.0]), tic=5.0, **base)
    assert select_model([big, small])[0] is small
