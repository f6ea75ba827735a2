"""Maximum approximate-likelihood fitting and model selection.

The log-likelihood of angles w_1..w_m of the largest observations is
sum_i log h(w_i; theta).  Estimates come from multistart Nelder-Mead on an
unconstrained parameterisation; uncertainty from the sandwich
J^-1 K J^-1 / m with finite-difference sensitivity J and variability K.
"""

from __future__ import annotations

import hashlib
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special

from . import models
from .errors import EstimationError, ExtremeDepError, NumericError, ValidationError

NUDGE = 1e-10
NU_BOUNDS = (0.5, 50.0)
DEFAULT_STARTS = 10
DEFAULT_SEED = 20140101


class FitWarning(UserWarning):
    pass


def nudge(W, eps=NUDGE):
    """Move coordinates below `eps` up to `eps` and renormalise rows."""
    W = np.atleast_2d(np.asarray(W, dtype=float))
    if np.any(~np.isfinite(W)) or np.any(W < 0):
        raise ValidationError("angles must be finite and nonnegative")
    W = np.maximum(W, eps)
    return W / W.sum(axis=1, keepdims=True)


def data_fingerprint(W):
    """Hash of the rows as a set, so reordering does not change it."""
    W = np.atleast_2d(np.asarray(W, dtype=float))
    W = np.ascontiguousarray(W[np.lexsort(W.T[::-1])])
    return hashlib.sha1(W.tobytes() + str(W.shape).encode()).hexdigest()[:16]


def log_likelihood(model, W):
    """sum_i log h(w_i); -inf when any density vanishes."""
    W = np.atleast_2d(np.asarray(W, dtype=float))
    if W.shape[0] == 0:
        return 0.0
    ll = model.log_density(W)
    if np.any(np.isnan(ll)):
        raise NumericError("log-density evaluated to NaN")
    return float(np.sum(ll)) if np.all(ll > -np.inf) else -np.inf


# -- optimisation scale --------------------------------------------------------


class Transform:
    """Unconstrained coordinates used by the optimiser for one model shape.

    Matches the model's own `to_free` / `from_free` except for the
    extremal-t degrees of freedom, which are confined to `NU_BOUNDS` through
    a logistic map.
    """

    def __init__(self, template):
        self.template = template
        self.bounded_nu = template.family == "ET"

    def to_z(self, model):
        z = model.to_free().astype(float)
        if self.bounded_nu:
            lo, hi = NU_BOUNDS
            nu = min(max(model.nu, lo * (1 + 1e-9)), hi * (1 - 1e-9))
            z[-1] = special.logit((nu - lo) / (hi - lo))
        return z

    def from_z(self, z):
        z = np.asarray(z, dtype=float).copy()
        if self.bounded_nu:
            lo, hi = NU_BOUNDS
            z[-1] = math.log(lo + (hi - lo) * special.expit(z[-1]))
        return self.template.from_free(z)

    def theta(self, z):
        return self.from_z(z).params()


def default_start(family, d, W=None):
    """A moment-informed starting model for each family."""
    family = models.normalize_family(family)
    W = None if W is None or len(W) < 2 else np.asarray(W)
    if family == "TD":
        if W is None:
            return models.TiltedDirichlet(np.ones(d))
        mean, var = W.mean(axis=0), W.var(axis=0)
        k = np.median(mean * (1 - mean) / np.maximum(var, 1e-12) - 1.0)
        return models.TiltedDirichlet(np.clip(k * mean, 0.05, 50.0))
    if family == "HR":
        if W is None:
            return models.HuslerReiss(np.ones(d * (d - 1) // 2))
        lw = np.log(W)
        lam = [0.5 * np.std(lw[:, i] - lw[:, j]) for i, j in models.pairs(d)]
        return models.HuslerReiss(np.clip(lam, 0.05, 5.0))
    if family == "ET":
        return models.ExtremalT(np.full(d * (d - 1) // 2, 0.3), 3.0)
    if family == "PB":
        return models.PairwiseBeta(1.0, np.ones(d * (d - 1) // 2))
    return models.AsymmetricLogistic.exchangeable(2.0, np.full(d, 0.5))


@dataclass
class FitResult:
    model: models.AngularModel
    theta_hat: np.ndarray
    loglik: float
    J: np.ndarray
    K: np.ndarray
    sandwich_cov: np.ndarray
    std_errors: np.ndarray
    tic: float
    bic: float
    m: int
    converged: bool
    data_id: str = ""
    z_hat: np.ndarray = None
    cov_ok: bool = True
    flags: list = field(default_factory=list)
    trace: list = field(default_factory=list)

    @property
    def family(self):
        return self.model.family

    @property
    def n_params(self):
        return self.model.n_params

    def to_dict(self):
        return {
            "family": self.model.family,
            "family_name": models.FAMILY_NAMES[self.model.family],
            "d": self.model.d,
            "parameters": self.model.param_names(),
            "estimates": _floats(self.theta_hat),
            "std_errors": _floats(self.std_errors),
            "loglik": _float(self.loglik),
            "tic": _float(self.tic),
            "bic": _float(self.bic),
            "m": self.m,
            "covariance": [_floats(r) for r in self.sandwich_cov],
            "converged": bool(self.converged),
            "covariance_ok": bool(self.cov_ok),
            "flags": list(self.flags),
            "starts": self.trace,
        }


def _float(x):
    x = float(x)
    return x if np.isfinite(x) else None


def _floats(v):
    return [_float(x) for x in np.asarray(v, dtype=float).reshape(-1)]


def bic(loglik, p, m):
    """-2 l + p (log m + log 2 pi)."""
    if m < 1:
        raise ValidationError("BIC needs at least one observation")
    return -2.0 * loglik + p * (math.log(m) + math.log(2.0 * math.pi))


def tic(fit):
    """-2 [l - tr(K J^-1)]."""
    return _tic(fit.loglik, fit.J, fit.K)


def _tic(loglik, J, K):
    try:
        Jinv = np.linalg.inv(J)
    except np.linalg.LinAlgError:
        raise NumericError("sensitivity matrix is singular") from None
    if not np.all(np.isfinite(Jinv)) or np.linalg.cond(J) > 1e14:
        raise NumericError("sensitivity matrix is singular")
    return -2.0 * (loglik - float(np.trace(K @ Jinv)))


# -- derivatives ------------------------------------------------------------------


def _steps(z):
    return 1e-5 * np.maximum(1.0, np.abs(z))


def per_obs_scores(tr, z, W):
    """Central-difference gradients of log h(w_i) in z, one row per observation."""
    h = _steps(z)
    G = np.empty((len(W), len(z)))
    for k in range(len(z)):
        zp, zm = z.copy(), z.copy()
        zp[k] += h[k]
        zm[k] -= h[k]
        G[:, k] = (tr.from_z(zp).log_density(W) - tr.from_z(zm).log_density(W)) / (2 * h[k])
    return G


def hessian(fun, z):
    """Symmetrised central-difference Hessian of a scalar function."""
    p = len(z)
    h = _steps(z)
    H = np.empty((p, p))
    f0 = fun(z)
    for a in range(p):
        for b in range(a, p):
            if a == b:
                zp, zm = z.copy(), z.copy()
                zp[a] += h[a]
                zm[a] -= h[a]
                H[a, a] = (fun(zp) - 2 * f0 + fun(zm)) / h[a] ** 2
            else:
                vals = []
                for sa, sb in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
                    zz = z.copy()
                    zz[a] += sa * h[a]
                    zz[b] += sb * h[b]
                    vals.append(fun(zz))
                H[a, b] = H[b, a] = (vals[0] - vals[1] - vals[2] + vals[3]) / (4 * h[a] * h[b])
    return 0.5 * (H + H.T)


def _jacobian_theta(tr, z):
    h = _steps(z)
    cols = []
    for k in range(len(z)):
        zp, zm = z.copy(), z.copy()
        zp[k] += h[k]
        zm[k] -= h[k]
        cols.append((tr.theta(zp) - tr.theta(zm)) / (2 * h[k]))
    return np.column_stack(cols)


# -- fitting ----------------------------------------------------------------------


def _objective(tr, W):
    def f(z):
        try:
            ll = log_likelihood(tr.from_z(z), W)
        except (ExtremeDepError, FloatingPointError, OverflowError, ValueError):
            return np.inf
        return -ll if np.isfinite(ll) else np.inf

    return f


def fit_mle(family, W, d=None, n_starts=DEFAULT_STARTS, seed=DEFAULT_SEED, start=None,
            maxiter=5000, template=None):
    """Maximise the approximate log-likelihood over one family.

    `template` fixes the model shape (e.g. an asymmetric logistic with a
    chosen component set); otherwise the family default is used.  The first
    start is moment-informed, the rest perturb it at random on the
    unconstrained scale.
    """
    family = models.normalize_family(family)
    W = nudge(W)
    m, dd = W.shape
    d = dd if d is None else d
    if dd != d:
        raise ValidationError(f"angles have {dd} columns, expected {d}")
    base = template if template is not None else default_start(family, d, W)
    if start is not None:
        base = base.with_params(start)
    p = base.n_params
    if m < 5 * p:
        warnings.warn(f"only {m} observations for {p} parameters", FitWarning, stacklevel=2)
    tr = Transform(base)
    obj = _objective(tr, W)
    rng = np.random.default_rng(seed)
    z0 = tr.to_z(base)
    starts = [z0] + [z0 + rng.normal(0.0, 0.5, size=p) for _ in range(max(n_starts, 1) - 1)]
    best = None
    trace = []
    for k, zs in enumerate(starts):
        info = {"start": k}
        try:
            if not np.isfinite(obj(zs)):
                raise EstimationError("infeasible start")
            res = optimize.minimize(obj, zs, method="Nelder-Mead",
                                    options={"xatol": 1e-8, "fatol": 1e-8, "maxiter": maxiter,
                                             "maxfev": 4 * maxiter, "adaptive": p > 3})
            # a restart from the optimum guards against simplex collapse
            res2 = optimize.minimize(obj, res.x, method="Nelder-Mead",
                                     options={"xatol": 1e-8, "fatol": 1e-8, "maxiter": maxiter,
                                              "maxfev": 4 * maxiter, "adaptive": p > 3})
            if res2.fun <= res.fun:
                res = res2
            info.update(loglik=_float(-res.fun), converged=bool(res.success), nfev=int(res.nfev))
            if np.isfinite(res.fun) and (best is None or res.fun < best[0].fun - 1e-12):
                best = (res, k)
        except (ExtremeDepError, FloatingPointError, ValueError) as exc:
            info.update(loglik=None, converged=False, error=str(exc))
        trace.append(info)
    if best is None:
        raise EstimationError(f"all {len(starts)} starts failed for {family}", diagnostics=trace)
    res, _ = best
    return _finish(tr, res.x, W, bool(res.success), trace)


def _finish(tr, z, W, converged, trace):
    m = len(W)
    model = tr.from_z(z)
    theta = model.params()
    ll = log_likelihood(model, W)
    p = len(z)
    flags = []
    if tr.bounded_nu:
        lo, hi = NU_BOUNDS
        if model.nu < lo * 1.001 or model.nu > hi * 0.999:
            flags.append("nu_at_bound")
    obj = _objective(tr, W)
    J = hessian(lambda zz: obj(zz) / m, z)
    G = per_obs_scores(tr, z, W)
    K = G.T @ G / m
    cov_ok = True
    try:
        if not np.all(np.isfinite(J)):
            raise np.linalg.LinAlgError
        Jinv = np.linalg.inv(J)
        if np.linalg.cond(J) > 1e14:
            raise np.linalg.LinAlgError
        cov_z = Jinv @ K @ Jinv / m
        Gt = _jacobian_theta(tr, z)
        cov = Gt @ cov_z @ Gt.T
        cov = 0.5 * (cov + cov.T)
        t = -2.0 * (ll - float(np.trace(K @ Jinv)))
    except np.linalg.LinAlgError:
        cov_ok = False
        flags.append("singular_sensitivity")
        cov = np.full((p, p), np.nan)
        t = np.nan
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None)) if cov_ok else np.full(p, np.nan)
    return FitResult(
        model=model, theta_hat=theta, loglik=ll, J=J, K=K, sandwich_cov=cov, std_errors=se,
        tic=t, bic=bic(ll, p, m), m=m, converged=converged, data_id=data_fingerprint(W),
        z_hat=np.asarray(z, dtype=float), cov_ok=cov_ok, flags=flags, trace=trace)


def select_model(fits, criterion="TIC"):
    """Fits sorted by TIC or BIC, smaller first; ties go to fewer parameters."""
    fits = list(fits)
    if len(fits) < 2:
        raise ValidationError("model selection needs at least two fits")
    crit = criterion.upper()
    if crit not in ("TIC", "BIC"):
        raise ValidationError("criterion must be TIC or BIC")
    ids = {(f.data_id, f.m) for f in fits}
    if len(ids) != 1:
        raise ValidationError("fits were computed on different data")

    def key(f):
        v = f.tic if crit == "TIC" else f.bic
        v = v if np.isfinite(v) else np.inf
        return (v, f.n_params)

    return sorted(fits, key=key)
