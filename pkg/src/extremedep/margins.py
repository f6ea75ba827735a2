"""Semiparametric margins and the pseudo-polar transform.

Each margin is empirical below a high quantile and generalised Pareto above
it.  Observations are mapped to the unit Frechet scale with
y = -1 / log F(x) and then split into a radius r = sum(y) and an angle
w = y / r on the unit simplex.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special

from .errors import DataError, EstimationError, TransformError, ValidationError

DEFAULT_QUANTILE = 0.7
MIN_OBS = 50
MIN_EXCESS = 20
_XI_LO, _XI_HI = -0.5, 1.0


def _xi_from(eta):
    return _XI_LO + (_XI_HI - _XI_LO) * special.expit(eta)


def _xi_to(xi):
    return special.logit((xi - _XI_LO) / (_XI_HI - _XI_LO))


def gpd_logpdf(z, scale, shape):
    """Log density of the generalised Pareto distribution at excesses z >= 0."""
    z = np.asarray(z, dtype=float) / scale
    if abs(shape) < 1e-10:
        return -np.log(scale) - z
    t = 1.0 + shape * z
    with np.errstate(divide="ignore", invalid="ignore"):
        out = -np.log(scale) - (1.0 / shape + 1.0) * np.log(t)
    return np.where(t > 0, out, -np.inf)


def gpd_sf(z, scale, shape):
    z = np.maximum(np.asarray(z, dtype=float), 0.0) / scale
    if abs(shape) < 1e-10:
        return np.exp(-z)
    t = np.maximum(1.0 + shape * z, 0.0)
    with np.errstate(divide="ignore"):
        return np.where(t > 0, t ** (-1.0 / shape), 0.0)


def gpd_isf(p, scale, shape):
    """Excess with survival probability p."""
    p = np.asarray(p, dtype=float)
    if abs(shape) < 1e-10:
        return -scale * np.log(p)
    return scale * np.expm1(-shape * np.log(p)) / shape


@dataclass(frozen=True)
class MarginalModel:
    """Empirical distribution below `threshold_value`, GPD tail above it.

    The empirical piece takes rank / (n + 1) over the whole sample and is
    rescaled so that it reaches `threshold_quantile` exactly at the
    threshold, which keeps the composite CDF continuous there.
    """

    threshold_quantile: float
    threshold_value: float
    gpd_scale: float
    gpd_shape: float
    below: np.ndarray = field(repr=False)
    n: int = 0
    cov: np.ndarray | None = field(default=None, repr=False)
    name: str = ""

    def __post_init__(self):
        if not (0.0 < self.threshold_quantile < 1.0):
            raise ValidationError("threshold quantile must lie in (0, 1)")
        if not (self.gpd_scale > 0 and np.isfinite(self.gpd_scale)):
            raise ValidationError("GPD scale must be positive")
        below = np.sort(np.asarray(self.below, dtype=float))
        below.setflags(write=False)
        object.__setattr__(self, "below", below)

    @property
    def n_exceed(self):
        return self.n - self.below.size

    def empirical_cdf(self, x):
        x = np.asarray(x, dtype=float)
        c = np.searchsorted(self.below, x, side="right")
        return self.threshold_quantile * c / max(self.below.size, 1)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        q = self.threshold_quantile
        tail = 1.0 - (1.0 - q) * gpd_sf(x - self.threshold_value, self.gpd_scale, self.gpd_shape)
        return np.where(x <= self.threshold_value, self.empirical_cdf(x), tail)

    def sf(self, x):
        """Survival probability; accurate far into the GPD tail."""
        x = np.asarray(x, dtype=float)
        q = self.threshold_quantile
        tail = (1.0 - q) * gpd_sf(x - self.threshold_value, self.gpd_scale, self.gpd_shape)
        return np.where(x <= self.threshold_value, 1.0 - self.empirical_cdf(x), tail)

    def inverse(self, p):
        """Quantile function of the composite distribution."""
        p = np.asarray(p, dtype=float)
        if np.any((p <= 0) | (p >= 1) | np.isnan(p)):
            raise ValidationError("probabilities must lie in (0, 1)")
        q = self.threshold_quantile
        nb = self.below.size
        idx = np.clip(np.ceil(p / q * nb - 1e-9).astype(int) - 1, 0, max(nb - 1, 0))
        low = self.below[idx] if nb else np.full(p.shape, self.threshold_value)
        with np.errstate(divide="ignore", invalid="ignore"):
            high = self.threshold_value + gpd_isf(np.where(p > q, (1.0 - p) / (1.0 - q), 0.5),
                                                  self.gpd_scale, self.gpd_shape)
        out = np.where(p <= q, low, high)
        return float(out) if out.ndim == 0 else out

    def to_frechet(self, x):
        return to_unit_frechet(x, self)

    def from_frechet(self, y):
        """Raw-scale value whose unit Frechet transform is y."""
        y = np.asarray(y, dtype=float)
        if np.any(~(y > 0)):
            raise ValidationError("Frechet values must be positive")
        p_exceed = -np.expm1(-1.0 / y)
        q = self.threshold_quantile
        tail = p_exceed < 1.0 - q
        with np.errstate(divide="ignore", invalid="ignore"):
            high = self.threshold_value + gpd_isf(np.where(tail, p_exceed / (1.0 - q), 0.5),
                                                  self.gpd_scale, self.gpd_shape)
        out = np.where(tail, high, self.inverse(np.clip(np.exp(-1.0 / y), 1e-300, 1 - 1e-16)))
        return float(out) if out.ndim == 0 else out

    def to_dict(self):
        return {
            "name": self.name,
            "threshold_quantile": self.threshold_quantile,
            "threshold_value": self.threshold_value,
            "gpd_scale": self.gpd_scale,
            "gpd_shape": self.gpd_shape,
            "n": self.n,
            "n_exceed": self.n_exceed,
        }


def _gpd_nll(z, scale, shape):
    ll = gpd_logpdf(z, scale, shape)
    return -np.sum(ll) if np.all(np.isfinite(ll)) else np.inf


def fit_gpd(z):
    """Maximum likelihood GPD parameters (scale, shape, covariance) for excesses z > 0."""
    z = np.asarray(z, dtype=float)
    mean, var = z.mean(), z.var()
    xi0 = float(np.clip(0.5 * (1.0 - mean * mean / var), -0.4, 0.9)) if var > 0 else 0.0
    starts = [(np.log(max(mean * (1.0 - xi0), 1e-8)), _xi_to(xi0)),
              (np.log(mean), _xi_to(0.0))]

    def obj(p):
        return _gpd_nll(z, np.exp(p[0]), _xi_from(p[1]))

    best = None
    for s in starts:
        res = optimize.minimize(obj, np.array(s), method="Nelder-Mead",
                                options={"xatol": 1e-10, "fatol": 1e-10, "maxiter": 5000})
        if np.isfinite(res.fun) and (best is None or res.fun < best.fun):
            best = res
    if best is None:
        raise EstimationError("GPD fit failed from every start")
    scale, shape = float(np.exp(best.x[0])), float(_xi_from(best.x[1]))
    # asymptotic covariance of (scale, shape), valid for shape > -1/2
    n = z.size
    cov = (1.0 + shape) / n * np.array([[2.0 * scale**2, scale], [scale, 1.0 + shape]])
    return scale, shape, cov


def fit_gpd_margin(x, threshold_quantile=DEFAULT_QUANTILE, name=""):
    """Fit the empirical-below / GPD-above marginal model to a sample."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if not np.all(np.isfinite(x)):
        raise ValidationError("observations must be finite")
    if not (0.0 < threshold_quantile < 1.0):
        raise ValidationError("threshold quantile must lie in (0, 1)")
    if x.size < MIN_OBS:
        raise EstimationError(f"need at least {MIN_OBS} observations, got {x.size}")
    u = float(np.quantile(x, threshold_quantile))
    exc = x[x > u]
    if exc.size < MIN_EXCESS:
        raise EstimationError(f"need at least {MIN_EXCESS} exceedances of {u:g}, got {exc.size}")
    scale, shape, cov = fit_gpd(exc - u)
    return MarginalModel(threshold_quantile, u, scale, shape, x[x <= u], x.size, cov, name)


def to_unit_frechet(x, m):
    """Unit Frechet transform y = -1 / log F(x) through the composite CDF."""
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    x = x.reshape(-1)
    if np.any(~np.isfinite(x)):
        bad = int(np.flatnonzero(~np.isfinite(x))[0])
        raise TransformError(f"observation {bad} is not finite", index=bad)
    F = m.cdf(x)
    sf = m.sf(x)
    bad = np.flatnonzero((F <= 0.0) | (sf <= 0.0))
    if bad.size:
        i = int(bad[0])
        raise TransformError(
            f"observation {i} (value {x[i]:g}) has CDF {F[i]:g}, outside (0, 1)", index=i)
    # log F = log1p(-sf) keeps precision in the upper tail
    y = -1.0 / np.where(x > m.threshold_value, np.log1p(-sf), np.log(F))
    return float(y[0]) if scalar else y


@dataclass(frozen=True)
class PseudoPolarSample:
    radii: np.ndarray
    angles: np.ndarray
    index: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        r = np.asarray(self.radii, dtype=float).reshape(-1)
        w = np.atleast_2d(np.asarray(self.angles, dtype=float))
        if w.shape[0] != r.size or w.shape[1] < 2:
            raise ValidationError("radii and angles disagree in length, or d < 2")
        if np.any(~(r > 0)):
            raise ValidationError("radii must be positive")
        if np.any(w < 0) or np.any(np.abs(w.sum(axis=1) - 1.0) > 1e-12):
            raise ValidationError("angles must lie on the unit simplex")
        idx = np.arange(r.size) if self.index is None else np.asarray(self.index, dtype=int)
        object.__setattr__(self, "radii", r)
        object.__setattr__(self, "angles", w)
        object.__setattr__(self, "index", idx)

    @property
    def d(self):
        return self.angles.shape[1]

    @property
    def n(self):
        return self.radii.size

    def points(self):
        return self.radii[:, None] * self.angles


def to_pseudo_polar(y):
    """Radii r = sum(y) and angles w = y / r for an n x d matrix of positive values."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if y.shape[1] < 2:
        raise ValidationError("need at least two columns")
    if np.any(~(y > 0)) or np.any(~np.isfinite(y)):
        raise ValidationError("pseudo-polar transform needs positive finite entries")
    r = y.sum(axis=1)
    return PseudoPolarSample(r, y / r[:, None])


def select_extremes(s, k):
    """The `k` rows with largest radius, in decreasing radius order.

    Ties keep the earlier row first.
    """
    k = int(k)
    if k < 1 or k > s.n:
        raise ValidationError(f"k must lie in 1..{s.n}, got {k}")
    order = np.argsort(-s.radii, kind="stable")[:k]
    return PseudoPolarSample(s.radii[order], s.angles[order], s.index[order])


def fit_margins(X, threshold_quantile=DEFAULT_QUANTILE, names=None):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    names = names or [f"x{j + 1}" for j in range(X.shape[1])]
    return [fit_gpd_margin(X[:, j], threshold_quantile, names[j]) for j in range(X.shape[1])]


def transform_data(X, margins):
    """Column-wise unit Frechet transform; errors name the row and column."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != len(margins):
        raise DataError(f"{X.shape[1]} columns but {len(margins)} margins")
    out = np.empty_like(X)
    for j, m in enumerate(margins):
        try:
            out[:, j] = to_unit_frechet(X[:, j], m)
        except TransformError as e:
            raise TransformError(f"column {j + 1}: {e}", index=e.index) from e
    return out
