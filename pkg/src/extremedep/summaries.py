"""Dependence summaries and tail probability approximations.

For unit Frechet Y and high thresholds y,
pr(Y_j > y_j for some j) ~ V(y) and pr(Y_j > y_j for all j) ~ R(y).
Raw-scale thresholds are mapped through fitted margins first.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .errors import DomainError, ValidationError
from .margins import to_unit_frechet

MODES = ("union", "intersection")


class ApproximationWarning(UserWarning):
    """Thresholds are too low for the tail approximations to be reliable."""


@dataclass(frozen=True)
class FailureEvent:
    """Exceedance event on the unit Frechet scale.

    NaN thresholds mark coordinates that take no part in the event.
    `below_fit_range` flags raw thresholds under the marginal GPD threshold.
    """

    thresholds: np.ndarray
    mode: str = "intersection"
    below_fit_range: np.ndarray = field(default=None, repr=False)
    raw: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        y = np.asarray(self.thresholds, dtype=float).reshape(-1)
        if self.mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}")
        used = ~np.isnan(y)
        if not used.any():
            raise ValidationError("event constrains no coordinate")
        if np.any(~(y[used] > 0)):
            raise ValidationError("event thresholds must be positive")
        object.__setattr__(self, "thresholds", y)
        if self.below_fit_range is None:
            object.__setattr__(self, "below_fit_range", np.zeros(y.size, dtype=bool))

    @classmethod
    def from_raw(cls, raw, margins, mode="intersection"):
        raw = np.asarray(raw, dtype=float).reshape(-1)
        if raw.size != len(margins):
            raise ValidationError(f"{raw.size} thresholds for {len(margins)} margins")
        y = np.full(raw.size, np.nan)
        low = np.zeros(raw.size, dtype=bool)
        for j, (x, m) in enumerate(zip(raw, margins)):
            if np.isnan(x):
                continue
            y[j] = to_unit_frechet(x, m)
            low[j] = x < m.threshold_value
        return cls(y, mode, low, raw)

    @property
    def d(self):
        return self.thresholds.size

    def exponent_args(self):
        return np.where(np.isnan(self.thresholds), np.inf, self.thresholds)

    def tail_args(self):
        return np.where(np.isnan(self.thresholds), 0.0, self.thresholds)


def extremal_coefficient(m, tol=1e-8):
    """theta = V(1, ..., 1), between 1 (complete dependence) and d."""
    return float(m.exponent(np.ones(m.d), tol=tol))


def chi_coefficient(m, tol=1e-8):
    """chi = R(1, ..., 1), between 0 (independence) and 1."""
    return float(m.tail_dependence(np.ones(m.d), tol=tol))


def _check_regime(y, value, what):
    y = y[np.isfinite(y) & (y > 0)]
    if y.sum() < 2 * len(y):
        warnings.warn(f"thresholds {y} are low for the {what} approximation",
                      ApproximationWarning, stacklevel=3)
    if value > 0.5:
        warnings.warn(f"{what} approximation {value:.4g} exceeds 0.5; clipped to [0, 1]",
                      ApproximationWarning, stacklevel=3)
    return float(min(max(value, 0.0), 1.0))


def prob_union_exceed(m, y, tol=1e-8):
    """pr(Y_j > y_j for some j) ~ V(y); infinite entries drop out."""
    y = np.asarray(y, dtype=float)
    return _check_regime(y, float(m.exponent(y, tol=tol)), "union")


def prob_failure_region(m, y, method="auto", tol=1e-8):
    """pr(Y_j > y_j for all j) ~ R(y); zero entries leave a coordinate free.

    The Husler-Reiss model uses its closed form (a sum of multivariate
    normal survival probabilities) unless `method` is "quadrature".
    """
    y = np.asarray(y, dtype=float)
    return _check_regime(y, float(m.tail_dependence(y, method=method, tol=tol)), "failure-region")


def event_probability(m, event, method="auto"):
    if event.d != m.d:
        raise ValidationError(f"event has {event.d} coordinates, model has {m.d}")
    if event.mode == "union":
        return prob_union_exceed(m, event.exponent_args())
    return prob_failure_region(m, event.tail_args(), method=method)


def _root_level(fun, p, lo_value):
    """Solve fun(t) = p for t > 0 where fun decreases from lo_value to 0."""
    if not (0.0 < p < lo_value):
        raise DomainError(
            f"probability {p:g} is not attainable; the range is (0, {lo_value:.6g})",
            lower=0.0, upper=lo_value)
    g = lambda s: np.log(fun(np.exp(s))) - np.log(p)  # noqa: E731
    a = b = -np.log(p)
    ga = g(a)
    step = 1.0
    while ga <= 0:
        a -= step
        step *= 2
        ga = g(a)
        if a < -700:
            raise DomainError(f"no root found below level {np.exp(a):g}", 0.0, lo_value)
    gb = g(b)
    step = 1.0
    while gb >= 0:
        b += step
        step *= 2
        gb = g(b)
        if b > 700:
            raise DomainError(f"no root found above level {np.exp(b):g}", 0.0, lo_value)
    s = optimize.brentq(g, a, b, xtol=1e-14, rtol=1e-12, maxiter=500)
    return float(np.exp(s))


def joint_return_level(m, p, free, fixed, n_points=60, tol=1e-10):
    """Levels y_J solving p = pr(Y_j > y_j, j in J; Y_i > x_i, i not in J).

    `fixed` holds unit Frechet thresholds for every coordinate; entries in
    `free` are ignored and zero entries leave a coordinate unconstrained.
    One free index returns the level; two return an (n_points, 2) polyline
    of the contour, one point per log-spaced ratio y_i / y_j.
    """
    free = [int(j) for j in np.atleast_1d(free)]
    x = np.array(fixed, dtype=float).reshape(-1)
    if x.size != m.d:
        raise ValidationError(f"need {m.d} fixed thresholds, got {x.size}")
    if len(free) not in (1, 2) or len(set(free)) != len(free) or any(j < 0 or j >= m.d for j in free):
        raise ValidationError("free set must hold one or two distinct coordinates")
    x[free] = 0.0
    if np.any(np.isnan(x)) or np.any(x < 0):
        raise ValidationError("fixed thresholds must be nonnegative")
    if not (0.0 < p < 1.0):
        raise ValidationError("p must lie in (0, 1)")
    others = [i for i in range(m.d) if i not in free]

    def R(z):
        return float(m.tail_dependence(z, tol=tol))

    # with every free coordinate unconstrained the probability is largest
    top = R(x) if np.any(x[others] > 0) else np.inf

    if len(free) == 1:
        j = free[0]

        def f1(t):
            z = x.copy()
            z[j] = t
            return R(z)

        return _root_level(f1, p, top)

    i, j = free
    ends = []
    for a, b in ((i, j), (j, i)):
        def fa(t, a=a):
            z = x.copy()
            z[a] = t
            return R(z)

        ends.append(_root_level(fa, p, top))
    centre = 0.5 * (np.log(ends[0]) - np.log(ends[1]))
    ratios = centre + np.linspace(-4.0, 4.0, n_points)
    pts = np.empty((n_points, 2))
    for k, lr in enumerate(ratios):
        u = np.array([np.exp(0.5 * lr), np.exp(-0.5 * lr)])

        def fr(s, u=u):
            z = x.copy()
            z[[i, j]] = s * u
            return R(z)

        pts[k] = _root_level(fr, p, top) * u
    return pts


def joint_return_level_raw(m, margins, p, free, fixed_raw, n_points=60):
    """Raw-scale version: thresholds and levels in data units (NaN = unconstrained)."""
    fixed_raw = np.asarray(fixed_raw, dtype=float).reshape(-1)
    x = np.zeros(m.d)
    for k, (v, mm) in enumerate(zip(fixed_raw, margins)):
        if k in np.atleast_1d(free) or np.isnan(v):
            continue
        x[k] = to_unit_frechet(v, mm)
    out = joint_return_level(m, p, free, x, n_points=n_points)
    free = list(np.atleast_1d(free))
    if len(free) == 1:
        return float(margins[free[0]].from_frechet(out))
    return np.column_stack([margins[free[0]].from_frechet(out[:, 0]),
                            margins[free[1]].from_frechet(out[:, 1])])
