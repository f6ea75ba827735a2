"""Integration and sampling on the unit simplex.

Integrals are taken with respect to Lebesgue measure in the first d - 1
coordinates, so the simplex itself has volume 1/(d-1)!.

Angular densities are frequently unbounded along faces and vertices
(w_j^(alpha_j - 1) with alpha_j < 1 and similar), which defeats fixed-order
cubature with h-refinement.  Each piece of the domain is therefore mapped
to the unit cube by stick-breaking and integrated with a product
tanh-sinh rule whose nodes approach the boundary double-exponentially.
Integrands with a kink along the loci w_i / y_i = w_j / y_j (the max and
min kernels of exponent and tail-dependence functions) are first split
into the d! sub-simplices on which the ordering of w_j / y_j is fixed.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from ._tanhsinh import T_MAX, log_nodes01
from .errors import QuadratureError, UnsupportedError, ValidationError

_CHUNK = 2**17
_LOG_FLOOR = -690.0
_MAX_LEVEL = {2: 9, 3: 6, 4: 3}


@dataclass(frozen=True)
class QuadResult:
    value: float | np.ndarray
    error: float
    level: int
    evaluations: int


def simplex_volume(d):
    return 1.0 / math.factorial(d - 1)


def kink_subsimplices(y):
    """Vertex sets of the pieces on which the ordering of w_j / y_j is constant.

    Coordinates with infinite y_j take no part in the ordering.  Over the
    finite set T, piece pi has vertices c_{pi[:1]}, ..., c_{pi}, where c_U
    is y restricted to U and normalised to sum to one; the vertices e_j of
    the excluded coordinates complete each piece.
    """
    y = np.asarray(y, dtype=float)
    d = len(y)
    active = [j for j in range(d) if np.isfinite(y[j])]
    excluded = [j for j in range(d) if not np.isfinite(y[j])]
    pieces = []
    for perm in itertools.permutations(active):
        verts = np.zeros((d, d))
        for k in range(len(perm)):
            idx = list(perm[: k + 1])
            verts[k, idx] = y[idx] / y[idx].sum()
        for k, j in enumerate(excluded):
            verts[len(perm) + k, j] = 1.0
        pieces.append(verts)
    return pieces


def _cube_grid(m, level, t_max):
    """Log barycentric weights and log Jacobian-weights on the (m)-cube."""
    lx, lxc, lw = log_nodes01(level, t_max)
    grids = np.meshgrid(*([np.arange(len(lx))] * m), indexing="ij")
    idx = [g.ravel() for g in grids]
    n = idx[0].size
    loga = np.empty((n, m + 1))
    logw = np.zeros(n)
    rest = np.zeros(n)  # log of prod_{i<k} (1 - x_i)
    for k in range(m):
        loga[:, k] = rest + lx[idx[k]]
        logw += lw[idx[k]] + (m - 1 - k) * lxc[idx[k]]
        rest = rest + lxc[idx[k]]
    loga[:, m] = rest
    return loga, logw


def _integrate_piece(f, verts, level, log_integrand, log_points, t_max):
    d = verts.shape[0]
    m = d - 1
    jac = abs(np.linalg.det((verts[:-1, :m] - verts[-1, :m]))) if m > 0 else 1.0
    if jac == 0.0:
        return 0.0, 0
    loga, logw = _cube_grid(m, level, t_max)
    identity = np.array_equal(verts, np.eye(d))
    with np.errstate(divide="ignore"):
        logv = np.log(verts)
    total = 0.0
    for start in range(0, loga.shape[0], _CHUNK):
        la = loga[start:start + _CHUNK]
        if log_points:
            if identity:
                pts = la
            else:
                with np.errstate(divide="ignore"):
                    pts = np.log(np.exp(la) @ verts)
                # rows with coordinates below the double range take the log path
                deep = np.flatnonzero(np.min(pts, axis=1) < _LOG_FLOOR + 50.0)
                if deep.size:
                    pts[deep] = logsumexp(la[deep][:, :, None] + logv[None, :, :], axis=1)
            pts = pts - logsumexp(pts, axis=1)[:, None]
        else:
            # products of several boundary nodes can underflow; floor them at a
            # level where any integrable singularity contributes nothing
            a = np.exp(np.maximum(la, _LOG_FLOOR))
            pts = a @ verts
            # renormalise to remove rounding drift from the simplex
            pts = pts / pts.sum(axis=1, keepdims=True)
        lw = logw[start:start + _CHUNK]
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            vals = np.asarray(f(pts), dtype=float)
        if vals.ndim == 2:
            lw = lw[:, None]
        if log_integrand:
            terms = np.exp(vals + lw)
        else:
            with np.errstate(invalid="ignore"):
                terms = vals * np.exp(lw)
        terms = np.where(np.isnan(terms), 0.0, terms)
        total = total + terms.sum(axis=0)
    return jac * total, loga.shape[0]


def integrate_simplex(f, d, tol=1e-6, *, kink=None, log_integrand=False,
                      log_points=False, t_max=T_MAX, start_level=None, max_level=None,
                      rtol=0.0):
    """Integrate a vectorised function over the open unit simplex.

    Parameters
    ----------
    f : callable
        Maps an (n, d) array of simplex points to n values, or to an (n, q)
        array for a vector integrand (log values when ``log_integrand`` is
        true).
    d : int
        Ambient dimension, 2 to 4.
    tol : float
        Absolute error target; ``rtol`` adds a relative component.
    kink : array_like, optional
        Positive vector y.  The domain is split along w_i / y_i = w_j / y_j;
        infinite entries are left out of the split.
    log_points : bool
        Pass log-coordinates log w to `f` instead of w.  Combined with a
        `t_max` above the default this resolves singularities at the
        boundary that carry mass below the smallest double.

    Raises `QuadratureError` carrying the best estimate when the level
    budget is exhausted before the target is met.
    """
    if d not in _MAX_LEVEL:
        raise UnsupportedError(f"simplex quadrature supports d in 2..4, got {d}")
    if kink is not None:
        kink = np.asarray(kink, dtype=float)
        if kink.shape != (d,) or np.any(~(kink > 0)) or not np.any(np.isfinite(kink)):
            raise ValidationError("kink vector must be positive with a finite entry")
        pieces = kink_subsimplices(kink)
    else:
        pieces = [np.eye(d)]
    lo = start_level if start_level is not None else {2: 3, 3: 1, 4: 0}[d]
    hi = max_level if max_level is not None else _MAX_LEVEL[d]
    prev = None
    last_diff = None
    evals = 0
    est = err = np.nan
    for level in range(lo, hi + 1):
        est = 0.0
        for verts in pieces:
            v, n = _integrate_piece(f, verts, level, log_integrand, log_points, t_max)
            est = est + v
            evals += n
        if prev is not None:
            diff = float(np.max(np.abs(est - prev)))
            err = diff
            # double-exponential rules roughly double their correct digits per
            # level; once the differences shrink, diff^2 / previous diff
            # estimates the error of the newest level
            if last_diff is not None and 0.0 < diff < last_diff:
                err = max(diff * diff / last_diff, 1e-15 * float(np.max(np.abs(est))))
            if err <= tol + rtol * float(np.max(np.abs(est))):
                return QuadResult(_scalar(est), err, level, evals)
            last_diff = diff
        prev = est
    raise QuadratureError(
        f"simplex quadrature did not reach tolerance {tol:g} "
        f"(estimate {np.max(est):.10g}, error {err:.3g})",
        estimate=_scalar(est),
        error=err,
    )


def logsumexp(x, axis):
    """log(sum(exp(x))) along `axis`; all -inf slices give -inf."""
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis)


def _scalar(x):
    x = np.asarray(x, dtype=float)
    return float(x) if x.ndim == 0 else x


# ----------------------------------------------------------------------------
# sampling helpers


def uniform_simplex(n, d, rng):
    return rng.dirichlet(np.ones(d), size=n)


def rejection_sample(log_density, d, n, rng, concentration=1.0, bound_draws=20000,
                     inflate=1.2, max_rounds=1000):
    """Draw `n` points from an unnormalised density on the simplex by rejection.

    The proposal is a symmetric Dirichlet(`concentration`); `concentration`
    below one gives an envelope with poles at the faces for densities that
    are unbounded there.  The bound on density / proposal is estimated from
    `bound_draws` proposal draws and inflated by `inflate`.
    """
    if n == 0:
        return np.empty((0, d))
    alpha = np.full(d, float(concentration))

    def log_prop(w):
        return (
            special.gammaln(alpha.sum())
            - special.gammaln(alpha).sum()
            + ((alpha - 1.0) * np.log(w)).sum(axis=1)
        )

    probe = _safe_dirichlet(rng, alpha, bound_draws)
    log_ratio = log_density(probe) - log_prop(probe)
    log_ratio = log_ratio[np.isfinite(log_ratio)]
    if log_ratio.size == 0:
        raise QuadratureError("density vanishes on all probe points")
    log_bound = log_ratio.max() + math.log(inflate)
    out = []
    have = 0
    for _ in range(max_rounds):
        batch = _safe_dirichlet(rng, alpha, max(4 * (n - have), 1000))
        lr = log_density(batch) - log_prop(batch) - log_bound
        keep = np.log(rng.random(len(batch))) < lr
        out.append(batch[keep])
        have += int(keep.sum())
        if have >= n:
            return np.concatenate(out)[:n]
    raise QuadratureError("rejection sampler exhausted its budget")


def _safe_dirichlet(rng, alpha, n):
    w = rng.dirichlet(alpha, size=n)
    w = np.clip(w, 1e-300, None)
    return w / w.sum(axis=1, keepdims=True)
