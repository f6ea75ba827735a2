"""Low-dimensional multivariate normal and Student-t kernels.

Distribution functions are evaluated deterministically up to dimension 3:

* dimension 1 through the univariate CDFs,
* dimension 2 through Genz's refinement of the Drezner-Wesolowsky
  bivariate normal algorithm (Student-t via a chi mixture of it),
* dimension 3 through one-dimensional adaptive quadrature of the bivariate
  normal conditional on the least correlated coordinate.

Dimension 4 uses separation-of-variables quasi-Monte Carlo with randomly
shifted rank-1 lattices (Genz 1992).  Lattice shifts are drawn from an
explicit seed, so repeated calls return identical values.
"""

from __future__ import annotations

import numpy as np
from scipy import special

from ._tanhsinh import nodes01
from .errors import NumericError, UnsupportedError, ValidationError

DEFAULT_SEED = 20140101
MAX_DIM = 4
# Arguments beyond this are saturated; Phi(-37) underflows double precision.
_CLIP = 37.0
_PSD_TOL = 1e-10

_GL = {
    6: (
        np.array([0.1713244923791705, 0.3607615730481384, 0.4679139345726904]),
        np.array([0.9324695142031522, 0.6612093864662647, 0.2386191860831970]),
    ),
    12: (
        np.array([0.04717533638651177, 0.1069393259953183, 0.1600783285433464,
                  0.2031674267230659, 0.2334925365383547, 0.2491470458134029]),
        np.array([0.9815606342467191, 0.9041172563704750, 0.7699026741943050,
                  0.5873179542866171, 0.3678314989981802, 0.1252334085114692]),
    ),
    20: (
        np.array([0.01761400713915212, 0.04060142980038694, 0.06267204833410906,
                  0.08327674157670475, 0.1019301198172404, 0.1181945319615184,
                  0.1316886384491766, 0.1420961093183821, 0.1491729864726037,
                  0.1527533871307259]),
        np.array([0.9931285991850949, 0.9639719272779138, 0.9122344282513259,
                  0.8391169718222188, 0.7463319064601508, 0.6360536807265150,
                  0.5108670019508271, 0.3737060887154196, 0.2277858511416451,
                  0.07652652113349733]),
    ),
}

_PRIMES = np.array([2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37], dtype=float)


def validate_correlation(corr, name="correlation matrix"):
    """Return `corr` as a float array after checking it is a correlation matrix.

    Small negative eigenvalues (down to -1e-10) are clipped and the result
    rescaled to unit diagonal; larger violations raise `NumericError`.
    """
    c = np.array(corr, dtype=float, ndmin=2)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ValidationError(f"{name} must be square, got shape {c.shape}")
    if not np.all(np.isfinite(c)):
        raise ValidationError(f"{name} has non-finite entries")
    if np.max(np.abs(c - c.T)) > 1e-12:
        raise ValidationError(f"{name} is not symmetric")
    if np.max(np.abs(np.diag(c) - 1.0)) > 1e-12:
        raise ValidationError(f"{name} must have unit diagonal")
    c = 0.5 * (c + c.T)
    np.fill_diagonal(c, 1.0)
    if c.shape[0] == 1:
        return c
    vals, vecs = np.linalg.eigh(c)
    if vals[0] < -_PSD_TOL:
        raise NumericError(
            f"{name} is not positive semidefinite (smallest eigenvalue {vals[0]:.3g})"
        )
    if vals[0] < 0:
        c = (vecs * np.clip(vals, 0.0, None)) @ vecs.T
        s = np.sqrt(np.diag(c))
        c = c / np.outer(s, s)
        np.fill_diagonal(c, 1.0)
    return c


# ----------------------------------------------------------------------------
# univariate and bivariate pieces


def _phid(x):
    return special.ndtr(x)


def bvn_cdf(h, k, r):
    """P(X <= h, Y <= k) for a standard bivariate normal with correlation `r`.

    `h` and `k` broadcast against each other; `r` is a scalar.
    """
    return _bvnu(-np.asarray(h, dtype=float), -np.asarray(k, dtype=float), float(r))


def _bvnu(dh, dk, r):
    """Upper orthant probability P(X > dh, Y > dk); Genz (2004) algorithm."""
    h, k = np.broadcast_arrays(np.clip(dh, -_CLIP, _CLIP), np.clip(dk, -_CLIP, _CLIP))
    h = h.astype(float)
    k = k.astype(float)
    if r == 0.0:
        return _phid(-h) * _phid(-k)
    if abs(r) < 0.3:
        w, x = _GL[6]
    elif abs(r) < 0.75:
        w, x = _GL[12]
    else:
        w, x = _GL[20]
    w = np.concatenate([w, w])
    x = np.concatenate([1.0 - x, 1.0 + x])
    tp = 2.0 * np.pi
    hk = h * k
    if abs(r) < 0.925:
        hs = (h * h + k * k) / 2.0
        asr = np.arcsin(r) / 2.0
        sn = np.sin(asr * x)
        ex = np.exp((sn * hk[..., None] - hs[..., None]) / (1.0 - sn * sn))
        bvn = ex @ w
        bvn = bvn * asr / tp + _phid(-h) * _phid(-k)
        return np.clip(bvn, 0.0, 1.0)
    if r < 0:
        k = -k
        hk = -hk
    bvn = np.zeros(h.shape)
    if abs(r) < 1.0:
        a2 = (1.0 - r) * (1.0 + r)
        a = np.sqrt(a2)
        bs = (h - k) ** 2
        c = (4.0 - hk) / 8.0
        d = (12.0 - hk) / 80.0
        asr = -(bs / a2 + hk) / 2.0
        bvn = np.where(
            asr > -100.0,
            a * np.exp(asr) * (1.0 - c * (bs - a2) * (1.0 - d * bs) / 3.0 + c * d * a2 * a2),
            0.0,
        )
        b = np.sqrt(bs)
        sp = np.sqrt(tp) * _phid(-b / a)
        bvn = np.where(
            hk > -100.0,
            bvn - np.exp(-hk / 2.0) * sp * b * (1.0 - c * bs * (1.0 - d * bs) / 3.0),
            bvn,
        )
        a = a / 2.0
        xs = (a * x) ** 2
        asr = -(bs[..., None] / xs + hk[..., None]) / 2.0
        keep = asr > -100.0
        sp = 1.0 + c[..., None] * xs * (1.0 + 5.0 * d[..., None] * xs)
        rs = np.sqrt(1.0 - xs)
        ep = np.exp(-(hk[..., None] / 2.0) * xs / (1.0 + rs) ** 2) / rs
        terms = np.where(keep, np.exp(np.where(keep, asr, 0.0)) * (sp - ep), 0.0)
        bvn = (a * (terms @ w) - bvn) / tp
    if r > 0:
        bvn = bvn + _phid(-np.maximum(h, k))
    else:
        lower = np.where(h < 0, _phid(k) - _phid(h), _phid(-h) - _phid(-k))
        bvn = np.where(h >= k, -bvn, lower - bvn)
    return np.clip(bvn, 0.0, 1.0)


def _chi_scale(u, df):
    # quantile of sqrt(chi2_df / df) at probability u
    return np.sqrt(2.0 * special.gammaincinv(df / 2.0, u) / df)


def _tvn_cdf(b, corr, tol):
    """Trivariate normal lower orthant for rows of `b` (n, 3)."""
    b = np.clip(b, -_CLIP, _CLIP)
    # condition on the coordinate least correlated with the others
    off = np.abs(corr - np.eye(3))
    i = int(np.argmin(off.max(axis=1)))
    j, k = [m for m in range(3) if m != i]
    rij, rik, rjk = corr[i, j], corr[i, k], corr[j, k]
    sj = np.sqrt(max(1.0 - rij * rij, 0.0))
    sk = np.sqrt(max(1.0 - rik * rik, 0.0))
    if sj < 1e-8 or sk < 1e-8:
        return None
    rc = (rjk - rij * rik) / (sj * sk)
    rc = float(np.clip(rc, -1.0, 1.0))
    pb = _phid(b[:, i])

    def integral(level):
        x, _, w = nodes01(level)
        z = special.ndtri(x[None, :] * pb[:, None])
        v = bvn_cdf((b[:, j, None] - rij * z) / sj, (b[:, k, None] - rik * z) / sk, rc)
        return v @ w

    # tanh-sinh in u = Phi(z) / Phi(b_i); all rows and nodes in one pass
    prev = integral(3)
    for level in range(4, 9):
        val = integral(level)
        if np.max(np.abs(val - prev) * pb) <= tol:
            break
        prev = val
    return np.clip(pb * val, 0.0, 1.0)


# ----------------------------------------------------------------------------
# quasi-Monte Carlo separation of variables


def _reorder(b, corr):
    """Genz-Bretz variable prioritisation: smallest expected probability first."""
    m = len(b)
    order = list(range(m))
    c = corr.copy()
    b = b.copy()
    L = np.zeros((m, m))
    y = np.zeros(m)
    for i in range(m):
        best, best_p = i, np.inf
        for j in range(i, m):
            v = c[j, j] - L[j, :i] @ L[j, :i]
            sd = np.sqrt(max(v, 1e-300))
            p = _phid((b[j] - L[j, :i] @ y[:i]) / sd)
            if p < best_p:
                best, best_p = j, p
        if best != i:
            for arr in (b,):
                arr[[i, best]] = arr[[best, i]]
            c[[i, best], :] = c[[best, i], :]
            c[:, [i, best]] = c[:, [best, i]]
            L[[i, best], :] = L[[best, i], :]
            order[i], order[best] = order[best], order[i]
        v = c[i, i] - L[i, :i] @ L[i, :i]
        if v <= 1e-14:
            L[i, i] = 0.0
            y[i] = 0.0
            for j in range(i + 1, m):
                L[j, i] = 0.0
            continue
        L[i, i] = np.sqrt(v)
        for j in range(i + 1, m):
            L[j, i] = (c[j, i] - L[j, :i] @ L[i, :i]) / L[i, i]
        lim = (b[i] - L[i, :i] @ y[:i]) / L[i, i]
        # mean of a standard normal truncated above at lim
        y[i] = -np.exp(-0.5 * lim * lim) / np.sqrt(2 * np.pi) / max(_phid(lim), 1e-300)
    return b, L


def _sov_values(b, L, pts, df):
    """Integrand values of the SOV transform at QMC points (n, m - 1 [+1])."""
    m = len(b)
    n = pts.shape[0]
    if df is not None:
        s = _chi_scale(np.clip(pts[:, 0], 1e-300, 1 - 1e-16), df)
        pts = pts[:, 1:]
    else:
        s = np.ones(n)
    f = np.ones(n)
    y = np.zeros((n, m))
    for i in range(m):
        shift = y[:, :i] @ L[i, :i]
        if L[i, i] == 0.0:
            e = (b[i] * s - shift >= 0).astype(float)
        else:
            e = _phid((b[i] * s - shift) / L[i, i])
        f *= e
        if i < m - 1:
            u = np.clip(pts[:, i] * e, 1e-300, 1 - 1e-16)
            y[:, i] = special.ndtri(u)
    return f


def _qmc_cdf(b, corr, df, tol, seed, max_points=2**21, shifts=12):
    b = np.clip(np.asarray(b, dtype=float), -_CLIP, _CLIP)
    b, L = _reorder(b, corr)
    dim = len(b) - 1 + (df is not None)
    if dim == 0:
        return float(_phid(b[0] / L[0, 0])), 0.0
    rng = np.random.default_rng(seed)
    gen = np.sqrt(_PRIMES[:dim]) % 1.0
    n = 2**10
    total_est, total_err = np.nan, np.inf
    while True:
        k = np.arange(1, n + 1)[:, None]
        base = (k * gen) % 1.0
        means = np.empty(shifts)
        for s in range(shifts):
            x = (base + rng.random(dim)) % 1.0
            x = np.abs(2.0 * x - 1.0)
            means[s] = _sov_values(b, L, x, df).mean()
        est = means.mean()
        err = 3.0 * means.std(ddof=1) / np.sqrt(shifts)
        total_est, total_err = est, err
        if err <= tol or n * shifts >= max_points:
            break
        n *= 2
    return float(np.clip(total_est, 0.0, 1.0)), float(total_err)


# ----------------------------------------------------------------------------
# public distribution functions


def _prepare(upper, corr):
    up = np.asarray(upper, dtype=float)
    single = up.ndim == 1
    up = np.atleast_2d(up)
    c = validate_correlation(corr)
    m = c.shape[0]
    if up.shape[1] != m:
        raise ValidationError(f"upper has {up.shape[1]} coordinates, correlation is {m}x{m}")
    if m > MAX_DIM:
        raise UnsupportedError(f"dimension {m} exceeds the supported maximum {MAX_DIM}")
    if np.any(np.isnan(up)):
        raise ValidationError("upper limits contain NaN")
    return up, c, single


def mvn_cdf(upper, corr, tol=1e-7, seed=DEFAULT_SEED, method="auto"):
    """P(Z <= upper) for Z ~ N(0, corr), corr a correlation matrix of size <= 4.

    `upper` may be a vector or an (n, m) array of limits.  With
    ``method="qmc"`` the lattice rule is used regardless of dimension.
    """
    up, c, single = _prepare(upper, corr)
    m = c.shape[0]
    out = np.empty(up.shape[0])
    if method == "auto" and m == 1:
        out = _phid(up[:, 0])
    elif method == "auto" and m == 2:
        out = bvn_cdf(up[:, 0], up[:, 1], c[0, 1])
    elif method == "auto" and m == 3 and (res := _tvn_cdf(up, c, tol / 2)) is not None:
        out = res
    else:
        for i, row in enumerate(up):
            out[i] = _qmc_cdf(row, c, None, tol, seed)[0]
    return float(out[0]) if single else out


def _t_mixture_fixed(fun, up, df, tol, max_level=6):
    """Chi mixture on a tanh-sinh rule; `fun` is called once per level on all nodes."""
    n, m = up.shape
    prev = None
    for level in range(2, max_level + 1):
        x, xc, w = nodes01(level)
        s = np.where(
            x < 0.5,
            np.sqrt(2.0 * special.gammaincinv(df / 2.0, x) / df),
            np.sqrt(2.0 * special.gammainccinv(df / 2.0, xc) / df),
        )
        pts = (up[:, None, :] * s[None, :, None]).reshape(-1, m)
        vals = fun(np.clip(pts, -_CLIP, _CLIP)).reshape(n, len(x))
        est = vals @ w
        if prev is not None and np.max(np.abs(est - prev)) <= tol:
            break
        prev = est
    return np.clip(est, 0.0, 1.0)


def mvt_cdf(upper, corr, df, tol=1e-7, seed=DEFAULT_SEED, method="auto"):
    """P(T <= upper) for a central multivariate t with dispersion `corr` and `df` > 0."""
    up, c, single = _prepare(upper, corr)
    df = float(df)
    if not (df > 0 and np.isfinite(df)):
        raise ValidationError(f"degrees of freedom must be positive, got {df}")
    m = c.shape[0]
    up = np.clip(up, -1e12, 1e12)
    if method == "auto" and m == 1:
        out = special.stdtr(df, up[:, 0])
    elif method == "auto" and m == 2:
        r = c[0, 1]
        out = _t_mixture_fixed(lambda x: bvn_cdf(x[:, 0], x[:, 1], r), up, df, tol / 2, max_level=8)
    elif method == "auto" and m == 3 and _tvn_cdf(np.zeros((1, 3)), c, 1e-3) is not None:
        out = _t_mixture_fixed(lambda x: _tvn_cdf(x, c, tol / 4), up, df, tol / 2)
    else:
        out = np.array([_qmc_cdf(row, c, df, tol, seed)[0] for row in up])
    return float(out[0]) if single else out


def mvn_logpdf(x, corr):
    """Log density of N(0, corr) at the rows of `x`."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    m = x.shape[1]
    L = np.linalg.cholesky(corr)
    z = np.linalg.solve(L, x.T)
    q = np.sum(z * z, axis=0)
    return -0.5 * q - np.sum(np.log(np.diag(L))) - 0.5 * m * np.log(2 * np.pi)


def mvt_logpdf(x, corr, df):
    """Log density of the central multivariate t with dispersion `corr`."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    m = x.shape[1]
    L = np.linalg.cholesky(corr)
    z = np.linalg.solve(L, x.T)
    q = np.sum(z * z, axis=0)
    return (
        special.gammaln((df + m) / 2.0)
        - special.gammaln(df / 2.0)
        - 0.5 * m * np.log(df * np.pi)
        - np.sum(np.log(np.diag(L)))
        - 0.5 * (df + m) * np.log1p(q / df)
    )


# ----------------------------------------------------------------------------
# partial correlations


def partial_corr_hr(lam, j):
    """Correlation matrix of the Husler-Reiss kernel conditioned on coordinate `j`.

    `lam` is a symmetric d x d matrix of positive off-diagonal dependence
    parameters (the diagonal is ignored).  Entry (k, i) of the result, for
    k, i != j, is (lam_kj^2 + lam_ij^2 - lam_ki^2) / (2 lam_kj lam_ij).
    """
    lam = np.asarray(lam, dtype=float)
    d = lam.shape[0]
    idx = [i for i in range(d) if i != j]
    lj = lam[idx, j]
    if np.any(lj <= 0):
        raise ValidationError("lambda entries must be positive")
    sub = lam[np.ix_(idx, idx)].copy()
    np.fill_diagonal(sub, 0.0)
    out = (lj[:, None] ** 2 + lj[None, :] ** 2 - sub**2) / (2.0 * np.outer(lj, lj))
    np.fill_diagonal(out, 1.0)
    try:
        return validate_correlation(out, "Husler-Reiss partial correlation")
    except NumericError as exc:
        raise ValidationError(f"invalid lambda configuration: {exc}") from None


def partial_corr_et(rho, j):
    """Partial correlation matrix of the remaining coordinates given coordinate `j`."""
    rho = np.asarray(rho, dtype=float)
    d = rho.shape[0]
    idx = [i for i in range(d) if i != j]
    rj = rho[idx, j]
    if np.any(np.abs(rj) >= 1.0):
        raise ValidationError("partial correlation is singular: |rho| = 1 with the conditioning coordinate")
    s = np.sqrt(1.0 - rj**2)
    out = (rho[np.ix_(idx, idx)] - np.outer(rj, rj)) / np.outer(s, s)
    np.fill_diagonal(out, 1.0)
    return validate_correlation(out, "extremal-t partial correlation")
