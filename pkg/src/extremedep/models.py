"""Parametric angular measures on the unit simplex.

Every model describes a measure H on the simplex through densities on the
interior, on lower-dimensional faces and point masses at the vertices.
Two normalisations occur among the families:

* asymmetric logistic, Husler-Reiss and extremal-t densities are the mixed
  partial derivatives of the exponent function, so H has total mass d and
  satisfies int w_j dH = 1;
* tilted Dirichlet and pairwise beta densities integrate to one.

`AngularModel.total_mass` records which case applies.  The exponent
function is V(y) = (d / total_mass) int max_j (w_j / y_j) dH(w) in both
cases and the likelihood uses the densities exactly as written.

Coordinates are 0-based throughout.  Pairwise parameters are stored in
``itertools.combinations(range(d), 2)`` order.
"""

from __future__ import annotations

import itertools
import math
from functools import cached_property

import numpy as np
from scipy import special, stats

from . import mvgauss
from .errors import NumericError, QuadratureError, UnsupportedError, ValidationError
from ._tanhsinh import T_MAX, integrate_box
from .simplex import integrate_simplex, logsumexp, rejection_sample

FAMILIES = ("AL", "TD", "PB", "HR", "ET")
FAMILY_NAMES = {
    "AL": "AsymLogistic",
    "TD": "TiltedDirichlet",
    "PB": "PairwiseBeta",
    "HR": "HuslerReiss",
    "ET": "ExtremalT",
}

QUAD_TOL = 1e-6
# node range for integrals against H; reaches log w ~ -1.2e4 so that boundary
# singularities w^(delta - 1) with delta ~ 0.01 are fully resolved
_T_MAX_MEASURE = 9.0


def pairs(d):
    return list(itertools.combinations(range(d), 2))


def subsets(d, min_size=1):
    """Nonempty subsets of range(d) ordered by size, then lexicographically."""
    out = []
    for k in range(min_size, d + 1):
        out.extend(itertools.combinations(range(d), k))
    return out


def _label(S):
    return "-".join(str(i + 1) for i in S)


def _as_points(w, d):
    w = np.asarray(w, dtype=float)
    single = w.ndim == 1
    w = np.atleast_2d(w)
    if w.shape[1] != d:
        raise ValidationError(f"points must have {d} coordinates, got {w.shape[1]}")
    return w, single


def _check_interior(w):
    if np.any(~np.isfinite(w)) or np.any(w <= 0.0):
        raise ValidationError("angular density requires interior simplex points (all coordinates > 0)")
    if np.any(np.abs(w.sum(axis=1) - 1.0) > 1e-8):
        raise ValidationError("points must lie on the unit simplex (coordinates summing to 1)")


def _pair_matrix(values, d, diag=0.0):
    m = np.full((d, d), diag, dtype=float)
    for (i, j), v in zip(pairs(d), values):
        m[i, j] = m[j, i] = v
    return m


def _check_positive_y(y, d, allow_inf=True):
    y = np.asarray(y, dtype=float)
    single = y.ndim == 1
    y = np.atleast_2d(y)
    if y.shape[1] != d:
        raise ValidationError(f"expected {d} coordinates, got {y.shape[1]}")
    if np.any(np.isnan(y)) or np.any(y <= 0.0) or (not allow_inf and np.any(np.isinf(y))):
        raise ValidationError("exponent-function arguments must be positive")
    return y, single


class AngularModel:
    """Base class; subclasses implement the family-specific pieces."""

    family: str = ""
    total_mass_is_d = True
    min_d = 2

    def __init__(self, d):
        d = int(d)
        if d < self.min_d:
            raise ValidationError(f"{FAMILY_NAMES[self.family]} needs d >= {self.min_d}, got {d}")
        self.d = d

    # -- parameters -----------------------------------------------------------

    @property
    def total_mass(self):
        return float(self.d) if self.total_mass_is_d else 1.0

    def param_names(self):
        raise NotImplementedError

    def params(self):
        """Parameter vector on the constrained scale, ordered as `param_names`."""
        raise NotImplementedError

    @property
    def n_params(self):
        return len(self.param_names())

    def with_params(self, theta):
        """A model of the same shape with parameter vector `theta`."""
        raise NotImplementedError

    def to_free(self, theta=None):
        """Map constrained parameters to an unconstrained vector."""
        raise NotImplementedError

    def from_free(self, z):
        """Inverse of `to_free`; returns a new model."""
        raise NotImplementedError

    def __repr__(self):
        vals = ", ".join(f"{n}={v:.6g}" for n, v in zip(self.param_names(), self.params()))
        return f"{FAMILY_NAMES[self.family]}(d={self.d}, {vals})"

    def __eq__(self, other):
        return (
            type(self) is type(other)
            and self.d == other.d
            and self.param_names() == other.param_names()
            and np.array_equal(self.params(), other.params())
        )

    def __hash__(self):
        return hash((self.family, self.d, tuple(self.params())))

    # -- densities ------------------------------------------------------------

    def log_density(self, w):
        """Log of the interior angular density at rows of `w`."""
        w, single = _as_points(w, self.d)
        _check_interior(w)
        out = self._logdens_lw(np.log(w))
        return float(out[0]) if single else out

    def _logdens_lw(self, lw):
        """Log density from log-coordinates (rows of log w)."""
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            out = self._log_density(lw)
        return np.where(np.isnan(out), -np.inf, out)

    def density(self, w):
        return np.exp(self.log_density(w))

    def vertex_mass(self, j):
        if not 0 <= j < self.d:
            raise ValidationError(f"vertex index {j} out of range for d={self.d}")
        return 0.0

    def has_face_mass(self):
        """True when H charges faces of dimension between 1 and d - 2."""
        return False

    def face_density(self, S, w):
        """Density of H on the face where exactly the coordinates in `S` are positive.

        `w` holds points with either d coordinates (zeros off `S`) or only the
        |S| coordinates in `S`.
        """
        S = tuple(sorted(int(i) for i in S))
        if not S or len(set(S)) != len(S) or S[0] < 0 or S[-1] >= self.d:
            raise ValidationError(f"invalid face {S} for d={self.d}")
        w = np.atleast_2d(np.asarray(w, dtype=float))
        if w.shape[1] == self.d:
            off = [i for i in range(self.d) if i not in S]
            if off and np.any(w[:, off] != 0.0):
                raise ValidationError(f"points do not lie on face {S}")
            ws = w[:, list(S)]
        elif w.shape[1] == len(S):
            ws = w
        else:
            raise ValidationError("face points have the wrong number of coordinates")
        if len(S) == 1:
            return np.full(len(ws), self.vertex_mass(S[0]))
        if len(S) == self.d:
            return self.density(ws)
        _check_interior(ws)
        return np.exp(self._log_face_lw(S, np.log(ws)))

    def _log_face_lw(self, S, lw):
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            out = self._log_face_density(S, lw)
        return np.where(np.isnan(out), -np.inf, out)

    def _log_face_density(self, S, lw):
        raise UnsupportedError(
            f"{FAMILY_NAMES[self.family]} places no mass on faces of dimension 1..d-2; "
            "face densities are only defined for the interior and the vertices"
        )


    # -- integrals against H ----------------------------------------------------

    def integrate(self, g, tol=QUAD_TOL, kink=None, parts=("vertices", "faces", "interior"),
                  deep=False):
        """int g dH over vertices, faces and interior (unnormalised H).

        `g` maps (n, d) points to nonnegative (n,) or (n, q) values.  `kink` is passed to
        the quadrature on every piece (restricted to the piece's coordinates).
        With `deep` the nodes reach far beyond the double range, which is
        needed for densities whose mass piles up at the vertices (asymmetric
        logistic with alpha near 1) but costs roughly twice the evaluations.
        """
        t_max = _T_MAX_MEASURE if deep else T_MAX
        d = self.d
        total = 0.0
        if "vertices" in parts:
            for j in range(d):
                mass = self.vertex_mass(j)
                if mass > 0:
                    e = np.zeros((1, d))
                    e[0, j] = 1.0
                    total = total + mass * np.asarray(g(e), dtype=float)[0]
        if "faces" in parts and self.has_face_mass():
            for S in subsets(d, 2):
                if len(S) == d:
                    continue
                total = total + self._integrate_face(g, S, tol, kink, t_max)
        if "interior" in parts:

            def f(lw):
                ld = self._logdens_lw(lw)
                lv = np.log(np.asarray(g(np.exp(lw)), dtype=float))
                return lv + (ld[:, None] if lv.ndim == 2 else ld)

            total = total + integrate_simplex(
                f, d, tol, kink=_pieces_for(kink, d), log_integrand=True, log_points=True,
                t_max=t_max,
            ).value
        return total

    def _integrate_face(self, g, S, tol, kink, t_max):
        d, k = self.d, len(S)
        idx = list(S)

        def f(lu):
            w = np.zeros((len(lu), d))
            w[:, idx] = np.exp(lu)
            ld = self._log_face_lw(S, lu)
            lv = np.log(np.asarray(g(w), dtype=float))
            return lv + (ld[:, None] if lv.ndim == 2 else ld)

        sub_kink = None if kink is None else np.asarray(kink, dtype=float)[idx]
        if sub_kink is not None and not np.any(np.isfinite(sub_kink)):
            sub_kink = None
        return integrate_simplex(
            f, k, tol, kink=_pieces_for(sub_kink, k), log_integrand=True, log_points=True,
            t_max=t_max,
        ).value

    def moments_and_mass(self, tol=1e-7, deep=None):
        """(int w dH, int dH) / total_mass from one quadrature pass.

        A valid model gives 1/d in every coordinate and a mass of 1.  Deep
        nodes are used by default for d <= 3, where they are cheap.
        """
        deep = self.d <= 3 if deep is None else deep
        r = np.asarray(self.integrate(lambda w: np.column_stack([w, np.ones(len(w))]),
                                      tol=tol, deep=deep)) / self.total_mass
        return r[:-1], float(r[-1])

    def moments(self, tol=1e-7, deep=None):
        """int w dH / total_mass; each coordinate equals 1/d for a valid model."""
        return self.moments_and_mass(tol, deep)[0]

    def mass(self, tol=1e-7, deep=None):
        """Total mass of H relative to `total_mass` (1 for a valid model)."""
        return self.moments_and_mass(tol, deep)[1]

    # -- exponent and tail functions ---------------------------------------------

    def exponent(self, y, method="auto", tol=QUAD_TOL):
        """Exponent function V(y); infinite entries drop out (marginalisation)."""
        y, single = _check_positive_y(y, self.d)
        out = np.empty(len(y))
        for i, row in enumerate(y):
            out[i] = self._exponent_row(row, method, tol)
        return float(out[0]) if single else out

    def _exponent_row(self, y, method, tol):
        finite = np.isfinite(y)
        if not finite.any():
            return 0.0
        if finite.sum() == 1:
            return float(1.0 / y[finite][0])
        if method == "quadrature" or (method == "auto" and not self.has_closed_exponent):
            return self._exponent_quad(y, tol)
        return self._exponent_closed(y)

    has_closed_exponent = False

    def _exponent_closed(self, y):
        raise UnsupportedError("no closed-form exponent function")

    def _exponent_quad(self, y, tol):
        inv = np.where(np.isfinite(y), 1.0 / y, 0.0)
        scale = inv.max()

        def g(w):
            return np.max(w * inv, axis=1)

        val = self.integrate(g, tol=tol * scale * self.total_mass / self.d, kink=y)
        return float(val) * self.d / self.total_mass

    def tail_dependence(self, y, method="auto", tol=QUAD_TOL):
        """Tail dependence function R(y).

        R(y) is the exponent-measure mass of {z : z_j > y_j for all j}.  A
        zero entry leaves that coordinate unconstrained.
        """
        y = np.asarray(y, dtype=float)
        single = y.ndim == 1
        y = np.atleast_2d(y)
        if y.shape[1] != self.d:
            raise ValidationError(f"expected {self.d} coordinates, got {y.shape[1]}")
        if np.any(np.isnan(y)) or np.any(y < 0.0) or np.any(np.isinf(y)):
            raise ValidationError("tail-dependence arguments must be finite and nonnegative")
        out = np.empty(len(y))
        for i, row in enumerate(y):
            out[i] = self._tail_row(row, method, tol)
        return float(out[0]) if single else out

    def _tail_row(self, y, method, tol):
        active = y > 0
        if not active.any():
            raise ValidationError("at least one coordinate must be constrained")
        if active.sum() == 1:
            return float(1.0 / y[active][0])
        if method == "quadrature":
            return self._tail_quad(y, tol)
        if method == "inclusion-exclusion":
            return self._tail_incl_excl(y, tol)
        if self.has_closed_tail:
            return self._tail_closed(y)
        if self.has_closed_exponent:
            return self._tail_incl_excl(y, tol)
        return self._tail_quad(y, tol)

    has_closed_tail = False

    def _tail_closed(self, y):
        raise UnsupportedError("no closed-form tail dependence function")

    def _tail_incl_excl(self, y, tol):
        act = [j for j in range(self.d) if y[j] > 0]
        total = 0.0
        for k in range(1, len(act) + 1):
            for U in itertools.combinations(act, k):
                z = np.full(self.d, np.inf)
                z[list(U)] = y[list(U)]
                total += (-1) ** (k + 1) * self._exponent_row(z, "auto", tol)
        return max(total, 0.0)

    def _tail_quad(self, y, tol):
        inv = np.where(y > 0, 1.0 / np.where(y > 0, y, 1.0), np.inf)
        kink = np.where(y > 0, y, np.inf)
        scale = inv[np.isfinite(inv)].max()

        act = y > 0

        def g(w):
            return np.min(np.where(act, w * np.where(act, inv, 0.0), np.inf), axis=1)

        # vertices and faces with a constrained coordinate at zero contribute 0;
        # faces containing every constrained coordinate are integrated
        val = self.integrate(g, tol=tol * scale * self.total_mass / self.d, kink=kink,
                             parts=("faces", "interior"))
        return max(float(val) * self.d / self.total_mass, 0.0)

    def pickands(self, t, method="auto", tol=QUAD_TOL):
        """Pickands dependence function A(t) = V(1/t_1, ..., 1/t_d) on the simplex."""
        t, single = _as_points(t, self.d)
        if np.any(t < 0) or np.any(np.abs(t.sum(axis=1) - 1.0) > 1e-10):
            raise ValidationError("Pickands function arguments must lie on the unit simplex")
        out = np.empty(len(t))
        for i, row in enumerate(t):
            with np.errstate(divide="ignore"):
                y = np.where(row > 0, 1.0 / row, np.inf)
            a = self._exponent_row(y, method, tol)
            lo, hi = row.max(), 1.0
            slack = 10 * tol if (method == "quadrature" or not self.has_closed_exponent) else 1e-9
            if a < lo - slack or a > hi + slack:
                raise NumericError(f"Pickands value {a:.8g} outside [{lo:.6g}, 1] at t={row}")
            out[i] = min(max(a, lo), hi)
        return float(out[0]) if single else out

    # -- sampling ---------------------------------------------------------------

    def sample(self, n, seed=None, rng=None):
        """Draw `n` points from H / total_mass (atoms and faces included)."""
        n = int(n)
        if n < 0:
            raise ValidationError("sample size must be nonnegative")
        rng = rng if rng is not None else np.random.default_rng(seed)
        if n == 0:
            return np.empty((0, self.d))
        out = self._sample(n, rng)
        return np.clip(out, 0.0, 1.0)

    def _sample(self, n, rng):
        return self.sample_rejection(n, rng=rng)

    def sample_rejection(self, n, seed=None, rng=None):
        """Interior draws by rejection from a Dirichlet envelope.

        Only valid for models without atoms or face mass.  The envelope is
        uniform when the density is bounded on a probe set and switches to
        a Dirichlet(1/2) proposal with poles at the faces otherwise.
        """
        rng = rng if rng is not None else np.random.default_rng(seed)
        if self.has_face_mass() or any(self.vertex_mass(j) > 0 for j in range(self.d)):
            raise UnsupportedError("rejection sampling covers interior-only measures")
        for conc in (1.0, 0.5, 0.25):
            try:
                probe = rng.dirichlet(np.full(self.d, conc), size=2000)
                probe = np.clip(probe, 1e-300, None)
                if conc == 1.0 and np.max(self.log_density(probe / probe.sum(1, keepdims=True))) > 50:
                    continue
                return rejection_sample(self._safe_logdens, self.d, n, rng, concentration=conc)
            except NumericError:
                continue
        raise NumericError("rejection sampler failed for every envelope")

    def _safe_logdens(self, w):
        w = np.clip(w, 1e-300, None)
        return self._logdens_lw(np.log(w / w.sum(axis=1, keepdims=True)))

    # -- marginals -----------------------------------------------------------------

    def marginal(self, idx):
        """Model for the coordinates in `idx` when it stays within the family."""
        raise UnsupportedError(f"{FAMILY_NAMES[self.family]} marginals are not in closed form")


def _fast_integral(f, dims, tol=1e-11):
    """Sum of product tanh-sinh integrals over all combinations of intervals."""
    total = 0.0
    for box in itertools.product(*dims):
        if any(b <= a for a, b in box):
            continue
        est, err = integrate_box(f, list(box), tol, rtol=1e-11)
        if not np.isfinite(est) or err > 1e-7 * max(abs(est), 1.0):
            raise QuadratureError(f"low-dimensional integral did not converge (error {err:.3g})",
                                  estimate=est, error=err)
        total += est
    return total


def _pieces_for(kink, d):
    # Without a kink the barycentric subdivision is used: every piece then has
    # a single simplex vertex, mapped to a cube face by stick-breaking, so point
    # singularities at the vertices become one-dimensional.
    return np.ones(d) if kink is None else kink


def _by_reference(fun, lw, d):
    ref = np.argmax(lw, axis=1)
    out = np.empty(len(lw))
    for j in range(d):
        rows = ref == j
        if rows.any():
            out[rows] = fun(lw[rows], j)
    return out


# =============================================================================
# Asymmetric logistic


class AsymmetricLogistic(AngularModel):
    """Asymmetric logistic measure with components on subsets S, |S| >= 2.

    `components` maps each included subset S (sorted tuple) to a pair
    (alpha_S, beta_S) where beta_S lists beta_{j,S} for j in S.  Singleton
    weights beta_{j,{j}} are implied by sum_S beta_{j,S} = 1.  The full
    model includes every subset; `exchangeable` keeps only S = {1..d}.
    """

    family = "AL"
    has_closed_exponent = True

    def __init__(self, d, components):
        super().__init__(d)
        comps = {}
        for S, (a, b) in components.items():
            S = tuple(sorted(int(i) for i in S))
            if len(S) < 2 or len(set(S)) != len(S) or S[0] < 0 or S[-1] >= d:
                raise ValidationError(f"invalid component subset {S}")
            a = float(a)
            b = np.asarray(b, dtype=float).reshape(-1)
            if b.shape != (len(S),):
                raise ValidationError(f"component {S} needs {len(S)} beta weights")
            if not (a >= 1.0 and np.isfinite(a)):
                raise ValidationError(f"alpha for {S} must be finite and >= 1, got {a}")
            if np.any(~np.isfinite(b)) or np.any(b < 0) or np.any(b > 1):
                raise ValidationError(f"beta weights for {S} must lie in [0, 1]")
            comps[S] = (a, b)
        self.components = {S: comps[S] for S in subsets(d, 2) if S in comps}
        single = np.ones(d)
        for S, (_, b) in self.components.items():
            single[list(S)] -= b
        if np.any(single < -1e-10):
            raise ValidationError("beta weights for some coordinate sum to more than 1")
        self.beta_single = np.clip(single, 0.0, 1.0)

    @classmethod
    def exchangeable(cls, alpha, beta):
        beta = np.asarray(beta, dtype=float)
        d = len(beta)
        return cls(d, {tuple(range(d)): (alpha, beta)})

    @classmethod
    def full(cls, d, alpha, beta):
        """`alpha` and `beta` map subsets to alpha_S and beta_S for every |S| >= 2."""
        comps = {}
        for S in subsets(d, 2):
            comps[S] = (alpha[S], beta[S])
        return cls(d, comps)

    @staticmethod
    def n_params_full(d):
        return 2 ** (d - 1) * (d + 2) - (2 * d + 1)

    def param_names(self):
        names = [f"alpha.{_label(S)}" for S in self.components]
        for S in self.components:
            names += [f"beta.{j + 1}.{_label(S)}" for j in S]
        return names

    def params(self):
        out = [a for a, _ in self.components.values()]
        for _, b in self.components.values():
            out.extend(b)
        return np.array(out, dtype=float)

    def with_params(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise ValidationError(f"expected {self.n_params} parameters")
        keys = list(self.components)
        a = theta[: len(keys)]
        pos = len(keys)
        comps = {}
        for S, aS in zip(keys, a):
            comps[S] = (aS, theta[pos:pos + len(S)])
            pos += len(S)
        return AsymmetricLogistic(self.d, comps)

    def to_free(self, theta=None):
        m = self if theta is None else self.with_params(theta)
        keys = list(m.components)
        z = [math.log(max(m.components[S][0] - 1.0, 1e-300)) for S in keys]
        # beta rows: additive log-ratios against the singleton weight
        ref = np.maximum(m.beta_single, 1e-300)
        for S in keys:
            b = m.components[S][1]
            z.extend(np.log(np.maximum(b, 1e-300)) - np.log(ref[list(S)]))
        return np.array(z)

    def from_free(self, z):
        z = np.asarray(z, dtype=float)
        keys = list(self.components)
        alphas = 1.0 + np.exp(z[: len(keys)])
        pos = len(keys)
        logits = {}
        for S in keys:
            logits[S] = z[pos:pos + len(S)]
            pos += len(S)
        # softmax per coordinate over {singleton} + components containing it
        denom = np.ones(self.d)
        for S in keys:
            denom[list(S)] += np.exp(logits[S])
        comps = {}
        for S, a in zip(keys, alphas):
            comps[S] = (a, np.exp(logits[S]) / denom[list(S)])
        return AsymmetricLogistic(self.d, comps)

    # vertex masses collect singleton weights and independent (alpha = 1) components
    def vertex_mass(self, j):
        super().vertex_mass(j)
        m = self.beta_single[j]
        for S, (a, b) in self.components.items():
            if a == 1.0 and j in S:
                m += b[S.index(j)]
        return float(m)

    def has_face_mass(self):
        return any(len(S) < self.d and a > 1.0 for S, (a, _) in self.components.items())

    @staticmethod
    def _log_face(lw, a, b):
        k = lw.shape[1]
        with np.errstate(divide="ignore"):
            lb = np.log(b)
        c = sum(math.log(i * a - 1.0) for i in range(1, k)) if a > 1.0 else -np.inf
        inner = logsumexp(a * (lb[None, :] - lw), axis=1)
        return c + np.sum(a * lb[None, :] - (a + 1.0) * lw, axis=1) + (1.0 / a - k) * inner

    def _log_density(self, lw):
        return self._log_face_density(tuple(range(self.d)), lw)

    def _log_face_density(self, S, lw):
        if S not in self.components:
            return np.full(len(lw), -np.inf)
        a, b = self.components[S]
        return self._log_face(lw, a, b)

    def _exponent_closed(self, y):
        inv = np.where(np.isfinite(y), 1.0 / y, 0.0)
        total = float(np.sum(self.beta_single * inv))
        for S, (a, b) in self.components.items():
            x = b * inv[list(S)]
            if np.all(x == 0):
                continue
            with np.errstate(divide="ignore"):
                lx = np.log(x)
            total += math.exp(special.logsumexp(a * lx) / a)
        return total

    def marginal(self, idx):
        idx = sorted(int(i) for i in idx)
        pos = {j: k for k, j in enumerate(idx)}
        comps = {}
        # components restricted to idx; subsets collapsing to one coordinate feed vertex mass
        for S, (a, b) in self.components.items():
            T = tuple(j for j in S if j in pos)
            if len(T) < 2:
                continue
            if T in comps:
                raise UnsupportedError("marginal mixes logistic components with different alphas")
            comps[T] = (a, b[[S.index(j) for j in T]])
        out = {tuple(pos[j] for j in T): v for T, v in comps.items()}
        if len(out) != len({T for T in out}):
            raise UnsupportedError("marginal is not an asymmetric logistic model")
        return AsymmetricLogistic(len(idx), out)

    def _sample(self, n, rng):
        d = self.d
        # (S, j) pairs weighted by beta_{j,S}; singletons are vertices
        choices = [((j,), j, self.beta_single[j], 1.0) for j in range(d)]
        for S, (a, b) in self.components.items():
            for k, j in enumerate(S):
                choices.append((S, j, b[k], a))
        weights = np.array([c[2] for c in choices])
        pick = rng.choice(len(choices), size=n, p=weights / weights.sum())
        out = np.zeros((n, d))
        for c_idx in np.unique(pick):
            rows = np.flatnonzero(pick == c_idx)
            S, j, _, a = choices[c_idx]
            m = len(rows)
            if len(S) == 1 or a == 1.0:
                out[rows, j] = 1.0
                continue
            b = self.components[S][1]
            theta = 1.0 / a
            logw = np.full((m, len(S)), -np.inf)
            # log G for G ~ Gamma(1 - theta), stable for small shapes
            shape = 1.0 - theta
            log_g = np.log(rng.gamma(shape + 1.0, size=m)) + np.log(rng.random(m)) / shape
            with np.errstate(divide="ignore"):
                lb = np.log(b)
            for k, i in enumerate(S):
                if i == j:
                    logw[:, k] = 0.0
                else:
                    e = rng.exponential(size=m)
                    logw[:, k] = -theta * (np.log(e) - log_g) + lb[k] - lb[S.index(j)]
            logw -= special.logsumexp(logw, axis=1, keepdims=True)
            out[np.ix_(rows, list(S))] = np.exp(logw)
        return out


# =============================================================================
# Tilted Dirichlet


class TiltedDirichlet(AngularModel):
    family = "TD"
    total_mass_is_d = False

    def __init__(self, alpha):
        alpha = np.asarray(alpha, dtype=float).reshape(-1)
        super().__init__(len(alpha))
        if np.any(~np.isfinite(alpha)) or np.any(alpha <= 0):
            raise ValidationError("tilted Dirichlet parameters must be positive")
        self.alpha = alpha

    def param_names(self):
        return [f"alpha_{j + 1}" for j in range(self.d)]

    def params(self):
        return self.alpha.copy()

    def with_params(self, theta):
        return TiltedDirichlet(theta)

    def to_free(self, theta=None):
        return np.log(self.alpha if theta is None else np.asarray(theta, dtype=float))

    def from_free(self, z):
        return TiltedDirichlet(np.exp(np.asarray(z, dtype=float)))

    def _log_density(self, lw):
        a = self.alpha
        d = self.d
        la = np.log(a)
        ls = logsumexp(lw + la[None, :], axis=1)
        return (
            special.gammaln(a.sum() + 1.0)
            - math.log(d)
            - (d + 1) * ls
            + np.sum(la - special.gammaln(a))
            + np.sum((a - 1.0) * (la[None, :] + lw - ls[:, None]), axis=1)
        )

    # V and R through the gamma representation used by the sampler: with
    # probability 1/d the point is X / sum(X) for independent
    # X_i ~ Gamma(alpha_i + [i = k], rate alpha_i).  Writing 1 / sum(X) as a
    # Laplace integral over s and max / min as an integral of tail
    # probabilities over u leaves a two-dimensional integral of products of
    # regularised incomplete gamma functions in any dimension.
    has_closed_exponent = True
    has_closed_tail = True

    def _laplace_integral(self, y, kind):
        a0 = self.alpha
        use = np.isfinite(y) & (y > 0)
        total = 0.0
        for k in range(self.d):
            shape = a0.copy()
            shape[k] += 1.0
            sh, rt, yy = shape[use], a0[use], y[use]

            def f(u, uc, shape=shape, sh=sh, rt=rt, yy=yy):
                s = u[:, 0] / uc[:, 0]
                lam = rt[None, :] + s[:, None]
                mean = sh[None, :] / (lam * yy[None, :])
                c = mean.max(axis=1) if kind == "max" else mean.min(axis=1)
                t = c * u[:, 1] / uc[:, 1]
                z = lam * t[:, None] * yy[None, :]
                if kind == "max":
                    logp = np.log1p(-special.gammaincc(sh[None, :], z))
                    inner = -np.expm1(logp.sum(axis=1))
                else:
                    inner = np.prod(special.gammaincc(sh[None, :], z), axis=1)
                logl = np.sum(shape[None, :] * (np.log(a0)[None, :]
                                                - np.log(a0[None, :] + s[:, None])), axis=1)
                return np.exp(logl) * inner * c / (uc[:, 0] ** 2 * uc[:, 1] ** 2)

            total += _fast_integral(f, [[(0.0, 1.0)], [(0.0, 1.0)]])
        return total

    def _exponent_closed(self, y):
        return self._laplace_integral(y, "max")

    def _tail_closed(self, y):
        return max(self._laplace_integral(y, "min"), 0.0)

    def _sample(self, n, rng):
        d = self.alpha.size
        j = rng.integers(d, size=n)
        out = np.empty((n, d))
        for k in range(d):
            rows = np.flatnonzero(j == k)
            if rows.size == 0:
                continue
            a = self.alpha.copy()
            a[k] += 1.0
            v = _dirichlet_log(rng, a, rows.size)
            lw = v - np.log(self.alpha)[None, :]
            lw -= special.logsumexp(lw, axis=1, keepdims=True)
            out[rows] = np.exp(lw)
        return out


def _dirichlet_log(rng, a, n):
    """Log of Dirichlet(a) draws, accurate for small shape parameters."""
    a = np.asarray(a, dtype=float)
    lg = np.log(rng.gamma(a + 1.0, size=(n, len(a)))) + np.log(rng.random((n, len(a)))) / a
    return lg - special.logsumexp(lg, axis=1, keepdims=True)


# =============================================================================
# Pairwise beta


class PairwiseBeta(AngularModel):
    family = "PB"
    total_mass_is_d = False
    min_d = 3

    def __init__(self, alpha, beta):
        beta = np.asarray(beta, dtype=float).reshape(-1)
        npair = beta.size
        d = int(round((1 + math.sqrt(1 + 8 * npair)) / 2))
        if d * (d - 1) // 2 != npair:
            raise ValidationError(f"{npair} pairwise parameters do not match any dimension")
        super().__init__(d)
        alpha = float(alpha)
        if not (alpha > 0 and np.isfinite(alpha)):
            raise ValidationError("pairwise beta alpha must be positive")
        if np.any(~np.isfinite(beta)) or np.any(beta <= 0):
            raise ValidationError("pairwise beta parameters must be positive")
        self.alpha = alpha
        self.beta = beta

    def param_names(self):
        return [f"beta_{i + 1}_{j + 1}" for i, j in pairs(self.d)] + ["alpha"]

    def params(self):
        return np.append(self.beta, self.alpha)

    def with_params(self, theta):
        theta = np.asarray(theta, dtype=float)
        return PairwiseBeta(theta[-1], theta[:-1])

    def to_free(self, theta=None):
        return np.log(self.params() if theta is None else np.asarray(theta, dtype=float))

    def from_free(self, z):
        return self.with_params(np.exp(np.asarray(z, dtype=float)))

    @cached_property
    def _log_const(self):
        d, a = self.d, self.alpha
        return (
            math.log(2.0)
            + special.gammaln(d - 2)
            + special.gammaln(a * d + 1.0)
            - math.log(d * (d - 1))
            - special.gammaln(2 * a + 1.0)
            - special.gammaln(a * (d - 2))
        )

    def _log_density(self, lw):
        d, a = self.d, self.alpha
        terms = []
        for (i, j), b in zip(pairs(d), self.beta):
            ls = np.logaddexp(lw[:, i], lw[:, j])
            # 1 - s summed from the remaining coordinates keeps accuracy near edges
            others = [k for k in range(d) if k not in (i, j)]
            rest = logsumexp(lw[:, others], axis=1)
            hstar = (
                special.gammaln(2 * b)
                - 2 * special.gammaln(b)
                + (b - 1.0) * (lw[:, i] - ls)
                + (b - 1.0) * (lw[:, j] - ls)
            )
            terms.append((2 * a - 1.0) * ls + (a * (d - 2) - d + 2) * rest + hstar)
        return self._log_const + logsumexp(np.stack(terms, axis=1), axis=1)

    # V and R by conditioning on the sampler's structure: a pair (i, j), the
    # pair share s ~ Beta(2 alpha + 1, alpha (d - 2)), the split u within the
    # pair and the remainder r ~ Dirichlet(1).  Given u and r the
    # expectation over s of max(s p, (1 - s) q) or min(...) is a combination
    # of incomplete beta functions, so only u (and r when d = 4) remain.
    has_closed_exponent = True
    has_closed_tail = True

    def _beta_integral(self, y, kind):
        d = self.d
        if d > 4:
            raise UnsupportedError("pairwise beta exponent function supports d <= 4")
        A, B = 2 * self.alpha + 1.0, self.alpha * (d - 2)
        pa, pb = A / (A + B), B / (A + B)
        if kind == "max":
            inv = np.where(np.isfinite(y), 1.0 / y, 0.0)
        else:
            inv = np.where(y > 0, 1.0 / np.where(y > 0, y, 1.0), np.inf)

        def split(p, q):
            # kink of max/min(p w_p, q w_q) along a segment
            if np.isfinite(p) and np.isfinite(q) and p > 0 and q > 0:
                return q / (p + q)
            return 0.5

        def combine(a, b, p_a, p_b):
            if kind == "max":
                return np.maximum(a * p_a, b * p_b)
            with np.errstate(invalid="ignore"):
                return np.minimum(np.where(p_a < np.inf, a * p_a, np.inf),
                                  np.where(p_b < np.inf, b * p_b, np.inf))

        def over_s(p, q):
            with np.errstate(invalid="ignore", divide="ignore"):
                st = q / (p + q)
            if kind == "max":
                st = np.where(p + q > 0, st, 0.0)
                return (p * pa * special.betaincc(A + 1.0, B, st)
                        + q * pb * special.betainc(A, B + 1.0, st))
            lo = np.where(np.isinf(q), pa * p, 0.0)
            hi = np.where(np.isinf(p), pb * q, 0.0)
            fin = np.isfinite(p) & np.isfinite(q)
            p0, q0, s0 = np.where(fin, p, 0.0), np.where(fin, q, 0.0), np.where(fin, st, 0.5)
            both = p0 * pa * special.betainc(A + 1.0, B, s0) + q0 * pb * special.betaincc(A, B + 1.0, s0)
            return np.where(fin, both, lo + hi)

        total = 0.0
        for (i, j), b in zip(pairs(d), self.beta):
            rest = [k for k in range(d) if k not in (i, j)]
            us = split(inv[i], inv[j])

            def f(u, uc, i=i, j=j, b=b, rest=rest):
                p = combine(u[:, 0], uc[:, 0], inv[i], inv[j])
                if d == 3:
                    q = np.full(len(u), inv[rest[0]])
                else:
                    q = combine(u[:, 1], uc[:, 1], inv[rest[0]], inv[rest[1]])
                logb = (b - 1.0) * (np.log(u[:, 0]) + np.log(uc[:, 0])) - special.betaln(b, b)
                return np.exp(logb) * over_s(p, q)

            dims = [[(0.0, us), (us, 1.0)]]
            if d == 4:
                rs = split(inv[rest[0]], inv[rest[1]])
                dims.append([(0.0, rs), (rs, 1.0)])
            total += _fast_integral(f, dims)
        return d * total / len(self.beta)

    def _exponent_closed(self, y):
        return self._beta_integral(y, "max")

    def _tail_closed(self, y):
        return max(self._beta_integral(y, "min"), 0.0)

    def _sample(self, n, rng):
        d, a = self.d, self.alpha
        pr = pairs(d)
        which = rng.integers(len(pr), size=n)
        out = np.empty((n, d))
        for k, (i, j) in enumerate(pr):
            rows = np.flatnonzero(which == k)
            m = rows.size
            if m == 0:
                continue
            s = rng.beta(2 * a + 1.0, a * (d - 2), size=m)
            u = rng.beta(self.beta[k], self.beta[k], size=m)
            others = [q for q in range(d) if q not in (i, j)]
            r = rng.dirichlet(np.ones(d - 2), size=m)
            out[rows, i] = s * u
            out[rows, j] = s * (1.0 - u)
            out[np.ix_(rows, others)] = (1.0 - s)[:, None] * r
        return out


# =============================================================================
# Husler-Reiss


class HuslerReiss(AngularModel):
    family = "HR"
    has_closed_exponent = True
    has_closed_tail = True

    def __init__(self, lam, d=None):
        lam = np.asarray(lam, dtype=float)
        if lam.ndim == 2:
            d = lam.shape[0]
            lam = np.array([lam[i, j] for i, j in pairs(d)])
        lam = lam.reshape(-1)
        if d is None:
            d = int(round((1 + math.sqrt(1 + 8 * lam.size)) / 2))
        if d * (d - 1) // 2 != lam.size:
            raise ValidationError(f"{lam.size} lambda values do not match any dimension")
        super().__init__(d)
        if np.any(~np.isfinite(lam)) or np.any(lam <= 0):
            raise ValidationError("Husler-Reiss parameters must be positive")
        self.lam = lam
        self.lam_matrix = _pair_matrix(lam, d)
        self._partial = [mvgauss.partial_corr_hr(self.lam_matrix, j) for j in range(d)]

    def param_names(self):
        return [f"lambda_{i + 1}_{j + 1}" for i, j in pairs(self.d)]

    def params(self):
        return self.lam.copy()

    def with_params(self, theta):
        return HuslerReiss(theta)

    def to_free(self, theta=None):
        return np.log(self.lam if theta is None else np.asarray(theta, dtype=float))

    def from_free(self, z):
        return HuslerReiss(np.exp(np.asarray(z, dtype=float)))

    def partial_corr(self, j):
        return self._partial[j]

    def _log_density_ref(self, lw, j):
        d = self.d
        others = [i for i in range(d) if i != j]
        lam = self.lam_matrix[others, j]
        x = lam[None, :] + (lw[:, others] - lw[:, [j]]) / (2.0 * lam[None, :])
        return (
            mvgauss.mvn_logpdf(x, self._partial[j])
            - 2.0 * lw[:, j]
            - np.sum(lw[:, others] + np.log(2.0 * lam)[None, :], axis=1)
        )

    def _log_density(self, lw):
        # every reference coordinate gives the same value; the largest one keeps
        # the log-ratios nonpositive
        return _by_reference(self._log_density_ref, lw, self.d)

    def _upper(self, y, j):
        others = [i for i in range(self.d) if i != j]
        lam = self.lam_matrix[others, j]
        return lam + np.log(y[others] / y[j]) / (2.0 * lam)

    def _exponent_closed(self, y):
        finite = np.isfinite(y)
        if not finite.all():
            return self.marginal(np.flatnonzero(finite))._exponent_closed(y[finite])
        return float(sum(
            mvgauss.mvn_cdf(self._upper(y, j), self._partial[j]) / y[j] for j in range(self.d)
        ))

    def _tail_closed(self, y):
        act = y > 0
        if not act.all():
            return self.marginal(np.flatnonzero(act))._tail_closed(y[act])
        return float(sum(
            mvgauss.mvn_cdf(-self._upper(y, j), self._partial[j]) / y[j] for j in range(self.d)
        ))

    def marginal(self, idx):
        idx = sorted(int(i) for i in idx)
        if len(idx) < 2:
            raise ValidationError("marginal needs at least two coordinates")
        return HuslerReiss(self.lam_matrix[np.ix_(idx, idx)])

    def _sample(self, n, rng):
        d = self.d
        j = rng.integers(d, size=n)
        out = np.empty((n, d))
        for k in range(d):
            rows = np.flatnonzero(j == k)
            if rows.size == 0:
                continue
            others = [i for i in range(d) if i != k]
            lam = self.lam_matrix[others, k]
            cov = self._partial[k] * np.outer(2 * lam, 2 * lam)
            z = rng.multivariate_normal(-2.0 * lam**2, cov, size=rows.size, method="eigh")
            lw = np.zeros((rows.size, d))
            lw[:, others] = z
            lw -= special.logsumexp(lw, axis=1, keepdims=True)
            out[rows] = np.exp(lw)
        return out


# =============================================================================
# Extremal-t


class ExtremalT(AngularModel):
    family = "ET"
    has_closed_exponent = True
    has_closed_tail = True

    def __init__(self, rho, nu, d=None):
        rho = np.asarray(rho, dtype=float)
        if rho.ndim == 2:
            d = rho.shape[0]
            rho = np.array([rho[i, j] for i, j in pairs(d)])
        rho = rho.reshape(-1)
        if d is None:
            d = int(round((1 + math.sqrt(1 + 8 * rho.size)) / 2))
        if d * (d - 1) // 2 != rho.size:
            raise ValidationError(f"{rho.size} correlations do not match any dimension")
        super().__init__(d)
        nu = float(nu)
        if not (nu > 0 and np.isfinite(nu)):
            raise ValidationError("extremal-t degrees of freedom must be positive")
        if np.any(~np.isfinite(rho)) or np.any(np.abs(rho) >= 1):
            raise ValidationError("extremal-t correlations must lie in (-1, 1)")
        self.rho = rho
        self.nu = nu
        self.corr = _pair_matrix(rho, d, diag=1.0)
        try:
            mvgauss.validate_correlation(self.corr, "extremal-t correlation matrix")
        except NumericError as exc:
            raise ValidationError(str(exc)) from None
        self._partial = [mvgauss.partial_corr_et(self.corr, j) for j in range(d)]

    def param_names(self):
        return [f"rho_{i + 1}_{j + 1}" for i, j in pairs(self.d)] + ["nu"]

    def params(self):
        return np.append(self.rho, self.nu)

    def with_params(self, theta):
        theta = np.asarray(theta, dtype=float)
        return ExtremalT(theta[:-1], theta[-1])

    def to_free(self, theta=None):
        th = self.params() if theta is None else np.asarray(theta, dtype=float)
        return np.append(np.arctanh(th[:-1]), math.log(th[-1]))

    def from_free(self, z):
        z = np.asarray(z, dtype=float)
        return ExtremalT(np.tanh(z[:-1]), math.exp(z[-1]))

    def partial_corr(self, j):
        return self._partial[j]

    def _scale(self, j, idx=None):
        others = [i for i in range(self.d) if i != j] if idx is None else idx
        r = self.corr[others, j]
        return r, np.sqrt((self.nu + 1.0) / (1.0 - r**2))

    def _log_density_ref(self, lw, j):
        d, nu = self.d, self.nu
        others = [i for i in range(d) if i != j]
        r, c = self._scale(j)
        lratio = lw[:, others] - lw[:, [j]]
        x = c[None, :] * (np.exp(lratio / nu) - r[None, :])
        return (
            mvgauss.mvt_logpdf(x, self._partial[j], nu + 1.0)
            + np.sum(np.log(c))
            + (1.0 / nu - 1.0) * lratio.sum(axis=1)
            - (d - 1) * math.log(nu)
            - (d + 1) * lw[:, j]
        )

    def _log_density(self, lw):
        return _by_reference(self._log_density_ref, lw, self.d)

    def vertex_mass(self, j):
        super().vertex_mass(j)
        r, c = self._scale(j)
        return float(mvgauss.mvt_cdf(-r * c, self._partial[j], self.nu + 1.0))

    def has_face_mass(self):
        return self.d >= 3

    def _log_face_density(self, S, lw):
        d, nu = self.d, self.nu
        k = len(S)
        comp = [i for i in range(d) if i not in S]
        sub = self.marginal(S)
        ldens = sub._logdens_lw(lw)
        s_ss = self.corr[np.ix_(S, S)]
        s_cs = self.corr[np.ix_(comp, S)]
        coef = np.linalg.solve(s_ss, s_cs.T).T
        cond = self.corr[np.ix_(comp, comp)] - coef @ s_cs.T
        sd = np.sqrt(np.diag(cond))
        r_cond = cond / np.outer(sd, sd)
        # the conditional argument is scale free, so normalise by the largest entry
        xt = np.exp((lw - lw.max(axis=1, keepdims=True)) / nu)
        mu = xt @ coef.T
        q = np.einsum("ni,ij,nj->n", xt, np.linalg.inv(s_ss), xt)
        u = -mu * np.sqrt((nu + k) / q)[:, None] / sd[None, :]
        prob = mvgauss.mvt_cdf(u, r_cond, nu + k)
        return ldens + np.log(np.asarray(prob).reshape(-1))

    def _args(self, y, j):
        r, c = self._scale(j)
        others = [i for i in range(self.d) if i != j]
        return c * (np.exp(np.log(y[others] / y[j]) / self.nu) - r)

    def _exponent_closed(self, y):
        finite = np.isfinite(y)
        if not finite.all():
            return self.marginal(np.flatnonzero(finite))._exponent_closed(y[finite])
        return float(sum(
            mvgauss.mvt_cdf(self._args(y, j), self._partial[j], self.nu + 1.0) / y[j]
            for j in range(self.d)
        ))

    def _tail_closed(self, y):
        act = y > 0
        if not act.all():
            return self.marginal(np.flatnonzero(act))._tail_closed(y[act])
        return float(sum(
            mvgauss.mvt_cdf(-self._args(y, j), self._partial[j], self.nu + 1.0) / y[j]
            for j in range(self.d)
        ))

    def marginal(self, idx):
        idx = sorted(int(i) for i in idx)
        if len(idx) < 2:
            raise ValidationError("marginal needs at least two coordinates")
        return ExtremalT(self.corr[np.ix_(idx, idx)], self.nu)

    def _sample(self, n, rng):
        d, nu = self.d, self.nu
        j = rng.integers(d, size=n)
        out = np.empty((n, d))
        for k in range(d):
            rows = np.flatnonzero(j == k)
            m = rows.size
            if m == 0:
                continue
            others = [i for i in range(d) if i != k]
            r = self.corr[others, k]
            disp = (self.corr[np.ix_(others, others)] - np.outer(r, r)) / (nu + 1.0)
            t = stats.multivariate_t.rvs(loc=r, shape=disp, df=nu + 1.0, size=m, random_state=rng)
            t = np.asarray(t).reshape(m, d - 1)
            lw = np.zeros((m, d))
            with np.errstate(divide="ignore"):
                lw[:, others] = nu * np.log(np.maximum(t, 0.0))
            lw -= special.logsumexp(lw, axis=1, keepdims=True)
            out[rows] = np.exp(lw)
        return out


# =============================================================================
# construction helpers


def make_model(family, params, d=None):
    """Build a model from a family tag and a constrained parameter vector.

    The vector follows `param_names` order: AL takes (alpha, beta_1..beta_d)
    for the exchangeable sub-family; TD alphas; PB pairwise betas then
    alpha; HR pairwise lambdas; ET pairwise correlations then nu.
    """
    family = normalize_family(family)
    p = np.asarray(params, dtype=float).reshape(-1)
    if family == "AL":
        return AsymmetricLogistic.exchangeable(p[0], p[1:])
    if family == "TD":
        return TiltedDirichlet(p)
    if family == "PB":
        return PairwiseBeta(p[-1], p[:-1])
    if family == "HR":
        return HuslerReiss(p)
    return ExtremalT(p[:-1], p[-1])


def normalize_family(family):
    key = str(family).strip()
    for tag, name in FAMILY_NAMES.items():
        if key.upper() == tag or key.lower() == name.lower():
            return tag
    aliases = {"huslerreiss": "HR", "husler-reiss": "HR", "extremal-t": "ET", "extremalt": "ET",
               "tilteddirichlet": "TD", "pairwisebeta": "PB", "asymmetriclogistic": "AL"}
    if key.lower() in aliases:
        return aliases[key.lower()]
    raise ValidationError(f"unknown model family {family!r}; expected one of {', '.join(FAMILIES)}")


def n_params(family, d):
    family = normalize_family(family)
    return {
        "AL": d + 1,
        "TD": d,
        "PB": d * (d - 1) // 2 + 1,
        "HR": d * (d - 1) // 2,
        "ET": d * (d - 1) // 2 + 1,
    }[family]


# =============================================================================
# module-level operations


def angular_density(model, w):
    return model.density(w)


def face_density(model, S, w):
    return model.face_density(S, w)


def vertex_mass(model, j):
    return model.vertex_mass(j)


def exponent_function(model, y, tol=QUAD_TOL):
    return model.exponent(y, tol=tol)


def pickands(model, t, tol=QUAD_TOL):
    return model.pickands(t, tol=tol)


def tail_dependence_fn(model, y, method="auto", tol=QUAD_TOL):
    return model.tail_dependence(y, method=method, tol=tol)


def sample_angular(model, n, seed):
    return model.sample(n, seed=seed)
