"""Closed-form mean decoding trajectories.

Everything here is a pure function of the ensemble, the erasure vector and
the change-of-variables point x in [0,1]^ne.  Variable-node fractions follow
the separable product form; check-node fractions of degree >= 2 follow the
vector-binomial mixture over the original check types; degree-1 fractions
have their own closed form (and an independent edge-counting form kept as a
cross-check oracle).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .ensemble import (
    EnsembleError,
    _carrays,
    _check_eps,
    _check_x,
    _efrac,
    _varrays,
    eval_lambda,
    eval_lambda_partials,
    eval_rho,
    mu_partial,
    nu_partial,
)

MAX_SUBTYPES_PER_TERM = 1 << 18


class ExhaustedTypeError(ValueError):
    """A schedule put weight on an edge type with no remaining edges."""


class DegreeOverflowError(EnsembleError):
    """Check sub-type enumeration would exceed the supported size."""


def erasure_vector(spec, values):
    """Build the erasure vector (1, eps_1, .., eps_nr) from a scalar or list."""
    if np.isscalar(values):
        eps = np.concatenate(([1.0], np.full(spec.nr, float(values))))
    else:
        arr = np.asarray(values, dtype=float)
        if arr.shape == (spec.nr + 1,):
            eps = arr.copy()
        elif arr.shape == (spec.nr,):
            eps = np.concatenate(([1.0], arr))
        else:
            raise EnsembleError(
                f"need {spec.nr} transmitted-channel probabilities (or {spec.nr + 1} with the punctured entry)"
            )
    return _check_eps(spec, eps)


# ---------------------------------------------------------------------------
# Check sub-type enumeration
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CheckSubTypeEntry:
    coef: float
    dtil: tuple
    subs: np.ndarray  # (k, ne) int64, all 0 <= d <= dtil componentwise
    binom: np.ndarray  # (k,) float, product of per-type binomials


@lru_cache(maxsize=None)
def subtype_table(spec):
    """All residual sub-types of every original check term with the vector
    binomial weights, materialized once per spec."""
    entries = []
    for term in spec.cnodes:
        size = 1
        for k in term.d:
            size *= k + 1
        if size > MAX_SUBTYPES_PER_TERM:
            raise DegreeOverflowError(
                f"check term {term.d} has {size} sub-types (limit {MAX_SUBTYPES_PER_TERM})"
            )
        subs = np.array(list(itertools.product(*(range(k + 1) for k in term.d))), dtype=np.int64)
        binom = np.array(
            [math.prod(math.comb(n, k) for n, k in zip(term.d, row)) for row in subs],
            dtype=float,
        )
        entries.append(CheckSubTypeEntry(float(term.coef), term.d, subs, binom))
    return tuple(entries)


@lru_cache(maxsize=None)
def all_subtypes(spec):
    """Union of residual check sub-types with total degree >= 1, canonical order."""
    keys = set()
    for entry in subtype_table(spec):
        for row in entry.subs:
            if int(row.sum()) >= 1:
                keys.add(tuple(int(v) for v in row))
    return tuple(sorted(keys))


# ---------------------------------------------------------------------------
# Closed forms
# ---------------------------------------------------------------------------


def nu_closed_form(spec, eps, x):
    """Residual variable-node fraction per type: coef * eps^b * x^d."""
    eps = _check_eps(spec, eps)
    x = _check_x(spec, x)
    coef, b, d = _varrays(spec)
    vals = coef * np.prod(eps[None, :] ** b, axis=1) * np.prod(x[None, :] ** d, axis=1)
    return {(t.b, t.d): float(v) for t, v in zip(spec.vnodes, vals)}


def nu_total(spec, eps, x):
    """Total residual variable-node fraction."""
    return float(sum(nu_closed_form(spec, eps, x).values()))


def mu_closed_form(spec, eps, x):
    """Residual check-node fraction for every sub-type of total degree >= 2.

    Each original check type spreads over its sub-types with vector-binomial
    weights in lambda(eps, x); at x = 1 this reduces to the post-channel
    initial fractions.
    """
    lam = eval_lambda(spec, eps, x)
    one_m = 1.0 - lam
    out = {}
    for entry in subtype_table(spec):
        dtil = np.array(entry.dtil, dtype=np.int64)
        vals = (
            entry.coef
            * entry.binom
            * np.prod(lam[None, :] ** entry.subs, axis=1)
            * np.prod(one_m[None, :] ** (dtil[None, :] - entry.subs), axis=1)
        )
        for row, v in zip(entry.subs, vals):
            if int(row.sum()) < 2:
                continue
            key = tuple(int(k) for k in row)
            out[key] = out.get(key, 0.0) + float(v)
    return out


def mu1_closed_form(spec, eps, x):
    """Degree-1 check-node fraction per edge type (may go negative above
    threshold; the sign is meaningful and is not clamped here)."""
    x = _check_x(spec, x)
    lam = eval_lambda(spec, eps, x)
    rho_at = eval_rho(spec, 1.0 - lam)
    return nu_partial(spec, eps, x) * (x - 1.0 + rho_at)


def mu1_by_counting(spec, eps, x):
    """Same quantity as :func:`mu1_closed_form` via edge counting: total
    type-i edge mass minus type-i edges on checks of degree >= 2.  Exists
    solely as a cross-validation oracle."""
    dv = spec.dv_avg
    e = edge_fractions(spec, eps, x)
    higher = np.zeros(spec.ne)
    for d, v in mu_closed_form(spec, eps, x).items():
        for i, di in enumerate(d):
            if di:
                higher[i] += di * v
    return dv * e - higher


def edge_fractions(spec, eps, x):
    """Residual fraction of edges per type, relative to the total edge count."""
    x = _check_x(spec, x)
    efrac = _efrac(spec)
    lam = eval_lambda(spec, eps, x)
    return (efrac / spec.dv_avg) * x * lam


def lambda_time_derivative(spec, eps, x, xdot):
    """d lambda / dt along a path with velocity xdot, from exact partials."""
    jac = eval_lambda_partials(spec, eps, x)
    return jac @ np.asarray(xdot, dtype=float)


def expected_edges_deleted(spec, eps, x, gamma):
    """Expected total edges of each type deleted per iteration (sum form).

    Includes the peeled edge itself.  Raises if the schedule selects a type
    with (numerically) no remaining edges.
    """
    eps = _check_eps(spec, eps)
    x = _check_x(spec, x)
    gamma = _check_gamma(spec, gamma)
    e = edge_fractions(spec, eps, x)
    ratio = _gamma_over_e(gamma, e)
    coef, b, d = _varrays(spec)
    nu_vals = coef * np.prod(eps[None, :] ** b, axis=1) * np.prod(x[None, :] ** d, axis=1)
    inner = d @ ratio  # sum_i d_i gamma_i / e_i per variable term
    return (d.T @ (nu_vals * inner)) / spec.dv_avg


def expected_edges_deleted_closed(spec, eps, x, gamma):
    """Closed form of the same quantity: -(E_j/E) * d(x_j lambda_j)/dt with
    the path velocity implied by the change of variables."""
    e = edge_fractions(spec, eps, x)
    gamma = _check_gamma(spec, gamma)
    ratio = _gamma_over_e(gamma, e)
    xdot = -np.asarray(x, dtype=float) * ratio
    lam = eval_lambda(spec, eps, x)
    lamdot = lambda_time_derivative(spec, eps, x, xdot)
    efrac = _efrac(spec) / spec.dv_avg
    return -efrac * (xdot * lam + np.asarray(x, dtype=float) * lamdot)


def _check_gamma(spec, gamma):
    gamma = np.asarray(gamma, dtype=float)
    if gamma.shape != (spec.ne,):
        raise EnsembleError(f"gamma needs {spec.ne} entries, got shape {gamma.shape}")
    if np.any(gamma < -1e-12) or abs(gamma.sum() - 1.0) > 1e-9:
        raise EnsembleError(f"gamma must be a pmf over edge types, got {gamma}")
    return np.clip(gamma, 0.0, None)


def _gamma_over_e(gamma, e, tol=1e-300):
    ratio = np.zeros_like(gamma)
    for i, (g, ei) in enumerate(zip(gamma, e)):
        if g > 0.0:
            if ei <= tol:
                raise ExhaustedTypeError(f"schedule selects edge type {i + 1} with no remaining edges")
            ratio[i] = g / ei
    return ratio


def transition_rates(spec, eps, x, gamma):
    """Instantaneous mean rates for the node fractions.

    Returns (dnu, dmu): dnu maps (b, d) to the variable-type rate, dmu maps
    every residual check sub-type of degree >= 1 to its rate, including the
    schedule sink on the degree-1 types.
    """
    eps = _check_eps(spec, eps)
    x = _check_x(spec, x)
    gamma = _check_gamma(spec, gamma)
    e = edge_fractions(spec, eps, x)
    ratio = _gamma_over_e(gamma, e)

    coef, b, d = _varrays(spec)
    nu_vals = coef * np.prod(eps[None, :] ** b, axis=1) * np.prod(x[None, :] ** d, axis=1)
    inner = d @ ratio
    dnu = {
        (t.b, t.d): float(-v * s) for t, v, s in zip(spec.vnodes, nu_vals, inner)
    }

    atil = expected_edges_deleted(spec, eps, x, gamma)
    mu_vals = dict(mu_closed_form(spec, eps, x))
    mu1 = mu1_closed_form(spec, eps, x)
    for i in range(spec.ne):
        key = tuple(1 if j == i else 0 for j in range(spec.ne))
        mu_vals[key] = float(mu1[i])

    dv = spec.dv_avg
    dmu = {}
    for key in all_subtypes(spec):
        total = 0.0
        mu_d = mu_vals.get(key, 0.0)
        for j in range(spec.ne):
            up = list(key)
            up[j] += 1
            mu_up = mu_vals.get(tuple(up), 0.0)
            flow = atil[j] - gamma[j]
            if e[j] <= 1e-300:
                # no type-j edges left: both atil_j and gamma_j vanish
                continue
            total += ((key[j] + 1) * mu_up - key[j] * mu_d) * flow / e[j]
        if sum(key) == 1:
            total -= dv * gamma[key.index(1)]
        dmu[key] = total
    return dnu, dmu


def dmu_dt_direct(spec, eps, x, xdot):
    """Time derivative of the degree>=2 check fractions along a path,
    expressed through the log-derivative of lambda (for residual testing)."""
    lam = eval_lambda(spec, eps, x)
    lamdot = lambda_time_derivative(spec, eps, x, xdot)
    mu_vals = mu_closed_form(spec, eps, x)
    mu1 = mu1_closed_form(spec, eps, x)
    full = dict(mu_vals)
    for i in range(spec.ne):
        key = tuple(1 if j == i else 0 for j in range(spec.ne))
        full[key] = float(mu1[i])
    out = {}
    for key, mu_d in mu_vals.items():
        total = 0.0
        for j in range(spec.ne):
            if lam[j] == 0.0:
                continue
            up = list(key)
            up[j] += 1
            mu_up = full.get(tuple(up), 0.0)
            total += (-(key[j] + 1) * mu_up + key[j] * mu_d) * lamdot[j] / lam[j]
        out[key] = total
    return out


# ---------------------------------------------------------------------------
# Trajectory points
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EvolutionPoint:
    """One point of the mean trajectory (analytic fractions at (t, x))."""

    t: float
    x: np.ndarray
    xbar: float
    nu_fracs: dict  # (b, d) -> fraction
    mu_fracs: dict  # d -> fraction, degree >= 1 (degree-1 from the closed form)
    e: np.ndarray
    gamma: np.ndarray
    nu_total: float
    mu1: np.ndarray

    def clamped_mu1(self):
        """Degree-1 fractions with float-noise negatives zeroed for export."""
        return np.where((self.mu1 < 0.0) & (self.mu1 >= -1e-10), 0.0, self.mu1)


def xbar_of(spec, x):
    """Edge-count-weighted average of x (the figure's horizontal axis)."""
    w = _efrac(spec)
    return float(np.dot(np.asarray(x, dtype=float), w) / w.sum())


def evolution_point(spec, eps, x, t, gamma=None):
    x = np.asarray(x, dtype=float)
    mu1 = mu1_closed_form(spec, eps, x)
    mu = mu_closed_form(spec, eps, x)
    for i in range(spec.ne):
        key = tuple(1 if j == i else 0 for j in range(spec.ne))
        mu[key] = float(mu1[i])
    nu = nu_closed_form(spec, eps, x)
    if gamma is None:
        gamma = np.full(spec.ne, np.nan)
    return EvolutionPoint(
        t=float(t),
        x=x.copy(),
        xbar=xbar_of(spec, x),
        nu_fracs=nu,
        mu_fracs=mu,
        e=edge_fractions(spec, eps, x),
        gamma=np.asarray(gamma, dtype=float).copy(),
        nu_total=float(sum(nu.values())),
        mu1=mu1,
    )


# ---------------------------------------------------------------------------
# Fast per-path evaluator (eps folded in once)
# ---------------------------------------------------------------------------


class PathEvaluator:
    """Evaluates the handful of quantities the path ODE needs, with the
    erasure powers folded into the coefficients once per path."""

    def __init__(self, spec, eps):
        eps = _check_eps(spec, eps)
        self.spec = spec
        self.eps = eps
        self.ne = spec.ne
        self.efrac = _efrac(spec)
        self.dv = spec.dv_avg
        coef, b, d = _varrays(spec)
        epow = np.prod(eps[None, :] ** b, axis=1)
        self._v_w = coef * epow  # per-term weight with channel folded in
        self._v_d = d
        ccoef, cd = _carrays(spec)
        self._c_w = ccoef
        self._c_d = cd
        # per-edge-type slices for the derivative sums
        self._lam_rows = []
        for i in range(self.ne):
            mask = d[:, i] > 0
            exps = d[mask].copy()
            exps[:, i] -= 1
            self._lam_rows.append((self._v_w[mask] * d[mask, i], exps))
        self._rho_rows = []
        for i in range(self.ne):
            mask = cd[:, i] > 0
            exps = cd[mask].copy()
            exps[:, i] -= 1
            self._rho_rows.append((ccoef[mask] * cd[mask, i], exps))

    def lam(self, x):
        out = np.empty(self.ne)
        for i, (w, exps) in enumerate(self._lam_rows):
            out[i] = np.dot(w, np.prod(x[None, :] ** exps, axis=1))
        return out / self.efrac

    def rho(self, y):
        out = np.empty(self.ne)
        for i, (w, exps) in enumerate(self._rho_rows):
            out[i] = np.dot(w, np.prod(y[None, :] ** exps, axis=1))
        return out / self.efrac

    def core(self, x):
        """(lambda, e, mu1, nu_total) at x."""
        lam = self.lam(x)
        e = (self.efrac / self.dv) * x * lam
        mu1 = (self.efrac * lam) * (x - 1.0 + self.rho(1.0 - lam))
        nu_tot = float(np.dot(self._v_w, np.prod(x[None, :] ** self._v_d, axis=1)))
        return lam, e, mu1, nu_tot

    def nu_total(self, x):
        return float(np.dot(self._v_w, np.prod(x[None, :] ** self._v_d, axis=1)))
