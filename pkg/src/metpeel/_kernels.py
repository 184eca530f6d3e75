"""Hot numerical kernels, JIT-compiled when numba is available.

Everything here is written as plain loop code over flat arrays so the same
source runs interpreted when numba is missing (slow but identical results).
The path kernels evaluate the handful of polynomial quantities the decoding
ODE needs and advance one RK4 step with an embedded step-doubling error
estimate; the schedule pmf lives here too so the analytic path and the
sampled-graph decoder share one implementation.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dep, but stay importable
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]):
            return args[0]

        def wrap(fn):
            return fn

        return wrap


# schedule codes shared by pathsim and decoder
SCHED_NATURAL = 0
SCHED_UNIFORM = 1
SCHED_PRIORITY = 2
SCHED_PROP_E = 3
SCHED_CUSTOM = 4
SCHED_FIXED = 5

# try_step status codes
STEP_OK = 0
STEP_STALL = 1
STEP_BAD = 2


@njit(cache=True, nogil=True)
def gamma_eval(mu1, e, live, code, order, weights, tau):
    """Schedule pmf at a state.  Returns (ok, gamma, support_mask)."""
    ne = mu1.shape[0]
    g = np.zeros(ne)
    mask = 0
    if code == SCHED_NATURAL:
        s = 0.0
        for i in range(ne):
            if live[i] and mu1[i] > 0.0:
                g[i] = mu1[i]
                s += mu1[i]
                mask |= 1 << i
        if s <= tau:
            return False, g, mask
        for i in range(ne):
            g[i] /= s
        return True, g, mask
    if code == SCHED_UNIFORM:
        n = 0
        for i in range(ne):
            if live[i] and mu1[i] > tau:
                n += 1
                mask |= 1 << i
        if n == 0:
            return False, g, mask
        for i in range(ne):
            if live[i] and mu1[i] > tau:
                g[i] = 1.0 / n
        return True, g, mask
    if code == SCHED_PRIORITY:
        for k in range(order.shape[0]):
            i = order[k]
            if live[i] and mu1[i] > tau:
                g[i] = 1.0
                mask |= 1 << i
                return True, g, mask
        return False, g, mask
    if code == SCHED_PROP_E:
        s = 0.0
        for i in range(ne):
            if live[i] and mu1[i] > tau:
                g[i] = e[i]
                s += e[i]
                mask |= 1 << i
        if s <= 0.0:
            return False, g, mask
        for i in range(ne):
            g[i] /= s
        return True, g, mask
    if code == SCHED_CUSTOM:
        s = 0.0
        for i in range(ne):
            if live[i] and mu1[i] > tau:
                g[i] = weights[i]
                s += weights[i]
                mask |= 1 << i
        if s <= 0.0:
            return False, g, mask
        for i in range(ne):
            g[i] /= s
        return True, g, mask
    # SCHED_FIXED: ignores availability; fails as soon as it would draw an
    # exhausted type
    for i in range(ne):
        if weights[i] > 0.0:
            if mu1[i] <= tau:
                return False, g, mask
            mask |= 1 << i
        g[i] = weights[i]
    return True, g, mask


@njit(cache=True, nogil=True)
def core_eval(x, lam_w, lam_exp, lam_ptr, rho_w, rho_exp, rho_ptr, v_w, v_d, efrac, dv):
    """(lambda, e, mu1, nu_total) at x for one ensemble."""
    ne = x.shape[0]
    lam = np.empty(ne)
    for i in range(ne):
        s = 0.0
        for r in range(lam_ptr[i], lam_ptr[i + 1]):
            p = lam_w[r]
            for j in range(ne):
                k = lam_exp[r, j]
                if k == 1:
                    p *= x[j]
                elif k > 1:
                    p *= x[j] ** k
            s += p
        lam[i] = s / efrac[i]
    y = np.empty(ne)
    for i in range(ne):
        y[i] = 1.0 - lam[i]
    rho = np.empty(ne)
    for i in range(ne):
        s = 0.0
        for r in range(rho_ptr[i], rho_ptr[i + 1]):
            p = rho_w[r]
            for j in range(ne):
                k = rho_exp[r, j]
                if k == 1:
                    p *= y[j]
                elif k > 1:
                    p *= y[j] ** k
            s += p
        rho[i] = s / efrac[i]
    e = np.empty(ne)
    mu1 = np.empty(ne)
    for i in range(ne):
        e[i] = (efrac[i] / dv) * x[i] * lam[i]
        mu1[i] = (efrac[i] * lam[i]) * (x[i] - 1.0 + rho[i])
    nuv = 0.0
    for r in range(v_w.shape[0]):
        p = v_w[r]
        for j in range(ne):
            k = v_d[r, j]
            if k == 1:
                p *= x[j]
            elif k > 1:
                p *= x[j] ** k
        nuv += p
    return lam, e, mu1, nuv


@njit(cache=True, nogil=True)
def state_eval(x, frozen, lam_w, lam_exp, lam_ptr, rho_w, rho_exp, rho_ptr, v_w, v_d, efrac, dv, tau):
    """(e, mu1, nuv, total_degree1, frozen_new) at x with sticky freezing."""
    ne = x.shape[0]
    lam, e, mu1, nuv = core_eval(x, lam_w, lam_exp, lam_ptr, rho_w, rho_exp, rho_ptr, v_w, v_d, efrac, dv)
    frozen_new = np.empty(ne, dtype=np.bool_)
    total1 = 0.0
    for i in range(ne):
        frozen_new[i] = frozen[i] or e[i] <= tau
        if not frozen_new[i] and mu1[i] > 0.0:
            total1 += mu1[i]
    return e, mu1, nuv, total1, frozen_new


@njit(cache=True, nogil=True)
def _deriv(x, frozen, code, order, weights, tau, lam_w, lam_exp, lam_ptr, rho_w, rho_exp, rho_ptr, v_w, v_d, efrac, dv):
    """dx/dt = -x * gamma / e.  Returns (status, dx, support_mask)."""
    ne = x.shape[0]
    lam, e, mu1, nuv = core_eval(x, lam_w, lam_exp, lam_ptr, rho_w, rho_exp, rho_ptr, v_w, v_d, efrac, dv)
    live = np.empty(ne, dtype=np.bool_)
    for i in range(ne):
        live[i] = (not frozen[i]) and e[i] > tau
    ok, g, mask = gamma_eval(mu1, e, live, code, order, weights, tau)
    dx = np.zeros(ne)
    if not ok:
        return STEP_STALL, dx, mask
    for i in range(ne):
        if g[i] > 0.0:
            if e[i] <= tau:
                return STEP_BAD, dx, mask
            dx[i] = -x[i] * g[i] / e[i]
    return STEP_OK, dx, mask


@njit(cache=True, nogil=True)
def _rk4(x, h, frozen, code, order, weights, tau, lam_w, lam_exp, lam_ptr, rho_w, rho_exp, rho_ptr, v_w, v_d, efrac, dv):
    """One classical RK4 step.  Returns (status, x_new, combined support mask)."""
    ne = x.shape[0]
    st, k1, m1 = _deriv(x, frozen, code, order, weights, tau, lam_w, lam_exp, lam_ptr, rho_w, rho_exp, rho_ptr, v_w, v_d, efrac, dv)
    if st != STEP_OK:
        return st, x, m1
    xs = np.empty(ne)
    for i in range(ne):
        v = x[i] + 0.5 * h * k1[i]
        xs[i] = v if v > 1e-300 else 1e-300
    st, k2, m2 = _deriv(xs, frozen, code, order, weights, tau, lam_w, lam_exp, lam_ptr, rho_w, rho_exp, rho_ptr, v_w, v_d, efrac, dv)
    if st != STEP_OK:
        return st, x, m1 | m2
    for i in range(ne):
        v = x[i] + 0.5 * h * k2[i]
        xs[i] = v if v > 1e-300 else 1e-300
    st, k3, m3 = _deriv(xs, frozen, code, order, weights, tau, lam_w, lam_exp, lam_ptr, rho_w, rho_exp, rho_ptr, v_w, v_d, efrac, dv)
    if st != STEP_OK:
        return st, x, m1 | m2 | m3
    for i in range(ne):
        v = x[i] + h * k3[i]
        xs[i] = v if v > 1e-300 else 1e-300
    st, k4, m4 = _deriv(xs, frozen, code, order, weights, tau, lam_w, lam_exp, lam_ptr, rho_w, rho_exp, rho_ptr, v_w, v_d, efrac, dv)
    mask = m1 | m2 | m3 | m4
    if st != STEP_OK:
        return st, x, mask
    out = np.empty(ne)
    for i in range(ne):
        out[i] = x[i] + (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    return STEP_OK, out, mask


@njit(cache=True, nogil=True)
def try_step(x, h, frozen, code, order, weights, tau, lam_w, lam_exp, lam_ptr, rho_w, rho_exp, rho_ptr, v_w, v_d, efrac, dv):
    """Advance by h with a step-doubling error estimate.

    Returns (status, x_new, err, mixed, e2, mu12, nuv2, total12, frozen2).
    ``mixed`` flags that the schedule support changed across the stage
    evaluations (a gamma discontinuity crossed the step: the error estimate
    is then first-order and the caller may accept anyway at a capped step).
    x_new is the two-half-step solution with local extrapolation, clamped to
    stay componentwise nonincreasing and positive.
    """
    ne = x.shape[0]
    zeros = np.zeros(ne)
    st_f, x_full, m_f = _rk4(x, h, frozen, code, order, weights, tau, lam_w, lam_exp, lam_ptr, rho_w, rho_exp, rho_ptr, v_w, v_d, efrac, dv)
    if st_f != STEP_OK:
        return st_f, x, 0.0, False, zeros, zeros, 0.0, 0.0, frozen
    st_a, x_half, m_a = _rk4(x, 0.5 * h, frozen, code, order, weights, tau, lam_w, lam_exp, lam_ptr, rho_w, rho_exp, rho_ptr, v_w, v_d, efrac, dv)
    if st_a != STEP_OK:
        return st_a, x, 0.0, False, zeros, zeros, 0.0, 0.0, frozen
    st_b, x_two, m_b = _rk4(x_half, 0.5 * h, frozen, code, order, weights, tau, lam_w, lam_exp, lam_ptr, rho_w, rho_exp, rho_ptr, v_w, v_d, efrac, dv)
    if st_b != STEP_OK:
        return st_b, x, 0.0, False, zeros, zeros, 0.0, 0.0, frozen
    mixed = not (m_f == m_a and m_a == m_b)
    err = 0.0
    x_new = np.empty(ne)
    for i in range(ne):
        d = x_two[i] - x_full[i]
        if d < 0.0:
            d = -d
        if d > err:
            err = d
        v = x_two[i] + (x_two[i] - x_full[i]) / 15.0
        if not np.isfinite(v):
            return STEP_BAD, x, 0.0, mixed, zeros, zeros, 0.0, 0.0, frozen
        if v > x[i]:
            v = x[i]
        if v < 1e-300:
            v = 1e-300
        x_new[i] = v
    e2, mu12, nuv2, total12, frozen2 = state_eval(
        x_new, frozen, lam_w, lam_exp, lam_ptr, rho_w, rho_exp, rho_ptr, v_w, v_d, efrac, dv, tau
    )
    return STEP_OK, x_new, err, mixed, e2, mu12, nuv2, total12, frozen2
