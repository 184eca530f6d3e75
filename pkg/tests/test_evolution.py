import math
from itertools import product

import numpy as np
import pytest

from metpeel.evolution import (
    ExhaustedTypeError,
    dmu_dt_direct,
    edge_fractions,
    erasure_vector,
    evolution_point,
    expected_edges_deleted,
    expected_edges_deleted_closed,
    mu1_by_counting,
    mu1_closed_form,
    mu_closed_form,
    nu_closed_form,
    nu_total,
    subtype_table,
    transition_rates,
)

from conftest import random_point

E1 = np.ones(2)


# ---------------------------------------------------------------------------
# independent oracles, coded directly from the defining formulas
# ---------------------------------------------------------------------------


def oracle_nu_initial(spec, eps):
    """Initial variable fractions: coef * prod eps_k^b_k, straight product."""
    out = {}
    for term in spec.vnodes:
        v = float(term.coef)
        for k, bk in enumerate(term.b):
            v *= eps[k] ** bk
        out[(term.b, term.d)] = v
    return out


def oracle_lambda_at_one(spec, eps):
    """lambda_i(eps, 1) as the socket-weighted average of retention probs."""
    lam = []
    for i in range(spec.ne):
        num = 0.0
        den = 0.0
        for term in spec.vnodes:
            p = 1.0
            for k, bk in enumerate(term.b):
                p *= eps[k] ** bk
            num += term.d[i] * float(term.coef) * p
            den += term.d[i] * float(term.coef)
        lam.append(num / den)
    return lam


def oracle_mu_initial(spec, eps):
    """Initial check fractions over every sub-type (all degrees >= 0)."""
    lam = oracle_lambda_at_one(spec, eps)
    out = {}
    for term in spec.cnodes:
        for sub in product(*(range(k + 1) for k in term.d)):
            w = float(term.coef)
            for i in range(spec.ne):
                w *= (
                    math.comb(term.d[i], sub[i])
                    * lam[i] ** sub[i]
                    * (1.0 - lam[i]) ** (term.d[i] - sub[i])
                )
            out[sub] = out.get(sub, 0.0) + w
    return out


# ---------------------------------------------------------------------------
# nu closed form
# ---------------------------------------------------------------------------


def test_nu_closed_form_ra_examples(ra):
    eps = erasure_vector(ra, 0.6175)
    vals = nu_closed_form(ra, eps, E1)
    assert vals[((0, 1), (2, 0))] == pytest.approx(0.6175, abs=1e-15)
    assert vals[((1, 0), (0, 3))] == pytest.approx(1 / 3, abs=1e-15)
    vals = nu_closed_form(ra, eps, np.array([0.5, 0.5]))
    assert vals[((0, 1), (2, 0))] == pytest.approx(0.154375, abs=1e-15)
    assert vals[((1, 0), (0, 3))] == pytest.approx(1 / 24, abs=1e-15)


def test_nu_closed_form_identity_case(all_specs):
    for spec in all_specs.values():
        vals = nu_closed_form(spec, np.ones(spec.nr + 1), np.ones(spec.ne))
        for term in spec.vnodes:
            assert vals[(term.b, term.d)] == pytest.approx(float(term.coef), abs=1e-15)


# ---------------------------------------------------------------------------
# mu closed form
# ---------------------------------------------------------------------------


def test_mu_closed_form_ra_examples(ra):
    eps = erasure_vector(ra, 0.6175)
    vals = mu_closed_form(ra, eps, E1)
    assert vals[(2, 1)] == pytest.approx(0.6175**2, abs=1e-15)
    assert vals[(1, 1)] == pytest.approx(2 * 0.6175 * 0.3825, abs=1e-15)


def test_mu_closed_form_all_ones(all_specs):
    for spec in all_specs.values():
        vals = mu_closed_form(spec, np.ones(spec.nr + 1), np.ones(spec.ne))
        originals = {t.d: float(t.coef) for t in spec.cnodes}
        for d, v in vals.items():
            assert v == pytest.approx(originals.get(d, 0.0), abs=1e-14)


def test_subtype_table_shapes(ra):
    table = subtype_table(ra)
    assert len(table) == 1
    entry = table[0]
    assert entry.subs.shape == (6, 2)  # (2+1)*(1+1)
    full = np.array(entry.dtil)
    k_full = np.flatnonzero((entry.subs == full).all(axis=1))[0]
    assert entry.binom[k_full] == 1.0
    k_zero = np.flatnonzero((entry.subs == 0).all(axis=1))[0]
    assert entry.binom[k_zero] == 1.0


# ---------------------------------------------------------------------------
# degree-1 closed form and the counting oracle
# ---------------------------------------------------------------------------


def test_mu1_ra_initial(ra):
    eps = erasure_vector(ra, 0.6175)
    mu1 = mu1_closed_form(ra, eps, E1)
    assert mu1 == pytest.approx([0.0, 0.3825**2], abs=1e-15)
    assert mu1_by_counting(ra, eps, E1) == pytest.approx(mu1, abs=1e-13)


def test_mu1_regular_trivial_and_crosscheck(reg36):
    # at eps=1 nothing is known, so no degree-1 checks exist at x=1
    assert mu1_closed_form(reg36, erasure_vector(reg36, 1.0), np.ones(1)) == pytest.approx([0.0], abs=1e-15)
    # generic point: the two independent derivations must coincide
    eps = erasure_vector(reg36, 0.42)
    x = np.array([0.9])
    a = mu1_closed_form(reg36, eps, x)
    b = mu1_by_counting(reg36, eps, x)
    assert abs(a[0] - b[0]) < 1e-12
    # and both match the classical single-type expression
    classical = 3 * 0.42 * 0.9**2 * (0.9 - 1 + (1 - 0.42 * 0.9**2) ** 5)
    assert a[0] == pytest.approx(classical, abs=1e-15)


def test_mu1_equivalence_random_points(all_specs, rng):
    for spec in all_specs.values():
        for _ in range(30):
            eps, x = random_point(spec, rng)
            a = mu1_closed_form(spec, eps, x)
            b = mu1_by_counting(spec, eps, x)
            assert np.max(np.abs(a - b)) < 1e-12


def test_single_type_classical_form(reg36, rng):
    for _ in range(20):
        e1 = rng.uniform(0, 1)
        x = rng.uniform(0, 1)
        got = mu1_closed_form(reg36, np.array([1.0, e1]), np.array([x]))[0]
        want = 3 * e1 * x**2 * (x - 1 + (1 - e1 * x**2) ** 5)
        assert abs(got - want) < 1e-12


# ---------------------------------------------------------------------------
# initial conditions against the independent oracles
# ---------------------------------------------------------------------------


def test_initial_conditions_against_oracles(all_specs, rng):
    for spec in all_specs.values():
        for _ in range(20):
            eps = np.concatenate(([1.0], rng.uniform(0, 1, size=spec.nr)))
            ones = np.ones(spec.ne)
            nu = nu_closed_form(spec, eps, ones)
            want_nu = oracle_nu_initial(spec, eps)
            for key, v in want_nu.items():
                assert abs(nu[key] - v) < 1e-12
            mu = mu_closed_form(spec, eps, ones)
            mu1 = mu1_closed_form(spec, eps, ones)
            want_mu = oracle_mu_initial(spec, eps)
            for d, v in want_mu.items():
                deg = sum(d)
                if deg >= 2:
                    assert abs(mu[d] - v) < 1e-12
                elif deg == 1:
                    i = d.index(1)
                    assert abs(mu1[i] - v) < 1e-12


# ---------------------------------------------------------------------------
# edge fractions and conservation
# ---------------------------------------------------------------------------


def test_edge_fractions_examples(ra):
    eps = erasure_vector(ra, 0.6175)
    assert edge_fractions(ra, eps, E1) == pytest.approx([2 / 3 * 0.6175, 1 / 3], abs=1e-15)
    assert edge_fractions(ra, np.ones(2), E1) == pytest.approx([2 / 3, 1 / 3], abs=1e-15)
    assert edge_fractions(ra, eps, np.array([0.5, 0.5])) == pytest.approx(
        [2 / 3 * 0.5 * 0.30875, 1 / 3 * 0.5 * 0.25], abs=1e-15
    )


def test_edge_conservation(all_specs, rng):
    for spec in all_specs.values():
        dv = spec.dv_avg
        for _ in range(10):
            eps, x = random_point(spec, rng)
            e = edge_fractions(spec, eps, x)
            nu = nu_closed_form(spec, eps, x)
            vn_side = np.zeros(spec.ne)
            for (b, d), v in nu.items():
                vn_side += np.array(d) * v
            assert vn_side == pytest.approx(dv * e, abs=1e-8)
            mu = mu_closed_form(spec, eps, x)
            mu1 = mu1_closed_form(spec, eps, x)
            cn_side = mu1.copy()
            for d, v in mu.items():
                cn_side += np.array(d) * v
            assert cn_side == pytest.approx(dv * e, abs=1e-8)


# ---------------------------------------------------------------------------
# expected edges deleted
# ---------------------------------------------------------------------------


def test_expected_edges_deleted_ra_start(ra):
    eps = erasure_vector(ra, 0.6175)
    atil = expected_edges_deleted(ra, eps, E1, np.array([0.0, 1.0]))
    assert atil == pytest.approx([0.0, 3.0], abs=1e-12)


def test_expected_edges_deleted_regular_start(reg36):
    eps = erasure_vector(reg36, 0.5)
    atil = expected_edges_deleted(reg36, eps, np.ones(1), np.array([1.0]))
    assert atil == pytest.approx([3.0], abs=1e-12)


def _fd_product_derivative(spec, eps, x, gamma, h=1e-4):
    """5-point central difference of x_j*lambda_j along the path direction."""
    from metpeel.ensemble import eval_lambda

    e = edge_fractions(spec, eps, x)
    xdot = np.zeros(spec.ne)
    for i in range(spec.ne):
        if gamma[i] > 0:
            xdot[i] = -x[i] * gamma[i] / e[i]

    def prod_at(tau):
        xs = np.clip(x + tau * xdot, 1e-12, None)
        return xs * eval_lambda(spec, eps, xs)

    return (-prod_at(2 * h) + 8 * prod_at(h) - 8 * prod_at(-h) + prod_at(-2 * h)) / (12 * h)


def test_edges_deleted_sum_vs_closed_fd(all_specs, rng):
    # sum form against the closed form with the derivative taken by central
    # finite differences along the current path direction
    for spec in all_specs.values():
        for _ in range(10):
            eps, x = random_point(spec, rng, eps_low=0.2, x_low=0.3)
            w = rng.uniform(0.05, 1.0, size=spec.ne)
            gamma = w / w.sum()
            atil = expected_edges_deleted(spec, eps, x, gamma)
            efrac = np.array(spec.edge_frac_per_type) / spec.dv_avg
            closed_fd = -efrac * _fd_product_derivative(spec, eps, x, gamma)
            assert np.max(np.abs(atil - closed_fd)) < 1e-10


def test_edges_deleted_sum_vs_closed_exact(all_specs, rng):
    for spec in all_specs.values():
        for _ in range(10):
            eps, x = random_point(spec, rng, eps_low=0.2, x_low=0.3)
            w = rng.uniform(0.05, 1.0, size=spec.ne)
            gamma = w / w.sum()
            a = expected_edges_deleted(spec, eps, x, gamma)
            b = expected_edges_deleted_closed(spec, eps, x, gamma)
            assert np.max(np.abs(a - b)) < 1e-12


def test_exhausted_type_selection_raises(ra):
    eps = erasure_vector(ra, 0.5)
    x = np.array([1.0, 0.0])  # no type-2 edges left
    with pytest.raises(ExhaustedTypeError):
        expected_edges_deleted(ra, eps, x, np.array([0.0, 1.0]))


def test_edges_deleted_at_least_the_peeled_edge(all_specs, rng):
    # every deletion removes at least the peeled edge itself
    for spec in all_specs.values():
        for _ in range(10):
            eps, x = random_point(spec, rng, eps_low=0.2, x_low=0.3)
            w = rng.uniform(0.05, 1.0, size=spec.ne)
            gamma = w / w.sum()
            atil = expected_edges_deleted(spec, eps, x, gamma)
            assert np.all(atil >= gamma - 1e-12)


# ---------------------------------------------------------------------------
# transition rates
# ---------------------------------------------------------------------------


def test_transition_rates_ra_start(ra):
    eps = erasure_vector(ra, 0.6175)
    dnu, dmu = transition_rates(ra, eps, E1, np.array([0.0, 1.0]))
    assert dnu[((1, 0), (0, 3))] == pytest.approx(-3.0, abs=1e-12)
    assert dnu[((0, 1), (2, 0))] == pytest.approx(0.0, abs=1e-12)
    assert all(v <= 1e-12 for v in dnu.values())


def test_transition_rate_zero_for_unselected_type(ra):
    # gamma puts no weight on any type the punctured term touches
    eps = erasure_vector(ra, 0.6175)
    dnu, _ = transition_rates(ra, eps, E1, np.array([1.0, 0.0]))
    assert dnu[((1, 0), (0, 3))] == pytest.approx(0.0, abs=1e-15)


def test_transition_rates_include_degree1_sink(ra):
    eps = erasure_vector(ra, 0.6175)
    _, dmu = transition_rates(ra, eps, E1, np.array([0.0, 1.0]))
    # the selected type's degree-1 fraction loses dv * gamma plus transfers
    assert dmu[(0, 1)] < -2.9


# ---------------------------------------------------------------------------
# ODE residual (the closed form solves the system)
# ---------------------------------------------------------------------------


def _smooth_path(spec, rng):
    a = rng.uniform(0.2, 1.5, size=spec.ne)
    c = rng.uniform(0.0, 0.5, size=spec.ne)

    def x_of(t):
        return np.exp(-a * t - c * t * t)

    def xdot_of(t):
        return -(a + 2 * c * t) * x_of(t)

    return x_of, xdot_of


def test_ode_residual_along_smooth_paths(all_specs, rng):
    h = 1e-6
    for spec in all_specs.values():
        for _ in range(4):
            eps = np.concatenate(([1.0], rng.uniform(0.3, 1.0, size=spec.nr)))
            x_of, xdot_of = _smooth_path(spec, rng)
            t0 = rng.uniform(0.05, 0.5)
            direct = dmu_dt_direct(spec, eps, x_of(t0), xdot_of(t0))
            up = mu_closed_form(spec, eps, x_of(t0 + h))
            dn = mu_closed_form(spec, eps, x_of(t0 - h))
            for d, rate in direct.items():
                fd = (up[d] - dn[d]) / (2 * h)
                assert abs(fd - rate) <= 1e-6 * max(1.0, abs(rate))


# ---------------------------------------------------------------------------
# evolution points
# ---------------------------------------------------------------------------


def test_evolution_point_consistency(ra):
    eps = erasure_vector(ra, 0.6)
    x = np.array([0.8, 0.7])
    p = evolution_point(ra, eps, x, 0.1, np.array([0.4, 0.6]))
    assert p.nu_total == pytest.approx(nu_total(ra, eps, x), abs=1e-15)
    assert p.xbar == pytest.approx((0.8 * 2 + 0.7 * 1) / 3, abs=1e-15)
    dv = ra.dv_avg
    for i in range(ra.ne):
        vn = sum(np.array(d)[i] * v for (b, d), v in p.nu_fracs.items())
        cn = sum(np.array(d)[i] * v for d, v in p.mu_fracs.items())
        assert vn == pytest.approx(dv * p.e[i], abs=1e-8)
        assert cn == pytest.approx(dv * p.e[i], abs=1e-8)


def test_evolution_point_clamps_noise_only(ra):
    eps = erasure_vector(ra, 0.6175)
    p = evolution_point(ra, eps, E1, 0.0)
    clamped = p.clamped_mu1()
    assert np.all(clamped >= 0.0)
    # genuinely negative values (above threshold) are preserved
    p2 = evolution_point(ra, eps, np.array([0.6, 0.9]), 0.1)
    if (p2.mu1 < -1e-10).any():
        assert np.array_equal(p2.clamped_mu1(), p2.mu1)
