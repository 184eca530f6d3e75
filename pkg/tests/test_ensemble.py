import json
from fractions import Fraction

import numpy as np
import pytest

from metpeel import (
    EnsembleError,
    EnsembleParseError,
    SocketBalanceError,
    derived,
    eval_lambda,
    eval_rho,
    parse_ensemble,
)
from metpeel.ensemble import CheckNodeTerm, EnsembleSpec, VariableNodeTerm

from conftest import RA_TEXT, random_point


# ---------------------------------------------------------------------------
# parse_ensemble
# ---------------------------------------------------------------------------


def test_parse_ra_ensemble():
    spec = parse_ensemble(RA_TEXT)
    assert spec.ne == 2 and spec.nr == 1
    assert spec.vnodes == (
        VariableNodeTerm(Fraction(1), (0, 1), (2, 0)),
        VariableNodeTerm(Fraction(1, 3), (1, 0), (0, 3)),
    )
    assert spec.cnodes == (CheckNodeTerm(Fraction(1), (2, 1)),)


def test_parse_regular_in_met_notation():
    spec = parse_ensemble("nu = r1*x1^3 ; mu = 0.5*x1^6")
    assert spec.ne == 1 and spec.nr == 1
    assert derived(spec).edge_frac_per_type == (3.0,)


def test_parse_socket_balance_error_reports_type():
    with pytest.raises(SocketBalanceError) as err:
        parse_ensemble("nu = r1*x1^2 ; mu = x1^2*x2")
    assert "type 2" in str(err.value)


def test_parse_syntax_error_has_position():
    with pytest.raises(EnsembleParseError) as err:
        parse_ensemble("nu = r1*x1^2 + @ ; mu = x1^2")
    assert err.value.pos == 15


def test_parse_unknown_edge_index():
    with pytest.raises(EnsembleParseError, match="x0"):
        parse_ensemble("nu = r1*x0 ; mu = x0")


def test_parse_duplicate_term_rejected():
    with pytest.raises(EnsembleError, match="duplicate"):
        parse_ensemble("nu = r1*x1 + 1/2*r1*x1 ; mu = 3/2*x1")


def test_parse_zero_coefficient_dropped():
    spec = parse_ensemble("nu = r1*x1^3 + 0*r1*x1 ; mu = 1/2*x1^6")
    assert len(spec.vnodes) == 1


def test_parse_json_form(ra):
    doc = json.dumps(ra.to_json_obj())
    assert parse_ensemble(doc) == ra


def test_parse_json_bad_dimensions(ra):
    doc = ra.to_json_obj()
    doc["nu"][0]["b"] = [0, 1, 0]  # channel index beyond nr
    with pytest.raises(EnsembleError, match="channel"):
        parse_ensemble(json.dumps(doc))


def test_rationals_kept_exact(ra):
    assert ra.vnodes[1].coef == Fraction(1, 3)


def test_roundtrip_text_and_json(all_specs):
    for spec in all_specs.values():
        assert parse_ensemble(spec.to_text()) == spec
        assert parse_ensemble(json.dumps(spec.to_json_obj())) == spec


# ---------------------------------------------------------------------------
# derived
# ---------------------------------------------------------------------------


def test_derived_ra(ra):
    dq = derived(ra)
    assert dq.edge_frac_per_type == (2.0, 1.0)
    assert dq.dv_avg == 3.0
    assert dq.rate_summary == pytest.approx(1.0 / 3.0)


def test_derived_regular(reg36):
    dq = derived(reg36)
    assert dq.edge_frac_per_type == (3.0,)
    assert dq.dv_avg == 3.0
    assert dq.rate_summary == pytest.approx(0.5)


def test_derived_identity(ident):
    dq = derived(ident)
    assert dq.edge_frac_per_type == (1.0,)
    assert dq.dv_avg == 1.0


# ---------------------------------------------------------------------------
# degree profiles
# ---------------------------------------------------------------------------


def test_lambda_ra_examples(ra):
    lam = eval_lambda(ra, np.array([1.0, 0.5]), np.ones(2))
    assert lam == pytest.approx([0.5, 1.0], abs=1e-15)
    lam = eval_lambda(ra, np.array([1.0, 0.6175]), np.array([0.5, 0.5]))
    assert lam == pytest.approx([0.30875, 0.25], abs=1e-15)


def test_lambda_normalization(all_specs):
    for spec in all_specs.values():
        lam = eval_lambda(spec, np.ones(spec.nr + 1), np.ones(spec.ne))
        assert lam == pytest.approx(np.ones(spec.ne), abs=1e-14)
        rho = eval_rho(spec, np.ones(spec.ne))
        assert rho == pytest.approx(np.ones(spec.ne), abs=1e-14)


def test_rho_examples(ra, reg36):
    assert eval_rho(ra, np.array([0.5, 0.5])) == pytest.approx([0.25, 0.25], abs=1e-15)
    assert eval_rho(reg36, np.array([0.8])) == pytest.approx([0.8**5], abs=1e-15)


def test_lambda_dimension_mismatch(ra):
    with pytest.raises(EnsembleError):
        eval_lambda(ra, np.array([1.0, 0.5, 0.5]), np.ones(2))
    with pytest.raises(EnsembleError):
        eval_lambda(ra, np.array([1.0, 0.5]), np.ones(3))


def test_socket_balance_invariant(all_specs):
    # nu_xi(1,1) must equal mu_xi(1) for every type
    from metpeel.ensemble import mu_partial, nu_partial

    for spec in all_specs.values():
        v = nu_partial(spec, np.ones(spec.nr + 1), np.ones(spec.ne))
        c = mu_partial(spec, np.ones(spec.ne))
        assert v == pytest.approx(c, rel=1e-12)


def test_profiles_monotone(all_specs, rng):
    for spec in all_specs.values():
        for _ in range(50):
            eps1, x1 = random_point(spec, rng)
            eps2 = np.minimum(1.0, eps1 + rng.uniform(0, 0.3, size=eps1.shape))
            eps2[0] = 1.0
            x2 = np.minimum(1.0, x1 + rng.uniform(0, 0.3, size=x1.shape))
            assert np.all(
                eval_lambda(spec, eps2, x2) >= eval_lambda(spec, eps1, x1) - 1e-12
            )
            assert np.all(eval_rho(spec, x2) >= eval_rho(spec, x1) - 1e-12)


def test_single_type_reduction_against_scalar_evaluator(rng):
    # irregular single-edge-type ensemble; classical edge-perspective forms
    spec = parse_ensemble("nu = 1/2*r1*x1^2 + 1/2*r1*x1^4 ; mu = 3/5*x1^5")
    # lambda(x) = sum lam_d x^(d-1) with lam_d = d*coef_d / E
    lam_coeff = {2: 0.5 * 2 / 3.0, 4: 0.5 * 4 / 3.0}
    rho_coeff = {5: 1.0}

    def lam_scalar(e1, x):
        return e1 * sum(c * x ** (d - 1) for d, c in lam_coeff.items())

    def rho_scalar(x):
        return sum(c * x ** (d - 1) for d, c in rho_coeff.items())

    for _ in range(25):
        e1 = rng.uniform(0, 1)
        x = rng.uniform(0, 1)
        lam = eval_lambda(spec, np.array([1.0, e1]), np.array([x]))
        rho = eval_rho(spec, np.array([x]))
        assert lam[0] == pytest.approx(lam_scalar(e1, x), abs=1e-13)
        assert rho[0] == pytest.approx(rho_scalar(x), abs=1e-13)


def test_multi_channel_b_vector_accepted():
    # b with two nonzero entries is legal; retention follows the product form
    spec = parse_ensemble("nu = r1^2*x1^2 ; mu = x1^2")
    lam = eval_lambda(spec, np.array([1.0, 0.5]), np.ones(1))
    assert lam[0] == pytest.approx(0.25)


def test_unused_edge_type_rejected():
    with pytest.raises(EnsembleError):
        parse_ensemble("nu = r1*x1*x3 ; mu = x1*x3")


def test_canonical_ordering_stable():
    a = parse_ensemble("nu = 1/3*r0*x2^3 + r1*x1^2 ; mu = x1^2*x2")
    b = parse_ensemble(RA_TEXT)
    assert a == b


def test_term_needs_an_edge_socket():
    with pytest.raises(EnsembleError):
        VariableNodeTerm(Fraction(1), (1,), (0,))
    with pytest.raises(EnsembleError):
        CheckNodeTerm(Fraction(1), (0, 0))


def test_spec_needs_both_sides():
    with pytest.raises(EnsembleError):
        EnsembleSpec(1, 0, (VariableNodeTerm(Fraction(1), (1,), (1,)),), ())
