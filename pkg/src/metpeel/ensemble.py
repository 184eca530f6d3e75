"""Multi-edge-type ensemble specifications.

An ensemble is described by a pair of multivariate node-type polynomials:
one for the variable side (channel variables ``r0..r<nr>`` and edge-type
variables ``x1..x<ne>``) and one for the check side (edge-type variables
only).  Channel index 0 is the punctured channel.  This module owns parsing,
validation, serialization and the per-edge-type degree profiles; everything
downstream (closed forms, path integration, sampling) consumes the validated
spec.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

MAX_DEGREE = 64  # per edge type; bounds check-node sub-type enumeration

__all__ = [
    "EnsembleError",
    "EnsembleParseError",
    "SocketBalanceError",
    "VariableNodeTerm",
    "CheckNodeTerm",
    "EnsembleSpec",
    "DerivedQuantities",
    "parse_ensemble",
    "load_ensemble",
    "derived",
    "eval_lambda",
    "eval_rho",
    "eval_lambda_partials",
    "eval_rho_partials",
]


class EnsembleError(ValueError):
    """Invalid ensemble definition."""


class EnsembleParseError(EnsembleError):
    """Syntax error in a polynomial ensemble string (carries a position)."""

    def __init__(self, message, pos):
        super().__init__(f"{message} (at position {pos})")
        self.pos = pos


class SocketBalanceError(EnsembleError):
    """Per-edge-type socket sums disagree between the two sides."""

    def __init__(self, mismatches):
        detail = "; ".join(
            f"type {i}: variable side {v}, check side {c}" for i, v, c in mismatches
        )
        super().__init__(f"socket balance violated: {detail}")
        self.mismatches = mismatches


@dataclass(frozen=True)
class VariableNodeTerm:
    """One variable-node type: fraction ``coef`` of nodes with channel
    exponents ``b`` (length nr+1, index 0 punctured) and edge-type socket
    counts ``d`` (length ne)."""

    coef: object
    b: tuple
    d: tuple

    def __post_init__(self):
        if not self.coef > 0:
            raise EnsembleError(f"variable term coefficient must be > 0, got {self.coef}")
        if all(k == 0 for k in self.d):
            raise EnsembleError("variable node must have at least one edge socket")
        _check_exponents(self.b, "channel")
        _check_exponents(self.d, "edge")


@dataclass(frozen=True)
class CheckNodeTerm:
    """One check-node type: fraction ``coef`` of nodes with edge-type socket
    counts ``d`` (length ne)."""

    coef: object
    d: tuple

    def __post_init__(self):
        if not self.coef > 0:
            raise EnsembleError(f"check term coefficient must be > 0, got {self.coef}")
        if all(k == 0 for k in self.d):
            raise EnsembleError("check node must have at least one edge socket")
        _check_exponents(self.d, "edge")


def _check_exponents(vec, what):
    for k in vec:
        if not isinstance(k, int) or k < 0:
            raise EnsembleError(f"{what} exponents must be nonnegative integers, got {vec}")
        if k > MAX_DEGREE:
            raise EnsembleError(f"{what} degree {k} exceeds the supported maximum {MAX_DEGREE}")


@dataclass(frozen=True)
class EnsembleSpec:
    """A validated multi-edge-type ensemble.

    Terms are kept in canonical order (lexicographic by (b, d) on the
    variable side, by d on the check side) so serialization is stable.
    """

    ne: int
    nr: int
    vnodes: tuple
    cnodes: tuple

    def __post_init__(self):
        if self.ne < 1:
            raise EnsembleError("need at least one edge type")
        if self.nr < 0:
            raise EnsembleError("nr must be nonnegative")
        if not self.vnodes or not self.cnodes:
            raise EnsembleError("both node polynomials need at least one term")
        for t in self.vnodes:
            if len(t.b) != self.nr + 1 or len(t.d) != self.ne:
                raise EnsembleError(f"term {t} does not match ne={self.ne}, nr={self.nr}")
        for t in self.cnodes:
            if len(t.d) != self.ne:
                raise EnsembleError(f"term {t} does not match ne={self.ne}")
        _check_unique([(t.b, t.d) for t in self.vnodes], "variable")
        _check_unique([t.d for t in self.cnodes], "check")
        object.__setattr__(self, "vnodes", _canonical_v(self.vnodes))
        object.__setattr__(self, "cnodes", _canonical_c(self.cnodes))
        _check_socket_balance(self)

    # -- derived scalar shortcuts -------------------------------------------

    @property
    def edge_frac_per_type(self):
        """E_i/N per edge type, as floats."""
        return tuple(
            float(sum(t.coef * t.d[i] for t in self.vnodes)) for i in range(self.ne)
        )

    @property
    def dv_avg(self):
        """Average variable-node degree E/N."""
        return float(sum(self.edge_frac_per_type))

    def to_json_obj(self):
        return {
            "ne": self.ne,
            "nr": self.nr,
            "nu": [
                {"coef": _coef_out(t.coef), "b": list(t.b), "d": list(t.d)}
                for t in self.vnodes
            ],
            "mu": [{"coef": _coef_out(t.coef), "d": list(t.d)} for t in self.cnodes],
        }

    def to_text(self):
        nu = " + ".join(_term_text(t.coef, t.b, t.d) for t in self.vnodes)
        mu = " + ".join(_term_text(t.coef, None, t.d) for t in self.cnodes)
        return f"nu = {nu} ; mu = {mu}"


@dataclass(frozen=True)
class DerivedQuantities:
    """Edge counts and rate summary derived from a spec."""

    edge_frac_per_type: tuple  # E_i/N
    dv_avg: float  # E/N
    rate_summary: float  # informational designed rate per transmitted bit


def _check_unique(keys, side):
    seen = set()
    for k in keys:
        if k in seen:
            raise EnsembleError(f"duplicate {side} term for type {k}")
        seen.add(k)


def _canonical_v(terms):
    return tuple(sorted(terms, key=lambda t: (t.b, t.d)))


def _canonical_c(terms):
    return tuple(sorted(terms, key=lambda t: t.d))


def _check_socket_balance(spec):
    """Each edge type must have equal socket mass on both sides.

    Exact comparison when every contributing coefficient is a Fraction,
    otherwise relative tolerance 1e-12.
    """
    mismatches = []
    for i in range(spec.ne):
        v_terms = [(t.coef, t.d[i]) for t in spec.vnodes if t.d[i] > 0]
        c_terms = [(t.coef, t.d[i]) for t in spec.cnodes if t.d[i] > 0]
        exact = all(isinstance(c, Fraction) for c, _ in v_terms + c_terms)
        if exact:
            v = sum((c * k for c, k in v_terms), start=Fraction(0))
            c = sum((c * k for c, k in c_terms), start=Fraction(0))
            if v != c:
                mismatches.append((i + 1, str(v), str(c)))
        else:
            v = float(sum(float(c) * k for c, k in v_terms))
            c = float(sum(float(c) * k for c, k in c_terms))
            if abs(v - c) > 1e-12 * max(abs(v), abs(c), 1.0):
                mismatches.append((i + 1, repr(v), repr(c)))
        if not v_terms and not c_terms:
            raise EnsembleError(f"edge type {i + 1} has no sockets on either side")
    if mismatches:
        raise SocketBalanceError(mismatches)


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+(?:\.\d*)?(?:[eE][+-]?\d+)?|\.\d+)"
    r"|(?P<var>[rx]\d+)"
    r"|(?P<op>[=+*^;/])"
    r"|(?P<name>[A-Za-z_]+))"
)


def _tokenize(text):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            rest = text[pos:].lstrip()
            if not rest:
                break
            at = pos + (len(text) - pos - len(rest))
            raise EnsembleParseError(f"unexpected character {rest[0]!r}", at)
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def next(self):
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, kind, value=None):
        k, v, p = self.next()
        if k != kind or (value is not None and v != value):
            raise EnsembleParseError(
                f"expected {value or kind}, found {v!r}" if v else f"expected {value or kind}", p
            )
        return v, p

    def parse(self):
        self.expect("name", "nu")
        self.expect("op", "=")
        nu_terms = self.parse_terms()
        self.expect("op", ";")
        self.expect("name", "mu")
        self.expect("op", "=")
        mu_terms = self.parse_terms()
        k, v, p = self.next()
        if k != "end":
            raise EnsembleParseError(f"trailing input {v!r}", p)
        return nu_terms, mu_terms

    def parse_terms(self):
        terms = [self.parse_term()]
        while self.peek()[:2] == ("op", "+"):
            self.next()
            terms.append(self.parse_term())
        return terms

    def parse_term(self):
        # [coef *] [var[^exp]]*  with coef a decimal or p/q rational
        coef = Fraction(1)
        factors = []  # (letter, index, exponent, pos)
        k, v, p = self.peek()
        if k == "num":
            self.next()
            coef = self.parse_number(v, p)
            if self.peek()[:2] == ("op", "*"):
                self.next()
            elif self.peek()[0] == "var":
                raise EnsembleParseError("missing '*' between coefficient and variable", self.peek()[2])
        while True:
            k, v, p = self.peek()
            if k != "var":
                break
            self.next()
            exp = 1
            if self.peek()[:2] == ("op", "^"):
                self.next()
                ek, ev, ep = self.next()
                if ek != "num" or not ev.isdigit():
                    raise EnsembleParseError("exponent must be a positive integer", ep)
                exp = int(ev)
                if exp <= 0:
                    raise EnsembleParseError("exponent must be a positive integer", ep)
            factors.append((v[0], int(v[1:]), exp, p))
            if self.peek()[:2] == ("op", "*"):
                self.next()
                continue
            break
        return coef, factors

    def parse_number(self, lit, pos):
        if self.peek()[:2] == ("op", "/"):
            self.next()
            k, v, p = self.next()
            if k != "num" or not lit.isdigit() or not v.isdigit():
                raise EnsembleParseError("rational coefficient must be integer/integer", p)
            if int(v) == 0:
                raise EnsembleParseError("zero denominator", p)
            return Fraction(int(lit), int(v))
        if lit.isdigit():
            return Fraction(int(lit))
        return float(lit)


def _terms_from_poly(text):
    nu_raw, mu_raw = _Parser(text).parse()
    ne = 0
    nr = 0
    for _, factors in nu_raw + mu_raw:
        for letter, idx, _, pos in factors:
            if letter == "x":
                if idx < 1:
                    raise EnsembleParseError(f"unknown variable index x{idx} (edge types start at 1)", pos)
                ne = max(ne, idx)
            else:
                nr = max(nr, idx)
    if ne == 0:
        raise EnsembleParseError("no edge-type variables found", 0)

    def build(raw, with_channels):
        out = []
        for coef, factors in raw:
            b = [0] * (nr + 1)
            d = [0] * ne
            for letter, idx, exp, pos in factors:
                if letter == "r":
                    if not with_channels:
                        raise EnsembleParseError("channel variables are not allowed in mu", pos)
                    b[idx] += exp
                else:
                    d[idx - 1] += exp
            if coef == 0:
                continue  # zero-coefficient terms are dropped
            if with_channels:
                out.append(VariableNodeTerm(coef, tuple(b), tuple(d)))
            else:
                out.append(CheckNodeTerm(coef, tuple(d)))
        return out

    return ne, nr, build(nu_raw, True), build(mu_raw, False)


def _coef_in(value):
    if isinstance(value, str):
        s = value.strip()
        if "/" in s:
            num, den = s.split("/", 1)
            return Fraction(int(num), int(den))
        return Fraction(int(s))
    if isinstance(value, int):
        return Fraction(value)
    return float(value)


def _coef_out(coef):
    if isinstance(coef, Fraction):
        return str(coef) if coef.denominator != 1 else str(coef.numerator)
    return coef


def _term_text(coef, b, d):
    parts = []
    if isinstance(coef, Fraction):
        if coef != 1:
            parts.append(str(coef))
    else:
        parts.append(repr(coef))
    if b is not None:
        for k, e in enumerate(b):
            if e:
                parts.append(f"r{k}" + (f"^{e}" if e > 1 else ""))
    for i, e in enumerate(d):
        if e:
            parts.append(f"x{i + 1}" + (f"^{e}" if e > 1 else ""))
    return "*".join(parts)


def _from_json_obj(obj):
    try:
        ne = int(obj["ne"])
        nr = int(obj["nr"])
        nu = obj["nu"]
        mu = obj["mu"]
    except (KeyError, TypeError) as exc:
        raise EnsembleError(f"malformed ensemble document: {exc}") from exc
    vterms = []
    for entry in nu:
        coef = _coef_in(entry["coef"])
        b = tuple(int(k) for k in entry["b"])
        d = tuple(int(k) for k in entry["d"])
        if len(b) != nr + 1:
            raise EnsembleError(f"unknown channel index in b={b} for nr={nr}")
        if len(d) != ne:
            raise EnsembleError(f"unknown edge index in d={d} for ne={ne}")
        if coef == 0:
            continue
        vterms.append(VariableNodeTerm(coef, b, d))
    cterms = []
    for entry in mu:
        coef = _coef_in(entry["coef"])
        d = tuple(int(k) for k in entry["d"])
        if len(d) != ne:
            raise EnsembleError(f"unknown edge index in d={d} for ne={ne}")
        if coef == 0:
            continue
        cterms.append(CheckNodeTerm(coef, d))
    return EnsembleSpec(ne, nr, tuple(vterms), tuple(cterms))


def parse_ensemble(text):
    """Parse an ensemble from a JSON document or a polynomial pair string.

    Accepts either the structured JSON form
    ``{"ne":…, "nr":…, "nu":[…], "mu":[…]}`` or the grammar
    ``nu = term (+ term)* ; mu = term (+ term)*`` with
    ``term = [coef*] [r<k>^<e>]* [x<k>^<e>]*``.
    """
    if not isinstance(text, str):
        return _from_json_obj(text)
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise EnsembleError(f"invalid ensemble JSON: {exc}") from exc
        return _from_json_obj(obj)
    ne, nr, vterms, cterms = _terms_from_poly(text)
    return EnsembleSpec(ne, nr, tuple(vterms), tuple(cterms))


def load_ensemble(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_ensemble(fh.read())


# ---------------------------------------------------------------------------
# Derived quantities and degree profiles
# ---------------------------------------------------------------------------


def derived(spec):
    """Edge fractions E_i/N, average degree, and the informational rate."""
    efrac = spec.edge_frac_per_type
    for i, e in enumerate(efrac):
        if e <= 0:
            raise EnsembleError(f"edge type {i + 1} has zero sockets")
    transmitted = sum(
        float(t.coef) for t in spec.vnodes if any(t.b[k] > 0 for k in range(1, spec.nr + 1))
    )
    vtot = sum(float(t.coef) for t in spec.vnodes)
    ctot = sum(float(t.coef) for t in spec.cnodes)
    rate = (vtot - ctot) / transmitted if transmitted > 0 else math.nan
    return DerivedQuantities(efrac, spec.dv_avg, rate)


@lru_cache(maxsize=None)
def _varrays(spec):
    """Cached numpy views of the variable-side terms."""
    coef = np.array([float(t.coef) for t in spec.vnodes])
    b = np.array([t.b for t in spec.vnodes], dtype=np.int64)
    d = np.array([t.d for t in spec.vnodes], dtype=np.int64)
    return coef, b, d


@lru_cache(maxsize=None)
def _efrac(spec):
    """Cached E_i/N vector."""
    return np.array(spec.edge_frac_per_type)


@lru_cache(maxsize=None)
def _carrays(spec):
    coef = np.array([float(t.coef) for t in spec.cnodes])
    d = np.array([t.d for t in spec.cnodes], dtype=np.int64)
    return coef, d


def _check_eps(spec, eps):
    eps = np.asarray(eps, dtype=float)
    if eps.shape != (spec.nr + 1,):
        raise EnsembleError(f"erasure vector needs {spec.nr + 1} entries, got shape {eps.shape}")
    if eps[0] != 1.0:
        raise EnsembleError("entry 0 of the erasure vector (punctured channel) must be 1")
    if np.any(eps < 0) or np.any(eps > 1):
        raise EnsembleError("erasure probabilities must lie in [0, 1]")
    return eps


def _check_x(spec, x):
    x = np.asarray(x, dtype=float)
    if x.shape != (spec.ne,):
        raise EnsembleError(f"x needs {spec.ne} entries, got shape {x.shape}")
    return x


def nu_partial(spec, eps, x):
    """Unnormalized partial derivatives of the variable polynomial w.r.t.
    each edge variable, evaluated at (eps, x).  Equals (E_i/N)·lambda_i."""
    eps = _check_eps(spec, eps)
    x = _check_x(spec, x)
    coef, b, d = _varrays(spec)
    epow = np.prod(eps[None, :] ** b, axis=1)
    out = np.empty(spec.ne)
    for i in range(spec.ne):
        di = d[:, i]
        exps = d.copy()
        exps[:, i] = np.maximum(di - 1, 0)
        out[i] = float(np.sum(coef * di * epow * np.prod(x[None, :] ** exps, axis=1)))
    return out


def mu_partial(spec, x):
    """Unnormalized partial derivatives of the check polynomial."""
    x = _check_x(spec, x)
    coef, d = _carrays(spec)
    out = np.empty(spec.ne)
    for i in range(spec.ne):
        di = d[:, i]
        exps = d.copy()
        exps[:, i] = np.maximum(di - 1, 0)
        out[i] = float(np.sum(coef * di * np.prod(x[None, :] ** exps, axis=1)))
    return out


def eval_lambda(spec, eps, x):
    """Edge-perspective variable-side degree profile, componentwise in [0,1]
    for arguments in the unit box; identically 1 at eps = x = 1."""
    efrac = _efrac(spec)
    return nu_partial(spec, eps, x) / efrac


def eval_rho(spec, x):
    """Edge-perspective check-side degree profile."""
    efrac = _efrac(spec)
    return mu_partial(spec, x) / efrac


def eval_lambda_partials(spec, eps, x):
    """Matrix J[j, i] = d lambda_j / d x_i (exact polynomial partials)."""
    eps = _check_eps(spec, eps)
    x = _check_x(spec, x)
    coef, b, d = _varrays(spec)
    epow = np.prod(eps[None, :] ** b, axis=1)
    efrac = _efrac(spec)
    jac = np.zeros((spec.ne, spec.ne))
    for j in range(spec.ne):
        dj = d[:, j]
        for i in range(spec.ne):
            # d/dx_i of sum_t coef*d_j*eps^b*x^(d-e_j)
            mult = d[:, i] - (1 if i == j else 0)
            if not np.any((dj > 0) & (mult > 0)):
                continue
            exps = d.copy()
            exps[:, j] -= 1
            exps[:, i] -= 1
            exps = np.maximum(exps, 0)
            jac[j, i] = float(
                np.sum(coef * dj * np.clip(mult, 0, None) * epow * np.prod(x[None, :] ** exps, axis=1))
            ) / efrac[j]
    return jac


def eval_rho_partials(spec, x):
    """Matrix J[j, i] = d rho_j / d x_i."""
    x = _check_x(spec, x)
    coef, d = _carrays(spec)
    efrac = _efrac(spec)
    jac = np.zeros((spec.ne, spec.ne))
    for j in range(spec.ne):
        dj = d[:, j]
        for i in range(spec.ne):
            mult = d[:, i] - (1 if i == j else 0)
            if not np.any((dj > 0) & (mult > 0)):
                continue
            exps = d.copy()
            exps[:, j] -= 1
            exps[:, i] -= 1
            exps = np.maximum(exps, 0)
            jac[j, i] = float(
                np.sum(coef * dj * np.clip(mult, 0, None) * np.prod(x[None, :] ** exps, axis=1))
            ) / efrac[j]
    return jac
