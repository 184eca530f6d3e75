"""Schedules, integration of the induced decoding path, threshold search.

The mean trajectory lives on a path x(t) driven by the schedule through
dx_i/dt = -x_i * gamma_i / e_i.  Below threshold the path reaches the
completion time t_f = nu(eps, 1)/dv with the degree-1 supply positive
throughout; above threshold the supply dies at some earlier t.  Thresholds
are located by bisection on a scalar channel parameter with the integrator
as the success predicate.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import _kernels
from .ensemble import EnsembleError, _carrays, _varrays
from .evolution import erasure_vector, evolution_point

__all__ = [
    "Schedule",
    "PathOptions",
    "PathResult",
    "ThresholdResult",
    "IntegrationError",
    "MonotonicityError",
    "StallIndeterminateError",
    "natural_gamma",
    "freeze_exhausted_types",
    "completion_time",
    "integrate_path",
    "find_threshold",
    "compare_schedules",
]


class IntegrationError(RuntimeError):
    """Step underflow or an inconsistent integrator state."""

    def __init__(self, message, t=None, x=None):
        super().__init__(message)
        self.t = t
        self.x = x


class MonotonicityError(RuntimeError):
    """The success-vs-erasure sweep was not monotone; bisection refuses to run."""


class StallIndeterminateError(RuntimeError):
    """Schedule probabilities are 0/0: no degree-1 supply anywhere."""


@dataclass(frozen=True)
class Schedule:
    """How the decoder distributes peels over edge types.

    All constructors except :meth:`fixed_pmf` produce reasonable schedules:
    they only ever select a type that currently has degree-1 supply.  The
    fixed-pmf variant ignores availability (the deliberately unreasonable
    example) and must be requested explicitly.
    """

    kind: str
    order: tuple = ()  # 1-based type priorities, for "priority"
    weights: tuple = ()  # for "custom" / "fixed-pmf"
    tau_pos: float = 1e-9

    @classmethod
    def natural(cls, tau_pos=1e-9):
        return cls("natural", tau_pos=tau_pos)

    @classmethod
    def uniform(cls, tau_pos=1e-9):
        return cls("uniform", tau_pos=tau_pos)

    @classmethod
    def priority(cls, *order, tau_pos=1e-9):
        if len(order) == 1 and isinstance(order[0], (tuple, list)):
            order = tuple(order[0])
        if not order or sorted(order) != list(range(1, len(order) + 1)):
            raise ValueError(f"priority order must be a permutation of 1..ne, got {order}")
        return cls("priority", order=tuple(int(i) for i in order), tau_pos=tau_pos)

    @classmethod
    def proportional_to_e(cls, tau_pos=1e-9):
        return cls("prop-e", tau_pos=tau_pos)

    @classmethod
    def custom(cls, weights, tau_pos=1e-9):
        w = tuple(float(v) for v in weights)
        if any(v < 0 for v in w) or sum(w) <= 0:
            raise ValueError("custom weights must be nonnegative with positive sum")
        return cls("custom", weights=w, tau_pos=tau_pos)

    @classmethod
    def fixed_pmf(cls, weights, allow_unreasonable=False):
        if not allow_unreasonable:
            raise ValueError(
                "fixed_pmf ignores degree-1 availability and is unreasonable; "
                "pass allow_unreasonable=True if that is intended"
            )
        w = np.asarray(weights, dtype=float)
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("fixed pmf must be a probability vector")
        return cls("fixed-pmf", weights=tuple(float(v) for v in w))

    _CODES = {
        "natural": _kernels.SCHED_NATURAL,
        "uniform": _kernels.SCHED_UNIFORM,
        "priority": _kernels.SCHED_PRIORITY,
        "prop-e": _kernels.SCHED_PROP_E,
        "custom": _kernels.SCHED_CUSTOM,
        "fixed-pmf": _kernels.SCHED_FIXED,
    }

    @property
    def code(self):
        return self._CODES[self.kind]

    @property
    def smooth(self):
        """Whether gamma varies continuously along a path (affects stepping)."""
        return self.kind in ("natural", "fixed-pmf")

    @property
    def name(self):
        if self.kind == "priority":
            return "priority:" + ",".join(str(i) for i in self.order)
        if self.kind in ("custom", "fixed-pmf"):
            return f"{self.kind}:" + ",".join(f"{w:g}" for w in self.weights)
        return self.kind

    def encode(self, ne):
        """(code, order0, weights) arrays for the kernels."""
        order = np.array([i - 1 for i in self.order], dtype=np.int64)
        if self.kind in ("custom", "fixed-pmf"):
            if len(self.weights) != ne:
                raise EnsembleError(f"schedule weights need {ne} entries")
            weights = np.array(self.weights, dtype=float)
        else:
            weights = np.zeros(ne)
        return self.code, order, weights

    def gamma(self, mu1, e, live):
        """Schedule pmf at a state, or None when it cannot proceed."""
        mu1 = np.asarray(mu1, dtype=float)
        ne = mu1.shape[0]
        code, order, weights = self.encode(ne)
        ok, g, _ = _kernels.gamma_eval(
            mu1, np.asarray(e, dtype=float), np.asarray(live, dtype=bool),
            code, order, weights, self.tau_pos,
        )
        return g if ok else None


def _pack(spec, eps):
    """Flat per-(spec, eps) arrays for the path kernels."""
    if spec.ne > 62:
        raise EnsembleError("path kernels support at most 62 edge types")
    coef, b, d = _varrays(spec)
    epow = np.prod(np.asarray(eps, dtype=float)[None, :] ** b, axis=1)
    v_w = np.ascontiguousarray(coef * epow)
    v_d = np.ascontiguousarray(d)
    ne = spec.ne
    lam_w, lam_exp, lam_ptr = [], [], [0]
    for i in range(ne):
        mask = d[:, i] > 0
        lam_w.append(v_w[mask] * d[mask, i])
        exps = d[mask].copy()
        exps[:, i] -= 1
        lam_exp.append(exps)
        lam_ptr.append(lam_ptr[-1] + int(mask.sum()))
    ccoef, cd = _carrays(spec)
    rho_w, rho_exp, rho_ptr = [], [], [0]
    for i in range(ne):
        mask = cd[:, i] > 0
        rho_w.append(ccoef[mask] * cd[mask, i])
        exps = cd[mask].copy()
        exps[:, i] -= 1
        rho_exp.append(exps)
        rho_ptr.append(rho_ptr[-1] + int(mask.sum()))
    return (
        np.ascontiguousarray(np.concatenate(lam_w)),
        np.ascontiguousarray(np.concatenate(lam_exp)),
        np.array(lam_ptr, dtype=np.int64),
        np.ascontiguousarray(np.concatenate(rho_w)),
        np.ascontiguousarray(np.concatenate(rho_exp)),
        np.array(rho_ptr, dtype=np.int64),
        v_w,
        v_d,
        np.array(spec.edge_frac_per_type),
        spec.dv_avg,
    )


def natural_gamma(spec, eps, x, tau_pos=1e-9):
    """Pmf proportional to the remaining degree-1 fraction of each type.

    Raises :class:`StallIndeterminateError` when the total degree-1 mass is
    below ``tau_pos`` (the 0/0 stall state).
    """
    eps = erasure_vector(spec, eps)
    arrs = _pack(spec, eps)
    x = np.asarray(x, dtype=float)
    _, e, mu1, _ = _kernels.core_eval(x, *arrs)
    g = Schedule.natural(tau_pos).gamma(mu1, e, e > tau_pos)
    if g is None:
        raise StallIndeterminateError("no degree-1 supply: natural schedule is 0/0")
    return g


def freeze_exhausted_types(e, frozen=None, tau_pos=1e-9):
    """Sticky mask of edge types whose residual edge fraction is gone."""
    e = np.asarray(e, dtype=float)
    newly = e <= tau_pos
    if frozen is None:
        return newly
    return np.asarray(frozen, dtype=bool) | newly


def completion_time(spec, eps):
    """Expected decoder completion time nu(eps, 1)/dv."""
    eps = erasure_vector(spec, eps)
    coef, b, d = _varrays(spec)
    nu0 = float(np.sum(coef * np.prod(np.asarray(eps)[None, :] ** b, axis=1)))
    return nu0 / spec.dv_avg


@dataclass(frozen=True)
class PathOptions:
    max_step: float | None = None  # absolute; default 1e-3 * t_f
    exit_tol: float = 1e-4  # residual variable-node mass counting as decoded
    step_atol: float = 1e-11  # per-step error estimate gate on x
    resolution: int = 512  # trajectory snapshots when collecting
    collect: bool = True
    strict_per_type: bool = False
    min_step_rel: float = 1e-9  # of t_f; below this the endgame logic decides
    stall_rel: float = 1e-6  # stall-time localization, relative to t_f
    slide_step_rel: float = 2.5e-5  # accepted step across gamma discontinuities
    max_shrink: float = 0.05  # per-step relative decrease allowed per coordinate
    max_steps: int = 5_000_000  # hard cap on accepted steps per path


@dataclass(frozen=True)
class Outcome:
    kind: str  # "completed" | "stalled"
    t: float
    x: np.ndarray

    @property
    def completed(self):
        return self.kind == "completed"


@dataclass(frozen=True)
class PathResult:
    trajectory: list
    outcome: Outcome
    t_f: float
    eps: np.ndarray
    schedule: Schedule


@dataclass(frozen=True)
class ThresholdResult:
    eps_star: float
    bracket: tuple
    schedule_used: Schedule
    sweep: tuple = ()


def integrate_path(spec, eps, schedule, options=None):
    """Integrate x(t) from x=1 under the schedule until completion or stall.

    Classical RK4 with the schedule re-evaluated at stage points and a
    step-doubling error estimate; steps are halved on rejection, clamped to
    land exactly on snapshot times and on the completion wall t_f*(1-1e-6),
    and refined geometrically as the wall approaches.  Edge types whose
    residual fraction falls below the schedule's positivity tolerance are
    frozen (their x stops moving and they leave the schedule support).
    """
    opts = options or PathOptions()
    eps = erasure_vector(spec, eps)
    arrs = _pack(spec, eps)
    ne = spec.ne
    dv = spec.dv_avg
    tau = schedule.tau_pos
    code, order, weights = schedule.encode(ne)

    x = np.ones(ne)
    t = 0.0
    frozen = np.zeros(ne, dtype=bool)
    trajectory = []

    e, mu1, nuv, total1, frozen = _kernels.state_eval(x, frozen, *arrs, tau)
    t_f = nuv / dv

    def record(t, x, e, mu1, frozen):
        if not opts.collect:
            return
        g = schedule.gamma(mu1, e, ~np.asarray(frozen))
        trajectory.append(evolution_point(spec, eps, x, t, g))

    if nuv <= opts.exit_tol and total1 <= tau:
        record(0.0, x, e, mu1, frozen)
        return PathResult(trajectory, Outcome("completed", 0.0, x.copy()), t_f, eps, schedule)

    wall = t_f * (1.0 - 1e-6)
    max_step = opts.max_step if opts.max_step is not None else t_f * 1e-3
    min_step = t_f * opts.min_step_rel
    h_slide = t_f * opts.slide_step_rel
    out_times = (
        np.linspace(0.0, wall, opts.resolution + 1) if opts.collect else np.array([0.0])
    )
    next_out = 1

    record(0.0, x, e, mu1, frozen)

    def localize_stall(x0, t0, h):
        """Bisect the stall time inside [t0, t0 + h]; returns (t, x) on the
        last alive point."""
        lo, x_lo = 0.0, x0
        hi = h
        while hi - lo > opts.stall_rel * t_f:
            mid = 0.5 * (lo + hi)
            st, x_mid, err, mixed, e2, mu12, nuv2, tot12, fr2 = _kernels.try_step(
                x0, mid, frozen, code, order, weights, tau, *arrs
            )
            alive = st == _kernels.STEP_OK and (tot12 > tau or nuv2 <= opts.exit_tol)
            if alive:
                lo, x_lo = mid, x_mid
            else:
                hi = mid
        return t0 + lo, np.asarray(x_lo)

    outcome = None
    h_prev = max_step  # step-size memory so stiff zones do not re-halve from scratch
    n_steps = 0
    while outcome is None:
        n_steps += 1
        if n_steps > opts.max_steps:
            raise IntegrationError(f"exceeded {opts.max_steps} steps", t, x)
        nothing_left = bool(frozen.all()) or total1 <= tau
        if nuv <= opts.exit_tol and (t >= wall or nothing_left):
            outcome = Outcome("completed", t, x.copy())
            break
        if total1 <= tau or schedule.gamma(mu1, e, ~frozen) is None:
            outcome = Outcome("stalled", t, x.copy())
            break
        if opts.strict_per_type and t > 0.0 and np.any(~frozen & (mu1 <= tau)):
            outcome = Outcome("stalled", t, x.copy())
            break
        if t >= wall:
            raise IntegrationError(
                f"reached t_f with residual mass {nuv:.3e} above exit tolerance", t, x
            )

        # refine geometrically toward the wall: the field stiffens as the
        # residual graph empties
        h = min(max_step, max(0.05 * (wall - t), 64.0 * min_step), wall - t, 4.0 * h_prev)
        if opts.collect and next_out < len(out_times):
            h = min(h, out_times[next_out] - t)

        while True:
            st, x_new, err, mixed, e2, mu12, nuv2, tot12, fr2 = _kernels.try_step(
                x, h, frozen, code, order, weights, tau, *arrs
            )
            if st == _kernels.STEP_OK and tot12 <= tau and nuv2 > opts.exit_tol:
                st = _kernels.STEP_STALL  # stepped over the stall surface
            if st == _kernels.STEP_STALL:
                t_stall, x_stall = localize_stall(x, t, h)
                e, mu1, nuv, total1, frozen = _kernels.state_eval(x_stall, frozen, *arrs, tau)
                if nuv <= opts.exit_tol:
                    outcome = Outcome("completed", t_stall, x_stall.copy())
                else:
                    outcome = Outcome("stalled", t_stall, x_stall.copy())
                t, x = t_stall, x_stall
                break
            accept = False
            if st == _kernels.STEP_OK:
                forced = h <= 256.0 * min_step
                # singular-descent guard: no coordinate may lose more than a
                # fixed fraction per step, or local error control is meaningless
                gentle = bool(np.all(x_new >= x * (1.0 - opts.max_shrink)))
                if forced:
                    accept = True
                elif gentle and err <= opts.step_atol:
                    accept = True
                elif gentle and not schedule.smooth and h <= h_slide:
                    # a discontinuous schedule sliding along a supply boundary
                    # defeats the doubling estimate (it is first-order there);
                    # accept bounded steps instead of grinding to the floor
                    accept = True
            if accept:
                t += h
                x = x_new
                h_prev = h
                e, mu1, nuv, total1, frozen = e2, mu12, nuv2, tot12, fr2
                while (
                    opts.collect
                    and next_out < len(out_times)
                    and t >= out_times[next_out] - 1e-15 * t_f
                ):
                    record(t, x, e, mu1, frozen)
                    next_out += 1
                break
            h = min(h * 0.5, h_slide) if not schedule.smooth else h * 0.5
            if h < min_step:
                if nuv <= opts.exit_tol:
                    outcome = Outcome("completed", t, x.copy())
                elif total1 <= 10.0 * tau:
                    outcome = Outcome("stalled", t, x.copy())
                else:
                    raise IntegrationError("integrator step underflow", t, x)
                break

    if opts.collect and (not trajectory or trajectory[-1].t < t - 1e-15 * max(t_f, 1.0)):
        record(t, x, e, mu1, frozen)
    return PathResult(trajectory, outcome, t_f, eps, schedule)


# ---------------------------------------------------------------------------
# Threshold search
# ---------------------------------------------------------------------------


def _eps_at(spec, s, direction):
    if direction is None:
        vals = np.full(spec.nr, s)
    else:
        direction = np.asarray(direction, dtype=float)
        if direction.shape != (spec.nr,):
            raise EnsembleError(f"direction needs {spec.nr} entries")
        if np.any(direction <= 0) or np.any(direction > 1):
            raise EnsembleError("direction entries must lie in (0, 1]")
        vals = np.clip(s * direction, 0.0, 1.0)
    return erasure_vector(spec, vals)


def find_threshold(spec, schedule, direction=None, tol=1e-4, sweep_points=32, options=None):
    """Bisect the scalar channel parameter for the largest decodable erasure.

    All non-punctured channels are scaled by one scalar in [0, 1] (optionally
    through a per-channel direction).  A coarse sweep first checks that
    success is monotone in the scalar; more than one sign change aborts.
    """
    opts = replace(options or PathOptions(), collect=False)

    def succeeds(s):
        eps = _eps_at(spec, s, direction)
        return integrate_path(spec, eps, schedule, opts).outcome.completed

    grid = np.linspace(0.0, 1.0, sweep_points)
    results = [succeeds(s) for s in grid]
    flips = [i for i in range(1, len(results)) if results[i] != results[i - 1]]
    sweep = tuple(zip(grid.tolist(), results))
    if len(flips) > 1:
        raise MonotonicityError(
            f"success predicate changed sign {len(flips)} times on the coarse sweep: "
            + ", ".join(f"{s:.4f}:{'ok' if r else 'fail'}" for s, r in sweep)
        )
    if not flips:
        if all(results):
            return ThresholdResult(1.0, (1.0, 1.0), schedule, sweep)
        return ThresholdResult(0.0, (0.0, 0.0), schedule, sweep)
    if results[0] is False:
        raise MonotonicityError("success predicate is not monotone: fails at eps=0")
    lo, hi = grid[flips[0] - 1], grid[flips[0]]
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if succeeds(mid):
            lo = mid
        else:
            hi = mid
    return ThresholdResult(0.5 * (lo + hi), (float(lo), float(hi)), schedule, sweep)


def compare_schedules(spec, schedules, tol=1e-4, direction=None, options=None):
    """Thresholds for several schedules plus the max spread across them."""
    results = {}
    for sched in schedules:
        results[sched.name] = find_threshold(
            spec, sched, direction=direction, tol=tol, options=options
        )
    values = [r.eps_star for r in results.values()]
    spread = max(values) - min(values) if values else 0.0
    return results, spread, spread <= 2.0 * tol
