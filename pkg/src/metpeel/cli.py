"""Command-line front end.

Subcommands: analyze, path, threshold, simulate, compare, schedules.
Exit codes: 0 success, 1 usage/input error, 2 computation error, 3 failed
acceptance comparison.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .decoder import SamplingError
from .ensemble import EnsembleError, derived, load_ensemble
from .evolution import (
    edge_fractions,
    erasure_vector,
    mu1_closed_form,
    mu_closed_form,
    nu_closed_form,
)
from .harness import Campaign, run_campaign, write_analytic_csv
from .pathsim import (
    IntegrationError,
    MonotonicityError,
    PathOptions,
    Schedule,
    compare_schedules,
    completion_time,
    find_threshold,
    integrate_path,
)

USAGE_ERROR = 1
COMPUTE_ERROR = 2
COMPARE_FAILED = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(USAGE_ERROR)


def _parse_eps(text):
    parts = [float(v) for v in text.split(",")]
    return parts[0] if len(parts) == 1 else parts


def _parse_schedule(text):
    if text == "natural":
        return Schedule.natural()
    if text == "uniform":
        return Schedule.uniform()
    if text == "prop-e":
        return Schedule.proportional_to_e()
    if text.startswith("priority:"):
        order = [int(v) for v in text.split(":", 1)[1].split(",")]
        return Schedule.priority(*order)
    raise argparse.ArgumentTypeError(
        f"unknown schedule {text!r} (use natural, uniform, prop-e, or priority:i,j,...)"
    )


def build_parser():
    p = _Parser(prog="metpeel", description=__doc__)
    p.add_argument("--version", action="version", version=f"metpeel {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, eps=False, needs_eps=False):
        sp.add_argument("--ensemble", required=True, help="ensemble file (JSON or polynomial text)")
        if eps:
            sp.add_argument(
                "--eps", type=_parse_eps, required=needs_eps,
                help="erasure probability (scalar, or comma list per transmitted channel)",
            )
        sp.add_argument("--schedule", type=_parse_schedule, default=Schedule.natural())
        sp.add_argument("--seed", type=int, default=1)
        sp.add_argument("--out", help="output directory for CSV/JSON exports")
        sp.add_argument("--resolution", type=int, default=512)

    sp = sub.add_parser("analyze", help="derived quantities and initial conditions")
    common(sp, eps=True)

    sp = sub.add_parser("path", help="integrate the mean decoding path")
    common(sp, eps=True, needs_eps=True)

    sp = sub.add_parser("threshold", help="bisect the decoding threshold")
    common(sp)
    sp.add_argument("--tol", type=float, default=1e-4)

    sp = sub.add_parser("simulate", help="Monte Carlo decoding campaign")
    common(sp, eps=True, needs_eps=True)
    sp.add_argument("--N", type=int, required=True)
    sp.add_argument("--trials", type=int, required=True)
    sp.add_argument("--per-trial", type=int, default=0, help="export the first k trials")

    sp = sub.add_parser("compare", help="empirical-vs-analytic comparison report")
    common(sp, eps=True, needs_eps=True)
    sp.add_argument("--N", type=int, required=True)
    sp.add_argument("--trials", type=int, required=True)
    sp.add_argument("--tol", type=float, default=0.01, help="comparison tolerance on mu1")

    sp = sub.add_parser("schedules", help="thresholds for several reasonable schedules")
    common(sp)
    sp.add_argument("--tol", type=float, default=1e-4)
    return p


def _load(path):
    if not Path(path).exists():
        raise FileNotFoundError(f"ensemble file not found: {path}")
    return load_ensemble(path)


def _write_json(out_dir, name, doc):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / name, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
    return str(out / name)


def _cmd_analyze(args):
    spec = _load(args.ensemble)
    dq = derived(spec)
    print(f"edge types: {spec.ne}, channel types (incl. punctured): {spec.nr + 1}")
    for i, e in enumerate(dq.edge_frac_per_type):
        print(f"  E_{i + 1}/N = {e:g}")
    print(f"  average variable degree E/N = {dq.dv_avg:g}")
    print(f"  designed rate (informational) = {dq.rate_summary:g}")
    if args.eps is not None:
        eps = erasure_vector(spec, args.eps)
        x1 = np.ones(spec.ne)
        print(f"initial conditions at eps = {eps.tolist()}:")
        for (b, d), v in nu_closed_form(spec, eps, x1).items():
            print(f"  nu{b},{d}(0) = {v:.10g}")
        mu1 = mu1_closed_form(spec, eps, x1)
        print(f"  mu_e(eps,1) = ({', '.join(f'{v:.10g}' for v in mu1)})")
        for d, v in sorted(mu_closed_form(spec, eps, x1).items()):
            print(f"  mu_{d}(0) = {v:.10g}")
        e = edge_fractions(spec, eps, x1)
        print(f"  e(0) = ({', '.join(f'{v:.10g}' for v in e)})")
        print(f"  t_f = {completion_time(spec, eps):.10g}")
    return 0


def _cmd_path(args):
    spec = _load(args.ensemble)
    res = integrate_path(
        spec, args.eps, args.schedule, PathOptions(resolution=args.resolution)
    )
    o = res.outcome
    print(f"outcome: {o.kind} at t = {o.t:.8g} (t_f = {res.t_f:.8g})")
    print(f"final x = {np.array2string(o.x, precision=6)}")
    if args.out:
        csv_path = str(Path(args.out) / "trajectory_analytic.csv")
        write_analytic_csv(csv_path, spec, res)
        _write_json(
            args.out,
            "result.json",
            {
                "ensemble": spec.to_json_obj(),
                "eps": np.asarray(res.eps).tolist(),
                "schedule": args.schedule.name,
                "outcome": {"kind": o.kind, "t": o.t, "x": o.x.tolist(), "t_f": res.t_f},
                "seeds": {},
                "files": {"trajectory": csv_path},
            },
        )
        print(f"wrote {csv_path}")
    return 0


def _cmd_threshold(args):
    spec = _load(args.ensemble)
    res = find_threshold(spec, args.schedule, tol=args.tol)
    print(f"threshold eps* = {res.eps_star:.6f} (bracket [{res.bracket[0]:.6f}, {res.bracket[1]:.6f}])")
    if args.out:
        _write_json(
            args.out,
            "result.json",
            {
                "ensemble": spec.to_json_obj(),
                "schedule": args.schedule.name,
                "threshold": {"value": res.eps_star, "bracket": list(res.bracket)},
                "seeds": {},
            },
        )
    return 0


def _campaign(args, spec, tol=0.01, per_trial=0):
    return Campaign(
        spec=spec,
        n_values=(args.N,),
        eps_values=(args.eps,) if np.isscalar(args.eps) else tuple(args.eps),
        trials=args.trials,
        schedule=args.schedule,
        seed=args.seed,
        out_dir=args.out,
        resolution=args.resolution,
        compare_tol=tol,
        per_trial_csv=per_trial,
    )


def _cmd_simulate(args):
    spec = _load(args.ensemble)
    report = run_campaign(_campaign(args, spec, per_trial=args.per_trial))
    for p in report.points:
        note = " (low-N, informational)" if p.informational else ""
        print(
            f"N={p.N} eps={p.eps:g}: success rate {p.success_rate:.4f} over {p.trials} trials{note}"
        )
        if "mu1" in p.stats:
            s = p.stats["mu1"]
            print(f"  mu1 deviation: max {s.max_dev:.5f}, rms {s.rms_dev:.5f}")
    return 0


def _cmd_compare(args):
    spec = _load(args.ensemble)
    report = run_campaign(_campaign(args, spec, tol=args.tol))
    failed = False
    for p in report.points:
        status = "informational" if p.informational else ("pass" if p.passed else "FAIL")
        print(f"N={p.N} eps={p.eps:g}: {status}")
        for name, s in p.stats.items():
            print(f"  {name}: max_dev {s.max_dev:.6f} rms {s.rms_dev:.6f} max_se {s.max_se:.6f}")
        if p.passed is False:
            failed = True
    return COMPARE_FAILED if failed else 0


def _cmd_schedules(args):
    spec = _load(args.ensemble)
    scheds = [Schedule.natural(), Schedule.uniform()]
    ident = tuple(range(1, spec.ne + 1))
    scheds.append(Schedule.priority(*ident))
    if spec.ne > 1:
        scheds.append(Schedule.priority(*reversed(ident)))
    results, spread, ok = compare_schedules(spec, scheds, tol=args.tol)
    for name, r in results.items():
        print(f"  {name}: eps* = {r.eps_star:.6f}")
    print(f"max spread = {spread:.2e} ({'<= 2*tol' if ok else 'EXCEEDS 2*tol'})")
    if args.out:
        _write_json(
            args.out,
            "schedules.json",
            {
                "ensemble": spec.to_json_obj(),
                "thresholds": {k: v.eps_star for k, v in results.items()},
                "spread": spread,
                "within_2tol": ok,
            },
        )
    return 0


_COMMANDS = {
    "analyze": _cmd_analyze,
    "path": _cmd_path,
    "threshold": _cmd_threshold,
    "simulate": _cmd_simulate,
    "compare": _cmd_compare,
    "schedules": _cmd_schedules,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (EnsembleError, SamplingError, FileNotFoundError) as exc:
        print(f"metpeel: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except (IntegrationError, MonotonicityError) as exc:
        print(f"metpeel: computation failed: {exc}", file=sys.stderr)
        return COMPUTE_ERROR


if __name__ == "__main__":
    sys.exit(main())
