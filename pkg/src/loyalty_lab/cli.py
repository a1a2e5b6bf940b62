"""Command-line entry point: ``loyalty-lab <subcommand> [flags]``.

Exit codes: 0 success, 1 validation error or bad usage, 2 I/O error.
All randomness comes from ``--seed`` (default 0).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import LoyaltyLabError
from .estimation import design_matrix, fit_mle, gate_constant, info_gate, lambda_min, read_samples_csv
from .experiments import STUDIES, gen_lower_bound_pair, rev_gap_closed_form, rev_gap_steady_state, run_study
from .metrics import metrics_row
from .model import LinkKind, load_instance, validate_instance
from .policies import LearningPolicy, OraclePolicy, load_policy_config, policy_from_config
from .steady_state import (
    format_threshold,
    mixture_revenue,
    mixture_revenue_curve,
    optimal_personalized,
    optimal_threshold,
    pof_upper_bound,
    price_of_fairness,
    tmix_upper_bound,
)
from .simulator import save_epoch_log, simulate_fixed, simulate_policy

log = logging.getLogger("loyalty_lab")

SUBCOMMANDS = ("pof", "optimize", "simulate", "fit", "learn", "study", "lbpair", "bounds")


@dataclass
class CliConfig:
    subcommand: str
    instance: Path | None = None
    out: Path | None = None
    seed: int = 0
    overrides: dict = field(default_factory=dict)


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; usage errors are validation errors here
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(message)


class _UsageError(Exception):
    pass


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _pos_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("expected a positive integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="loyalty-lab", description="Loyalty program analytics and learning simulations.")
    sub = p.add_subparsers(dest="subcommand", parser_class=_Parser)

    def common(sp, instance=False, out=False, seed=False):
        if instance:
            sp.add_argument("--instance", type=Path, required=True, help="instance JSON")
        if out:
            sp.add_argument("--out", type=Path, default=None, help="output path or directory")
        if seed:
            sp.add_argument("--seed", type=_u64, default=0)

    sp = sub.add_parser("pof", help="price of fairness of an instance")
    common(sp, instance=True)
    sp = sub.add_parser("optimize", help="optimal thresholds and revenue curve")
    common(sp, instance=True)

    sp = sub.add_parser("simulate", help="simulate a fixed threshold, write the run as CSV")
    common(sp, instance=True, out=True, seed=True)
    sp.add_argument("--n", default=None, help="threshold (integer or 'inf'); default the optimum")
    sp.add_argument("--t", type=_pos_int, default=1000)
    sp.add_argument("--m", type=_pos_int, default=None)

    sp = sub.add_parser("fit", help="maximum-likelihood fit from a sample CSV")
    common(sp, instance=True)
    sp.add_argument("--samples", type=Path, required=True)
    sp.add_argument("--link", default=None, help="override the fitted link")
    sp.add_argument("--clamped", action="store_true")
    sp.add_argument("--delta", type=float, default=0.1, help="confidence level of the information gate")

    sp = sub.add_parser("learn", help="run a learning policy end to end and print metrics")
    sp.add_argument("--instance", type=Path, default=None, help="instance JSON; default the two-customer study instance")
    common(sp, out=True, seed=True)
    sp.add_argument("--policy", default="stable", help="stable, fair, oracle, or a policy config JSON")
    sp.add_argument("--schedule", choices=("practical", "theoretical"), default="practical")
    sp.add_argument("--t", type=_pos_int, default=5000)
    sp.add_argument("--m", type=_pos_int, default=None)

    sp = sub.add_parser("study", help="run a named study")
    sp.add_argument("name", choices=sorted(STUDIES))
    common(sp, out=True)
    sp.add_argument("--seed", type=_u64, default=None)
    sp.add_argument("--reps", type=_pos_int, default=None)
    sp.add_argument("--jobs", type=_pos_int, default=1)

    sp = sub.add_parser("lbpair", help="the close instance pair with different optimal thresholds")
    sp.add_argument("--delta", type=float, default=0.5)

    sp = sub.add_parser("bounds", help="worst-case price of fairness and mixing-time bound")
    sp.add_argument("--k", type=_pos_int, default=None)
    sp.add_argument("--instance", type=Path, default=None)
    return p


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable))


def _jsonable(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"cannot serialise {type(v).__name__}")


def _thr_json(n):
    t = format_threshold(n)
    return t if isinstance(t, str) else int(t)


def _parse_threshold(text):
    if text is None:
        return None
    if text.lower() in ("inf", "infinity", "none"):
        return math.inf
    v = int(text)
    if v < 1:
        raise ValueError("threshold must be >= 1 or 'inf'")
    return v


def cmd_pof(args) -> int:
    inst = load_instance(args.instance)
    choices, r_pers = optimal_personalized(inst)
    best = optimal_threshold(inst)
    _emit({
        "pof": price_of_fairness(inst),
        "bound": pof_upper_bound(inst.k),
        "n_star": _thr_json(best.n),
        "r_nonpersonalized": best.value,
        "n_star_personalized": [_thr_json(c.n) for c in choices],
        "r_personalized": r_pers,
    })
    return 0


def cmd_optimize(args) -> int:
    inst = load_instance(args.instance)
    best = optimal_threshold(inst)
    _emit({
        "n_star": _thr_json(best.n),
        "revenue": best.value,
        "no_loyalty_revenue": mixture_revenue(inst, math.inf),
        "revenue_curve": mixture_revenue_curve(inst).tolist(),
    })
    return 0


def cmd_simulate(args) -> int:
    inst = load_instance(args.instance)
    n = _parse_threshold(args.n)
    if n is None:
        n = optimal_threshold(inst).n
    m = args.m if args.m is not None else inst.k
    run = simulate_fixed(inst, n, m, args.t, args.seed)
    if args.out is not None:
        run.write_csv(args.out)
    else:
        run.write_csv("/dev/stdout")
    return 0


def cmd_fit(args) -> int:
    inst = load_instance(args.instance)
    samples = read_samples_csv(args.samples, k=inst.k, n_max=inst.n_max)
    report = validate_instance(inst)
    out = []
    for k, spec in enumerate(inst.types):
        link = LinkKind(args.link) if args.link else spec.link
        res = fit_mle(samples[k], link, spec.baseline, spec.box, clamped=args.clamped, ridge=True)
        gate = None
        if report.valid and report.kappa > 0:
            gate = info_gate(design_matrix(samples[k]), args.delta, report, inst.n_max)
        out.append({
            "type": k,
            "link": link.value,
            "b1": res.beta[0],
            "b2": res.beta[1],
            "loglik": res.loglik,
            "converged": res.converged,
            "flags": list(res.flags),
            "samples": samples[k].count,
            "lambda_min": lambda_min(design_matrix(samples[k])),
            "gate_passed": gate,
            "gate_constant": gate_constant(report, inst.n_max) if report.valid else None,
        })
    _emit({"fits": out})
    return 0


def _resolve_policy(args):
    name = args.policy
    if name in ("stable", "fair"):
        return LearningPolicy(fair=name == "fair", schedule=args.schedule)
    if name == "oracle":
        return OraclePolicy()
    path = Path(name)
    if path.suffix == ".json":
        cfg = load_policy_config(path)
        cfg.setdefault("schedule", args.schedule)
        return policy_from_config(cfg)
    raise ValueError(f"unknown policy {name!r}")


def cmd_learn(args) -> int:
    from .experiments import regret_study_instance

    inst = load_instance(args.instance) if args.instance else regret_study_instance()
    m = args.m if args.m is not None else max(2, inst.k)
    policy = _resolve_policy(args)
    run = simulate_policy(inst, policy, m, args.t, args.seed)
    row = metrics_row(run, inst)
    row["final_threshold"] = _thr_json(run.thresholds[-1])
    row["thresholds"] = [_thr_json(n) for n in run.logged_thresholds()]
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        run.write_csv(args.out / "run.csv")
        save_epoch_log(run, args.out / "epochs.json")
    _emit(row)
    return 0


def cmd_study(args) -> int:
    summary = run_study(args.name, seed=args.seed, reps=args.reps, out=args.out, jobs=args.jobs)
    _emit(summary)
    return 0


def cmd_lbpair(args) -> int:
    a, b = gen_lower_bound_pair(args.delta)
    rows = []
    for which, inst in (("first", a), ("second", b)):
        t = inst.types[0]
        rows.append({
            "instance": which,
            "baseline": t.baseline, "b1": t.b1, "b2": t.b2,
            "n_star": _thr_json(optimal_threshold(inst).n),
            "gap_closed_form": rev_gap_closed_form(args.delta, which),
            "gap_steady_state": rev_gap_steady_state(inst),
        })
    _emit({"delta": args.delta, "pair": rows})
    return 0


def cmd_bounds(args) -> int:
    if args.instance is None:
        if args.k is None:
            raise ValueError("bounds needs --k or --instance")
        print(repr(pof_upper_bound(args.k)))
        return 0
    inst = load_instance(args.instance)
    report = validate_instance(inst)
    k = args.k if args.k is not None else inst.k
    out = {"pof_upper_bound": pof_upper_bound(k)}
    try:
        out["tmix_upper_bound"] = tmix_upper_bound(inst.n_max, report.mu_min, report.mu_max)
    except ValueError as exc:
        out["tmix_upper_bound"] = None
        out["tmix_error"] = str(exc)
    if math.isinf(out.get("tmix_upper_bound") or 0.0):
        out["tmix_upper_bound"] = "inf"
    _emit(out)
    return 0


COMMANDS = {
    "pof": cmd_pof,
    "optimize": cmd_optimize,
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "learn": cmd_learn,
    "study": cmd_study,
    "lbpair": cmd_lbpair,
    "bounds": cmd_bounds,
}


def _setup_logging() -> None:
    level = os.environ.get("LOYALTY_LAB_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"loyalty-lab: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if args.subcommand is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        return COMMANDS[args.subcommand](args)
    except OSError as exc:
        print(f"loyalty-lab: I/O error: {exc}", file=sys.stderr)
        return 2
    except (LoyaltyLabError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"loyalty-lab: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
