"""Instance generators and batch drivers for the numerical studies.

Replication ``i`` of a study with master seed ``s`` draws its random instance
from ``instance_rng(s + i)`` and its purchase uniforms from ``make_rng(s + i)``.
Parameter draws within an instance go type by type, (baseline, alpha, beta)
for each, and the GLM slope is b2 = -beta.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import OutOfRange
from .metrics import (
    METRIC_COLUMNS,
    adaptivity_stats,
    counterfactual_regret,
    metrics_row,
    mixing_loss,
    observable_regret,
    summarize_adaptivity,
)
from .model import Instance, LinkKind, TypeSpec
from .policies import LearningPolicy
from .rng import instance_rng, replication_seed
from .simulator import simulate_policy_batch
from .steady_state import long_run_revenue_type, pof_upper_bound, price_of_fairness_batch

SUMMARY_SCHEMA = "loyalty-lab study-summary v1"
N_MAX = 20
POF_BINS = np.round(np.arange(1.0, 1.5 + 1e-9, 0.01), 2)
RHO_GRID = tuple(round(0.1 * i, 1) for i in range(1, 10))
K_GRID = tuple(range(2, 11))
MISSPEC_TRUTHS = (LinkKind.LINEAR, LinkKind.EXPONENTIAL, LinkKind.LOGIT)
MISSPEC_BASELINES = (0.05, 0.15, 0.25)
MISSPEC_HORIZONS = (1000, 2000, 5000)
LEARNING_HORIZONS = tuple([2**i for i in range(13)] + [5000])


# -- generators ---------------------------------------------------------------

def _exp_type(baseline, alpha, beta) -> TypeSpec:
    return TypeSpec(LinkKind.EXPONENTIAL, float(alpha), -float(beta), float(baseline))


def gen_rho_sweep(rng: np.random.Generator, rho1: float) -> Instance:
    """Frequent/infrequent two-type instance with type-1 share ``rho1``."""
    if not 0.0 < rho1 < 1.0:
        raise OutOfRange(f"rho1 must lie in (0, 1), got {rho1}")
    t1 = _exp_type(rng.uniform(0.05, 0.25), rng.uniform(1.0, 1.5), rng.uniform(1.0, 1.5))
    t2 = _exp_type(rng.uniform(0.5, 0.75), rng.uniform(0.0, 0.5), rng.uniform(0.0, 0.5))
    return Instance((t1, t2), (rho1, 1.0 - rho1), N_MAX)


def gen_two_type(rng: np.random.Generator) -> Instance:
    return gen_rho_sweep(rng, 0.5)


def gen_k_tiers(rng: np.random.Generator, k: int) -> Instance:
    """K equally weighted tiers; tier i = 0..K-1 has baseline in [i/K, (i+1)/K]
    and alpha, beta in [3(1 - i/K), 3(1 - (i-1)/K)]."""
    if k < 2:
        raise OutOfRange(f"need at least two tiers, got {k}")
    types = []
    for i in range(k):
        base = rng.uniform(i / k, (i + 1) / k)
        lo, hi = 3.0 * (1 - i / k), 3.0 * (1 - (i - 1) / k)
        types.append(_exp_type(base, rng.uniform(lo, hi), rng.uniform(lo, hi)))
    return Instance(tuple(types), tuple([1.0 / k] * k), N_MAX)


def gen_misspec(rng: np.random.Generator, truth: LinkKind, phi_bar: float) -> Instance:
    """Single type with the given true link; alpha, beta ~ U[1, 1.5]."""
    truth = LinkKind(truth)
    if truth is LinkKind.NONE:
        raise OutOfRange("the ground truth needs points pressure")
    alpha, beta = rng.uniform(1.0, 1.5), rng.uniform(1.0, 1.5)
    return Instance((TypeSpec(truth, float(alpha), -float(beta), float(phi_bar)),), (1.0,), N_MAX)


def regret_study_instance() -> Instance:
    """Two customers, one frequent-but-insensitive and one infrequent-but-sensitive."""
    return Instance(
        (TypeSpec(LinkKind.EXPONENTIAL, 1.5, -1.5, 0.25), TypeSpec(LinkKind.EXPONENTIAL, 0.05, -0.05, 0.5)),
        (0.5, 0.5),
        N_MAX,
    )


def tight_pof_instance() -> Instance:
    """Two equal-weight types reaching the K = 2 worst case price of fairness 3/2.

    Type 1 always buys under any program and never without one; type 2 buys
    every period regardless.
    """
    always = TypeSpec(LinkKind.EXPONENTIAL, 0.0, 0.0, 0.0)
    steady = TypeSpec(LinkKind.NONE, 0.0, 0.0, 1.0)
    return Instance((always, steady), (0.5, 0.5), 1)


def gen_lower_bound_pair(delta: float) -> tuple[Instance, Instance]:
    """Two one-type instances with N_max = 2 and phi(tau) = 1/2 + b2 tau, whose
    optimal thresholds differ (1 and 2) while their parameters are close."""
    if not 0.0 < delta <= 0.5:
        raise OutOfRange(f"delta must lie in (0, 1/2], got {delta}")

    def make(s):
        spec = TypeSpec(LinkKind.LINEAR, 0.75 - s, s - 0.5, max(s - 0.25, 0.0))
        return Instance((spec,), (1.0,), 2)

    return make(math.sqrt((1 - delta) / 8)), make(math.sqrt((1 + delta) / 8))


def rev_gap_closed_form(delta: float, which: str) -> float:
    """R(1) - R(2) for the first or second instance of the pair, in closed form."""
    if which == "first":
        a = math.sqrt(1 - delta)
        return delta * a / (2 * (a + math.sqrt(2)) * (math.sqrt(2 - 2 * delta) - delta))
    if which == "second":
        a = math.sqrt(1 + delta)
        return -delta * a / (2 * (a + math.sqrt(2)) * (delta + math.sqrt(2 + 2 * delta)))
    raise ValueError("which must be 'first' or 'second'")


def rev_gap_steady_state(instance: Instance) -> float:
    spec = instance.types[0]
    return long_run_revenue_type(spec, 1, allow_degenerate=True) - long_run_revenue_type(spec, 2, allow_degenerate=True)


# -- study plumbing -----------------------------------------------------------

@dataclass
class StudyConfig:
    study: str
    reps: int
    seed: int = 0
    horizons: tuple[int, ...] = ()
    m: int = 2
    policies: tuple[str, ...] = ("stable", "fair")
    out: Path | None = None
    jobs: int = 1
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.reps < 1:
            raise ValueError("replication count must be at least 1")
        if self.study in ("learning", "misspec"):
            if not self.horizons:
                raise ValueError("a learning study needs at least one horizon")
            if min(self.horizons) < 1:
                raise ValueError("horizons must be positive")
        if self.jobs < 1:
            raise ValueError("jobs must be at least 1")


def _parallel_map(fn: Callable, items: Sequence, jobs: int) -> list:
    """Ordered map; results come back in input order whatever the scheduling."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _write_csv(path: Path, columns: Sequence[str], rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(row[k]) for k in columns})


def _fmt(v):
    if isinstance(v, float):
        if math.isinf(v):
            return "inf"
        return repr(v)
    return v


def _write_summary(out: Path | None, study: str, summary: dict) -> None:
    if out is None:
        return
    d = Path(out) / study
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "summary.json", "w") as fh:
        json.dump({"schema": SUMMARY_SCHEMA, "study": study, **summary}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def histogram(values: np.ndarray, edges=POF_BINS) -> dict:
    counts, _ = np.histogram(np.clip(values, edges[0], edges[-1]), bins=edges)
    return {"edges": [float(e) for e in edges], "counts": [int(c) for c in counts]}


def _batch_pof(instances: list[Instance]) -> dict:
    phi = np.stack([inst.phi_table() for inst in instances])
    base = np.stack([inst.baselines for inst in instances])
    rho = np.array([inst.rho for inst in instances])
    return price_of_fairness_batch(phi, base, rho)


def _pof_summary(res: dict) -> dict:
    pof = res["pof"]
    return {
        "mean": float(pof.mean()),
        "max": float(pof.max()),
        "min": float(pof.min()),
        "count": int(pof.size),
        "histogram": histogram(pof),
    }


# -- complete-information studies ---------------------------------------------

def run_pof_study(cfg: StudyConfig) -> dict:
    """Distribution of the price of fairness and of the optimal thresholds."""
    insts = [gen_two_type(instance_rng(replication_seed(cfg.seed, i))) for i in range(cfg.reps)]
    res = _batch_pof(insts)
    summary = _pof_summary(res)
    summary["bound"] = pof_upper_bound(2)
    n_star = res["n_star"]
    summary["n_star_counts"] = {("inf" if n == 0 else str(int(n))): int(c) for n, c in zip(*np.unique(n_star, return_counts=True))}
    pers = res["n_star_personalized"]
    summary["n_star_personalized_counts"] = [
        {("inf" if n == 0 else str(int(n))): int(c) for n, c in zip(*np.unique(pers[:, k], return_counts=True))}
        for k in range(pers.shape[1])
    ]
    if cfg.out is not None:
        rows = [{"rep": i, "seed": replication_seed(cfg.seed, i), "pof": float(res["pof"][i]),
                 "n_star": _thr(n_star[i]), "n_star_1": _thr(pers[i, 0]), "n_star_2": _thr(pers[i, 1]),
                 "r_pers": float(res["r_pers"][i]), "r_nonpers": float(res["r_nonpers"][i])}
                for i in range(cfg.reps)]
        _write_csv(Path(cfg.out) / "pof" / "pof.csv",
                   ["rep", "seed", "pof", "n_star", "n_star_1", "n_star_2", "r_pers", "r_nonpers"], rows)
    _write_summary(cfg.out, "pof", summary)
    return summary


def _thr(n):
    return "inf" if n == 0 else int(n)


def run_rho_study(cfg: StudyConfig) -> dict:
    """Price of fairness against the type-1 share, with common parameter draws across shares."""
    grid = tuple(cfg.params.get("rho_grid", RHO_GRID))
    rows, summary = [], {"rho1": list(grid), "mean": [], "max": []}
    for rho1 in grid:
        insts = [gen_rho_sweep(instance_rng(replication_seed(cfg.seed, i)), rho1) for i in range(cfg.reps)]
        pof = _batch_pof(insts)["pof"]
        summary["mean"].append(float(pof.mean()))
        summary["max"].append(float(pof.max()))
        rows.append({"rho1": rho1, "mean_pof": float(pof.mean()), "max_pof": float(pof.max())})
    if cfg.out is not None:
        _write_csv(Path(cfg.out) / "rho" / "rho.csv", ["rho1", "mean_pof", "max_pof"], rows)
    _write_summary(cfg.out, "rho", summary)
    return summary


def run_ktier_study(cfg: StudyConfig) -> dict:
    """Average and worst observed price of fairness against the number of tiers."""
    grid = tuple(cfg.params.get("k_grid", K_GRID))
    rows, summary = [], {"k": list(grid), "mean": [], "max": [], "bound": []}
    for k in grid:
        insts = [gen_k_tiers(instance_rng(replication_seed(cfg.seed, i)), k) for i in range(cfg.reps)]
        pof = _batch_pof(insts)["pof"]
        summary["mean"].append(float(pof.mean()))
        summary["max"].append(float(pof.max()))
        summary["bound"].append(pof_upper_bound(k))
        rows.append({"k": k, "mean_pof": float(pof.mean()), "max_pof": float(pof.max()), "bound": pof_upper_bound(k)})
    if cfg.out is not None:
        _write_csv(Path(cfg.out) / "ktier" / "ktier.csv", ["k", "mean_pof", "max_pof", "bound"], rows)
    _write_summary(cfg.out, "ktier", summary)
    return summary


# -- learning studies ---------------------------------------------------------

def _policy(name: str, fit_link=None) -> LearningPolicy:
    if name not in ("stable", "fair"):
        raise ValueError(f"learning studies run 'stable' or 'fair', not {name!r}")
    return LearningPolicy(fair=name == "fair", fit_link=fit_link)


def _learning_chunk(args):
    name, seeds, m, t_max, horizons = args
    inst = regret_study_instance()
    runs = simulate_policy_batch([inst] * len(seeds), _policy(name), m, t_max, seeds)
    rows, per_epoch, csets, ident = [], [], [], 0.0
    for run in runs:
        for t in horizons:
            rows.append(metrics_row(run, inst, t))
        ident = max(ident, max(abs(r["obs_regret"] - r["regret"] - r["mixing_loss"]) for r in rows[-len(horizons):]))
        per_epoch.append([
            (counterfactual_regret(run, inst, ev.start + ev.length) - counterfactual_regret(run, inst, ev.start)
             if ev.start > 0 else counterfactual_regret(run, inst, ev.length)) / ev.length
            for ev in _epochs_by_plan(run)
        ])
        csets.append([len(ev.detail["consideration_set"]) if ev.detail else None for ev in run.epoch_log])
    return rows, per_epoch, csets, ident, [adaptivity_stats(r) for r in runs]


def _epochs_by_plan(run):
    """Epoch windows of the plan, including those after a termination."""
    from .policies import doubling_lengths

    out, start = [], 0
    for n in doubling_lengths(1, run.horizon):
        length = min(n, run.horizon - start)
        out.append(_Window(start, length))
        start += n
    return out


@dataclass(frozen=True)
class _Window:
    start: int
    length: int


def _chunks(seeds: list[int], size: int) -> list[list[int]]:
    return [seeds[i:i + size] for i in range(0, len(seeds), size)]


def run_learning_study(cfg: StudyConfig) -> dict:
    """Regret, mixing loss and adaptivity of the learners on the two-customer instance.

    Both learners see the same seeds (paired comparison). Shorter horizons
    are prefixes of the longest run.
    """
    horizons = tuple(sorted(set(cfg.horizons)))
    t_max = horizons[-1]
    seeds = [replication_seed(cfg.seed, i) for i in range(cfg.reps)]
    chunk = int(cfg.params.get("chunk", 100))
    summary: dict = {"horizons": list(horizons), "m": cfg.m, "reps": cfg.reps, "policies": {}}
    all_rows = []
    ident = 0.0
    for name in cfg.policies:
        parts = _parallel_map(_learning_chunk, [(name, s, cfg.m, t_max, horizons) for s in _chunks(seeds, chunk)], cfg.jobs)
        rows = [r for p in parts for r in p[0]]
        per_epoch = [e for p in parts for e in p[1]]
        csets = [c for p in parts for c in p[2]]
        stats = [s for p in parts for s in p[4]]
        ident = max([ident] + [p[3] for p in parts])
        all_rows += rows
        by_t = {t: [r for r in rows if r["T"] == t] for t in horizons}
        pol = {
            "regret": [float(np.mean([r["regret"] for r in by_t[t]])) for t in horizons],
            "obs_regret": [float(np.mean([r["obs_regret"] for r in by_t[t]])) for t in horizons],
            "mixing_loss": [float(np.mean([r["mixing_loss"] for r in by_t[t]])) for t in horizons],
            "gamma": [float(np.mean([r["gamma"] for r in by_t[t]])) for t in horizons],
            "per_epoch_regret": np.mean(np.array(per_epoch, dtype=float), axis=0).tolist(),
            "adaptivity": summarize_adaptivity(stats),
        }
        if name == "fair":
            width = max(len(c) for c in csets)
            sizes = np.full((len(csets), width), np.nan)
            for i, c in enumerate(csets):
                for j, v in enumerate(c):
                    if v is not None:
                        sizes[i, j] = v
            with np.errstate(all="ignore"):
                pol["consideration_set_size"] = [None if np.all(np.isnan(col)) else float(np.nanmean(col)) for col in sizes.T]
        summary["policies"][name] = pol
    summary["identity_max_abs_error"] = ident
    if cfg.out is not None:
        _write_csv(Path(cfg.out) / "learning" / "metrics.csv", METRIC_COLUMNS, all_rows)
    _write_summary(cfg.out, "learning", summary)
    return summary


def _misspec_chunk(args):
    name, truth, phi_bar, seeds, horizons = args
    insts = [gen_misspec(instance_rng(s), truth, phi_bar) for s in seeds]
    runs = simulate_policy_batch(insts, _policy(name, LinkKind.LINEAR), 1, max(horizons), seeds)
    rows = []
    ident = 0.0
    for run, inst in zip(runs, insts):
        for t in horizons:
            row = metrics_row(run, inst, t)
            row.update(truth=LinkKind(truth).value, phi_bar=phi_bar)
            ident = max(ident, abs(row["obs_regret"] - row["regret"] - row["mixing_loss"]))
            rows.append(row)
    return rows, ident


def run_misspec_study(cfg: StudyConfig) -> dict:
    """Performance ratio of the learners when they always fit the linear link.

    For each cell the same seeds (hence the same true parameters and
    uniforms) are used by both learners; shorter horizons are prefixes.
    """
    horizons = tuple(sorted(set(cfg.horizons)))
    truths = tuple(LinkKind(t) for t in cfg.params.get("truths", MISSPEC_TRUTHS))
    bases = tuple(cfg.params.get("phi_bars", MISSPEC_BASELINES))
    seeds = [replication_seed(cfg.seed, i) for i in range(cfg.reps)]
    chunk = int(cfg.params.get("chunk", 250))
    tasks = [(name, truth, pb, s, horizons) for name in cfg.policies for truth in truths for pb in bases
             for s in _chunks(seeds, chunk)]
    parts = _parallel_map(_misspec_chunk, tasks, cfg.jobs)
    rows = [r for p in parts for r in p[0]]
    ident = max(p[1] for p in parts)
    table = []
    for name in cfg.policies:
        for truth in truths:
            for pb in bases:
                for t in horizons:
                    g = [r["gamma"] for r in rows
                         if r["policy"] == name and r["truth"] == truth.value and r["phi_bar"] == pb and r["T"] == t]
                    table.append({"policy": name, "truth": truth.value, "phi_bar": pb, "T": t, "gamma": float(np.mean(g))})
    summary = {"cells": table, "reps": cfg.reps, "identity_max_abs_error": ident}
    if cfg.out is not None:
        _write_csv(Path(cfg.out) / "misspec" / "metrics.csv", ["truth", "phi_bar"] + METRIC_COLUMNS, rows)
        _write_csv(Path(cfg.out) / "misspec" / "gamma.csv", ["policy", "truth", "phi_bar", "T", "gamma"], table)
    _write_summary(cfg.out, "misspec", summary)
    return summary


def misspec_gamma(summary: dict, policy: str, truth: str, phi_bar: float, t: int) -> float:
    for c in summary["cells"]:
        if c["policy"] == policy and c["truth"] == truth and c["phi_bar"] == phi_bar and c["T"] == t:
            return c["gamma"]
    raise KeyError((policy, truth, phi_bar, t))


def run_lbpair_study(cfg: StudyConfig) -> dict:
    deltas = tuple(cfg.params.get("deltas", (0.1, 0.3, 0.5)))
    rows = []
    for d in deltas:
        a, b = gen_lower_bound_pair(d)
        rows.append({
            "delta": d,
            "b2": a.types[0].b2, "b2_prime": b.types[0].b2,
            "gap_first": rev_gap_closed_form(d, "first"), "gap_first_steady": rev_gap_steady_state(a),
            "gap_second": rev_gap_closed_form(d, "second"), "gap_second_steady": rev_gap_steady_state(b),
        })
    if cfg.out is not None:
        _write_csv(Path(cfg.out) / "lbpair" / "lbpair.csv", list(rows[0]), rows)
    summary = {"rows": rows}
    _write_summary(cfg.out, "lbpair", summary)
    return summary


STUDIES = {
    "pof": run_pof_study,
    "rho": run_rho_study,
    "ktier": run_ktier_study,
    "learning": run_learning_study,
    "misspec": run_misspec_study,
    "lbpair": run_lbpair_study,
}

DEFAULTS = {
    "pof": dict(reps=10_000, seed=42),
    "rho": dict(reps=10_000, seed=42),
    "ktier": dict(reps=10_000, seed=42),
    "learning": dict(reps=100, seed=0, horizons=LEARNING_HORIZONS, m=2),
    "misspec": dict(reps=500, seed=0, horizons=MISSPEC_HORIZONS, m=1),
    "lbpair": dict(reps=1, seed=0),
}


def run_study(name: str, **overrides) -> dict:
    if name not in STUDIES:
        raise ValueError(f"unknown study {name!r}; choose from {sorted(STUDIES)}")
    kw = dict(DEFAULTS[name])
    kw.update({k: v for k, v in overrides.items() if v is not None})
    return STUDIES[name](StudyConfig(study=name, **kw))
