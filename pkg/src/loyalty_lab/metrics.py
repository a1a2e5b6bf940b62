"""Evaluation functionals over run records.

All functions accept ``upto`` to score only the first ``upto`` periods, which
is how shorter horizons are read off one long run (the practical epoch plan
does not depend on the horizon, so a prefix is itself a valid run).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ZeroRevenue
from .model import Instance
from .simulator import PAUSED, RunRecord
from .steady_state import optimal_threshold, revenue_curve_from_phi

METRIC_COLUMNS = ["seed", "policy", "T", "M", "regret", "obs_regret", "mixing_loss", "gamma",
                  "n_changes", "n_increases", "mean_rel_change", "mean_rel_increase"]


def _horizon(run: RunRecord, upto):
    t = run.horizon if upto is None else int(upto)
    if not 1 <= t <= run.horizon:
        raise ValueError(f"upto must lie in 1..{run.horizon}")
    return t


def _revenue_per_period(run: RunRecord, instance: Instance, t: int) -> np.ndarray:
    """R(N_t) for each period, closed form, with R(inf) = sum_k rho_k baseline_k."""
    curve = np.asarray(instance.rho) @ revenue_curve_from_phi(instance.phi_table())
    thr = run.thresholds[:t]
    finite = np.isfinite(thr)
    out = np.full(t, float(np.dot(instance.rho, instance.baselines)))
    out[finite] = curve[thr[finite].astype(np.int64) - 1]
    return out


def _realized_expected(run: RunRecord, instance: Instance, t: int) -> np.ndarray:
    """Per-period sum over customers of phi(tau) 1{tau > 0}, or the baseline while paused."""
    table = instance.phi_table()
    tau = run.tau[:t].astype(np.int64)
    k = np.broadcast_to(run.type_ids, tau.shape)
    phi = table[k, np.maximum(tau, 0)]
    val = np.where(tau > 0, phi, 0.0)
    val = np.where(tau == PAUSED, instance.baselines[k], val)
    return val.sum(axis=1)


def counterfactual_regret(run: RunRecord, instance: Instance, upto: int | None = None) -> float:
    t = _horizon(run, upto)
    best = optimal_threshold(instance).value
    return run.m * t * best - run.m * math.fsum(_revenue_per_period(run, instance, t))


def observable_regret(run: RunRecord, instance: Instance, upto: int | None = None) -> float:
    t = _horizon(run, upto)
    best = optimal_threshold(instance).value
    return run.m * t * best - math.fsum(_realized_expected(run, instance, t))


def mixing_loss(run: RunRecord, instance: Instance, upto: int | None = None) -> float:
    t = _horizon(run, upto)
    steady = run.m * _revenue_per_period(run, instance, t)
    return math.fsum(steady) - math.fsum(_realized_expected(run, instance, t))


def performance_ratio(run: RunRecord, instance: Instance, upto: int | None = None) -> float:
    """sum_t R(N_t) / (T R(N*)), N* the best finite threshold."""
    t = _horizon(run, upto)
    # zero purchase probabilities make the chain absorbing; the closed form then gives R = 0
    best = float(np.max(np.asarray(instance.rho) @ revenue_curve_from_phi(instance.phi_table())))
    if best <= 0.0:
        raise ZeroRevenue("optimal revenue is zero")
    return math.fsum(_revenue_per_period(run, instance, t)) / (t * best)


@dataclass(frozen=True)
class AdaptivityStats:
    n_changes: int
    n_increases: int
    mean_abs_rel_change: float  # fraction; 0 when there is no finite-to-finite change
    mean_rel_increase: float  # fraction; 0 when there is no increase
    n_relative: int = 0  # finite-to-finite changes behind mean_abs_rel_change


def threshold_path(run: RunRecord, upto: int | None = None) -> list[float]:
    """Threshold of each epoch that starts within the first ``upto`` periods."""
    t = _horizon(run, upto)
    return [ev.threshold for ev in run.epoch_log if ev.start < t]


def adaptivity_from_path(path) -> AdaptivityStats:
    changes = increases = 0
    rel, inc = [], []
    for a, b in zip(path[:-1], path[1:]):
        if a == b:
            continue
        changes += 1
        if math.isinf(a) or math.isinf(b):
            continue
        rel.append(abs(b - a) / a)
        if b > a:
            increases += 1
            inc.append((b - a) / a)
    return AdaptivityStats(
        changes, increases,
        float(np.mean(rel)) if rel else 0.0,
        float(np.mean(inc)) if inc else 0.0,
        len(rel),
    )


def adaptivity_stats(run: RunRecord, upto: int | None = None) -> AdaptivityStats:
    return adaptivity_from_path(threshold_path(run, upto))


def metrics_row(run: RunRecord, instance: Instance, upto: int | None = None) -> dict:
    t = _horizon(run, upto)
    ad = adaptivity_stats(run, t)
    return {
        "seed": run.seed,
        "policy": run.policy,
        "T": t,
        "M": run.m,
        "regret": counterfactual_regret(run, instance, t),
        "obs_regret": observable_regret(run, instance, t),
        "mixing_loss": mixing_loss(run, instance, t),
        "gamma": performance_ratio(run, instance, t),
        "n_changes": ad.n_changes,
        "n_increases": ad.n_increases,
        "mean_rel_change": ad.mean_abs_rel_change,
        "mean_rel_increase": ad.mean_rel_increase,
    }


def summarize_adaptivity(stats: list[AdaptivityStats]) -> dict:
    """Across-run averages; the relative terms average only over runs where they are defined."""
    rel = [s.mean_abs_rel_change for s in stats if s.n_relative > 0]
    inc = [s.mean_rel_increase for s in stats if s.n_increases > 0]
    return {
        "n_changes": float(np.mean([s.n_changes for s in stats])),
        "n_increases": float(np.mean([s.n_increases for s in stats])),
        "mean_rel_change": float(np.mean(rel)) if rel else 0.0,
        "mean_rel_increase": float(np.mean(inc)) if inc else 0.0,
        "runs": len(stats),
    }


def as_dict(stats: AdaptivityStats) -> dict:
    return asdict(stats)
