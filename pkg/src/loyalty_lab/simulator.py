"""Discrete-time simulation of a customer population under a threshold sequence.

Draw-order contract: each run owns one Philox stream and takes exactly one
uniform per customer per period, period-major and in customer index order,
whether or not the outcome is forced. A customer buys iff its uniform is below
its current purchase probability. Two runs with the same seed therefore share
their uniforms, which couples trajectories across policies.

``advance_period`` is the plain per-customer reference implementation. The
engine behind ``simulate_fixed``/``simulate_policy``/``simulate_many``
advances every customer of many runs at once with numpy and is checked
against the reference in the test suite.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .errors import NonIntegralPartition
from .estimation import SampleSet
from .model import Instance, purchase_prob
from .rng import make_rng
from .steady_state import format_threshold, is_infinite

PAUSED = -1
RUNRECORD_HEADER = "# loyalty-lab runrecord v1"
EPOCH_LOG_SCHEMA = "loyalty-lab epoch-log v1"


@dataclass
class CustomerState:
    type_id: int
    stock: int = 0


@dataclass(frozen=True)
class PeriodOutcome:
    t: int
    threshold: float
    tau: np.ndarray  # PAUSED when no program runs
    x: np.ndarray
    redeemed: np.ndarray


def advance_period(states: list[CustomerState], threshold, instance: Instance, rng, t: int = 0) -> PeriodOutcome:
    """One period for every customer, mutating ``states`` in place.

    ``rng`` is a numpy Generator or an iterator of pre-drawn uniforms.
    """
    draw = rng.random if hasattr(rng, "random") else rng.__next__
    paused = is_infinite(threshold)
    m = len(states)
    tau = np.empty(m, dtype=np.int16)
    x = np.zeros(m, dtype=np.int8)
    red = np.zeros(m, dtype=bool)
    for j, st in enumerate(states):
        spec = instance.types[st.type_id]
        u = draw()
        if paused:
            tau[j] = PAUSED
            x[j] = u < spec.baseline
            continue
        tj = max(int(threshold) - st.stock, 0)
        tau[j] = tj
        x[j] = u < purchase_prob(spec, tj)
        if x[j]:
            if tj == 0:
                red[j] = True
                st.stock = 0
            else:
                st.stock += 1
    return PeriodOutcome(t, math.inf if paused else int(threshold), tau, x, red)


def partition(instance: Instance, m: int) -> np.ndarray:
    """Type label of each customer: contiguous blocks of rho_k * m customers in type order."""
    if m < 1:
        raise ValueError("m must be positive")
    sizes = []
    for r in instance.rho:
        size = r * m
        if abs(size - round(size)) > 1e-9:
            raise NonIntegralPartition(f"rho_k * M = {size} is not an integer")
        sizes.append(int(round(size)))
    if sum(sizes) != m:
        raise NonIntegralPartition("type sizes do not add up to M")
    return np.repeat(np.arange(instance.k), sizes)


# -- run records --------------------------------------------------------------

@dataclass
class EpochEvent:
    h: int
    start: int
    length: int
    threshold: float
    betas: list | None = None
    terminated: bool = False
    flags: tuple[str, ...] = ()
    detail: dict | None = None

    def to_dict(self) -> dict:
        return {
            "h": self.h,
            "start": self.start,
            "length": self.length,
            "threshold": format_threshold(self.threshold),
            "betas": None if self.betas is None else [None if b is None else list(b) for b in self.betas],
            "terminated": self.terminated,
            "flags": list(self.flags),
            "detail": self.detail,
        }


@dataclass
class RunRecord:
    instance: Instance
    m: int
    horizon: int
    seed: int
    thresholds: np.ndarray  # (T,), inf while paused
    tau: np.ndarray  # (T, M) int16, PAUSED while paused
    x: np.ndarray  # (T, M) int8
    redeemed: np.ndarray  # (T, M) bool
    type_ids: np.ndarray  # (M,)
    epoch_log: list[EpochEvent] = field(default_factory=list)
    final_stocks: np.ndarray | None = None
    policy: str = ""

    def outcome(self, t: int) -> PeriodOutcome:
        return PeriodOutcome(t, float(self.thresholds[t]), self.tau[t], self.x[t], self.redeemed[t])

    @property
    def outcomes(self):
        return [self.outcome(t) for t in range(self.horizon)]

    def logged_thresholds(self) -> np.ndarray:
        """Per-period thresholds reconstructed from the epoch log."""
        out = np.empty(self.horizon)
        for ev in self.epoch_log:
            out[ev.start: ev.start + ev.length] = ev.threshold
        return out

    def samples(self, start: int = 0, stop: int | None = None) -> SampleSet:
        stop = self.horizon if stop is None else stop
        ids = np.broadcast_to(self.type_ids, (stop - start, self.m))
        return SampleSet.from_observations(ids, self.tau[start:stop], self.x[start:stop],
                                           self.instance.k, self.instance.n_max)

    def write_csv(self, path) -> None:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            fh.write(RUNRECORD_HEADER + "\n")
            w = csv.writer(fh)
            w.writerow(["period", "threshold", "customer", "type", "tau", "x", "redeemed"])
            for t in range(self.horizon):
                thr = format_threshold(self.thresholds[t])
                for j in range(self.m):
                    w.writerow([t, thr, j, int(self.type_ids[j]), int(self.tau[t, j]),
                                int(self.x[t, j]), int(self.redeemed[t, j])])

    def epoch_log_json(self) -> dict:
        return {
            "schema": EPOCH_LOG_SCHEMA,
            "seed": self.seed,
            "policy": self.policy,
            "horizon": self.horizon,
            "m": self.m,
            "epochs": [ev.to_dict() for ev in self.epoch_log],
        }


# -- policy protocol ----------------------------------------------------------

@dataclass(frozen=True)
class Decision:
    threshold: float
    terminated: bool = False
    betas: list | None = None
    flags: tuple[str, ...] = ()
    detail: dict | None = None


class Controller(Protocol):
    """Per-run policy state driven by the engine.

    ``lengths`` are the planned epoch lengths (the engine clips the last one
    at the horizon), ``initial`` the epoch-1 threshold and ``window`` either
    "pooled" (all history) or "epoch" (previous epoch only).
    """

    lengths: Sequence[int]
    initial: float
    window: str

    def decide(self, h: int, samples: SampleSet) -> Decision: ...


class PolicyHandle(Protocol):
    name: str

    def start(self, instance: Instance, m: int, t_horizon: int) -> Controller: ...


@dataclass
class _Fixed:
    lengths: Sequence[int]
    initial: float
    window: str = "pooled"

    def decide(self, h, samples):  # pragma: no cover - single epoch
        return Decision(self.initial)


def epoch_starts(lengths: Sequence[int], t_horizon: int) -> list[tuple[int, int]]:
    """(start, clipped length) of each epoch that begins before the horizon."""
    out, start = [], 0
    for n in lengths:
        if start >= t_horizon:
            break
        n = int(n)
        if n < 1:
            raise ValueError("epoch lengths must be positive")
        out.append((start, min(n, t_horizon - start)))
        start += n
    if start < t_horizon:
        raise ValueError("epoch plan does not cover the horizon")
    return out


# -- engine -------------------------------------------------------------------

def simulate_many(instances: Sequence[Instance], controllers: Sequence[Controller], m: int, t_horizon: int,
                  seeds: Sequence[int], initial_stocks=None, policy_name: str = "") -> list[RunRecord]:
    """Run several independent simulations in lockstep.

    Each run keeps its own instance, controller and random stream, so the
    records are identical to running them one at a time.
    """
    R = len(instances)
    if not (len(controllers) == len(seeds) == R):
        raise ValueError("instances, controllers and seeds differ in length")
    if t_horizon < 1:
        raise ValueError("horizon must be at least 1")
    T, M = int(t_horizon), int(m)
    type_ids = [partition(inst, M) for inst in instances]
    width = max(inst.n_max for inst in instances) + 1
    C = R * M
    phi = np.ones((C, width))
    base = np.empty(C)
    for r, inst in enumerate(instances):
        table = inst.phi_table()
        rows = table[type_ids[r]]
        phi[r * M:(r + 1) * M, : inst.n_max + 1] = rows
        base[r * M:(r + 1) * M] = inst.baselines[type_ids[r]]
    U = np.empty((T, C))
    for r, s in enumerate(seeds):
        U[:, r * M:(r + 1) * M] = make_rng(s).random((T, M))

    stock = np.zeros(C, dtype=np.int64)
    if initial_stocks is not None:
        stock[:] = np.asarray(initial_stocks, dtype=np.int64).reshape(C)
        if stock.min() < 0:
            raise ValueError("initial stocks must be non-negative")

    tau_all = np.empty((T, C), dtype=np.int16)
    x_all = np.empty((T, C), dtype=np.int8)
    red_all = np.empty((T, C), dtype=bool)
    thr_hist = np.empty((T, R))

    schedules = [epoch_starts(c.lengths, T) for c in controllers]
    thr = np.array([_as_threshold(c.initial) for c in controllers], dtype=float)
    logs: list[list[EpochEvent]] = [[EpochEvent(1, 0, sched[0][1], thr[r])] for r, sched in enumerate(schedules)]
    pooled = [SampleSet.empty(inst.k, inst.n_max) for inst in instances]
    done = [False] * R
    decisions: dict[int, list[tuple[int, int]]] = {}
    for r, sched in enumerate(schedules):
        for h, (start, _) in enumerate(sched[1:], start=2):
            decisions.setdefault(start, []).append((r, h))

    rows = np.arange(C)
    cust_thr = np.repeat(thr, M)

    def refresh():
        nonlocal paused, n_int
        paused = np.isinf(cust_thr)
        n_int = np.where(paused, 0, cust_thr).astype(np.int64)

    paused = n_int = None
    refresh()

    for t in range(T):
        if t in decisions:
            for r, h in decisions[t]:
                if done[r]:
                    continue
                prev_start, prev_len = schedules[r][h - 2]
                cols = slice(r * M, (r + 1) * M)
                ids = np.broadcast_to(type_ids[r], (prev_len, M))
                inst = instances[r]
                last = SampleSet.from_observations(ids, tau_all[prev_start:t, cols], x_all[prev_start:t, cols],
                                                   inst.k, inst.n_max)
                pooled[r] = pooled[r] + last
                window = controllers[r].window
                dec = controllers[r].decide(h, pooled[r] if window == "pooled" else last)
                start, length = schedules[r][h - 1]
                if dec.terminated:
                    thr[r] = math.inf
                    done[r] = True
                    length = T - start
                else:
                    thr[r] = _as_threshold(dec.threshold)
                logs[r].append(EpochEvent(h, start, length, thr[r], dec.betas, dec.terminated, dec.flags, dec.detail))
                cust_thr[cols] = thr[r]
            refresh()
        tau = n_int - stock
        np.maximum(tau, 0, out=tau)
        p = np.where(paused, base, phi[rows, tau])
        x = U[t] < p
        active = ~paused
        red = x & active & (tau == 0)
        stock += x & active & (tau > 0)
        stock[red] = 0
        tau_all[t] = np.where(paused, PAUSED, tau)
        x_all[t] = x
        red_all[t] = red
        thr_hist[t] = thr

    out = []
    for r in range(R):
        cols = slice(r * M, (r + 1) * M)
        out.append(RunRecord(
            instance=instances[r], m=M, horizon=T, seed=int(seeds[r]),
            thresholds=thr_hist[:, r].copy(), tau=tau_all[:, cols].copy(), x=x_all[:, cols].copy(),
            redeemed=red_all[:, cols].copy(), type_ids=type_ids[r], epoch_log=logs[r],
            final_stocks=stock[cols].copy(), policy=policy_name,
        ))
    return out


def _as_threshold(n) -> float:
    if is_infinite(n):
        return math.inf
    if int(n) != n or n < 1:
        raise ValueError(f"threshold must be a positive integer or infinity, got {n}")
    return float(n)


def simulate_fixed(instance: Instance, n, m: int, t_horizon: int, seed: int, initial_stocks=None) -> RunRecord:
    ctl = _Fixed([t_horizon], _as_threshold(n))
    return simulate_many([instance], [ctl], m, t_horizon, [seed], initial_stocks, policy_name="fixed")[0]


def simulate_policy(instance: Instance, policy: PolicyHandle, m: int, t_horizon: int, seed: int) -> RunRecord:
    ctl = policy.start(instance, m, t_horizon)
    return simulate_many([instance], [ctl], m, t_horizon, [seed], policy_name=getattr(policy, "name", ""))[0]


def simulate_policy_batch(instances: Sequence[Instance], policy: PolicyHandle, m: int, t_horizon: int,
                          seeds: Sequence[int]) -> list[RunRecord]:
    ctls = [policy.start(inst, m, t_horizon) for inst in instances]
    return simulate_many(instances, ctls, m, t_horizon, seeds, policy_name=getattr(policy, "name", ""))


def save_epoch_log(record: RunRecord, path) -> None:
    with open(Path(path), "w") as fh:
        json.dump(record.epoch_log_json(), fh, indent=2)
