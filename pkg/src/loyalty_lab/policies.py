"""Threshold-learning policies: epoch plans, Stable-Greedy, Fair-Greedy and baselines.

Both learners run in doubling epochs. At the start of epoch h >= 2 they fit
the per-type purchase models by maximum likelihood, evaluate the long-run
revenue curve R(N; beta_hat) and compare the best of it with the known
no-loyalty revenue sum_k rho_k * baseline_k.

* Stable-Greedy plays argmax_N R(N; beta_hat) and stops the program
  (threshold +inf for good) when R(inf) > R(N_h; beta_hat) + Delta_h.
* Fair-Greedy keeps a nested consideration set of thresholds within
  2 * Delta_h of the estimated best, plays its largest element, and stops
  when R(inf) > R(N_h; beta_hat) + 3 * Delta_h. Its thresholds never go up.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import Degenerate, HorizonTooShort, InvalidDelta
from .estimation import SIGMA, SampleSet, fit_mle, gate_constant
from .model import Box, Instance, LinkKind, RegularityReport, TypeSpec, validate_instance
from .simulator import Decision
from .steady_state import optimal_threshold, revenue_curve_from_phi, tmix_upper_bound


# -- epoch plans --------------------------------------------------------------

@dataclass(frozen=True)
class ConstantsBundle:
    sigma: float
    c_lambda: float
    c0: float
    c1: float
    c2: float
    c3: float
    c4: float
    c5: float
    t_hat_mix: float


def constants_bundle(report: RegularityReport, rho: Sequence[float], n_max: int, t_hat_mix: float | None = None) -> ConstantsBundle:
    if t_hat_mix is None:
        t_hat_mix = tmix_upper_bound(n_max, report.mu_min, report.mu_max)
    c_lambda = report.mu_min**2 / (12.0 * report.mu_max**2)
    c0 = gate_constant(report, n_max)
    rho_min = min(rho)
    c5 = sum(
        3.0 * report.mu_max**2 * report.l_mu * SIGMA / (report.mu_min**2 * report.kappa)
        * math.sqrt(2.0 * r * (1 + n_max**2) / c_lambda)
        for r in rho
    )
    return ConstantsBundle(
        sigma=SIGMA,
        c_lambda=c_lambda,
        c0=c0,
        c1=48.0 / c_lambda,
        c2=8.0 * c0 / (rho_min * c_lambda),
        c3=2.0 * c0 / (rho_min * c_lambda),
        c4=810.0 * n_max**4 / (rho_min * c_lambda**2),
        c5=c5,
        t_hat_mix=t_hat_mix,
    )


@dataclass(frozen=True)
class EpochPlan:
    t1: int
    lengths: tuple[int, ...]
    deltas: tuple[float, ...]  # deltas[h-1] = Delta_h; inf for h = 1 (no termination check)
    mode: str  # "theoretical" | "practical"
    window: str  # "epoch" | "pooled"

    @property
    def n_epochs(self) -> int:
        return len(self.lengths)

    def delta(self, h: int) -> float:
        return self.deltas[h - 1]


def doubling_lengths(t1: int, t_horizon: int) -> tuple[int, ...]:
    """T_h = 2^(h-1) T_1 for h = 1..H(T), H(T) the first H with sum_{h<=H} T_h >= T."""
    if t1 < 1 or t_horizon < 1:
        raise ValueError("t1 and the horizon must be positive")
    out, total, n = [], 0, int(t1)
    while total < t_horizon:
        out.append(n)
        total += n
        n *= 2
    return tuple(out)


def practical_epoch_plan(t_horizon: int, m: int, c: float = 0.15, t1: int = 1, window: str = "pooled") -> EpochPlan:
    """Doubling from T_1 with Delta_h = c / sqrt(M * sum_{i<h} T_i)."""
    lengths = doubling_lengths(t1, t_horizon)
    cum = np.cumsum(lengths)
    deltas = [math.inf] + [c / math.sqrt(m * cum[h - 2]) for h in range(2, len(lengths) + 1)]
    return EpochPlan(int(t1), lengths, tuple(deltas), "practical", _check_window(window))


def theoretical_epoch_plan(report: RegularityReport, instance, t_horizon: int, m: int, delta: float,
                           t_hat_mix: float | None = None, window: str = "epoch") -> EpochPlan:
    """Epoch schedule and termination thresholds with the explicit worst-case constants.

    ``instance`` only needs ``rho`` and ``n_max``.
    """
    if not 0.0 < delta < 1.0:
        raise InvalidDelta(f"delta must lie in (0, 1), got {delta}")
    if not report.valid:
        raise ValueError(f"regularity conditions fail: {report.flags}")
    k = constants_bundle(report, instance.rho, instance.n_max, t_hat_mix)
    log_d = math.log(1.0 / delta)
    t1 = max(
        k.c1 / (1.0 - 2.0 ** (-1.0 / k.t_hat_mix)),
        (k.c2 + k.c3 * log_d) / m,
        k.c4 * k.t_hat_mix * log_d / m,
    )
    if not math.isfinite(t1):
        raise HorizonTooShort("first epoch length is unbounded (mixing-time bound is infinite)")
    t1 = math.ceil(t1)
    if t_horizon < t1:
        raise HorizonTooShort(f"horizon {t_horizon} is shorter than the first epoch T_1 = {t1}")
    lengths = doubling_lengths(t1, t_horizon)
    deltas = [math.inf] + [k.c5 * math.sqrt(log_d / (m * lengths[h - 2])) for h in range(2, len(lengths) + 1)]
    return EpochPlan(t1, lengths, tuple(deltas), "theoretical", _check_window(window))


def _check_window(window: str) -> str:
    if window not in ("epoch", "pooled"):
        raise ValueError(f"mle window must be 'epoch' or 'pooled', got {window!r}")
    return window


# -- what the learner knows ---------------------------------------------------

@dataclass(frozen=True)
class InstanceShape:
    """Everything about an instance except the unknown GLM parameters."""

    links: tuple[LinkKind, ...]
    baselines: tuple[float, ...]
    boxes: tuple[Box, ...]
    rho: tuple[float, ...]
    n_max: int

    @classmethod
    def of(cls, instance: Instance, fit_link: LinkKind | None = None) -> "InstanceShape":
        """Shape of ``instance``; ``fit_link`` overrides the links the learner assumes."""
        links = tuple(t.link if fit_link is None or t.link is LinkKind.NONE else LinkKind(fit_link)
                      for t in instance.types)
        return cls(links, tuple(t.baseline for t in instance.types), tuple(t.box for t in instance.types),
                   instance.rho, instance.n_max)

    @property
    def k(self) -> int:
        return len(self.links)

    @property
    def no_loyalty_revenue(self) -> float:
        return float(np.dot(self.rho, self.baselines))

    def phi_table(self, betas) -> np.ndarray:
        return np.vstack([
            TypeSpec(link, b[0], min(b[1], 0.0), base, box).phi(self.n_max)
            for link, base, box, b in zip(self.links, self.baselines, self.boxes, betas)
        ])

    def revenue_curve(self, betas) -> np.ndarray:
        """R(N; betas) for N = 1..n_max (0 where some purchase probability vanishes)."""
        return np.asarray(self.rho) @ revenue_curve_from_phi(self.phi_table(betas))


def fit_types(shape: InstanceShape, samples: SampleSet, clamped: bool = True) -> list[tuple[float, float]]:
    """MLE per type; types without points pressure have nothing to fit."""
    betas = []
    for i, (link, base, box) in enumerate(zip(shape.links, shape.baselines, shape.boxes)):
        if link is LinkKind.NONE:
            betas.append((0.0, 0.0))
            continue
        betas.append(fit_mle(samples[i], link, base, box, clamped=clamped).beta)
    return betas


# -- decisions ----------------------------------------------------------------

def stable_greedy_decide(samples: SampleSet, plan: EpochPlan, h: int, shape: InstanceShape,
                         r_inf: float | None = None, previous: float | None = None,
                         clamped: bool = True) -> Decision:
    if h < 2:
        raise ValueError("decisions start at epoch 2")
    r_inf = shape.no_loyalty_revenue if r_inf is None else r_inf
    try:
        betas = fit_types(shape, samples, clamped)
    except Degenerate:
        return Decision(previous if previous is not None else shape.n_max, flags=("degenerate_fit",))
    curve = shape.revenue_curve(betas)
    i = int(np.argmax(curve))
    if r_inf > curve[i] + plan.delta(h):
        return Decision(math.inf, terminated=True, betas=betas)
    return Decision(i + 1, betas=betas)


@dataclass(frozen=True)
class ConsiderationSet:
    thresholds: tuple[int, ...]

    @classmethod
    def full(cls, n_max: int) -> "ConsiderationSet":
        return cls(tuple(range(1, n_max + 1)))

    @property
    def largest(self) -> int:
        return self.thresholds[-1]

    def filtered(self, curve: np.ndarray, slack: float) -> "ConsiderationSet":
        vals = curve[np.asarray(self.thresholds) - 1]
        keep = tuple(n for n, v in zip(self.thresholds, vals) if v >= vals.max() - slack)
        assert keep, "consideration set cannot lose its own maximiser"
        return ConsiderationSet(keep)


def fair_greedy_decide(samples: SampleSet, plan: EpochPlan, h: int, cset: ConsiderationSet, shape: InstanceShape,
                       r_inf: float | None = None, clamped: bool = True) -> tuple[Decision, ConsiderationSet]:
    if h < 2:
        raise ValueError("decisions start at epoch 2")
    r_inf = shape.no_loyalty_revenue if r_inf is None else r_inf
    try:
        betas = fit_types(shape, samples, clamped)
    except Degenerate:
        return Decision(cset.largest, flags=("degenerate_fit",)), cset
    curve = shape.revenue_curve(betas)
    delta = plan.delta(h)
    new = cset.filtered(curve, 2.0 * delta)
    n_h = new.largest
    if r_inf > curve[n_h - 1] + 3.0 * delta:
        return Decision(math.inf, terminated=True, betas=betas), new
    return Decision(n_h, betas=betas), new


# -- controllers and handles --------------------------------------------------

class _GreedyController:
    def __init__(self, shape: InstanceShape, plan: EpochPlan, fair: bool, n1: int, clamped: bool):
        self.shape = shape
        self.plan = plan
        self.fair = fair
        self.clamped = clamped
        self.lengths = plan.lengths
        self.window = plan.window
        self.initial = n1
        self.current = n1
        self.cset = ConsiderationSet.full(shape.n_max)
        self.history: list[ConsiderationSet] = [self.cset]

    def decide(self, h: int, samples: SampleSet) -> Decision:
        if self.fair:
            dec, self.cset = fair_greedy_decide(samples, self.plan, h, self.cset, self.shape, clamped=self.clamped)
            self.history.append(self.cset)
            dec = replace(dec, detail={"consideration_set": list(self.cset.thresholds)})
        else:
            dec = stable_greedy_decide(samples, self.plan, h, self.shape, previous=self.current, clamped=self.clamped)
        if not dec.terminated:
            self.current = int(dec.threshold)
        return dec


@dataclass
class LearningPolicy:
    """Stable-Greedy (``fair=False``) or Fair-Greedy (``fair=True``)."""

    fair: bool = False
    schedule: str = "practical"
    delta_c: float = 0.15
    t1: int | None = None
    window: str | None = None
    n1: int | None = None
    fit_link: LinkKind | None = None
    clamped: bool = True
    delta: float = 0.1  # confidence level for the theoretical schedule
    t_hat_mix: float | None = None

    @property
    def name(self) -> str:
        return "fair" if self.fair else "stable"

    def plan(self, instance: Instance, m: int, t_horizon: int) -> EpochPlan:
        if self.schedule == "practical":
            return practical_epoch_plan(t_horizon, m, self.delta_c, self.t1 or 1, self.window or "pooled")
        if self.schedule == "theoretical":
            report = validate_instance(instance)
            return theoretical_epoch_plan(report, instance, t_horizon, m, self.delta, self.t_hat_mix,
                                          self.window or "epoch")
        raise ValueError(f"unknown schedule {self.schedule!r}")

    def start(self, instance: Instance, m: int, t_horizon: int) -> _GreedyController:
        shape = InstanceShape.of(instance, self.fit_link)
        n1 = instance.n_max if (self.fair or self.n1 is None) else int(self.n1)
        if not 1 <= n1 <= instance.n_max:
            raise ValueError(f"initial threshold {n1} outside 1..{instance.n_max}")
        return _GreedyController(shape, self.plan(instance, m, t_horizon), self.fair, n1, self.clamped)


def StableGreedy(**kw) -> LearningPolicy:
    return LearningPolicy(fair=False, **kw)


def FairGreedy(**kw) -> LearningPolicy:
    return LearningPolicy(fair=True, **kw)


@dataclass
class _Constant:
    lengths: Sequence[int]
    initial: float
    window: str = "pooled"

    def decide(self, h, samples):  # pragma: no cover - single epoch
        return Decision(self.initial)


@dataclass
class FixedPolicy:
    n: float
    name: str = "fixed"

    def start(self, instance, m, t_horizon):
        return _Constant([t_horizon], self.n)


@dataclass
class NoLoyaltyPolicy:
    name: str = "none"

    def start(self, instance, m, t_horizon):
        return _Constant([t_horizon], math.inf)


@dataclass
class OraclePolicy:
    """Plays the true optimal non-personalized threshold (possibly +inf)."""

    name: str = "oracle"

    def start(self, instance, m, t_horizon):
        return _Constant([t_horizon], optimal_threshold(instance).n)


def baseline_policies(n: int = 1) -> dict:
    return {"oracle": OraclePolicy(), "fixed": FixedPolicy(n), "none": NoLoyaltyPolicy()}


# -- configuration ------------------------------------------------------------

_CONFIG_KEYS = {"policy", "schedule", "t1", "delta_c", "mle_window", "n1", "n"}


def policy_from_config(cfg: dict):
    unknown = set(cfg) - _CONFIG_KEYS
    if unknown:
        raise ValueError(f"unknown policy config keys: {sorted(unknown)}")
    kind = cfg.get("policy", "stable")
    if kind in ("stable", "fair"):
        return LearningPolicy(
            fair=kind == "fair",
            schedule=cfg.get("schedule", "practical"),
            delta_c=float(cfg.get("delta_c", 0.15)),
            t1=cfg.get("t1"),
            window=cfg.get("mle_window"),
            n1=cfg.get("n1"),
        )
    if kind == "oracle":
        return OraclePolicy()
    if kind == "fixed":
        return FixedPolicy(int(cfg["n"]) if "n" in cfg else int(cfg.get("n1", 1)))
    if kind == "none":
        return NoLoyaltyPolicy()
    raise ValueError(f"unknown policy {kind!r}")


def load_policy_config(path) -> dict:
    with open(Path(path)) as fh:
        return json.load(fh)
