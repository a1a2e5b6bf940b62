"""Purchase-probability models, problem instances and regularity checks."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import MalformedInstance

Box = tuple[tuple[float, float], tuple[float, float]]

DEFAULT_BOX: Box = ((-10.0, 10.0), (-10.0, 0.0))
RHO_TOL = 1e-12


class LinkKind(str, enum.Enum):
    NONE = "none"
    LINEAR = "linear"
    EXPONENTIAL = "exp"
    LOGIT = "logit"

    def pressure(self, z):
        """Points-pressure term added on top of the baseline (before clamping)."""
        z = np.asarray(z, dtype=float)
        if self is LinkKind.NONE:
            return np.zeros_like(z)
        if self is LinkKind.LINEAR:
            return np.maximum(z, 0.0)
        if self is LinkKind.EXPONENTIAL:
            return np.exp(z)
        return _sigmoid(z)


def _sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass(frozen=True)
class TypeSpec:
    """One customer type: phi(tau) = min(baseline + pressure(b1 + b2*tau), 1).

    ``b1``/``b2`` are the GLM intercept and (non-positive) slope. An
    (alpha, beta > 0) parameterization maps to ``b1 = alpha, b2 = -beta``.
    """

    link: LinkKind
    b1: float = 0.0
    b2: float = 0.0
    baseline: float = 0.5
    box: Box = DEFAULT_BOX

    def __post_init__(self):
        object.__setattr__(self, "link", LinkKind(self.link))
        if not self.b2 <= 0.0:
            raise MalformedInstance(f"slope b2 must be <= 0, got {self.b2}")
        if not 0.0 <= self.baseline <= 1.0:
            raise MalformedInstance(f"baseline must lie in [0, 1], got {self.baseline}")
        (lo1, hi1), (lo2, hi2) = self.box
        if hi2 > 0.0 or lo1 > hi1 or lo2 > hi2:
            raise MalformedInstance(f"bad parameter box {self.box}")
        if not (lo1 <= self.b1 <= hi1 and lo2 <= self.b2 <= hi2):
            raise MalformedInstance(f"({self.b1}, {self.b2}) outside box {self.box}")

    @property
    def beta(self) -> tuple[float, float]:
        return (self.b1, self.b2)

    def with_beta(self, beta) -> "TypeSpec":
        return TypeSpec(self.link, float(beta[0]), float(beta[1]), self.baseline, self.box)

    def phi(self, n: int) -> np.ndarray:
        """Purchase probabilities for tau = 0..n."""
        tau = np.arange(n + 1, dtype=float)
        return purchase_prob(self, tau)


def purchase_prob(spec: TypeSpec, tau):
    """Probability of buying (tau > 0) or redeeming (tau == 0) at ``tau`` points to go."""
    z = spec.b1 + spec.b2 * np.asarray(tau, dtype=float)
    p = np.minimum(spec.baseline + spec.link.pressure(z), 1.0)
    if p.ndim == 0:
        return float(p)
    return p


@dataclass(frozen=True)
class Instance:
    types: tuple[TypeSpec, ...]
    rho: tuple[float, ...]
    n_max: int

    def __post_init__(self):
        object.__setattr__(self, "types", tuple(self.types))
        object.__setattr__(self, "rho", tuple(float(r) for r in self.rho))
        _check_instance(self)

    @property
    def k(self) -> int:
        return len(self.types)

    @property
    def rho_min(self) -> float:
        return min(self.rho)

    def phi_table(self, n: int | None = None) -> np.ndarray:
        """(K, n+1) array of purchase probabilities; ``n`` defaults to n_max."""
        n = self.n_max if n is None else n
        return np.vstack([t.phi(n) for t in self.types])

    @property
    def baselines(self) -> np.ndarray:
        return np.array([t.baseline for t in self.types])

    def with_betas(self, betas: Sequence) -> "Instance":
        return Instance(tuple(t.with_beta(b) for t, b in zip(self.types, betas)), self.rho, self.n_max)


def _check_instance(inst: Instance) -> None:
    if len(inst.types) < 1:
        raise MalformedInstance("an instance needs at least one type")
    if len(inst.rho) != len(inst.types):
        raise MalformedInstance("rho and types differ in length")
    if int(inst.n_max) != inst.n_max or inst.n_max < 1:
        raise MalformedInstance(f"n_max must be a positive integer, got {inst.n_max}")
    if any(not r > 0 for r in inst.rho):
        raise MalformedInstance(f"every mixture weight must be positive, got {inst.rho}")
    if abs(math.fsum(inst.rho) - 1.0) > RHO_TOL:
        raise MalformedInstance(f"rho must sum to 1, got {math.fsum(inst.rho)!r}")
    for t in inst.types:
        if t.b2 > 0:
            raise MalformedInstance("slope b2 must be <= 0")


@dataclass(frozen=True)
class RegularityReport:
    mu_min: float
    mu_max: float
    l_mu: float
    kappa: float
    g_mu: float
    valid: bool
    flags: tuple[str, ...] = field(default=())


def _clamp_point(link: LinkKind, baseline: float) -> float:
    """Largest z for which baseline + pressure(z) stays <= 1."""
    room = 1.0 - baseline
    if link is LinkKind.NONE:
        return math.inf
    if room <= 0:
        return -math.inf
    if link is LinkKind.LINEAR:
        return room
    if link is LinkKind.EXPONENTIAL:
        return math.log(room)
    if room >= 1.0:
        return math.inf
    return math.log(room / (1.0 - room))


def _d1(link: LinkKind, z):
    z = np.asarray(z, dtype=float)
    if link is LinkKind.NONE:
        return np.zeros_like(z)
    if link is LinkKind.LINEAR:
        return np.ones_like(z)
    if link is LinkKind.EXPONENTIAL:
        return np.exp(z)
    s = _sigmoid(z)
    return s * (1 - s)


def _d2(link: LinkKind, z):
    z = np.asarray(z, dtype=float)
    if link in (LinkKind.NONE, LinkKind.LINEAR):
        return np.zeros_like(z)
    if link is LinkKind.EXPONENTIAL:
        return np.exp(z)
    s = _sigmoid(z)
    return s * (1 - s) * (1 - 2 * s)


def validate_instance(instance: Instance) -> RegularityReport:
    """Bounds and smoothness constants of the instance's purchase models.

    ``mu_min``/``mu_max`` come from the true phi over tau in 0..n_max.
    ``l_mu`` and ``g_mu`` bound |mu'| and |mu''| over every index
    b1 + b2*tau reachable inside the parameter box, restricted to the part of
    the link below the clamp at 1. ``kappa`` is the smallest slope of the link
    over the ball of radius 1/sqrt(1 + n_max^2) around the true parameters;
    the three links have monotone or unimodal derivatives, so the extreme is
    attained at the interval ends of the index range and is computed exactly.
    """
    _check_instance(instance)
    n = instance.n_max
    taus = np.arange(n + 1, dtype=float)
    table = instance.phi_table()
    flags: list[str] = []
    mu_min = float(table.min())
    mu_max = float(table.max())
    if mu_min <= 0.0:
        flags.append("zero_probability")

    radius = 1.0 / math.sqrt(1.0 + n * n)
    l_mu = 0.0
    g_mu = 0.0
    kappa = math.inf
    for i, t in enumerate(instance.types):
        z_true = t.b1 + t.b2 * taus
        raw = t.baseline + t.link.pressure(z_true)
        if np.any(raw > 1.0):
            flags.append(f"clamped:type{i}")
        if t.link is LinkKind.LINEAR:
            if t.b2 == 0.0:
                flags.append(f"zero_slope:type{i}")
            if z_true.min() < 0.0 < z_true.max():
                flags.append(f"kink:type{i}")
        if t.link is LinkKind.NONE:
            continue
        (lo1, hi1), (lo2, _) = t.box
        z_lo = lo1 + lo2 * n
        z_hi = min(hi1, _clamp_point(t.link, t.baseline))
        if z_hi < z_lo:
            z_hi = z_lo
        grid = np.linspace(z_lo, z_hi, 2001)
        crit = np.array([0.0, math.log(2 + math.sqrt(3)), -math.log(2 + math.sqrt(3))])
        crit = crit[(crit >= z_lo) & (crit <= z_hi)]
        grid = np.concatenate([grid, crit])
        l_mu = max(l_mu, float(np.abs(_d1(t.link, grid)).max()))
        g_mu = max(g_mu, float(np.abs(_d2(t.link, grid)).max()))
        spread = radius * np.sqrt(1.0 + taus**2)
        ends = np.concatenate([z_true - spread, z_true + spread])
        kappa = min(kappa, float(_d1(t.link, ends).min()))

    valid = not flags and kappa > 0
    return RegularityReport(mu_min, mu_max, l_mu, kappa, g_mu, valid, tuple(flags))


# -- JSON ---------------------------------------------------------------------

def instance_to_dict(instance: Instance) -> dict:
    types = []
    for t in instance.types:
        d = {"link": t.link.value, "b1": t.b1, "b2": t.b2, "baseline": t.baseline}
        if t.box != DEFAULT_BOX:
            d["box"] = [list(t.box[0]), list(t.box[1])]
        types.append(d)
    return {"n_max": instance.n_max, "types": types, "rho": list(instance.rho)}


def instance_from_dict(data: dict) -> Instance:
    try:
        types = []
        for d in data["types"]:
            box = d.get("box")
            box = DEFAULT_BOX if box is None else (tuple(box[0]), tuple(box[1]))
            types.append(TypeSpec(LinkKind(d["link"]), float(d["b1"]), float(d["b2"]), float(d["baseline"]), box))
        return Instance(tuple(types), tuple(float(r) for r in data["rho"]), int(data["n_max"]))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, MalformedInstance):
            raise
        raise MalformedInstance(f"cannot parse instance: {exc}") from exc


def load_instance(path) -> Instance:
    with open(Path(path)) as fh:
        return instance_from_dict(json.load(fh))


def save_instance(instance: Instance, path) -> None:
    with open(Path(path), "w") as fh:
        json.dump(instance_to_dict(instance), fh, indent=2)
