"""Closed-form steady-state analytics of the points-to-redemption chain.

Under a fixed threshold N a customer's points-to-go tau moves on the cycle
{0, ..., N}: it stays put with probability 1 - phi(tau) and steps to
(tau - 1) mod (N + 1) otherwise. The stationary law is proportional to
1/phi(tau) and the long-run purchase rate is N / sum_tau 1/phi(tau).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateChain, IterationCap, PeriodicChain, ZeroRevenue
from .model import Instance, TypeSpec

INFINITY = math.inf
MIXING_CAP = 10**6


def is_infinite(n) -> bool:
    return n is None or (isinstance(n, float) and math.isinf(n))


def format_threshold(n):
    return "inf" if is_infinite(n) else int(n)


def _phi(spec_or_phi, n=None) -> np.ndarray:
    if isinstance(spec_or_phi, TypeSpec):
        return spec_or_phi.phi(n)
    phi = np.asarray(spec_or_phi, dtype=float)
    if n is not None and len(phi) != n + 1:
        phi = phi[: n + 1]
    return phi


def _require_positive(phi: np.ndarray) -> None:
    if np.any(phi <= 0.0):
        bad = int(np.flatnonzero(phi <= 0.0)[0])
        raise DegenerateChain(f"phi({bad}) = {phi[bad]!r}; state {bad} is absorbing")


def stationary_distribution(spec, n: int | None = None) -> np.ndarray:
    """Stationary law over tau = 0..n. ``spec`` is a TypeSpec or a phi vector."""
    phi = _phi(spec, n)
    if len(phi) < 2:
        raise ValueError("threshold must be at least 1")
    _require_positive(phi)
    w = 1.0 / phi
    return w / w.sum()


def long_run_revenue_type(spec, n, allow_degenerate: bool = False) -> float:
    """Long-run purchase rate of one type under threshold ``n`` (may be INFINITY).

    With ``allow_degenerate`` a zero purchase probability yields revenue 0,
    the limit of the closed form as that probability goes to zero.
    """
    if is_infinite(n):
        if not isinstance(spec, TypeSpec):
            raise TypeError("the no-loyalty revenue needs a TypeSpec (its baseline)")
        return float(spec.baseline)
    phi = _phi(spec, int(n))
    if np.any(phi <= 0.0):
        if allow_degenerate:
            return 0.0
        _require_positive(phi)
    return float((len(phi) - 1) / np.sum(1.0 / phi))


def revenue_curve_from_phi(phi: np.ndarray) -> np.ndarray:
    """R(N) for N = 1..n along the last axis of a phi array (tau = 0..n).

    Works on stacked arrays, so batches of types or instances evaluate at once.
    """
    phi = np.asarray(phi, dtype=float)
    with np.errstate(divide="ignore"):
        cum = np.cumsum(1.0 / phi, axis=-1)
    ns = np.arange(1, phi.shape[-1], dtype=float)
    return ns / cum[..., 1:]


def type_revenue_curves(instance: Instance) -> np.ndarray:
    """(K, n_max) array with R_k(N) for N = 1..n_max."""
    table = instance.phi_table()
    _require_positive(table)
    return revenue_curve_from_phi(table)


def mixture_revenue(instance: Instance, n) -> float:
    if is_infinite(n):
        return float(np.dot(instance.rho, instance.baselines))
    return float(sum(r * long_run_revenue_type(t, int(n)) for r, t in zip(instance.rho, instance.types)))


def mixture_revenue_curve(instance: Instance) -> np.ndarray:
    """R(N) = sum_k rho_k R_k(N) for N = 1..n_max."""
    return np.asarray(instance.rho) @ type_revenue_curves(instance)


@dataclass(frozen=True)
class ThresholdChoice:
    n: float  # int-valued, or INFINITY
    value: float

    @property
    def is_infinite(self) -> bool:
        return is_infinite(self.n)


def _choose(curve: np.ndarray, no_loyalty: float) -> ThresholdChoice:
    # First index wins exact ties; the no-loyalty option wins ties with it.
    i = int(np.argmax(curve))
    if curve[i] > no_loyalty:
        return ThresholdChoice(i + 1, float(curve[i]))
    return ThresholdChoice(INFINITY, float(no_loyalty))


def optimal_threshold(instance: Instance) -> ThresholdChoice:
    return _choose(mixture_revenue_curve(instance), mixture_revenue(instance, INFINITY))


def optimal_finite_threshold(instance: Instance) -> ThresholdChoice:
    curve = mixture_revenue_curve(instance)
    i = int(np.argmax(curve))
    return ThresholdChoice(i + 1, float(curve[i]))


def optimal_personalized(instance: Instance) -> tuple[list[ThresholdChoice], float]:
    curves = type_revenue_curves(instance)
    choices = [_choose(c, t.baseline) for c, t in zip(curves, instance.types)]
    total = float(sum(r * c.value for r, c in zip(instance.rho, choices)))
    return choices, total


def price_of_fairness(instance: Instance) -> float:
    r_nonpers = optimal_threshold(instance).value
    if r_nonpers <= 0.0:
        raise ZeroRevenue("optimal non-personalized revenue is zero")
    return optimal_personalized(instance)[1] / r_nonpers


def price_of_fairness_batch(phi: np.ndarray, baselines: np.ndarray, rho: np.ndarray) -> dict:
    """Vectorized optima for a batch of instances.

    phi: (R, K, n+1); baselines, rho: (R, K). Returns per-instance PoF,
    optimal thresholds (0 encodes no-loyalty) and both optimal revenues,
    with the same tie rules as the scalar functions.
    """
    curves = revenue_curve_from_phi(phi)  # (R, K, n)
    n_idx = np.argmax(curves, axis=-1)
    best = np.take_along_axis(curves, n_idx[..., None], axis=-1)[..., 0]
    pers_finite = best > baselines
    pers_value = np.where(pers_finite, best, baselines)
    pers_n = np.where(pers_finite, n_idx + 1, 0)
    r_pers = np.sum(rho * pers_value, axis=-1)

    mix = np.einsum("rk,rkn->rn", rho, curves)
    m_idx = np.argmax(mix, axis=-1)
    m_best = mix[np.arange(len(mix)), m_idx]
    none = np.sum(rho * baselines, axis=-1)
    finite = m_best > none
    r_nonpers = np.where(finite, m_best, none)
    return {
        "pof": r_pers / r_nonpers,
        "n_star": np.where(finite, m_idx + 1, 0),
        "n_star_personalized": pers_n,
        "r_pers": r_pers,
        "r_nonpers": r_nonpers,
    }


def pof_upper_bound(k: int) -> float:
    """Worst-case price of fairness with ``k`` types: K - (K-1) 2^(-1/(K-1))."""
    if k < 1:
        raise ValueError("k must be a positive integer")
    if k == 1:
        return 1.0
    return k - (k - 1) * 2.0 ** (-1.0 / (k - 1))


@dataclass(frozen=True)
class StationaryProfile:
    n: int
    p: np.ndarray
    revenue: float
    nu: float
    nu2: float
    variance: float
    phi_min: float
    phi_max: float

    @property
    def variance_lower_bound(self) -> float:
        return (self.phi_min**2 / (12.0 * self.phi_max**2)) * self.n * (self.n + 2)


def steady_state_profile(spec, n: int) -> StationaryProfile:
    phi = _phi(spec, n)
    p = stationary_distribution(phi)
    tau = np.arange(len(p), dtype=float)
    nu = float(tau @ p)
    nu2 = float((tau**2) @ p)
    return StationaryProfile(
        n=len(p) - 1,
        p=p,
        revenue=long_run_revenue_type(phi, len(p) - 1),
        nu=nu,
        nu2=nu2,
        variance=max(nu2 - nu * nu, 0.0),
        phi_min=float(phi.min()),
        phi_max=float(phi.max()),
    )


def transition_matrix(spec, n: int | None = None) -> np.ndarray:
    phi = _phi(spec, n)
    size = len(phi)
    if size < 2:
        raise ValueError("threshold must be at least 1")
    P = np.zeros((size, size))
    idx = np.arange(size)
    P[idx, idx] = 1.0 - phi
    P[idx, (idx - 1) % size] += phi
    return P


def empirical_mixing_time(spec, n: int | None = None, eps: float = 0.25, cap: int = MIXING_CAP) -> int:
    """Smallest t with max_start TV(P^t(start, .), p) <= eps."""
    phi = _phi(spec, n)
    if np.all(phi >= 1.0):
        raise PeriodicChain("phi == 1 everywhere: the chain is a deterministic cycle")
    p = stationary_distribution(phi)
    P = transition_matrix(phi)
    dist = np.eye(len(phi))
    for t in range(1, cap + 1):
        dist = dist @ P
        if 0.5 * np.abs(dist - p).sum(axis=1).max() <= eps:
            return t
    raise IterationCap(f"no mixing within {cap} steps")


def tmix_upper_bound(n_max: int, mu_min: float, mu_max: float) -> float:
    """(n_max + 1)^2 / (2 (1 - mu_max) mu_min); +inf when mu_max == 1."""
    if mu_max >= 1.0:
        return math.inf
    if mu_min <= 0.0:
        raise ValueError("mu_min must be positive")
    return (n_max + 1) ** 2 / (2.0 * (1.0 - mu_max) * mu_min)
