"""Per-type maximum-likelihood fits of the purchase GLM and design diagnostics.

Samples are kept as count tables over tau = 0..n_max (trials and purchases
per tau), which are sufficient statistics for the Bernoulli likelihood.

Two likelihoods are available:

* ``clamped=False`` -- the smooth GLM q(z) = baseline + mu(z), with the
  linear link taken as the plain identity (no positive part). Parameters are
  restricted to the box and to q in (1e-9, 1 - 1e-9) at every observed tau.
* ``clamped=True`` -- the exact map the simulator uses,
  q(z) = min(baseline + pressure(z), 1), positive part included. This is the
  default for the learning policies because the experiment instances are
  clamped at 1 over part of their tau range.

Both are maximised with the same active-set damped Newton method over the
linear constraints (box plus feasibility), with an Armijo backtracking line
search and a gradient-ascent fallback when the reduced Hessian is not
negative definite or is badly conditioned.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import Degenerate, InvalidDelta, ProbabilityAtBoundary
from .model import DEFAULT_BOX, Box, LinkKind, RegularityReport, _clamp_point, _sigmoid

EPS_PROB = 1e-9
RIDGE = 1e-8
MAX_ITER = 200
GRAD_TOL = 1e-10
COND_LIMIT = 1e12
SIGMA = 0.5


@dataclass
class TypeSamples:
    """Trials and purchases per tau for one customer type."""

    trials: np.ndarray
    buys: np.ndarray

    @classmethod
    def empty(cls, n_max: int) -> "TypeSamples":
        return cls(np.zeros(n_max + 1, dtype=np.int64), np.zeros(n_max + 1, dtype=np.int64))

    @classmethod
    def from_pairs(cls, taus, xs, n_max: int | None = None) -> "TypeSamples":
        taus = np.asarray(taus, dtype=np.int64)
        xs = np.asarray(xs, dtype=np.int64)
        if taus.shape != xs.shape:
            raise ValueError("taus and xs differ in shape")
        if taus.size and taus.min() < 0:
            raise ValueError("tau must be non-negative")
        size = (int(taus.max()) + 1 if taus.size else 1) if n_max is None else n_max + 1
        if taus.size and taus.max() >= size:
            raise ValueError("tau exceeds n_max")
        trials = np.bincount(taus, minlength=size).astype(np.int64)
        buys = np.bincount(taus, weights=xs, minlength=size).astype(np.int64)
        return cls(trials, buys)

    def __add__(self, other: "TypeSamples") -> "TypeSamples":
        return TypeSamples(self.trials + other.trials, self.buys + other.buys)

    @property
    def count(self) -> int:
        return int(self.trials.sum())

    @property
    def distinct_taus(self) -> int:
        return int(np.count_nonzero(self.trials))

    def pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """Expand back into (tau, x) arrays (purchases first within each tau)."""
        taus, xs = [], []
        for tau, (n, s) in enumerate(zip(self.trials, self.buys)):
            taus += [tau] * int(n)
            xs += [1] * int(s) + [0] * int(n - s)
        return np.array(taus, dtype=np.int64), np.array(xs, dtype=np.int64)


@dataclass
class SampleSet:
    per_type: list[TypeSamples]

    @classmethod
    def empty(cls, k: int, n_max: int) -> "SampleSet":
        return cls([TypeSamples.empty(n_max) for _ in range(k)])

    @classmethod
    def from_observations(cls, type_ids, taus, xs, k: int, n_max: int) -> "SampleSet":
        """Build from parallel arrays; entries with tau < 0 (paused periods) are dropped."""
        type_ids = np.asarray(type_ids).ravel()
        taus = np.asarray(taus).ravel()
        xs = np.asarray(xs).ravel()
        keep = taus >= 0
        out = []
        for i in range(k):
            sel = keep & (type_ids == i)
            out.append(TypeSamples.from_pairs(taus[sel], xs[sel], n_max))
        return cls(out)

    def __add__(self, other: "SampleSet") -> "SampleSet":
        return SampleSet([a + b for a, b in zip(self.per_type, other.per_type)])

    def __getitem__(self, i) -> TypeSamples:
        return self.per_type[i]

    def __len__(self):
        return len(self.per_type)


# -- likelihood ---------------------------------------------------------------

def _model_terms(link: LinkKind, baseline: float, z: np.ndarray, clamped: bool):
    """q, dq/dz, d2q/dz2 of the purchase model at index z."""
    if link is LinkKind.NONE:
        zero = np.zeros_like(z)
        return np.full_like(z, baseline), zero, zero
    if link is LinkKind.LINEAR:
        if clamped:
            on = z > 0
            q = baseline + np.where(on, z, 0.0)
            d1 = on.astype(float)
        else:
            q = baseline + z
            d1 = np.ones_like(z)
        d2 = np.zeros_like(z)
    elif link is LinkKind.EXPONENTIAL:
        e = np.exp(z)
        q, d1, d2 = baseline + e, e, e
    else:
        s = _sigmoid(z)
        d1 = s * (1 - s)
        q, d2 = baseline + s, d1 * (1 - 2 * s)
    if clamped:
        top = q >= 1.0
        if np.any(top):
            q = np.where(top, 1.0, q)
            d1 = np.where(top, 0.0, d1)
            d2 = np.where(top, 0.0, d2)
    return q, d1, d2


def _loglik_terms(q, s, f):
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(s > 0, s * np.log(q), 0.0)
        b = np.where(f > 0, f * np.log1p(-q), 0.0)
    return a + b


def log_likelihood(samples: TypeSamples, link: LinkKind, baseline: float, beta, clamped: bool = False) -> float:
    """Bernoulli log-likelihood of the samples under parameters ``beta``.

    Raises ProbabilityAtBoundary when a sample sits at a tau whose model
    probability is 0 or 1 (and the outcome there makes that impossible, in
    the clamped model; always, in the smooth one).
    """
    link = LinkKind(link)
    tau = np.flatnonzero(samples.trials)
    if tau.size == 0:
        return 0.0
    n = samples.trials[tau].astype(float)
    s = samples.buys[tau].astype(float)
    f = n - s
    q, _, _ = _model_terms(link, baseline, beta[0] + beta[1] * tau, clamped)
    if clamped:
        bad = ((q >= 1.0) & (f > 0)) | ((q <= 0.0) & (s > 0))
    else:
        bad = (q <= 0.0) | (q >= 1.0)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise ProbabilityAtBoundary(int(tau[i]), float(q[i]))
    return float(_loglik_terms(q, s, f).sum())


def log_likelihood_grad(samples: TypeSamples, link: LinkKind, baseline: float, beta, clamped: bool = False) -> np.ndarray:
    obj = _Objective(samples, LinkKind(link), baseline, clamped)
    return obj(np.asarray(beta, dtype=float))[1]


class _Objective:
    def __init__(self, samples: TypeSamples, link: LinkKind, baseline: float, clamped: bool,
                 ridge: float = 0.0, center=(0.0, 0.0)):
        tau = np.flatnonzero(samples.trials)
        self.tau = tau.astype(float)
        self.s = samples.buys[tau].astype(float)
        self.f = samples.trials[tau].astype(float) - self.s
        self.has_s = self.s > 0
        self.has_f = self.f > 0
        self.link = link
        self.baseline = baseline
        self.clamped = clamped
        self.ridge = ridge
        self.center = np.asarray(center, dtype=float)

    def value(self, beta) -> float:
        q, _, _ = _model_terms(self.link, self.baseline, beta[0] + beta[1] * self.tau, self.clamped)
        if self.clamped:
            if ((q >= 1.0) & self.has_f).any() or ((q <= 0.0) & self.has_s).any():
                return -math.inf
        elif (q >= 1.0).any() or (q <= 0.0).any():
            return -math.inf
        with np.errstate(divide="ignore", invalid="ignore"):
            val = float(self.s @ np.log(np.where(self.has_s, q, 1.0)) + self.f @ np.log1p(-np.where(self.has_f, q, 0.0)))
        if self.ridge:
            val -= self.ridge * float(np.sum((beta - self.center) ** 2))
        return val

    def __call__(self, beta):
        val = self.value(beta)
        q, d1, d2 = _model_terms(self.link, self.baseline, beta[0] + beta[1] * self.tau, self.clamped)
        with np.errstate(divide="ignore", invalid="ignore"):
            a = np.where(self.s > 0, self.s / q, 0.0)
            b = np.where(self.f > 0, self.f / (1 - q), 0.0)
            a2 = np.where(self.s > 0, self.s / q**2, 0.0)
            b2 = np.where(self.f > 0, self.f / (1 - q) ** 2, 0.0)
        dz = d1 * (a - b)
        dzz = d2 * (a - b) - d1**2 * (a2 + b2)
        x = np.vstack([np.ones_like(self.tau), self.tau])
        grad = x @ dz
        hess = (x * dzz) @ x.T
        if self.ridge:
            grad = grad - 2 * self.ridge * (beta - self.center)
            hess = hess - 2 * self.ridge * np.eye(2)
        return val, grad, hess


# -- constrained maximiser ----------------------------------------------------

def _null_basis(rows: np.ndarray) -> np.ndarray:
    if rows.shape[0] == 0:
        return np.eye(2)
    if rows.shape[0] == 1:
        a = rows[0] / np.linalg.norm(rows[0])
        return np.array([[-a[1]], [a[0]]])
    if abs(np.linalg.det(rows[:2])) < 1e-14:
        return _null_basis(rows[:1])
    return np.zeros((2, 0))


def _release(obj: _Objective, x, G, n_hard, active, tol):
    """Best way off the active rows: (row, unit direction, slope) or None.

    Hard rows may only be left towards the feasible side; kink rows towards
    either side. Slopes are one-sided, taken from the gradient just off x.
    """
    best = None
    h = 1e-7 * (1.0 + float(np.linalg.norm(x)))
    for i in active:
        others = [j for j in active if j != i]
        Z = _null_basis(G[others])
        if Z.shape[1] == 2:
            base = G[i] / np.linalg.norm(G[i])
        elif Z.shape[1] == 1:
            base = Z[:, 0]
        else:
            continue
        for d in (base, -base):
            gi = float(G[i] @ d)
            if abs(gi) < 1e-12 or (i < n_hard and gi > 0):
                continue
            xh = x + h * d
            if not math.isfinite(obj.value(xh)):
                continue
            slope = float(obj(xh)[1] @ d)
            if slope > tol and (best is None or slope > best[2]):
                best = (i, d, slope)
    return best


def _active_set_maximize(obj: _Objective, x0, A, c, tol, max_iter=MAX_ITER, cond_limit=COND_LIMIT, kinks=None):
    """Maximise over {A x <= c}.

    ``kinks`` = (K, k) lists lines K x = k where the objective is continuous
    but not differentiable (a probability reaching the clamp at 1, or the
    positive part of the linear link switching on). Steps stop on the first
    kink they meet; the method then slides along it until a one-sided
    derivative says leaving it pays.
    """
    n_hard = len(c)
    G, rhs = (A, c) if kinks is None else (np.vstack([A, kinks[0]]), np.concatenate([c, kinks[1]]))
    scale = 1.0 + np.abs(rhs)
    x = np.asarray(x0, dtype=float)
    val, g, H = obj(x)
    active = [i for i in range(n_hard) if abs(A[i] @ x - c[i]) <= 1e-12 * scale[i]][:2]
    it = 0
    converged = False
    last_step = 1.0
    while it < max_iter:
        it += 1
        Z = _null_basis(G[active])
        gz = Z.T @ g
        pg = float(np.linalg.norm(gz)) if gz.size else 0.0
        if pg <= tol:
            rel = _release(obj, x, G, n_hard, active, tol) if active else None
            if rel is None:
                converged = True
                break
            i, d, slope = rel
            active.remove(i)
            d = d * 2.0 * last_step
            gd = slope * float(np.linalg.norm(d))
        else:
            Hz = Z.T @ H @ Z
            d = None
            eig, vec = np.linalg.eigh(Hz)
            mag = np.abs(eig)
            if mag.min() > 0 and mag.max() / mag.min() <= cond_limit:
                # Newton when concave here; otherwise the saddle-free variant
                # (curvature magnitudes), which still ascends.
                d = Z @ (vec @ ((vec.T @ gz) / mag))
            if d is None:
                # Gradient ascent; Cauchy step length when the curvature along
                # the gradient is negative, else grow the last accepted length.
                d = Z @ (gz / pg)
                curv = float(d @ H @ d)
                d = d * (pg / -curv if curv < 0 else 2.0 * last_step)
            gd = float(g @ d)
        alpha_max, blocking = math.inf, None
        gx = G @ x
        gdir = G @ d
        for i in range(len(rhs)):
            if i in active:
                continue
            room = rhs[i] - gx[i]
            if i < n_hard:
                if gdir[i] > 1e-15:
                    a = max(room, 0.0) / gdir[i]
                else:
                    continue
            else:
                if abs(room) <= 1e-12 * scale[i] or gdir[i] == 0.0:
                    continue  # sitting on this kink and leaving it
                a = room / gdir[i]
                if a <= 0.0:
                    continue
            if a < alpha_max:
                alpha_max, blocking = a, i
        alpha = min(1.0, alpha_max)
        accepted = False
        for _ in range(80):
            xn = x + alpha * d
            vn = obj.value(xn)
            if math.isfinite(vn) and vn >= val + 1e-4 * alpha * gd:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            converged = pg <= 1e-6 * max(1.0, abs(val))
            break
        hit = blocking is not None and alpha == alpha_max
        if hit:
            row = G[blocking]
            xn = xn + (rhs[blocking] - row @ xn) * row / (row @ row)
            active.append(blocking)
            active = active[-2:]
        step = xn - x
        last_step = max(float(np.linalg.norm(step)), 1e-8)
        x = xn
        val, g, H = obj(x)
        if not hit and float(np.linalg.norm(step)) <= 1e-14 * (1.0 + float(np.linalg.norm(x))):
            converged = True
            break
    return x, val, it, converged


def _kink_lines(obj: _Objective):
    """Lines b1 + b2 tau = z where the clamped likelihood has a kink (not a barrier)."""
    rows, rhs = [], []
    zc = _clamp_point(obj.link, obj.baseline)
    if math.isfinite(zc):
        for t in obj.tau[~obj.has_f]:
            rows.append([1.0, t])
            rhs.append(zc)
    if obj.link is LinkKind.LINEAR:
        for t, s in zip(obj.tau, obj.has_s):
            if obj.baseline > 0.0 or not s:
                rows.append([1.0, t])
                rhs.append(0.0)
    if not rows:
        return None
    return np.array(rows), np.array(rhs)


def _smooth_index_bounds(link: LinkKind, baseline: float) -> tuple[float, float]:
    """Index range keeping the smooth model inside (EPS_PROB, 1 - EPS_PROB)."""
    def inverse(y):
        if link is LinkKind.LINEAR:
            return y - baseline
        r = y - baseline
        if link is LinkKind.EXPONENTIAL:
            return math.log(r) if r > 0 else -math.inf
        if r <= 0:
            return -math.inf
        if r >= 1:
            return math.inf
        return math.log(r / (1 - r))

    hi = inverse(1.0 - EPS_PROB)
    lo = inverse(EPS_PROB)
    return lo, hi


def _polygon_interior(A, c) -> np.ndarray | None:
    pts = []
    for i in range(len(c)):
        for j in range(i + 1, len(c)):
            M = np.vstack([A[i], A[j]])
            if abs(np.linalg.det(M)) < 1e-14:
                continue
            p = np.linalg.solve(M, [c[i], c[j]])
            if np.all(A @ p <= c + 1e-9 * (1 + np.abs(c))):
                pts.append(p)
    if not pts:
        return None
    return np.mean(pts, axis=0)


@dataclass(frozen=True)
class FitResult:
    beta: tuple[float, float]
    loglik: float
    iterations: int
    converged: bool
    ridge: bool = False
    flags: tuple[str, ...] = field(default=())


def _box_constraints(box: Box):
    (lo1, hi1), (lo2, hi2) = box
    A = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    c = np.array([hi1, -lo1, hi2, -lo2])
    return A, c


def _grid_start(obj: _Objective, box: Box, size: int = 41) -> np.ndarray:
    (lo1, hi1), (lo2, hi2) = box
    b1 = np.linspace(lo1, hi1, size)
    b2 = np.linspace(lo2, hi2, size)
    z = b1[:, None, None] + b2[None, :, None] * obj.tau[None, None, :]
    q, _, _ = _model_terms(obj.link, obj.baseline, z, True)
    bad = np.any(((q >= 1.0) & (obj.f > 0)) | ((q <= 0.0) & (obj.s > 0)), axis=-1)
    ll = _loglik_terms(q, obj.s, obj.f).sum(axis=-1)
    ll = np.where(bad, -np.inf, ll)
    # Flat stretches (pressure clipped to 0, or probability clamped at 1) give
    # exact ties; take the tied point nearest the box centre.
    tied = ll == ll.max()
    d2 = (b1[:, None] - (lo1 + hi1) / 2) ** 2 + (b2[None, :] - (lo2 + hi2) / 2) ** 2
    i, j = np.unravel_index(int(np.argmin(np.where(tied, d2, np.inf))), ll.shape)
    return np.array([b1[i], b2[j]])


def fit_mle(samples: TypeSamples, link: LinkKind, baseline: float, box: Box = DEFAULT_BOX, *,
            clamped: bool = False, ridge: bool = False) -> FitResult:
    """Maximum-likelihood (b1, b2) over the box.

    A single distinct tau leaves the slope unidentified: Degenerate is raised
    unless ``ridge`` asks for a 1e-8 * |beta - box_center|^2 penalty, which
    picks the maximiser closest to the box centre.
    """
    link = LinkKind(link)
    if link is LinkKind.NONE:
        raise ValueError("nothing to estimate for a type without points pressure")
    if samples.count == 0:
        raise Degenerate("no samples")
    flags = []
    (lo1, hi1), (lo2, hi2) = box
    center = np.array([(lo1 + hi1) / 2, (lo2 + hi2) / 2])
    lam = 0.0
    if samples.distinct_taus < 2:
        if not ridge:
            raise Degenerate("all samples share one tau; the slope is not identified")
        lam = RIDGE
        flags.append("ridge")
    obj = _Objective(samples, link, baseline, clamped, lam, center)
    A, c = _box_constraints(box)
    if clamped:
        x0 = _grid_start(obj, box)
    else:
        z_lo, z_hi = _smooth_index_bounds(link, baseline)
        t_min, t_max = float(obj.tau.min()), float(obj.tau.max())
        extra_A, extra_c = [], []
        if z_hi < math.inf:
            extra_A.append([1.0, t_min])
            extra_c.append(z_hi)
        if z_lo > -math.inf:
            extra_A.append([-1.0, -t_max])
            extra_c.append(-z_lo)
        if extra_A:
            A = np.vstack([A, extra_A])
            c = np.concatenate([c, extra_c])
        x0 = center
        if np.any(A @ x0 >= c):
            x0 = _polygon_interior(A, c)
            if x0 is None or not math.isfinite(obj.value(x0)):
                raise ProbabilityAtBoundary(int(t_min), float("nan"))
    tol = GRAD_TOL * max(1.0, float(samples.count))
    cond = math.inf if lam else COND_LIMIT
    kinks = _kink_lines(obj) if clamped else None
    x, val, it, ok = _active_set_maximize(obj, x0, A, c, tol, cond_limit=cond, kinks=kinks)
    if not ok:
        flags.append("nonconvergence")
    return FitResult((float(x[0]), float(x[1])), float(val), it, ok, bool(lam), tuple(flags))


# -- design matrix ------------------------------------------------------------

def design_matrix(samples: TypeSamples) -> np.ndarray:
    """[[count, sum tau], [sum tau, sum tau^2]] with exact integer sums."""
    tau = np.arange(len(samples.trials), dtype=np.int64)
    n = samples.trials.astype(np.int64)
    s1 = int(n @ tau)
    s2 = int(n @ (tau * tau))
    return np.array([[int(n.sum()), s1], [s1, s2]], dtype=np.int64)


def lambda_min(v) -> float:
    """Smaller eigenvalue of a symmetric PSD 2x2 matrix, in closed form."""
    v = np.asarray(v, dtype=float)
    a, b, d = v[0, 0], v[0, 1], v[1, 1]
    lmax = (a + d) / 2 + math.sqrt((a - d) ** 2 / 4 + b * b)
    if lmax <= 0:
        return 0.0
    # det / lmax is the same root, free of the cancellation in (a+d)/2 - sqrt(...).
    lmin = (a * d - b * b) / lmax
    if -1e-12 < lmin < 0:
        lmin = 0.0
    return lmin


def gate_constant(report: RegularityReport, n_max: int) -> float:
    """512 G^2 sigma^2 (1 + n_max^2) / kappa^4."""
    return 512.0 * report.g_mu**2 * SIGMA**2 * (1 + n_max**2) / report.kappa**4


def info_gate(v, delta: float, report: RegularityReport, n_max: int) -> bool:
    """True when lambda_min(v) clears the MLE accuracy gate C0 (4 + log(1/delta))."""
    if not 0.0 < delta < 1.0:
        raise InvalidDelta(f"delta must lie in (0, 1), got {delta}")
    return lambda_min(v) >= gate_constant(report, n_max) * (4.0 - math.log(delta))


# -- CSV ----------------------------------------------------------------------

def read_samples_csv(path, k: int | None = None, n_max: int | None = None) -> SampleSet:
    """Read (type, tau, x) rows; '#' lines and rows with tau < 0 are skipped."""
    type_ids, taus, xs = [], [], []
    with open(Path(path), newline="") as fh:
        rows = csv.DictReader(line for line in fh if not line.startswith("#"))
        for row in rows:
            tau = int(row["tau"])
            if tau < 0:
                continue
            type_ids.append(int(row["type"]))
            taus.append(tau)
            xs.append(int(row["x"]))
    k = (max(type_ids) + 1 if type_ids else 1) if k is None else k
    n_max = (max(taus) if taus else 0) if n_max is None else n_max
    return SampleSet.from_observations(type_ids, taus, xs, k, n_max)
