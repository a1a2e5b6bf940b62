"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line PASS/FAIL verdict; the lines are printed in the
terminal summary (and directly when this file is run as a script).
"""

import math
import time

import numpy as np
import pytest

from loyalty_lab.estimation import TypeSamples, fit_mle, lambda_min
from loyalty_lab.experiments import (
    gen_lower_bound_pair,
    tight_pof_instance,
    misspec_gamma,
    rev_gap_closed_form,
    rev_gap_steady_state,
    run_study,
)
from loyalty_lab.model import Instance, LinkKind, TypeSpec, purchase_prob
from loyalty_lab.simulator import simulate_many, _Fixed
from loyalty_lab.steady_state import (
    empirical_mixing_time,
    long_run_revenue_type,
    pof_upper_bound,
    price_of_fairness,
    stationary_distribution,
    steady_state_profile,
    tmix_upper_bound,
    transition_matrix,
)

RESULTS: dict[int, str] = {}

REFERENCE_AVG = [1.0366, 1.0788, 1.1264, 1.1737, 1.1951, 1.1813, 1.1521, 1.1091, 1.0573]
REFERENCE_MAX = [1.0568, 1.1278, 1.2103, 1.3074, 1.4244, 1.4035, 1.3156, 1.2130, 1.1087]


def record(n, ok, detail):
    RESULTS[n] = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(RESULTS[n])
    assert ok, RESULTS[n]


def _random_spec(rng, min_baseline=0.02):
    link = [LinkKind.NONE, LinkKind.LINEAR, LinkKind.EXPONENTIAL, LinkKind.LOGIT][rng.integers(4)]
    return TypeSpec(link, float(rng.uniform(-3, 3)), float(-rng.uniform(0, 3)), float(rng.uniform(min_baseline, 0.95)))


# shared expensive runs ----------------------------------------------------------

@pytest.fixture(scope="module")
def learning():
    t0 = time.perf_counter()
    s = run_study("learning", reps=100, seed=0, horizons=(512, 5000), m=2)
    return s, time.perf_counter() - t0


@pytest.fixture(scope="module")
def misspec():
    return run_study("misspec", reps=500, seed=0)


# criteria -------------------------------------------------------------------------

def test_c01_stationarity_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst_p = worst_r = 0.0
    for _ in range(500):
        spec = _random_spec(rng)
        for n in range(1, 21):
            p = stationary_distribution(spec, n)
            worst_p = max(worst_p, float(np.max(np.abs(p @ transition_matrix(spec, n) - p))))
            phi = spec.phi(n)
            worst_r = max(worst_r, abs(float(p[1:] @ phi[1:]) - long_run_revenue_type(spec, n)))
    dt = time.perf_counter() - t0
    record(1, worst_p <= 1e-12 and worst_r <= 1e-12 and dt < 5,
           f"max|pP-p|={worst_p:.1e} max|rev diff|={worst_r:.1e} in {dt:.2f}s")


def test_c02_pof_bound():
    t0 = time.perf_counter()
    s = run_study("pof", reps=10_000, seed=42)
    dt = time.perf_counter() - t0
    ok = s["max"] <= 1.5 + 1e-9 and abs(s["mean"] - 1.1957) <= 0.015 and s["max"] <= 1.47 and dt < 60
    record(2, ok, f"mean={s['mean']:.4f} max={s['max']:.4f} in {dt:.1f}s")


def test_c03_tight_instance():
    pof = price_of_fairness(tight_pof_instance())
    record(3, abs(pof - 1.5) <= 1e-12, f"PoF={pof!r}")


def test_c04_rho_table():
    t0 = time.perf_counter()
    s = run_study("rho", reps=10_000, seed=42)
    dt = time.perf_counter() - t0
    d_avg = max(abs(a - b) for a, b in zip(s["mean"], REFERENCE_AVG))
    d_max = max(abs(a - b) for a, b in zip(s["max"], REFERENCE_MAX))
    record(4, d_avg <= 0.02 and d_max <= 0.05 and dt < 600,
           f"max|avg dev|={d_avg:.4f} max|max dev|={d_max:.4f} in {dt:.1f}s")


def test_c05_k_tiers():
    s = run_study("ktier", reps=10_000, seed=42)
    means = s["mean"]
    increasing = all(b > a for a, b in zip(means, means[1:]))
    plateau = [m for k, m in zip(s["k"], means) if k >= 6]
    in_band = all(1.20 <= m <= 1.27 for m in plateau)
    curve = all(b == k - (k - 1) * 2.0 ** (-1.0 / (k - 1)) for k, b in zip(s["k"], s["bound"]))
    record(5, increasing and in_band and curve,
           f"means={[round(m, 4) for m in means]} increasing={increasing} plateau_ok={in_band} bound_ok={curve}")


def test_c06_simulation_vs_closed_form():
    rng = np.random.default_rng(6)
    T = 200_000
    insts, ns = [], []
    for _ in range(50):
        spec = _random_spec(rng, min_baseline=0.05)
        n = int(rng.integers(1, 21))
        insts.append(Instance((spec,), (1.0,), 20))
        ns.append(n)
    runs = simulate_many(insts, [_Fixed([T], float(n)) for n in ns], 1, T, list(range(600, 650)))
    worst = 0.0
    for run, inst, n in zip(runs, insts, ns):
        r = (run.x[:, 0] * (run.tau[:, 0] > 0)).astype(float)
        # batch means: 400 batches of 500 periods absorb the chain's autocorrelation
        se = r.reshape(400, -1).mean(axis=1).std(ddof=1) / math.sqrt(400)
        z = abs(r.mean() - long_run_revenue_type(inst.types[0], n)) / max(se, 1e-300)
        worst = max(worst, z)
    record(6, worst <= 4.0, f"max |z| over 50 runs = {worst:.2f}")


def test_c07_mixing_bound():
    checked = 0
    ok = True
    for link in (LinkKind.LINEAR, LinkKind.EXPONENTIAL, LinkKind.LOGIT):
        for base in np.linspace(0.05, 0.65, 5):
            for slope in np.linspace(-0.1, -1.5, 5):
                spec = TypeSpec(link, -0.5, float(slope), float(base))
                for n in range(1, 6):
                    phi = spec.phi(n)
                    if phi.max() >= 1.0:
                        continue
                    checked += 1
                    ok &= empirical_mixing_time(phi) <= tmix_upper_bound(n, phi.min(), phi.max())
    record(7, ok and checked > 0, f"{checked} (spec, n) pairs checked")


def test_c08_variance_bound():
    rng = np.random.default_rng(8)
    worst = math.inf
    for _ in range(1000):
        spec = _random_spec(rng)
        prof = steady_state_profile(spec, int(rng.integers(1, 21)))
        worst = min(worst, prof.variance - prof.variance_lower_bound)
    eq = max(abs(steady_state_profile(np.full(n + 1, c), n).variance
                 - steady_state_profile(np.full(n + 1, c), n).variance_lower_bound)
             for n in range(1, 21) for c in (0.1, 0.5, 1.0))
    record(8, worst >= -1e-12 and eq <= 1e-12, f"min slack={worst:.2e} equality gap={eq:.1e}")


def test_c09_mle_consistency():
    truths = [
        TypeSpec(LinkKind.LINEAR, 0.5, -0.08, 0.2),
        TypeSpec(LinkKind.EXPONENTIAL, -0.5, -0.4, 0.2),
        TypeSpec(LinkKind.LOGIT, 1.0, -0.5, 0.1),
    ]
    rng = np.random.default_rng(9)
    ok, parts = True, []
    for spec in truths:
        n = 6
        p = stationary_distribution(spec, n)
        med = []
        for size in (10**3, 10**4, 10**5):
            errs = []
            for _ in range(25):
                tau = rng.choice(n + 1, size=size, p=p)
                x = rng.random(size) < purchase_prob(spec, tau)
                beta = fit_mle(TypeSamples.from_pairs(tau, x.astype(int), n), spec.link, spec.baseline).beta
                errs.append(float(np.linalg.norm(np.subtract(beta, spec.beta))))
            med.append(float(np.median(errs)))
        ok &= med[0] > med[1] > med[2] and med[2] < 0.05
        parts.append(f"{spec.link.value}:" + "/".join(f"{m:.4f}" for m in med))
    record(9, ok, " ".join(parts))


def test_c10_lambda_min():
    rng = np.random.default_rng(10)
    worst = 0.0
    for _ in range(1000):
        L = rng.normal(size=(2, 2)) * rng.uniform(0.01, 100)
        V = L @ L.T
        worst = max(worst, abs(lambda_min(V) - float(np.linalg.eigvalsh(V)[0])))
    record(10, worst <= 1e-9, f"max |diff| = {worst:.1e}")


def test_c11_lower_bound_gaps():
    ok, worst = True, 0.0
    for d in (0.1, 0.3, 0.5):
        a, b = gen_lower_bound_pair(d)
        ga, gb = rev_gap_closed_form(d, "first"), rev_gap_closed_form(d, "second")
        worst = max(worst, abs(rev_gap_steady_state(a) - ga), abs(rev_gap_steady_state(b) - gb))
        ok &= ga > 0 > gb
    record(11, ok and worst <= 1e-12, f"max |gap diff| = {worst:.1e}, signs ok={ok}")


def test_c12_devaluation_free(learning):
    s, _ = learning
    fair = s["policies"]["fair"]["adaptivity"]
    stable = s["policies"]["stable"]["adaptivity"]
    ok = fair["n_increases"] == 0 and 4 <= stable["n_changes"] <= 9 and 1 <= stable["n_increases"] <= 4
    record(12, ok, f"fair increases={fair['n_increases']} stable changes={stable['n_changes']:.2f} "
                   f"increases={stable['n_increases']:.2f}")


def test_c13_regret_trends(learning):
    s, dt = learning
    st_, fa = s["policies"]["stable"]["regret"], s["policies"]["fair"]["regret"]
    ratio = {name: (r[1] / 5000) / (r[0] / 512) for name, r in (("stable", st_), ("fair", fa))}
    ok = fa[1] >= st_[1] and all(v < 0.5 for v in ratio.values()) and dt < 300
    record(13, ok, f"regret@5000 stable={st_[1]:.2f} fair={fa[1]:.2f}; per-period ratio "
                   f"stable={ratio['stable']:.3f} fair={ratio['fair']:.3f}; {dt:.0f}s")


def test_c14_identity(learning, misspec):
    err = max(learning[0]["identity_max_abs_error"], misspec["identity_max_abs_error"])
    record(14, err <= 1e-9, f"max |obs - (regret + mixing)| = {err:.1e}")


def test_c15_misspecification(misspec):
    a = misspec_gamma(misspec, "stable", "linear", 0.25, 5000)
    b = misspec_gamma(misspec, "stable", "exp", 0.05, 1000)
    worst = max(c["gamma"] - misspec_gamma(misspec, "stable", c["truth"], c["phi_bar"], c["T"])
                for c in misspec["cells"] if c["policy"] == "fair")
    ok = a >= 0.97 and 0.40 <= b <= 0.65 and worst <= 0.02
    record(15, ok, f"stable linear/.25/5000={a:.3f} exp/.05/1000={b:.3f} max(fair-stable)={worst:.3f}")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q"]))
