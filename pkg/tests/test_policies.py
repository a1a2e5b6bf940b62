import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from loyalty_lab.errors import HorizonTooShort, InvalidDelta
from loyalty_lab.estimation import SampleSet, TypeSamples
from loyalty_lab.model import Instance, LinkKind, RegularityReport, TypeSpec
from loyalty_lab.policies import (
    ConsiderationSet,
    FairGreedy,
    FixedPolicy,
    InstanceShape,
    NoLoyaltyPolicy,
    OraclePolicy,
    StableGreedy,
    constants_bundle,
    doubling_lengths,
    fair_greedy_decide,
    policy_from_config,
    practical_epoch_plan,
    stable_greedy_decide,
    theoretical_epoch_plan,
)
from loyalty_lab.simulator import simulate_policy
from loyalty_lab.steady_state import optimal_finite_threshold, optimal_threshold

from conftest import type_specs

REPORT = RegularityReport(mu_min=0.2, mu_max=0.8, l_mu=1.0, kappa=0.1, g_mu=1.0, valid=True)


class _Shape:
    rho = (1.0,)
    n_max = 2


def test_theoretical_plan_by_hand():
    log_d = math.log(10.0)
    c_lam = 0.2**2 / (12 * 0.8**2)
    c0 = 512 * 1.0 * 0.25 * (1 + 4) / 0.1**4
    c1, c2, c3 = 48 / c_lam, 8 * c0 / c_lam, 2 * c0 / c_lam
    c4 = 810 * 2**4 / c_lam**2
    c5 = 3 * 0.8**2 * 1.0 * 0.5 / (0.2**2 * 0.1) * math.sqrt(2 * 1.0 * 5 / c_lam)
    t1 = math.ceil(max(c1 / (1 - 2 ** (-1 / 36)), c2 + c3 * log_d, c4 * 36 * log_d))
    plan = theoretical_epoch_plan(REPORT, _Shape, 10 * t1, 1, 0.1, t_hat_mix=36)
    assert plan.t1 == t1
    assert plan.delta(2) == pytest.approx(c5 * math.sqrt(log_d / t1), rel=1e-12)
    k = constants_bundle(REPORT, (1.0,), 2, 36)
    assert k.c0 == pytest.approx(c0) and k.c4 == pytest.approx(c4)


def test_theoretical_plan_shape():
    plan = theoretical_epoch_plan(REPORT, _Shape, 10**12, 1, 0.1, t_hat_mix=36)
    assert all(b == 2 * a for a, b in zip(plan.lengths, plan.lengths[1:]))
    for h in range(2, plan.n_epochs):
        assert plan.delta(h) / plan.delta(h + 1) == pytest.approx(math.sqrt(2), rel=1e-12)
    assert plan.window == "epoch"


def test_theoretical_plan_errors():
    with pytest.raises(InvalidDelta):
        theoretical_epoch_plan(REPORT, _Shape, 10**12, 1, 1.5, t_hat_mix=36)
    with pytest.raises(HorizonTooShort):
        theoretical_epoch_plan(REPORT, _Shape, 100, 1, 0.1, t_hat_mix=36)


def test_practical_plan():
    plan = practical_epoch_plan(5000, 2)
    assert plan.n_epochs == 13 and sum(plan.lengths[:12]) == 4095
    assert plan.delta(2) == pytest.approx(0.15 / math.sqrt(2), abs=1e-12)
    assert plan.window == "pooled"
    assert practical_epoch_plan(1, 1).lengths == (1,)
    assert all(a >= b for a, b in zip(plan.deltas[1:], plan.deltas[2:]))


def test_doubling_truncation():
    assert doubling_lengths(1, 7) == (1, 2, 4)
    assert doubling_lengths(1, 8) == (1, 2, 4, 8)


def _stationary(instance, size, seed):
    from loyalty_lab.steady_state import stationary_distribution
    rng = np.random.default_rng(seed)
    per = []
    for spec in instance.types:
        n = instance.n_max
        tau = rng.choice(n + 1, size=size, p=stationary_distribution(spec, n))
        x = rng.random(size) < spec.phi(n)[tau]
        per.append(TypeSamples.from_pairs(tau, x.astype(int), n))
    return SampleSet(tuple(per))


def test_greedy_at_truth_picks_optimum(two_customer):
    shape = InstanceShape.of(two_customer)
    truth = [t.beta for t in two_customer.types]
    curve = shape.revenue_curve(truth)
    assert int(np.argmax(curve)) + 1 == optimal_finite_threshold(two_customer).n


def test_stable_greedy_terminates_when_no_program_pays():
    inst = Instance((TypeSpec(LinkKind.LINEAR, 0.0, 0.0, 0.4),), (1.0,), 10)
    samples = _stationary(inst, 20_000, 0)
    plan = practical_epoch_plan(5000, 1)
    dec = stable_greedy_decide(samples, plan, 10, InstanceShape.of(inst), r_inf=0.5)
    assert dec.terminated and math.isinf(dec.threshold)


def test_stable_greedy_keeps_previous_on_degenerate_fit(two_customer):
    samples = SampleSet.from_observations([0, 1], [20, 20], [1, 0], 2, 20)
    dec = stable_greedy_decide(samples, practical_epoch_plan(100, 2), 2, InstanceShape.of(two_customer), previous=17)
    assert dec.threshold == 17 and "degenerate_fit" in dec.flags


def test_fair_with_huge_slack_keeps_everything(two_customer):
    samples = _stationary(two_customer, 5000, 1)
    plan = practical_epoch_plan(100, 2, c=1e6)
    cset = ConsiderationSet.full(20)
    dec, new = fair_greedy_decide(samples, plan, 3, cset, InstanceShape.of(two_customer))
    assert new == cset and dec.threshold == 20


def test_fair_collapses_at_truth(two_customer):
    shape = InstanceShape.of(two_customer)
    curve = shape.revenue_curve([t.beta for t in two_customer.types])
    cset = ConsiderationSet.full(20)
    prev = cset.largest
    for slack in (0.1, 0.01, 1e-3, 1e-5, 0.0):
        cset = cset.filtered(curve, slack)
        assert cset.largest <= prev
        prev = cset.largest
    assert cset.thresholds == (optimal_finite_threshold(two_customer).n,)


def test_baseline_policies(two_customer):
    run = simulate_policy(two_customer, OraclePolicy(), 2, 200, 0)
    assert np.all(run.thresholds == optimal_threshold(two_customer).n)
    assert np.all(simulate_policy(two_customer, FixedPolicy(3), 2, 50, 0).thresholds == 3)
    assert np.all(np.isinf(simulate_policy(two_customer, NoLoyaltyPolicy(), 2, 50, 0).thresholds))


def test_policy_config():
    p = policy_from_config({"policy": "fair", "schedule": "practical", "t1": 2, "delta_c": 0.3, "mle_window": "epoch"})
    assert p.fair and p.t1 == 2 and p.delta_c == 0.3 and p.window == "epoch"
    assert isinstance(policy_from_config({"policy": "fixed", "n": 4}), FixedPolicy)
    with pytest.raises(ValueError):
        policy_from_config({"policy": "stable", "bogus": 1})


def test_termination_is_final():
    inst = Instance((TypeSpec(LinkKind.LINEAR, 0.0, 0.0, 0.4),), (1.0,), 10)
    run = simulate_policy(inst, StableGreedy(), 4, 3000, 0)
    paused = np.isinf(run.thresholds)
    assert paused.any()
    first = int(np.argmax(paused))
    assert paused[first:].all()


def test_epoch_window_decisions_are_reproducible(two_customer):
    a = simulate_policy(two_customer, StableGreedy(window="epoch"), 2, 1000, 3)
    b = simulate_policy(two_customer, StableGreedy(window="epoch"), 2, 1000, 3)
    assert [e.threshold for e in a.epoch_log] == [e.threshold for e in b.epoch_log]


# -- properties ---------------------------------------------------------------

@given(type_specs(links=(LinkKind.LINEAR, LinkKind.EXPONENTIAL, LinkKind.LOGIT), min_baseline=0.05),
       type_specs(links=(LinkKind.LINEAR, LinkKind.EXPONENTIAL, LinkKind.LOGIT), min_baseline=0.05),
       st.integers(0, 2**32))
def test_fair_greedy_never_devalues(s1, s2, seed):
    inst = Instance((s1, s2), (0.5, 0.5), 10)
    policy = FairGreedy()
    ctl = policy.start(inst, 2, 600)
    from loyalty_lab.simulator import simulate_many
    run = simulate_many([inst], [ctl], 2, 600, [seed], policy_name="fair")[0]
    thr = run.thresholds
    assert np.all(np.diff(thr[np.isfinite(thr)]) <= 0)
    if np.isinf(thr).any():
        assert np.isinf(thr[int(np.argmax(np.isinf(thr))):]).all()
    for a, b in zip(ctl.history, ctl.history[1:]):
        assert set(b.thresholds) <= set(a.thresholds) and b.thresholds
