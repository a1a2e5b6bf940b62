import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from loyalty_lab.errors import MalformedInstance
from loyalty_lab.model import (
    Instance,
    LinkKind,
    TypeSpec,
    instance_from_dict,
    instance_to_dict,
    purchase_prob,
    validate_instance,
)

from conftest import instances, type_specs


def test_no_pressure_is_constant():
    spec = TypeSpec(LinkKind.NONE, 0.0, 0.0, 0.3)
    assert np.all(spec.phi(10) == 0.3)


def test_exp_clamps_at_one():
    spec = TypeSpec(LinkKind.EXPONENTIAL, 1.5, -1.5, 0.25)
    assert purchase_prob(spec, 0) == 1.0


def test_linear_positive_part():
    spec = TypeSpec(LinkKind.LINEAR, 0.0, -0.25, 0.5)
    assert purchase_prob(spec, 1) == 0.5


def test_logit_values():
    spec = TypeSpec(LinkKind.LOGIT, 0.0, -1.0, 0.1)
    assert purchase_prob(spec, 0) == pytest.approx(0.6)
    assert purchase_prob(spec, 2) == pytest.approx(0.1 + 1 / (1 + math.e**2))


def test_report_constants_for_flat_types():
    inst = Instance((TypeSpec(LinkKind.NONE, 0, 0, 0.2), TypeSpec(LinkKind.NONE, 0, 0, 0.6)), (0.5, 0.5), 5)
    rep = validate_instance(inst)
    assert (rep.mu_min, rep.mu_max, rep.l_mu) == (0.2, 0.6, 0.0)
    assert rep.valid and rep.flags == ()


def test_report_flags_clamp():
    inst = Instance((TypeSpec(LinkKind.EXPONENTIAL, 1.0, -1.0, 0.05),), (1.0,), 20)
    rep = validate_instance(inst)
    assert rep.mu_min == pytest.approx(0.05 + math.exp(-19))
    assert rep.mu_max == 1.0
    assert "clamped:type0" in rep.flags
    assert not rep.valid


def test_rho_must_sum_to_one():
    spec = TypeSpec(LinkKind.NONE, 0, 0, 0.5)
    with pytest.raises(MalformedInstance):
        Instance((spec, spec), (0.5, 0.6), 3)


@pytest.mark.parametrize("kw", [dict(b2=0.1), dict(baseline=1.2), dict(b1=11.0)])
def test_bad_type_spec(kw):
    args = dict(link=LinkKind.LINEAR, b1=0.0, b2=0.0, baseline=0.5)
    args.update(kw)
    with pytest.raises(MalformedInstance):
        TypeSpec(**args)


def test_json_round_trip():
    inst = Instance((TypeSpec(LinkKind.LOGIT, 0.3, -0.7, 0.2),
                     TypeSpec(LinkKind.LINEAR, 0.5, -0.1, 0.1, ((-1.0, 1.0), (-1.0, 0.0)))), (0.25, 0.75), 7)
    assert instance_from_dict(instance_to_dict(inst)) == inst


def test_malformed_json():
    with pytest.raises(MalformedInstance):
        instance_from_dict({"n_max": 3})


@given(type_specs(), st.integers(1, 30))
def test_phi_non_increasing_in_tau(spec, n):
    phi = spec.phi(n)
    assert np.all(np.diff(phi) <= 1e-15)
    assert np.all((phi >= 0) & (phi <= 1))


@given(type_specs(links=(LinkKind.EXPONENTIAL, LinkKind.LOGIT)), st.integers(1, 20))
def test_pressure_fades_with_distance(spec, n):
    near = purchase_prob(spec, n) - spec.baseline
    far = purchase_prob(spec, 10 * n) - spec.baseline
    assert far <= near
    if spec.b2 < -1e-3 and near > 1e-300 and purchase_prob(spec, n) < 1.0:
        assert far / near < 1.0


@given(instances())
def test_validate_is_pure(inst):
    assert validate_instance(inst) == validate_instance(inst)
