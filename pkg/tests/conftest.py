import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from loyalty_lab.model import Instance, LinkKind, TypeSpec

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

SMOOTH = [LinkKind.LINEAR, LinkKind.EXPONENTIAL, LinkKind.LOGIT]


@st.composite
def type_specs(draw, links=tuple(LinkKind), min_baseline=0.01):
    link = draw(st.sampled_from(list(links)))
    b1 = draw(st.floats(-3.0, 3.0))
    b2 = -draw(st.floats(0.0, 3.0))
    base = draw(st.floats(min_baseline, 0.95))
    return TypeSpec(link, b1, b2, base)


@st.composite
def instances(draw, k_max=4, n_max_max=20):
    k = draw(st.integers(1, k_max))
    types = tuple(draw(type_specs()) for _ in range(k))
    w = np.array([draw(st.floats(0.05, 1.0)) for _ in range(k)])
    rho = w / w.sum()
    rho[-1] = 1.0 - math.fsum(rho[:-1])
    return Instance(types, tuple(rho), draw(st.integers(1, n_max_max)))


def random_spec(rng, links=tuple(LinkKind), min_baseline=0.01):
    link = links[rng.integers(len(links))]
    return TypeSpec(link, float(rng.uniform(-3, 3)), float(-rng.uniform(0, 3)), float(rng.uniform(min_baseline, 0.95)))


@pytest.fixture
def tight_pof():
    from loyalty_lab.experiments import tight_pof_instance
    return tight_pof_instance()


@pytest.fixture
def two_customer():
    from loyalty_lab.experiments import regret_study_instance
    return regret_study_instance()


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
