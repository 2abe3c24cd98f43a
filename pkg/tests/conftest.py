import numpy as np
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from patient_queues import Instance
from patient_queues.instances import random_feasible, random_profile

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@st.composite
def games(draw, n_max=5, m_max=4, margin=1.0):
    """A random feasible instance and a random profile, both from one drawn seed."""
    n = draw(st.integers(1, n_max))
    m = draw(st.integers(1, m_max))
    seed = draw(st.integers(0, 2**31 - 1))
    inst = random_feasible(n, m, margin, seed=seed)
    p = random_profile(n, m, np.random.default_rng(seed + 1))
    return inst, p


@st.composite
def raw_games(draw, n_max=5, m_max=4):
    """Unconstrained (possibly infeasible) instances with random profiles."""
    n = draw(st.integers(1, n_max))
    m = draw(st.integers(1, m_max))
    rng = np.random.default_rng(draw(st.integers(0, 2**31 - 1)))
    return raw_instance(n, m, rng), random_profile(n, m, rng)


def raw_instance(n, m, rng):
    lam = np.sort(rng.uniform(0.01, 0.99, n))[::-1]
    mu = np.sort(rng.uniform(0.0, 1.0, m))[::-1]
    return Instance(lam, mu)
