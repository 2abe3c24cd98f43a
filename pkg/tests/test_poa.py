import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from patient_queues import Instance, compute_rates, f_ratio
from patient_queues.equilibrium import find_nash, is_nash
from patient_queues.fixtures import example_two_servers, four_queue_levels, symmetric
from patient_queues.instances import E_FACTOR, random_feasible, random_profile, satisfies_margin
from patient_queues.poa import (
    SweepConfig,
    check_poa_bound,
    deform_to_saturation,
    kkt_residual,
    nash_lower_bound,
    scale_to_margin,
    verify_e_bound,
    waterfill_bound,
)


def objective(x, k, inst):
    return float(inst.mus @ (1 - (1 - np.asarray(x) / k) ** k)) / inst.lambdas[:k].sum()


def test_waterfill_single_queue_group():
    inst, _ = example_two_servers()
    sol = waterfill_bound(1, inst)
    assert sol.value == pytest.approx(1 / 0.51) and sol.x.tolist() == [1.0, 0.0]


def test_waterfill_symmetric_group():
    inst, _ = symmetric(5, 0.05)
    sol = waterfill_bound(5, inst)
    assert np.allclose(sol.x, 1.0, atol=1e-9)
    assert sol.value == pytest.approx(5 * (1 - 0.8**5) / inst.lambdas.sum(), abs=1e-12)


def test_waterfill_two_server_example_against_scan():
    inst, _ = example_two_servers()
    sol = waterfill_bound(2, inst)
    assert sol.x == pytest.approx([1.3423, 0.6577], abs=1e-4)
    # hand evaluation at the optimum: (1 - 0.32886^2 + 0.49 (1 - 0.67114^2)) / 1.02
    assert sol.value == pytest.approx(1.13837, abs=1e-5)
    grid = np.linspace(0, 2, 20001)
    scan = max(objective([a, 2 - a], 2, inst) for a in grid)
    assert scan - 1e-7 <= sol.value <= scan + 1e-7


def test_waterfill_rejects_bad_k():
    inst, _ = example_two_servers()
    for k in (0, 3):
        with pytest.raises(ValueError):
            waterfill_bound(k, inst)


@given(st.integers(1, 5), st.integers(1, 4), st.integers(0, 10**6), st.data())
def test_waterfill_kkt_and_feasibility(n, m, seed, data):
    inst = random_feasible(n, m, seed=seed)
    k = data.draw(st.integers(1, n))
    sol = waterfill_bound(k, inst)
    assert np.all(sol.x >= 0) and abs(sol.x.sum() - k) <= 1e-9
    assert kkt_residual(sol, inst) <= 1e-7
    assert sol.value == pytest.approx(objective(sol.x, k, inst), abs=1e-12)


@given(st.integers(2, 4), st.integers(1, 3), st.integers(0, 10**6), st.integers(0, 10**6))
def test_waterfill_beats_random_feasible_points(n, m, seed, seed2):
    inst = random_feasible(n, m, seed=seed)
    k = n
    sol = waterfill_bound(k, inst)
    rng = np.random.default_rng(seed2)
    xs = rng.dirichlet(np.ones(m), size=200) * k
    # points with x_j > k are outside the box where the objective is concave; clip them out
    xs = xs[np.all(xs <= k, axis=1)]
    for x in xs:
        assert objective(x, k, inst) <= sol.value + 1e-12


def test_nash_lower_bound_examples():
    inst, _ = example_two_servers()
    assert nash_lower_bound(inst) == 1.0
    for n in (2, 8, 32):
        inst, _ = symmetric(n, 0.05)
        closed = (1 - (1 - 1 / n) ** n) / (1 - 1 / math.e + 0.05)
        assert nash_lower_bound(inst) == pytest.approx(min(1.0, closed), abs=1e-12)
    assert nash_lower_bound(symmetric(32, 0.05)[0]) < 1
    assert nash_lower_bound(Instance([0.4], [0.9])) == 1.0


def test_check_poa_bound_symmetric_is_tight():
    inst, p = symmetric(8, 0.05)
    f1 = compute_rates(p, inst).top_ratio
    assert f1 == pytest.approx((1 - (7 / 8) ** 8) / (1 - 1 / math.e + 0.05), abs=1e-12)
    assert f1 == pytest.approx(nash_lower_bound(inst), abs=1e-12)
    assert check_poa_bound(p, inst)


def test_check_poa_bound_stable_nash():
    inst = random_feasible(3, 3, margin=2.0, seed=1)
    res = find_nash(inst, random_profile(3, 3, np.random.default_rng(1)))
    assert res.converged and np.all(compute_rates(res.profile, inst).per_queue == 0)
    assert check_poa_bound(res.profile, inst, certificate=res.certificate)


def test_two_server_fast_profile_is_not_nash_under_either_variant():
    # Both queues on the fast server age at 1 - 1/1.02 while the bound says every
    # Nash profile of this instance is stable.  The profile is not an equilibrium:
    # either queue can stabilize itself by spilling onto the slow server.
    inst, p = example_two_servers()
    assert compute_rates(p, inst).top_ratio == pytest.approx(1 / 1.02)
    assert nash_lower_bound(inst) == 1.0
    gains = {}
    for variant in ("rate", "descent"):
        cert = is_nash(p, inst, variant=variant)
        assert not cert.is_nash
        gains[variant] = max(v.improvement for v in cert.violations)
    assert gains["rate"] == pytest.approx(1 - 1 / 1.02, abs=1e-12)
    assert gains["descent"] > gains["rate"]
    with pytest.raises(ValueError, match="not a certified Nash"):
        check_poa_bound(p, inst)


@pytest.mark.parametrize("seed", range(10))
def test_bound_holds_at_random_nash(seed):
    inst = random_feasible(3, 3, seed=seed)
    res = find_nash(inst, random_profile(3, 3, np.random.default_rng(seed)))
    if res.converged:
        assert check_poa_bound(res.profile, inst, certificate=res.certificate)


def test_verify_e_bound_scaled_symmetric():
    inst, _ = symmetric(8, 0.05)
    margin = E_FACTOR + 0.01
    scaled = scale_to_margin(inst, margin)
    assert satisfies_margin(scaled, margin)
    report = verify_e_bound(scaled, SweepConfig(margin=margin))
    assert report["passed"] and report["status"] == "stable" and report["unstable"] == 0


def test_verify_e_bound_single_queue():
    report = verify_e_bound(Instance([0.5], [1.0]))
    assert report["passed"] and report["certified"] >= 1


def test_verify_e_bound_random_instance():
    report = verify_e_bound(random_feasible(4, 3, margin=1.60, seed=5))
    assert report["hypothesis_met"] and report["passed"]
    assert all(r["max_rate"] == 0.0 for r in report["runs"] if r["certified"])


def test_verify_e_bound_hypothesis_not_met():
    inst, _ = symmetric(4, 0.05)
    report = verify_e_bound(inst)
    assert report["status"] == "hypothesis not met" and not report["passed"] and report["slack"] < 0


def test_deformation_noop_when_saturated():
    inst, p = symmetric(8, 0.05)
    path = deform_to_saturation(p, inst, np.ones(8))
    profiles, f_values = path
    assert profiles == [] and len(f_values) == 1


def test_deformation_four_queue_fixture_is_monotone():
    inst, p = four_queue_levels()
    sol = waterfill_bound(4, inst)
    path = deform_to_saturation(p, inst, sol.x)
    assert len(path.profiles) > 0 and path.increases().size == 0
    final = path.profiles[-1][[0, 1, 2, 3]].sum(axis=0)
    assert np.allclose(final, sol.x, atol=1e-9)
    # the end point has f at least the water-filling value's lower estimate
    assert path.f_values[-1] == pytest.approx(f_ratio(0b1111, path.profiles[-1], inst.mus, inst.lambdas))
    assert path.f_values[-1] >= sol.value - 1e-9


def test_deformation_steps_are_small():
    inst, p = four_queue_levels()
    path = deform_to_saturation(p, inst, waterfill_bound(4, inst).x)
    prev = p
    for q in path.profiles:
        assert np.abs(q - prev).max() <= 1e-3 + 1e-12
        prev = q


def test_deformation_rejects_bad_inputs():
    inst, p = four_queue_levels()
    with pytest.raises(ValueError):
        deform_to_saturation(p, inst, np.ones(3))
    with pytest.raises(ValueError):
        deform_to_saturation(np.array([[1.0]]), Instance([0.3], [0.6]), np.ones(1))
