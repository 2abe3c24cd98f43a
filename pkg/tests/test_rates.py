import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from patient_queues import Instance, compute_rates, f_ratio
from patient_queues.fixtures import example_two_servers, example_two_servers_deviation, two_group
from patient_queues.instances import random_profile
from patient_queues.rates import (
    EnumerationCapError,
    alpha,
    mask_of,
    members,
    min_ratio_set,
    rate_of_queue,
)

from conftest import games, raw_games, raw_instance

MU = np.array([1.0, 0.49])


def naive_alpha(S, p, mus, T=()):
    """Direct product formula over explicit index lists."""
    total = 0.0
    for j, mu in enumerate(mus):
        blocked = np.prod([1 - p[i][j] for i in T]) if T else 1.0
        missed = np.prod([1 - p[i][j] for i in S])
        total += mu * blocked * (1 - missed)
    return total


def naive_rates(p, lam, mus):
    """Peeling with explicit subset lists, no bitmasks."""
    remaining = list(range(len(lam)))
    mus = np.array(mus, dtype=float)
    out = np.zeros(len(lam))
    while remaining:
        subsets = [c for r in range(1, len(remaining) + 1) for c in itertools.combinations(remaining, r)]
        f = {c: naive_alpha(c, p, mus) / sum(lam[i] for i in c) for c in subsets}
        v = min(f.values())
        if v >= 1:
            break
        top = sorted(set().union(*[c for c in subsets if f[c] <= v + max(1e-9 * v, 1e-12)]))
        out[top] = 1 - naive_alpha(top, p, mus) / sum(lam[i] for i in top)
        for i in top:
            mus = mus * (1 - np.asarray(p[i]))
        remaining = [i for i in remaining if i not in top]
    return out


def test_alpha_examples():
    both_fast = np.array([[1.0, 0.0], [1.0, 0.0]])
    assert alpha(0b11, both_fast, MU) == pytest.approx(1.0, abs=1e-15)
    assert alpha(0b01, both_fast, MU, priority=0b10) == 0.0
    assert alpha(0b1, np.array([[0.5, 0.5]]), MU) == pytest.approx(0.745, abs=1e-15)
    with pytest.raises(ValueError):
        alpha(0b11, both_fast, MU, priority=0b01)


def test_f_ratio_examples():
    inst, p = example_two_servers()
    assert f_ratio(0b11, p, inst.mus, inst.lambdas) == pytest.approx(1 / 1.02, abs=1e-15)
    assert f_ratio(1, [[1.0]], [0.3], [0.6]) == pytest.approx(0.5, abs=1e-15)
    assert f_ratio(0b11, np.zeros((2, 2)), MU, [0.5, 0.5]) == 0.0
    with pytest.raises(ValueError):
        f_ratio(0, p, inst.mus, inst.lambdas)


def test_min_ratio_set_examples():
    inst, p = example_two_servers()
    fam = min_ratio_set(0b11, p, inst.mus, inst.lambdas)
    assert fam.value == pytest.approx(1 / 1.02) and fam.maximal == 0b11
    # two queues on their own servers tie with their union
    fam = min_ratio_set(0b11, np.eye(2), [0.5, 0.5], [0.5, 0.5])
    assert fam.value == pytest.approx(1.0)
    assert sorted(fam.minimizers) == [0b01, 0b10, 0b11] and fam.maximal == 0b11
    assert min_ratio_set(0b1, [[1.0]], [0.3], [0.6]).maximal == 0b1


def test_min_ratio_set_rejects_bad_ground_sets():
    p = np.full((25, 1), 1.0)
    with pytest.raises(EnumerationCapError):
        min_ratio_set((1 << 25) - 1, p, [1.0], np.full(25, 0.01))
    with pytest.raises(ValueError):
        min_ratio_set(0, p, [1.0], np.full(25, 0.01))
    with pytest.raises(ValueError):
        min_ratio_set(0b11, p, [1.0], np.full(25, 0.01), priority=0b10)


def test_compute_rates_examples():
    part = compute_rates([[1.0]], Instance([0.6], [0.3]))
    assert part.groups == (1,) and part.ratios[0] == pytest.approx(0.5) and part.per_queue[0] == pytest.approx(0.5)
    assert compute_rates([[1.0]], Instance([0.3], [0.6])).per_queue[0] == 0.0

    inst, p = example_two_servers()
    part = compute_rates(p, inst)
    assert part.groups == (0b11,)
    assert np.allclose(part.per_queue, 1 - 1 / 1.02, atol=1e-12, rtol=0)

    inst, p = two_group()
    part = compute_rates(p, inst)
    assert part.groups == (0b10, 0b01)
    assert part.rates == pytest.approx((0.6, 1 / 3), abs=1e-12)

    inst, p = example_two_servers_deviation(0.05)
    assert np.all(compute_rates(p, inst).per_queue == 0.0)


def test_compute_rates_rejects_dimension_mismatch():
    with pytest.raises(ValueError):
        compute_rates(np.ones((1, 2)) / 2, Instance([0.3, 0.2], [0.6, 0.4]))


def test_rate_of_queue_examples():
    assert rate_of_queue([[1.0]], Instance([0.3], [0.6]), 0) == 0.0
    inst, p = example_two_servers()
    assert rate_of_queue(p, inst, 0) == pytest.approx(1 - 1 / 1.02, abs=1e-12)
    inst, p = two_group()
    assert rate_of_queue(p, inst, 1) == pytest.approx(0.6, abs=1e-12)
    with pytest.raises(IndexError):
        rate_of_queue(p, inst, 2)


def test_to_dict_uses_input_order():
    inst = Instance.from_rates([0.5, 0.9], [0.2, 0.6])
    p = inst.sort_profile([[1.0, 0.0], [0.0, 1.0]])
    d = compute_rates(p, inst).to_dict(inst)
    # queue 0 (input order) sends to the slow server and is peeled first
    assert d["groups"] == [[0], [1]]
    assert d["rates"] == pytest.approx([0.6, 1 / 3])


@given(raw_games(n_max=4, m_max=3))
def test_rates_match_naive_peeling(game):
    inst, p = game
    assert np.allclose(compute_rates(p, inst).per_queue, naive_rates(p, inst.lambdas, inst.mus), atol=1e-9)


@given(raw_games(n_max=5), st.data())
def test_alpha_matches_product_formula(game, data):
    inst, p = game
    n = inst.n
    flags = data.draw(st.lists(st.sampled_from([0, 1, 2]), min_size=n, max_size=n))
    S = [i for i in range(n) if flags[i] == 1]
    T = [i for i in range(n) if flags[i] == 2]
    if S:
        assert alpha(mask_of(S), p, inst.mus, mask_of(T)) == pytest.approx(
            naive_alpha(S, p, inst.mus, T), abs=1e-12)


@given(games(), st.data())
def test_fractional_sum_sandwich(game, data):
    inst, p = game
    n = inst.n
    labels = data.draw(st.lists(st.sampled_from([0, 1, 2, 3]), min_size=n, max_size=n))
    S, S2, T = (mask_of([i for i in range(n) if labels[i] == k]) for k in (1, 2, 3))
    if not S or not S2:
        return
    mus, lam = inst.mus, inst.lambdas
    a = f_ratio(S, p, mus, lam, T)
    b = f_ratio(S2, p, mus, lam, S | T)
    both = f_ratio(S | S2, p, mus, lam, T)
    lS, lS2 = lam[members(S)].sum(), lam[members(S2)].sum()
    exact = (alpha(S, p, mus, T) + alpha(S2, p, mus, S | T)) / (lS + lS2)
    assert both == pytest.approx(exact, abs=1e-12)
    assert min(a, b) - 1e-12 <= both <= max(a, b) + 1e-12


@given(games(), st.data())
def test_submodularity(game, data):
    inst, p = game
    n = inst.n
    A = data.draw(st.integers(0, (1 << n) - 1))
    B = data.draw(st.integers(0, (1 << n) - 1))
    rest = ((1 << n) - 1) & ~(A | B)
    T = data.draw(st.integers(0, (1 << n) - 1)) & rest

    def a(S):
        return alpha(S, p, inst.mus, T) if S else 0.0

    assert a(A & B) + a(A | B) <= a(A) + a(B) + 1e-12


@given(games())
def test_closure_of_minimizers(game):
    inst, p = game
    fam = min_ratio_set((1 << inst.n) - 1, p, inst.mus, inst.lambdas)
    mins = set(fam.minimizers)
    v = fam.value
    slack = 10 * max(1e-9 * v, 1e-12)
    for A, B in itertools.combinations(mins, 2):
        assert f_ratio(A | B, p, inst.mus, inst.lambdas) <= v + slack
        if A & B:
            assert f_ratio(A & B, p, inst.mus, inst.lambdas) <= v + slack
        else:
            shared = np.any(p[members(A)] > 0, axis=0) & np.any(p[members(B)] > 0, axis=0)
            # disjoint minimizers may only share servers that are worthless to them
            assert np.all(inst.mus[shared] == 0)


@given(raw_games())
def test_positive_rates_strictly_decrease(game):
    inst, p = game
    part = compute_rates(p, inst)
    pos = [g for g in part.rates if g > 0]
    assert all(a > b for a, b in zip(pos, pos[1:]))
    assert all(g == 0 for g in part.rates[len(pos):])
    assert sum(part.groups) == (1 << inst.n) - 1


@given(raw_games(), st.integers(0, 2**31 - 1))
def test_rates_are_continuous(game, seed):
    inst, p = game
    rng = np.random.default_rng(seed)
    q = random_profile(inst.n, inst.m, rng)
    base = compute_rates(p, inst).per_queue
    errs = [np.abs(compute_rates((1 - d) * p + d * q, inst).per_queue - base).max()
            for d in (1e-3, 1e-5, 1e-7)]
    assert errs[-1] <= 1e-5
    assert errs[-1] <= errs[0] + 1e-12


@pytest.mark.parametrize("seed", range(20))
def test_own_rate_has_no_interior_maximum_along_lines(seed):
    rng = np.random.default_rng(seed)
    n, m = int(rng.integers(2, 5)), int(rng.integers(2, 4))
    inst = raw_instance(n, m, rng)
    p = random_profile(n, m, rng)
    i = int(rng.integers(n))
    a, b = random_profile(2, m, rng)
    ts = np.linspace(0, 1, 401)
    r = []
    for t in ts:
        q = p.copy()
        q[i] = t * a + (1 - t) * b
        r.append(compute_rates(q, inst).per_queue[i])
    r = np.asarray(r)
    for k in range(1, len(r) - 1):
        assert not (r[k] > r[k - 1] + 1e-9 and r[k] > r[k + 1] + 1e-9)
