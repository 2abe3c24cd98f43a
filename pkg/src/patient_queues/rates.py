"""Long-run aging rates of fixed randomized strategies.

Subsets of queues are plain ``int`` bitmasks (bit ``i`` set means queue ``i``
is in the set).  For a set ``S`` and a disjoint ``priority`` set ``T``::

    alpha(S | T) = sum_j mu_j * prod_{i in T} (1 - p_ij) * (1 - prod_{i in S} (1 - p_ij))
    f(S | T)     = alpha(S | T) / lambda(S)

``compute_rates`` repeatedly peels off the largest set minimizing ``f``
given the previously peeled queues have priority.  A group with ratio
``f_k`` ages at rate ``max(0, 1 - f_k)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .instances import Instance, validate_profile

ENUMERATION_CAP = 24
TIGHT_REL_TOL = 1e-9
TIGHT_ABS_TOL = 1e-12


class EnumerationCapError(ValueError):
    """Raised when brute-force enumeration is asked for more than ``ENUMERATION_CAP`` queues."""


def tight_tolerance(value: float) -> float:
    """Slack within which a subset counts as a co-minimizer of ``value``."""
    return max(TIGHT_REL_TOL * abs(value), TIGHT_ABS_TOL)


# -- bitmask helpers ---------------------------------------------------------

def mask_of(indices) -> int:
    mask = 0
    for i in indices:
        mask |= 1 << int(i)
    return mask


def members(mask: int) -> list[int]:
    out = []
    i = 0
    while mask:
        if mask & 1:
            out.append(i)
        mask >>= 1
        i += 1
    return out


def full_mask(n: int) -> int:
    return (1 << n) - 1


def _local_to_global(local_masks: np.ndarray, idx: list[int]) -> list[int]:
    out = []
    for lm in np.asarray(local_masks, dtype=np.int64).tolist():
        g = 0
        b = 0
        while lm:
            if lm & 1:
                g |= 1 << idx[b]
            lm >>= 1
            b += 1
        out.append(g)
    return out


# -- set functions -----------------------------------------------------------

def effective_mus(p, mus, priority: int = 0) -> np.ndarray:
    """Server rates left over once the queues in ``priority`` have all sent."""
    mu = np.array(mus, dtype=float)
    for i in members(priority):
        mu = mu * (1.0 - p[i])
    return mu


def alpha(S: int, p, mus, priority: int = 0) -> float:
    """Expected clears of ``S`` when ``priority`` outranks it and it outranks everyone else."""
    if S & priority:
        raise ValueError("S and priority must be disjoint")
    p = np.asarray(p, dtype=float)
    mu = effective_mus(p, mus, priority)
    miss = np.ones(p.shape[1])
    for i in members(S):
        miss = miss * (1.0 - p[i])
    return float(mu @ (1.0 - miss))


def arrival_mass(S: int, lambdas) -> float:
    return float(sum(lambdas[i] for i in members(S)))


def f_ratio(S: int, p, mus, lambdas, priority: int = 0) -> float:
    """Clears-per-arrival ratio ``alpha(S | priority) / lambda(S)``."""
    if S == 0:
        raise ValueError("f_ratio of the empty set is undefined")
    return alpha(S, p, mus, priority) / arrival_mass(S, lambdas)


def subset_tables(p_loc: np.ndarray, mu_eff: np.ndarray, lam_loc: np.ndarray):
    """``alpha`` and ``lambda`` for every subset of the rows of ``p_loc`` (indexed by local mask)."""
    k, m = p_loc.shape
    miss = np.ones((1 << k, m))
    lam = np.zeros(1 << k)
    size = 1
    for i in range(k):
        np.multiply(miss[:size], 1.0 - p_loc[i], out=miss[size:2 * size])
        np.add(lam[:size], lam_loc[i], out=lam[size:2 * size])
        size *= 2
    alph = mu_eff.sum() - miss @ mu_eff
    alph[0] = 0.0
    return alph, lam


@dataclass(frozen=True)
class TightFamily:
    """Minimal ratio over a ground set, every subset attaining it, and their union."""

    value: float
    minimizers: tuple[int, ...]
    maximal: int


def _check_ground(I: int, priority: int, p) -> list[int]:
    if I == 0:
        raise ValueError("ground set must be nonempty")
    if I & priority:
        raise ValueError("ground set and priority must be disjoint")
    idx = members(I)
    if idx[-1] >= len(p):
        raise ValueError("ground set refers to a queue outside the profile")
    return idx


def _family_from_table(alph, lam, idx) -> TightFamily:
    f = alph[1:] / lam[1:]
    v = float(f.min())
    hits = np.flatnonzero(f <= v + tight_tolerance(v)) + 1
    mins = _local_to_global(hits, idx)
    maximal = 0
    for s in mins:
        maximal |= s
    return TightFamily(v, tuple(mins), maximal)


def min_ratio_set(I: int, p, mus, lambdas, priority: int = 0) -> TightFamily:
    """Exhaustive search for the minimizers of ``f(. | priority)`` over nonempty subsets of ``I``."""
    p = np.asarray(p, dtype=float)
    idx = _check_ground(I, priority, p)
    if len(idx) > ENUMERATION_CAP:
        raise EnumerationCapError(
            f"{len(idx)} queues exceed the enumeration cap of {ENUMERATION_CAP}; use method='dinkelbach'")
    mu = effective_mus(p, mus, priority)
    alph, lam = subset_tables(p[idx], mu, np.asarray(lambdas, dtype=float)[idx])
    return _family_from_table(alph, lam, idx)


# -- the rate algorithm ------------------------------------------------------

@dataclass(frozen=True)
class RatePartition:
    """Ordered groups, their ratios ``f`` and rates ``g``, and the per-queue rate vector."""

    groups: tuple[int, ...]
    ratios: tuple[float, ...]
    rates: tuple[float, ...]
    per_queue: np.ndarray
    group_of: np.ndarray

    @property
    def top_ratio(self) -> float:
        return self.ratios[0]

    @property
    def top_group(self) -> int:
        return self.groups[0]

    def descent(self) -> np.ndarray:
        """Unclamped per-queue ``1 - f_k`` (negative for groups that drain)."""
        return 1.0 - np.asarray(self.ratios)[self.group_of]

    def to_dict(self, inst: Instance | None = None) -> dict:
        """JSON-ready form; with ``inst`` the queue labels are mapped back to input order."""
        label = (lambda i: inst.queue_order[i]) if inst is not None else (lambda i: i)
        per_queue = self.per_queue if inst is None else inst.unsort_queues(self.per_queue)
        return {
            "groups": [sorted(label(i) for i in members(g)) for g in self.groups],
            "f": [float(x) for x in self.ratios],
            "g": [float(x) for x in self.rates],
            "rates": [float(x) for x in per_queue],
        }


def _stage(idx: list[int], p, mu, lam, method: str) -> TightFamily:
    I = mask_of(idx)
    if method == "brute" or (method == "auto" and len(idx) <= ENUMERATION_CAP):
        alph, lt = subset_tables(p[idx], mu, lam[idx])
        return _family_from_table(alph, lt, idx)
    from .dinkelbach import min_ratio_dinkelbach

    inner = "enumerate" if len(idx) <= ENUMERATION_CAP else "wolfe"
    return min_ratio_dinkelbach(I, p, mu, lam, 0, inner=inner)


def compute_rates(p, inst: Instance, method: str = "auto", full: bool = False) -> RatePartition:
    """Run the peeling algorithm on profile ``p``.

    With ``full=False`` (the aging-rate definition) everything left once the
    minimal ratio reaches 1 forms one final zero-rate group.  ``full=True``
    keeps peeling, which separates groups that drain at different speeds.
    """
    p = validate_profile(p, inst)
    groups, ratios = peel(p, inst.lambdas, inst.mus, method=method, full=full)
    rates = tuple(max(0.0, 1.0 - f) for f in ratios)
    group_of = np.empty(inst.n, dtype=int)
    for k, g in enumerate(groups):
        group_of[members(g)] = k
    per_queue = np.asarray(rates)[group_of]
    return RatePartition(tuple(groups), tuple(ratios), rates, per_queue, group_of)


def peel(p, lam, mus, method: str = "auto", full: bool = False, stop_at: int | None = None):
    """Unchecked core of ``compute_rates``: returns ``(groups, ratios)``.

    With ``stop_at`` set, stops after emitting the group containing that queue.
    """
    mu = np.array(mus, dtype=float)
    remaining = list(range(len(lam)))
    groups, ratios = [], []
    while remaining:
        fam = _stage(remaining, p, mu, lam, method)
        if fam.value >= 1.0 and not full:
            groups.append(mask_of(remaining))
            ratios.append(fam.value)
            break
        S = fam.maximal
        out = members(S)
        groups.append(S)
        ratios.append(f_ratio_masked(out, p, mu, lam))
        if stop_at is not None and (S >> stop_at) & 1:
            break
        for i in out:
            mu = mu * (1.0 - p[i])
        remaining = [i for i in remaining if not (S >> i) & 1]
    return groups, ratios


def queue_ratio(p, lam, mus, i: int, full: bool = False) -> float:
    """Ratio ``f_k`` of the group holding queue ``i`` (no input validation)."""
    groups, ratios = peel(p, lam, mus, full=full, stop_at=i)
    return ratios[-1]


def f_ratio_masked(idx: list[int], p, mu_eff, lam) -> float:
    miss = np.prod(1.0 - p[idx], axis=0)
    return float(mu_eff @ (1.0 - miss)) / float(np.sum(lam[idx]))


def rate_of_queue(p, inst: Instance, i: int, **kw) -> float:
    """Cost of queue ``i`` in the patient game: its long-run aging rate."""
    if not 0 <= i < inst.n:
        raise IndexError(f"queue index {i} out of range for n={inst.n}")
    return float(compute_rates(p, inst, **kw).per_queue[i])
