"""Best responses, Nash certificates, best-response dynamics and level partitions.

A queue's cost is its long-run aging rate (``variant="rate"``), or the
unclamped ``1 - f_k`` of its group (``variant="descent"``), which keeps
rewarding faster draining once the rate itself is 0.
"""

from __future__ import annotations

import concurrent.futures
import os
from dataclasses import dataclass, field

import numpy as np

from .instances import Instance, uniform_profile, validate_profile
from .rates import (
    compute_rates,
    effective_mus,
    f_ratio,
    mask_of,
    members,
    queue_ratio,
    subset_tables,
    tight_tolerance,
    _local_to_global,
)

VARIANTS = ("rate", "descent")
BISECT_T_TOL = 1e-10
GRID_POINTS = 17
POLISH_GAIN = 1e-13


def queue_cost(p, inst: Instance, i: int, variant: str = "rate") -> float:
    """Cost of queue ``i`` under profile ``p`` (no validation of ``p``)."""
    if variant == "rate":
        return max(0.0, 1.0 - queue_ratio(p, inst.lambdas, inst.mus, i))
    if variant == "descent":
        return 1.0 - queue_ratio(p, inst.lambdas, inst.mus, i, full=True)
    raise ValueError(f"unknown cost variant {variant!r}")


def costs(p, inst: Instance, variant: str = "rate") -> np.ndarray:
    part = compute_rates(p, inst, full=variant == "descent")
    return part.per_queue if variant == "rate" else part.descent()


def shift_improves(i: int, j_from: int, j_to: int, S: int, p, inst: Instance) -> bool:
    """Whether moving a little of queue ``i``'s mass from ``j_from`` to ``j_to`` raises ``f(S)``.

    ``f(S)`` is linear in row ``i``; the shift raises it (lowering the set's
    aging rate) iff ``mu_from * prod_{S-i}(1 - p_r,from) < mu_to * prod_{S-i}(1 - p_r,to)``.
    """
    if not (S >> i) & 1:
        raise ValueError(f"queue {i} is not in the set")
    p = np.asarray(p, dtype=float)
    others = [r for r in members(S) if r != i]
    miss = np.prod(1.0 - p[others], axis=0) if others else np.ones(p.shape[1])
    w = np.asarray(inst.mus) * miss
    return bool(w[j_from] < w[j_to])


# -- best responses ----------------------------------------------------------

@dataclass(frozen=True)
class BestResponse:
    row: np.ndarray
    cost: float


def _line_search(h, T: float, h0: float):
    """Minimize ``h`` on ``[0, T]`` for a piecewise-linear ``h`` with no interior local maxima."""
    eta = max(1e-9 * T, 1e-13)
    if eta >= T:
        v = h(T)
        return (T, v) if v < h0 else (0.0, h0)
    h_eta = h(eta)
    if h_eta > h0:
        # increasing at the start means non-decreasing on the rest of the segment
        return 0.0, h0
    # the probe at eta keeps a dip narrower than one grid cell bracketed
    ts = np.concatenate([[0.0, eta], np.linspace(0.0, T, GRID_POINTS)[1:]])
    vals = np.empty(len(ts))
    vals[0], vals[1] = h0, h_eta
    for k in range(2, len(ts)):
        vals[k] = h(ts[k])
    a = int(np.argmin(vals))
    if vals[a] >= h0:
        return 0.0, h0
    lo, b, hi = ts[max(a - 1, 0)], ts[a], ts[min(a + 1, len(ts) - 1)]
    vb = vals[a]
    while hi - lo > BISECT_T_TOL:
        left, right = 0.5 * (lo + b), 0.5 * (b + hi)
        vl = h(left) if left < b else np.inf
        vr = h(right) if right > b else np.inf
        if vl < vb and vl <= vr:
            hi, b, vb = b, left, vl
        elif vr < vb:
            lo, b, vb = b, right, vr
        else:
            lo, hi = left, right
    return b, vb


class _QueueObjective:
    def __init__(self, p, inst: Instance, i: int, variant: str):
        self.p = np.array(p, dtype=float)
        self.inst = inst
        self.i = i
        self.variant = variant
        self.floor = 0.0 if variant == "rate" else -np.inf

    def __call__(self, row) -> float:
        self.p[self.i] = row
        return queue_cost(self.p, self.inst, self.i, self.variant)


def _descend(obj: _QueueObjective, row: np.ndarray, val: float, tol: float):
    m = len(row)
    while val > obj.floor:
        improved = False
        for j in range(m):
            for jp in range(m):
                if jp == j or row[j] <= 0.0:
                    continue
                d = np.zeros(m)
                d[j], d[jp] = -1.0, 1.0
                base = row.copy()

                def h(t, base=base, d=d, j=j):
                    q = base + t * d
                    q[j] = max(q[j], 0.0)
                    return obj(q)

                t, v = _line_search(h, float(row[j]), val)
                if v < val - tol:
                    row = base + t * d
                    row[j] = max(row[j], 0.0)
                    row = row / row.sum()
                    val = obj(row)
                    improved = True
                    if val <= obj.floor:
                        return row, val
        if not improved:
            break
    return row, val


def best_response(i: int, p, inst: Instance, tol: float = 1e-9, variant: str = "rate") -> BestResponse:
    """A row for queue ``i`` that is optimal (to within ``tol``) against the other rows of ``p``.

    Starts from the current row, the uniform row and every pure row; runs
    pairwise mass-transfer line searches from the current row and from the
    best start.  Among equal costs the lexicographically smallest row wins.
    """
    p = validate_profile(p, inst)
    m = inst.m
    obj = _QueueObjective(p, inst, i, variant)
    starts = [p[i].copy(), np.full(m, 1.0 / m)] + list(np.eye(m))
    vals = [obj(s) for s in starts]
    order = sorted(range(len(starts)), key=lambda k: (vals[k], tuple(starts[k])))
    picks = [0] if order[0] == 0 else [0, order[0]]
    found = []
    for k in picks:
        found.append(_descend(obj, starts[k].copy(), vals[k], tol))
    found += [(starts[k], vals[k]) for k in order[:1]]
    best_val = min(v for _, v in found)
    ties = [r for r, v in found if v <= best_val]
    row = min(ties, key=tuple)
    return BestResponse(np.asarray(row, dtype=float), float(best_val))


# -- Nash certificates -------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    queue: int
    server_from: int
    server_to: int
    improvement: float


@dataclass(frozen=True)
class NashCertificate:
    is_nash: bool
    violations: tuple[Violation, ...]
    tol: float
    costs: np.ndarray = field(repr=False)
    best_costs: np.ndarray = field(repr=False)
    variant: str = "rate"

    def to_dict(self, inst: Instance | None = None) -> dict:
        q = (lambda i: inst.queue_order[i]) if inst is not None else (lambda i: i)
        s = (lambda j: inst.server_order[j]) if inst is not None else (lambda j: j)
        costs = self.costs if inst is None else inst.unsort_queues(self.costs)
        best = self.best_costs if inst is None else inst.unsort_queues(self.best_costs)
        return {
            "is_nash": self.is_nash,
            "tol": self.tol,
            "variant": self.variant,
            "costs": [float(c) for c in costs],
            "best_costs": [float(c) for c in best],
            "violations": [
                {"queue": q(v.queue), "from": s(v.server_from), "to": s(v.server_to),
                 "improvement": v.improvement}
                for v in self.violations
            ],
        }


def _violation(i, row, br: BestResponse, cost) -> Violation:
    diff = br.row - row
    return Violation(i, int(np.argmin(diff)), int(np.argmax(diff)), float(cost - br.cost))


def _symmetry_key(p, inst: Instance, i: int):
    # swapping two queues with equal arrival rate and equal rows leaves the game unchanged
    return (float(inst.lambdas[i]), p[i].tobytes())


def is_nash(p, inst: Instance, tol: float = 1e-6, variant: str = "rate",
            search_tol: float | None = None) -> NashCertificate:
    """Certify ``p`` by comparing every queue's cost with its best-response cost."""
    p = validate_profile(p, inst)
    search_tol = tol * 1e-3 if search_tol is None else search_tol
    current = costs(p, inst, variant)
    best = np.empty(inst.n)
    violations = []
    cache: dict = {}
    for i in range(inst.n):
        key = _symmetry_key(p, inst, i)
        if key not in cache:
            cache[key] = best_response(i, p, inst, search_tol, variant)
        br = cache[key]
        best[i] = min(br.cost, current[i])
        if current[i] - br.cost > tol:
            violations.append(_violation(i, p[i], br, current[i]))
    return NashCertificate(not violations, tuple(violations), tol, current, best, variant)


@dataclass(frozen=True)
class NashResult:
    profile: np.ndarray
    certificate: NashCertificate
    converged: bool
    rounds: int
    damping: float
    order: str

    def to_dict(self, inst: Instance | None = None) -> dict:
        prof = self.profile if inst is None else inst.unsort_profile(self.profile)
        return {
            "status": "converged" if self.converged else "not converged",
            "rounds": self.rounds,
            "damping": self.damping,
            "order": self.order,
            "profile": prof.tolist(),
            "certificate": self.certificate.to_dict(inst),
        }


def _workers() -> int:
    cap = os.environ.get("PQ_THREADS")
    n = os.cpu_count() or 1
    return max(1, min(n, int(cap))) if cap else n


def find_nash(inst: Instance, init=None, max_rounds: int = 100, tol: float = 1e-6,
              damping: float = 0.5, order: str = "round-robin", variant: str = "rate",
              polish: bool = True) -> NashResult:
    """Damped best-response dynamics until a full sweep leaves every queue within ``tol`` of optimal.

    ``order`` is ``"round-robin"`` (queues updated in index order against the
    latest profile) or ``"simultaneous"`` (all best responses against the same
    profile, computed on up to ``PQ_THREADS`` threads).  With ``polish`` a
    converged profile is finished by undamped best responses.  Failure to converge in
    ``max_rounds`` rounds is reported through ``NashResult.converged``.
    """
    if not 0.0 < damping <= 1.0:
        raise ValueError("damping must lie in (0, 1]")
    if order not in ("round-robin", "simultaneous"):
        raise ValueError(f"unknown order {order!r}")
    p = validate_profile(uniform_profile(inst.n, inst.m) if init is None else init, inst).copy()
    search_tol = tol * 1e-3
    for rnd in range(1, max_rounds + 1):
        moved = False
        if order == "round-robin":
            for i in range(inst.n):
                cur = queue_cost(p, inst, i, variant)
                br = best_response(i, p, inst, search_tol, variant)
                if cur - br.cost > tol:
                    p[i] = (1.0 - damping) * p[i] + damping * br.row
                    p[i] /= p[i].sum()
                    moved = True
        else:
            cur = costs(p, inst, variant)
            with concurrent.futures.ThreadPoolExecutor(_workers()) as ex:
                brs = list(ex.map(lambda i: best_response(i, p, inst, search_tol, variant), range(inst.n)))
            new = p.copy()
            for i, br in enumerate(brs):
                if cur[i] - br.cost > tol:
                    new[i] = (1.0 - damping) * p[i] + damping * br.row
                    new[i] /= new[i].sum()
                    moved = True
            p = new
        if not moved:
            if polish:
                p = _polish(p, inst, tol, variant, search_tol)
            cert = is_nash(p, inst, tol, variant, search_tol)
            if cert.is_nash:
                return NashResult(p, cert, True, rnd, damping, order)
    cert = is_nash(p, inst, tol, variant, search_tol)
    return NashResult(p, cert, cert.is_nash, max_rounds, damping, order)


def _polish(p, inst: Instance, tol: float, variant: str, search_tol: float, sweeps: int = 5):
    """Undamped best responses on any strict gain, kept only if the result still certifies.

    Damping leaves a geometric tail (e.g. a residue of mass on a server the
    best response abandons) that the ``tol`` threshold no longer moves.
    """
    q = p.copy()
    for _ in range(sweeps):
        changed = False
        for i in range(inst.n):
            cur = queue_cost(q, inst, i, variant)
            br = best_response(i, q, inst, search_tol, variant)
            if cur - br.cost > POLISH_GAIN and not np.array_equal(br.row, q[i]):
                q[i] = br.row
                changed = True
        if not changed:
            break
    return q if is_nash(q, inst, tol, variant, search_tol).is_nash else p


# -- level partitions --------------------------------------------------------

@dataclass(frozen=True)
class LevelPartition:
    """Levels of minimal tight sets (level 1 first) covering the maximal tight set."""

    levels: tuple[tuple[int, ...], ...]
    covered: int

    def level_of(self) -> dict[int, int]:
        out = {}
        for ell, subsets in enumerate(self.levels):
            for s in subsets:
                for i in members(s):
                    out[i] = ell
        return out


def support(S: int, p) -> int:
    """Bitmask of servers that some queue in ``S`` sends to with positive probability."""
    cols = np.flatnonzero(np.any(np.asarray(p)[members(S)] > 0.0, axis=0))
    return mask_of(cols)


def _minimal_sets(masks: list[int]) -> list[int]:
    masks = sorted(set(masks), key=lambda s: (bin(s).count("1"), s))
    out = []
    for s in masks:
        if not any((t & s) == t for t in out):
            out.append(s)
    return out


def level_partition(p, inst: Instance, tol: float | None = None) -> LevelPartition:
    """Decompose the maximal tight set into levels of minimal tight sets.

    Level ``l+1`` holds the minimal sets ``S`` of the not-yet-covered tight
    queues with ``f(S | lower levels) = f_1``; each level must consist of
    pairwise disjoint sets with pairwise disjoint server supports.

    ``tol`` is the slack within which a ratio counts as tight.  By default it
    is rounding-level; a profile that is Nash only to within some tolerance
    needs a matching slack, or sets that are tight at the nearby exact
    equilibrium go unrecognized.
    """
    p = validate_profile(p, inst)
    value, top = near_tight_group(p, inst, tol)
    if value >= 1.0:
        raise ValueError(f"top ratio {value} >= 1: no nontrivial tight group")
    lower = 0
    levels = []
    lam = inst.lambdas
    while lower != top:
        idx = members(top & ~lower)
        mu = effective_mus(p, inst.mus, lower)
        alph, lt = subset_tables(p[idx], mu, lam[idx])
        f = alph[1:] / lt[1:]
        # conditional ratios carry a little more rounding than the stage-1 value
        slack = 10.0 * tight_tolerance(value) if tol is None else tol
        hits = np.flatnonzero(f <= value + slack) + 1
        if hits.size == 0:
            raise RuntimeError("no tight subset among the remaining queues")
        level = _minimal_sets(_local_to_global(hits, idx))
        for a in range(len(level)):
            for b in range(a + 1, len(level)):
                if level[a] & level[b] or support(level[a], p) & support(level[b], p):
                    raise RuntimeError("minimal tight sets at one level overlap or share servers")
        levels.append(tuple(level))
        for s in level:
            lower |= s
    return LevelPartition(tuple(levels), lower)


def near_tight_group(p, inst: Instance, tol: float | None = None) -> tuple[float, int]:
    """Minimal ratio and the union of every set within ``tol`` of it.

    With ``tol=None`` this is the first group of ``compute_rates``.
    """
    if tol is None:
        part = compute_rates(p, inst)
        return part.top_ratio, part.top_group
    alph, lt = subset_tables(np.asarray(p, dtype=float), np.asarray(inst.mus, dtype=float), inst.lambdas)
    f = alph[1:] / lt[1:]
    value = float(f.min())
    top = 0
    for s in np.flatnonzero(f <= value + tol) + 1:
        top |= int(s)
    return value, top


def level_union_ratio(p, inst: Instance, lp: LevelPartition, ell: int, chosen) -> float:
    """``f`` of all sets below level ``ell`` together with the chosen level-``ell`` sets."""
    S = 0
    for lower in lp.levels[:ell]:
        for s in lower:
            S |= s
    for s in chosen:
        S |= s
    return f_ratio(S, p, inst.mus, inst.lambdas)
