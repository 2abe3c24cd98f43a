"""Queuing-game instances: arrival/service rates, strategy profiles, generators."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

ROW_SUM_TOL = 1e-12
E_FACTOR = math.e / (math.e - 1.0)


@dataclass(frozen=True, eq=False)
class Instance:
    """Arrival rates ``lambdas`` (n queues) and server success rates ``mus`` (m servers).

    Both vectors are stored sorted in descending order.  ``queue_order`` and
    ``server_order`` map sorted positions back to the labels used in the input
    file (``queue_order[k]`` is the original index of sorted queue ``k``).
    """

    lambdas: np.ndarray
    mus: np.ndarray
    queue_order: tuple[int, ...] = field(default=())
    server_order: tuple[int, ...] = field(default=())

    def __post_init__(self):
        lam = np.array(self.lambdas, dtype=float).ravel()
        mu = np.array(self.mus, dtype=float).ravel()
        if lam.size < 1 or mu.size < 1:
            raise ValueError("need at least one queue and one server")
        if not np.all(np.isfinite(lam)) or np.any(lam <= 0.0) or np.any(lam >= 1.0):
            raise ValueError(f"arrival rates must lie in (0, 1), got {lam.tolist()}")
        if not np.all(np.isfinite(mu)) or np.any(mu < 0.0) or np.any(mu > 1.0):
            raise ValueError(f"service rates must lie in [0, 1], got {mu.tolist()}")
        if np.any(np.diff(lam) > 0.0):
            raise ValueError("arrival rates must be sorted descending (use Instance.from_rates)")
        if np.any(np.diff(mu) > 0.0):
            raise ValueError("service rates must be sorted descending (use Instance.from_rates)")
        lam.setflags(write=False)
        mu.setflags(write=False)
        object.__setattr__(self, "lambdas", lam)
        object.__setattr__(self, "mus", mu)
        qo = tuple(int(k) for k in self.queue_order) or tuple(range(lam.size))
        so = tuple(int(k) for k in self.server_order) or tuple(range(mu.size))
        if sorted(qo) != list(range(lam.size)) or sorted(so) != list(range(mu.size)):
            raise ValueError("queue_order/server_order must be permutations")
        object.__setattr__(self, "queue_order", qo)
        object.__setattr__(self, "server_order", so)

    @classmethod
    def from_rates(cls, lambdas, mus) -> Instance:
        """Build an instance from rates in arbitrary order, recording the sort permutation."""
        lam = np.asarray(lambdas, dtype=float).ravel()
        mu = np.asarray(mus, dtype=float).ravel()
        qo = np.argsort(-lam, kind="stable")
        so = np.argsort(-mu, kind="stable")
        return cls(lam[qo], mu[so], tuple(qo.tolist()), tuple(so.tolist()))

    @property
    def n(self) -> int:
        return int(self.lambdas.size)

    @property
    def m(self) -> int:
        return int(self.mus.size)

    def __eq__(self, other):
        if not isinstance(other, Instance):
            return NotImplemented
        return (
            np.array_equal(self.lambdas, other.lambdas)
            and np.array_equal(self.mus, other.mus)
            and self.queue_order == other.queue_order
            and self.server_order == other.server_order
        )

    def __hash__(self):
        return hash((self.lambdas.tobytes(), self.mus.tobytes(), self.queue_order, self.server_order))

    def __repr__(self):
        return f"Instance(lambdas={self.lambdas.tolist()}, mus={self.mus.tolist()})"

    def sort_profile(self, rows) -> np.ndarray:
        """Reorder a profile given in input labels into this instance's sorted order."""
        p = np.asarray(rows, dtype=float)
        return p[np.ix_(self.queue_order, self.server_order)]

    def unsort_profile(self, p) -> np.ndarray:
        out = np.empty_like(np.asarray(p, dtype=float))
        out[np.ix_(self.queue_order, self.server_order)] = p
        return out

    def unsort_queues(self, values) -> np.ndarray:
        """Map a per-queue vector in sorted order back to input labels."""
        values = np.asarray(values)
        out = np.empty_like(values)
        out[list(self.queue_order)] = values
        return out


def validate_profile(p, inst: Instance | None = None) -> np.ndarray:
    """Check that ``p`` is a row-stochastic n x m matrix and return it as a float array."""
    arr = np.array(p, dtype=float)
    if arr.ndim != 2:
        raise ValueError(f"profile must be a 2-d array, got shape {arr.shape}")
    if inst is not None and arr.shape != (inst.n, inst.m):
        raise ValueError(f"profile shape {arr.shape} does not match instance ({inst.n}, {inst.m})")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ValueError("profile entries must lie in [0, 1]")
    sums = arr.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > ROW_SUM_TOL)
    if bad.size:
        raise ValueError(f"profile row {int(bad[0])} sums to {sums[bad[0]]!r}, not 1")
    return arr


def uniform_profile(n: int, m: int) -> np.ndarray:
    return np.full((n, m), 1.0 / m)


def _prefix_capacity(mus, n: int) -> np.ndarray:
    # servers beyond the m-th count as rate 0
    mu = np.zeros(n)
    k = min(n, len(mus))
    mu[:k] = mus[:k]
    return np.cumsum(mu)


def capacity_ratios(inst: Instance) -> np.ndarray:
    """Prefix ratios sum(mu[:k]) / sum(lambda[:k]) for k = 1..n."""
    return _prefix_capacity(inst.mus, inst.n) / np.cumsum(inst.lambdas)


def is_feasible(inst: Instance) -> bool:
    """Central feasibility: the k best servers beat the k largest arrivals, for every k."""
    return bool(np.all(_prefix_capacity(inst.mus, inst.n) > np.cumsum(inst.lambdas)))


def satisfies_margin(inst: Instance, margin: float) -> bool:
    """Strict feasibility after scaling the arrivals up by ``margin``."""
    return bool(np.all(_prefix_capacity(inst.mus, inst.n) > margin * np.cumsum(inst.lambdas)))


def scale(inst: Instance, alpha: float) -> Instance:
    """The game with every arrival rate divided by ``alpha`` (alpha >= 1)."""
    if not alpha >= 1.0:
        raise ValueError(f"scale factor must be >= 1, got {alpha}")
    return Instance(inst.lambdas / alpha, inst.mus, inst.queue_order, inst.server_order)


def symmetric_instance(n: int, eps: float) -> tuple[Instance, np.ndarray]:
    """n identical queues at rate 1 - 1/e + eps on n unit servers, all mixing uniformly."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0.0 < eps < 1.0 / math.e:
        raise ValueError(f"eps must lie in (0, 1/e), got {eps}")
    lam = np.full(n, 1.0 - 1.0 / math.e + eps)
    return Instance(lam, np.ones(n)), uniform_profile(n, n)


def random_feasible(n: int, m: int, margin: float = 1.0, seed=None, max_tries: int = 1000) -> Instance:
    """Random instance whose prefix capacity ratios are all at least ``margin``.

    Rates are drawn uniformly, then the arrivals are rescaled so the tightest
    prefix ratio sits just above ``margin``.  Draws where the rescaled
    arrivals leave (0, 1) are rejected.
    """
    if n < 1 or m < 1:
        raise ValueError("n and m must be >= 1")
    if margin < 1.0:
        raise ValueError("margin must be >= 1")
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        mu = np.sort(rng.uniform(0.05, 1.0, size=m))[::-1]
        lam = np.sort(rng.uniform(0.05, 1.0, size=n))[::-1]
        ratios = _prefix_capacity(mu, n) / np.cumsum(lam)
        if ratios.min() <= 0.0:
            continue
        lam = lam * ratios.min() / (margin * (1.0 + 1e-9))
        if lam[0] >= 1.0 or lam[-1] <= 0.0:
            continue
        inst = Instance(lam, mu)
        if satisfies_margin(inst, margin):
            return inst
    raise RuntimeError(f"no feasible instance found in {max_tries} tries (n={n}, m={m}, margin={margin})")


def random_profile(n: int, m: int, rng) -> np.ndarray:
    """Random row-stochastic matrix; about a third of the rows are sparse."""
    rng = np.random.default_rng(rng)
    p = rng.dirichlet(np.ones(m), size=n)
    for i in range(n):
        if m > 1 and rng.random() < 1.0 / 3.0:
            keep = rng.random(m) < 0.5
            if not keep.any():
                keep[rng.integers(m)] = True
            p[i] = np.where(keep, p[i], 0.0)
    p /= p.sum(axis=1, keepdims=True)
    return p
