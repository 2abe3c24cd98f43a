"""Monte Carlo simulation of the oldest-packet process.

Each queue is tracked only through ``ttilde``, the arrival time of its oldest
unserved packet.  At step ``t`` every queue with ``t >= ttilde`` sends that
packet to a server drawn from its row of ``p``; each server attempts the
oldest packet it received (ties to the lowest queue index) and clears it with
probability ``mu_j``.  A cleared queue's ``ttilde`` jumps ahead by a
Geometric(lambda_i) gap on {1, 2, ...}.  Ages are ``max(0, t - ttilde)``.

Randomness comes from three Philox streams per (seed, trial): server choice,
service outcome and geometric gaps.  Draws are consumed only when needed
(no draw for a queue with nothing to send), so a stream's values do not
depend on chunking or thread scheduling.
"""

from __future__ import annotations

import concurrent.futures
import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np

from .equilibrium import _workers
from .instances import Instance, validate_profile
from .rates import compute_rates, members

ROLES = ("choice", "service", "gap")
CHUNK = 1 << 16


@dataclass(frozen=True)
class SimConfig:
    horizon: int
    trials: int = 1
    seed: int = 0
    checkpoint_stride: int | None = None

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned value")
        if self.checkpoint_stride is None:
            object.__setattr__(self, "checkpoint_stride", default_stride(self.horizon))
        s = self.checkpoint_stride
        if s < 1 or self.horizon % s:
            raise ValueError(f"checkpoint stride {s} must divide horizon {self.horizon}")


def default_stride(horizon: int) -> int:
    """Largest divisor of ``horizon`` giving at least 1000 checkpoints (or 1)."""
    target = max(1, horizon // 1000)
    for s in range(target, 0, -1):
        if horizon % s == 0:
            return s
    return 1


@dataclass
class Trajectory:
    """Ages at every checkpoint of one trial, plus exact counters."""

    times: np.ndarray
    ages: np.ndarray
    timestamps: np.ndarray
    timestamps_final: np.ndarray
    seed: int
    trial: int
    clears: np.ndarray = field(repr=False)
    attempts: np.ndarray = field(repr=False)
    gap_count: np.ndarray = field(default=None, repr=False)
    gap_sum: np.ndarray = field(default=None, repr=False)
    gap_sumsq: np.ndarray = field(default=None, repr=False)

    @property
    def checkpoints(self):
        return list(zip(self.times.tolist(), self.ages))


def _stream(seed: int, trial: int, role: str) -> np.random.Generator:
    ss = np.random.SeedSequence(seed, spawn_key=(trial, ROLES.index(role)))
    return np.random.Generator(np.random.Philox(ss))


class _Buffer:
    """Uniform draws from one stream, consumed front to back across chunks."""

    def __init__(self, gen: np.random.Generator):
        self.gen = gen
        self.data = np.empty(0)
        self.pos = 0

    def ensure(self, need: int) -> np.ndarray:
        left = self.data[self.pos:]
        if left.size < need:
            left = np.concatenate([left, self.gen.random(need - left.size + CHUNK)])
        self.data = left
        self.pos = 0
        return self.data


@numba.njit(cache=True, nogil=True)
def _geom(u, log1m):
    # inversion on (0, 1]: P(G > k) = (1 - lam)^k
    g = np.ceil(np.log(1.0 - u) / log1m)
    return max(1, np.int64(g))


@numba.njit(cache=True, nogil=True)
def _run(cum, mus, log1m, ttil, t0, steps, stride,
         cu, su, gu, pos, out_t, out_tt, ci, clears, attempts, gcount, gsum, gsumsq):
    n, m = cum.shape
    best = np.empty(m, dtype=np.int64)
    cp, sp, gp = pos[0], pos[1], pos[2]
    for t in range(t0, t0 + steps):
        for j in range(m):
            best[j] = -1
        for i in range(n):
            if t >= ttil[i]:
                u = cu[cp]
                cp += 1
                j = 0
                while j < m - 1 and u >= cum[i, j]:
                    j += 1
                b = best[j]
                if b < 0 or ttil[i] < ttil[b]:
                    best[j] = i
        for j in range(m):
            i = best[j]
            if i >= 0:
                attempts[j] += 1
                u = su[sp]
                sp += 1
                if u < mus[j]:
                    g = _geom(gu[gp], log1m[i])
                    gp += 1
                    ttil[i] += g
                    clears[j] += 1
                    gcount[i] += 1
                    gsum[i] += g
                    gsumsq[i] += g * g
        if (t + 1) % stride == 0:
            out_t[ci] = t + 1
            for i in range(n):
                out_tt[ci, i] = ttil[i]
            ci += 1
    pos[0], pos[1], pos[2] = cp, sp, gp
    return ci


def _cumulative(p: np.ndarray) -> np.ndarray:
    cum = np.cumsum(p, axis=1)
    # a zero-probability server never matches: its cumulative value repeats the previous
    # one, and everything from the last positive server on is pinned to exactly 1
    for i in range(p.shape[0]):
        cum[i, np.flatnonzero(p[i] > 0)[-1]:] = 1.0
    return cum


def simulate_trial(p, inst: Instance, cfg: SimConfig, trial: int) -> Trajectory:
    p = validate_profile(p, inst)
    n, m = p.shape
    cum = _cumulative(p)
    mus = np.ascontiguousarray(inst.mus, dtype=float)
    log1m = np.log1p(-np.asarray(inst.lambdas, dtype=float))
    bufs = [_Buffer(_stream(cfg.seed, trial, r)) for r in ROLES]
    g0 = bufs[2].ensure(n)
    ttil = np.array([_geom(g0[i], log1m[i]) - 1 for i in range(n)], dtype=np.int64)
    bufs[2].pos = n
    k = cfg.horizon // cfg.checkpoint_stride
    out_t = np.empty(k, dtype=np.int64)
    out_tt = np.empty((k, n), dtype=np.int64)
    clears = np.zeros(m, dtype=np.int64)
    attempts = np.zeros(m, dtype=np.int64)
    gcount = np.zeros(n, dtype=np.int64)
    gsum = np.zeros(n, dtype=np.int64)
    gsumsq = np.zeros(n, dtype=np.float64)
    ci = 0
    t = 0
    per_step = max(n, 1)
    while t < cfg.horizon:
        steps = min(CHUNK, cfg.horizon - t)
        need = steps * per_step
        cu, su, gu = (b.ensure(need) for b in bufs)
        pos = np.zeros(3, dtype=np.int64)
        ci = _run(cum, mus, log1m, ttil, t, steps, cfg.checkpoint_stride,
                  cu, su, gu, pos, out_t, out_tt, ci, clears, attempts, gcount, gsum, gsumsq)
        for b, used in zip(bufs, pos):
            b.pos = int(used)
        t += steps
    ages = np.maximum(0, out_t[:, None] - out_tt)
    return Trajectory(out_t, ages, out_tt, ttil.copy(), cfg.seed, trial, clears, attempts,
                      gcount, gsum, gsumsq)


def simulate(p, inst: Instance, cfg: SimConfig) -> list[Trajectory]:
    """All trials of ``cfg``, in trial order; trials run on up to ``PQ_THREADS`` threads."""
    p = validate_profile(p, inst)
    if cfg.trials == 1 or _workers() == 1:
        return [simulate_trial(p, inst, cfg, k) for k in range(cfg.trials)]
    with concurrent.futures.ThreadPoolExecutor(_workers()) as ex:
        return list(ex.map(lambda k: simulate_trial(p, inst, cfg, k), range(cfg.trials)))


def empirical_rates(traj: Trajectory, burn_in_fraction: float = 0.2) -> np.ndarray:
    """Least-squares slope of each queue's age against time after the burn-in, floored at 0."""
    if not 0.0 <= burn_in_fraction <= 0.9:
        raise ValueError("burn_in_fraction must lie in [0, 0.9]")
    horizon = traj.times[-1] if traj.times.size else 0
    keep = traj.times >= burn_in_fraction * horizon
    if keep.sum() < 2:
        raise ValueError("fewer than 2 checkpoints after burn-in")
    t = traj.times[keep].astype(float)
    y = traj.ages[keep].astype(float)
    tc = t - t.mean()
    slope = tc @ (y - y.mean(axis=0)) / (tc @ tc)
    return np.maximum(slope, 0.0)


def group_separation(traj: Trajectory, groups, rates) -> bool:
    """At the last checkpoint, every aging group is strictly older than the group after it."""
    last = traj.ages[-1]
    for k in range(len(groups) - 1):
        if rates[k] <= 0.0:
            break
        if last[members(groups[k])].min() <= last[members(groups[k + 1])].max():
            return False
    return True


def convergence_check(p, inst: Instance, cfg: SimConfig, tol: float = 0.015,
                      burn_in_fraction: float = 0.2, trajectories=None) -> dict:
    """Trial-mean empirical slopes against the analytic rates."""
    p = validate_profile(p, inst)
    part = compute_rates(p, inst)
    trajs = simulate(p, inst, cfg) if trajectories is None else trajectories
    slopes = np.array([empirical_rates(tr, burn_in_fraction) for tr in trajs])
    mean = slopes.mean(axis=0)
    dev = float(np.max(np.abs(mean - part.per_queue)))
    sep = [group_separation(tr, part.groups, part.rates) for tr in trajs]
    return {
        "analytic": part.per_queue.tolist(),
        "empirical": mean.tolist(),
        "per_trial": slopes.tolist(),
        "max_deviation": dev,
        "tol": tol,
        "separation_ok": int(sum(sep)),
        "trials": len(trajs),
        "seed": cfg.seed,
        "passed": dev <= tol,
    }


def geometric_ladder(times: np.ndarray, levels: int = 7, ratio: float = math.sqrt(2.0)) -> np.ndarray:
    """Indices of checkpoints nearest horizon / ratio^c for c = levels-1, ..., 0."""
    horizon = times[-1]
    idx = []
    for c in range(levels - 1, -1, -1):
        k = int(np.argmin(np.abs(times - horizon / ratio**c)))
        if not idx or k > idx[-1]:
            idx.append(k)
    return np.asarray(idx)


def strong_stability_probe(p, inst: Instance, cfg: SimConfig, moment_orders=(1, 2, 4),
                           levels: int = 7, trajectories=None) -> dict:
    """Cross-trial moment estimates of the ages over geometrically growing time blocks.

    Level ``c`` averages ``T^r`` over all trials and all checkpoints after
    level ``c-1`` up to the ladder time ``horizon / sqrt(2)^(levels-1-c)``.
    The ladder starts at ``horizon / 8`` so the climb from the empty initial
    state does not drag the median down; linear growth still gives a last to
    median ratio of ``2^1.5`` at ``r = 1``.

    Passes iff, for every queue and order ``r``, the last estimate is at most
    twice the median estimate over the ladder.
    """
    p = validate_profile(p, inst)
    part = compute_rates(p, inst, full=True)
    ratios = np.asarray(part.ratios)
    if np.any(ratios <= 1.0):
        return {"status": "precondition failed: not every group has ratio > 1",
                "ratios": ratios.tolist(), "passed": False}
    trajs = simulate(p, inst, cfg) if trajectories is None else trajectories
    idx = geometric_ladder(trajs[0].times, levels)
    # each level pools the checkpoints since the previous level, across all trials;
    # a stable queue sits at age 0 most of the time, so single checkpoints are too noisy
    starts = np.concatenate([[0], idx[:-1] + 1])
    ages = np.stack([tr.ages for tr in trajs]).astype(float)
    out = {}
    ok = True
    for r in moment_orders:
        powered = ages ** r
        est = np.stack([powered[:, a:b + 1].mean(axis=(0, 1)) for a, b in zip(starts, idx)])
        last = est[-1]
        med = np.median(est, axis=0)
        bounded = last <= 2.0 * med
        ok = ok and bool(bounded.all())
        out[str(r)] = {"estimates": est.T.tolist(), "median": med.tolist(), "bounded": bounded.tolist()}
    return {
        "status": "ok",
        "times": trajs[0].times[idx].tolist(),
        "moments": out,
        "trials": len(trajs),
        "passed": ok,
    }


def write_csv(traj: Trajectory, path, inst: Instance | None = None) -> None:
    """One row per checkpoint: ``t, T_1, ..., T_n`` (columns in input queue order with ``inst``)."""
    ages = traj.ages
    if inst is not None:
        ages = np.empty_like(traj.ages)
        ages[:, list(inst.queue_order)] = traj.ages
    n = ages.shape[1]
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"T_{i + 1}" for i in range(n)])
        for t, row in zip(traj.times.tolist(), ages.tolist()):
            w.writerow([t] + row)
