"""Lower bounds on the top ratio at Nash, the e/(e-1) check, and the saturation deformation.

For a group size ``k`` the water-filling problem is::

    max  sum_j mu_j * (1 - (1 - x_j / k)^k) / sum_{i<=k} lambda_i
    s.t. x >= 0, sum_j x_j = k

Every Nash profile has ``f(S_1) >= min(1, min_k value_k)``.
"""

from __future__ import annotations

import concurrent.futures
from dataclasses import dataclass, field

import numpy as np

from .equilibrium import NashCertificate, _workers, find_nash, is_nash, level_partition, near_tight_group
from .instances import (
    E_FACTOR,
    Instance,
    capacity_ratios,
    random_profile,
    satisfies_margin,
    scale,
    uniform_profile,
    validate_profile,
)
from .rates import compute_rates, f_ratio, members

SUM_TOL = 1e-9
KKT_TOL = 1e-7
DEFORM_STEP = 1e-3
MONOTONE_TOL = 1e-9
_SAT_TOL = 1e-12
NEAR_TIGHT_TOL = 1e-5


@dataclass(frozen=True)
class WaterfillSolution:
    k: int
    x: np.ndarray
    value: float
    marginal: float

    def to_dict(self) -> dict:
        return {"k": self.k, "x": [float(v) for v in self.x], "value": float(self.value)}


def _fill(t: float, mus: np.ndarray, k: int) -> np.ndarray:
    with np.errstate(divide="ignore"):
        r = np.where(mus > t, (t / np.where(mus > 0, mus, 1.0)) ** (1.0 / (k - 1)), 1.0)
    return np.maximum(0.0, k * (1.0 - r))


def waterfill_bound(k: int, inst: Instance) -> WaterfillSolution:
    """Optimal saturation vector for group size ``k`` by bisection on the common marginal."""
    if not 1 <= k <= inst.n:
        raise ValueError(f"k must lie in [1, {inst.n}], got {k}")
    mus = np.asarray(inst.mus, dtype=float)
    lam = float(np.sum(inst.lambdas[:k]))
    x = np.zeros(inst.m)
    if k == 1:
        # linear objective: everything on the fastest server
        x[0] = 1.0
        return WaterfillSolution(1, x, float(mus[0]) / lam, float(mus[0]))
    if mus[0] <= 0.0:
        x[:] = k / inst.m
        return WaterfillSolution(k, x, 0.0, 0.0)
    # marginal of server j at x_j is mu_j (1 - x_j/k)^(k-1); total fill decreases in t
    lo, hi = 0.0, float(mus[0])
    for _ in range(200):
        t = 0.5 * (lo + hi)
        s = _fill(t, mus, k).sum()
        if abs(s - k) <= 1e-13 * k:
            break
        if s > k:
            lo = t
        else:
            hi = t
        if hi - lo <= 1e-17:
            break
    x = _fill(t, mus, k)
    x *= k / x.sum()
    value = float(mus @ (1.0 - (1.0 - x / k) ** k)) / lam
    return WaterfillSolution(k, x, value, t)


def kkt_residual(sol: WaterfillSolution, inst: Instance) -> float:
    """Largest violation of the equal-marginal condition (active) or the cutoff (inactive)."""
    if sol.k == 1:
        return max(0.0, float(np.max(inst.mus)) - float(inst.mus[0]))
    marg = inst.mus * (1.0 - sol.x / sol.k) ** (sol.k - 1)
    active = sol.x > 0
    t = float(np.mean(marg[active]))
    res = float(np.max(np.abs(marg[active] - t)))
    if np.any(~active):
        res = max(res, float(np.max(inst.mus[~active])) - t)
    return max(res, 0.0)


def waterfill_table(inst: Instance) -> list[WaterfillSolution]:
    return [waterfill_bound(k, inst) for k in range(1, inst.n + 1)]


def nash_lower_bound(inst: Instance) -> float:
    """``min(1, min_k value_k)``: no Nash profile has a smaller top ratio."""
    return min(1.0, min(s.value for s in waterfill_table(inst)))


def check_poa_bound(p_nash, inst: Instance, tol: float = 1e-6,
                    certificate: NashCertificate | None = None) -> bool:
    """Whether ``min(1, f(S_1))`` at a certified Nash profile clears ``nash_lower_bound - tol``."""
    p = validate_profile(p_nash, inst)
    cert = certificate if certificate is not None else is_nash(p, inst)
    if not cert.is_nash:
        raise ValueError("profile is not a certified Nash equilibrium")
    f1 = min(1.0, compute_rates(p, inst).top_ratio)
    return f1 >= nash_lower_bound(inst) - tol


# -- e/(e-1) sweep -----------------------------------------------------------

@dataclass(frozen=True)
class SweepConfig:
    seeds: tuple[int, ...] = (0, 1, 2)
    inits: tuple[str, ...] = ("uniform", "random", "vertex")
    max_rounds: int = 100
    tol: float = 1e-6
    damping: float = 0.5
    margin: float = E_FACTOR


def scale_to_margin(inst: Instance, margin: float) -> Instance:
    """Divide arrivals just enough that every prefix capacity ratio exceeds ``margin``."""
    alpha = margin * (1.0 + 1e-9) / float(capacity_ratios(inst).min())
    return scale(inst, max(1.0, alpha))


def initial_profile(init: str, seed: int, inst: Instance) -> np.ndarray:
    if init == "uniform":
        return uniform_profile(inst.n, inst.m)
    rng = np.random.default_rng(seed)
    if init == "random":
        return random_profile(inst.n, inst.m, rng)
    if init == "vertex":
        p = np.zeros((inst.n, inst.m))
        p[np.arange(inst.n), rng.integers(inst.m, size=inst.n)] = 1.0
        return p
    raise ValueError(f"unknown init {init!r}")


def _sweep_one(inst: Instance, init: str, seed: int, cfg: SweepConfig) -> dict:
    res = find_nash(inst, initial_profile(init, seed, inst), cfg.max_rounds, cfg.tol, cfg.damping)
    part = compute_rates(res.profile, inst)
    return {
        "init": init,
        "seed": seed,
        "converged": res.converged,
        "certified": res.certificate.is_nash,
        "rounds": res.rounds,
        "top_ratio": float(part.top_ratio),
        "max_rate": float(part.per_queue.max()),
        "profile": inst.unsort_profile(res.profile).tolist(),
    }


def verify_e_bound(inst: Instance, config: SweepConfig | None = None) -> dict:
    """Run best-response dynamics from several starts and confirm every certified Nash is stable."""
    cfg = config or SweepConfig()
    ratios = capacity_ratios(inst)
    report = {
        "margin": cfg.margin,
        "capacity_ratios": [float(r) for r in ratios],
        "slack": float(ratios.min() - cfg.margin),
        "hypothesis_met": satisfies_margin(inst, cfg.margin),
    }
    if not report["hypothesis_met"]:
        report.update(status="hypothesis not met", runs=[], passed=False)
        return report
    jobs = [(init, s) for init in cfg.inits for s in (cfg.seeds if init != "uniform" else cfg.seeds[:1])]
    with concurrent.futures.ThreadPoolExecutor(_workers()) as ex:
        runs = list(ex.map(lambda js: _sweep_one(inst, js[0], js[1], cfg), jobs))
    certified = [r for r in runs if r["certified"]]
    unstable = [r for r in certified if r["max_rate"] > 0.0]
    report.update(
        runs=runs,
        certified=len(certified),
        unstable=len(unstable),
        passed=bool(certified) and not unstable,
    )
    report["status"] = "stable" if report["passed"] else (
        "no certified Nash" if not certified else "unstable Nash found")
    return report


# -- deformation toward a saturation vector ------------------------------------

class DeformationStall(RuntimeError):
    """An oversaturated server remains but no admissible transfer exists."""

    def __init__(self, msg: str, path: "DeformationPath"):
        super().__init__(msg)
        self.path = path


@dataclass
class DeformationPath:
    """Profiles after every sub-step and ``f`` of the top group before and after each."""

    profiles: list = field(default_factory=list)
    f_values: list = field(default_factory=list)
    group: int = 0

    def __iter__(self):
        return iter((self.profiles, self.f_values))

    def increases(self, tol: float = MONOTONE_TOL) -> np.ndarray:
        """Indices of sub-steps where ``f`` went up by more than ``tol``."""
        return np.flatnonzero(np.diff(np.asarray(self.f_values)) > tol)


def deform_to_saturation(p_nash, inst: Instance, x, tight_tol: float | None = NEAR_TIGHT_TOL) -> DeformationPath:
    """Shift mass of the top group from oversaturated to undersaturated servers.

    Levels are handled top level first, queues in increasing index, always
    moving from the lowest-index oversaturated server the queue uses to the
    lowest-index undersaturated server, in sub-steps of at most
    ``DEFORM_STEP`` that stop exactly at saturation thresholds.  ``f`` of the
    top group is recorded after every sub-step.

    The top group and its levels are read with slack ``tight_tol``: a profile
    certified to a finite tolerance has sets that are tight at the exact
    equilibrium nearby but miss rounding-level ties.  ``None`` uses the
    rounding-level slack of ``compute_rates``.
    """
    p = validate_profile(p_nash, inst).copy()
    x = np.asarray(x, dtype=float)
    value, S = near_tight_group(p, inst, tight_tol)
    if value >= 1.0:
        raise ValueError("deformation needs a top group with ratio below 1")
    top = members(S)
    if x.shape != (inst.m,) or np.any(x < 0) or abs(x.sum() - len(top)) > SUM_TOL:
        raise ValueError(f"x must be a nonnegative length-{inst.m} vector summing to {len(top)}")
    lp = level_partition(p, inst, tight_tol)
    path = DeformationPath(group=S)
    path.f_values.append(f_ratio(S, p, inst.mus, inst.lambdas))

    def cols():
        return p[top].sum(axis=0)

    for level in reversed(lp.levels):
        for i in sorted(q for s in level for q in members(s)):
            while True:
                c = cols()
                over = np.flatnonzero((c > x + _SAT_TOL) & (p[i] > 0.0))
                if over.size == 0:
                    break
                under = np.flatnonzero(c < x - _SAT_TOL)
                if under.size == 0:
                    raise DeformationStall(f"queue {i}: server {over[0]} oversaturated, none undersaturated", path)
                j, jj = int(over[0]), int(under[0])
                amt = min(DEFORM_STEP, p[i, j], c[j] - x[j], x[jj] - c[jj])
                p[i, j] -= amt
                p[i, jj] += amt
                if p[i, j] < _SAT_TOL:
                    p[i, jj] += p[i, j]
                    p[i, j] = 0.0
                path.profiles.append(p.copy())
                path.f_values.append(f_ratio(S, p, inst.mus, inst.lambdas))
    c = cols()
    if np.any(c > x + SUM_TOL):
        raise DeformationStall(f"servers {np.flatnonzero(c > x + SUM_TOL).tolist()} still oversaturated", path)
    return path
