"""The twelve acceptance criteria as runnable checks.

Each criterion function returns a ``Result``; ``run_all`` prints one
``PASS``/``FAIL`` line per criterion.  Used by ``patient-queues selftest``
and by ``tests/test_acceptance.py``.
"""

from __future__ import annotations

import functools
import io as _io
import math
import os
import tempfile
import time
from contextlib import redirect_stderr, redirect_stdout
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import fixtures
from .dinkelbach import min_ratio_dinkelbach
from .equilibrium import find_nash, is_nash, near_tight_group, queue_cost
from .instances import Instance, random_feasible, random_profile
from .poa import (
    DeformationStall,
    SweepConfig,
    check_poa_bound,
    deform_to_saturation,
    kkt_residual,
    nash_lower_bound,
    verify_e_bound,
    waterfill_bound,
)
from .rates import compute_rates, effective_mus, full_mask, members, min_ratio_set, subset_tables


@dataclass
class Result:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.number:2d} {self.name}: {self.detail} ({self.seconds:.1f}s)"

    def to_dict(self) -> dict:
        return {"number": self.number, "name": self.name, "passed": self.passed,
                "detail": self.detail, "seconds": round(self.seconds, 3)}


def _instance(rng, n_max: int, m_max: int, margin: float = 1.0) -> Instance:
    n = int(rng.integers(1, n_max + 1))
    m = int(rng.integers(1, m_max + 1))
    return random_feasible(n, m, margin, seed=int(rng.integers(2**32)))


# -- 1, 2: exact rates -----------------------------------------------------------

def c01_rate_exactness() -> Result:
    errs = []
    inst, p = fixtures.single_unstable()
    errs.append(abs(compute_rates(p, inst).per_queue[0] - 0.5))
    inst, p = fixtures.example_two_servers()
    errs += list(np.abs(compute_rates(p, inst).per_queue - (1.0 - 1.0 / 1.02)))
    inst, p = fixtures.two_group()
    errs += list(np.abs(compute_rates(p, inst).per_queue - [1.0 / 3.0, 0.6]))
    worst = float(max(errs))
    return Result(1, "rate-algorithm exactness", worst <= 1e-12, f"max error {worst:.2e} (tol 1e-12)")


def c02_stabilizing_deviation() -> Result:
    inst, p = fixtures.example_two_servers_deviation(0.05)
    part = compute_rates(p, inst)
    ok = bool(np.all(part.per_queue == 0.0))
    return Result(2, "two-server stabilizing deviation", ok,
                  f"rates {part.per_queue.tolist()}, f_1 = {part.top_ratio:.6f}")


# -- 3: structural properties ----------------------------------------------------

def structural_violations(inst: Instance, p: np.ndarray, rng, tol: float = 1e-9) -> dict:
    """Counts of violations of the set-function laws on one (instance, profile) pair."""
    n = inst.n
    mus, lam = np.asarray(inst.mus), inst.lambdas
    alph, lt = subset_tables(p, mus, lam)
    N = 1 << n
    S = np.arange(N)[:, None]
    T = np.arange(N)[None, :]
    out = {}
    out["submodularity"] = int(np.sum(alph[S] + alph[T] < alph[S | T] + alph[S & T] - tol))
    fam = min_ratio_set(full_mask(n), p, mus, lam)
    mins = set(fam.minimizers)
    bad_closure = bad_mix = 0
    for a in mins:
        for b in mins:
            if (a | b) not in mins:
                bad_closure += 1
            if a & b and (a & b) not in mins:
                bad_closure += 1
            if not a & b:
                cond = _conditional_alpha(b, a, p, mus)
                if abs(cond - alph[b]) > tol:
                    bad_mix += 1
    out["closure"] = bad_closure
    out["disjoint_mixing"] = bad_mix
    part = compute_rates(p, inst, full=True)
    out["monotone_rates"] = int(np.sum(np.diff(part.ratios) <= 0.0))
    # alpha(A u B) = alpha(A) + alpha(B | A) for disjoint A, B (mediant form of f)
    bad_frac = 0
    for _ in range(20):
        lab = rng.integers(0, 3, size=n)
        A, B = _mask(lab == 1), _mask(lab == 2)
        if not A or not B:
            continue
        lhs = alph[A | B] / lt[A | B]
        rhs = (alph[A] + _conditional_alpha(B, A, p, mus)) / (lt[A] + lt[B])
        if abs(lhs - rhs) > tol:
            bad_frac += 1
    out["fractional_sum"] = bad_frac
    return out


def _mask(flags) -> int:
    return int(sum(1 << i for i, f in enumerate(flags) if f))


def _conditional_alpha(B: int, A: int, p, mus) -> float:
    mu = effective_mus(p, mus, A)
    miss = np.prod(1.0 - p[members(B)], axis=0)
    return float(mu @ (1.0 - miss))


def c03_structural(count: int = 500, seed: int = 3) -> Result:
    rng = np.random.default_rng(seed)
    totals: dict = {}
    for _ in range(count):
        inst = _instance(rng, 6, 4)
        p = random_profile(inst.n, inst.m, rng)
        for k, v in structural_violations(inst, p, rng).items():
            totals[k] = totals.get(k, 0) + v
    bad = sum(totals.values())
    return Result(3, "structural property suite", bad == 0,
                  f"{count} instances, violations {totals}")


# -- 4: line structure -----------------------------------------------------------

def line_local_maxima(inst: Instance, p, i: int, a, b, points: int = 1001, tol: float = 1e-9) -> int:
    """Strict interior local maxima of queue ``i``'s rate on the segment from row ``a`` to row ``b``."""
    q = np.array(p, dtype=float)
    r = np.empty(points)
    for k, t in enumerate(np.linspace(0.0, 1.0, points)):
        q[i] = (1.0 - t) * a + t * b
        r[k] = queue_cost(q, inst, i)
    mid = r[1:-1]
    return int(np.sum((mid > r[:-2] + tol) & (mid > r[2:] + tol)))


def c04_line_structure(count: int = 200, seed: int = 4) -> Result:
    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(count):
        inst = _instance(rng, 5, 4)
        p = random_profile(inst.n, inst.m, rng)
        i = int(rng.integers(inst.n))
        a, b = random_profile(2, inst.m, rng)
        bad += line_local_maxima(inst, p, i, a, b)
    return Result(4, "line-structure suite", bad == 0, f"{count} lines x 1001 points, {bad} interior strict maxima")


# -- 5: Dinkelbach ---------------------------------------------------------------

def c05_dinkelbach(count: int = 200, seed: int = 5) -> Result:
    rng = np.random.default_rng(seed)
    bad_val = bad_set = 0
    for _ in range(count):
        inst = _instance(rng, 12, 4)
        p = random_profile(inst.n, inst.m, rng)
        I = full_mask(inst.n)
        ref = min_ratio_set(I, p, inst.mus, inst.lambdas)
        for inner in ("enumerate", "wolfe"):
            got = min_ratio_dinkelbach(I, p, inst.mus, inst.lambdas, inner=inner)
            bad_val += abs(got.value - ref.value) > 1e-9
            bad_set += got.maximal != ref.maximal
        full_ref = compute_rates(p, inst, method="brute", full=True)
        full_dk = compute_rates(p, inst, method="dinkelbach", full=True)
        bad_set += full_ref.groups != full_dk.groups
        bad_val += float(np.max(np.abs(np.subtract(full_ref.ratios, full_dk.ratios)))) > 1e-9
    ok = bad_val == 0 and bad_set == 0
    return Result(5, "Dinkelbach oracle equivalence", ok,
                  f"{count} instances (n <= 12), value mismatches {bad_val}, set mismatches {bad_set}")


# -- 6: water-filling ------------------------------------------------------------

def waterfill_grid(k: int, inst: Instance, step: float = 1e-3) -> float:
    """Grid-search oracle for the water-filling value (exhaustive for m <= 2, coarse-to-fine above)."""
    mus = np.asarray(inst.mus, dtype=float)
    lam = float(np.sum(inst.lambdas[:k]))
    m = len(mus)

    def value(X):
        return ((1.0 - (1.0 - X / k) ** k) @ mus) / lam

    if m == 1:
        return float(mus[0]) / lam
    if m == 2:
        x1 = np.arange(0.0, k + step / 2, step)
        return float(value(np.column_stack([x1, k - x1])).max())
    # coarse-to-fine on the simplex: each stage searches +-2 previous steps around the best point
    stages = [(0.05 * k, None)]
    h = 0.05 * k
    while h > step:
        nh = max(h / 5.0, step)
        stages.append((nh, 2.0 * h))
        h = nh
    best_x, best = None, -np.inf
    for h, radius in stages:
        axes = []
        for j in range(m - 1):
            if radius is None:
                axes.append(np.arange(0.0, k + h / 2, h))
            else:
                c = best_x[j]
                axes.append(np.arange(max(0.0, c - radius), min(k, c + radius) + h / 2, h))
        G = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, m - 1)
        last = k - G.sum(axis=1)
        keep = last >= -1e-12
        X = np.column_stack([G[keep], np.maximum(last[keep], 0.0)])
        v = value(X)
        a = int(np.argmax(v))
        if v[a] > best:
            best, best_x = float(v[a]), X[a]
    return best


def c06_waterfill(count: int = 60, seed: int = 6) -> Result:
    rng = np.random.default_rng(seed)
    worst_kkt = worst_gap = 0.0
    worst_short = 0.0
    bad_k1 = 0
    for _ in range(count):
        inst = _instance(rng, 5, 4)
        for k in range(1, inst.n + 1):
            sol = waterfill_bound(k, inst)
            worst_kkt = max(worst_kkt, kkt_residual(sol, inst))
            if abs(sol.x.sum() - k) > 1e-9:
                worst_kkt = max(worst_kkt, 1.0)
            g = waterfill_grid(k, inst)
            worst_gap = max(worst_gap, g - sol.value)
            worst_short = max(worst_short, sol.value - g)
            if k == 1 and sol.value != inst.mus[0] / inst.lambdas[0]:
                bad_k1 += 1
    ok = worst_kkt <= 1e-7 and worst_gap <= 1e-6 and bad_k1 == 0
    return Result(6, "water-filling", ok,
                  f"max KKT residual {worst_kkt:.1e}, max grid excess {worst_gap:.1e} "
                  f"(grid within {worst_short:.1e} below), k=1 mismatches {bad_k1}")


# -- 7, 9: random Nash corpus -----------------------------------------------------

@functools.lru_cache(maxsize=None)
def nash_corpus(count: int = 100, seed: int = 7):
    """``(instance, NashResult)`` for random feasible instances with n <= 4, m <= 3."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        inst = _instance(rng, 4, 3)
        out.append((inst, find_nash(inst)))
    return tuple(out)


def two_server_regression() -> dict:
    """Both queues on the fast server: which cost variant (if any) certifies it as Nash."""
    inst, p = fixtures.example_two_servers()
    rep = {"f_1": compute_rates(p, inst).top_ratio, "bound": nash_lower_bound(inst)}
    for variant in ("rate", "descent"):
        cert = is_nash(p, inst, variant=variant)
        rep[variant] = {"is_nash": cert.is_nash,
                        "best_gain": float(max((v.improvement for v in cert.violations), default=0.0))}
    return rep


def c07_poa_at_nash() -> Result:
    t0 = time.time()
    corpus = nash_corpus()
    conv = [(inst, r) for inst, r in corpus if r.converged]
    bad = 0
    for inst, r in conv:
        if not check_poa_bound(r.profile, inst, 1e-6, r.certificate):
            bad += 1
    reg = two_server_regression()
    # the clamp-degenerate profile must be excluded by the Nash precondition, not violate the bound
    reg_ok = not reg["rate"]["is_nash"] and not reg["descent"]["is_nash"]
    return Result(7, "PoA bound at Nash", bad == 0 and reg_ok,
                  f"{len(conv)}/{len(corpus)} converged, {bad} bound violations; two-server fast profile "
                  f"is_nash rate={reg['rate']['is_nash']} descent={reg['descent']['is_nash']}",
                  time.time() - t0)


def c09_deformation() -> Result:
    corpus = nash_corpus()
    runs = stalls = bad = 0
    worst = -np.inf
    for inst, r in corpus:
        if not r.converged:
            continue
        value, S = near_tight_group(r.profile, inst, 1e-5)
        if value >= 1.0:
            continue
        x = waterfill_bound(bin(S).count("1"), inst).x
        runs += 1
        try:
            path = deform_to_saturation(r.profile, inst, x)
        except DeformationStall:
            stalls += 1
            continue
        inc = np.diff(path.f_values)
        if inc.size:
            worst = max(worst, float(inc.max()))
        cols = r.profile[members(S)].sum(0) if not path.profiles else path.profiles[-1][members(S)].sum(0)
        if inc.size and inc.max() > 1e-9 or np.max(np.abs(cols - x)) > 1e-9:
            bad += 1
    ok = stalls == 0 and bad == 0
    return Result(9, "deformation monotonicity", ok,
                  f"{runs} deformations, {stalls} stalls, {bad} non-monotone or unsaturated, "
                  f"largest step change {worst:.1e}")


# -- 8: e/(e-1) corollary ---------------------------------------------------------

def symmetric_gap(n: int, eps: float = 0.05) -> dict:
    inst, p = fixtures.symmetric(n, eps)
    f1 = compute_rates(p, inst).top_ratio
    expected = (1.0 - (1.0 - 1.0 / n) ** n) / (1.0 - 1.0 / math.e + eps)
    return {"n": n, "f_1": f1, "expected": expected, "bound": nash_lower_bound(inst),
            "is_nash": is_nash(p, inst).is_nash}


def c08_e_bound(count: int = 50, seed: int = 8) -> Result:
    rng = np.random.default_rng(seed)
    cfg = SweepConfig(seeds=(0, 1), inits=("uniform", "random"))
    unstable = certified = unmet = 0
    for _ in range(count):
        inst = _instance(rng, 4, 3, margin=1.60)
        rep = verify_e_bound(inst, cfg)
        unmet += not rep["hypothesis_met"]
        certified += rep.get("certified", 0)
        unstable += rep.get("unstable", 0)
    rows = [symmetric_gap(n) for n in (2, 4, 8, 16)]
    exact = all(abs(r["f_1"] - r["expected"]) <= 1e-12 for r in rows)
    nash = all(r["is_nash"] for r in rows)
    gaps = [r["f_1"] - r["bound"] for r in rows]
    trend = all(b <= a + 1e-12 for a, b in zip(gaps, gaps[1:])) and gaps[-1] <= 1e-12
    ok = unstable == 0 and unmet == 0 and certified > 0 and exact and nash and trend
    return Result(8, "e/(e-1) corollary", ok,
                  f"{count} instances at margin 1.60: {certified} certified Nash, {unstable} unstable; "
                  f"symmetric f_1 - bound {[round(g, 6) for g in gaps]}, exact={exact}, nash={nash}")


# -- 10, 11: simulation -----------------------------------------------------------

def c10_simulation(horizon: int = 10**6, trials: int = 20, seed: int = 10) -> Result:
    from .simulator import SimConfig, convergence_check

    cases = {
        "single-unstable": fixtures.single_unstable(),
        "two-server-fast": fixtures.example_two_servers(),
        "two-group": fixtures.two_group(),
        "symmetric-4": fixtures.symmetric(4),
    }
    ok = True
    parts = []
    for name, (inst, p) in cases.items():
        rep = convergence_check(p, inst, SimConfig(horizon, trials, seed), tol=0.015)
        ok = ok and rep["passed"] and rep["separation_ok"] >= 18
        parts.append(f"{name} dev {rep['max_deviation']:.4f} sep {rep['separation_ok']}/{trials}")
    return Result(10, "simulation convergence", ok, "; ".join(parts))


def c11_strong_stability(horizon: int = 10**6, trials: int = 200, seed: int = 11) -> Result:
    from .simulator import SimConfig, strong_stability_probe

    cases = {
        "single-stable": (Instance([0.3], [0.9]), np.array([[1.0]])),
        "near-zero-load": (Instance([0.01], [1.0]), np.array([[1.0]])),
        "two-server-deviation": fixtures.example_two_servers_deviation(0.05),
    }
    ok = True
    parts = []
    for name, (inst, p) in cases.items():
        rep = strong_stability_probe(p, inst, SimConfig(horizon, trials, seed), (1, 2, 4))
        ok = ok and rep["passed"]
        parts.append(f"{name} {'bounded' if rep['passed'] else rep['status'] if rep['status'] != 'ok' else 'trend'}")
    return Result(11, "strong-stability probe", ok, "; ".join(parts))


# -- 12: determinism --------------------------------------------------------------

def _cli_outputs(args: list[str], out_dir: Path) -> dict[str, bytes]:
    from .cli import main

    buf = _io.StringIO()
    with redirect_stdout(buf), redirect_stderr(_io.StringIO()):
        code = main(args + ["--out-dir", str(out_dir)])
    files = {p.name: p.read_bytes() for p in sorted(out_dir.iterdir()) if p.name != "manifest.json"}
    files["<stdout>"] = buf.getvalue().encode()
    files["<exit>"] = str(code).encode()
    return files


def c12_determinism() -> Result:
    commands = [
        ["simulate", "--instance", "fixture:two-group", "--horizon", "100000", "--trials", "3", "--seed", "42"],
        ["rates", "--instance", "fixture:four-queue-levels"],
        ["nash", "--instance", "random:3:2:1.0:9"],
        ["poa", "--instance", "fixture:example"],
    ]
    same = True
    with tempfile.TemporaryDirectory() as tmp:
        for k, cmd in enumerate(commands):
            a = _cli_outputs(cmd, Path(tmp) / f"{k}a")
            b = _cli_outputs(cmd, Path(tmp) / f"{k}b")
            same = same and a == b
        # trial-level threading must not change trajectories
        from .simulator import SimConfig, simulate

        inst, p = fixtures.example_two_servers()
        cfg = SimConfig(50_000, 4, 123)
        old = os.environ.get("PQ_THREADS")
        try:
            os.environ["PQ_THREADS"] = "1"
            serial = simulate(p, inst, cfg)
            os.environ["PQ_THREADS"] = "4"
            threaded = simulate(p, inst, cfg)
        finally:
            if old is None:
                os.environ.pop("PQ_THREADS", None)
            else:
                os.environ["PQ_THREADS"] = old
        same = same and all(np.array_equal(x.timestamps, y.timestamps) for x, y in zip(serial, threaded))
    return Result(12, "determinism", same, f"{len(commands)} CLI commands repeated, serial vs threaded trials")


CRITERIA = {
    1: c01_rate_exactness,
    2: c02_stabilizing_deviation,
    3: c03_structural,
    4: c04_line_structure,
    5: c05_dinkelbach,
    6: c06_waterfill,
    7: c07_poa_at_nash,
    8: c08_e_bound,
    9: c09_deformation,
    10: c10_simulation,
    11: c11_strong_stability,
    12: c12_determinism,
}


# wall-clock budget per criterion, in seconds
TIME_LIMITS = {1: 1, 2: 1, 3: 120, 4: 120, 5: 300, 6: 60, 7: 600, 8: 600, 9: 300, 10: 600, 11: 600, 12: 60}


def run(number: int) -> Result:
    t0 = time.time()
    res = CRITERIA[number]()
    res.seconds = time.time() - t0
    if res.seconds > TIME_LIMITS[number]:
        res.passed = False
        res.detail += f"; over the {TIME_LIMITS[number]} s budget"
    return res


def run_all(only=None, stream=None) -> list[Result]:
    results = []
    for k in sorted(CRITERIA):
        if only is not None and k not in only:
            continue
        res = run(k)
        results.append(res)
        if stream is not None:
            print(res.line(), file=stream, flush=True)
    return results
