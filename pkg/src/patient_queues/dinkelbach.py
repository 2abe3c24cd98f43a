"""Parametric search for the minimal clears-per-arrival ratio.

``min_ratio_dinkelbach`` finds ``min_S alpha(S) / lambda(S)`` by Dinkelbach
iteration: for a guess ``y`` minimize the submodular function
``alpha(S) - y * lambda(S)``; a negative minimum yields a better ratio, a zero
minimum certifies ``y``.  The maximal minimizer of the last inner problem is
the union of all tight sets.

Two inner solvers are available.  ``"enumerate"`` scans all subsets and is the
default for ground sets up to the enumeration cap.  ``"wolfe"`` is the
Fujishige-Wolfe minimum-norm-point algorithm on the base polytope and works
for any size.
"""

from __future__ import annotations

import numpy as np

from .rates import (
    ENUMERATION_CAP,
    EnumerationCapError,
    TightFamily,
    _check_ground,
    _local_to_global,
    effective_mus,
    subset_tables,
    tight_tolerance,
)


class ConvergenceError(RuntimeError):
    pass


class _Submodular:
    """``h(S) = alpha(S) - y * lambda(S)`` on local element indices, with fast marginals."""

    def __init__(self, p_loc, mu_eff, lam_loc, y):
        self.p = p_loc
        self.mu = mu_eff
        self.lam = lam_loc
        self.y = y

    def greedy(self, w):
        """Vertex of the base polytope minimizing ``<w, q>`` (elements in increasing ``w``)."""
        order = np.argsort(w, kind="stable")
        q = np.empty(len(w))
        miss = np.ones(self.p.shape[1])
        for e in order:
            q[e] = float(self.mu @ (self.p[e] * miss)) - self.y * self.lam[e]
            miss = miss * (1.0 - self.p[e])
        return q


def _affine_min_norm(P: np.ndarray) -> np.ndarray:
    """Coefficients (summing to 1) of the min-norm point in the affine hull of the columns of ``P``."""
    k = P.shape[1]
    G = P.T @ P
    A = np.zeros((k + 1, k + 1))
    A[:k, :k] = G
    A[:k, k] = 1.0
    A[k, :k] = 1.0
    rhs = np.zeros(k + 1)
    rhs[k] = 1.0
    sol = np.linalg.lstsq(A, rhs, rcond=None)[0]
    return sol[:k]


def min_norm_point(h: _Submodular, n: int, max_iter: int = 10_000, eps: float = 1e-12) -> np.ndarray:
    """Fujishige-Wolfe minimum-norm point of the base polytope of ``h``."""
    x = h.greedy(np.zeros(n))
    S = [x.copy()]
    coef = np.array([1.0])
    scale = max(1.0, float(np.abs(x).max()))
    for _ in range(max_iter):
        q = h.greedy(x)
        if x @ x - x @ q <= eps * scale * scale:
            return x
        S.append(q)
        coef = np.append(coef, 0.0)
        while True:
            P = np.column_stack(S)
            beta = _affine_min_norm(P)
            if np.all(beta > 1e-15):
                coef = beta
                x = P @ coef
                break
            neg = beta <= 1e-15
            with np.errstate(divide="ignore", invalid="ignore"):
                ratios = np.where(neg, coef / (coef - beta), np.inf)
            theta = float(min(1.0, ratios.min()))
            coef = theta * beta + (1.0 - theta) * coef
            keep = coef > 1e-15
            if not keep.any():
                keep[np.argmax(coef)] = True
            S = [s for s, k in zip(S, keep) if k]
            coef = coef[keep] / coef[keep].sum()
            x = np.column_stack(S) @ coef
            if len(S) == 1:
                break
    raise ConvergenceError("min-norm-point iteration did not converge")


def _minimize_wolfe(h: _Submodular, n: int):
    """Min value and maximal minimizer of ``h`` over all subsets (empty set allowed)."""
    x = min_norm_point(h, n)
    order = np.argsort(x, kind="stable")
    # minimizers are level sets of x; scan prefixes of the sorted order
    vals = [0.0]
    miss = np.ones(h.p.shape[1])
    lam_acc = 0.0
    for e in order:
        miss = miss * (1.0 - h.p[e])
        lam_acc += h.lam[e]
        vals.append(float(h.mu @ (1.0 - miss)) - h.y * lam_acc)
    vals = np.asarray(vals)
    return float(vals.min()), vals, order


def min_ratio_dinkelbach(I: int, p, mus, lambdas, priority: int = 0, inner: str = "enumerate",
                         max_iter: int = 200) -> TightFamily:
    """Same contract as ``min_ratio_set``, computed by parametric submodular minimization."""
    p = np.asarray(p, dtype=float)
    idx = _check_ground(I, priority, p)
    k = len(idx)
    mu = effective_mus(p, mus, priority)
    p_loc = p[idx]
    lam_loc = np.asarray(lambdas, dtype=float)[idx]
    if inner == "enumerate":
        if k > ENUMERATION_CAP:
            raise EnumerationCapError(f"{k} queues exceed the enumeration cap; use inner='wolfe'")
        return _dinkelbach_enumerate(p_loc, mu, lam_loc, idx, max_iter)
    if inner == "wolfe":
        return _dinkelbach_wolfe(p_loc, mu, lam_loc, idx, max_iter)
    raise ValueError(f"unknown inner solver {inner!r}")


def _dinkelbach_enumerate(p_loc, mu, lam_loc, idx, max_iter) -> TightFamily:
    alph, lam = subset_tables(p_loc, mu, lam_loc)
    alph, lam = alph[1:], lam[1:]
    y = alph[-1] / lam[-1]
    for _ in range(max_iter):
        h = alph - y * lam
        j = int(np.argmin(h))
        if h[j] >= -tight_tolerance(y) * lam[j]:
            break
        y = alph[j] / lam[j]
    else:
        raise ConvergenceError("Dinkelbach iteration cap reached")
    hits = np.flatnonzero(alph - y * lam <= tight_tolerance(y) * lam) + 1
    mins = _local_to_global(hits, idx)
    maximal = 0
    for s in mins:
        maximal |= s
    v = float(min(alph[h - 1] / lam[h - 1] for h in hits))
    return TightFamily(v, tuple(mins), maximal)


def _dinkelbach_wolfe(p_loc, mu, lam_loc, idx, max_iter) -> TightFamily:
    k = len(idx)
    y = float(mu @ (1.0 - np.prod(1.0 - p_loc, axis=0))) / float(lam_loc.sum())
    for _ in range(max_iter):
        h = _Submodular(p_loc, mu, lam_loc, y)
        _, vals, order = _minimize_wolfe(h, k)
        lam_prefix = np.concatenate([[0.0], np.cumsum(lam_loc[order])])
        slack = tight_tolerance(y) * lam_prefix
        if not np.any(vals[1:] < -slack[1:]):
            # y is optimal; the largest prefix within tolerance is the maximal tight set
            ok = np.flatnonzero(vals[1:] <= slack[1:]) + 1
            if ok.size == 0:
                raise ConvergenceError("no prefix of the min-norm order attains the ratio")
            size = int(ok.max())
            local = order[:size]
            mask = 0
            for e in local:
                mask |= 1 << idx[int(e)]
            miss = np.prod(1.0 - p_loc[local], axis=0)
            v = float(mu @ (1.0 - miss)) / float(lam_loc[local].sum())
            return TightFamily(min(v, y), (mask,), mask)
        j = int(np.argmin(vals[1:])) + 1
        local = order[:j]
        miss = np.prod(1.0 - p_loc[local], axis=0)
        y_new = float(mu @ (1.0 - miss)) / float(lam_loc[local].sum())
        if y_new >= y:
            raise ConvergenceError("Dinkelbach step failed to decrease the ratio")
        y = y_new
    raise ConvergenceError("Dinkelbach iteration cap reached")
