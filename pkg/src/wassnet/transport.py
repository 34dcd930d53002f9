"""Exact discrete optimal transport, mixture-level W2 bounds, empirical W2.

The transportation LP is solved by a hand-written network simplex (exact
vertex solutions, no regularization), which backs both the MW2 distance
between Gaussian mixtures and empirical W2 estimates between sample clouds.
Equal-size uniform empirical problems take the assignment-problem fast path.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .config import TOL
from .errors import NumericalError, ParseError
from .stats import Gaussian, GaussianMixture, as_mixture, gaussian_w2, \
    mixture_second_moment, _readonly

__all__ = [
    "TransportPlan",
    "solve_discrete_ot",
    "northwest_corner_plan",
    "mw2",
    "discrete_w2",
    "empirical_w2",
    "empirical_w2_spread",
    "relative_w2",
]


@dataclass(frozen=True)
class TransportPlan:
    """A coupling matrix between two discrete marginals and its cost."""

    plan: np.ndarray
    cost: float

    def __post_init__(self):
        p = np.asarray(self.plan, dtype=float)
        if p.ndim != 2:
            raise ParseError("transport plan must be a matrix")
        if np.any(p < -TOL.simplex_atol) or not np.all(np.isfinite(p)):
            raise ParseError("transport plan must be nonnegative and finite")
        if not (np.isfinite(self.cost) and self.cost >= -TOL.simplex_atol):
            raise ParseError("transport cost must be a finite nonnegative real")
        object.__setattr__(self, "plan", _readonly(np.maximum(p, 0.0)))
        object.__setattr__(self, "cost", float(max(self.cost, 0.0)))

    @property
    def row_marginal(self) -> np.ndarray:
        return self.plan.sum(axis=1)

    @property
    def col_marginal(self) -> np.ndarray:
        return self.plan.sum(axis=0)


def _validate_marginals(cost, a, b):
    cost = np.asarray(cost, dtype=float)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if cost.ndim != 2 or cost.shape != (a.size, b.size):
        raise ParseError("cost must be an (M, N) matrix matching marginals")
    if not np.all(np.isfinite(cost)) or np.any(cost < 0.0):
        raise ParseError("costs must be finite and nonnegative")
    if np.any(a < -TOL.simplex_atol) or np.any(b < -TOL.simplex_atol):
        raise ParseError("marginals must be nonnegative")
    sa, sb = float(a.sum()), float(b.sum())
    if abs(sa - sb) > TOL.marginal_atol:
        raise ParseError(
            f"marginal sums differ: {sa} vs {sb} (tolerance "
            f"{TOL.marginal_atol})")
    if sa <= 0.0:
        raise ParseError("marginals must carry positive total mass")
    return cost, np.maximum(a, 0.0), np.maximum(b, 0.0)


def northwest_corner_plan(a, b) -> np.ndarray:
    """Greedy feasible plan (northwest-corner rule); not optimal in general."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    plan = np.zeros((a.size, b.size))
    ar = a.copy()
    bc = b.copy() * (a.sum() / b.sum())
    i = j = 0
    while i < a.size and j < b.size:
        t = min(ar[i], bc[j])
        plan[i, j] = t
        ar[i] -= t
        bc[j] -= t
        if ar[i] <= bc[j] and i < a.size - 1:
            i += 1
        elif j < b.size - 1:
            j += 1
        else:
            i += 1
    return plan


def _northwest_basis(a, b):
    """Northwest-corner basic feasible solution as a spanning-tree arc list."""
    m, n = a.size, b.size
    ar = a.copy()
    bc = b.copy()
    bi, bj, bf = [], [], []
    i = j = 0
    while True:
        t = min(ar[i], bc[j])
        bi.append(i)
        bj.append(j)
        bf.append(t)
        ar[i] -= t
        bc[j] -= t
        if i == m - 1 and j == n - 1:
            break
        if j == n - 1 or (ar[i] <= bc[j] and i < m - 1):
            i += 1
        else:
            j += 1
    return bi, bj, bf


def _network_simplex(cost, a, b, max_pivots=200_000):
    """Exact transportation LP by primal network simplex on the basis tree.

    Dantzig (most-negative reduced cost) entering rule with a Bland-style
    fallback after a streak of degenerate pivots guarantees termination;
    potentials are recomputed from the spanning tree every pivot.
    """
    m, n = a.size, b.size
    bi, bj, bf = _northwest_basis(a, b)
    n_nodes = m + n
    rc_tol = 1e-12 * (1.0 + float(np.max(cost, initial=0.0)))
    degenerate_streak = 0
    bland = False

    for _ in range(int(max_pivots)):
        # potentials from the spanning tree (u on rows, v on cols)
        adj = [[] for _ in range(n_nodes)]
        for k in range(len(bi)):
            r, c = bi[k], m + bj[k]
            adj[r].append((c, k))
            adj[c].append((r, k))
        pot = np.zeros(n_nodes)
        parent = np.full(n_nodes, -1, dtype=int)
        parent_arc = np.full(n_nodes, -1, dtype=int)
        depth = np.zeros(n_nodes, dtype=int)
        seen = np.zeros(n_nodes, dtype=bool)
        seen[0] = True
        queue = deque([0])
        while queue:
            x = queue.popleft()
            for y, k in adj[x]:
                if seen[y]:
                    continue
                seen[y] = True
                parent[y] = x
                parent_arc[y] = k
                depth[y] = depth[x] + 1
                c_k = cost[bi[k], bj[k]]
                pot[y] = c_k - pot[x]
                queue.append(y)
        if not np.all(seen):
            raise NumericalError("transport basis lost tree connectivity")

        rc = cost - pot[:m, None] - pot[None, m:]
        if bland:
            negative = np.flatnonzero(rc.ravel() < -rc_tol)
            if negative.size == 0:
                break
            flat = int(negative[0])
        else:
            flat = int(np.argmin(rc.ravel()))
            if rc.ravel()[flat] >= -rc_tol:
                break
        ei, ej = divmod(flat, n)

        # cycle: entering arc + tree path between its endpoints
        x, y = ei, m + ej
        path_x, path_y = [], []
        while depth[x] > depth[y]:
            path_x.append(parent_arc[x])
            x = parent[x]
        while depth[y] > depth[x]:
            path_y.append(parent_arc[y])
            y = parent[y]
        while x != y:
            path_x.append(parent_arc[x])
            x = parent[x]
            path_y.append(parent_arc[y])
            y = parent[y]
        # cycle arc order: entering (+), up from the col endpoint, then down
        # to the row endpoint; signs alternate around the cycle
        cycle = path_y + path_x[::-1]
        signs = [-1 if p % 2 == 1 else 1 for p in range(1, len(cycle) + 1)]
        neg = [(bf[k], bi[k] * n + bj[k], k) for k, s in zip(cycle, signs)
               if s < 0]
        theta, _, leave = min(neg, key=lambda t: (t[0], t[1]))
        for k, s in zip(cycle, signs):
            bf[k] += s * theta
        # the leaving arc's slot takes the entering arc
        bi[leave], bj[leave], bf[leave] = ei, ej, theta
        if theta <= 0.0:
            degenerate_streak += 1
            if degenerate_streak > 2 * n_nodes:
                bland = True
        else:
            degenerate_streak = 0
    else:
        raise NumericalError(
            f"network simplex exceeded {max_pivots} pivots without "
            "reaching optimality")

    plan = np.zeros((m, n))
    flows = np.maximum(np.asarray(bf), 0.0)
    plan[np.asarray(bi), np.asarray(bj)] = flows
    objective = float(np.sum(flows * cost[np.asarray(bi), np.asarray(bj)]))
    return plan, objective


def solve_discrete_ot(cost, a, b) -> TransportPlan:
    """Exact optimum of the transportation LP min <plan, cost>.

    Marginals must be nonnegative with equal total mass (within 1e-9); the
    result is a vertex plan whose row/column sums reproduce the marginals.
    Zero-mass atoms are removed before the solve and reinserted as zero
    rows/columns.
    """
    cost, a, b = _validate_marginals(cost, a, b)
    rows = np.flatnonzero(a > 0.0)
    cols = np.flatnonzero(b > 0.0)
    sub_a = a[rows]
    sub_b = b[cols]
    # force exact balance (validated above); adjust the largest atom
    diff = float(sub_a.sum() - sub_b.sum())
    sub_b = sub_b.copy()
    sub_b[int(np.argmax(sub_b))] += diff
    sub_cost = cost[np.ix_(rows, cols)]
    sub_plan, objective = _network_simplex(sub_cost, sub_a, sub_b)
    plan = np.zeros_like(cost)
    plan[np.ix_(rows, cols)] = sub_plan
    if not np.allclose(plan.sum(axis=1), a, rtol=0.0, atol=TOL.marginal_atol):
        raise NumericalError("transport plan violates the row marginal")
    if not np.allclose(plan.sum(axis=0), b, rtol=0.0, atol=TOL.marginal_atol):
        raise NumericalError("transport plan violates the column marginal")
    return TransportPlan(plan, objective)


def _pairwise_sq_dists(xs, ys):
    """Squared Euclidean distances in the expanded form, clamped at zero."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    d2 = (np.sum(xs * xs, axis=1)[:, None]
          + np.sum(ys * ys, axis=1)[None, :]
          - 2.0 * xs @ ys.T)
    return np.maximum(d2, 0.0)


def mw2(p, q):
    """Mixture-level W2 upper bound: transport over pairwise Gaussian W2^2.

    Returns ``(distance, plan)``.  The coupling set is restricted to mixtures
    of the given components, so the value always upper-bounds the true W2
    between the mixtures and vanishes iff the component-wise coupling can be
    made perfect (in particular mw2(p, p) = 0).
    """
    pm = as_mixture(p)
    qm = as_mixture(q)
    if pm.dim != qm.dim:
        raise ParseError("mixtures must share the ambient dimension")
    cost = np.empty((pm.size, qm.size))
    for i, ci in enumerate(pm.components):
        for j, cj in enumerate(qm.components):
            w = gaussian_w2(ci, cj)
            cost[i, j] = w * w
    plan = solve_discrete_ot(cost, pm.weights, qm.weights)
    return math.sqrt(max(plan.cost, 0.0)), plan


def discrete_w2(xs, x_weights, ys, y_weights) -> float:
    """Exact W2 between two weighted atom sets (squared-Euclidean cost)."""
    cost = _pairwise_sq_dists(xs, ys)
    plan = solve_discrete_ot(cost, np.asarray(x_weights, dtype=float),
                             np.asarray(y_weights, dtype=float))
    return math.sqrt(max(plan.cost, 0.0))


def empirical_w2(xs, ys) -> float:
    """Exact W2 between the uniform empirical measures of two sample sets.

    Equal sample counts reduce to an assignment problem (solved exactly);
    unequal counts go through the transportation simplex.  Instances whose
    cost matrix would exceed the configured entry cap are rejected with
    advice to subsample.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.ndim != 2 or ys.ndim != 2 or xs.shape[0] < 1 or ys.shape[0] < 1:
        raise ParseError("sample sets must be nonempty (n, d) arrays")
    if xs.shape[1] != ys.shape[1]:
        raise ParseError("sample sets must share the ambient dimension")
    n, m = xs.shape[0], ys.shape[0]
    if n * m > TOL.empirical_cost_cap:
        raise ParseError(
            f"cost matrix would hold {n * m} entries, above the cap "
            f"{TOL.empirical_cost_cap}; subsample the inputs")
    cost = _pairwise_sq_dists(xs, ys)
    if n == m:
        # uniform equal marginals: the optimum is a permutation
        rows, cols = linear_sum_assignment(cost)
        sq = np.sum(np.square(xs[rows] - ys[cols]), axis=1)
        return math.sqrt(float(sq.mean()))
    plan = solve_discrete_ot(cost, np.full(n, 1.0 / n), np.full(m, 1.0 / m))
    # re-evaluate the objective with direct differences on the plan support,
    # which is exact where the expanded cost form carries rounding noise
    ii, jj = np.nonzero(plan.plan)
    sq = np.sum(np.square(xs[ii] - ys[jj]), axis=1)
    return math.sqrt(float(np.dot(plan.plan[ii, jj], sq)))


def empirical_w2_spread(xs, ys, n_batches: int):
    """Mean and standard error of empirical W2 over disjoint sample batches.

    Splits both sample sets into ``n_batches`` equal leading chunks and
    estimates W2 on each; returns ``(mean, standard_error)``.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if n_batches < 2:
        raise ParseError("need at least two batches for a standard error")
    bx = xs.shape[0] // n_batches
    by = ys.shape[0] // n_batches
    if bx < 1 or by < 1:
        raise ParseError("not enough samples for the requested batches")
    vals = np.array([
        empirical_w2(xs[k * bx:(k + 1) * bx], ys[k * by:(k + 1) * by])
        for k in range(n_batches)
    ])
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n_batches))


def relative_w2(w2_value: float, reference) -> float:
    """W2 divided by the root second moment of the reference distribution."""
    if not w2_value >= 0.0:
        raise ParseError("w2_value must be nonnegative")
    second = mixture_second_moment(reference)
    if second <= 0.0:
        raise ParseError("reference distribution has zero second moment")
    return float(w2_value / math.sqrt(second))
