"""Exact discrete optimal transport (Wasserstein / Kantorovich lifting).

The primal is solved with a transportation simplex on the spanning-tree
basis of the bipartite supply/demand graph; the node potentials of the
final tree are a dual witness, so every solve comes with a certified
optimality gap.  Uniform measures of equal size are warm-started from an
optimal assignment.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Any, Callable, Hashable, Mapping, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment, linprog

from .config import TOL
from .errors import BadDistribution, InfeasibleWitness


@dataclass
class DiscreteDistribution:
    points: list[Any]
    weights: np.ndarray

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.ndim != 1 or len(self.points) != self.weights.size:
            raise BadDistribution("one weight per point required")
        if self.weights.size == 0:
            raise BadDistribution("empty distribution")
        if np.any(self.weights < 0) or not np.all(np.isfinite(self.weights)):
            raise BadDistribution("weights must be finite and >= 0")
        if abs(self.weights.sum() - 1.0) > TOL.weight_sum:
            raise BadDistribution(f"weights sum to {self.weights.sum()!r}, not 1")

    @classmethod
    def uniform(cls, points: Sequence[Any]) -> "DiscreteDistribution":
        return cls(list(points), np.full(len(points), 1.0 / len(points)))

    @classmethod
    def dirac(cls, point: Any) -> "DiscreteDistribution":
        return cls([point], np.ones(1))

    def __len__(self) -> int:
        return len(self.points)


@dataclass
class Coupling:
    plan: np.ndarray
    u: np.ndarray  # row potentials
    v: np.ndarray  # column potentials
    gap: float  # primal value minus dual value of (u, v)
    dual_violation: float  # max(0, -min reduced cost)

    def marginal_error(self, a: np.ndarray, b: np.ndarray) -> float:
        return float(max(np.abs(self.plan.sum(1) - a).max(), np.abs(self.plan.sum(0) - b).max()))


@dataclass
class TransportSolution:
    value: float
    plan: np.ndarray
    u: np.ndarray
    v: np.ndarray
    basis: list[tuple[int, int]]
    pivots: int


# spanning-tree helpers ---------------------------------------------------


def _adjacency(basis, m, n):
    adj: list[list[tuple[int, int]]] = [[] for _ in range(m + n)]
    for k, (i, j) in enumerate(basis):
        adj[i].append((m + j, k))
        adj[m + j].append((i, k))
    return adj


def _potentials(basis, C, m, n):
    adj = _adjacency(basis, m, n)
    pot = np.full(m + n, np.nan)
    pot[0] = 0.0
    dq = deque([0])
    while dq:
        node = dq.popleft()
        for other, k in adj[node]:
            if np.isnan(pot[other]):
                i, j = basis[k]
                pot[other] = C[i, j] - pot[node]
                dq.append(other)
    if np.isnan(pot).any():
        raise RuntimeError("transport basis is not a spanning tree")
    return pot[:m], pot[m:], adj


def _tree_path(adj, src, dst):
    """Basis indices of the edges on the tree path src -> dst."""
    parent = {src: None}
    dq = deque([src])
    while dq:
        node = dq.popleft()
        if node == dst:
            break
        for other, k in adj[node]:
            if other not in parent:
                parent[other] = (node, k)
                dq.append(other)
    path = []
    node = dst
    while parent[node] is not None:
        node, k = parent[node]
        path.append(k)
    return path[::-1]  # from src to dst


def _least_cost_start(a, b, C):
    """Matrix-minimum rule; returns m+n-1 basic cells forming a spanning tree."""
    m, n = C.shape
    supply, demand = a.copy(), b.copy()
    work = C.astype(float).copy()
    rows_left, cols_left = m, n
    basis, flows = [], []
    while True:
        i, j = np.unravel_index(int(np.argmin(work)), work.shape)
        x = min(supply[i], demand[j])
        basis.append((int(i), int(j)))
        flows.append(x)
        supply[i] -= x
        demand[j] -= x
        if rows_left == 1 and cols_left == 1:
            break
        if (supply[i] <= demand[j] and rows_left > 1) or cols_left == 1:
            work[i, :] = np.inf
            rows_left -= 1
            demand[j] = max(demand[j], 0.0)
        else:
            work[:, j] = np.inf
            cols_left -= 1
            supply[i] = max(supply[i], 0.0)
    return basis, np.array(flows)


def _flows_for_basis(basis, a, b, m, n):
    """Solve the tree equations by leaf elimination."""
    adj = _adjacency(basis, m, n)
    rem = np.concatenate([a, b]).astype(float)
    deg = np.array([len(x) for x in adj])
    flows = np.zeros(len(basis))
    done = np.zeros(len(basis), dtype=bool)
    leaves = deque(i for i in range(m + n) if deg[i] == 1)
    while leaves:
        node = leaves.popleft()
        if deg[node] != 1:
            continue
        for other, k in adj[node]:
            if not done[k]:
                break
        flows[k] = rem[node]
        done[k] = True
        rem[other] -= flows[k]
        rem[node] = 0.0
        deg[node] -= 1
        deg[other] -= 1
        if deg[other] == 1:
            leaves.append(other)
    return flows


def _assignment_start(C):
    n = C.shape[0]
    _, perm = linear_sum_assignment(C)
    basis = [(i, int(perm[i])) for i in range(n)]
    basis += [(i + 1, int(perm[i])) for i in range(n - 1)]
    flows = np.concatenate([np.full(n, 1.0 / n), np.zeros(n - 1)])
    return basis, flows


def solve_transport(
    a: np.ndarray,
    b: np.ndarray,
    C: np.ndarray,
    basis: list[tuple[int, int]] | None = None,
    max_pivots: int | None = None,
) -> TransportSolution:
    """Exact min-cost transport between weight vectors ``a`` and ``b``.

    ``basis`` warm-starts the simplex from a previous optimal tree for the
    same marginals (costs may differ).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    C = np.asarray(C, dtype=float)
    m, n = C.shape
    if basis is not None:
        basis = list(basis)
        flows = _flows_for_basis(basis, a, b, m, n)
        if flows.min() < -1e-12:
            basis = None
    if basis is None:
        if m == n and np.allclose(a, 1.0 / m, atol=1e-15) and np.allclose(b, 1.0 / n, atol=1e-15):
            basis, flows = _assignment_start(C)
        else:
            basis, flows = _least_cost_start(a, b, C)

    tol = 1e-12 * max(1.0, float(np.abs(C).max()))
    max_pivots = max_pivots or 50 * (m + n) * max(m, n) + 1000
    degenerate_run = 0
    pivots = 0
    while True:
        u, v, adj = _potentials(basis, C, m, n)
        R = C - u[:, None] - v[None, :]
        if degenerate_run > 2 * (m + n):
            # Bland's rule: lowest-index improving cell, to break cycling.
            neg = np.flatnonzero(R.ravel() < -tol)
            if neg.size == 0:
                break
            ie, je = divmod(int(neg[0]), n)
        else:
            flat = int(np.argmin(R))
            ie, je = divmod(flat, n)
            if R[ie, je] >= -tol:
                break
        pivots += 1
        if pivots > max_pivots:
            raise RuntimeError("transport simplex did not converge")
        path = _tree_path(adj, m + je, ie)  # col je -> row ie, alternating -,+,-,...
        minus = path[0::2]
        theta = min(flows[k] for k in minus)
        leave = min((k for k in minus if flows[k] <= theta), key=lambda k: basis[k])
        degenerate_run = degenerate_run + 1 if theta <= 0 else 0
        for pos, k in enumerate(path):
            flows[k] += -theta if pos % 2 == 0 else theta
        flows[leave] = theta
        basis[leave] = (ie, je)

    plan = np.zeros((m, n))
    for (i, j), x in zip(basis, flows):
        plan[i, j] += max(x, 0.0)
    value = float(np.sum(plan * C))
    return TransportSolution(value, plan, u, v, basis, pivots)


def _certify(sol: TransportSolution, a, b, C) -> Coupling:
    dual = float(a @ sol.u + b @ sol.v)
    R = C - sol.u[:, None] - sol.v[None, :]
    return Coupling(sol.plan, sol.u, sol.v, sol.value - dual, float(max(0.0, -R.min())))


def _check_cost(P, Q, cost) -> np.ndarray:
    C = np.asarray(cost, dtype=float)
    if C.shape != (len(P), len(Q)):
        raise ValueError(f"cost shape {C.shape} does not match supports ({len(P)}, {len(Q)})")
    if not np.all(np.isfinite(C)) or C.min() < 0 or C.max() > 1 + 1e-12:
        raise ValueError("cost entries must lie in [0, 1]")
    return C


def wasserstein(
    P: DiscreteDistribution, Q: DiscreteDistribution, cost: np.ndarray
) -> tuple[float, Coupling]:
    """Optimal transport cost between ``P`` and ``Q`` and an optimal coupling."""
    for D in (P, Q):
        if not isinstance(D, DiscreteDistribution):
            raise BadDistribution("expected a DiscreteDistribution")
    C = _check_cost(P, Q, cost)
    sol = solve_transport(P.weights, Q.weights, C)
    cp = _certify(sol, P.weights, Q.weights, C)
    if abs(cp.gap) > TOL.lp_gap or cp.dual_violation > TOL.lp_gap:
        raise RuntimeError(f"transport solution failed certification (gap {cp.gap:.3g})")
    return sol.value, cp


def _h_lookup(h, point):
    return float(h(point) if callable(h) else h[point])


def dual_lower_bound(
    P: DiscreteDistribution,
    Q: DiscreteDistribution,
    cost: np.ndarray,
    h: Mapping[Hashable, float] | Callable[[Any], float],
    tol: float = 1e-12,
) -> float:
    """Value of the test function ``h`` in the sup-form of the lifting.

    ``h`` must map into [0, 1] and satisfy |h(p) - h(q)| <= cost(p, q) on all
    support pairs; any such ``h`` bounds the Wasserstein distance from below.
    """
    C = _check_cost(P, Q, cost)
    hp = np.array([_h_lookup(h, p) for p in P.points])
    hq = np.array([_h_lookup(h, q) for q in Q.points])
    if hp.min() < -tol or hq.min() < -tol or hp.max() > 1 + tol or hq.max() > 1 + tol:
        raise InfeasibleWitness("h must take values in [0, 1]")
    slack = C - np.abs(hp[:, None] - hq[None, :])
    if slack.min() < -tol:
        i, j = np.unravel_index(int(np.argmin(slack)), slack.shape)
        raise InfeasibleWitness(
            f"|h(p{i}) - h(q{j})| = {abs(hp[i] - hq[j]):.6g} exceeds cost {C[i, j]:.6g}"
        )
    return float(P.weights @ hp - Q.weights @ hq)


def _handles(P, Q):
    try:
        pts = list(dict.fromkeys(list(P.points) + list(Q.points)))
        return pts, {p: k for k, p in enumerate(pts)}
    except TypeError:
        return None, None


def optimal_dual_witness(
    P: DiscreteDistribution, Q: DiscreteDistribution, cost: np.ndarray
) -> tuple[float, dict]:
    """Best test function h for the sup-form, found by a generic LP solver.

    Independent of :func:`wasserstein`; the two must agree on metric costs.
    Returns (value, h) with h keyed by point handle (or by ("P", i) /
    ("Q", j) when handles are unhashable).
    """
    C = _check_cost(P, Q, cost)
    m, n = C.shape
    pts, index = _handles(P, Q)
    if pts is None:
        pts = [("P", i) for i in range(m)] + [("Q", j) for j in range(n)]
        ip = list(range(m))
        iq = list(range(m, m + n))
    else:
        ip = [index[p] for p in P.points]
        iq = [index[q] for q in Q.points]
    nv = len(pts)
    obj = np.zeros(nv)
    np.add.at(obj, ip, -P.weights)
    np.add.at(obj, iq, Q.weights)
    rows, rhs = [], []
    for i in range(m):
        for j in range(n):
            if ip[i] == iq[j]:
                continue
            r = np.zeros(nv)
            r[ip[i]], r[iq[j]] = 1.0, -1.0
            rows += [r, -r]
            rhs += [C[i, j], C[i, j]]
    res = linprog(
        obj,
        A_ub=np.array(rows) if rows else None,
        b_ub=np.array(rhs) if rhs else None,
        bounds=[(0.0, 1.0)] * nv,
        method="highs",
    )
    if not res.success:
        raise RuntimeError(f"dual LP failed: {res.message}")
    h = {p: float(np.clip(x, 0.0, 1.0)) for p, x in zip(pts, res.x)}
    return float(-res.fun), h


def greedy_clusters(
    samples: Sequence[Any],
    dist: Callable[[Any, Any], float],
    eps: float,
    max_clusters: int | None = None,
) -> tuple[list[int], np.ndarray, float]:
    """Greedy eps-net: each sample joins the first representative within eps/2.

    Cluster diameters are therefore <= eps.  Once ``max_clusters``
    representatives exist, unmatched samples form a residual set (label -1).
    Returns (representative indices, labels, residual mass).
    """
    if not eps > 0:
        raise ValueError("eps must be > 0")
    reps: list[int] = []
    labels = np.empty(len(samples), dtype=int)
    for n, x in enumerate(samples):
        for c, r in enumerate(reps):
            if dist(samples[r], x) <= eps / 2:
                labels[n] = c
                break
        else:
            if max_clusters is not None and len(reps) >= max_clusters:
                labels[n] = -1
            else:
                labels[n] = len(reps)
                reps.append(n)
    residual = float(np.mean(labels == -1)) if len(samples) else 0.0
    return reps, labels, residual


def cluster_measure(
    samples: Sequence[Any],
    dist: Callable[[Any, Any], float],
    eps: float,
    max_clusters: int | None = None,
) -> DiscreteDistribution:
    """Discretize the empirical measure of ``samples`` onto cluster representatives.

    With residual mass <= eps the transport distance to the empirical
    measure is at most 2 * eps.
    """
    reps, labels, residual = greedy_clusters(samples, dist, eps, max_clusters)
    counts = np.bincount(labels[labels >= 0], minlength=len(reps)).astype(float)
    points = [samples[r] for r in reps]
    if residual > 0:
        points.append(samples[int(np.flatnonzero(labels == -1)[0])])
        counts = np.append(counts, float(np.sum(labels == -1)))
    return DiscreteDistribution(points, counts / counts.sum())
