"""Slow reference computations that share no code with the package."""

from itertools import permutations

import numpy as np
from scipy.optimize import linprog


def transport_bruteforce(C: np.ndarray) -> float:
    """Uniform n x n transport by enumerating all n! permutations.

    Birkhoff: the uniform transport polytope is the convex hull of
    permutation matrices, so the optimum sits at one of them.
    """
    n = C.shape[0]
    idx = np.arange(n)
    return min(C[idx, list(p)].mean() for p in permutations(range(n)))


def transport_lp(a, b, C) -> float:
    """Primal transport LP solved by a generic solver."""
    m, n = C.shape
    A_eq = np.zeros((m + n, m * n))
    for i in range(m):
        A_eq[i, i * n:(i + 1) * n] = 1.0
    for j in range(n):
        A_eq[m + j, j::n] = 1.0
    res = linprog(C.ravel(), A_eq=A_eq, b_eq=np.concatenate([a, b]), bounds=(0, None),
                  method="highs")
    assert res.success
    return float(res.fun)


def hausdorff_pairs(A, B, d) -> float:
    """Double loop over both point lists."""
    fwd = max(min(d(x, y) for y in B) for x in A)
    bwd = max(min(d(x, y) for x in A) for y in B)
    return max(fwd, bwd)


def scalar_graph_dense(times, v0, v1, horizon, step=1e-3):
    """Dense sample of a piecewise-linear graph with both sides of every jump."""
    times = list(times) + [horizon]
    pts = []
    for i in range(len(v0)):
        a, b = times[i], times[i + 1]
        ts = np.linspace(a, b, max(2, int(round((b - a) / step)) + 1))
        vs = v0[i] + (v1[i] - v0[i]) * (ts - a) / (b - a)
        pts.append(np.column_stack([ts, vs]))
    return np.vstack(pts)


def scalar_j2_dense(f, g, step=1e-3) -> float:
    """J2 between two scalar traces by a dense brute-force Hausdorff distance."""
    P = scalar_graph_dense(f.times, f.v0, f.v1, f.horizon, step)
    Q = scalar_graph_dense(g.times, g.v0, g.v1, g.horizon, step)
    D = np.maximum(np.abs(P[:, None, 0] - Q[None, :, 0]), np.abs(P[:, None, 1] - Q[None, :, 1]))
    return float(min(1.0, max(D.min(1).max(), D.min(0).max())))


def cumulative_reward_riemann(trace, rewards: dict, T: float, n: int = 200_000) -> float:
    """Midpoint rule for the integral of the reward rate along a trace."""
    dt = T / n
    mids = (np.arange(n) + 0.5) * dt
    ends = np.cumsum([s.dwell for s in trace.segments])
    seg = np.searchsorted(ends, mids, side="right")
    r = np.array([rewards.get(s.state.state, 0.0) for s in trace.segments])
    return float(r[seg].sum() * dt)


def pingpong_by_hand(horizon: float):
    """Segments of the deterministic two-state alternation with unit dwells."""
    out, t, s = [], 0.0, "ping"
    while t < horizon:
        d = min(1.0, horizon - t)
        out.append((s, d))
        t += d
        s = "pong" if s == "ping" else "ping"
    return out
