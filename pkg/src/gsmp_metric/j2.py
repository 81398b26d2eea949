"""Skorohod J2 distance as a Hausdorff distance between sampled graphs.

A graph sample holds the points (t, f(t)) on a regular time grid, at every
jump time, and the left limit just before every jump (stored at the jump
time).  Including left limits makes the sample set dense in the closure of
the graph, which has the same Hausdorff distance as the graph itself.
"""

from __future__ import annotations

import math
from bisect import bisect_left, bisect_right
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .model import GeneralizedState, _evolve
from .traces import ScalarTrace, TimedTrace

BaseMetric = Callable[[Any, Any], float]


def product_distance(p1: tuple[float, Any], p2: tuple[float, Any], base: BaseMetric) -> float:
    return max(abs(p1[0] - p2[0]), float(base(p1[1], p2[1])))


@dataclass
class GraphPointSet:
    times: np.ndarray
    points: Sequence[Any]

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=float)
        if len(self.points) != self.times.size or self.times.size == 0:
            raise ValueError("graph sample needs one point per time and at least one point")
        if np.any(np.diff(self.times) < 0):
            raise ValueError("graph sample times must be nondecreasing")

    def __len__(self) -> int:
        return self.times.size


def nearest_order(times: np.ndarray, t: float):
    """Indices of the sorted array ``times`` in order of increasing |times - t|."""
    r = int(np.searchsorted(times, t))
    l = r - 1
    n = times.size
    while l >= 0 or r < n:
        if r >= n or (l >= 0 and t - times[l] <= times[r] - t):
            yield l
            l -= 1
        else:
            yield r
            r += 1


def _directed(A: GraphPointSet, B: GraphPointSet, base: BaseMetric, floor: float) -> float:
    """sup_a inf_b d(a, b) with early termination.

    Candidates b are visited in order of time gap; the scan for ``a`` stops
    once the gap alone reaches the best match, and ``a`` is abandoned as soon
    as it matches within the running sup (it cannot raise it).
    """
    worst = floor
    tb = B.times
    for ta, pa in zip(A.times.tolist(), A.points):
        best = np.inf
        for j in nearest_order(tb, ta):
            gap = abs(tb[j] - ta)
            if gap >= best:
                break
            d = max(gap, float(base(pa, B.points[j])))
            if d < best:
                best = d
                if best <= worst:
                    break
        worst = max(worst, best)
    return worst


def hausdorff(A: GraphPointSet, B: GraphPointSet, base: BaseMetric) -> float:
    """Hausdorff distance under max(|t - t'|, base(x, x'))."""
    return max(_directed(A, B, base, 0.0), _directed(B, A, base, 0.0))


def hausdorff_bruteforce(A: GraphPointSet, B: GraphPointSet, base: BaseMetric) -> float:
    D = np.array(
        [[product_distance((ta, pa), (tb, pb), base) for tb, pb in zip(B.times, B.points)]
         for ta, pa in zip(A.times, A.points)]
    )
    return float(max(D.min(axis=1).max(), D.min(axis=0).max()))


# graph sampling ----------------------------------------------------------


def _grid(until: float, grid: float) -> np.ndarray:
    n = int(np.floor(until / grid + 1e-9))
    return np.arange(n + 1) * grid


def scalar_graph(f: ScalarTrace, grid: float, until: float | None = None) -> GraphPointSet:
    """Graph sample of a scalar trace on [0, until] (default: its horizon)."""
    until = f.horizon if until is None else min(until, f.horizon)
    ts = [_grid(until, grid)]
    vs = [f.value_at(ts[0])]
    inner = f.times[1:][f.times[1:] <= until]
    idx = np.searchsorted(f.times, inner) - 1
    ts += [inner, inner]
    vs += [f.v0[idx + 1], f.v1[idx]]  # post-jump values and left limits
    end = np.array([until])
    ts.append(end)
    i_end = np.searchsorted(f.times, until, side="left") - 1
    vs.append(np.array([f.v1[i_end] if until == f.horizon else f.value_at(until)]))
    t = np.concatenate(ts)
    v = np.concatenate(vs)
    order = np.lexsort((v, t))
    t, v = t[order], v[order]
    keep = np.ones(t.size, dtype=bool)
    keep[1:] = (np.diff(t) > 0) | (np.diff(v) != 0)
    return GraphPointSet(t[keep], v[keep])


@dataclass
class TraceGraph:
    """Graph sample of a timed trace with enough bookkeeping to rebuild states.

    Point ``p`` lies in segment ``seg[p]`` at elapsed time ``off[p]`` from the
    segment start; left limits are stored with the previous segment and an
    offset equal to its dwell.
    """

    trace: TimedTrace
    times: np.ndarray
    seg: np.ndarray
    off: np.ndarray

    def state(self, p: int) -> GeneralizedState:
        s = self.trace.segments[self.seg[p]]
        return s.state if s.frozen else _evolve(s.state, float(self.off[p]), self.trace.model)

    def states(self) -> list[GeneralizedState]:
        return [self.state(p) for p in range(self.times.size)]

    def props(self, p: int) -> frozenset[str]:
        return self.trace.props_at(int(self.seg[p]))

    def point_set(self) -> GraphPointSet:
        return GraphPointSet(self.times, self.states())


def trace_graph(f: TimedTrace, grid: float, until: float | None = None, shift: float = 0.0) -> TraceGraph:
    """Graph sample of ``f`` on [0, until] (default: whole horizon).

    With ``shift`` > 0 the sample is of the suffix t -> f(t + shift); segment
    indices and offsets still refer to ``f``'s own segments.
    """
    horizon = f.horizon - shift
    until = horizon if until is None else min(until, horizon)
    starts = f.starts
    g = _grid(until, grid)
    gseg = np.searchsorted(starts, g + shift, side="right") - 1
    jseg = np.flatnonzero((starts > shift) & (starts <= until + shift))
    jumps = starts[jseg] - shift
    dwell = np.array([s.dwell for s in f.segments])
    times = np.concatenate([g, jumps, jumps])
    seg = np.concatenate([gseg, jseg, jseg - 1])
    off = np.concatenate([g + shift - starts[gseg], np.zeros(jumps.size), dwell[jseg - 1]])
    if until == horizon and g[-1] < until:
        last = len(f.segments) - 1
        times = np.append(times, until)
        seg = np.append(seg, last)
        off = np.append(off, dwell[last])
    order = np.lexsort((off, seg, times))
    times, seg, off = times[order], seg[order], off[order]
    keep = np.ones(times.size, dtype=bool)
    keep[1:] = (np.diff(times) > 0) | (np.diff(seg) != 0)
    return TraceGraph(f, times[keep], seg[keep], off[keep])


# prop-level J ------------------------------------------------------------


class PropIndex:
    """Interns proposition sets of a model as small integers."""

    def __init__(self):
        self._ids: dict[frozenset[str], int] = {}

    def __call__(self, props: frozenset[str]) -> int:
        return self._ids.setdefault(props, len(self._ids))

    def of_graph(self, tg: TraceGraph) -> np.ndarray:
        model = tg.trace.model
        seg_ids = np.array([self(model.props(s.state.state)) for s in tg.trace.segments])
        return seg_ids[tg.seg]


def nearest_same(ta: np.ndarray, pa: np.ndarray, tb: np.ndarray, pb: np.ndarray) -> np.ndarray:
    """For every point of A, the time gap to the nearest B point with the same label."""
    out = np.full(ta.size, np.inf)
    for lab in np.unique(pa):
        sel = pa == lab
        cand = tb[pb == lab]
        if cand.size == 0:
            continue
        q = ta[sel]
        i = np.searchsorted(cand, q)
        lo = cand[np.clip(i - 1, 0, cand.size - 1)]
        hi = cand[np.clip(i, 0, cand.size - 1)]
        out[sel] = np.minimum(np.abs(q - lo), np.abs(hi - q))
    return out


def prop_gaps(ta, pa, tb, pb, until_a: float, until_b: float):
    """Directed per-point gaps both ways; sup ranges only over t <= until."""
    da = nearest_same(ta, pa, tb, pb)
    db = nearest_same(tb, pb, ta, pa)
    return np.where(ta <= until_a, da, 0.0), np.where(tb <= until_b, db, 0.0)


def prop_j2(ta, pa, tb, pb, until: float) -> float:
    """J2 under the discrete proposition metric, clamped at 1."""
    da, db = prop_gaps(ta, pa, tb, pb, until, until)
    return float(min(1.0, max(da.max(), db.max())))


class Timeline:
    """Maximal constant-proposition intervals of a trace, grouped by label."""

    __slots__ = ("t0", "t1", "lab", "groups")

    def __init__(self, t0: list[float], t1: list[float], lab: list[int]):
        self.t0, self.t1, self.lab = t0, t1, lab
        self.groups: dict[int, tuple[list[float], list[float]]] = {}
        for a, b, p in zip(t0, t1, lab):
            g = self.groups.setdefault(p, ([], []))
            g[0].append(a)
            g[1].append(b)


def timeline(f: TimedTrace, ids: "PropIndex", shift: float = 0.0, until: float | None = None) -> Timeline:
    """Maximal intervals of constant propositions of t -> f(t + shift) on [0, until].

    Consecutive segments with equal labels are merged.
    """
    horizon = f.horizon - shift
    until = horizon if until is None else min(until, horizon)
    starts = f.starts - shift
    ends = np.append(starts[1:], horizon)
    labs = [ids(f.model.props(s.state.state)) for s in f.segments]
    t0, t1, lab = [], [], []
    for a, b, p in zip(starts.tolist(), ends.tolist(), labs):
        if b <= 0 and not (a == b == 0):
            continue
        if a > until:
            break
        a, b = max(a, 0.0), min(b, until)
        if lab and lab[-1] == p:
            t1[-1] = b
        else:
            t0.append(a)
            t1.append(b)
            lab.append(p)
    return Timeline(t0, t1, lab)


def _gap_to_union(x: float, s0: list[float], s1: list[float]) -> float:
    """Distance from x to the union of the sorted disjoint intervals [s0, s1]."""
    i = bisect_right(s0, x) - 1
    best = math.inf
    if i >= 0:
        best = max(x - s1[i], 0.0)
    if i + 1 < len(s0):
        best = min(best, s0[i + 1] - x)
    return best


def timeline_directed(A: Timeline, B: Timeline, until: float) -> float:
    """sup over t <= until in A of the gap to the closure of same-label B time.

    The gap function is piecewise linear in t, so its sup over an A interval
    is attained at an endpoint or at the midpoint of a gap between B intervals.
    """
    worst = 0.0
    for a, b, p in zip(A.t0, A.t1, A.lab):
        if a > until:
            break
        b = min(b, until)
        g = B.groups.get(p)
        if g is None:
            return 1.0
        s0, s1 = g
        worst = max(worst, _gap_to_union(a, s0, s1), _gap_to_union(b, s0, s1))
        # gap between B intervals j-1 and j peaks at its midpoint
        j = max(1, bisect_left(s0, a))
        while j < len(s0) and s1[j - 1] <= b:
            mid = 0.5 * (s1[j - 1] + s0[j])
            if a <= mid <= b:
                worst = max(worst, 0.5 * (s0[j] - s1[j - 1]))
            j += 1
        if worst >= 1.0:
            return 1.0
    return worst


def timeline_j2(A, B, until: float) -> float:
    """Continuous-time J2 under the proposition metric, clamped at 1."""
    return min(1.0, max(timeline_directed(A, B, until), timeline_directed(B, A, until)))


def _intervals(f: TimedTrace, until: float):
    out = []
    for s, start in zip(f.segments, f.starts):
        if start > until:
            break
        out.append((float(start), float(min(start + s.dwell, until)), f.model.props(s.state.state)))
    return out


def prop_j2_exact(f: TimedTrace, g: TimedTrace, until: float | None = None) -> float:
    """Continuous-time J2 under the proposition metric, by direct enumeration.

    Propositions are constant on segments, so the directed distance from a
    segment to the closure of same-labelled segments of the other trace is
    maximized at segment ends or at midpoints of gaps.  Slow reference
    implementation used to cross-check the sampled and timeline versions.
    """
    until = min(f.horizon, g.horizon) if until is None else until

    def directed(A, B_all):
        worst = 0.0
        for a0, a1, props in A:
            S = [(b0, b1) for b0, b1, q in B_all if q == props]
            if not S:
                return 1.0
            cands = [a0, a1]
            for (x0, x1), (y0, y1) in zip(S, S[1:]):
                mid = 0.5 * (x1 + y0)
                if a0 < mid < a1:
                    cands.append(mid)
            for t in cands:
                d = min(max(b0 - t, t - b1, 0.0) for b0, b1 in S)
                worst = max(worst, d)
        return worst

    A = _intervals(f, until)
    B = _intervals(g, until)
    Af = _intervals(f, f.horizon)
    Bf = _intervals(g, g.horizon)
    return float(min(1.0, max(directed(A, Bf), directed(B, Af))))


# public distance ---------------------------------------------------------


def _scalar_base(x, y) -> float:
    return abs(float(x) - float(y))


def _scalar_j2(f: ScalarTrace, g: ScalarTrace, grid: float, until: float) -> float:
    A, B = scalar_graph(f, grid), scalar_graph(g, grid)

    def directed(P, Q):
        sel = P.times <= until + 1e-12
        pts = np.column_stack([P.times[sel], np.asarray(P.points)[sel]])
        tree = cKDTree(np.column_stack([Q.times, np.asarray(Q.points)]))
        d, _ = tree.query(pts, p=np.inf)
        return float(d.max())

    return max(directed(A, B), directed(B, A))


def prop_metric(x: GeneralizedState, y: GeneralizedState, model) -> float:
    return 0.0 if model.props(x.state) == model.props(y.state) else 1.0


def j2_distance(
    f: TimedTrace | ScalarTrace,
    g: TimedTrace | ScalarTrace,
    base: BaseMetric | None = None,
    grid: float = 0.01,
    until: float | None = None,
) -> tuple[float, float]:
    """Sampled J2 distance clamped at 1, and a bound on its grid error.

    The sup runs over graph points with t <= ``until`` (default: the shorter
    horizon); the inf may use the whole of the other trace, so a trace that
    was sampled further ahead is not penalized for the truncation of the
    other one.  With ``base=None`` scalar traces use |x - y| and timed traces
    the discrete proposition metric.
    """
    if not grid > 0:
        raise ValueError("grid must be > 0")
    until = min(f.horizon, g.horizon) if until is None else until
    if isinstance(f, ScalarTrace) != isinstance(g, ScalarTrace):
        raise TypeError("cannot compare a scalar trace with a timed trace")
    if isinstance(f, ScalarTrace):
        err = grid * (1.0 + max(f.max_slope, g.max_slope))
        if base is None:
            return min(1.0, _scalar_j2(f, g, grid, until)), err
        A, B = scalar_graph(f, grid), scalar_graph(g, grid)
    else:
        err = grid * (1.0 + max(f.model.max_rate, g.model.max_rate))
        tf, tg = trace_graph(f, grid), trace_graph(g, grid)
        if base is None:
            ids = PropIndex()
            return prop_j2(tf.times, ids.of_graph(tf), tg.times, ids.of_graph(tg), until), err
        A, B = tf.point_set(), tg.point_set()
    if f is g:
        return 0.0, err
    fwd = _directed(_restrict(A, until), B, base, 0.0)
    bwd = _directed(_restrict(B, until), A, base, 0.0)
    return min(1.0, max(fwd, bwd)), err


def _restrict(A: GraphPointSet, until: float) -> GraphPointSet:
    sel = np.flatnonzero(A.times <= until + 1e-12)
    return GraphPointSet(A.times[sel], [A.points[i] for i in sel])
