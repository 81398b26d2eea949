"""Depth-bounded iteration of m -> k * W(J(m)) on generalized states.

Iterates start from the proposition metric (0 on equal propositions, 1
otherwise) and increase towards the fixed point.  Each level samples traces
from both states with common random numbers, builds the trace-distance
matrix and solves the transport problem exactly.

Cost control.  The transport problem is solved lazily: every entry starts
at a cheap lower bound (the proposition-level trace distance, computed
exactly on segment timelines), and only entries in the support of the
current optimal plan are refined by recursion.  Recursion below ``refine``
levels is replaced by a bracket derived from non-expansiveness of the
iteration: m_1 <= m_n <= m_1 + k^2 + ... + k^n.  Every value is therefore
returned as a bracket [lo, hi]; the reported estimate is its midpoint and
the half-width is charged to the grid term of the error budget.

Inner states are stored as (segment start, offset).  With common random
numbers the traces of a state evolved by ``o`` are the traces of the
segment start shifted by ``o``, so one batch of inner traces serves every
point of a segment; offsets are rounded down to the memo quantum.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from .config import RunConfig
from .errors import NotInLattice, WorkLimitExceeded
from .j2 import (
    GraphPointSet,
    PropIndex,
    _directed,
    nearest_order,
    nearest_same,
    timeline,
    timeline_j2,
    trace_graph,
)
from .model import GeneralizedState, GsmpModel, structural_classes, time_to_first_expiry
from .traces import TimedTrace, sample_trace, sample_traces, stream_rng
from .transport import solve_transport

TOP, INNER, BOOT = 0, 1, 7


def base_metric(gs1: GeneralizedState, gs2: GeneralizedState, model: GsmpModel) -> float:
    """The least element of the metric lattice: 1 iff the propositions differ."""
    return 0.0 if model.props(gs1.state) == model.props(gs2.state) else 1.0


def convergence_bound(k: float, n: int) -> float:
    """Distance between the depth-n iterate and the fixed point is at most this."""
    if not 0 < k < 1:
        raise ValueError("k must lie in (0, 1)")
    return k ** (n + 1) / (1.0 - k)


def _tail(k: float, n: int) -> float:
    """k^2 + ... + k^n, the largest possible growth of an iterate past level 1."""
    return sum(k**j for j in range(2, n + 1))


@dataclass
class ErrorBudget:
    depth_term: float
    sampling_term: float = 0.0
    grid_term: float = 0.0
    horizon_term: float = 0.0

    @property
    def total(self) -> float:
        return self.depth_term + self.sampling_term + self.grid_term + self.horizon_term

    def to_json(self) -> dict:
        return {**asdict(self), "total": self.total}


@dataclass
class MetricEstimate:
    value: float
    budget: ErrorBudget
    params: dict
    lower: float
    upper: float
    work: int = 0

    def to_json(self) -> dict:
        return {
            "value": self.value,
            "lower": self.lower,
            "upper": self.upper,
            "budget": self.budget.to_json(),
            "params": self.params,
            "work": self.work,
        }


@dataclass
class MetricCache:
    """Memo tables shared by all estimates of one engine."""

    values: dict = field(default_factory=dict)
    traces: dict = field(default_factory=dict)
    views: dict = field(default_factory=dict)
    graphs: dict = field(default_factory=dict)
    hits: int = 0
    misses: int = 0


def _j0_rows(args):
    rows, cols, until = args
    return [[timeline_j2(a, b, until) for b in cols] for a in rows]


class MetricEngine:
    """Evaluates iterates of the metric functional for one model and config."""

    def __init__(self, model: GsmpModel, cfg: RunConfig | None = None, quotient: bool = True):
        self.model = model
        self.cfg = cfg or RunConfig()
        self.k = self.cfg.k
        self.q = self.cfg.q
        self.T = self.cfg.horizon
        self.H = self.cfg.horizon + self.cfg.lookahead
        self.classes = structural_classes(model) if quotient else {s: s for s in model.states}
        self.ids = PropIndex()
        self.cache = MetricCache()
        self.work = 0
        self.inner_spread: list[float] = []
        self.refined_levels = False

    # states ---------------------------------------------------------------

    def canonical(self, gs: GeneralizedState) -> GeneralizedState:
        rep = self.classes[gs.state]
        if rep == gs.state:
            return gs
        clocks = gs.clock_map(self.model)
        return GeneralizedState(rep, tuple(clocks[e] for e in self.model.events(rep)))

    def _node(self, trace: TimedTrace, seg: int, off: float) -> tuple:
        """Memo key (canonical segment start, offset index) of a trace point."""
        z = self.canonical(trace.segments[seg].state)
        tau = trace.segments[seg].dwell if seg < len(trace.segments) - 1 else None
        if tau is None:
            tau, _ = time_to_first_expiry(z, self.model)
        idx = int(math.floor(off / self.q))
        while idx > 0 and idx * self.q >= tau:
            idx -= 1
        return (z, idx)

    def _props(self, node: tuple) -> frozenset[str]:
        return self.model.props(node[0].state)

    def _tick(self, n: int = 1) -> None:
        self.work += n
        if self.work > self.cfg.work_limit:
            raise WorkLimitExceeded(
                f"work limit {self.cfg.work_limit} exceeded; lower depth, samples or refine"
            )

    # traces ---------------------------------------------------------------

    def _inner_traces(self, z: GeneralizedState) -> list[TimedTrace]:
        got = self.cache.traces.get(z)
        if got is None:
            tau, _ = time_to_first_expiry(z, self.model)
            got = [
                sample_trace(self.model, z, self.H + tau, stream_rng(self.cfg.seed, INNER, j))
                for j in range(self.cfg.inner_samples)
            ]
            self.cache.traces[z] = got
        return got

    def _views(self, node: tuple) -> list[tuple[TimedTrace, float]]:
        z, idx = node
        return [(tr, idx * self.q) for tr in self._inner_traces(z)]

    def _timelines(self, node: tuple) -> list:
        got = self.cache.views.get(node)
        if got is None:
            got = [timeline(tr, self.ids, sh, self.H) for tr, sh in self._views(node)]
            self.cache.views[node] = got
        return got

    def _graph(self, view: tuple[TimedTrace, float]):
        tr, sh = view
        key = (id(tr), sh)  # the trace lists in the cache keep ids alive
        got = self.cache.graphs.get(key)
        if got is None:
            tg = trace_graph(tr, self.cfg.grid, self.H, shift=sh)
            got = (tg, self.ids.of_graph(tg))
            self.cache.graphs[key] = got
        return got

    # matrices -------------------------------------------------------------

    def _j0_matrix(self, TA: Sequence, TB: Sequence, jobs: int = 1) -> np.ndarray:
        self._tick(len(TA) * len(TB) // 64 + 1)
        if jobs > 1 and len(TA) >= 2 * jobs:
            chunks = [TA[i::jobs] for i in range(jobs)]
            with ProcessPoolExecutor(jobs) as pool:
                parts = list(pool.map(_j0_rows, [(c, TB, self.T) for c in chunks]))
            out = np.empty((len(TA), len(TB)))
            for i in range(jobs):
                out[i::jobs] = np.array(parts[i])
            return out
        return np.array(_j0_rows((TA, TB, self.T)))

    def _j0_pair(self, a: tuple, b: tuple) -> np.ndarray:
        got = self.cache.values.get(("j0", a, b))
        if got is None:
            other = self.cache.values.get(("j0", b, a))
            if other is not None:
                return other.T
            got = self._j0_matrix(self._timelines(a), self._timelines(b))
            self.cache.values[("j0", a, b)] = got
        return got

    def _level1(self, a: tuple, b: tuple) -> float:
        key = ("m1",) + tuple(sorted((a, b), key=repr))
        got = self.cache.values.get(key)
        if got is not None:
            self.cache.hits += 1
            return got
        self.cache.misses += 1
        self._tick()
        L = self._j0_pair(a, b)
        n = L.shape[0]
        w = np.full(n, 1.0 / n)
        val = self.k * solve_transport(w, w, L).value
        if len(self.inner_spread) < 8 and self.cfg.inner_bootstrap > 0:
            self.inner_spread.append(self._bootstrap(L, self.cfg.inner_bootstrap, len(self.inner_spread) + 1))
        self.cache.values[key] = val
        return val

    def bracket(self, a: tuple, b: tuple, level: int, depth: int) -> tuple[float, float]:
        """Bounds on the level-``level`` iterate between two inner nodes."""
        if self._props(a) != self._props(b):
            return 1.0, 1.0
        if level == 0 or a == b:
            return 0.0, 0.0
        m1 = self._level1(a, b)
        if level == 1:
            return m1, m1
        if depth >= self.cfg.refine:
            return m1, min(self.k, m1 + _tail(self.k, level))
        key = (level,) + tuple(sorted((a, b), key=repr))
        got = self.cache.values.get(key)
        if got is not None:
            self.cache.hits += 1
            return got
        self.cache.misses += 1
        self._tick()
        lo, hi, _, _ = self._transport(self._views(a), self._views(b), self._j0_pair(a, b), level, depth)
        lo, hi = max(lo, m1), min(hi, m1 + _tail(self.k, level))
        got = (lo, max(lo, hi))
        self.cache.values[key] = got
        return got

    def _transport(self, VA, VB, L0: np.ndarray, level: int, depth: int):
        """Lazily refined k * W(J(m_{level-1})) between two trace batches.

        ``L0`` holds the proposition-level trace distances, a lower bound on
        every entry.  Returns (lo, hi, midpoint cost matrix, plan).
        """
        L = L0.copy()
        na, nb = L.shape
        a, b = np.full(na, 1.0 / na), np.full(nb, 1.0 / nb)
        if level == 1:
            sol = solve_transport(a, b, L)
            return self.k * sol.value, self.k * sol.value, L, sol.plan
        U = np.minimum(1.0, np.maximum(L, self.k))
        done = U <= L
        if depth >= self.cfg.refine:
            done[:] = True
        else:
            self.refined_levels = True
        basis = None
        while True:
            sol = solve_transport(a, b, L, basis)
            need = np.argwhere((sol.plan > 1e-15) & ~done)
            if need.size == 0:
                break
            for i, j in need:
                lo, hi = self._j_bracket(VA[i], VB[j], level - 1, depth + 1)
                L[i, j] = max(L[i, j], lo)
                U[i, j] = max(L[i, j], min(U[i, j], hi))
                done[i, j] = True
            basis = sol.basis
        lo = self.k * sol.value
        hi = self.k * solve_transport(a, b, U, sol.basis).value
        return lo, hi, 0.5 * (L + U), sol.plan

    def _j_bracket(self, va, vb, level: int, depth: int) -> tuple[float, float]:
        """Bounds on J(m_level) between two trace views, on the sample grid."""
        self._tick()
        ga, la = self._graph(va)
        gb, lb = self._graph(vb)
        lo1, hi1 = self._directed(ga, la, gb, lb, level, depth)
        if lo1 >= 1.0:
            return 1.0, 1.0
        lo2, hi2 = self._directed(gb, lb, ga, la, level, depth)
        return min(1.0, max(lo1, lo2)), min(1.0, max(hi1, hi2))

    def _directed(self, A, la, B, lb, level: int, depth: int) -> tuple[float, float]:
        cap = min(self.k, self.k * (1 + _tail(self.k, level)))
        gap0 = nearest_same(A.times, la, B.times, lb)
        sup = A.times <= self.T + 1e-12
        if np.isinf(gap0[sup]).any():
            return 1.0, 1.0
        by_label = {lab: np.flatnonzero(lb == lab) for lab in np.unique(la)}
        run_lo = run_hi = 0.0
        for p in np.argsort(-np.where(sup, gap0, -1.0), kind="stable"):
            if not sup[p]:
                break
            if max(gap0[p], cap) <= run_lo:
                continue
            t = A.times[p]
            cand = by_label[la[p]]
            tc = B.times[cand]
            na = self._node(A.trace, int(A.seg[p]), float(A.off[p]))
            best_lo = best_hi = 1.0
            tried = 0
            for c in nearest_order(tc, t):
                gap = abs(tc[c] - t)
                if gap >= best_hi:
                    break
                if tried >= self.cfg.candidates:
                    best_lo = min(best_lo, gap)
                    break
                q = cand[c]
                nb = self._node(B.trace, int(B.seg[q]), float(B.off[q]))
                mlo, mhi = self.bracket(na, nb, level, depth)
                tried += 1
                best_hi = min(best_hi, max(gap, mhi))
                best_lo = min(best_lo, max(gap, mlo))
            run_lo = max(run_lo, best_lo)
            run_hi = max(run_hi, best_hi)
            if run_lo >= 1.0:
                break
        return run_lo, run_hi

    def _bootstrap(self, C: np.ndarray, reps: int, tag: int) -> float:
        """Half-width of a percentile bootstrap interval of k * W over resampled traces."""
        if reps <= 1:
            return 0.0
        rng = stream_rng(self.cfg.seed, BOOT, tag)
        na, nb = C.shape
        vals = []
        for _ in range(reps):
            wa = np.bincount(rng.integers(0, na, na), minlength=na) / na
            wb = np.bincount(rng.integers(0, nb, nb), minlength=nb) / nb
            ia, ib = np.flatnonzero(wa), np.flatnonzero(wb)
            vals.append(solve_transport(wa[ia], wb[ib], C[np.ix_(ia, ib)]).value)
        lo, hi = np.percentile(vals, [2.5, 97.5])
        return self.k * 0.5 * float(hi - lo)

    # top level ------------------------------------------------------------

    def params(self, depth: int) -> dict:
        c = self.cfg
        return {
            "k": c.k, "depth": depth, "samples": c.samples, "grid": c.grid,
            "horizon": c.horizon, "seed": c.seed, "inner_samples": c.inner_samples,
            "quantum": self.q, "refine": c.refine, "candidates": c.candidates,
            "lookahead": c.lookahead,
        }

    def estimate(self, gs1: GeneralizedState, gs2: GeneralizedState, depth: int | None = None,
                 horizon_check: bool | None = None) -> MetricEstimate:
        n = self.cfg.depth if depth is None else depth
        if n < 0:
            raise ValueError("depth must be >= 0")
        start_work = self.work
        budget = ErrorBudget(convergence_bound(self.k, n))
        x, y = sorted((self.canonical(gs1), self.canonical(gs2)), key=repr)
        if self.model.props(x.state) != self.model.props(y.state):
            return MetricEstimate(1.0, budget, self.params(n), 1.0, 1.0, 0)
        if n == 0 or x == y:
            return MetricEstimate(0.0, budget, self.params(n), 0.0, 0.0, 0)

        FA, FB = self._top_traces(x), self._top_traces(y)
        VA, VB = [(f, 0.0) for f in FA], [(g, 0.0) for g in FB]
        TA = [timeline(f, self.ids, 0.0, self.H) for f in FA]
        TB = [timeline(g, self.ids, 0.0, self.H) for g in FB]
        self.inner_spread = []
        self.refined_levels = False
        L0 = self._j0_matrix(TA, TB, self.cfg.jobs)
        lo, hi, C, _ = self._transport(VA, VB, L0, n, 0)
        if n >= 2:
            hi = max(lo, min(hi, _kw(L0, self.k) + _tail(self.k, n)))
        value = 0.5 * (lo + hi)

        budget.sampling_term = self._bootstrap(C, self.cfg.bootstrap, 0)
        if self.inner_spread:
            budget.sampling_term += self.k / (1 - self.k) * float(np.mean(self.inner_spread))
        if n >= 2:
            r = self.model.max_rate
            budget.grid_term = self.k / (1 - self.k) * (self.cfg.grid * (1 + r) + self.q)
        budget.grid_term += 0.5 * (hi - lo)
        check = self.cfg.horizon_check if horizon_check is None else horizon_check
        if check:
            twice = MetricEngine(
                self.model, replace(self.cfg, horizon=2 * self.cfg.horizon, bootstrap=0,
                                    inner_bootstrap=0, horizon_check=False),
                quotient=self.classes != {s: s for s in self.model.states},
            )
            budget.horizon_term = abs(twice.estimate(gs1, gs2, n).value - value)
            self._tick(twice.work)
        return MetricEstimate(value, budget, self.params(n), lo, hi, self.work - start_work)

    def _top_traces(self, x: GeneralizedState) -> list[TimedTrace]:
        key = ("top", x)
        got = self.cache.traces.get(key)
        if got is None:
            got = sample_traces(self.model, x, self.cfg.samples, self.H, self.cfg.seed,
                                jobs=self.cfg.jobs, stream=(TOP,))
            self.cache.traces[key] = got
        return got


def _kw(L0: np.ndarray, k: float) -> float:
    na, nb = L0.shape
    return k * solve_transport(np.full(na, 1.0 / na), np.full(nb, 1.0 / nb), L0).value


def metric_estimate(
    model: GsmpModel,
    gs1: GeneralizedState,
    gs2: GeneralizedState,
    k: float = 0.5,
    n: int = 3,
    N: int = 200,
    grid: float = 0.01,
    T: float = 10.0,
    seed: int = 0,
    **overrides,
) -> MetricEstimate:
    """Estimate the depth-n iterate between two generalized states."""
    cfg = RunConfig(k=k, depth=n, samples=N, grid=grid, horizon=T, seed=seed, **overrides)
    return MetricEngine(model, cfg).estimate(gs1, gs2, n)


# metric-bisimulation checking ---------------------------------------------


@dataclass
class BisimCheck:
    index: int
    candidate: float
    image: float  # k * W(J(candidate)) on the sampled traces
    tolerance: float
    passed: bool

    @property
    def margin(self) -> float:
        return self.candidate - self.image


def discrete_candidate(x: GeneralizedState, y: GeneralizedState) -> float:
    return 0.0 if x == y else 1.0


def shift_candidate(model: GsmpModel, tol: float = 1e-9) -> Callable:
    """min(1, t) between a state and its clock evolution by time t, 1 elsewhere."""

    def m(x: GeneralizedState, y: GeneralizedState) -> float:
        if x.state != y.state:
            return 1.0
        d = (np.asarray(x.clocks) - np.asarray(y.clocks)) / model.rates(x.state)
        if d.size == 0 or np.ptp(d) > tol:
            return 1.0
        return min(1.0, abs(float(d.mean())))

    return m


def check_metric_bisimulation(
    model: GsmpModel,
    candidate: Callable[[GeneralizedState, GeneralizedState], float],
    pairs: Iterable[tuple[GeneralizedState, GeneralizedState]],
    k: float = 0.5,
    N: int = 50,
    seed: int = 0,
    grid: float = 0.01,
    horizon: float = 5.0,
    lookahead: float = 1.0,
) -> list[BisimCheck]:
    """Check candidate(x, y) >= k * W(J(candidate)) on each pair.

    A candidate passing on all pairs reachable from a set of states is a
    post-fixed point and bounds the fixed-point metric from above there.
    The image is computed on sampled traces with common random numbers, so
    the comparison carries a grid tolerance.
    """
    pairs = list(pairs)
    for n, (x, y) in enumerate(pairs):
        if model.props(x.state) != model.props(y.state) and candidate(x, y) < 1.0:
            raise NotInLattice(f"pair {n}: propositions differ but candidate = {candidate(x, y)}")
    ids = PropIndex()
    H = horizon + lookahead
    tol = k * grid * (1 + model.max_rate)
    out = []
    for n, (x, y) in enumerate(pairs):
        cval = float(candidate(x, y))
        if model.props(x.state) != model.props(y.state):
            out.append(BisimCheck(n, cval, 1.0, 0.0, cval >= 1.0))
            continue
        FA = sample_traces(model, x, N, H, seed, stream=(TOP,))
        FB = sample_traces(model, y, N, H, seed, stream=(TOP,))
        TA = [timeline(f, ids, 0.0, H) for f in FA]
        TB = [timeline(g, ids, 0.0, H) for g in FB]
        L = np.array(_j0_rows((TA, TB, horizon)))
        done = np.zeros_like(L, dtype=bool)
        graphs: dict = {}

        def pts(f):
            if id(f) not in graphs:
                graphs[id(f)] = trace_graph(f, grid).point_set()
            return graphs[id(f)]

        w = np.full(N, 1.0 / N)
        basis = None
        while True:
            sol = solve_transport(w, w, L, basis)
            need = np.argwhere((sol.plan > 1e-15) & ~done)
            if need.size == 0:
                break
            for i, j in need:
                A, B = pts(FA[i]), pts(FB[j])
                sa = _upto(A, horizon)
                sb = _upto(B, horizon)
                e = max(_directed(sa, B, candidate, 0.0), _directed(sb, A, candidate, 0.0))
                L[i, j] = max(L[i, j], min(1.0, e))
                done[i, j] = True
            basis = sol.basis
        image = k * sol.value
        out.append(BisimCheck(n, cval, image, tol, cval >= image - tol))
    return out


def _upto(A: GraphPointSet, until: float) -> GraphPointSet:
    sel = np.flatnonzero(A.times <= until + 1e-12)
    return GraphPointSet(A.times[sel], [A.points[i] for i in sel])
