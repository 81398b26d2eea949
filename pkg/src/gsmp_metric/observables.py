"""Reward and hitting-time observables, their expectations, and continuity checks."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import OutOfHorizon
from .model import GeneralizedState, GsmpModel
from .traces import TimedTrace, sample_traces, stream_rng


class _NotHit:
    """Sentinel for a trace that never reaches the target within its horizon."""

    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __repr__(self) -> str:
        return "NotHit"

    def __bool__(self) -> bool:
        return False


NotHit = _NotHit()


@dataclass(frozen=True)
class RewardSpec:
    """Reward rate per state (units per unit time)."""

    rates: Mapping[str, float]

    def __post_init__(self) -> None:
        for s, r in self.rates.items():
            if not (r >= 0 and math.isfinite(r)):
                raise ValueError(f"reward rate of {s!r} must be finite and >= 0")

    def rate(self, state: str) -> float:
        return float(self.rates.get(state, 0.0))

    def validate(self, model: GsmpModel) -> list[str]:
        """States with different rewards must differ in some proposition."""
        out = [f"unknown state {s!r}" for s in self.rates if s not in model.states]
        ids = list(model.states)
        for i, a in enumerate(ids):
            for b in ids[i + 1:]:
                if self.rate(a) != self.rate(b) and model.props(a) == model.props(b):
                    out.append(f"states {a!r} and {b!r} have equal propositions but rewards "
                               f"{self.rate(a)} != {self.rate(b)}")
        return out

    @classmethod
    def from_json(cls, obj: Mapping) -> "RewardSpec":
        return cls({str(k): float(v) for k, v in obj.items()})


def hitting_time(trace: TimedTrace, p: str):
    """Start time of the first segment whose state satisfies ``p``, else NotHit."""
    for t, seg in zip(trace.starts.tolist(), trace.segments):
        if p in trace.model.props(seg.state.state):
            return float(t)
    return NotHit


def _curve(trace: TimedTrace, rewards: RewardSpec):
    """Breakpoints, cumulative values and slopes of t -> CumR(t)."""
    starts = trace.starts
    r = np.array([rewards.rate(s.state.state) for s in trace.segments])
    dw = np.array([s.dwell for s in trace.segments])
    cum = np.concatenate([[0.0], np.cumsum(r * dw)])
    return starts, cum, r


def cumulative_reward(trace: TimedTrace, rewards: RewardSpec, T: float) -> float:
    """Exact integral of the piecewise-constant reward rate over [0, T]."""
    if T < 0 or T > trace.horizon + 1e-12:
        raise OutOfHorizon(f"T={T} outside [0, {trace.horizon}]")
    starts, cum, r = _curve(trace, rewards)
    i = max(int(np.searchsorted(starts, T, side="right")) - 1, 0)
    return float(cum[i] + r[i] * (T - starts[i]))


def average_reward(trace: TimedTrace, rewards: RewardSpec, T: float) -> float:
    if T <= 0:
        raise ValueError("average reward needs T > 0")
    return cumulative_reward(trace, rewards, T) / T


def time_to_reward(trace: TimedTrace, rewards: RewardSpec, v: float) -> float:
    """sup { T : CumR(T) < v }, capped at the horizon."""
    if v <= 0:
        return 0.0
    starts, cum, r = _curve(trace, rewards)
    for i in range(len(starts)):
        if cum[i + 1] >= v and r[i] > 0:
            return float(starts[i] + (v - cum[i]) / r[i])
    return trace.horizon


def time_average_below(trace: TimedTrace, rewards: RewardSpec, v: float) -> float:
    """sup { T in (0, horizon] : CumR(T) / T < v }, or 0 if the set is empty.

    On a segment CumR(T) - v*T is linear, so the last sign change is found
    exactly segment by segment.
    """
    starts, cum, r = _curve(trace, rewards)
    ends = np.append(starts[1:], trace.horizon)
    best = 0.0
    for i in range(len(starts)):
        a, b = starts[i], ends[i]
        ga = cum[i] - v * a
        gb = cum[i + 1] - v * b
        if gb < 0:
            best = b
        elif ga < 0:
            best = a - ga / (r[i] - v)  # slope r - v > 0 here
    return float(best)


# observables as callables on traces ----------------------------------------


@dataclass(frozen=True)
class Observable:
    """A named per-trace functional; values may be NotHit for hitting times."""

    kind: str  # hit | cumr | avg | time_to_reward | avg_below
    prop: str | None = None
    rewards: RewardSpec | None = None
    T: float | None = None
    v: float | None = None

    def __post_init__(self) -> None:
        need = {
            "hit": ("prop",),
            "cumr": ("rewards", "T"),
            "avg": ("rewards", "T"),
            "time_to_reward": ("rewards", "v"),
            "avg_below": ("rewards", "v"),
        }
        if self.kind not in need:
            raise ValueError(f"unknown observable kind {self.kind!r}")
        missing = [f for f in need[self.kind] if getattr(self, f) is None]
        if missing:
            raise ValueError(f"{self.kind} observable needs {', '.join(missing)}")

    def __call__(self, trace: TimedTrace):
        k = self.kind
        if k == "hit":
            return hitting_time(trace, self.prop)
        if k == "cumr":
            return cumulative_reward(trace, self.rewards, self.T)
        if k == "avg":
            return average_reward(trace, self.rewards, self.T)
        if k == "time_to_reward":
            return time_to_reward(trace, self.rewards, self.v)
        return time_average_below(trace, self.rewards, self.v)

    @property
    def name(self) -> str:
        arg = self.prop if self.kind == "hit" else (self.T if self.T is not None else self.v)
        return f"{self.kind}({arg})"

    @classmethod
    def from_json(cls, obj: Mapping) -> "Observable":
        rw = obj.get("rewards")
        return cls(
            kind=str(obj["kind"]),
            prop=obj.get("prop"),
            rewards=RewardSpec.from_json(rw) if rw is not None else None,
            T=float(obj["T"]) if "T" in obj else None,
            v=float(obj["v"]) if "v" in obj else None,
        )

    def horizon_needed(self, default: float) -> float:
        return self.T if self.kind in ("cumr", "avg") and self.T is not None else default


@dataclass
class Expectation:
    mean: float
    ci: tuple[float, float]
    miss_fraction: float
    n: int

    @property
    def half_width(self) -> float:
        return 0.5 * (self.ci[1] - self.ci[0])

    def to_json(self) -> dict:
        return {"mean": self.mean, "ci": list(self.ci), "miss_fraction": self.miss_fraction,
                "n": self.n}


def bootstrap_ci(x: np.ndarray, reps: int, rng: np.random.Generator, level: float = 0.95):
    if x.size == 0:
        return (math.nan, math.nan)
    if x.size == 1 or np.ptp(x) == 0:
        return (float(x[0]), float(x[0]))
    idx = rng.integers(0, x.size, size=(reps, x.size))
    means = x[idx].mean(axis=1)
    lo, hi = np.percentile(means, [50 * (1 - level), 50 * (1 + level)])
    return (float(lo), float(hi))


def expectation(values: Sequence, seed: int = 0, reps: int = 400) -> Expectation:
    """Mean over hit values, with the NotHit mass reported separately."""
    hits = np.array([v for v in values if v is not NotHit], dtype=float)
    miss = 1.0 - hits.size / len(values) if values else 0.0
    mean = float(hits.mean()) if hits.size else math.nan
    return Expectation(mean, bootstrap_ci(hits, reps, stream_rng(seed, 9)), miss, len(values))


def expected_observable(
    model: GsmpModel,
    gs: GeneralizedState,
    obs: Callable[[TimedTrace], object],
    N: int = 200,
    T: float = 10.0,
    seed: int = 0,
    jobs: int = 1,
) -> Expectation:
    if N < 1:
        raise ValueError("N must be >= 1")
    traces = sample_traces(model, gs, N, T, seed, jobs=jobs, stream=(0,))
    return expectation([obs(tr) for tr in traces], seed)


# continuity harness -------------------------------------------------------


@dataclass
class ContinuityRow:
    pair: str
    eps: float
    depth_term: float
    sampling_term: float
    grid_term: float
    horizon_term: float
    observable: str
    delta: float
    tolerance: float
    bound: float
    status: str  # pass | fail | uninformative

    FIELDS = ("pair", "eps", "depth_term", "sampling_term", "grid_term", "horizon_term",
              "observable", "delta", "tolerance", "bound", "status")


def continuity_report(
    model: GsmpModel,
    pairs: Sequence[tuple[str, GeneralizedState, GeneralizedState]],
    observables: Sequence[Observable],
    estimate: Callable[[GeneralizedState, GeneralizedState], object],
    N: int = 200,
    T: float = 10.0,
    seed: int = 0,
    jobs: int = 1,
) -> list[ContinuityRow]:
    """Compare observable differences with the estimated metric.

    ``estimate(x, y)`` returns a MetricEstimate.  A 1-Lipschitz trace
    functional changes in expectation by at most W(J(m)) = eps / k, which
    is 2 * eps at k = 1/2.  A row passes when the difference of
    expectations is at most eps / k plus the two confidence half-widths
    and the difference of miss fractions.  Pairs at eps = 1 carry no
    information and are reported as uninformative.
    """
    rows = []
    for name, x, y in pairs:
        est = estimate(x, y)
        b = est.budget
        for obs in observables:
            h = obs.horizon_needed(T)
            ex = expected_observable(model, x, obs, N, max(h, T), seed, jobs)
            ey = expected_observable(model, y, obs, N, max(h, T), seed, jobs)
            if math.isnan(ex.mean) or math.isnan(ey.mean):
                delta, tol = math.nan, math.nan
            else:
                delta = abs(ex.mean - ey.mean)
                tol = ex.half_width + ey.half_width + abs(ex.miss_fraction - ey.miss_fraction)
            bound = est.value / est.params["k"] + tol
            if est.value >= 1.0 or math.isnan(delta):
                status = "uninformative"
            else:
                status = "pass" if delta <= bound else "fail"
            rows.append(ContinuityRow(name, est.value, b.depth_term, b.sampling_term, b.grid_term,
                                      b.horizon_term, obs.name, delta, tol, bound, status))
    return rows


def rows_to_csv(rows: Sequence[ContinuityRow], header: Sequence[str] = ()) -> str:
    buf = io.StringIO()
    for line in header:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ContinuityRow.FIELDS)
    for r in rows:
        w.writerow([_fmt(getattr(r, f)) for f in ContinuityRow.FIELDS])
    return buf.getvalue()


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)
