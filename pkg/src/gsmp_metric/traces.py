"""Timed traces of a GSMP, scalar test traces, and the delay operator."""

from __future__ import annotations

import json
from bisect import bisect_right
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .config import TOL
from .errors import ModelFormatError, OutOfHorizon, ZenoGuardExceeded
from .model import GeneralizedState, GsmpModel, _evolve, _step, time_to_first_expiry


def stream_rng(seed: int, *index: int) -> np.random.Generator:
    """Independent random stream identified by ``index`` under a master seed.

    The same (seed, index) pair is used for every starting state, which
    couples traces of different states through common random numbers.
    """
    return np.random.default_rng(np.random.SeedSequence(seed & (2**64 - 1), spawn_key=index))


@dataclass(frozen=True)
class Segment:
    state: GeneralizedState
    dwell: float
    frozen: bool = False  # constant prefix segments do not evolve their clocks


class TimedTrace:
    """Finitely varying cadlag path over generalized states, cut at ``horizon``."""

    def __init__(self, segments: Sequence[Segment], model: GsmpModel):
        if not segments:
            raise ValueError("a trace needs at least one segment")
        if any(not seg.dwell > 0 for seg in segments):
            raise ValueError("segment dwells must be > 0")
        self.segments = tuple(segments)
        self.model = model

    @cached_property
    def starts(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum([s.dwell for s in self.segments])[:-1]])

    @property
    def horizon(self) -> float:
        return float(self.starts[-1] + self.segments[-1].dwell)

    def state_at(self, seg: int, elapsed: float) -> GeneralizedState:
        s = self.segments[seg]
        if s.frozen:
            return s.state
        return _evolve(s.state, elapsed, self.model)

    def props_at(self, seg: int) -> frozenset[str]:
        return self.model.props(self.segments[seg].state.state)

    def segment_index(self, t: float) -> int:
        return bisect_right(self.starts.tolist(), t) - 1

    def __eq__(self, other) -> bool:
        return isinstance(other, TimedTrace) and self.segments == other.segments

    def __hash__(self) -> int:
        return hash(self.segments)

    def __repr__(self) -> str:
        body = ", ".join(f"({s.state.state}, {s.dwell:g})" for s in self.segments)
        return f"TimedTrace[{body}]"

    # json --------------------------------------------------------------

    def to_json(self) -> dict:
        segs = []
        for s in self.segments:
            d = {"state": s.state.state, "clocks": s.state.clock_map(self.model), "dwell": s.dwell}
            if s.frozen:
                d["frozen"] = True
            segs.append(d)
        return {"horizon": self.horizon, "segments": segs}

    @classmethod
    def from_json(cls, obj: dict, model: GsmpModel) -> "TimedTrace":
        segs = []
        for s in obj["segments"]:
            evs = model.events(s["state"])
            gs = GeneralizedState(s["state"], tuple(float(s["clocks"][e]) for e in evs))
            segs.append(Segment(gs, float(s["dwell"]), bool(s.get("frozen", False))))
        return cls(segs, model)


def sample_trace(
    model: GsmpModel,
    gs0: GeneralizedState,
    horizon: float,
    rng: np.random.Generator,
    max_events: int = TOL.zeno_guard,
) -> TimedTrace:
    if not horizon > 0:
        raise ValueError("horizon must be > 0")
    segs = []
    gs, now = gs0, 0.0
    for _ in range(max_events):
        tau, _ = time_to_first_expiry(gs, model)
        if tau <= 0:
            # a clock already at zero (a left limit) fires at once
            _, _, gs = _step(model, gs, rng)
            continue
        if now + tau >= horizon:
            segs.append(Segment(gs, horizon - now))
            return TimedTrace(segs, model)
        segs.append(Segment(gs, tau))
        now += tau
        _, _, gs = _step(model, gs, rng)
    raise ZenoGuardExceeded(f"more than {max_events} events before horizon {horizon}")


def _sample_chunk(args):
    model, gs0, horizon, seed, indices, max_events, prefix = args
    return [
        sample_trace(model, gs0, horizon, stream_rng(seed, *prefix, j), max_events) for j in indices
    ]


def sample_traces(
    model: GsmpModel,
    gs0: GeneralizedState,
    n: int,
    horizon: float,
    seed: int,
    jobs: int = 1,
    max_events: int = TOL.zeno_guard,
    stream: tuple[int, ...] = (),
) -> list[TimedTrace]:
    """Trace ``j`` uses stream ``(*stream, j)``; the output does not depend on ``jobs``."""
    if jobs <= 1 or n < 2:
        return _sample_chunk((model, gs0, horizon, seed, range(n), max_events, stream))
    chunks = [range(i, n, jobs) for i in range(jobs)]
    args = [(model, gs0, horizon, seed, c, max_events, stream) for c in chunks]
    with ProcessPoolExecutor(jobs) as pool:
        parts = list(pool.map(_sample_chunk, args))
    out: list = [None] * n
    for c, part in zip(chunks, parts):
        for j, tr in zip(c, part):
            out[j] = tr
    return out


def trace_at(trace: TimedTrace, t: float) -> GeneralizedState:
    if not 0 <= t < trace.horizon:
        raise OutOfHorizon(f"t={t} outside [0, {trace.horizon})")
    i = trace.segment_index(t)
    return trace.state_at(i, t - trace.starts[i])


def jump_times(trace: TimedTrace) -> list[float]:
    return trace.starts[1:].tolist()


@dataclass(frozen=True)
class ConstantPrefix:
    """u(t) = the given state for all t in [0, r)."""

    state: GeneralizedState


@dataclass(frozen=True)
class LinearPrefix:
    """u(t) = ``start`` with its clocks run down for time t."""

    start: GeneralizedState


def delay(trace: TimedTrace, prefix: ConstantPrefix | LinearPrefix, r: float) -> TimedTrace:
    """Prepend ``prefix`` on [0, r) and shift ``trace`` right by ``r``."""
    if r < 0:
        raise ValueError("delay must be >= 0")
    if r == 0:
        return trace
    first = trace.segments[0]
    if isinstance(prefix, LinearPrefix):
        end = _evolve(prefix.start, r, trace.model)
        if (
            not first.frozen
            and end.state == first.state.state
            and np.allclose(end.clocks, first.state.clocks, rtol=0, atol=1e-12)
        ):
            merged = Segment(prefix.start, first.dwell + r)
            return TimedTrace((merged,) + trace.segments[1:], trace.model)
        lead = Segment(prefix.start, r)
    else:
        lead = Segment(prefix.state, r, frozen=True)
    return TimedTrace((lead,) + trace.segments, trace.model)


def write_jsonl(traces: Iterable[TimedTrace], path: str | Path) -> None:
    with open(path, "w") as fh:
        for tr in traces:
            fh.write(json.dumps(tr.to_json()) + "\n")


def read_jsonl(path: str | Path, model: GsmpModel) -> list[TimedTrace]:
    out = []
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            out.append(TimedTrace.from_json(json.loads(line), model))
        except json.JSONDecodeError as exc:
            raise ModelFormatError(exc.msg, n, exc.colno) from None
        except (KeyError, TypeError) as exc:
            raise ModelFormatError(f"bad trace record: {exc}", n, 1) from None
    return out


class ScalarTrace:
    """Piecewise-linear function [0, horizon] -> [0, 1] with jumps allowed.

    Piece ``i`` starts at ``times[i]``, takes value ``v0[i]`` there and moves
    linearly to ``v1[i]`` at the next breakpoint (exclusive).  Step
    functions have v0 == v1 on every piece.
    """

    def __init__(self, times: Sequence[float], v0: Sequence[float], v1: Sequence[float], horizon: float):
        self.times = np.asarray(times, dtype=float)
        self.v0 = np.asarray(v0, dtype=float)
        self.v1 = np.asarray(v1, dtype=float)
        self.horizon = float(horizon)
        if self.times.size == 0 or self.times[0] != 0.0:
            raise ValueError("first breakpoint must be at t=0")
        if np.any(np.diff(self.times) <= 0) or self.times[-1] >= self.horizon:
            raise ValueError("breakpoints must be strictly increasing and below the horizon")
        if np.any((self.v0 < 0) | (self.v0 > 1) | (self.v1 < 0) | (self.v1 > 1)):
            raise ValueError("scalar trace values must lie in [0, 1]")

    @classmethod
    def step(cls, points: Sequence[tuple[float, float]], horizon: float) -> "ScalarTrace":
        t, v = zip(*points)
        return cls(t, v, v, horizon)

    @classmethod
    def linear(cls, points: Sequence[tuple[float, float]], horizon: float) -> "ScalarTrace":
        """Continuous interpolation of ``points``; constant after the last one."""
        t, v = zip(*points)
        return cls(t, v, list(v[1:]) + [v[-1]], horizon)

    @property
    def ends(self) -> np.ndarray:
        return np.append(self.times[1:], self.horizon)

    @property
    def max_slope(self) -> float:
        return float(np.max(np.abs(self.v1 - self.v0) / (self.ends - self.times)))

    def value_at(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        i = np.searchsorted(self.times, t, side="right") - 1
        frac = (t - self.times[i]) / (self.ends[i] - self.times[i])
        return self.v0[i] + (self.v1[i] - self.v0[i]) * frac

    def jump_times(self) -> list[float]:
        return [float(t) for t, a, b in zip(self.times[1:], self.v1[:-1], self.v0[1:]) if a != b]

    def to_json(self) -> dict:
        return {
            "horizon": self.horizon,
            "pieces": [[float(t), float(a), float(b)] for t, a, b in zip(self.times, self.v0, self.v1)],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ScalarTrace":
        horizon = float(obj["horizon"])
        if "steps" in obj:
            return cls.step([tuple(p) for p in obj["steps"]], horizon)
        if "linear" in obj:
            return cls.linear([tuple(p) for p in obj["linear"]], horizon)
        t, a, b = zip(*obj["pieces"])
        return cls(t, a, b, horizon)


def load_scalar_trace(path: str | Path) -> ScalarTrace:
    try:
        return ScalarTrace.from_json(json.loads(Path(path).read_text()))
    except json.JSONDecodeError as exc:
        raise ModelFormatError(exc.msg, exc.lineno, exc.colno) from None
