"""GSMP models, generalized states and the single-step semantics."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .config import TOL
from .errors import (
    AdvanceBeyondExpiry,
    DegenerateModel,
    ModelFormatError,
    UniquenessViolation,
)

DIST_KINDS = {
    "exponential": ("rate",),
    "uniform": ("a", "b"),
    "weibull": ("shape", "scale"),
    "point": ("d",),
}


@dataclass(frozen=True)
class ResetDistribution:
    kind: str
    params: tuple[float, ...]

    @classmethod
    def exponential(cls, rate: float) -> "ResetDistribution":
        return cls("exponential", (float(rate),))

    @classmethod
    def uniform(cls, a: float, b: float) -> "ResetDistribution":
        return cls("uniform", (float(a), float(b)))

    @classmethod
    def weibull(cls, shape: float, scale: float) -> "ResetDistribution":
        return cls("weibull", (float(shape), float(scale)))

    @classmethod
    def point(cls, d: float) -> "ResetDistribution":
        return cls("point", (float(d),))

    def problems(self) -> list[str]:
        if self.kind not in DIST_KINDS:
            return [f"unknown distribution kind {self.kind!r}"]
        if len(self.params) != len(DIST_KINDS[self.kind]):
            return [f"{self.kind} takes parameters {DIST_KINDS[self.kind]}"]
        out = []
        if any(not (p > 0 and math.isfinite(p)) for p in self.params):
            out.append("distribution parameters must be > 0")
        if self.kind == "uniform" and not self.params[0] < self.params[1]:
            out.append("uniform requires a < b")
        return out

    def sample(self, rng: np.random.Generator) -> float:
        k, p = self.kind, self.params
        if k == "exponential":
            return float(rng.exponential(1.0 / p[0]))
        if k == "uniform":
            return float(rng.uniform(p[0], p[1]))
        if k == "weibull":
            return float(p[1] * rng.weibull(p[0]))
        return p[0]

    def mean(self) -> float:
        k, p = self.kind, self.params
        if k == "exponential":
            return 1.0 / p[0]
        if k == "uniform":
            return 0.5 * (p[0] + p[1])
        if k == "weibull":
            return p[1] * math.gamma(1.0 + 1.0 / p[0])
        return p[0]

    def to_json(self) -> dict:
        return {"kind": self.kind, **dict(zip(DIST_KINDS[self.kind], self.params))}

    @classmethod
    def from_json(cls, obj: Mapping) -> "ResetDistribution":
        kind = obj.get("kind")
        if kind not in DIST_KINDS:
            raise ModelFormatError(f"unknown distribution kind {kind!r}")
        try:
            params = tuple(float(obj[name]) for name in DIST_KINDS[kind])
        except KeyError as exc:
            raise ModelFormatError(f"{kind} distribution missing field {exc.args[0]!r}")
        return cls(kind, params)


@dataclass(frozen=True)
class StateSpec:
    id: str
    props: frozenset[str]
    events: tuple[str, ...]
    rates: Mapping[str, float]


@dataclass(frozen=True)
class GeneralizedState:
    """A state id together with the clock values of its events.

    ``clocks`` is aligned with the event order of the state in the model.
    Instances are hashable and compare by value.
    """

    state: str
    clocks: tuple[float, ...]

    def clock_map(self, model: "GsmpModel") -> dict[str, float]:
        return dict(zip(model.events(self.state), self.clocks))


@dataclass
class Violation:
    path: str
    message: str
    severity: str = "error"

    def __str__(self) -> str:
        return f"{self.severity}: {self.path}: {self.message}"


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def errors(self) -> list[Violation]:
        return [v for v in self.violations if v.severity == "error"]

    @property
    def ok(self) -> bool:
        return not self.errors

    def __bool__(self) -> bool:
        return bool(self.violations)

    def __iter__(self):
        return iter(self.violations)

    def __len__(self) -> int:
        return len(self.violations)


class GsmpModel:
    """Finite-state GSMP.

    ``next`` maps (state, event) to a probability row over target states and
    ``resets`` maps (state, fired event, target, new event) to the reset
    distribution of the new clock.  ``clock_defaults`` supplies a reset for a
    new event when no transition-specific entry exists.
    """

    def __init__(
        self,
        states: Iterable[StateSpec],
        next: Mapping[tuple[str, str], Mapping[str, float]],
        resets: Mapping[tuple[str, str, str, str], ResetDistribution] | None = None,
        clock_defaults: Mapping[str, ResetDistribution] | None = None,
    ):
        self.states: dict[str, StateSpec] = {s.id: s for s in states}
        self.next = {key: dict(row) for key, row in next.items()}
        self.resets = dict(resets or {})
        self.clock_defaults = dict(clock_defaults or {})
        self._rates = {
            s.id: np.array([s.rates[e] for e in s.events], dtype=float)
            for s in self.states.values()
        }
        self._targets: dict[tuple[str, str], tuple[list[str], np.ndarray]] = {}
        for key, row in self.next.items():
            targets = list(row)
            self._targets[key] = (targets, np.cumsum([row[t] for t in targets]))

    # queries -----------------------------------------------------------

    def events(self, s: str) -> tuple[str, ...]:
        return self.states[s].events

    def rates(self, s: str) -> np.ndarray:
        return self._rates[s]

    def props(self, s: str) -> frozenset[str]:
        return self.states[s].props

    @property
    def propositions(self) -> list[str]:
        return sorted(set().union(*(s.props for s in self.states.values())))

    @property
    def max_rate(self) -> float:
        return max((float(r.max()) for r in self._rates.values() if r.size), default=1.0)

    def reset_for(self, s: str, i: str, t: str, j: str) -> ResetDistribution | None:
        return self.resets.get((s, i, t, j), self.clock_defaults.get(j))

    def new_events(self, s: str, i: str, t: str) -> list[str]:
        """Events of ``t`` that get fresh clocks when ``i`` fires in ``s``."""
        kept = set(self.events(s)) - {i}
        return [j for j in self.events(t) if j not in kept]

    def genstate(self, s: str, clocks: Mapping[str, float]) -> GeneralizedState:
        """Build a generalized state from an event -> clock mapping, checking it."""
        if s not in self.states:
            raise KeyError(f"unknown state {s!r}")
        evs = self.events(s)
        if set(clocks) != set(evs):
            raise ValueError(f"clock keys {sorted(clocks)} do not match events {sorted(evs)}")
        gs = GeneralizedState(s, tuple(float(clocks[e]) for e in evs))
        if any(c < 0 for c in gs.clocks):
            raise ValueError("clock values must be >= 0")
        time_to_first_expiry(gs, self)
        return gs

    # serialization -----------------------------------------------------

    def to_json(self) -> dict:
        return {
            "states": [
                {"id": s.id, "props": sorted(s.props), "events": {e: s.rates[e] for e in s.events}}
                for s in self.states.values()
            ],
            "next": [
                {"from": s, "event": e, "to": row} for (s, e), row in self.next.items()
            ],
            "resets": [
                {"from": s, "event": i, "to": t, "new": j, "dist": d.to_json()}
                for (s, i, t, j), d in self.resets.items()
            ],
            "clock_defaults": {e: d.to_json() for e, d in self.clock_defaults.items()},
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "GsmpModel":
        def need(o, key, path):
            if not isinstance(o, Mapping) or key not in o:
                raise ModelFormatError(f"{path}: missing field {key!r}")
            return o[key]

        states = []
        for n, s in enumerate(need(obj, "states", "model")):
            path = f"states[{n}]"
            events = need(s, "events", path)
            if not isinstance(events, Mapping):
                raise ModelFormatError(f"{path}.events must be an object event -> rate")
            states.append(
                StateSpec(
                    id=str(need(s, "id", path)),
                    props=frozenset(str(p) for p in s.get("props", [])),
                    events=tuple(str(e) for e in events),
                    rates={str(e): float(r) for e, r in events.items()},
                )
            )
        nxt = {}
        for n, row in enumerate(obj.get("next", [])):
            path = f"next[{n}]"
            nxt[(str(need(row, "from", path)), str(need(row, "event", path)))] = {
                str(t): float(p) for t, p in need(row, "to", path).items()
            }
        resets = {}
        for n, r in enumerate(obj.get("resets", [])):
            path = f"resets[{n}]"
            key = tuple(str(need(r, f, path)) for f in ("from", "event", "to", "new"))
            resets[key] = ResetDistribution.from_json(need(r, "dist", path))
        defaults = {
            str(e): ResetDistribution.from_json(d)
            for e, d in obj.get("clock_defaults", {}).items()
        }
        return cls(states, nxt, resets, defaults)


def load_model(path: str | Path) -> GsmpModel:
    text = Path(path).read_text()
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(exc.msg, exc.lineno, exc.colno) from None
    return GsmpModel.from_json(obj)


def validate_model(model: GsmpModel) -> ValidationReport:
    report = ValidationReport()
    add = lambda path, msg, sev="error": report.violations.append(Violation(path, msg, sev))

    for s in model.states.values():
        for e in s.events:
            r = s.rates.get(e)
            if r is None or not r > 0:
                add(f"states[{s.id}].events[{e}]", "rate must be > 0")
        if len(set(s.events)) != len(s.events):
            add(f"states[{s.id}].events", "duplicate event ids")

    for s in model.states.values():
        for e in s.events:
            row = model.next.get((s.id, e))
            path = f"next[{s.id},{e}]"
            if row is None:
                add(path, "missing probability row")
                continue
            for t, p in row.items():
                if t not in model.states:
                    add(f"{path}.to[{t}]", "unknown target state")
                if not 0.0 <= p <= 1.0:
                    add(f"{path}.to[{t}]", "probability outside [0,1]")
            total = sum(row.values())
            if abs(total - 1.0) > TOL.prob_sum:
                add(path, f"probability row sum ≠ 1 (sum = {total!r})")
            for t, p in row.items():
                if p <= 0 or t not in model.states:
                    continue
                for j in model.new_events(s.id, e, t):
                    if model.reset_for(s.id, e, t, j) is None:
                        add(f"resets[{s.id},{e},{t},{j}]", "missing reset distribution")

    for key in model.next:
        if key[0] not in model.states or key[1] not in model.events(key[0]):
            add(f"next[{key[0]},{key[1]}]", "row for unknown state/event")

    dists = [(f"resets[{','.join(k)}]", d) for k, d in model.resets.items()]
    dists += [(f"clock_defaults[{e}]", d) for e, d in model.clock_defaults.items()]
    for path, d in dists:
        for msg in d.problems():
            add(path, msg)
        if d.kind == "point":
            add(path, "non-conforming: testing only (point-mass reset)", "warning")
    return report


# semantics -------------------------------------------------------------


def _expiry_times(gs: GeneralizedState, model: GsmpModel) -> np.ndarray:
    return np.asarray(gs.clocks, dtype=float) / model.rates(gs.state)


def _first(taus: np.ndarray) -> int | None:
    """Index of the unique minimum, or None on a tie."""
    i = int(np.argmin(taus))
    if np.count_nonzero(taus - taus[i] <= TOL.tie) > 1:
        return None
    return i


def time_to_first_expiry(gs: GeneralizedState, model: GsmpModel) -> tuple[float, str]:
    """Return (time until the first clock hits zero, the expiring event)."""
    taus = _expiry_times(gs, model)
    if taus.size == 0:
        raise UniquenessViolation(f"state {gs.state!r} has no events")
    i = _first(taus)
    if i is None:
        raise UniquenessViolation(f"clocks of {gs.state!r} tie for first expiry")
    return float(taus[i]), model.events(gs.state)[i]


def advance(gs: GeneralizedState, t: float, model: GsmpModel) -> GeneralizedState:
    tau, _ = time_to_first_expiry(gs, model)
    if t >= tau or t < 0:
        raise AdvanceBeyondExpiry(f"cannot advance by {t} (first expiry at {tau})")
    return _evolve(gs, t, model)


def _evolve(gs: GeneralizedState, t: float, model: GsmpModel) -> GeneralizedState:
    """Evolve clocks by ``t`` without checking the expiry bound.

    Negative ``t`` rewinds the clocks along their trajectory.
    """
    if t == 0:
        return gs
    c = np.asarray(gs.clocks) - model.rates(gs.state) * t
    return GeneralizedState(gs.state, tuple(c.tolist()))


def _step(model: GsmpModel, gs: GeneralizedState, rng: np.random.Generator):
    """One transition; returns (dwell, fired event, successor)."""
    tau, fired = time_to_first_expiry(gs, model)
    s = gs.state
    evs = model.events(s)
    left = np.asarray(gs.clocks) - model.rates(s) * tau
    carried = {e: max(c, 0.0) for e, c in zip(evs, left.tolist()) if e != fired}

    targets, cum = model._targets[(s, fired)]
    idx = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
    t = targets[min(idx, len(targets) - 1)]

    t_events = model.events(t)
    fresh = model.new_events(s, fired, t)
    t_rates = model.rates(t)
    for _ in range(TOL.reset_retries):
        clocks = dict(carried)
        for j in fresh:
            clocks[j] = model.reset_for(s, fired, t, j).sample(rng)
        vec = tuple(clocks[e] for e in t_events)
        if _first(np.asarray(vec) / t_rates) is not None:
            return tau, fired, GeneralizedState(t, vec)
        if not fresh:
            break
    raise DegenerateModel(
        f"resets after {s!r} --{fired}--> {t!r} keep producing first-expiry ties"
    )


def step(model: GsmpModel, gs: GeneralizedState, rng: np.random.Generator) -> GeneralizedState:
    return _step(model, gs, rng)[2]


def structural_classes(model: GsmpModel) -> dict[str, str]:
    """Coarsest relabeling-invariant partition of the discrete states.

    Two states share a class when they agree on propositions, events and
    rates, and for every event put equal probability on each (successor
    class, fresh-clock distribution) pair.  Generalized states of related
    states with equal clocks then generate identically distributed traces up
    to relabeling, so every metric iterate between them is exactly 0.
    Returns state id -> class representative (the first member in model order).
    """
    order = list(model.states)

    def base(s):
        spec = model.states[s]
        return (tuple(sorted(spec.props)), tuple((e, spec.rates[e]) for e in sorted(spec.events)))

    block = {s: base(s) for s in order}
    while True:
        sig = {}
        for s in order:
            parts = []
            for e in sorted(model.events(s)):
                agg: dict = {}
                for t, p in model.next.get((s, e), {}).items():
                    if p <= 0 or t not in model.states:
                        continue
                    resets = tuple(
                        (j, model.reset_for(s, e, t, j)) for j in sorted(model.new_events(s, e, t))
                    )
                    key = (block[t], resets)
                    agg[key] = agg.get(key, 0.0) + p
                parts.append((e, tuple(sorted(((repr(k), round(v, 12)) for k, v in agg.items())))))
            sig[s] = (block[s], tuple(parts))
        ids = {}
        new_block = {}
        for s in order:
            new_block[s] = ids.setdefault(sig[s], len(ids))
        if len(set(new_block.values())) == len(set(block.values())):
            break
        block = new_block
    rep: dict = {}
    return {s: rep.setdefault(block[s], s) for s in order}
