"""Real-valued function expressions over generalized states and paths.

F-expressions are evaluated at generalized states, G-expressions on traces
at an explicit time:

    F ::= 1 | p | min(F, F) | clamp(a, b, F) | int G
    G ::= L(F, t) | min(G, G) | clamp(a, b, G)

with clamp(a, b, x) = min(1, max(0, a*x + b)) and |a| <= 1, ``int G`` the
k-discounted expectation of G over the traces of the state, and
L(F, t)(f) = sup_{t'} F(f(t')) - |t' - t|.

Text syntax is an s-expression, e.g. ``(int (L (clamp 1 -0.3 (prop "p")) 0.5))``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence, Union

import numpy as np

from .errors import HorizonTooShort, ModelFormatError
from .j2 import trace_graph
from .model import GeneralizedState, GsmpModel
from .traces import ScalarTrace, sample_trace, sample_traces, stream_rng


# AST ----------------------------------------------------------------------


@dataclass(frozen=True)
class One:
    pass


@dataclass(frozen=True)
class Prop:
    name: str


@dataclass(frozen=True)
class Min:
    left: "FExpr"
    right: "FExpr"


@dataclass(frozen=True)
class Clamp:
    a: float
    b: float
    arg: "FExpr"

    def __post_init__(self) -> None:
        _check_clamp(self.a, self.b)


@dataclass(frozen=True)
class Integral:
    arg: "GExpr"


@dataclass(frozen=True)
class L:
    arg: "FExpr"
    t: float

    def __post_init__(self) -> None:
        if not (self.t >= 0 and math.isfinite(self.t)):
            raise ValueError(f"L time must be finite and >= 0, got {self.t}")


@dataclass(frozen=True)
class GMin:
    left: "GExpr"
    right: "GExpr"


@dataclass(frozen=True)
class GClamp:
    a: float
    b: float
    arg: "GExpr"

    def __post_init__(self) -> None:
        _check_clamp(self.a, self.b)


FExpr = Union[One, Prop, Min, Clamp, Integral]
GExpr = Union[L, GMin, GClamp]


def _check_clamp(a: float, b: float) -> None:
    if not (math.isfinite(a) and math.isfinite(b)):
        raise ValueError("clamp parameters must be finite")
    if abs(a) > 1:
        raise ValueError(f"clamp slope must satisfy |a| <= 1, got {a}")


def clamp(a: float, b: float, x: float) -> float:
    return min(1.0, max(0.0, a * x + b))


def negation(e: FExpr) -> Clamp:
    """1 - e."""
    return Clamp(-1.0, 1.0, e)


def above(q: float, e: FExpr) -> Clamp:
    """max(0, e - q), a smoothed 'greater than q' test."""
    return Clamp(1.0, -q, e)


def times(e) -> list[float]:
    """All L time parameters occurring in an expression."""
    if isinstance(e, L):
        return [e.t] + times(e.arg)
    if isinstance(e, (Min, GMin)):
        return times(e.left) + times(e.right)
    if isinstance(e, (Clamp, GClamp, Integral)):
        return times(e.arg)
    return []


def nesting(e) -> int:
    """Number of nested integrals."""
    if isinstance(e, Integral):
        return 1 + nesting(e.arg)
    if isinstance(e, (Min, GMin)):
        return max(nesting(e.left), nesting(e.right))
    if isinstance(e, (Clamp, GClamp, L)):
        return nesting(e.arg)
    return 0


def size(e) -> int:
    if isinstance(e, (Min, GMin)):
        return 1 + size(e.left) + size(e.right)
    if isinstance(e, (Clamp, GClamp, Integral, L)):
        return 1 + size(e.arg)
    return 1


# text syntax --------------------------------------------------------------


def _num(x: float) -> str:
    return repr(float(x))


def to_sexpr(e) -> str:
    if isinstance(e, One):
        return "1"
    if isinstance(e, Prop):
        return f'(prop "{e.name}")'
    if isinstance(e, (Min, GMin)):
        return f"(min {to_sexpr(e.left)} {to_sexpr(e.right)})"
    if isinstance(e, (Clamp, GClamp)):
        return f"(clamp {_num(e.a)} {_num(e.b)} {to_sexpr(e.arg)})"
    if isinstance(e, Integral):
        return f"(int {to_sexpr(e.arg)})"
    if isinstance(e, L):
        return f"(L {to_sexpr(e.arg)} {_num(e.t)})"
    raise TypeError(f"not an expression: {e!r}")


_TOKEN = re.compile(r'\s*(?:(;[^\n]*)|(\()|(\))|"([^"]*)"|([^\s()";]+))')


def _tokens(text: str) -> list[tuple[str, str, int, int]]:
    out = []
    pos, n = 0, len(text)
    while pos < n:
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            if text[pos:].strip() == "":
                break
            line, col = _where(text, pos)
            raise ModelFormatError(f"unexpected character {text[pos]!r}", line, col)
        start = m.start(m.lastindex) if m.lastindex else m.end()
        line, col = _where(text, start)
        if m.group(2):
            out.append(("(", "(", line, col))
        elif m.group(3):
            out.append((")", ")", line, col))
        elif m.group(4) is not None:
            out.append(("str", m.group(4), line, col))
        elif m.group(5):
            out.append(("atom", m.group(5), line, col))
        pos = m.end()
    return out


def _where(text: str, pos: int) -> tuple[int, int]:
    line = text.count("\n", 0, pos) + 1
    col = pos - (text.rfind("\n", 0, pos) + 1) + 1
    return line, col


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokens(text)
        self.i = 0
        self.end = _where(text, len(text))

    def peek(self):
        if self.i >= len(self.toks):
            raise ModelFormatError("unexpected end of input", *self.end)
        return self.toks[self.i]

    def take(self, kind: str | None = None):
        tok = self.peek()
        if kind is not None and tok[0] != kind:
            raise ModelFormatError(f"expected {kind!r}, got {tok[1]!r}", tok[2], tok[3])
        self.i += 1
        return tok

    def number(self) -> float:
        tok = self.take("atom")
        try:
            return float(tok[1])
        except ValueError:
            raise ModelFormatError(f"expected a number, got {tok[1]!r}", tok[2], tok[3]) from None

    def build(self, ctor, tok, *args):
        try:
            return ctor(*args)
        except ValueError as exc:
            raise ModelFormatError(str(exc), tok[2], tok[3]) from None

    def f(self) -> FExpr:
        tok = self.peek()
        if tok[0] == "atom" and tok[1] in ("1", "one", "true"):
            self.i += 1
            return One()
        self.take("(")
        head = self.take("atom")
        op = head[1]
        if op in ("1", "one", "true"):
            out = One()
        elif op == "prop":
            t = self.peek()
            if t[0] not in ("str", "atom"):
                raise ModelFormatError("prop expects a name", t[2], t[3])
            self.i += 1
            out = Prop(t[1])
        elif op == "min":
            out = Min(self.f(), self.f())
        elif op == "clamp":
            a, b = self.number(), self.number()
            out = self.build(Clamp, head, a, b, self.f())
        elif op == "int":
            out = Integral(self.g())
        else:
            raise ModelFormatError(f"unknown F operator {op!r}", head[2], head[3])
        self.take(")")
        return out

    def g(self) -> GExpr:
        self.take("(")
        head = self.take("atom")
        op = head[1]
        if op == "L":
            arg = self.f()
            out = self.build(L, head, arg, self.number())
        elif op == "min":
            out = GMin(self.g(), self.g())
        elif op == "clamp":
            a, b = self.number(), self.number()
            out = self.build(GClamp, head, a, b, self.g())
        else:
            raise ModelFormatError(f"unknown G operator {op!r}", head[2], head[3])
        self.take(")")
        return out


def parse_expr(text: str) -> FExpr:
    """Parse an F-expression; errors carry line and column."""
    p = _Parser(text)
    out = p.f()
    if p.i != len(p.toks):
        tok = p.toks[p.i]
        raise ModelFormatError(f"trailing input {tok[1]!r}", tok[2], tok[3])
    return out


def parse_gexpr(text: str) -> GExpr:
    p = _Parser(text)
    out = p.g()
    if p.i != len(p.toks):
        tok = p.toks[p.i]
        raise ModelFormatError(f"trailing input {tok[1]!r}", tok[2], tok[3])
    return out


# evaluation ---------------------------------------------------------------


def eval_g(
    expr: GExpr,
    trace,
    valuation: Callable[[FExpr, object], float],
    grid: float,
) -> float:
    """Evaluate a G-expression on a trace.

    ``valuation(F, x)`` gives the value of F at a trace value ``x`` (a
    generalized state for timed traces, a number for scalar traces).  The
    sup in L runs over grid points, jump points, left limits and t itself.
    Points past the trace horizon are ignored; this is exact once the
    horizon exceeds t + 1 because F - |t' - t| is then <= 0 there.
    """
    pts = _points(trace, grid)
    return _g(expr, pts, valuation)


def _g(expr, pts, valuation) -> float:
    if isinstance(expr, L):
        tt, xs = pts(expr.t)
        best = 0.0
        for t1, x in zip(tt, xs):
            gap = abs(t1 - expr.t)
            if 1.0 - gap <= best:
                continue
            best = max(best, valuation(expr.arg, x) - gap)
        return best
    if isinstance(expr, GMin):
        return min(_g(expr.left, pts, valuation), _g(expr.right, pts, valuation))
    if isinstance(expr, GClamp):
        return clamp(expr.a, expr.b, _g(expr.arg, pts, valuation))
    raise TypeError(f"not a G-expression: {expr!r}")


def _points(trace, grid: float):
    """Returns t -> (times, values) of the sample points relevant at time t."""
    if isinstance(trace, ScalarTrace):
        g = np.arange(0.0, trace.horizon + 1e-12, grid)
        jumps = np.array(trace.jump_times())
        t0 = np.concatenate([g, trace.times, jumps, [trace.horizon]])
        v0 = np.concatenate([
            trace.value_at(np.minimum(g, np.nextafter(trace.horizon, 0))),
            trace.v0,
            trace.v1[np.searchsorted(trace.times, jumps) - 1] if jumps.size else [],
            [trace.v1[-1]],
        ])

        def at(t):
            if t < trace.horizon:
                return np.append(t0, t), np.append(v0, trace.value_at(t))
            return t0, v0

        return at

    tg = trace_graph(trace, grid)
    states = tg.states()

    def at(t):
        if t < trace.horizon:
            i = trace.segment_index(t)
            return list(tg.times) + [t], states + [trace.state_at(i, t - trace.starts[i])]
        return list(tg.times), states

    return at


@dataclass
class Evaluator:
    """Monte-Carlo evaluation of F-expressions on a GSMP.

    Top-level integrals average over ``N`` traces drawn with the same random
    streams as the metric estimator, nested integrals over ``inner`` traces.
    Trace horizons are chosen per expression as max(L time) + 1, which makes
    the sup in L exact up to the grid.
    """

    model: GsmpModel
    k: float = 0.5
    N: int = 200
    T: float = 10.0
    grid: float = 0.01
    seed: int = 0
    inner: int = 16
    memo: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not 0 < self.k <= 0.5:
            raise ValueError(f"k must lie in (0, 1/2], got {self.k}")

    def check(self, expr: FExpr) -> None:
        ts = times(expr)
        if ts and max(ts) + 1.0 > self.T:
            raise HorizonTooShort(
                f"horizon {self.T} must be at least max L time + 1 = {max(ts) + 1.0}"
            )

    def eval_f(self, expr: FExpr, gs: GeneralizedState) -> float:
        self.check(expr)
        return self._f(expr, gs, 0)

    def per_trace(self, expr: Integral, gs: GeneralizedState) -> np.ndarray:
        """Values of the integrand on each top-level trace (before discounting)."""
        self.check(expr)
        return self._samples(expr.arg, gs, 0)

    def _f(self, expr: FExpr, gs: GeneralizedState, level: int) -> float:
        if isinstance(expr, One):
            return 1.0
        if isinstance(expr, Prop):
            return 1.0 if expr.name in self.model.props(gs.state) else 0.0
        if isinstance(expr, Min):
            return min(self._f(expr.left, gs, level), self._f(expr.right, gs, level))
        if isinstance(expr, Clamp):
            return clamp(expr.a, expr.b, self._f(expr.arg, gs, level))
        if isinstance(expr, Integral):
            key = (expr, gs, level)
            got = self.memo.get(key)
            if got is None:
                got = self.k * float(np.mean(self._samples(expr.arg, gs, level)))
                self.memo[key] = got
            return got
        raise TypeError(f"not an F-expression: {expr!r}")

    def _samples(self, g: GExpr, gs: GeneralizedState, level: int) -> np.ndarray:
        horizon = max(times(g), default=0.0) + 1.0
        if level == 0:
            traces = sample_traces(self.model, gs, self.N, horizon, self.seed, stream=(0,))
        else:
            traces = [
                sample_trace(self.model, gs, horizon, stream_rng(self.seed, 1, j))
                for j in range(self.inner)
            ]
        val = lambda f, x: self._f(f, x, level + 1)
        return np.array([eval_g(g, tr, val, self.grid) for tr in traces])


def eval_f(
    expr: FExpr,
    model: GsmpModel,
    gs: GeneralizedState,
    k: float = 0.5,
    N: int = 200,
    T: float = 10.0,
    grid: float = 0.01,
    seed: int = 0,
    inner: int = 16,
) -> float:
    return Evaluator(model, k, N, T, grid, seed, inner).eval_f(expr, gs)


# scalar previews -----------------------------------------------------------


def scalar_L(h: Callable[[float], float], f: ScalarTrace, t: float, grid: float = 0.01) -> float:
    """L(h)(f)(t) for a scalar trace with values in [0, 1]."""
    return eval_g(L(One(), t), f, lambda _, x: float(h(x)), grid)


def h_eps(eps: float, center: float) -> Callable[[float], float]:
    """r -> max(0, eps - |center - r|)."""
    return lambda r: max(0.0, eps - abs(center - r))


# d_k lower bounds ----------------------------------------------------------


@dataclass
class FamilyConfig:
    """Budget of the expression search behind ``dk_estimate``."""

    count: int = 60  # random expressions
    depth: int = 3  # syntactic depth of random expressions
    nesting: int = 1  # max nested integrals
    max_time: float = 2.0  # L times are drawn from [0, max_time]
    local_steps: int = 20  # perturbations of the best expression
    seed: int = 0


@dataclass
class DkEstimate:
    value: float
    expr: str
    evaluated: int
    values: tuple[float, float]

    def to_json(self) -> dict:
        return {"value": self.value, "expr": self.expr, "evaluated": self.evaluated,
                "values": list(self.values)}


def random_fexpr(rng: np.random.Generator, props: Sequence[str], depth: int, nesting: int,
                 max_time: float) -> FExpr:
    """A random F-expression of bounded depth and integral nesting."""
    if depth <= 0:
        return Prop(str(rng.choice(props))) if props and rng.random() < 0.8 else One()
    choices = ["prop", "min", "clamp"] + (["int", "int"] if nesting > 0 else [])
    op = choices[int(rng.integers(len(choices)))]
    if op == "prop":
        return random_fexpr(rng, props, 0, nesting, max_time)
    if op == "min":
        return Min(random_fexpr(rng, props, depth - 1, nesting, max_time),
                   random_fexpr(rng, props, depth - 1, nesting, max_time))
    if op == "clamp":
        return Clamp(float(rng.uniform(-1, 1)), float(rng.uniform(-0.5, 1)),
                     random_fexpr(rng, props, depth - 1, nesting, max_time))
    return Integral(random_gexpr(rng, props, depth - 1, nesting - 1, max_time))


def random_gexpr(rng: np.random.Generator, props: Sequence[str], depth: int, nesting: int,
                 max_time: float) -> GExpr:
    r = rng.random()
    if depth <= 0 or r < 0.6:
        t = float(np.round(rng.uniform(0, max_time), 2))
        return L(random_fexpr(rng, props, max(depth - 1, 0), nesting, max_time), t)
    if r < 0.8:
        return GMin(random_gexpr(rng, props, depth - 1, nesting, max_time),
                    random_gexpr(rng, props, depth - 1, nesting, max_time))
    return GClamp(float(rng.uniform(-1, 1)), float(rng.uniform(-0.5, 1)),
                  random_gexpr(rng, props, depth - 1, nesting, max_time))


def _mutate(e, rng: np.random.Generator, max_time: float):
    """Perturb one clamp parameter or L time."""
    sites = list(_sites(e))
    if not sites:
        return e
    target = sites[int(rng.integers(len(sites)))]

    def go(x):
        if x is target:
            if isinstance(x, L):
                return L(x.arg, float(np.clip(x.t + rng.normal(0, 0.2), 0, max_time)))
            a = float(np.clip(x.a + rng.normal(0, 0.2), -1, 1))
            return type(x)(a, float(x.b + rng.normal(0, 0.1)), x.arg)
        if isinstance(x, (Min, GMin)):
            return type(x)(go(x.left), go(x.right))
        if isinstance(x, (Clamp, GClamp)):
            return type(x)(x.a, x.b, go(x.arg))
        if isinstance(x, Integral):
            return Integral(go(x.arg))
        if isinstance(x, L):
            return L(go(x.arg), x.t)
        return x

    return go(e)


def _sites(e) -> Iterator:
    if isinstance(e, (Clamp, GClamp, L)):
        yield e
    if isinstance(e, (Min, GMin)):
        yield from _sites(e.left)
        yield from _sites(e.right)
    elif isinstance(e, (Clamp, GClamp, Integral, L)):
        yield from _sites(e.arg)


def dk_estimate(
    model: GsmpModel,
    gs1: GeneralizedState,
    gs2: GeneralizedState,
    family: FamilyConfig | None = None,
    evaluator: Evaluator | None = None,
) -> DkEstimate:
    """Largest |F(gs1) - F(gs2)| found over a generated expression family.

    Every expression evaluated gives a lower bound on d_k up to Monte-Carlo
    and grid error; the search never claims more than that.
    """
    fam = family or FamilyConfig()
    ev = evaluator or Evaluator(model, T=fam.max_time + 1.0)
    rng = np.random.default_rng(np.random.SeedSequence(fam.seed, spawn_key=(3,)))
    props = sorted(model.propositions)
    cands: list = [One()] + [Prop(p) for p in props]
    cands += [random_fexpr(rng, props, fam.depth, fam.nesting, fam.max_time) for _ in range(fam.count)]

    def score(e):
        a, b = ev.eval_f(e, gs1), ev.eval_f(e, gs2)
        return abs(a - b), (a, b)

    best, best_vals, best_e = -1.0, (0.0, 0.0), cands[0]
    n = 0
    for e in cands:
        s, vals = score(e)
        n += 1
        if s > best:
            best, best_vals, best_e = s, vals, e
    for _ in range(fam.local_steps):
        if best >= 1.0:
            break
        e = _mutate(best_e, rng, fam.max_time)
        s, vals = score(e)
        n += 1
        if s > best:
            best, best_vals, best_e = s, vals, e
    return DkEstimate(best, to_sexpr(best_e), n, best_vals)
