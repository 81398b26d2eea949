
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_model
from oracles import cumulative_reward_riemann
from gsmp_metric import GeneralizedState, GsmpModel
from gsmp_metric.errors import OutOfHorizon
from gsmp_metric.fixpoint import metric_estimate
from gsmp_metric.model import ResetDistribution, StateSpec, _evolve
from gsmp_metric.observables import (
    NotHit,
    Observable,
    RewardSpec,
    average_reward,
    continuity_report,
    cumulative_reward,
    expectation,
    expected_observable,
    hitting_time,
    rows_to_csv,
    time_average_below,
    time_to_reward,
)
from gsmp_metric.traces import Segment, TimedTrace, sample_trace, stream_rng

TWO = GsmpModel(
    [StateSpec("a", frozenset({"p"}), ("e",), {"e": 1.0}),
     StateSpec("b", frozenset({"q"}), ("e",), {"e": 1.0})],
    {("a", "e"): {"b": 1.0}, ("b", "e"): {"a": 1.0}},
    clock_defaults={"e": ResetDistribution.uniform(0.5, 1.5)},
)
RW = RewardSpec({"a": 2.0, "b": 0.0})


def manual(*segs):
    return TimedTrace([Segment(GeneralizedState(s, (d,)), d) for s, d in segs], TWO)


def test_hitting_time_examples():
    tr = manual(("a", 1.5), ("b", 1.0))
    assert hitting_time(tr, "p") == 0.0
    assert hitting_time(tr, "q") == 1.5
    assert hitting_time(tr, "r") is NotHit and not NotHit


def test_reward_examples():
    tr = manual(("a", 1.0), ("b", 1.0))
    assert cumulative_reward(tr, RW, 1.5) == 2.0
    assert cumulative_reward(tr, RW, 0.0) == 0.0
    assert average_reward(tr, RW, 1.5) == pytest.approx(4 / 3)
    assert time_to_reward(tr, RW, 1.0) == 0.5
    with pytest.raises(OutOfHorizon):
        cumulative_reward(tr, RW, 2.5)


def test_time_average_below_against_grid_scan():
    tr = manual(("b", 0.7), ("a", 0.4), ("b", 1.1), ("a", 0.8))
    for v in (0.3, 0.6, 1.0, 1.9):
        ts = np.linspace(1e-4, tr.horizon, 20001)
        below = [t for t in ts if cumulative_reward(tr, RW, t) / t < v]
        want = max(below) if below else 0.0
        assert time_average_below(tr, RW, v) == pytest.approx(want, abs=2e-4)


def test_reward_spec_validation():
    with pytest.raises(ValueError):
        RewardSpec({"a": -1.0})
    same_props = GsmpModel(
        [StateSpec("a", frozenset({"p"}), ("e",), {"e": 1.0}),
         StateSpec("b", frozenset({"p"}), ("e",), {"e": 1.0})],
        {("a", "e"): {"b": 1.0}, ("b", "e"): {"a": 1.0}},
        clock_defaults={"e": ResetDistribution.uniform(0.5, 1.5)},
    )
    assert RewardSpec({"a": 1.0, "b": 2.0}).validate(same_props)
    assert not RW.validate(TWO)
    assert RewardSpec({"zz": 1.0}).validate(TWO)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 5000), T=st.floats(0.1, 4.0))
def test_cumulative_reward_quadrature(seed, T):
    m = random_model(seed % 40)
    s0 = next(iter(m.states))
    gs = GeneralizedState(s0, tuple(0.9 + 0.31 * i for i in range(len(m.events(s0)))))
    tr = sample_trace(m, gs, 4.0, stream_rng(seed, 0))
    rates = {s: float(i + 1) * 0.5 for i, s in enumerate(m.states)}
    got = cumulative_reward(tr, RewardSpec(rates), T)
    assert got == pytest.approx(cumulative_reward_riemann(tr, rates, T, n=40_000), abs=1e-3)


def test_pingpong_hit_exact(pingpong):
    e = expected_observable(pingpong, GeneralizedState("ping", (1.0,)), Observable("hit", "pong"), N=20, T=3.0)
    assert e.mean == 1.0 and e.ci == (1.0, 1.0) and e.miss_fraction == 0.0


def test_constant_observable():
    e = expectation([0.25] * 30)
    assert e.mean == 0.25 and e.half_width == 0.0


def test_miss_fraction_separate():
    e = expectation([1.0, NotHit, 3.0, NotHit])
    assert e.mean == 2.0 and e.miss_fraction == 0.5 and e.n == 4


def test_exponential_mean():
    lam = 2.0
    m = GsmpModel(
        [StateSpec("s", frozenset(), ("e",), {"e": 1.0}),
         StateSpec("t", frozenset({"done"}), ("e",), {"e": 1.0})],
        {("s", "e"): {"t": 1.0}, ("t", "e"): {"t": 1.0}},
        clock_defaults={"e": ResetDistribution.exponential(lam)},
    )
    # initial clocks are drawn from the same exponential law as the resets
    rng = np.random.default_rng(11)
    obs = Observable("hit", "done")
    vals = []
    for j in range(10_000):
        gs = GeneralizedState("s", (float(rng.exponential(1 / lam)),))
        vals.append(obs(sample_trace(m, gs, 20.0, stream_rng(0, 0, j))))
    e = expectation(vals)
    assert e.ci[0] <= 1 / lam <= e.ci[1]
    assert e.mean == pytest.approx(1 / lam, abs=0.02)


def test_ci_shrinks(relay):
    gs = GeneralizedState("ping", (0.8, 2.0))
    obs = Observable("cumr", rewards=RewardSpec({"ping": 1.0}), T=3.0)
    small = expected_observable(relay, gs, obs, N=50, T=3.0)
    big = expected_observable(relay, gs, obs, N=800, T=3.0)
    assert big.half_width < small.half_width


def test_deterministic_and_jobs_invariant(relay):
    gs = GeneralizedState("ping", (0.8, 2.0))
    obs = Observable("hit", "down")
    a = expected_observable(relay, gs, obs, N=40, T=5.0, seed=2)
    b = expected_observable(relay, gs, obs, N=40, T=5.0, seed=2, jobs=3)
    assert a.to_json() == b.to_json()


def test_continuity_report(relay):
    x = GeneralizedState("ping", (0.8, 2.0))
    pairs = [("same", x, x), ("shift", x, _evolve(x, 0.2, relay)),
             ("props", x, GeneralizedState("pong", (0.8,)))]
    obs = [Observable("hit", "down"),
           Observable("cumr", rewards=RewardSpec({"ping": 0.2, "pong": 0.1}), T=3.0)]
    est = lambda a, b: metric_estimate(relay, a, b, n=2, N=10, grid=0.05, T=3.0,
                                       inner_samples=4, quantum=0.1, horizon_check=False)
    rows = continuity_report(relay, pairs, obs, est, N=100, T=3.0)
    status = {(r.pair, r.observable): r.status for r in rows}
    assert all(status[("same", o.name)] == "pass" for o in obs)
    assert all(r.delta == 0.0 for r in rows if r.pair == "same")
    assert all(status[("props", o.name)] == "uninformative" for o in obs)
    assert all(status[("shift", o.name)] == "pass" for o in obs)
    text = rows_to_csv(rows, ["config {}"])
    assert text.splitlines()[1].startswith("pair,eps,")
    assert len(text.splitlines()) == 2 + len(rows)
