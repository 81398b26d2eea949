import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import fixture_path, random_model
from gsmp_metric import (
    GeneralizedState,
    GsmpModel,
    advance,
    load_model,
    step,
    time_to_first_expiry,
    validate_model,
)
from gsmp_metric.errors import (
    AdvanceBeyondExpiry,
    DegenerateModel,
    ModelFormatError,
    UniquenessViolation,
)
from gsmp_metric.model import ResetDistribution, StateSpec, structural_classes


def one_state(rates, clocks=None):
    evs = tuple(rates)
    return GsmpModel(
        [StateSpec("s", frozenset(), evs, dict(rates))],
        {("s", e): {"s": 1.0} for e in evs},
        clock_defaults={e: ResetDistribution.uniform(1, 2) for e in evs},
    )


def test_first_expiry_examples():
    m = one_state({"a": 1.0, "b": 2.0})
    assert time_to_first_expiry(GeneralizedState("s", (2.0, 6.0)), m) == (2.0, "a")
    m1 = one_state({"a": 2.5})
    assert time_to_first_expiry(GeneralizedState("s", (5.0,)), m1) == (2.0, "a")
    with pytest.raises(UniquenessViolation):
        time_to_first_expiry(GeneralizedState("s", (1.0, 2.0)), m)


def test_advance_examples():
    m = one_state({"a": 1.0, "b": 2.0})
    gs = GeneralizedState("s", (2.0, 6.0))
    assert advance(gs, 1.0, m) == GeneralizedState("s", (1.0, 4.0))
    assert advance(gs, 0.0, m) == gs
    with pytest.raises(AdvanceBeyondExpiry):
        advance(GeneralizedState("s", (2.0, 6.0)), 2.0, m)


def test_step_carries_clocks():
    # s --a--> t; b survives with its value, d is fresh from a point mass
    m = GsmpModel(
        [
            StateSpec("s", frozenset(), ("a", "b"), {"a": 1.0, "b": 1.0}),
            StateSpec("t", frozenset(), ("b", "d"), {"b": 1.0, "d": 1.0}),
        ],
        {("s", "a"): {"t": 1.0}, ("s", "b"): {"s": 1.0}, ("t", "b"): {"s": 1.0},
         ("t", "d"): {"t": 1.0}},
        resets={("s", "a", "t", "d"): ResetDistribution.point(5.0)},
        clock_defaults={e: ResetDistribution.uniform(1, 2) for e in "abd"},
    )
    nxt = step(m, GeneralizedState("s", (1.0, 5.0)), np.random.default_rng(0))
    assert nxt == GeneralizedState("t", (4.0, 5.0))


def test_self_loop_point_resets():
    m = GsmpModel(
        [StateSpec("s", frozenset(), ("a",), {"a": 1.0})],
        {("s", "a"): {"s": 1.0}},
        clock_defaults={"a": ResetDistribution.point(0.7)},
    )
    assert step(m, GeneralizedState("s", (0.3,)), np.random.default_rng(1)).clocks == (0.7,)


def test_forced_tie_is_degenerate():
    m = GsmpModel(
        [StateSpec("s", frozenset(), ("a", "b", "c"), {"a": 1.0, "b": 1.0, "c": 1.0})],
        {("s", e): {"s": 1.0} for e in "abc"},
        clock_defaults={e: ResetDistribution.point(1.0) for e in "abc"},
    )
    # a fires, b carries 1.0, the fresh clock for a is again 1.0: a tie with b
    with pytest.raises(DegenerateModel):
        step(m, GeneralizedState("s", (0.5, 1.5, 3.0)), np.random.default_rng(0))


def test_validate_fixtures():
    assert validate_model(load_model(fixture_path("relay.json"))).ok
    assert not validate_model(load_model(fixture_path("relay.json")))
    rep = validate_model(load_model(fixture_path("pingpong.json")))
    assert rep.ok and any("testing only" in v.message for v in rep)
    msgs = [v.message for v in validate_model(load_model(fixture_path("broken.json"))).errors]
    assert any("probability row sum ≠ 1" in m for m in msgs)
    assert any("rate must be > 0" in m for m in msgs)


def test_zero_rate_rejected():
    m = one_state({"a": 0.0})
    assert any("rate must be > 0" in v.message for v in validate_model(m).errors)


def test_missing_reset_reported():
    m = GsmpModel(
        [StateSpec("s", frozenset(), ("a",), {"a": 1.0})], {("s", "a"): {"s": 1.0}}
    )
    assert any("missing reset" in v.message for v in validate_model(m).errors)


def test_load_model_reports_position(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"states": [\n  {"id": "s",}\n]}')
    with pytest.raises(ModelFormatError) as err:
        load_model(p)
    assert err.value.line == 2


def test_json_roundtrip(relay):
    again = GsmpModel.from_json(json.loads(json.dumps(relay.to_json())))
    assert again.to_json() == relay.to_json()


def test_structural_classes(symmetric, relay):
    cls = structural_classes(symmetric)
    assert cls["left"] == cls["right"] != cls["hub"]
    assert len(set(structural_classes(relay).values())) == 3


@settings(max_examples=60, deadline=None)
@given(c=st.tuples(st.floats(0.1, 5), st.floats(0.1, 5)), u=st.floats(0, 1), v=st.floats(0, 1))
def test_advance_composes(c, u, v):
    m = one_state({"a": 1.0, "b": 2.0})
    gs = GeneralizedState("s", c)
    try:
        tau, _ = time_to_first_expiry(gs, m)
    except UniquenessViolation:
        return
    t1, t2 = u * tau * 0.5, v * tau * 0.49
    once = advance(gs, t1 + t2, m)
    twice = advance(advance(gs, t1, m), t2, m)
    assert np.allclose(once.clocks, twice.clocks, atol=1e-12)
    assert abs(time_to_first_expiry(once, m)[0] - (tau - t1 - t2)) <= 1e-12


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_step_shape_and_reproducibility(seed):
    m = random_model(seed % 50)
    s0 = next(iter(m.states))
    gs = GeneralizedState(s0, tuple(1.0 + 0.37 * i for i in range(len(m.events(s0)))))
    a = step(m, gs, np.random.default_rng(seed))
    b = step(m, gs, np.random.default_rng(seed))
    assert a == b
    assert len(a.clocks) == len(m.events(a.state))
    assert min(a.clocks) >= 0
