from importlib import resources

import numpy as np
import pytest

from gsmp_metric import GsmpModel, load_model
from gsmp_metric.model import ResetDistribution, StateSpec

FIXTURES = resources.files("gsmp_metric") / "fixtures"


def fixture_path(name: str) -> str:
    return str(FIXTURES / name)


@pytest.fixture
def pingpong() -> GsmpModel:
    return load_model(fixture_path("pingpong.json"))


@pytest.fixture
def relay() -> GsmpModel:
    return load_model(fixture_path("relay.json"))


@pytest.fixture
def symmetric() -> GsmpModel:
    return load_model(fixture_path("symmetric.json"))


@pytest.fixture
def ctmc() -> GsmpModel:
    return load_model(fixture_path("ctmc.json"))


@pytest.fixture
def two_clock() -> GsmpModel:
    """One state with clocks a (rate 1) and b (rate 2)."""
    return GsmpModel(
        [StateSpec("s", frozenset({"p"}), ("a", "b"), {"a": 1.0, "b": 2.0})],
        {("s", "a"): {"s": 1.0}, ("s", "b"): {"s": 1.0}},
        clock_defaults={"a": ResetDistribution.uniform(1, 3), "b": ResetDistribution.uniform(1, 3)},
    )


def random_model(seed: int, n_states: int = 3) -> GsmpModel:
    """Small random GSMP: 1-2 events per state, continuous resets, two propositions."""
    rng = np.random.default_rng(seed)
    ids = [f"s{i}" for i in range(n_states)]
    events = ["a", "b"]
    specs, nxt = [], {}
    for s in ids:
        evs = tuple(events[: int(rng.integers(1, 3))])
        rates = {e: float(rng.uniform(0.5, 2.0)) for e in evs}
        props = frozenset({str(rng.choice(["p", "q"]))})
        specs.append(StateSpec(s, props, evs, rates))
        for e in evs:
            w = rng.dirichlet(np.ones(n_states))
            nxt[(s, e)] = {t: float(x) for t, x in zip(ids, w)}
            nxt[(s, e)][ids[-1]] += 1.0 - sum(nxt[(s, e)].values())
    defaults = {
        "a": ResetDistribution.uniform(*sorted(rng.uniform(0.3, 2.0, 2))),
        "b": ResetDistribution.exponential(float(rng.uniform(0.5, 2.0))),
    }
    return GsmpModel(specs, nxt, clock_defaults=defaults)
