import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import transport_bruteforce, transport_lp
from gsmp_metric.errors import BadDistribution, InfeasibleWitness
from gsmp_metric.transport import (
    DiscreteDistribution,
    cluster_measure,
    dual_lower_bound,
    greedy_clusters,
    optimal_dual_witness,
    solve_transport,
    wasserstein,
)

ORACLES = json.loads((Path(__file__).parent / "data" / "oracles.json").read_text())


def dist(w):
    return DiscreteDistribution(list(range(len(w))), np.asarray(w, dtype=float))


@pytest.mark.parametrize("case", ORACLES["transport_uniform"])
def test_uniform_matches_frozen_bruteforce(case):
    C = np.array(case["C"])
    n = C.shape[0]
    val, cp = wasserstein(dist(np.full(n, 1 / n)), dist(np.full(n, 1 / n)), C)
    assert val == pytest.approx(case["value"], abs=1e-9)


@pytest.mark.parametrize("case", ORACLES["transport_general"])
def test_general_matches_frozen_lp(case):
    a, b, C = np.array(case["a"]), np.array(case["b"]), np.array(case["C"])
    val, cp = wasserstein(dist(a), dist(b), C)
    assert val == pytest.approx(case["value"], abs=1e-9)
    assert cp.marginal_error(a, b) < 1e-12


def test_two_by_two():
    c = ORACLES["transport_2x2"]
    val, _ = wasserstein(dist(c["a"]), dist(c["b"]), np.array(c["C"]))
    assert val == pytest.approx(0.15, abs=1e-12) and c["value"] == pytest.approx(0.15)


def test_dirac_pair():
    C = np.array([[0.37]])
    assert wasserstein(DiscreteDistribution.dirac("x"), DiscreteDistribution.dirac("y"), C)[0] == 0.37


def test_bad_distributions():
    with pytest.raises(BadDistribution):
        dist([0.5, 0.4])
    with pytest.raises(BadDistribution):
        dist([1.2, -0.2])
    with pytest.raises(ValueError):
        wasserstein(dist([1.0]), dist([1.0]), np.array([[1.5]]))


def test_dual_witness_checks_lipschitz():
    P = DiscreteDistribution(["x"], [1.0])
    Q = DiscreteDistribution(["y"], [1.0])
    C = np.array([[0.3]])
    assert dual_lower_bound(P, Q, C, {"x": 0.3, "y": 0.0}) == pytest.approx(0.3)
    with pytest.raises(InfeasibleWitness):
        dual_lower_bound(P, Q, C, {"x": 0.5, "y": 0.0})


def test_warm_start_agrees():
    rng = np.random.default_rng(7)
    a = b = np.full(12, 1 / 12)
    C = rng.uniform(size=(12, 12))
    first = solve_transport(a, b, C)
    C2 = C + rng.uniform(0, 0.1, C.shape)
    warm = solve_transport(a, b, C2, first.basis)
    assert warm.value == pytest.approx(solve_transport(a, b, C2).value, abs=1e-12)


def metric_cost(pts_p, pts_q):
    return np.minimum(1.0, np.abs(np.subtract.outer(pts_p, pts_q)))


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 6), seed=st.integers(0, 2**31))
def test_uniform_bruteforce_property(n, seed):
    C = np.random.default_rng(seed).uniform(size=(n, n))
    u = np.full(n, 1 / n)
    assert solve_transport(u, u, C).value == pytest.approx(transport_bruteforce(C), abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(m=st.integers(1, 7), n=st.integers(1, 7), seed=st.integers(0, 2**31))
def test_primal_matches_lp_and_dual(m, n, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.dirichlet(np.ones(m)), rng.dirichlet(np.ones(n))
    xs, ys = rng.uniform(0, 2, m), rng.uniform(0, 2, n)
    P, Q = DiscreteDistribution(list(xs), a), DiscreteDistribution(list(ys), b)
    C = metric_cost(xs, ys)
    val, _ = wasserstein(P, Q, C)
    assert val == pytest.approx(transport_lp(a, b, C), abs=1e-9)
    dual, h = optimal_dual_witness(P, Q, C)
    assert dual == pytest.approx(val, abs=1e-6)
    assert dual_lower_bound(P, Q, C, h, tol=1e-7) <= val + 1e-9


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_metric_axioms_of_lifting(seed):
    rng = np.random.default_rng(seed)
    pts = [rng.uniform(0, 2, 4) for _ in range(3)]
    ws = [rng.dirichlet(np.ones(4)) for _ in range(3)]
    D = [DiscreteDistribution(list(p), w) for p, w in zip(pts, ws)]
    W = lambda i, j: wasserstein(D[i], D[j], metric_cost(pts[i], pts[j]))[0]
    assert W(0, 0) == pytest.approx(0, abs=1e-12)
    assert W(0, 1) == pytest.approx(W(1, 0), abs=1e-12)
    assert W(0, 2) <= W(0, 1) + W(1, 2) + 1e-9
    # never more than total variation when the cost is bounded by 1
    assert W(0, 1) <= 1.0 + 1e-12


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), eps=st.floats(0.05, 0.5))
def test_monotone_in_cost(seed, eps):
    rng = np.random.default_rng(seed)
    a, b = rng.dirichlet(np.ones(5)), rng.dirichlet(np.ones(5))
    C = rng.uniform(0, 1 - eps, (5, 5))
    lo = solve_transport(a, b, C).value
    hi = solve_transport(a, b, C + rng.uniform(0, eps, C.shape)).value
    assert lo <= hi + 1e-12


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), eps=st.floats(0.02, 0.5), cap=st.sampled_from([None, 3, 8]))
def test_clustering_within_two_eps(seed, eps, cap):
    rng = np.random.default_rng(seed)
    xs = list(rng.uniform(0, 1, 30))
    d = lambda x, y: min(1.0, abs(x - y))
    reps, labels, residual = greedy_clusters(xs, d, eps, cap)
    for c, r in enumerate(reps):
        members = [x for x, l in zip(xs, labels) if l == c]
        assert max(abs(x - y) for x in members for y in members) <= eps + 1e-12
    Q = cluster_measure(xs, d, eps, cap)
    P = DiscreteDistribution.uniform(xs)
    val, _ = wasserstein(P, Q, metric_cost(np.array(xs), np.array(Q.points)))
    assert val <= max(eps, residual) + eps + 1e-9
