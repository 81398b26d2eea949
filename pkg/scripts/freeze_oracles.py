"""Recompute the reference values used by the test suite and write them to tests/data.

Every number here comes from the brute-force routines in tests/oracles.py,
never from the package solvers.  Run after changing an oracle, then commit
the JSON.
"""

import json
import sys
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "tests"))

import oracles  # noqa: E402
from gsmp_metric.traces import ScalarTrace  # noqa: E402


def transport_cases(seed=2024):
    rng = np.random.default_rng(seed)
    uniform, general = [], []
    for n in (3, 4, 5, 6) * 3:
        C = rng.uniform(0, 1, (n, n)).round(6)
        uniform.append({"C": C.tolist(), "value": oracles.transport_bruteforce(C)})
    for _ in range(10):
        m, n = rng.integers(2, 9, 2)
        a = rng.dirichlet(np.ones(m)).round(8)
        b = rng.dirichlet(np.ones(n)).round(8)
        a[-1] = 1 - a[:-1].sum()
        b[-1] = 1 - b[:-1].sum()
        C = rng.uniform(0, 1, (m, n)).round(6)
        general.append({"a": a.tolist(), "b": b.tolist(), "C": C.tolist(),
                        "value": oracles.transport_lp(a, b, C)})
    return uniform, general


def scalar_cases():
    f = lambda b: ScalarTrace.step([(0.0, 0.0), (b, 1.0)], 2.0)
    out = {}
    for b in (0.3, 0.4, 0.45):
        out[f"f_{b}|f_0.5"] = oracles.scalar_j2_dense(f(b), f(0.5))
    pulse = ScalarTrace.step([(0.0, 0.0), (0.4, 1.0), (0.5, 0.0)], 2.0)
    zero = ScalarTrace.step([(0.0, 0.0)], 2.0)
    ramp = ScalarTrace.linear([(0.0, 0.0), (0.45, 0.0), (0.55, 1.0)], 2.0)
    dj = ScalarTrace.step([(0.0, 0.0), (0.4, 1.0), (0.45, 0.0), (0.5, 1.0)], 2.0)
    out["fp_0.4|zero"] = oracles.scalar_j2_dense(pulse, zero)
    out["ramp|f_0.5"] = oracles.scalar_j2_dense(ramp, f(0.5))
    out["double_jump|f_0.5"] = oracles.scalar_j2_dense(dj, f(0.5))
    return out


def main():
    uniform, general = transport_cases()
    data = {
        "transport_uniform": uniform,
        "transport_general": general,
        "scalar_j2": scalar_cases(),
        "pingpong_3.5": oracles.pingpong_by_hand(3.5),
        "transport_2x2": {"a": [0.5, 0.5], "b": [0.5, 0.5], "C": [[0.1, 0.4], [0.3, 0.2]],
                          "value": oracles.transport_lp(np.array([.5, .5]), np.array([.5, .5]),
                                                        np.array([[0.1, 0.4], [0.3, 0.2]]))},
    }
    out = ROOT / "tests" / "data" / "oracles.json"
    out.write_text(json.dumps(data, indent=1) + "\n")
    print(f"wrote {out}")
    for k, v in data["scalar_j2"].items():
        print(f"{k:20s} {v:.6f}")


if __name__ == "__main__":
    main()
