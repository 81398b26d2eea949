"""How close relabelled states of the symmetric fixture get without the structural quotient.

With the quotient the distance is exactly 0.  Without it, refine=1 leaves a
certified but open bracket at depth 3 (value = its midpoint); refine >= 2 closes it.
"""

import argparse
import time
from importlib import resources

from gsmp_metric import GeneralizedState, load_model
from gsmp_metric.config import RunConfig
from gsmp_metric.fixpoint import MetricEngine


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--depth", type=int, default=3)
    ap.add_argument("--refine", type=int, default=1)
    ap.add_argument("--samples", type=int, nargs="+", default=[10, 20, 40])
    ap.add_argument("--horizon", type=float, default=3.0)
    args = ap.parse_args()

    model = load_model(resources.files("gsmp_metric") / "fixtures" / "symmetric.json")
    left = GeneralizedState("left", (0.5, 3.0))
    right = GeneralizedState("right", (0.5, 3.0))
    print("N  value  lower  upper  budget  seconds")
    for n in args.samples:
        cfg = RunConfig(depth=args.depth, samples=n, grid=0.05, horizon=args.horizon,
                        inner_samples=4, quantum=0.1, refine=args.refine,
                        horizon_check=False)
        t = time.time()
        est = MetricEngine(model, cfg, quotient=False).estimate(left, right)
        print(f"{n:<3d} {est.value:.4f} {est.lower:.4f} {est.upper:.4f} {est.budget.total:.4f} "
              f"{time.time() - t:.1f}")


if __name__ == "__main__":
    main()
