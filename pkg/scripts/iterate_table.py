"""Depth-by-depth brackets of the metric between two relay states."""

import argparse
from importlib import resources

from gsmp_metric import load_model
from gsmp_metric.cli import parse_state
from gsmp_metric.config import RunConfig
from gsmp_metric.fixpoint import MetricEngine


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--x", default="ping:hit=0.8,fault=2.0")
    ap.add_argument("--y", default="ping:hit=0.6,fault=1.9")
    ap.add_argument("--max-depth", type=int, default=4)
    ap.add_argument("--samples", type=int, default=10)
    ap.add_argument("--refine", type=int, default=1)
    args = ap.parse_args()

    model = load_model(resources.files("gsmp_metric") / "fixtures" / "relay.json")
    x, y = parse_state(model, args.x), parse_state(model, args.y)
    cfg = RunConfig(samples=args.samples, grid=0.05, horizon=3.0, inner_samples=4, quantum=0.1,
                    refine=args.refine, horizon_check=False)
    eng = MetricEngine(model, cfg)
    print("n  lower   value   upper   depth   sampling  grid")
    for n in range(args.max_depth + 1):
        e = eng.estimate(x, y, n)
        b = e.budget
        print(f"{n}  {e.lower:.4f}  {e.value:.4f}  {e.upper:.4f}  {b.depth_term:.4f}  "
              f"{b.sampling_term:.4f}    {b.grid_term:.4f}")


if __name__ == "__main__":
    main()
