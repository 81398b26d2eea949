"""Command-line interface: ``gsmp-metric <command> ...``.

Exit codes: 0 success, 1 validation failure (or a failed continuity row),
2 runtime or input error.  Output is deterministic for fixed inputs and
seed, independent of --jobs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import fields
from importlib import resources
from pathlib import Path
from typing import Sequence

from .config import RunConfig
from .errors import GsmpError, ModelFormatError
from .model import GeneralizedState, GsmpModel, _evolve, load_model, validate_model

# config fields that change the numbers; jobs and outputs do not
RESULT_FIELDS = [f.name for f in fields(RunConfig) if f.name not in ("jobs", "outputs")]


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=True)


def config_header(cfg: RunConfig) -> dict:
    d = cfg.to_dict()
    return {k: d[k] for k in RESULT_FIELDS}


def parse_state(model: GsmpModel, spec: str) -> GeneralizedState:
    """``state`` or ``state:event=clock,event=clock``; missing clocks default to their mean."""
    name, _, rest = spec.partition(":")
    clocks = {}
    for item in filter(None, (s.strip() for s in rest.split(","))):
        ev, eq, val = item.partition("=")
        if not eq:
            raise ValueError(f"bad clock assignment {item!r} in {spec!r}; use event=value")
        clocks[ev.strip()] = float(val)
    return _complete(model, name.strip(), clocks)


def _complete(model: GsmpModel, name: str, clocks: dict) -> GeneralizedState:
    if name not in model.states:
        raise ValueError(f"unknown state {name!r}")
    for e in model.events(name):
        if e not in clocks:
            d = model.clock_defaults.get(e)
            if d is None:
                raise ValueError(f"no clock given for event {e!r} of {name!r}")
            clocks[e] = d.mean()
    return model.genstate(name, clocks)


def state_from_json(model: GsmpModel, obj) -> GeneralizedState:
    if isinstance(obj, str):
        return parse_state(model, obj)
    gs = _complete(model, str(obj["state"]), {k: float(v) for k, v in obj.get("clocks", {}).items()})
    return gs


def load_pairs(model: GsmpModel, path: str) -> list[tuple[str, GeneralizedState, GeneralizedState]]:
    """JSON list of {name, x, y} or {name, x, shift}; states as strings or objects."""
    try:
        rows = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelFormatError(exc.msg, exc.lineno, exc.colno) from None
    out = []
    for n, r in enumerate(rows):
        x = state_from_json(model, r["x"])
        if "shift" in r:
            y = _evolve(x, float(r["shift"]), model)
        else:
            y = state_from_json(model, r["y"])
        out.append((str(r.get("name", f"pair{n}")), x, y))
    return out


def _gs_json(model: GsmpModel, gs: GeneralizedState) -> dict:
    return {"state": gs.state, "clocks": gs.clock_map(model)}


# commands -----------------------------------------------------------------


def cmd_validate(args) -> int:
    model = load_model(args.model)
    report = validate_model(model)
    for v in report.violations:
        print(v)
    n = len(report.errors)
    print(f"{n} error(s), {len(report.violations) - n} warning(s)")
    return 1 if n else 0


def cmd_simulate(args) -> int:
    from .traces import sample_traces

    model = load_model(args.model)
    gs = parse_state(model, args.state)
    traces = sample_traces(model, gs, args.samples, args.horizon, args.seed, jobs=args.jobs, stream=(0,))
    lines = [json.dumps({"seed": args.seed, "samples": args.samples, "horizon": args.horizon,
                         "start": _gs_json(model, gs)}, sort_keys=True)]
    lines += [json.dumps(tr.to_json(), sort_keys=True) for tr in traces]
    _emit("\n".join(lines) + "\n", args.out)
    return 0


def _run_config(args) -> RunConfig:
    over = {f: getattr(args, f, None) for f in [*RESULT_FIELDS, "jobs"]}
    if getattr(args, "no_horizon_check", False):
        over["horizon_check"] = False
    return RunConfig.from_env(**over)


def cmd_distance(args) -> int:
    from .fixpoint import MetricEngine

    model = load_model(args.model)
    cfg = _run_config(args)
    x, y = parse_state(model, args.x), parse_state(model, args.y)
    est = MetricEngine(model, cfg, quotient=not args.no_quotient).estimate(x, y)
    out = {"config": config_header(cfg), "x": _gs_json(model, x), "y": _gs_json(model, y),
           **est.to_json()}
    _emit(_dump(out) + "\n", args.out)
    return 0


def cmd_j2(args) -> int:
    from .j2 import j2_distance
    from .traces import ScalarTrace, TimedTrace

    def load(path):
        try:
            obj = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ModelFormatError(exc.msg, exc.lineno, exc.colno) from None
        if "segments" in obj:
            if args.model is None:
                raise ValueError(f"{path}: timed traces need --model")
            return TimedTrace.from_json(obj, load_model(args.model))
        return ScalarTrace.from_json(obj)

    f, g = load(args.a), load(args.b)
    value, err = j2_distance(f, g, grid=args.grid, until=args.until)
    _emit(_dump({"value": value, "grid_error": err, "grid": args.grid, "until": args.until}) + "\n",
          args.out)
    return 0


def cmd_logic(args) -> int:
    from .logic import Evaluator, parse_expr, to_sexpr

    model = load_model(args.model)
    cfg = _run_config(args)
    expr = parse_expr(Path(args.expr).read_text())
    ev = Evaluator(model, cfg.k, cfg.samples, cfg.horizon, cfg.grid, cfg.seed, cfg.inner_samples)
    out = {"config": config_header(cfg), "expr": to_sexpr(expr), "values": []}
    for spec in args.state:
        gs = parse_state(model, spec)
        out["values"].append({"state": _gs_json(model, gs), "value": ev.eval_f(expr, gs)})
    if len(out["values"]) == 1:
        out["value"] = out["values"][0]["value"]
    _emit(_dump(out) + "\n", args.out)
    return 0


def _load_observables(path: str):
    from .observables import Observable

    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelFormatError(exc.msg, exc.lineno, exc.colno) from None
    return [Observable.from_json(o) for o in (obj if isinstance(obj, list) else [obj])]


def cmd_observables(args) -> int:
    from .observables import expected_observable

    model = load_model(args.model)
    gs = parse_state(model, args.state)
    res = []
    for obs in _load_observables(args.obs):
        if obs.rewards is not None:
            problems = obs.rewards.validate(model)
            if problems:
                for p in problems:
                    print(f"error: rewards: {p}", file=sys.stderr)
                return 1
        T = max(args.horizon, obs.horizon_needed(args.horizon))
        e = expected_observable(model, gs, obs, args.samples, T, args.seed, args.jobs)
        res.append({"observable": obs.name, **e.to_json()})
    out = {"config": {"samples": args.samples, "horizon": args.horizon, "seed": args.seed},
           "state": _gs_json(model, gs), "results": res}
    _emit(_dump(out) + "\n", args.out)
    return 0


def cmd_continuity(args) -> int:
    from .fixpoint import MetricEngine
    from .observables import continuity_report, rows_to_csv

    model = load_model(args.model)
    cfg = _run_config(args)
    engine = MetricEngine(model, cfg)
    obs = _load_observables(args.obs)
    for o in obs:
        if o.rewards is not None and o.rewards.validate(model):
            print("error: rewards: " + "; ".join(o.rewards.validate(model)), file=sys.stderr)
            return 1
    rows = continuity_report(model, load_pairs(model, args.pairs), obs, engine.estimate,
                             N=cfg.samples, T=cfg.horizon, seed=cfg.seed, jobs=cfg.jobs)
    header = [f"config {json.dumps(config_header(cfg), sort_keys=True)}"]
    _emit(rows_to_csv(rows, header), args.out)
    return 1 if any(r.status == "fail" for r in rows) else 0


def cmd_manual(args) -> int:
    print(resources.files("gsmp_metric").joinpath("MANUAL.md").read_text(), end="")
    return 0


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


# parser -------------------------------------------------------------------


def _add_run(p: argparse.ArgumentParser, metric: bool = True) -> None:
    p.add_argument("--k", type=float)
    p.add_argument("--samples", "-N", type=int)
    p.add_argument("--grid", type=float)
    p.add_argument("--horizon", "-T", type=float)
    p.add_argument("--inner-samples", dest="inner_samples", type=int)
    if metric:
        p.add_argument("--depth", "-n", type=int)
        p.add_argument("--work-limit", dest="work_limit", type=int)
        p.add_argument("--quantum", type=float)
        p.add_argument("--bootstrap", type=int)
        p.add_argument("--inner-bootstrap", dest="inner_bootstrap", type=int)
        p.add_argument("--refine", type=int)
        p.add_argument("--candidates", type=int)
        p.add_argument("--lookahead", type=float)
        p.add_argument("--no-horizon-check", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--jobs", type=int, default=None)
    common.add_argument("--out", "-o")

    ap = argparse.ArgumentParser(prog="gsmp-metric", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("validate", parents=[common], help="check a model file")
    p.add_argument("model")
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("simulate", parents=[common], help="sample traces as JSONL")
    p.add_argument("model")
    p.add_argument("--state", required=True)
    p.add_argument("--samples", "-N", type=int, default=10)
    p.add_argument("--horizon", "-T", type=float, default=10.0)
    p.set_defaults(fn=cmd_simulate, plain=True)

    p = sub.add_parser("distance", parents=[common], help="estimate the metric between two states")
    p.add_argument("model")
    p.add_argument("--x", required=True)
    p.add_argument("--y", required=True)
    p.add_argument("--no-quotient", action="store_true")
    _add_run(p)
    p.set_defaults(fn=cmd_distance)

    p = sub.add_parser("j2", parents=[common], help="J2 distance between two trace files")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--model")
    p.add_argument("--grid", type=float, default=0.01)
    p.add_argument("--until", type=float)
    p.set_defaults(fn=cmd_j2)

    p = sub.add_parser("logic", parents=[common], help="evaluate an F-expression file")
    p.add_argument("model")
    p.add_argument("expr")
    p.add_argument("--state", action="append", required=True)
    _add_run(p, metric=False)
    p.set_defaults(fn=cmd_logic)

    p = sub.add_parser("observables", parents=[common], help="expected observables from a state")
    p.add_argument("model")
    p.add_argument("--state", required=True)
    p.add_argument("--obs", required=True)
    p.add_argument("--samples", "-N", type=int, default=200)
    p.add_argument("--horizon", "-T", type=float, default=10.0)
    p.set_defaults(fn=cmd_observables, plain=True)

    p = sub.add_parser("continuity", parents=[common], help="observable continuity report (CSV)")
    p.add_argument("model")
    p.add_argument("--pairs", required=True)
    p.add_argument("--obs", required=True)
    _add_run(p)
    p.set_defaults(fn=cmd_continuity)

    p = sub.add_parser("manual", help="print the manual")
    p.set_defaults(fn=cmd_manual)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "plain", False) or args.cmd in ("validate", "j2"):
        # commands without a RunConfig still honor the environment overrides
        if args.seed is None:
            args.seed = int(os.environ.get("GSMP_SEED", 0))
        if args.jobs is None:
            args.jobs = int(os.environ.get("GSMP_JOBS", 1))
    elif args.cmd != "manual" and args.jobs is None and "GSMP_JOBS" not in os.environ:
        args.jobs = os.cpu_count() or 1
    try:
        return args.fn(args)
    except ModelFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (GsmpError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
