"""Numerical tolerances and run parameters shared by every module."""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field


@dataclass(frozen=True)
class Tolerances:
    tie: float = 1e-12
    prob_sum: float = 1e-9
    weight_sum: float = 1e-9
    lp_gap: float = 1e-9
    reset_retries: int = 100
    zeno_guard: int = 10**6


TOL = Tolerances()


@dataclass
class RunConfig:
    """Parameters of a metric / logic / observable run.

    ``samples`` is the number of traces drawn per state at the top level;
    nested estimates use ``inner_samples``.  ``quantum`` is the resolution at
    which evolution offsets are rounded for the memo table (defaults to
    ``grid``).  ``refine`` is the number of recursion levels whose trace
    distances are refined by recursive evaluation; below that, iterates are
    replaced by certified brackets.  ``candidates`` caps the matches tried
    per graph point during refinement, and ``lookahead`` is the extra time
    simulated past the horizon so that shifted graph points can be matched.
    """

    k: float = 0.5
    depth: int = 3
    samples: int = 200
    grid: float = 0.01
    horizon: float = 10.0
    seed: int = 0
    work_limit: int = 200_000
    inner_samples: int = 16
    quantum: float | None = None
    bootstrap: int = 20
    inner_bootstrap: int = 8
    horizon_check: bool = True
    refine: int = 1
    candidates: int = 4
    lookahead: float = 1.0
    jobs: int = 1
    outputs: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not 0 < self.k <= 0.5:
            raise ValueError(f"k must lie in (0, 1/2], got {self.k}")
        if self.depth < 0:
            raise ValueError("depth must be >= 0")
        if self.samples < 1 or self.inner_samples < 1:
            raise ValueError("sample counts must be >= 1")
        if self.grid <= 0 or self.horizon <= 0:
            raise ValueError("grid and horizon must be > 0")
        if self.quantum is not None and self.quantum <= 0:
            raise ValueError("quantum must be > 0")
        if self.refine < 0 or self.candidates < 1 or self.lookahead < 0:
            raise ValueError("refine >= 0, candidates >= 1 and lookahead >= 0 required")
        if self.work_limit < 1:
            raise ValueError("work_limit must be >= 1")

    @property
    def q(self) -> float:
        return self.grid if self.quantum is None else self.quantum

    def to_dict(self) -> dict:
        d = asdict(self)
        d["quantum"] = self.q
        return d

    @classmethod
    def from_env(cls, **overrides) -> "RunConfig":
        """Build a config, letting GSMP_SEED / GSMP_JOBS override the defaults.

        Explicit keyword overrides win over the environment.
        """
        env: dict = {}
        if "GSMP_SEED" in os.environ:
            env["seed"] = int(os.environ["GSMP_SEED"])
        if "GSMP_JOBS" in os.environ:
            env["jobs"] = int(os.environ["GSMP_JOBS"])
        env.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**env)
