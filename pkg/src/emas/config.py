"""Run configuration, stop conditions, and provenance echoing."""

from __future__ import annotations

import re
from dataclasses import dataclass, field, fields

from .core import EmasParams, StructuralError
from .rng import RNG_ALGORITHM


@dataclass(frozen=True)
class StopCondition:
    """A run stops when any configured bound fires.

    ``max_steps`` is a deterministic budget used by reproducibility tests;
    the CLI exposes duration, evaluation count, and target objective.
    """

    duration_s: float | None = None
    max_evals: int | None = None
    target_objective: float | None = None
    max_steps: int | None = None

    def __post_init__(self):
        if (self.duration_s is None and self.max_evals is None
                and self.target_objective is None and self.max_steps is None):
            raise StructuralError("stop condition requires at least one bound")

    def should_stop(self, elapsed_s: float, evals: int, best: float,
                    steps: int) -> bool:
        if self.duration_s is not None and elapsed_s >= self.duration_s:
            return True
        if self.max_evals is not None and evals >= self.max_evals:
            return True
        if self.target_objective is not None and best < self.target_objective:
            return True
        if self.max_steps is not None and steps >= self.max_steps:
            return True
        return False


_DURATION_RE = re.compile(r"^(\d+(?:\.\d+)?)(ms|s|m|h)$")
_DURATION_UNITS = {"ms": 0.001, "s": 1.0, "m": 60.0, "h": 3600.0}


def parse_duration(text: str) -> float:
    """Parse '600s', '10m', '1.5h', '250ms' into seconds."""
    m = _DURATION_RE.match(text.strip())
    if not m:
        raise StructuralError(f"cannot parse duration '{text}' (use e.g. 600s or 10m)")
    return float(m.group(1)) * _DURATION_UNITS[m.group(2)]


@dataclass(frozen=True)
class RunConfig:
    """Everything needed to reproduce a run, echoed into its CSV."""

    params: EmasParams = field(default_factory=EmasParams)
    engine: str = "sync"
    dispatch: str | None = None
    problem: str = "rastrigin"
    islands: int = 1
    topology: str = "experiment"
    seed: int = 0
    stop: StopCondition = field(default_factory=lambda: StopCondition(duration_s=60.0))
    snapshot_interval_s: float = 1.0
    time_source: str = "wall"
    checked: bool = False
    island_id: int | None = None
    listen: str | None = None
    peers: tuple[str, ...] = ()

    def __post_init__(self):
        if self.engine not in ("sync", "async"):
            raise StructuralError(f"unknown engine '{self.engine}'")
        if self.topology not in ("ring", "complete", "experiment"):
            raise StructuralError(f"unknown topology '{self.topology}'")
        if self.time_source not in ("wall", "steps"):
            raise StructuralError(f"unknown time source '{self.time_source}'")
        if self.islands < 1:
            raise StructuralError("islands must be at least 1")

    def echo(self) -> dict:
        """Flat provenance mapping for the CSV header."""
        out = {
            "engine": self.engine,
            "problem": self.problem,
            "islands": self.islands,
            "topology": self.topology,
            "seed": self.seed,
            "snapshot_interval_s": self.snapshot_interval_s,
            "time_source": self.time_source,
            "checked": self.checked,
            "rng": RNG_ALGORITHM,
        }
        if self.dispatch:
            out["dispatch"] = self.dispatch
        for f in fields(EmasParams):
            out[f.name] = getattr(self.params, f.name)
        stop = self.stop
        if stop.duration_s is not None:
            out["stop_duration_s"] = stop.duration_s
        if stop.max_evals is not None:
            out["stop_max_evals"] = stop.max_evals
        if stop.target_objective is not None:
            out["stop_target"] = stop.target_objective
        if stop.max_steps is not None:
            out["stop_max_steps"] = stop.max_steps
        return out

    def scenario_key(self) -> str:
        """Grouping key for summaries: the echo minus per-run identity."""
        skip = {"seed"}
        return " ".join(f"{k}={v}" for k, v in sorted(self.echo().items())
                        if k not in skip)

    @classmethod
    def from_echo(cls, echo: dict) -> "RunConfig":
        """Rebuild a configuration from its CSV provenance echo.

        Together with echo() this round-trips every field that affects the
        run, so any result file doubles as a reusable config file.
        """
        def get(key, conv, default):
            return conv(echo[key]) if key in echo else default

        as_bool = lambda v: str(v) in ("True", "true", "1")
        params = EmasParams(**{
            f.name: f.type_conv(echo[f.name])
            for f in _PARAM_FIELDS if f.name in echo})
        stop = StopCondition(
            duration_s=get("stop_duration_s", float, None),
            max_evals=get("stop_max_evals", int, None),
            target_objective=get("stop_target", float, None),
            max_steps=get("stop_max_steps", int, None))
        return cls(
            params=params,
            engine=get("engine", str, "sync"),
            dispatch=get("dispatch", str, None),
            problem=get("problem", str, "rastrigin"),
            islands=get("islands", int, 1),
            topology=get("topology", str, "experiment"),
            seed=get("seed", int, 0),
            stop=stop,
            snapshot_interval_s=get("snapshot_interval_s", float, 1.0),
            time_source=get("time_source", str, "wall"),
            checked=get("checked", as_bool, False),
        )


class _ParamField:
    def __init__(self, name, type_conv):
        self.name = name
        self.type_conv = type_conv


_PARAM_FIELDS = [
    _ParamField(f.name, float if f.type in ("float", float) else int)
    for f in fields(EmasParams)
]
