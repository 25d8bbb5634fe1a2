"""Run summaries: aligned tables, gnuplot-ready series, and figures.

The summarizer groups run CSVs into scenarios (identical configuration up
to the seed), prints per-scenario statistics, and writes two-column series
(time vs best objective, time vs evaluation count) that gnuplot or any
plotting tool can consume directly.  When figure output is enabled the same
series are also rendered to PNG files next to the data.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from statistics import mean, median

from .metrics import Sample, read_csv, timelines_from_samples

logger = logging.getLogger(__name__)


@dataclass
class RunSummary:
    """One CSV reduced to its end state."""

    path: str
    scenario: str
    seed: str
    final_best: float      # mean over islands of each island's final best
    global_best: float     # min over islands
    total_evaluations: int
    duration_ms: int
    samples: list[Sample]


def _scenario_key(echo: dict) -> str:
    skip = {"seed"}
    return " ".join(f"{k}={v}" for k, v in sorted(echo.items()) if k not in skip)


def load_run(path: str) -> RunSummary:
    echo, samples, warnings = read_csv(path)
    for w in warnings:
        logger.warning("%s", w)
    if not samples:
        raise ValueError(f"{path}: no samples")
    per_island = timelines_from_samples(samples)
    finals = [tl.final for tl in per_island.values()]
    return RunSummary(
        path=str(path),
        scenario=_scenario_key(echo) or "(no config echo)",
        seed=echo.get("seed", "?"),
        final_best=mean(f.best for f in finals),
        global_best=min(f.best for f in finals),
        total_evaluations=sum(f.evaluations for f in finals),
        duration_ms=max(s.time_ms for s in samples),
        samples=samples,
    )


def load_runs(paths) -> list[RunSummary]:
    runs = []
    for path in paths:
        try:
            runs.append(load_run(path))
        except (ValueError, OSError) as exc:
            logger.warning("skipping %s: %s", path, exc)
    return runs


def summary_table(runs: list[RunSummary]) -> str:
    """Aligned per-scenario statistics over the loaded runs."""
    groups: dict[str, list[RunSummary]] = {}
    for run in runs:
        groups.setdefault(run.scenario, []).append(run)
    header = ("scenario", "runs", "mean_final", "median_final",
              "mean_evals", "mean_ms")
    rows = [header]
    for scenario in sorted(groups):
        rs = groups[scenario]
        label = _short_label(scenario)
        rows.append((
            label,
            str(len(rs)),
            f"{mean(r.final_best for r in rs):.6g}",
            f"{median(r.final_best for r in rs):.6g}",
            f"{mean(r.total_evaluations for r in rs):.6g}",
            f"{mean(r.duration_ms for r in rs):.6g}",
        ))
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    lines = []
    for idx, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip())
        if idx == 0:
            lines.append("  ".join("-" * widths[i] for i in range(len(header))))
    return "\n".join(lines)


def _short_label(scenario: str) -> str:
    keep = ("engine", "dispatch", "islands", "topology", "problem_size",
            "stop_duration_s", "stop_max_evals")
    parts = dict(p.split("=", 1) for p in scenario.split() if "=" in p)
    label = " ".join(f"{k}={parts[k]}" for k in keep if k in parts)
    return label or scenario[:40]


def _grid_series(runs: list[RunSummary], attr: str,
                 points: int = 200) -> list[tuple[float, float]]:
    """Average a step-function metric across runs on a regular time grid."""
    horizon = max(r.duration_ms for r in runs)
    if horizon <= 0:
        horizon = 1
    grid = [horizon * i / (points - 1) for i in range(points)]
    series = []
    for t in grid:
        values = []
        for run in runs:
            last = None
            for s in run.samples:
                if s.time_ms <= t:
                    last = s
                else:
                    break
            if last is not None:
                values.append(getattr(last, attr))
        if values:
            series.append((t, mean(values)))
    return series


def write_series(runs: list[RunSummary], out_dir: str) -> list[str]:
    """Two-column .dat files per scenario: best-vs-time, evals-vs-time."""
    os.makedirs(out_dir, exist_ok=True)
    groups: dict[str, list[RunSummary]] = {}
    for run in runs:
        groups.setdefault(run.scenario, []).append(run)
    written = []
    for idx, scenario in enumerate(sorted(groups)):
        rs = groups[scenario]
        slug = f"scenario{idx:02d}"
        for attr, suffix in (("best", "fitness"), ("evaluations", "evals")):
            path = os.path.join(out_dir, f"{slug}_{suffix}.dat")
            with open(path, "w") as fh:
                fh.write(f"# {scenario}\n# time_ms {attr}\n")
                for t, v in _grid_series(rs, attr):
                    fh.write(f"{t:.0f} {v:.10g}\n")
            written.append(path)
    return written


def render_figures(runs: list[RunSummary], out_dir: str) -> list[str]:
    """Render best-vs-time and evals-vs-time PNGs alongside the series."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    os.makedirs(out_dir, exist_ok=True)
    groups: dict[str, list[RunSummary]] = {}
    for run in runs:
        groups.setdefault(run.scenario, []).append(run)

    written = []
    specs = (
        ("best", "best objective so far", "fitness_vs_time.png", "log"),
        ("evaluations", "objective evaluations", "evals_vs_time.png", "linear"),
    )
    for attr, ylabel, filename, yscale in specs:
        fig, ax = plt.subplots(figsize=(7.0, 4.2))
        for scenario in sorted(groups):
            series = _grid_series(groups[scenario], attr)
            if not series:
                continue
            xs = [t / 1000.0 for t, _ in series]
            ys = [v for _, v in series]
            ax.plot(xs, ys, label=_short_label(scenario))
        ax.set_xlabel("time [s]")
        ax.set_ylabel(ylabel)
        if yscale == "log":
            positive = all(v > 0 for g in groups.values()
                           for _, v in _grid_series(g, attr))
            if positive:
                ax.set_yscale("log")
        ax.legend(fontsize=7)
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        path = os.path.join(out_dir, filename)
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    return written
