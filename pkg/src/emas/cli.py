"""Command-line interface: run engines, summarize result files.

Exit codes: 0 on a normal stop, 1 on a configuration or usage error, 2 when
the run ended in population extinction.
"""

from __future__ import annotations

import logging
import os
import sys

import click

from .config import RunConfig, StopCondition, parse_duration
from .core import EmasParams, StructuralError
from .metrics import write_csv
from .operators import make_objective

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_EXTINCT = 2


@click.group()
@click.option("--verbose", is_flag=True, help="Enable debug logging.")
def cli(verbose: bool):
    """Energy-based evolutionary multi-agent optimization engine."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


@cli.command()
@click.option("--engine", type=click.Choice(["sync", "async"]), default="sync",
              show_default=True)
@click.option("--dispatch", default=None,
              help="Async execution policy: own | pool:N | single.")
@click.option("--problem", default="rastrigin", show_default=True)
@click.option("--problem-size", type=int, default=100, show_default=True)
@click.option("--initial-size", type=int, default=50, show_default=True)
@click.option("--initial-energy", type=int, default=10, show_default=True)
@click.option("--reproduction-threshold", type=int, default=10, show_default=True)
@click.option("--reproduction-transfer", type=int, default=5, show_default=True)
@click.option("--fight-transfer", type=int, default=10, show_default=True)
@click.option("--fight-arena-size", type=int, default=2, show_default=True)
@click.option("--migration-probability", type=float, default=0.001, show_default=True)
@click.option("--migration-energy-min", type=int, default=0, show_default=True)
@click.option("--mutation-rate", type=float, default=0.1, show_default=True)
@click.option("--mutation-range", type=float, default=0.05, show_default=True)
@click.option("--mutation-probability", type=float, default=0.75, show_default=True)
@click.option("--recombination-probability", type=float, default=0.3, show_default=True)
@click.option("--islands", type=int, default=1, show_default=True)
@click.option("--topology", type=click.Choice(["ring", "complete", "experiment"]),
              default="experiment", show_default=True)
@click.option("--listen", default=None, metavar="HOST:PORT",
              help="Run as one distributed island listening here.")
@click.option("--peer", "peers", multiple=True, metavar="HOST:PORT",
              help="Peer island address (repeatable).")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--repeat", type=int, default=1, show_default=True,
              help="Run N times with seeds seed .. seed+N-1.")
@click.option("--duration", default=None, metavar="Xs|Xm",
              help="Wall-clock budget, e.g. 600s or 10m.")
@click.option("--max-evals", type=int, default=None)
@click.option("--target-fitness", type=float, default=None,
              help="Stop once the best objective drops below this value.")
@click.option("--max-steps", type=int, default=None,
              help="Deterministic step budget (reproducibility runs).")
@click.option("--snapshot-interval", default="1s", show_default=True)
@click.option("--time-source", type=click.Choice(["wall", "steps"]),
              default="wall", show_default=True,
              help="'steps' stamps samples with the step index, making CSV"
                   " bodies reproducible.")
@click.option("--checked", is_flag=True, help="Enable contract checking.")
@click.option("--arena-timeout", default="100ms", show_default=True,
              help="Async arena inactivity timeout.")
@click.option("--out", default="emas_run.csv", show_default=True,
              type=click.Path(dir_okay=False, writable=True))
def run(**kw):
    """Execute one or more optimization runs and write CSV timelines."""
    try:
        exit_code = _run_command(kw)
    except StructuralError as exc:
        raise click.UsageError(str(exc)) from exc
    if exit_code:
        sys.exit(exit_code)


def _build_params(kw) -> EmasParams:
    return EmasParams(
        initial_size=kw["initial_size"],
        initial_energy=kw["initial_energy"],
        reproduction_threshold=kw["reproduction_threshold"],
        reproduction_transfer=kw["reproduction_transfer"],
        fight_transfer=kw["fight_transfer"],
        fight_arena_size=kw["fight_arena_size"],
        migration_probability=kw["migration_probability"],
        migration_energy_min=kw["migration_energy_min"],
        problem_size=kw["problem_size"],
        mutation_rate=kw["mutation_rate"],
        mutation_range=kw["mutation_range"],
        mutation_probability=kw["mutation_probability"],
        recombination_probability=kw["recombination_probability"],
    )


def _build_stop(kw) -> StopCondition:
    duration = parse_duration(kw["duration"]) if kw["duration"] else None
    if (duration is None and kw["max_evals"] is None
            and kw["target_fitness"] is None and kw["max_steps"] is None):
        raise StructuralError(
            "a stop condition is required: --duration, --max-evals,"
            " --target-fitness, or --max-steps")
    return StopCondition(duration_s=duration, max_evals=kw["max_evals"],
                         target_objective=kw["target_fitness"],
                         max_steps=kw["max_steps"])


def _validate(kw) -> None:
    if kw["engine"] == "sync" and kw["dispatch"] is not None:
        raise StructuralError("--dispatch applies to --engine async only")
    if kw["engine"] == "async":
        if kw["islands"] != 1 or kw["listen"] or kw["peers"]:
            raise StructuralError(
                "the async engine runs a single island; island and transport"
                " flags apply to --engine sync")
        if kw["max_steps"] is not None:
            raise StructuralError("--max-steps applies to the sync engine only")
        if kw["time_source"] != "wall":
            raise StructuralError("the async engine supports wall time only")
    if kw["listen"] and kw["islands"] != 1:
        raise StructuralError(
            "--islands counts in-process islands; a TCP node hosts exactly"
            " one island and learns the cluster from --peer flags")
    if kw["peers"] and not kw["listen"]:
        raise StructuralError("--peer requires --listen")


def _out_path(base: str, index: int, repeat: int) -> str:
    if repeat == 1:
        return base
    root, ext = os.path.splitext(base)
    return f"{root}_rep{index:02d}{ext or '.csv'}"


def _run_command(kw) -> int:
    _validate(kw)
    params = _build_params(kw)
    stop = _build_stop(kw)
    snapshot_s = parse_duration(kw["snapshot_interval"])
    repeat = kw["repeat"]
    if repeat < 1:
        raise StructuralError("--repeat must be at least 1")

    worst = EXIT_OK
    for i in range(repeat):
        seed = kw["seed"] + i
        config = RunConfig(
            params=params, engine=kw["engine"], dispatch=kw["dispatch"],
            problem=kw["problem"], islands=kw["islands"],
            topology=kw["topology"], seed=seed, stop=stop,
            snapshot_interval_s=snapshot_s, time_source=kw["time_source"],
            checked=kw["checked"], listen=kw["listen"],
            peers=tuple(kw["peers"]))
        out_path = _out_path(kw["out"], i, repeat)
        extinct = _run_one(config, kw, out_path)
        if extinct:
            worst = EXIT_EXTINCT
    return worst


def _run_one(config: RunConfig, kw, out_path: str) -> bool:
    """Execute a single configured run; returns True on extinction."""
    objective = make_objective(config.problem, config.params.problem_size)
    echo = config.echo()

    if config.engine == "async":
        from .async_engine import DispatchPolicy, run_async
        from .metrics import TimelineRecorder
        policy = DispatchPolicy.parse(config.dispatch or "pool")
        recorder = TimelineRecorder(0, max(1, int(config.snapshot_interval_s * 1000)))
        run_async(config.params, objective, policy, config.stop, recorder,
                  seed=config.seed,
                  arena_timeout_s=parse_duration(kw["arena_timeout"]))
        timelines = [recorder.timeline]
    elif config.listen:
        from .islands import run_tcp_node
        recorder, island, transport = run_tcp_node(
            config.params, objective, config.listen, list(config.peers),
            config.topology, config.stop, config.seed,
            snapshot_interval_s=config.snapshot_interval_s,
            checked=config.checked)
        timelines = [recorder.timeline]
    else:
        from .islands import run_cluster
        recorders, islands_map, transport = run_cluster(
            config.params, objective, config.islands, config.topology,
            config.stop, config.seed,
            snapshot_interval_s=config.snapshot_interval_s,
            time_source=config.time_source, checked=config.checked)
        timelines = [recorders[i].timeline for i in sorted(recorders)]

    samples = sorted((s for tl in timelines for s in tl.samples),
                     key=lambda s: (s.time_ms, s.island))
    write_csv(out_path, samples, echo)
    finals = [tl.final for tl in timelines if tl.samples]
    best = min(f.best for f in finals)
    evals = sum(f.evaluations for f in finals)
    extinct = any(tl.extinct for tl in timelines)
    status = " EXTINCT" if extinct else ""
    click.echo(f"seed={config.seed} best={best:.6g} evaluations={evals}"
               f" -> {out_path}{status}")
    return extinct


@cli.command()
@click.argument("csvs", nargs=-1, required=True,
                type=click.Path(exists=True, dir_okay=False))
@click.option("--out-dir", default="report", show_default=True,
              help="Directory for the data series and figures.")
@click.option("--plots/--no-plots", default=True, show_default=True,
              help="Also render PNG figures next to the .dat series.")
def summarize(csvs, out_dir, plots):
    """Aggregate run CSVs into a table, data series, and figures."""
    from .report import load_runs, render_figures, summary_table, write_series
    runs = load_runs(csvs)
    if not runs:
        raise click.UsageError("no readable run files")
    click.echo(summary_table(runs))
    written = write_series(runs, out_dir)
    if plots:
        written += render_figures(runs, out_dir)
    for path in written:
        click.echo(f"wrote {path}")


def main() -> None:
    try:
        cli(standalone_mode=False)
    except click.UsageError as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        sys.exit(EXIT_CONFIG)
    except click.exceptions.Exit as exc:
        sys.exit(exc.exit_code)
    except click.Abort:
        sys.exit(130)


if __name__ == "__main__":
    main()
