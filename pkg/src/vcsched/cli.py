"""Command line entry points for generating instances, running benchmarks,
training the learned scheduler, and checking small cases against the
exhaustive optimum."""
from __future__ import annotations

import json
import sys
from importlib import resources

import click

from . import baselines, harness
from .channel import ChannelParams
from .dagtask import GenParams, generate_random, load_dag, save_dag
from .ddqn import DdqnScheduler, TrainConfig
from .engine import brute_force_optimal
from .mobility import MobilityParams, build_fleet, ingest_trace, serialize_trace

EXIT_BAD_INPUT = 2


def _default_config() -> harness.ExperimentConfig:
    with resources.files("vcsched.data").joinpath("defaults.toml").open("rb") as fh:
        import tomli
        doc = tomli.load(fh)
    fields = {k: tuple(v) if isinstance(v, list) else v for k, v in doc.items()}
    return harness.apply_seed_env(harness.ExperimentConfig(**fields))


def _load_config(path) -> harness.ExperimentConfig:
    if path is None:
        return _default_config()
    try:
        return harness.load_config(path)
    except (OSError, ValueError, TypeError) as exc:
        raise click.ClickException(f"bad config: {exc}") from exc


@click.group()
def main():
    """Task graph scheduling over vehicular clouds."""


@main.group()
def dag():
    """Task graph utilities."""


@dag.command("generate")
@click.option("--subtasks", "-b", default=10, show_default=True)
@click.option("--layers", "-l", default=4, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "-o", type=click.Path(), required=True)
def dag_generate(subtasks, layers, seed, out):
    """Generate a random layered task graph and write it as JSON."""
    try:
        task = generate_random(subtasks, layers, seed, GenParams())
    except ValueError as exc:
        raise click.ClickException(str(exc)) from exc
    save_dag(task, out)
    click.echo(f"wrote {out}: {task.n_real} subtasks, {len(task.edges)} edges")


@main.group()
def fleet():
    """Vehicle fleet utilities."""


@fleet.command("build")
@click.option("--vehicles", "-n", default=5, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "-o", type=click.Path(), required=True)
def fleet_build(vehicles, seed, out):
    """Synthesize a fleet of moving vehicles and write its trace as CSV."""
    fl = build_fleet(vehicles, seed, MobilityParams())
    serialize_trace(fl, out)
    click.echo(f"wrote {out}: {len(fl.vehicles)} vehicles")


@fleet.command("ingest")
@click.option("--trace", "-t", type=click.Path(exists=True), required=True)
@click.option("--seed", default=0, show_default=True)
def fleet_ingest(trace, seed):
    """Validate a mobility trace CSV and report the dwell windows."""
    from .mobility import TraceError
    try:
        fl = ingest_trace(trace, MobilityParams(), seed=seed)
    except TraceError as exc:
        click.echo(f"invalid trace: {exc}", err=True)
        sys.exit(EXIT_BAD_INPUT)
    for v in fl.vehicles:
        dt = "inf" if v.departure_dt == float("inf") else f"{v.departure_dt:g}"
        click.echo(f"vehicle {v.id}: arrival {v.arrival_at:g}s departure {dt}s "
                   f"capability {v.capability_f:.3f} GHz")


@main.group()
def bench():
    """Monte-Carlo benchmark runs."""


@bench.command("run")
@click.option("--config", "-c", type=click.Path(exists=True))
@click.option("--outdir", "-o", type=click.Path(), default="bench_out",
              show_default=True)
def bench_run(config, outdir):
    """Evaluate the configured schedulers on a random instance batch."""
    cfg = _load_config(config)
    rows, timings = harness.run_experiment(cfg)
    harness.emit_outputs(rows, timings, outdir)
    for name, value, mean, std in harness.summarize(rows):
        click.echo(f"{name:8s} n_vehicles={value:<3d} "
                   f"makespan {mean:.4f} +/- {std:.4f} s")


@bench.command("sweep")
@click.option("--config", "-c", type=click.Path(exists=True))
@click.option("--axis", type=click.Choice(harness.SWEEP_AXES),
              default="vehicles", show_default=True)
@click.option("--values", help="comma separated axis values")
@click.option("--outdir", "-o", type=click.Path(), default="sweep_out",
              show_default=True)
def bench_sweep(config, axis, values, outdir):
    """Sweep one experiment axis and aggregate makespans per point."""
    cfg = _load_config(config)
    vals = tuple(int(v) for v in values.split(",")) if values else None
    try:
        rows, timings = harness.sweep(cfg, axis, vals)
    except ValueError as exc:
        raise click.ClickException(str(exc)) from exc
    axis_field = {"vehicles": "n_vehicles", "subtasks": "n_subtasks",
                  "layers": "n_layers"}[axis]
    harness.emit_outputs(rows, timings, outdir, axis_field)
    for name, value, mean, std in harness.summarize(rows, axis_field):
        click.echo(f"{name:8s} {axis_field}={value:<3d} "
                   f"makespan {mean:.4f} +/- {std:.4f} s")


@main.command("train")
@click.option("--config", "-c", type=click.Path(exists=True))
@click.option("--episodes", "-e", type=int)
@click.option("--features", type=click.Choice(["gat", "raw"]), default="gat",
              show_default=True)
@click.option("--checkpoint", "-k", type=click.Path(), required=True)
@click.option("--log", type=click.Path())
def train(config, episodes, features, checkpoint, log):
    """Train the learned scheduler and save a checkpoint."""
    cfg = _load_config(config)
    if episodes is not None:
        from dataclasses import replace
        cfg = replace(cfg, train_episodes=episodes)
    tc = TrainConfig(lr=cfg.train_lr, episodes=cfg.train_episodes,
                     seed=cfg.seed, reward_scale=10.0)
    sched = DdqnScheduler(cfg.n_subtasks, cfg.n_vehicles,
                          MobilityParams().region, tc, feature_mode=features)
    rows = sched.train(harness._train_source(cfg, (cfg.n_vehicles,)),
                       log_path=log)
    sched.save(checkpoint)
    click.echo(f"trained {len(rows)} episodes; final makespan "
               f"{rows[-1].makespan:.4f} s; saved {checkpoint}")


@main.command("oracle")
@click.option("--dag", "dag_path", type=click.Path(exists=True), required=True)
@click.option("--vehicles", "-n", default=3, show_default=True)
@click.option("--seed", default=0, show_default=True)
def oracle(dag_path, vehicles, seed):
    """Exhaustively find the optimal assignment for a small instance."""
    task = load_dag(dag_path)
    fl = build_fleet(vehicles, seed, MobilityParams())
    chan = ChannelParams()
    try:
        result = brute_force_optimal(task, fl, chan)
    except ValueError as exc:
        click.echo(str(exc), err=True)
        sys.exit(EXIT_BAD_INPUT)
    click.echo(json.dumps({"makespan": result.makespan,
                           "assignment": {str(k): v for k, v
                                          in sorted(result.assignment.items())}}))


if __name__ == "__main__":
    main()
