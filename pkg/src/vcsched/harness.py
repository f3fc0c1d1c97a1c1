"""Monte-Carlo benchmark harness.

Runs each configured scheduler over a batch of randomly generated task
graphs and fleets, and writes deterministic CSV outputs. Wall-clock timings
go to a separate file so the metric files are byte-reproducible for a fixed
seed. Learned schedulers are trained once per experiment (or once per
sweep), then evaluated greedily.
"""
from __future__ import annotations

import csv
import os
import time
from dataclasses import dataclass, replace

import numpy as np
import tomli

from . import baselines
from .channel import ChannelParams
from .dagtask import GenParams, generate_random
from .ddqn import FEATURE_GAT, FEATURE_RAW, DdqnScheduler, TrainConfig
from .mobility import MobilityParams, build_fleet

SEED_ENV = "VCSCHED_SEED"
LEARNED = {"ga_drl": FEATURE_GAT, "drlosm": FEATURE_RAW}
SWEEP_AXES = ("vehicles", "subtasks", "layers")


@dataclass(frozen=True)
class ExperimentConfig:
    schedulers: tuple[str, ...] = ("lps", "heft", "mga", "ga_drl")
    n_subtasks: int = 10
    n_layers: int = 4
    n_vehicles: int = 5
    n_instances: int = 20
    seed: int = 0
    channel_mode: str = "deterministic"
    train_episodes: int = 200
    train_lr: float = 1e-3
    sweep_values: tuple[int, ...] = ()

    def __post_init__(self):
        unknown = set(self.schedulers) - set(baselines.SCHEDULERS) - set(LEARNED)
        if unknown:
            raise ValueError(f"unknown schedulers: {sorted(unknown)}")
        if self.n_instances < 1:
            raise ValueError("n_instances must be positive")


def load_config(path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        doc = tomli.load(fh)
    fields = {k: tuple(v) if isinstance(v, list) else v for k, v in doc.items()}
    cfg = ExperimentConfig(**fields)
    return apply_seed_env(cfg)


def apply_seed_env(cfg: ExperimentConfig) -> ExperimentConfig:
    override = os.environ.get(SEED_ENV)
    if override is not None:
        cfg = replace(cfg, seed=int(override))
    return cfg


@dataclass(frozen=True)
class MetricsRow:
    scheduler: str
    instance: int
    n_subtasks: int
    n_layers: int
    n_vehicles: int
    seed: int
    makespan: float
    feasible: bool


def _instance(cfg: ExperimentConfig, index: int, n_subtasks=None, n_layers=None,
              n_vehicles=None):
    """Instance `index` of the evaluation batch; common random numbers across
    schedulers and across sweep points (the per-vehicle and per-stream seeds
    depend only on the experiment seed and the instance index)."""
    n_subtasks = cfg.n_subtasks if n_subtasks is None else n_subtasks
    n_layers = cfg.n_layers if n_layers is None else n_layers
    n_vehicles = cfg.n_vehicles if n_vehicles is None else n_vehicles
    dag_seed = 1_000_000 + cfg.seed * 10_000 + index
    task = generate_random(n_subtasks, n_layers, dag_seed, GenParams())
    fleet = build_fleet(n_vehicles, 2_000_000 + cfg.seed * 10_000 + index,
                        MobilityParams())
    chan = ChannelParams(mode=cfg.channel_mode, seed=cfg.seed)
    return task, fleet, chan


def _train_source(cfg: ExperimentConfig, vehicle_values: tuple[int, ...]):
    """Training episodes draw fresh topologies (disjoint seed range from the
    evaluation batch) and cycle the fleet size over the sweep values."""
    def _make(ep: int, n_veh: int):
        dag_seed = 5_000_000 + cfg.seed * 10_000 + ep
        task = generate_random(cfg.n_subtasks, cfg.n_layers, dag_seed, GenParams())
        fleet = build_fleet(n_veh, 6_000_000 + cfg.seed * 10_000 + ep,
                            MobilityParams())
        chan = ChannelParams(mode=cfg.channel_mode, seed=cfg.seed)
        return task, fleet, chan

    return lambda ep: _make(ep, vehicle_values[ep % len(vehicle_values)])


def train_learned(cfg: ExperimentConfig, name: str,
                  vehicle_values: tuple[int, ...] | None = None,
                  max_subtasks: int | None = None) -> DdqnScheduler:
    vehicle_values = vehicle_values or (cfg.n_vehicles,)
    v_max = max(vehicle_values)
    b_max = max_subtasks or cfg.n_subtasks
    tc = TrainConfig(lr=cfg.train_lr, episodes=cfg.train_episodes,
                     seed=cfg.seed, reward_scale=10.0, gamma2=1.0,
                     commit_prob=0.7, commit_final=0.05, demo_margin=0.1)
    sched = DdqnScheduler(b_max, v_max, MobilityParams().region, tc,
                          feature_mode=LEARNED[name])
    sched.train(_train_source(cfg, vehicle_values))
    return sched


def run_experiment(cfg: ExperimentConfig, trained: dict[str, DdqnScheduler]
                   | None = None, **overrides
                   ) -> tuple[list[MetricsRow], dict[str, float]]:
    """Evaluate every configured scheduler on the Monte-Carlo batch.

    Returns the per-instance metric rows and per-scheduler wall-clock totals.
    """
    trained = trained or {}
    rows, timings = [], {}
    for name in cfg.schedulers:
        if name in LEARNED and name not in trained:
            trained[name] = train_learned(
                cfg, name,
                vehicle_values=(overrides.get("n_vehicles", cfg.n_vehicles),),
                max_subtasks=overrides.get("n_subtasks", cfg.n_subtasks))
    for index in range(cfg.n_instances):
        task, fleet, chan = _instance(cfg, index, **overrides)
        for name in cfg.schedulers:
            start = time.perf_counter()
            if name in LEARNED:
                result = trained[name].greedy_schedule(task, fleet, chan)
            else:
                result = baselines.SCHEDULERS[name](task, fleet, chan)
            timings[name] = timings.get(name, 0.0) + time.perf_counter() - start
            rows.append(MetricsRow(
                scheduler=name, instance=index,
                n_subtasks=overrides.get("n_subtasks", cfg.n_subtasks),
                n_layers=overrides.get("n_layers", cfg.n_layers),
                n_vehicles=overrides.get("n_vehicles", cfg.n_vehicles),
                seed=cfg.seed, makespan=result.makespan,
                feasible=result.feasible))
    return rows, timings


def sweep(cfg: ExperimentConfig, axis: str, values: tuple[int, ...] | None = None
          ) -> tuple[list[MetricsRow], dict[str, float]]:
    """Vary one axis (vehicles, subtasks, or layers) while holding the rest
    of the configuration fixed. Learned schedulers train once, on fleets that
    cycle over the swept vehicle counts, then evaluate at every point."""
    if axis not in SWEEP_AXES:
        raise ValueError(f"axis must be one of {SWEEP_AXES}")
    values = values or cfg.sweep_values
    if not values:
        raise ValueError("no sweep values given")
    vehicle_values = values if axis == "vehicles" else (cfg.n_vehicles,)
    max_subtasks = max(values) if axis == "subtasks" else cfg.n_subtasks
    trained = {}
    for name in cfg.schedulers:
        if name in LEARNED:
            trained[name] = train_learned(cfg, name, vehicle_values,
                                          max_subtasks)
    key = {"vehicles": "n_vehicles", "subtasks": "n_subtasks",
           "layers": "n_layers"}[axis]
    rows, timings = [], {}
    for value in values:
        r, t = run_experiment(cfg, trained, **{key: value})
        rows.extend(r)
        for name, secs in t.items():
            timings[name] = timings.get(name, 0.0) + secs
    return rows, timings


def summarize(rows: list[MetricsRow], axis_field: str = "n_vehicles"):
    """Mean and standard deviation of the makespan per scheduler per axis
    value, sorted for stable output."""
    groups: dict[tuple, list[float]] = {}
    for row in rows:
        groups.setdefault((row.scheduler, getattr(row, axis_field)), []).append(
            row.makespan)
    out = []
    for (name, value), spans in sorted(groups.items()):
        arr = np.asarray(spans)
        out.append((name, value, float(arr.mean()),
                    float(arr.std(ddof=1)) if len(arr) > 1 else 0.0))
    return out


def emit_outputs(rows: list[MetricsRow], timings: dict[str, float], outdir,
                 axis_field: str = "n_vehicles"):
    """Write metrics.csv (per instance), summary.csv (aggregates), a
    plot-data file for the swept axis, and timings.csv. Floats are written
    with repr so runs with the same seed produce byte-identical metric
    files; rows are sorted so collection order does not matter."""
    os.makedirs(outdir, exist_ok=True)
    rows = sorted(rows, key=lambda r: (r.scheduler, r.n_subtasks, r.n_layers,
                                       r.n_vehicles, r.instance))
    with open(os.path.join(outdir, "metrics.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scheduler", "instance", "n_subtasks", "n_layers",
                         "n_vehicles", "seed", "makespan", "feasible"])
        for r in rows:
            writer.writerow([r.scheduler, r.instance, r.n_subtasks, r.n_layers,
                             r.n_vehicles, r.seed, repr(r.makespan),
                             int(r.feasible)])
    with open(os.path.join(outdir, "summary.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scheduler", axis_field, "makespan_mean",
                         "makespan_std"])
        for name, value, mean, std in summarize(rows, axis_field):
            writer.writerow([name, value, repr(mean), repr(std)])
    axis_name = axis_field.removeprefix("n_")
    schedulers = sorted({r.scheduler for r in rows})
    means = {(n, v): m for n, v, m, _ in summarize(rows, axis_field)}
    with open(os.path.join(outdir, f"plot_{axis_name}.csv"), "w",
              newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([axis_name] + schedulers)
        for value in sorted({getattr(r, axis_field) for r in rows}):
            writer.writerow([value] + [repr(means[(n, value)])
                                       for n in schedulers])
    with open(os.path.join(outdir, "timings.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scheduler", "wall_seconds"])
        for name in sorted(timings):
            writer.writerow([name, repr(timings[name])])
