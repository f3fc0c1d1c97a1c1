"""Reference schedulers: owner-only processing, greedy earliest-finish
placement, and a genetic assignment search. All of them walk the same
priority list and respect the same dwell-window feasibility rule as the
learned scheduler, so makespans are directly comparable.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ChannelParams
from .dagtask import DagTask, compute_ranks, priority_list
from .engine import (ScheduleResult, est_eft, run_schedule,
                     simulate_assignment)
from .mobility import OWNER_ID, Fleet


def _order(task: DagTask, fleet: Fleet, chan: ChannelParams):
    return priority_list(compute_ranks(task, fleet, chan))


def lps(task: DagTask, fleet: Fleet, chan: ChannelParams) -> ScheduleResult:
    """Local processing: every subtask runs on the owner vehicle."""
    order = _order(task, fleet, chan)
    return run_schedule(task, fleet, chan, order, lambda state, mask: OWNER_ID)


def heft(task: DagTask, fleet: Fleet, chan: ChannelParams) -> ScheduleResult:
    """Greedy earliest-finish placement over the feasible vehicles. Ties go
    to the lowest vehicle id; if nothing but the owner is feasible it falls
    back to the owner."""
    order = _order(task, fleet, chan)

    def chooser(state, mask):
        best, best_eft = None, None
        for m in sorted(state.fleet.ids):
            _, eft = est_eft(state.current_subtask, m, state)
            if best_eft is None or eft < best_eft:
                best, best_eft = m, eft
        return best if mask.get(best, False) else OWNER_ID

    return run_schedule(task, fleet, chan, order, chooser)


@dataclass(frozen=True)
class GaConfig:
    population: int = 50
    generations: int = 200
    crossover_rate: float = 0.8
    mutation_rate: float = 0.05
    tournament_k: int = 3
    elite: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.population < 2:
            raise ValueError("population must be >= 2")
        if self.elite >= self.population:
            raise ValueError("elite must be smaller than the population")


def mga(task: DagTask, fleet: Fleet, chan: ChannelParams,
        cfg: GaConfig | None = None) -> ScheduleResult:
    """Genetic search over integer assignment chromosomes.

    A chromosome maps each real subtask to a vehicle index; evaluation runs
    the simulator in priority order with infeasible genes repaired to the
    owner, so every individual yields a feasible schedule.
    """
    cfg = cfg or GaConfig()
    order = _order(task, fleet, chan)
    ids = sorted(fleet.ids)
    real = [i for i in order.order if i != 0]
    n_genes, n_vehicles = len(real), len(ids)
    rng = np.random.default_rng([cfg.seed, 7])

    def evaluate(chrom: np.ndarray) -> ScheduleResult:
        xi = {i: ids[g] for i, g in zip(real, chrom)}
        return simulate_assignment(task, fleet, chan, order, xi,
                                   repair_to_owner=True)

    if n_genes == 0:
        return evaluate(np.zeros(0, dtype=int))

    pop = rng.integers(0, n_vehicles, size=(cfg.population, n_genes))
    # seed one constant chromosome per vehicle (owner first); single-vehicle
    # schedules pay no transfers and anchor the search
    for g in range(min(n_vehicles, cfg.population)):
        pop[g] = g
    results = [evaluate(c) for c in pop]
    fitness = np.array([r.makespan for r in results])

    for _ in range(cfg.generations):
        elite_idx = np.argsort(fitness)[:cfg.elite]
        new_pop = [pop[i].copy() for i in elite_idx]
        while len(new_pop) < cfg.population:
            picks = rng.integers(0, cfg.population, size=(2, cfg.tournament_k))
            pa = pop[picks[0][np.argmin(fitness[picks[0]])]].copy()
            pb = pop[picks[1][np.argmin(fitness[picks[1]])]].copy()
            if n_genes > 1 and rng.uniform() < cfg.crossover_rate:
                cut = int(rng.integers(1, n_genes))
                pa[cut:], pb[cut:] = pb[cut:].copy(), pa[cut:].copy()
            for child in (pa, pb):
                flips = rng.uniform(size=n_genes) < cfg.mutation_rate
                child[flips] = rng.integers(0, n_vehicles, size=int(flips.sum()))
                new_pop.append(child)
        pop = np.stack(new_pop[:cfg.population])
        results = [evaluate(c) for c in pop]
        fitness = np.array([r.makespan for r in results])

    return results[int(np.argmin(fitness))]


SCHEDULERS = {
    "lps": lps,
    "heft": heft,
    "mga": mga,
}
