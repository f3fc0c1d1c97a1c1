"""Scheduling engine: ready time, earliest start/finish recursion, dwell
feasibility masks, constraint checking, the step-reward episode wrapper, and
a brute-force optimal oracle for tiny instances.

All schedulers in this package walk the same priority list and share this
engine, so their makespans are directly comparable.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelParams, transmission_time
from .dagtask import VIRTUAL_ID, DagTask, PriorityList, RankTable, compute_ranks, priority_list
from .mobility import OWNER_ID, Fleet

ORACLE_MAX_SUBTASKS = 7
ORACLE_MAX_VEHICLES = 4


class UnscheduledPredecessorError(ValueError):
    pass


class InfeasibleActionError(ValueError):
    pass


@dataclass
class ScheduleResult:
    assignment: dict[int, int]
    makespan: float
    timeline: dict[int, tuple[int, float, float, float]]  # id -> (vehicle, EST, EFT, AFT)
    feasible: bool
    constraint_report: tuple[str, ...] = ()

    def to_json(self) -> str:
        return json.dumps({
            "assignment": {str(k): v for k, v in sorted(self.assignment.items())},
            "makespan": self.makespan,
            "timeline": {str(i): list(t) for i, t in sorted(self.timeline.items())},
            "feasible": self.feasible,
            "constraint_report": list(self.constraint_report),
        }, sort_keys=True)


class ScheduleState:
    """Mutable per-episode schedule under construction.

    Decisions walk the priority list; step_k indexes the next non-virtual
    subtask to place. The virtual source is pre-placed on the owner at t=0.
    """

    def __init__(self, task: DagTask, fleet: Fleet, chan: ChannelParams,
                 order: PriorityList):
        if order.order[0] != VIRTUAL_ID:
            raise ValueError("priority list must start with the virtual source")
        self.task = task
        self.fleet = fleet
        self.chan = chan
        self.order = order.order
        self.avt = {v.id: max(v.arrival_at, 0.0) for v in fleet.vehicles}
        self.aft = {VIRTUAL_ID: 0.0}
        self.assignment = {VIRTUAL_ID: OWNER_ID}
        self.timeline = {VIRTUAL_ID: (OWNER_ID, 0.0, 0.0, 0.0)}
        self.busy = {v.id: [] for v in fleet.vehicles}
        self.step_k = 1  # position in the priority list; 0 is the source
        self.max_aft = 0.0

    @property
    def done(self) -> bool:
        return self.step_k >= len(self.order)

    @property
    def current_subtask(self) -> int:
        return self.order[self.step_k]

    def clone_empty(self) -> "ScheduleState":
        return ScheduleState(self.task, self.fleet, self.chan,
                             PriorityList(self.order))


def ready_time(i: int, state: ScheduleState) -> float:
    if i == VIRTUAL_ID:
        return 0.0
    preds = state.task.preds[i]
    missing = [j for j in preds if j not in state.aft]
    if missing:
        raise UnscheduledPredecessorError(f"subtask {i}: predecessors {missing} unscheduled")
    return max(state.aft[j] for j in preds)


def est_eft(i: int, m: int, state: ScheduleState) -> tuple[float, float]:
    """Earliest start/finish of subtask i on vehicle m given the partial
    schedule. Transfer distances are evaluated at the slot floor of the
    ready time."""
    if i == VIRTUAL_ID:
        return (0.0, 0.0) if m == OWNER_ID else (math.inf, math.inf)
    rt = ready_time(i, state)
    slot = int(math.floor(rt))
    arrival = rt
    for j in state.task.preds[i]:
        tt = transmission_time(state.task.edge_data[(j, i)], state.assignment[j],
                               m, slot, state.fleet, state.chan)
        arrival = max(arrival, rt + tt)
    est = max(state.avt[m], arrival)
    eft = est + state.task.by_id[i].workload_u / state.fleet.vehicle(m).capability_f
    return est, eft


def is_feasible_placement(i: int, m: int, state: ScheduleState) -> bool:
    """Dwell-window constraint: [EST, EFT] inside [AT, DT] of vehicle m."""
    v = state.fleet.vehicle(m)
    est, eft = est_eft(i, m, state)
    return est >= v.arrival_at and eft <= v.departure_dt


def feasible_actions(state: ScheduleState) -> dict[int, bool]:
    """Per-vehicle feasibility of the current subtask. The owner is always
    feasible by construction (pinned dwell window)."""
    i = state.current_subtask
    mask = {m: is_feasible_placement(i, m, state) for m in state.fleet.ids}
    assert mask[OWNER_ID], "owner must always be a feasible action"
    return mask


def apply_action(state: ScheduleState, m: int, enforce_mask: bool = True
                 ) -> tuple[float, bool]:
    """Place the current subtask on vehicle m; returns (reward, feasible).

    The reward is the decrease in the maximum finish time across scheduled
    subtasks, which telescopes to -makespan over a full episode.
    """
    i = state.current_subtask
    feasible = is_feasible_placement(i, m, state)
    if enforce_mask and not feasible:
        raise InfeasibleActionError(f"subtask {i} on vehicle {m} violates the dwell window")
    est, eft = est_eft(i, m, state)
    state.assignment[i] = m
    state.aft[i] = eft
    state.timeline[i] = (m, est, eft, eft)
    state.avt[m] = eft
    state.busy[m].append((est, eft))
    state.step_k += 1
    prev_max = state.max_aft
    state.max_aft = max(state.max_aft, eft)
    return prev_max - state.max_aft, feasible


def run_schedule(task: DagTask, fleet: Fleet, chan: ChannelParams,
                 order: PriorityList, chooser) -> ScheduleResult:
    """Drive a full episode; chooser(state, mask) -> vehicle id."""
    state = ScheduleState(task, fleet, chan, order)
    all_feasible = True
    while not state.done:
        mask = feasible_actions(state)
        m = chooser(state, mask)
        _, ok = apply_action(state, m, enforce_mask=False)
        all_feasible = all_feasible and ok
    result = ScheduleResult(dict(state.assignment), state.max_aft,
                            dict(state.timeline), feasible=all_feasible)
    report = check_constraints(result, task, fleet)
    result.constraint_report = report
    result.feasible = not report
    return result


def simulate_assignment(task: DagTask, fleet: Fleet, chan: ChannelParams,
                        order: PriorityList, xi: dict[int, int],
                        repair_to_owner: bool = False) -> ScheduleResult:
    """Simulate a fixed subtask-to-vehicle map in priority order. Infeasible
    placements are either repaired to the owner or recorded as violations."""
    def chooser(state, mask):
        m = xi[state.current_subtask]
        if repair_to_owner and not mask[m]:
            return OWNER_ID
        return m
    return run_schedule(task, fleet, chan, order, chooser)


def check_constraints(result: ScheduleResult, task: DagTask, fleet: Fleet
                      ) -> tuple[str, ...]:
    """Verify single-assignment, interval-disjointness, precedence, and
    dwell-window constraints on a completed schedule."""
    problems = []
    for s in task.subtasks:
        if s.id not in result.assignment:
            problems.append(f"C1: subtask {s.id} unassigned")
        elif result.assignment[s.id] not in set(fleet.ids):
            problems.append(f"C1: subtask {s.id} on unknown vehicle")
    per_vehicle: dict[int, list] = {}
    for i, (m, est, eft, aft) in result.timeline.items():
        if i != VIRTUAL_ID:
            per_vehicle.setdefault(m, []).append((est, eft, i))
    for m, intervals in per_vehicle.items():
        intervals.sort()
        for (s1, e1, i1), (s2, e2, i2) in zip(intervals, intervals[1:]):
            if s2 < e1 - 1e-12:
                problems.append(f"C3: subtasks {i1} and {i2} overlap on vehicle {m}")
    for i, (m, est, eft, aft) in result.timeline.items():
        for j in task.preds[i]:
            if j in result.timeline and est < result.timeline[j][3] - 1e-12:
                problems.append(f"C4: subtask {i} starts before predecessor {j} finishes")
    for i, (m, est, eft, aft) in result.timeline.items():
        if i == VIRTUAL_ID:
            continue
        v = fleet.vehicle(m)
        if est < v.arrival_at - 1e-12 or eft > v.departure_dt + 1e-12:
            problems.append(f"C5: subtask {i} outside dwell window of vehicle {m}")
    return tuple(problems)


def brute_force_optimal(task: DagTask, fleet: Fleet, chan: ChannelParams,
                        order: PriorityList | None = None) -> ScheduleResult:
    """Enumerate every subtask-to-vehicle map under priority-order execution
    and return the minimum-makespan feasible schedule."""
    if task.n_real > ORACLE_MAX_SUBTASKS or len(fleet) > ORACLE_MAX_VEHICLES:
        raise ValueError("instance too large for exhaustive enumeration")
    if order is None:
        order = priority_list(compute_ranks(task, fleet, chan))
    real = [i for i in order.order if i != VIRTUAL_ID]
    best = None
    for combo in itertools.product(fleet.ids, repeat=len(real)):
        xi = dict(zip(real, combo))
        res = simulate_assignment(task, fleet, chan, order, xi)
        if not res.feasible:
            continue
        if best is None or res.makespan < best.makespan:
            best = res
    assert best is not None, "owner-only assignment is always feasible"
    return best


@dataclass(frozen=True)
class StateEncoder:
    """Fixed-size MDP state encoding.

    Layout: [feature of the current subtask | per-subtask allocation history
    (vehicle index / v_max, -1 if unscheduled) | per-vehicle feasibility bits |
    per-vehicle normalized (x, y)].
    """
    b_max: int
    v_max: int
    region: tuple[float, float]
    feat_dim: int

    @property
    def tail_dim(self) -> int:
        return self.b_max + 3 * self.v_max

    @property
    def state_dim(self) -> int:
        return self.feat_dim + self.tail_dim

    def tail(self, state: ScheduleState, mask: dict[int, bool] | None) -> np.ndarray:
        alloc = np.full(self.b_max, -1.0)
        for i, m in state.assignment.items():
            if i != VIRTUAL_ID and i - 1 < self.b_max:
                alloc[i - 1] = m / self.v_max
        avail = np.zeros(self.v_max)
        pos = np.zeros(2 * self.v_max)
        slot = int(math.floor(state.max_aft))
        for idx, v in enumerate(state.fleet.vehicles):
            if idx >= self.v_max:
                break
            if mask is not None:
                avail[idx] = 1.0 if mask.get(v.id, False) else 0.0
            x, y = v.position(slot)
            pos[2 * idx] = x / self.region[0]
            pos[2 * idx + 1] = y / self.region[1]
        return np.concatenate([alloc, avail, pos])

    def mask_vector(self, state: ScheduleState, mask: dict[int, bool]) -> np.ndarray:
        out = np.zeros(self.v_max, dtype=bool)
        for idx, v in enumerate(state.fleet.vehicles):
            if idx < self.v_max:
                out[idx] = mask.get(v.id, False)
        return out
