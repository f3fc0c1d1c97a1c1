"""Tests for the scheduling engine: timing recursion, feasibility masks,
constraint checking, rewards, and the exhaustive oracle."""

import math

import numpy as np
import pytest

from vcsched.channel import ChannelParams, path_loss
from vcsched.dagtask import (DagTask, DataEdge, PriorityList, Subtask,
                             compute_ranks, generate_random, priority_list)
from vcsched.engine import (InfeasibleActionError, ScheduleState, StateEncoder,
                            apply_action, brute_force_optimal,
                            check_constraints, est_eft, feasible_actions,
                            ready_time, run_schedule, simulate_assignment)
from vcsched.mobility import OWNER_ID, Fleet, MobilityParams, VehicleState

DET = ChannelParams()
P = MobilityParams()


def stationary_vehicle(vid, xy, f, at=0.0, dt=math.inf):
    track = np.tile(np.asarray(xy, dtype=float), (P.horizon + 1, 1))
    return VehicleState(vid, 10.0, f, at, dt, track, 0)


def two_vehicle_fleet(dt2=math.inf):
    return Fleet((
        stationary_vehicle(1, (500.0, 500.0), 1.0),
        stationary_vehicle(2, (600.0, 500.0), 2.0, at=0.0, dt=dt2),
    ), P)


def chain_task():
    """0 -> 1 -> 2 with 0.5 MB between the real subtasks."""
    return DagTask(
        (Subtask(0, 0.0, is_virtual=True), Subtask(1, 2.0), Subtask(2, 4.0)),
        (DataEdge(0, 1, 0.0), DataEdge(1, 2, 0.5)),
    )


class TestTimingRecursion:
    def test_hand_computed_timeline(self):
        task, fleet = chain_task(), two_vehicle_fleet()
        order = PriorityList((0, 1, 2))
        state = ScheduleState(task, fleet, DET, order)
        apply_action(state, 1)
        # subtask 1 on the owner: starts at 0, runs 2 Gcycles at 1 GHz
        assert state.timeline[1] == (1, 0.0, 2.0, 2.0)
        # subtask 2 on vehicle 2: waits for 0.5 MB over a 100 m link
        assert ready_time(2, state) == pytest.approx(2.0)
        tt = 0.5 * (0.15 * path_loss(100.0, 2, DET) + 0.001)
        est, eft = est_eft(2, 2, state)
        assert est == pytest.approx(2.0 + tt)
        assert eft == pytest.approx(2.0 + tt + 4.0 / 2.0)
        apply_action(state, 2)
        assert state.max_aft == pytest.approx(eft)

    def test_same_vehicle_transfer_is_free(self):
        task, fleet = chain_task(), two_vehicle_fleet()
        state = ScheduleState(task, fleet, DET, PriorityList((0, 1, 2)))
        apply_action(state, 1)
        est, _ = est_eft(2, 1, state)
        assert est == pytest.approx(2.0)

    def test_virtual_source_preplaced(self):
        task, fleet = chain_task(), two_vehicle_fleet()
        state = ScheduleState(task, fleet, DET, PriorityList((0, 1, 2)))
        assert state.assignment[0] == OWNER_ID
        assert state.aft[0] == 0.0
        assert state.current_subtask == 1

    def test_busy_vehicle_delays_start(self):
        task = DagTask(
            (Subtask(0, 0.0, is_virtual=True), Subtask(1, 3.0), Subtask(2, 1.0)),
            (DataEdge(0, 1, 0.0), DataEdge(0, 2, 0.0)),
        )
        fleet = two_vehicle_fleet()
        state = ScheduleState(task, fleet, DET, PriorityList((0, 1, 2)))
        apply_action(state, 1)
        # independent subtask on the same vehicle queues behind the first
        est, _ = est_eft(2, 1, state)
        assert est == pytest.approx(3.0)


class TestRewards:
    def test_telescoping_identity(self):
        task = generate_random(8, 3, seed=1)
        fleet = two_vehicle_fleet()
        order = priority_list(compute_ranks(task, fleet, DET))
        rng = np.random.default_rng(0)
        state = ScheduleState(task, fleet, DET, order)
        total = 0.0
        while not state.done:
            mask = feasible_actions(state)
            options = [m for m, ok in mask.items() if ok]
            r, _ = apply_action(state, int(rng.choice(options)))
            assert r <= 0.0
            total += r
        assert total == pytest.approx(-state.max_aft, abs=1e-12)


class TestFeasibility:
    def test_owner_always_feasible(self):
        task = generate_random(6, 3, seed=2)
        fleet = two_vehicle_fleet(dt2=1.0)
        order = priority_list(compute_ranks(task, fleet, DET))
        state = ScheduleState(task, fleet, DET, order)
        while not state.done:
            mask = feasible_actions(state)
            assert mask[OWNER_ID]
            apply_action(state, OWNER_ID)

    def test_departed_vehicle_is_masked(self):
        task, fleet = chain_task(), two_vehicle_fleet(dt2=1.0)
        state = ScheduleState(task, fleet, DET, PriorityList((0, 1, 2)))
        mask = feasible_actions(state)
        # subtask 1 on vehicle 2 would finish at 1.0 s sharp; feasible
        assert mask[2]
        apply_action(state, 1)
        # subtask 2 cannot start before 2.0 s, after vehicle 2 departs
        assert not feasible_actions(state)[2]

    def test_masked_action_raises(self):
        task, fleet = chain_task(), two_vehicle_fleet(dt2=1.0)
        state = ScheduleState(task, fleet, DET, PriorityList((0, 1, 2)))
        apply_action(state, 1)
        with pytest.raises(InfeasibleActionError):
            apply_action(state, 2)


class TestConstraintChecking:
    def test_clean_schedule_passes(self):
        task, fleet = chain_task(), two_vehicle_fleet()
        order = PriorityList((0, 1, 2))
        result = simulate_assignment(task, fleet, DET, order, {1: 1, 2: 2})
        assert result.feasible
        assert result.constraint_report == ()

    def test_dwell_violation_reported(self):
        task, fleet = chain_task(), two_vehicle_fleet(dt2=1.0)
        order = PriorityList((0, 1, 2))
        result = simulate_assignment(task, fleet, DET, order, {1: 1, 2: 2})
        assert not result.feasible
        assert any(p.startswith("C5") for p in result.constraint_report)

    def test_repair_to_owner_restores_feasibility(self):
        task, fleet = chain_task(), two_vehicle_fleet(dt2=1.0)
        order = PriorityList((0, 1, 2))
        result = simulate_assignment(task, fleet, DET, order, {1: 1, 2: 2},
                                     repair_to_owner=True)
        assert result.feasible
        assert result.assignment[2] == OWNER_ID

    def test_tampered_timeline_caught(self):
        task, fleet = chain_task(), two_vehicle_fleet()
        order = PriorityList((0, 1, 2))
        result = simulate_assignment(task, fleet, DET, order, {1: 1, 2: 1})
        m, est, eft, aft = result.timeline[2]
        result.timeline[2] = (m, 0.0, eft, aft)  # start before predecessor
        report = check_constraints(result, task, fleet)
        assert any(p.startswith("C4") for p in report)


class TestOracle:
    def test_beats_random_assignments(self):
        task = generate_random(5, 2, seed=3)
        fleet = two_vehicle_fleet()
        opt = brute_force_optimal(task, fleet, DET)
        order = priority_list(compute_ranks(task, fleet, DET))
        rng = np.random.default_rng(1)
        real = [i for i in order.order if i != 0]
        for _ in range(30):
            xi = {i: int(rng.choice(fleet.ids)) for i in real}
            res = simulate_assignment(task, fleet, DET, order, xi,
                                      repair_to_owner=True)
            assert opt.makespan <= res.makespan + 1e-12

    def test_deterministic(self):
        task = generate_random(4, 2, seed=4)
        fleet = two_vehicle_fleet()
        a = brute_force_optimal(task, fleet, DET)
        b = brute_force_optimal(task, fleet, DET)
        assert a.to_json() == b.to_json()

    def test_size_guard(self):
        task = generate_random(12, 3, seed=5)
        fleet = two_vehicle_fleet()
        with pytest.raises(ValueError):
            brute_force_optimal(task, fleet, DET)

    def test_single_vehicle_equals_owner_only(self):
        task = generate_random(4, 2, seed=6)
        fleet = Fleet((stationary_vehicle(1, (500.0, 500.0), 1.0),), P)
        opt = brute_force_optimal(task, fleet, DET)
        serial = sum(s.workload_u for s in task.subtasks)
        assert opt.makespan == pytest.approx(serial)


class TestStateEncoder:
    def test_dimensions(self):
        enc = StateEncoder(b_max=6, v_max=3, region=(1000.0, 1000.0), feat_dim=4)
        assert enc.tail_dim == 6 + 3 * 3
        assert enc.state_dim == 4 + enc.tail_dim

    def test_tail_and_mask(self):
        task, fleet = chain_task(), two_vehicle_fleet()
        enc = StateEncoder(b_max=2, v_max=2, region=P.region, feat_dim=4)
        state = ScheduleState(task, fleet, DET, PriorityList((0, 1, 2)))
        mask = feasible_actions(state)
        tail = enc.tail(state, mask)
        assert tail.shape == (enc.tail_dim,)
        assert tail[0] == -1.0 and tail[1] == -1.0  # nothing placed yet
        mvec = enc.mask_vector(state, mask)
        assert mvec.tolist() == [True, True]
