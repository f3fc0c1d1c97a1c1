"""Simulation and scheduling of dependent subtasks over vehicular clouds.

The package models a task graph offloaded from an owner vehicle to nearby
vehicles with limited dwell times, a distance-dependent wireless channel,
and several schedulers: owner-only processing, greedy earliest finish, a
genetic search, a trainable attention-based Q-learning scheduler, and an
exhaustive optimum for small instances.
"""

__version__ = "0.1.0"

from .channel import ChannelParams, transmission_time
from .dagtask import DagTask, GenParams, generate_random, priority_list
from .engine import ScheduleResult, brute_force_optimal, run_schedule
from .mobility import Fleet, MobilityParams, build_fleet, ingest_trace

__all__ = [
    "ChannelParams", "DagTask", "Fleet", "GenParams", "MobilityParams",
    "ScheduleResult", "__version__", "brute_force_optimal", "build_fleet",
    "generate_random", "ingest_trace", "priority_list", "run_schedule",
    "transmission_time",
]
