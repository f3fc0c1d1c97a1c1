"""DAG task representation, validation, random generation, ranking, and
priority-list construction.

Every task carries a single virtual source (id 0, zero workload, zero-size
outgoing edges) so the scheduling recursion has a well-defined start.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from functools import cached_property
from importlib import resources

import numpy as np

from .channel import ChannelParams, transmission_time

VIRTUAL_ID = 0
KB_PER_MB = 1024.0


@dataclass(frozen=True)
class Subtask:
    id: int
    workload_u: float           # Gigacycles
    is_virtual: bool = False


@dataclass(frozen=True)
class DataEdge:
    src: int
    dst: int
    data_c: float               # megabytes


@dataclass(frozen=True)
class DagTask:
    subtasks: tuple[Subtask, ...]
    edges: tuple[DataEdge, ...]
    layer_count: int | None = None

    @cached_property
    def by_id(self) -> dict[int, Subtask]:
        return {s.id: s for s in self.subtasks}

    @cached_property
    def preds(self) -> dict[int, frozenset[int]]:
        out = {s.id: set() for s in self.subtasks}
        for e in self.edges:
            out[e.dst].add(e.src)
        return {i: frozenset(v) for i, v in out.items()}

    @cached_property
    def succs(self) -> dict[int, frozenset[int]]:
        out = {s.id: set() for s in self.subtasks}
        for e in self.edges:
            out[e.src].add(e.dst)
        return {i: frozenset(v) for i, v in out.items()}

    @cached_property
    def edge_data(self) -> dict[tuple[int, int], float]:
        return {(e.src, e.dst): e.data_c for e in self.edges}

    @property
    def n_real(self) -> int:
        return sum(1 for s in self.subtasks if not s.is_virtual)

    def topological_order(self) -> list[int]:
        indeg = {i: len(p) for i, p in self.preds.items()}
        queue = sorted(i for i, d in indeg.items() if d == 0)
        order = []
        while queue:
            i = queue.pop(0)
            order.append(i)
            for j in sorted(self.succs[i]):
                indeg[j] -= 1
                if indeg[j] == 0:
                    queue.append(j)
        if len(order) != len(self.subtasks):
            raise ValueError("task graph contains a cycle")
        return order


@dataclass(frozen=True)
class ValidationReport:
    problems: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return not self.problems


@dataclass(frozen=True)
class RankTable:
    rank: dict[int, float]


@dataclass(frozen=True)
class PriorityList:
    order: tuple[int, ...]

    def __len__(self):
        return len(self.order)


@dataclass(frozen=True)
class GenParams:
    max_parents: int = 3
    workload_range: tuple[float, float] = (1.0, 2.0)   # Gigacycles
    edge_kb_range: tuple[float, float] = (100.0, 500.0)


def validate(task: DagTask) -> ValidationReport:
    """Collect structural violations; an empty report means the task is valid."""
    problems = []
    ids = [s.id for s in task.subtasks]
    if len(set(ids)) != len(ids):
        problems.append("duplicate subtask ids")
    virtuals = [s for s in task.subtasks if s.is_virtual]
    if len(virtuals) != 1 or (virtuals and virtuals[0].id != VIRTUAL_ID):
        problems.append("expected exactly one virtual subtask with id 0")
    for s in task.subtasks:
        if s.workload_u < 0:
            problems.append(f"subtask {s.id}: negative workload")
        if s.is_virtual and s.workload_u != 0:
            problems.append(f"subtask {s.id}: virtual subtask must have zero workload")
        if not s.is_virtual and s.workload_u == 0:
            problems.append(f"subtask {s.id}: non-virtual subtask has zero workload")
    known = set(ids)
    seen_pairs = set()
    for e in task.edges:
        if e.src == e.dst:
            problems.append(f"edge ({e.src}->{e.dst}): self loop")
        if e.src not in known or e.dst not in known:
            problems.append(f"edge ({e.src}->{e.dst}): unknown endpoint")
        if e.data_c < 0:
            problems.append(f"edge ({e.src}->{e.dst}): negative data size")
        if e.src == VIRTUAL_ID and e.data_c != 0:
            problems.append(f"edge ({e.src}->{e.dst}): virtual-source edge must carry no data")
        if (e.src, e.dst) in seen_pairs:
            problems.append(f"edge ({e.src}->{e.dst}): duplicate edge")
        seen_pairs.add((e.src, e.dst))
    try:
        task.topological_order()
    except ValueError:
        problems.append("graph contains a cycle")
    else:
        reachable = {VIRTUAL_ID}
        frontier = [VIRTUAL_ID]
        while frontier:
            i = frontier.pop()
            for j in task.succs.get(i, ()):
                if j not in reachable:
                    reachable.add(j)
                    frontier.append(j)
        for s in task.subtasks:
            if not s.is_virtual and s.id not in reachable:
                problems.append(f"subtask {s.id}: unreachable from the virtual source")
    return ValidationReport(tuple(problems))


def neighbor_sets(task: DagTask, i: int) -> tuple[frozenset[int], frozenset[int]]:
    """(immediate predecessors, immediate successors) of subtask i."""
    if i not in task.by_id:
        raise KeyError(f"unknown subtask id {i}")
    return task.preds[i], task.succs[i]


def generate_random(n_subtasks: int, n_layers: int, seed: int,
                    gen_params: GenParams | None = None) -> DagTask:
    """Layered random DAG: edges run strictly upward in layers, each node has
    at least one parent in the immediately previous layer, so the longest
    path from the virtual source has exactly n_layers non-virtual subtasks.

    Topology, workloads, and edge sizes come from independent substreams of
    the seed: the sampled workloads for a given (n_subtasks, seed) do not
    depend on the layer count.
    """
    if n_subtasks < n_layers or n_layers < 1:
        raise ValueError("need n_subtasks >= n_layers >= 1")
    gp = gen_params or GenParams()
    topo_rng = np.random.default_rng([seed, 0])
    work_rng = np.random.default_rng([seed, 1])
    edge_rng = np.random.default_rng([seed, 2])

    sizes = np.ones(n_layers, dtype=int)
    extra = n_subtasks - n_layers
    if extra:
        sizes += topo_rng.multinomial(extra, np.full(n_layers, 1.0 / n_layers))
    layers, nxt = [], 1
    for sz in sizes:
        layers.append(list(range(nxt, nxt + sz)))
        nxt += sz

    workloads = work_rng.uniform(*gp.workload_range, size=n_subtasks)
    subtasks = [Subtask(VIRTUAL_ID, 0.0, is_virtual=True)]
    subtasks += [Subtask(i, float(workloads[i - 1])) for i in range(1, n_subtasks + 1)]

    edges = [DataEdge(VIRTUAL_ID, i, 0.0) for i in layers[0]]
    for li in range(1, n_layers):
        below = [i for layer in layers[:li] for i in layer]
        for node in layers[li]:
            parents = {int(topo_rng.choice(layers[li - 1]))}
            n_extra = int(topo_rng.integers(0, gp.max_parents))
            if n_extra and len(below) > 1:
                parents |= set(int(x) for x in topo_rng.choice(
                    below, size=min(n_extra, len(below)), replace=False))
            for par in sorted(parents):
                size_mb = float(edge_rng.uniform(*gp.edge_kb_range)) / KB_PER_MB
                edges.append(DataEdge(par, node, size_mb))
    return DagTask(tuple(subtasks), tuple(edges), layer_count=n_layers)


def mean_execution_cost(task: DagTask, fleet, j: int) -> float:
    u = task.by_id[j].workload_u
    return float(np.mean([u / v.capability_f for v in fleet.vehicles]))


def mean_transmission_cost(task: DagTask, fleet, chan: ChannelParams,
                           j: int, i: int) -> float:
    """Average transfer time of edge (j->i) over all ordered vehicle pairs at
    slot 0, deterministic channel (same-vehicle pairs contribute zero)."""
    det = dataclasses.replace(chan, mode="deterministic")
    c = task.edge_data[(j, i)]
    if c == 0.0:
        return 0.0
    ids = fleet.ids
    tot = sum(transmission_time(c, m, n, 0, fleet, det)
              for m in ids for n in ids)
    return tot / (len(ids) ** 2)


def compute_ranks(task: DagTask, fleet, chan: ChannelParams) -> RankTable:
    """Forward recursive ranking: rank_0 = 0 and
    rank_i = max over predecessors j of rank_j + mean-exec(j) + mean-tx(j, i).
    Deterministic for a deterministic channel."""
    rank = {VIRTUAL_ID: 0.0}
    for i in task.topological_order():
        if i == VIRTUAL_ID:
            continue
        rank[i] = max(
            rank[j] + mean_execution_cost(task, fleet, j)
            + mean_transmission_cost(task, fleet, chan, j, i)
            for j in task.preds[i])
    return RankTable(rank)


def priority_list(ranks: RankTable) -> PriorityList:
    """Ascending rank value; ties broken by ascending subtask id."""
    order = sorted(ranks.rank, key=lambda i: (ranks.rank[i], i))
    return PriorityList(tuple(order))


def longest_path_layers(task: DagTask) -> int:
    """Number of non-virtual subtasks on the longest path from the source."""
    depth = {}
    for i in task.topological_order():
        preds = task.preds[i]
        depth[i] = 0 if not preds else max(depth[j] for j in preds) + 1
    return max(depth.values(), default=0)


def molecular_dynamics_fixture(seed: int = 4242) -> DagTask:
    """The 41-vertex molecular-dynamics topology with workloads and edge
    sizes drawn from the standard ranges under a fixed seed."""
    text = resources.files("vcsched.data").joinpath("molecular_dynamics.json").read_text()
    doc = json.loads(text)
    n = doc["nodes"]
    work_rng = np.random.default_rng([seed, 1])
    edge_rng = np.random.default_rng([seed, 2])
    gp = GenParams()
    workloads = work_rng.uniform(*gp.workload_range, size=n)
    subtasks = [Subtask(VIRTUAL_ID, 0.0, is_virtual=True)]
    subtasks += [Subtask(i, float(workloads[i - 1])) for i in range(1, n + 1)]
    has_pred = {dst for _, dst in doc["edges"]}
    edges = [DataEdge(VIRTUAL_ID, i, 0.0) for i in range(1, n + 1) if i not in has_pred]
    for src, dst in doc["edges"]:
        size_mb = float(edge_rng.uniform(*gp.edge_kb_range)) / KB_PER_MB
        edges.append(DataEdge(src, dst, size_mb))
    task = DagTask(tuple(subtasks), tuple(edges))
    return dataclasses.replace(task, layer_count=longest_path_layers(task))


def save_dag(task: DagTask, path):
    doc = {
        "subtasks": [{"id": s.id, "workload_gcycles": s.workload_u}
                     for s in task.subtasks if not s.is_virtual],
        "edges": [{"src": e.src, "dst": e.dst, "size_mb": e.data_c}
                  for e in task.edges if e.src != VIRTUAL_ID],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)


def load_dag(path) -> DagTask:
    """Load a task from JSON, adding the virtual source if absent."""
    with open(path) as fh:
        doc = json.load(fh)
    subtasks = [Subtask(VIRTUAL_ID, 0.0, is_virtual=True)]
    subtasks += [Subtask(int(s["id"]), float(s["workload_gcycles"]))
                 for s in doc["subtasks"]]
    edges = [DataEdge(int(e["src"]), int(e["dst"]), float(e["size_mb"]))
             for e in doc["edges"]]
    has_pred = {e.dst for e in edges}
    roots = [s.id for s in subtasks[1:] if s.id not in has_pred]
    edges = [DataEdge(VIRTUAL_ID, i, 0.0) for i in roots] + edges
    task = DagTask(tuple(subtasks), tuple(edges))
    return dataclasses.replace(task, layer_count=longest_path_layers(task))
