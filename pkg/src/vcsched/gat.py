"""Ranking-sampled two-way multi-head graph attention feature extractor.

Per layer, half the heads attend over a sampled predecessor-side
neighborhood, the other half over a sampled successor-side neighborhood.
Head outputs are summed and divided by the head count (heads are averaged,
not concatenated), then passed through ELU. Sampling weights follow exp(rank),
so later-scheduled neighbors are favored; with sampling disabled the full
neighbor sets are used and the forward pass is deterministic.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import nn
from .dagtask import VIRTUAL_ID, DagTask, RankTable

LAYER_DIMS = (4, 16, 32)
HEADS = 4
DEFAULT_SAMPLE_SIZE = 3
_MASK_NEG = -1e30


def raw_features(task: DagTask) -> np.ndarray:
    """Per-subtask raw feature rows (workload, mean outgoing edge size,
    predecessor count, successor count), indexed by subtask id."""
    n = len(task.subtasks)
    if sorted(task.by_id) != list(range(n)):
        raise ValueError("subtask ids must be contiguous 0..|B|")
    out = np.zeros((n, 4))
    for s in task.subtasks:
        succ = task.succs[s.id]
        c_bar = (sum(task.edge_data[(s.id, j)] for j in succ) / len(succ)) if succ else 0.0
        out[s.id] = (s.workload_u, c_bar, len(task.preds[s.id]), len(succ))
    return out


def make_gat_params(rng: np.random.Generator, layer_dims=LAYER_DIMS,
                    heads: int = HEADS) -> dict[str, nn.Tensor]:
    """Glorot-uniform weight matrices and attention vectors, one pair per
    (layer, head)."""
    params = {}
    for layer in range(1, len(layer_dims)):
        d_in, d_out = layer_dims[layer - 1], layer_dims[layer]
        for z in range(1, heads + 1):
            lim_w = math.sqrt(6.0 / (d_in + d_out))
            lim_a = math.sqrt(6.0 / (2 * d_out + 1))
            params[f"W{layer}_{z}"] = nn.parameter(rng.uniform(-lim_w, lim_w, (d_in, d_out)))
            params[f"A{layer}_{z}"] = nn.parameter(rng.uniform(-lim_a, lim_a, (2 * d_out,)))
    return params


@dataclass(frozen=True)
class SamplingPlan:
    """Fixed-width neighbor index arrays for one forward pass.

    bias rows hold 0 for live entries and a large negative number for padding
    so padded slots vanish under the attention softmax.
    """
    n: int
    fwd_idx: np.ndarray
    fwd_bias: np.ndarray
    inv_idx: np.ndarray
    inv_bias: np.ndarray


def _padded(sets: list[list[int]], self_ids: list[int]) -> tuple[np.ndarray, np.ndarray]:
    width = max(len(s) for s in sets)
    idx = np.zeros((len(sets), width), dtype=np.intp)
    bias = np.full((len(sets), width), _MASK_NEG)
    for r, (members, own) in enumerate(zip(sets, self_ids)):
        idx[r, :len(members)] = members
        idx[r, len(members):] = own
        bias[r, :len(members)] = 0.0
    return idx, bias


def full_plan(task: DagTask) -> SamplingPlan:
    """Whole-neighborhood plan (no sampling); used for deterministic
    evaluation and as the reference in regression tests."""
    ids = sorted(task.by_id)
    fwd = [sorted(task.preds[i] | {i}) for i in ids]
    inv = [sorted(task.succs[i] | {i}) for i in ids]
    fwd_idx, fwd_bias = _padded(fwd, ids)
    inv_idx, inv_bias = _padded(inv, ids)
    return SamplingPlan(len(ids), fwd_idx, fwd_bias, inv_idx, inv_bias)


def sampling_weights(members: list[int], ranks: RankTable,
                     invert: bool = False) -> np.ndarray:
    """exp(rank) weights normalized over the given source set, computed as a
    shifted softmax for stability. invert flips the preference (ablation)."""
    r = np.array([ranks.rank[j] for j in members])
    if invert:
        r = -r
    e = np.exp(r - r.max())
    return e / e.sum()


def sample_plan(task: DagTask, ranks: RankTable, size: int,
                rng: np.random.Generator, invert_weights: bool = False) -> SamplingPlan:
    """Weighted fixed-size neighborhood sample per subtask and direction.

    Sampling is without replacement when the source set is large enough,
    with replacement otherwise.
    """
    if size < 1:
        raise ValueError("sample size must be >= 1")
    ids = sorted(task.by_id)
    out = {}
    for key, neigh in (("fwd", task.preds), ("inv", task.succs)):
        idx = np.zeros((len(ids), size), dtype=np.intp)
        for r, i in enumerate(ids):
            members = sorted(neigh[i] | {i})
            p = sampling_weights(members, ranks, invert=invert_weights)
            replace = size > len(members)
            idx[r] = rng.choice(members, size=size, p=p, replace=replace)
        out[key] = idx
    bias = np.zeros((len(ids), size))
    return SamplingPlan(len(ids), out["fwd"], bias, out["inv"], bias.copy())


def stack_plans(plans: list[SamplingPlan]) -> SamplingPlan:
    """Concatenate plans with node-index offsets so a batch of graphs runs
    through one forward pass."""
    offset, fi, fb, ii, ib = 0, [], [], [], []
    width_f = max(p.fwd_idx.shape[1] for p in plans)
    width_i = max(p.inv_idx.shape[1] for p in plans)

    def widen(idx, bias, width):
        pad = width - idx.shape[1]
        if pad == 0:
            return idx, bias
        idx = np.concatenate([idx, np.repeat(idx[:, :1], pad, axis=1)], axis=1)
        bias = np.concatenate([bias, np.full((bias.shape[0], pad), _MASK_NEG)], axis=1)
        return idx, bias

    for p in plans:
        a, b = widen(p.fwd_idx, p.fwd_bias, width_f)
        c, d = widen(p.inv_idx, p.inv_bias, width_i)
        fi.append(a + offset)
        fb.append(b)
        ii.append(c + offset)
        ib.append(d)
        offset += p.n
    return SamplingPlan(offset, np.concatenate(fi), np.concatenate(fb),
                        np.concatenate(ii), np.concatenate(ib))


def _head(h: nn.Tensor, w: nn.Tensor, a: nn.Tensor, idx: np.ndarray,
          bias: np.ndarray) -> nn.Tensor:
    d_out = w.shape[1]
    wh = nn.matmul(h, w)
    s_self = nn.matmul(wh, nn.reshape(nn.take(a, np.arange(d_out)), (d_out, 1)))
    s_nb = nn.reshape(nn.matmul(wh, nn.reshape(
        nn.take(a, np.arange(d_out, 2 * d_out)), (d_out, 1))), (-1,))
    scores = nn.add(nn.add(s_self, nn.take(s_nb, idx)), nn.constant(bias))
    alpha = nn.softmax(scores, axis=-1)
    return nn.attend(alpha, wh, idx)


def gat_forward(h0, plan: SamplingPlan, params: dict[str, nn.Tensor],
                heads: int = HEADS, layers: int = len(LAYER_DIMS) - 1) -> nn.Tensor:
    """Result features for every node in the plan; differentiable w.r.t. the
    attention parameters."""
    h = h0 if isinstance(h0, nn.Tensor) else nn.constant(h0)
    half = heads // 2
    for layer in range(1, layers + 1):
        acc = None
        for z in range(1, heads + 1):
            w, a = params[f"W{layer}_{z}"], params[f"A{layer}_{z}"]
            if z <= half:
                out = _head(h, w, a, plan.fwd_idx, plan.fwd_bias)
            else:
                out = _head(h, w, a, plan.inv_idx, plan.inv_bias)
            acc = out if acc is None else nn.add(acc, out)
        h = nn.elu(nn.mul(acc, nn.constant(1.0 / heads)))
    return h


def attention_coefficients(h: np.ndarray, i: int, neighborhood: list[int],
                           w: np.ndarray, a: np.ndarray) -> dict[int, float]:
    """Single-head attention coefficients of node i over a neighborhood,
    straight from the softmax definition (test/reference path)."""
    wh = h @ w
    scores = np.array([a @ np.concatenate([wh[i], wh[j]]) for j in neighborhood])
    e = np.exp(scores - scores.max())
    alpha = e / e.sum()
    return dict(zip(neighborhood, alpha))
