"""Double deep Q-network scheduler with masked action selection, replay,
periodic target copies, and joint training of the attention extractor.

The same trainer drives both the graph-feature scheduler and the raw-feature
ablation; they differ only in the feature extractor plugged in.
"""
from __future__ import annotations

import csv
import json
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import gat, nn
from .channel import ChannelParams
from .dagtask import DagTask, compute_ranks, priority_list
from .engine import (ScheduleResult, ScheduleState, StateEncoder, apply_action,
                     feasible_actions, run_schedule)
from .mobility import Fleet

MASKED_Q = -1e18
FEATURE_GAT = "gat"
FEATURE_RAW = "raw"
Q_HIDDEN = (128, 128)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    gamma2: float = 0.9
    epsilon_greedy: float = 0.9      # probability of the greedy action
    explore_final: float = 0.01      # exploration prob annealed down to this
    k_copy: int = 5                  # decision steps between target copies
    batch_size: int = 32
    buffer_capacity: int = 10_000
    episodes: int = 500
    sample_size: int = gat.DEFAULT_SAMPLE_SIZE
    reward_scale: float = 1.0        # rewards divided by this before targets
    double: bool = True              # False gives the plain-DQN ablation
    commit_prob: float = 0.0         # probability of a committed episode
    commit_final: float | None = None  # anneal target; None keeps it constant
    demo_margin: float = 0.0         # hinge margin on committed transitions
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.gamma2 <= 1:
            raise ValueError("gamma2 must be in (0, 1]")
        if not 0 <= self.epsilon_greedy <= 1:
            raise ValueError("epsilon_greedy must be in [0, 1]")
        if self.k_copy < 1:
            raise ValueError("k_copy must be >= 1")
        if not 0 <= self.commit_prob <= 1:
            raise ValueError("commit_prob must be in [0, 1]")
        if self.commit_final is not None and not 0 <= self.commit_final <= 1:
            raise ValueError("commit_final must be in [0, 1]")


@dataclass
class Transition:
    plan: gat.SamplingPlan | None
    h0: np.ndarray
    tau: int
    tail: np.ndarray
    action: int                      # vehicle index (0-based)
    reward: float
    tau_next: int
    tail_next: np.ndarray
    mask_next: np.ndarray            # feasibility bits, all False if terminal
    terminal: bool
    mc_return: float | None = None   # remaining episode return, if recorded


class ReplayBuffer:
    def __init__(self, capacity: int):
        self.items: deque[Transition] = deque(maxlen=capacity)

    def __len__(self):
        return len(self.items)

    def append(self, t: Transition):
        self.items.append(t)

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[Transition]:
        idx = rng.integers(0, len(self.items), size=batch_size)
        return [self.items[i] for i in idx]


def make_q_params(rng: np.random.Generator, d_in: int, n_out: int,
                  hidden=Q_HIDDEN) -> dict[str, nn.Tensor]:
    params = {}
    dims = (d_in, *hidden, n_out)
    for i, (a, b) in enumerate(zip(dims, dims[1:]), start=1):
        lim = math.sqrt(6.0 / (a + b))
        params[f"W{i}"] = nn.parameter(rng.uniform(-lim, lim, (a, b)))
        params[f"b{i}"] = nn.parameter(np.zeros(b))
    return params


def q_forward(params: dict[str, nn.Tensor], x: nn.Tensor) -> nn.Tensor:
    n_layers = len(params) // 2
    h = x
    for i in range(1, n_layers + 1):
        h = nn.add(nn.matmul(h, params[f"W{i}"]), params[f"b{i}"])
        if i < n_layers:
            h = nn.elu(h)
    return h


def q_forward_np(params, x: np.ndarray) -> np.ndarray:
    """Plain-numpy twin of q_forward for action selection and targets."""
    n_layers = len(params) // 2
    h = x
    for i in range(1, n_layers + 1):
        w, b = params[f"W{i}"], params[f"b{i}"]
        w = w.data if isinstance(w, nn.Tensor) else w
        b = b.data if isinstance(b, nn.Tensor) else b
        h = h @ w + b
        if i < n_layers:
            h = np.where(h >= 0, h, np.expm1(h))
    return h


def select_action(q: np.ndarray, mask: np.ndarray, epsilon: float,
                  rng: np.random.Generator) -> int:
    """Greedy masked argmax with probability epsilon, else uniform over the
    feasible actions. Never returns a masked action."""
    feasible = np.flatnonzero(mask)
    if len(feasible) == 0:
        raise ValueError("no feasible action")
    if rng.uniform() < epsilon:
        masked = np.where(mask, q, MASKED_Q)
        return int(np.argmax(masked))
    return int(rng.choice(feasible))


def ddqn_target(reward: float, q_next_predict: np.ndarray,
                q_next_target: np.ndarray, mask_next: np.ndarray,
                gamma2: float, terminal: bool) -> float:
    """Bootstrap with the target net at the predict net's argmax action."""
    if terminal:
        return reward
    masked = np.where(mask_next, q_next_predict, MASKED_Q)
    a_star = int(np.argmax(masked))
    return reward + gamma2 * float(q_next_target[a_star])


def dqn_target(reward: float, q_next_target: np.ndarray,
               mask_next: np.ndarray, gamma2: float, terminal: bool) -> float:
    """Plain DQN: select and evaluate on the target net (ablation)."""
    if terminal:
        return reward
    masked = np.where(mask_next, q_next_target, MASKED_Q)
    return reward + gamma2 * float(np.max(masked))


class GatFeatures:
    """Graph-attention features; gradients flow into the attention params."""

    feat_dim = gat.LAYER_DIMS[-1]

    def __init__(self, params: dict[str, nn.Tensor]):
        self.params = params

    def episode_plan(self, task: DagTask, ranks, rng, training: bool,
                     sample_size: int) -> gat.SamplingPlan:
        if training:
            return gat.sample_plan(task, ranks, sample_size, rng)
        return gat.full_plan(task)

    def features_np(self, h0: np.ndarray, plan: gat.SamplingPlan) -> np.ndarray:
        return gat.gat_forward(h0, plan, self.params).data

    def batch_rows(self, items: list[tuple[gat.SamplingPlan, np.ndarray, int]]) -> nn.Tensor:
        """One stacked forward for all (plan, h0, node) items in a batch."""
        unique, offsets = [], {}
        offset = 0
        for plan, h0, _ in items:
            if id(plan) not in offsets:
                offsets[id(plan)] = offset
                unique.append((plan, h0))
                offset += plan.n
        stacked = gat.stack_plans([p for p, _ in unique])
        big_h0 = np.concatenate([h for _, h in unique])
        feats = gat.gat_forward(big_h0, stacked, self.params)
        rows = np.array([offsets[id(plan)] + tau for plan, _, tau in items])
        return nn.take(feats, rows)


class RawFeatures:
    """Raw four-component features (no graph network); the ablation keeps
    the rest of the pipeline identical."""

    feat_dim = 4
    params: dict[str, nn.Tensor] = {}

    def episode_plan(self, task, ranks, rng, training, sample_size):
        return None

    def features_np(self, h0: np.ndarray, plan) -> np.ndarray:
        return h0

    def batch_rows(self, items) -> nn.Tensor:
        return nn.constant(np.stack([h0[tau] for _, h0, tau in items]))


@dataclass
class TrainLogRow:
    episode: int
    episode_return: float
    makespan: float
    epsilon: float
    loss_mean: float


class DdqnScheduler:
    """Trainable subtask-to-vehicle scheduler (graph or raw features)."""

    def __init__(self, b_max: int, v_max: int, region: tuple[float, float],
                 cfg: TrainConfig, feature_mode: str = FEATURE_GAT):
        self.cfg = cfg
        self.feature_mode = feature_mode
        rng = np.random.default_rng([cfg.seed, 101])
        if feature_mode == FEATURE_GAT:
            self.features = GatFeatures(gat.make_gat_params(rng))
        elif feature_mode == FEATURE_RAW:
            self.features = RawFeatures()
        else:
            raise ValueError(f"unknown feature mode {feature_mode!r}")
        self.encoder = StateEncoder(b_max, v_max, region, self.features.feat_dim)
        self.q_predict = make_q_params(rng, self.encoder.state_dim, v_max)
        self.q_target = {k: p.data.copy() for k, p in self.q_predict.items()}
        trainable = {f"q/{k}": p for k, p in self.q_predict.items()}
        trainable.update({f"gat/{k}": p for k, p in self.features.params.items()})
        self.optimizer = nn.Adam(trainable, lr=cfg.lr)
        self.buffer = ReplayBuffer(cfg.buffer_capacity)
        self.rng = np.random.default_rng([cfg.seed, 202])
        self.global_step = 0

    # -- policy -----------------------------------------------------------

    def _q_row(self, feats: np.ndarray, tau: int, tail: np.ndarray) -> np.ndarray:
        x = np.concatenate([feats[tau], tail])[None, :]
        return q_forward_np(self.q_predict, x)[0]

    def _episode_setup(self, task, fleet, chan, training: bool, rng):
        ranks = compute_ranks(task, fleet, chan)
        order = priority_list(ranks)
        h0 = gat.raw_features(task)
        plan = self.features.episode_plan(task, ranks, rng, training,
                                          self.cfg.sample_size)
        feats = self.features.features_np(h0, plan)
        return order, h0, plan, feats

    def greedy_schedule(self, task: DagTask, fleet: Fleet,
                        chan: ChannelParams) -> ScheduleResult:
        """Deterministic masked-greedy policy with full neighborhoods."""
        order, _, _, feats = self._episode_setup(task, fleet, chan,
                                                 training=False, rng=None)

        def chooser(state: ScheduleState, mask):
            tail = self.encoder.tail(state, mask)
            mvec = self.encoder.mask_vector(state, mask)
            q = self._q_row(feats, state.current_subtask, tail)
            idx = int(np.argmax(np.where(mvec, q, MASKED_Q)))
            return fleet.vehicles[idx].id

        return run_schedule(task, fleet, chan, order, chooser)

    # -- training ---------------------------------------------------------

    def _exploration_prob(self, episode: int) -> float:
        start = 1.0 - self.cfg.epsilon_greedy
        if self.cfg.episodes <= 1:
            return start
        frac = episode / (self.cfg.episodes - 1)
        return start + (self.cfg.explore_final - start) * min(frac, 1.0)

    def _commit_prob(self, episode: int) -> float:
        start = self.cfg.commit_prob
        final = start if self.cfg.commit_final is None else self.cfg.commit_final
        if self.cfg.episodes <= 1:
            return start
        frac = min(episode / (self.cfg.episodes - 1), 1.0)
        return start + (final - start) * frac

    def train_step(self, batch: list[Transition]) -> float:
        """One joint optimizer step over a replay batch; returns the loss."""
        if not batch:
            raise ValueError("empty batch")
        b = len(batch)
        items = [(t.plan, t.h0, t.tau) for t in batch]
        items += [(t.plan, t.h0, t.tau_next) for t in batch]
        rows = self.features.batch_rows(items)
        tails = np.stack([t.tail for t in batch])
        x_s = nn.concat([nn.take(rows, np.arange(b)), nn.constant(tails)], axis=1)
        q_s = q_forward(self.q_predict, x_s)
        actions = np.array([t.action for t in batch])
        q_sa = nn.take_pairs(q_s, np.arange(b), actions)

        # targets are constants: plain-numpy forward on the next states
        feats_next = rows.data[b:]
        tails_next = np.stack([t.tail_next for t in batch])
        x_next = np.concatenate([feats_next, tails_next], axis=1)
        q_next_p = q_forward_np(self.q_predict, x_next)
        q_next_t = q_forward_np(self.q_target, x_next)
        y = np.empty(b)
        for r, t in enumerate(batch):
            reward = t.reward / self.cfg.reward_scale
            if t.mc_return is not None:
                y[r] = t.mc_return / self.cfg.reward_scale
            elif self.cfg.double:
                y[r] = ddqn_target(reward, q_next_p[r], q_next_t[r], t.mask_next,
                                   self.cfg.gamma2, t.terminal)
            else:
                y[r] = dqn_target(reward, q_next_t[r], t.mask_next,
                                  self.cfg.gamma2, t.terminal)

        loss = nn.mul(nn.mean(nn.square(nn.sub(q_sa, nn.constant(y)))),
                      nn.constant(0.5))
        demo = np.array([r for r, t in enumerate(batch)
                         if t.mc_return is not None])
        if self.cfg.demo_margin > 0 and demo.size:
            # Committed actions must stay the argmax at their states by a
            # margin, so value overestimates of untried alternatives cannot
            # silently break the policy away from a consistent placement.
            m = self.cfg.demo_margin
            aug = q_s.data[demo] + m
            aug[np.arange(demo.size), actions[demo]] -= m
            j_star = aug.argmax(axis=1)
            offset = np.where(j_star == actions[demo], 0.0, m)
            hinge = nn.add(nn.sub(nn.take_pairs(q_s, demo, j_star),
                                  nn.take_pairs(q_s, demo, actions[demo])),
                           nn.constant(offset))
            loss = nn.add(loss, nn.mean(hinge))
        self.optimizer.zero_grad()
        loss.backward()
        self.optimizer.step()
        return float(loss.data)

    def _copy_target(self):
        for k, p in self.q_predict.items():
            self.q_target[k] = p.data.copy()

    def train(self, source, episodes: int | None = None,
              log_path=None) -> list[TrainLogRow]:
        """Run training episodes; source(episode) -> (task, fleet, channel).

        Trains every decision step once the buffer holds a batch; copies the
        target net every k_copy decision steps.
        """
        episodes = self.cfg.episodes if episodes is None else episodes
        log = []
        for ep in range(episodes):
            task, fleet, chan = source(ep)
            ep_rng = np.random.default_rng([self.cfg.seed, 303, ep])
            order, h0, plan, feats = self._episode_setup(task, fleet, chan,
                                                         training=True, rng=ep_rng)
            state = ScheduleState(task, fleet, chan, order)
            explore = self._exploration_prob(ep)
            # A committed episode places every subtask on one random vehicle
            # (first feasible fallback). Spreading a task defers its penalty
            # to the join transfer, so epsilon-greedy alone visits the
            # single-vehicle trajectories far too rarely to value them.
            commit_idx = None
            if self.cfg.commit_prob > 0 and ep_rng.random() < self._commit_prob(ep):
                commit_idx = int(ep_rng.integers(len(fleet)))
            ep_return, losses, pending = 0.0, [], []
            while not state.done:
                tau = state.current_subtask
                mask = feasible_actions(state)
                tail = self.encoder.tail(state, mask)
                mvec = self.encoder.mask_vector(state, mask)
                if commit_idx is not None:
                    a_idx = commit_idx if mvec[commit_idx] else int(np.argmax(mvec))
                else:
                    q = self._q_row(feats, tau, tail)
                    a_idx = select_action(q, mvec, 1.0 - explore, self.rng)
                reward, _ = apply_action(state, fleet.vehicles[a_idx].id)
                ep_return += reward
                if state.done:
                    tau_next, tail_next = tau, np.zeros_like(tail)
                    mask_next = np.zeros(self.encoder.v_max, dtype=bool)
                else:
                    tau_next = state.current_subtask
                    nmask = feasible_actions(state)
                    tail_next = self.encoder.tail(state, nmask)
                    mask_next = self.encoder.mask_vector(state, nmask)
                t = Transition(plan, h0, tau, tail, a_idx, reward,
                               tau_next, tail_next, mask_next, state.done)
                # Committed episodes wait for the episode to finish so each
                # transition can carry its observed remaining return; the
                # one-step bootstrap alone needs far too many sweeps to push
                # the end-of-episode costs back through a long subtask chain.
                if commit_idx is None:
                    self.buffer.append(t)
                else:
                    pending.append(t)
                if len(self.buffer) >= self.cfg.batch_size:
                    losses.append(self.train_step(
                        self.buffer.sample(self.cfg.batch_size, self.rng)))
                self.global_step += 1
                if self.global_step % self.cfg.k_copy == 0:
                    self._copy_target()
            remaining = 0.0
            for t in reversed(pending):
                remaining = t.reward + self.cfg.gamma2 * remaining
                t.mc_return = remaining
            for t in pending:
                self.buffer.append(t)
            log.append(TrainLogRow(ep, ep_return, state.max_aft, explore,
                                   float(np.mean(losses)) if losses else 0.0))
        if log_path is not None:
            with open(log_path, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["episode", "return", "makespan", "epsilon",
                                 "loss_mean"])
                for row in log:
                    writer.writerow([row.episode, repr(row.episode_return),
                                     repr(row.makespan), repr(row.epsilon),
                                     repr(row.loss_mean)])
        return log

    # -- persistence -------------------------------------------------------

    def save(self, path):
        groups = {"q_predict": self.q_predict}
        if self.features.params:
            groups["gat"] = self.features.params
        nn.save_checkpoint(path, groups)
        meta = {
            "feature_mode": self.feature_mode,
            "b_max": self.encoder.b_max,
            "v_max": self.encoder.v_max,
            "region": list(self.encoder.region),
            "cfg": {"lr": self.cfg.lr, "gamma2": self.cfg.gamma2,
                    "epsilon_greedy": self.cfg.epsilon_greedy,
                    "seed": self.cfg.seed},
        }
        with open(str(path) + ".meta.json", "w") as fh:
            json.dump(meta, fh, indent=1)

    @classmethod
    def load(cls, path, cfg: TrainConfig | None = None) -> "DdqnScheduler":
        with open(str(path) + ".meta.json") as fh:
            meta = json.load(fh)
        cfg = cfg or TrainConfig(seed=meta["cfg"]["seed"])
        sched = cls(meta["b_max"], meta["v_max"], tuple(meta["region"]), cfg,
                    feature_mode=meta["feature_mode"])
        groups = nn.load_checkpoint(path)
        for k, p in groups["q_predict"].items():
            sched.q_predict[k].data = p.data
        if "gat" in groups:
            for k, p in groups["gat"].items():
                sched.features.params[k].data = p.data
        sched._copy_target()
        return sched
