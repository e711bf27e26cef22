"""Trajectory-balance training of the forward policy.

Per trajectory the residual is

    log Z + sum log P_F - log R(x) - sum log P_B

and the loss is its square, averaged over the batch.  Rollouts are
on-policy with epsilon-uniform exploration; updates use Adam with a
separate learning rate for log Z.

RNG tree: ``SeedSequence(seed).spawn(3)`` gives ``[init, rollouts, probes]``.
The init stream draws the starting weights (so the untrained baseline for a
config is ``init_model(config)``); the rollout stream draws puzzles,
exploration coins and actions, in batch order, one trajectory at a time; the
probe stream feeds the periodic success-rate probe only, so probing never
changes the training trajectory.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .decoding import sample_index, softmax
from .errors import DivergenceDetected
from .game_env import NUM_STEPS, REWARD_FAIL, REWARD_SUCCESS, Puzzle, Trajectory, reward
from .graph import PuzzleGraph, graph_for
from .policy import (
    PolicyModel,
    backward,
    batch_from_features,
    forward,
    log_pb_trajectory,
    make_batch,
    segment_log_softmax,
    taken_rows,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 20000
    batch_size: int = 16
    lr_params: float = 1e-3
    lr_logz: float = 1e-1
    explore_eps: float = 0.05
    reward_success: float = REWARD_SUCCESS
    reward_fail: float = REWARD_FAIL
    seed: int = 0
    hidden: int = 128
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    probe_every: int = 1000
    probe_attempts: int = 20

    def __post_init__(self):
        if self.lr_params < 0 or self.lr_logz < 0:
            raise ValueError("learning rates must be non-negative")
        if not 0 <= self.explore_eps < 1:
            raise ValueError("explore_eps must lie in [0, 1)")
        if self.reward_success <= 0 or self.reward_fail <= 0:
            raise ValueError("rewards must be positive")
        if self.steps < 0 or self.batch_size < 1:
            raise ValueError("steps >= 0 and batch_size >= 1 required")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = cls.__dataclass_fields__
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


@dataclass
class TrainLog:
    steps: list[dict] = field(default_factory=list)
    probes: list[dict] = field(default_factory=list)

    def lines(self) -> list[str]:
        out = [json.dumps({"kind": "step", **r}, sort_keys=True) for r in self.steps]
        out += [json.dumps({"kind": "probe", **r}, sort_keys=True) for r in self.probes]
        return out

    @property
    def losses(self) -> np.ndarray:
        return np.array([r["loss"] for r in self.steps])


def _streams(seed: int) -> list[np.random.Generator]:
    return [np.random.default_rng(ss) for ss in np.random.SeedSequence(seed).spawn(3)]


def init_model(config: TrainConfig) -> PolicyModel:
    init_rng = _streams(config.seed)[0]
    return PolicyModel.init(init_rng, hidden=config.hidden)


@dataclass
class Rollout:
    """A sampled path through a :class:`PuzzleGraph`: 4 node ids and 3 action indices."""

    graph: PuzzleGraph
    nodes: list[int]
    actions: list[int]

    @property
    def success(self) -> bool:
        return self.graph.is_success(self.nodes[-1])

    def trajectory(self) -> Trajectory:
        return self.graph.trajectory(self.nodes[:-1], self.actions)


def rollout_batch(
    model: PolicyModel,
    graphs: Sequence[PuzzleGraph],
    rng: np.random.Generator,
    explore_eps: float,
) -> list[Rollout]:
    """Roll one path per graph; the policy is evaluated for all of them at once per depth.

    Random draws happen per rollout in list order: one exploration coin,
    then either a uniform index or one inverse-CDF uniform.
    """
    out = [Rollout(g, [0], []) for g in graphs]
    for _ in range(NUM_STEPS):
        batch = batch_from_features([r.graph.features(r.nodes[-1], model.encoder) for r in out])
        logits, _ = forward(model, batch)
        for r, start, size in zip(out, batch.starts, batch.sizes):
            if rng.random() < explore_eps:
                j = int(rng.integers(size))
            else:
                j = sample_index(softmax(logits[start : start + size]), rng)
            _, children = r.graph.expand(r.nodes[-1])
            r.actions.append(j)
            r.nodes.append(int(children[j]))
    return out


def sample_batch(
    model: PolicyModel, puzzles: Sequence[Puzzle], rng: np.random.Generator, explore_eps: float
) -> list[Trajectory]:
    return [r.trajectory() for r in rollout_batch(model, [graph_for(p) for p in puzzles], rng, explore_eps)]


def sample_trajectory(model: PolicyModel, puzzle: Puzzle, rng: np.random.Generator, explore_eps: float = 0.0) -> Trajectory:
    """Three steps; each is uniform with probability ``explore_eps``, else drawn from softmax(logits)."""
    return sample_batch(model, [puzzle], rng, explore_eps)[0]


def _tb(model: PolicyModel, batch, taken: np.ndarray, log_r: np.ndarray, log_pb: np.ndarray, want_grads: bool):
    logits, cache = forward(model, batch)
    logp = segment_log_softmax(logits, batch)
    rows = batch.starts + taken
    res = model.log_z + logp[rows].reshape(-1, NUM_STEPS).sum(axis=1) - log_r - log_pb
    loss = float(np.mean(res**2))
    if not want_grads:
        return loss, res, None
    coef = 2.0 * res / res.size  # dL/d(residual_j)
    # d residual_j / d logit_r = [r taken] - softmax_r over the rows of j's states
    per_state = np.repeat(coef, NUM_STEPS)
    d = -np.exp(logp) * per_state[batch.row_state]
    d[rows] += per_state
    grads = backward(model, cache, d)
    grads["log_z"] = np.array([coef.sum()])
    return loss, res, grads


def _log_reward(success: bool, config: TrainConfig) -> float:
    return math.log(config.reward_success if success else config.reward_fail)


def _trajectory_terms(model: PolicyModel, trajectories: Sequence[Trajectory], config: TrainConfig):
    states, taken = taken_rows(trajectories)
    batch = make_batch(states, model.encoder)
    log_r = np.array([math.log(reward(t, config.reward_success, config.reward_fail)) for t in trajectories])
    log_pb = np.array([log_pb_trajectory(t) for t in trajectories])
    return batch, np.asarray(taken), log_r, log_pb


def _rollout_terms(model: PolicyModel, rollouts: Sequence[Rollout], config: TrainConfig):
    feats, taken, log_pb = [], [], []
    for r in rollouts:
        feats += [r.graph.features(n, model.encoder) for n in r.nodes[:-1]]
        taken += r.actions
        log_pb.append(sum(r.graph.log_pb(n) for n in r.nodes[1:]))
    log_r = np.array([_log_reward(r.success, config) for r in rollouts])
    return batch_from_features(feats), np.asarray(taken), log_r, np.asarray(log_pb)


def tb_residual(model: PolicyModel, trajectory: Trajectory, config: TrainConfig | None = None) -> float:
    _, res, _ = _tb(model, *_trajectory_terms(model, [trajectory], config or TrainConfig()), want_grads=False)
    return float(res[0])


def tb_loss(model: PolicyModel, trajectory: Trajectory, config: TrainConfig | None = None) -> float:
    """``(log Z + sum log P_F - log R - sum log P_B) ** 2`` for one trajectory."""
    return tb_residual(model, trajectory, config) ** 2


def tb_loss_and_grads(
    model: PolicyModel, trajectories: Sequence[Trajectory], config: TrainConfig | None = None
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean TB loss over ``trajectories`` and its gradient (including ``"log_z"``)."""
    loss, _, grads = _tb(model, *_trajectory_terms(model, trajectories, config or TrainConfig()), want_grads=True)
    return loss, grads


def rollout_loss_and_grads(model: PolicyModel, rollouts: Sequence[Rollout], config: TrainConfig):
    """Same objective as :func:`tb_loss_and_grads`, computed from cached graph features."""
    loss, _, grads = _tb(model, *_rollout_terms(model, rollouts, config), want_grads=True)
    return loss, grads


class Adam:
    def __init__(self, model: PolicyModel, config: TrainConfig):
        self.cfg = config
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in model.params.items()}
        self.v = {k: np.zeros_like(v) for k, v in model.params.items()}
        self.m["log_z"] = np.zeros(1)
        self.v["log_z"] = np.zeros(1)

    def step(self, model: PolicyModel, grads: dict[str, np.ndarray]) -> None:
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1**self.t
        bc2 = 1.0 - c.beta2**self.t
        for name, g in grads.items():
            self.m[name] = c.beta1 * self.m[name] + (1 - c.beta1) * g
            self.v[name] = c.beta2 * self.v[name] + (1 - c.beta2) * g * g
            lr = c.lr_logz if name == "log_z" else c.lr_params
            update = lr * (self.m[name] / bc1) / (np.sqrt(self.v[name] / bc2) + c.adam_eps)
            if name == "log_z":
                model.log_z = float(model.log_z - update[0])
            else:
                model.params[name] -= update


def probe_success_rate(model: PolicyModel, graphs: Sequence[PuzzleGraph], attempts: int, rng: np.random.Generator) -> float:
    """Fraction of puzzles solved at least once in ``attempts`` plain samples."""
    rollouts = rollout_batch(model, [g for g in graphs for _ in range(attempts)], rng, 0.0)
    solved = {id(r.graph) for r in rollouts if r.success}
    return len(solved) / len({id(g) for g in graphs})


def train(
    config: TrainConfig,
    train_split: Sequence,
    model: PolicyModel | None = None,
) -> tuple[PolicyModel, TrainLog]:
    """Train on ``train_split`` (PuzzleRecords or Puzzles); deterministic given ``config.seed``."""
    puzzles = [getattr(r, "puzzle", r) for r in train_split]
    if not puzzles:
        raise ValueError("empty train split")
    _, rng, probe_rng = _streams(config.seed)
    model = model.copy() if model is not None else init_model(config)
    opt = Adam(model, config)
    log = TrainLog()
    graphs = [graph_for(p) for p in puzzles]
    for step in range(1, config.steps + 1):
        idx = rng.integers(len(graphs), size=config.batch_size)
        rollouts = rollout_batch(model, [graphs[i] for i in idx], rng, config.explore_eps)
        loss, grads = rollout_loss_and_grads(model, rollouts, config)
        if not np.isfinite(loss) or not all(np.isfinite(g).all() for g in grads.values()):
            raise DivergenceDetected(step, model.copy())
        opt.step(model, grads)
        mean_log_r = float(np.mean([_log_reward(r.success, config) for r in rollouts]))
        log.steps.append({"step": step, "loss": loss, "mean_log_reward": mean_log_r, "log_z": model.log_z})
        if config.probe_every and step % config.probe_every == 0:
            sr = probe_success_rate(model, graphs, config.probe_attempts, probe_rng)
            log.probes.append({"step": step, "probe_sr": sr})
            logger.info("step %d loss %.4f log_z %.3f probe_sr %.2f", step, loss, model.log_z, sr)
    return model, log
