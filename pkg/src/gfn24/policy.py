"""Forward policy network, fixed backward policy, and checkpoint I/O.

The forward policy scores each legal action of a state with a small tanh
MLP and normalises the scores with a softmax over that state's actions:

    h1    = tanh(W1 @ enc(s) + b1)
    h2_a  = tanh(W2s @ h1 + W2a @ enc(a) + b2)     for every legal action a
    logit = w3 @ h2_a + b3

Gradients are derived by hand; ``backward`` takes an upstream gradient per
(state, action) row and returns gradients for every parameter.

The backward policy is uniform over the incoming edges of a state in the
puzzle's DAG, so it needs no parameters.
"""

from __future__ import annotations

import base64
import hashlib
import json
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import IllegalAction, TerminalState
from .game_env import (
    NUM_OPERANDS,
    NUM_STEPS,
    OPS,
    ArithStep,
    GameState,
    Trajectory,
    _actions_for,
    build_dag,
)

CHECKPOINT_FORMAT = "gfn24-checkpoint/1"
PARAM_NAMES = ("W1", "b1", "W2s", "W2a", "b2", "w3", "b3")


@dataclass(frozen=True)
class EncoderConfig:
    value_scale: float = 32.0
    clip: float = 16.0

    @property
    def state_dim(self) -> int:
        return NUM_OPERANDS * 4 + NUM_STEPS + 1

    @property
    def action_dim(self) -> int:
        return len(OPS) + 3 * 3 + 2


def _value_channels(v: Fraction, enc: EncoderConfig) -> tuple[float, float, float]:
    c = enc.clip
    value = min(max(float(v) / enc.value_scale, -c), c)
    num = min(max(v.numerator / enc.value_scale, -c), c)
    return value, num, 1.0 / v.denominator


@lru_cache(maxsize=200_000)
def encode_state(values: tuple[Fraction, ...], target: int, enc: EncoderConfig = EncoderConfig()) -> np.ndarray:
    """Fixed-width state features.  ``values`` must already be sorted."""
    out = np.zeros(enc.state_dim)
    for slot, v in enumerate(values):
        out[slot * 4 : slot * 4 + 3] = _value_channels(v, enc)
        out[slot * 4 + 3] = 1.0
    depth = NUM_OPERANDS - len(values)
    out[NUM_OPERANDS * 4 + depth] = 1.0
    out[-1] = target / enc.value_scale
    out.flags.writeable = False
    return out


@lru_cache(maxsize=200_000)
def encode_actions(values: tuple[Fraction, ...], target: int, enc: EncoderConfig = EncoderConfig()) -> np.ndarray:
    """One row per legal action: op one-hot; left, right and result channels; result vs target.

    The last two columns are an exact-hit flag and the clipped gap
    ``(result - target) / value_scale``.  Both are relative to the target, so
    the same weights apply unchanged to any target.
    """
    acts = _actions_for(values)
    out = np.zeros((len(acts), enc.action_dim))
    for i, a in enumerate(acts):
        out[i, OPS.index(a.op)] = 1.0
        out[i, 4:7] = _value_channels(a.left, enc)
        out[i, 7:10] = _value_channels(a.right, enc)
        out[i, 10:13] = _value_channels(a.result, enc)
        out[i, 13] = float(a.result == target)
        out[i, 14] = min(max(float(a.result - target) / enc.value_scale, -enc.clip), enc.clip)
    out.flags.writeable = False
    return out


@lru_cache(maxsize=200_000)
def _action_index(values: tuple[Fraction, ...]) -> dict[ArithStep, int]:
    return {a: i for i, a in enumerate(_actions_for(values))}


def action_index(state: GameState, step: ArithStep) -> int:
    try:
        return _action_index(state.remaining)[step.canonical()]
    except KeyError:
        raise IllegalAction(f"{step} is not legal here") from None


@dataclass
class PolicyModel:
    params: dict[str, np.ndarray]
    log_z: float = 0.0
    hidden: int = 128
    encoder: EncoderConfig = field(default_factory=EncoderConfig)

    @classmethod
    def init(cls, rng: np.random.Generator, hidden: int = 128, encoder: EncoderConfig | None = None) -> "PolicyModel":
        """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases and log Z start at zero."""
        enc = encoder or EncoderConfig()
        ds, da, h = enc.state_dim, enc.action_dim, hidden

        def u(shape, fan_in):
            bound = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=shape)

        params = {
            "W1": u((h, ds), ds),
            "b1": np.zeros(h),
            "W2s": u((h, h), h + da),
            "W2a": u((h, da), h + da),
            "b2": np.zeros(h),
            "w3": u((h,), h),
            "b3": np.zeros(1),
        }
        return cls(params, 0.0, hidden, enc)

    def copy(self) -> "PolicyModel":
        return PolicyModel({k: v.copy() for k, v in self.params.items()}, self.log_z, self.hidden, self.encoder)

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.log_z)) and all(np.isfinite(v).all() for v in self.params.values())

    def digest(self) -> str:
        h = hashlib.sha256()
        for name in PARAM_NAMES:
            h.update(np.ascontiguousarray(self.params[name], dtype="<f8").tobytes())
        h.update(np.float64(self.log_z).astype("<f8").tobytes())
        return h.hexdigest()


@dataclass
class Batch:
    """Rows of (state, action) pairs, grouped contiguously by state."""

    S: np.ndarray  # (n_states, state_dim)
    A: np.ndarray  # (n_rows, action_dim)
    row_state: np.ndarray  # (n_rows,)
    starts: np.ndarray  # (n_states,) first row of each state
    sizes: np.ndarray  # (n_states,)


def batch_from_features(features: Sequence[tuple[np.ndarray, np.ndarray]]) -> Batch:
    """Stack per-state (state row, action block) pairs into one batch."""
    S = np.stack([f[0] for f in features])
    blocks = [f[1] for f in features]
    sizes = np.array([b.shape[0] for b in blocks])
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
    return Batch(S, np.concatenate(blocks), np.repeat(np.arange(len(blocks)), sizes), starts, sizes)


def make_batch(states: Sequence[GameState], enc: EncoderConfig) -> Batch:
    for s in states:
        if s.is_terminal:
            raise TerminalState("no logits for a terminal state")
    return batch_from_features([(encode_state(s.remaining, s.target, enc), encode_actions(s.remaining, s.target, enc)) for s in states])


@dataclass
class Cache:
    batch: Batch
    H1: np.ndarray
    H2: np.ndarray


def forward(model: PolicyModel, batch: Batch) -> tuple[np.ndarray, Cache]:
    p = model.params
    H1 = np.tanh(batch.S @ p["W1"].T + p["b1"])
    G = H1 @ p["W2s"].T
    H2 = np.tanh(G[batch.row_state] + batch.A @ p["W2a"].T + p["b2"])
    logits = H2 @ p["w3"] + p["b3"][0]
    return logits, Cache(batch, H1, H2)


def backward(model: PolicyModel, cache: Cache, d_logits: np.ndarray) -> dict[str, np.ndarray]:
    p, b = model.params, cache.batch
    grads = {"w3": cache.H2.T @ d_logits, "b3": np.array([d_logits.sum()])}
    dP2 = np.outer(d_logits, p["w3"]) * (1.0 - cache.H2**2)
    grads["W2a"] = dP2.T @ b.A
    grads["b2"] = dP2.sum(axis=0)
    dG = np.add.reduceat(dP2, b.starts, axis=0)
    grads["W2s"] = dG.T @ cache.H1
    dP1 = (dG @ p["W2s"]) * (1.0 - cache.H1**2)
    grads["W1"] = dP1.T @ b.S
    grads["b1"] = dP1.sum(axis=0)
    return grads


def segment_log_softmax(logits: np.ndarray, batch: Batch) -> np.ndarray:
    m = np.maximum.reduceat(logits, batch.starts)
    shifted = logits - m[batch.row_state]
    lse = np.log(np.add.reduceat(np.exp(shifted), batch.starts))
    return shifted - lse[batch.row_state]


def forward_logits(model: PolicyModel, state: GameState) -> list[tuple[ArithStep, float]]:
    """(action, logit) for each legal action, in ``legal_actions`` order."""
    batch = make_batch([state], model.encoder)
    logits, _ = forward(model, batch)
    return list(zip(_actions_for(state.remaining), logits.tolist()))


def logits_array(model: PolicyModel, state: GameState) -> np.ndarray:
    logits, _ = forward(model, make_batch([state], model.encoder))
    return logits


def taken_rows(trajectories: Sequence[Trajectory]) -> tuple[list[GameState], list[int]]:
    """Flatten trajectories into their 3 non-terminal states and the in-state index of each taken action."""
    states, idx = [], []
    for t in trajectories:
        for state, step in zip(t.states[:-1], t.steps):
            states.append(state)
            idx.append(action_index(state, step))
    return states, idx


def log_pf_batch(model: PolicyModel, trajectories: Sequence[Trajectory]):
    """Per-trajectory sum of log P_F, plus what ``backward`` needs."""
    states, idx = taken_rows(trajectories)
    batch = make_batch(states, model.encoder)
    logits, cache = forward(model, batch)
    logp = segment_log_softmax(logits, batch)
    rows = batch.starts + np.asarray(idx)
    per_state = logp[rows]
    per_traj = per_state.reshape(len(trajectories), NUM_STEPS).sum(axis=1)
    return per_traj, (cache, logits, logp, rows)


def log_pf_trajectory(model: PolicyModel, trajectory: Trajectory) -> float:
    per_traj, _ = log_pf_batch(model, [trajectory])
    return float(per_traj[0])


def grad_log_pf(model: PolicyModel, trajectory: Trajectory) -> dict[str, np.ndarray]:
    """Gradient of ``log_pf_trajectory`` w.r.t. every network parameter."""
    _, (cache, logits, logp, rows) = log_pf_batch(model, [trajectory])
    d = -np.exp(logp)
    d[rows] += 1.0
    return backward(model, cache, d)


# -- backward policy -------------------------------------------------------------------


def parent_count(root: Sequence[int], state: GameState) -> int:
    """Incoming (parent, action) edges of ``state`` in the DAG rooted at ``root``."""
    dag = build_dag(tuple(sorted(Fraction(n) for n in root)))
    return dag.in_degree[(state.depth, state.remaining)]


def log_pb_trajectory(trajectory: Trajectory) -> float:
    """Uniform P_B over incoming (parent, action) edges, summed along the trajectory."""
    return -float(sum(np.log(parent_count(trajectory.puzzle.numbers, s)) for s in trajectory.states[1:]))


# -- checkpoints -----------------------------------------------------------------------


def _pack(arr: np.ndarray) -> dict:
    data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
    return {"shape": list(arr.shape), "dtype": "<f8", "data": base64.b64encode(data).decode("ascii")}


def _unpack(rec: dict) -> np.ndarray:
    if rec["dtype"] != "<f8":
        raise ValueError(f"unsupported tensor dtype {rec['dtype']}")
    raw = base64.b64decode(rec["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(rec["shape"]).astype(np.float64)


def checkpoint_record(model: PolicyModel, meta: dict | None = None) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "hidden": model.hidden,
        "encoder": asdict(model.encoder),
        "log_z": _pack(np.array(model.log_z)),
        "tensors": {name: _pack(model.params[name]) for name in PARAM_NAMES},
        "meta": meta or {},
    }


def save_checkpoint(model: PolicyModel, path, meta: dict | None = None) -> str:
    """Write the checkpoint as sorted-key JSON; returns the sha256 of the bytes written."""
    text = json.dumps(checkpoint_record(model, meta), sort_keys=True, indent=1) + "\n"
    Path(path).write_text(text)
    return hashlib.sha256(text.encode()).hexdigest()


def load_checkpoint(path) -> tuple[PolicyModel, dict]:
    rec = json.loads(Path(path).read_text())
    if rec.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    params = {name: _unpack(rec["tensors"][name]) for name in PARAM_NAMES}
    model = PolicyModel(params, float(_unpack(rec["log_z"])), int(rec["hidden"]), EncoderConfig(**rec["encoder"]))
    return model, rec.get("meta", {})
