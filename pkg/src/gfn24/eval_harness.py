"""Success-rate / trajectory-count evaluation and the 24 -> 42 transfer run.

Each puzzle gets ``attempts`` (20) independent rollouts under a decode
config.  SR is 1 if any attempt reaches the target; TC is the number of
distinct canonical step sequences among the successful attempts.

Every attempt owns its RNG, seeded from ``(seed, cell key, puzzle key,
attempt index)``, so cells and puzzles are reproducible in isolation and
the report does not depend on puzzle order.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dataset import PuzzleRecord
from .decoding import DecodeConfig, sample_index, transform
from .errors import ChecksumMismatch
from .game_env import NUM_STEPS, Puzzle, Trajectory
from .graph import PuzzleGraph, graph_for
from .oracle import verify_solution
from .policy import PolicyModel, batch_from_features, forward, load_checkpoint
from .trainer import TrainConfig, init_model

ATTEMPTS = 20
EMPTY = "–"
MODEL_LABELS = {"untrained": "Untrained (random init)", "trained": "Fine-tuned with GFlowNet"}


def _key(text: str) -> int:
    return int(hashlib.sha256(text.encode()).hexdigest()[:12], 16)


def puzzle_key(puzzle: Puzzle) -> int:
    return _key(f"{sorted(puzzle.numbers)}|{puzzle.target}")


def attempt_rng(seed: int, config: DecodeConfig, puzzle: Puzzle, attempt: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), _key(config.key), puzzle_key(puzzle), int(attempt)])


@dataclass(frozen=True)
class AttemptResult:
    trajectory: Trajectory
    success: bool
    canonical_key: str


@dataclass(frozen=True)
class PuzzleEval:
    puzzle: Puzzle
    attempts: tuple[AttemptResult, ...]

    @property
    def sr(self) -> int:
        return int(any(a.success for a in self.attempts))

    @property
    def tc(self) -> int:
        return len({a.canonical_key for a in self.attempts if a.success})

    def __post_init__(self):
        # global metric invariants; every evaluation passes through here
        assert self.tc >= self.sr, "TC must be >= SR"
        assert self.tc <= len(self.attempts)


class Sampler:
    """Decodes with a frozen model; logits and filtered distributions are cached per graph node."""

    def __init__(self, model: PolicyModel):
        self.model = model
        # graphs are pinned here so the id()-based cache keys below stay unique
        self._graphs: dict[Puzzle, PuzzleGraph] = {}
        self._logits: dict[tuple[int, int], np.ndarray] = {}
        self._probs: dict[tuple[int, int, DecodeConfig], np.ndarray] = {}

    def logits(self, graph: PuzzleGraph, node: int) -> np.ndarray:
        key = (id(graph), node)
        out = self._logits.get(key)
        if out is None:
            out, _ = forward(self.model, batch_from_features([graph.features(node, self.model.encoder)]))
            self._logits[key] = out
        return out

    def probs(self, graph: PuzzleGraph, node: int, config: DecodeConfig) -> np.ndarray:
        key = (id(graph), node, config)
        out = self._probs.get(key)
        if out is None:
            out = self._probs[key] = transform(self.logits(graph, node), config)
        return out

    def attempt(self, puzzle: Puzzle, config: DecodeConfig, rng: np.random.Generator) -> Trajectory:
        graph = self._graphs.get(puzzle)
        if graph is None:
            graph = self._graphs[puzzle] = graph_for(puzzle)
        node, nodes, actions = 0, [], []
        for _ in range(NUM_STEPS):
            j = sample_index(self.probs(graph, node, config), rng)
            nodes.append(node)
            actions.append(j)
            node = int(graph.expand(node)[1][j])
        return graph.trajectory(nodes, actions)


def grade(trajectory: Trajectory) -> AttemptResult:
    success = trajectory.success
    if success and not verify_solution(trajectory):
        raise AssertionError(f"grader and independent evaluator disagree on {trajectory.steps}")
    return AttemptResult(trajectory, success, trajectory.canonical_key())


def evaluate_puzzle(
    model: PolicyModel | Sampler,
    puzzle: Puzzle,
    config: DecodeConfig,
    seed: int,
    attempts: int = ATTEMPTS,
) -> PuzzleEval:
    sampler = model if isinstance(model, Sampler) else Sampler(model)
    results = tuple(grade(sampler.attempt(puzzle, config, attempt_rng(seed, config, puzzle, a))) for a in range(attempts))
    return PuzzleEval(puzzle, results)


@dataclass
class CellResult:
    config: DecodeConfig
    n_puzzles: int
    sr_sum: int
    tc_sum: int
    per_puzzle: list[tuple[tuple[int, ...], int, int]]  # (numbers, sr, tc), sorted

    @property
    def sr(self) -> float:
        return self.sr_sum / self.n_puzzles

    @property
    def tc_mean(self) -> float:
        return self.tc_sum / self.n_puzzles

    @property
    def tc_over_sr(self) -> float | None:
        """Unique correct solutions per solved puzzle (sum TC / sum SR); None when nothing was solved."""
        return self.tc_sum / self.sr_sum if self.sr_sum else None

    @property
    def tc_over_sr_per_puzzle(self) -> float | None:
        ratios = [tc / sr for _, sr, tc in self.per_puzzle if sr]
        return sum(ratios) / len(ratios) if ratios else None

    def to_dict(self) -> dict:
        return {
            **self.config.to_dict(),
            "label": self.config.label,
            "n_puzzles": self.n_puzzles,
            "sr": self.sr,
            "tc_mean": self.tc_mean,
            "tc_over_sr": self.tc_over_sr,
            "tc_over_sr_per_puzzle": self.tc_over_sr_per_puzzle,
            "per_puzzle": [{"numbers": list(n), "sr": s, "tc": t} for n, s, t in self.per_puzzle],
        }


@dataclass
class EvalReport:
    target: int
    split: str
    model: str
    cells: list[CellResult]
    metadata: dict = field(default_factory=dict)

    def cell(self, config: DecodeConfig) -> CellResult:
        for c in self.cells:
            if c.config == config:
                return c
        raise KeyError(config.key)

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "split": self.split,
            "model": self.model,
            "metadata": self.metadata,
            "cells": [c.to_dict() for c in self.cells],
        }


def _puzzles(test_split: Iterable) -> list[Puzzle]:
    return [getattr(r, "puzzle", r) for r in test_split]


def run_grid(
    model: PolicyModel | Sampler,
    test_split: Sequence,
    grid: Sequence[DecodeConfig],
    seed: int,
    attempts: int = ATTEMPTS,
    *,
    model_label: str = "model",
    split: str = "",
    metadata: Mapping | None = None,
) -> EvalReport:
    puzzles = _puzzles(test_split)
    if not puzzles or not grid:
        raise ValueError("run_grid needs a nonempty split and grid")
    targets = {p.target for p in puzzles}
    if len(targets) != 1:
        raise ValueError(f"mixed targets in one split: {sorted(targets)}")
    sampler = model if isinstance(model, Sampler) else Sampler(model)
    cells = []
    for config in grid:
        evals = [evaluate_puzzle(sampler, p, config, seed, attempts) for p in puzzles]
        per = sorted((tuple(sorted(e.puzzle.numbers)), e.sr, e.tc) for e in evals)
        cells.append(CellResult(config, len(evals), sum(e.sr for e in evals), sum(e.tc for e in evals), per))
    return EvalReport(targets.pop(), split, model_label, cells, dict(metadata or {}))


# -- transfer experiment ---------------------------------------------------------------


def verify_checkpoint(meta: Mapping, expected_train_target: int) -> TrainConfig:
    """Check that the checkpoint was trained on ``expected_train_target`` only."""
    try:
        cfg = TrainConfig.from_dict(meta["train_config"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ChecksumMismatch(f"checkpoint has no usable training config: {exc}") from None
    if cfg.digest() != meta.get("train_config_hash"):
        raise ChecksumMismatch("training config hash does not match the stored config")
    if meta.get("train_targets") != [expected_train_target]:
        raise ChecksumMismatch(
            f"checkpoint trained on targets {meta.get('train_targets')}, expected only {expected_train_target}"
        )
    return cfg


TransferReports = dict[tuple[str, str], EvalReport]


def transfer_experiment(
    checkpoint,
    datasets_in: Sequence[PuzzleRecord],
    datasets_out: Sequence[PuzzleRecord],
    grid: Sequence[DecodeConfig],
    seed: int,
    expected_train_target: int = 24,
    attempts: int = ATTEMPTS,
    metadata: Mapping | None = None,
) -> tuple[TransferReports, TransferReports]:
    """Evaluate trained and untrained models in-distribution and on the transfer target.

    ``checkpoint`` is a path or a ``(model, meta)`` pair.  Returns two dicts
    keyed by ``(model label, split)``: in-distribution first, transfer second.
    """
    if isinstance(checkpoint, (str, Path)):
        ckpt_hash = hashlib.sha256(Path(checkpoint).read_bytes()).hexdigest()
        model, meta = load_checkpoint(checkpoint)
    else:
        model, meta = checkpoint
        ckpt_hash = model.digest()
    cfg = verify_checkpoint(meta, expected_train_target)
    models = {"untrained": Sampler(init_model(cfg)), "trained": Sampler(model)}
    base_meta = {"checkpoint_hash": ckpt_hash, "seed": int(seed), "train_target": expected_train_target,
                 **(metadata or {})}

    def side(records: Sequence[PuzzleRecord]) -> TransferReports:
        out: TransferReports = {}
        for split in ("test_lowdiv", "test_highdiv"):
            chosen = [r for r in records if r.split == split]
            if not chosen:
                continue
            for label, sampler in models.items():
                out[(label, split)] = run_grid(sampler, chosen, grid, seed, attempts,
                                               model_label=label, split=split, metadata=base_meta)
        return out

    return side(datasets_in), side(datasets_out)


# -- rendering ---------------------------------------------------------------------------


def _fmt(x: float | None) -> str:
    return EMPTY if x is None else f"{x:.2f}"


def _grid_table(title: str, blocks: Sequence[tuple[str, dict[DecodeConfig, str]]]) -> list[str]:
    """Temperature rows by strategy columns, one block of rows per model."""
    configs = list(blocks[0][1])
    temps = sorted({c.temperature for c in configs})
    labels = list(dict.fromkeys(c.label for c in configs))
    width = max(9, *(len(l) + 2 for l in labels))
    head = "Temperature".ljust(13) + "".join(l.rjust(width) for l in labels)
    rule = "-" * len(head)
    lines = [title, rule, head, rule]
    for name, cells in blocks:
        lines += [MODEL_LABELS.get(name, name).center(len(head)), rule]
        by = {(c.temperature, c.label): text for c, text in cells.items()}
        for t in temps:
            lines.append(f"{t:g}".ljust(13) + "".join(by.get((t, l), EMPTY).rjust(width) for l in labels))
        lines.append(rule)
    return lines + [""]


def _table(title: str, blocks: Sequence[tuple[str, EvalReport]], metric) -> list[str]:
    return _grid_table(title, [(name, {c.config: _fmt(metric(c)) for c in rep.cells}) for name, rep in blocks])


def render_transfer(reps_in: TransferReports, reps_out: TransferReports) -> str:
    """Plain-text tables with temperature rows, strategy columns, one block per model."""
    lines: list[str] = []
    for reps in (reps_in, reps_out):
        if not reps:
            continue
        target = next(iter(reps.values())).target
        for split, metric_name, metric in (
            ("test_lowdiv", "SR", lambda c: c.sr),
            ("test_highdiv", "TC/SR", lambda c: c.tc_over_sr),
            ("test_highdiv", "SR", lambda c: c.sr),
        ):
            blocks = [(m, reps[(m, split)]) for m in ("untrained", "trained") if (m, split) in reps]
            if blocks:
                lines += _table(f"{metric_name} on Game {target} ({split})", blocks, metric)
    if reps_in and reps_out:
        t_in = next(iter(reps_in.values())).target
        t_out = next(iter(reps_out.values())).target
        for split in ("test_lowdiv", "test_highdiv"):
            lines += _gap_lines_for(reps_in, reps_out, split, f"SR gap, Game {t_out} minus Game {t_in} ({split})")
    return "\n".join(lines).rstrip() + "\n"


def _gap_lines_for(reps_in, reps_out, split, title) -> list[str]:
    blocks = []
    for name in ("untrained", "trained"):
        if (name, split) in reps_in and (name, split) in reps_out:
            a, b = reps_in[(name, split)], reps_out[(name, split)]
            blocks.append((name, {c.config: f"{b.cell(c.config).sr - c.sr:+.2f}" for c in a.cells}))
    return _grid_table(title, blocks) if blocks else []


def report_records(reps_in: TransferReports, reps_out: TransferReports) -> list[dict]:
    """One machine-readable record per (target, model, split, cell), with the SR gap on transfer cells."""
    out = []
    for reps, role in ((reps_in, "in_distribution"), (reps_out, "transfer")):
        for (name, split), rep in sorted(reps.items()):
            for c in rep.cells:
                rec = {"role": role, "target": rep.target, "model": name, "split": split, **c.to_dict()}
                if (name, split) in reps_in and role == "transfer":
                    rec["sr_gap"] = c.sr - reps_in[(name, split)].cell(c.config).sr
                out.append(rec)
    return out


def plot_series(reps_in: TransferReports, reps_out: TransferReports, label: str = "Top-10",
                split: str = "test_lowdiv") -> list[tuple[str, float, float]]:
    """(series, temperature, SR) rows: untrained/trained on both targets at one strategy column."""
    rows = []
    for reps in (reps_in, reps_out):
        for name in ("untrained", "trained"):
            rep = reps.get((name, split))
            if rep is None:
                continue
            for c in sorted(rep.cells, key=lambda c: c.config.temperature):
                if c.config.label == label:
                    rows.append((f"{rep.target} {name}", c.config.temperature, c.sr))
    return rows


def load_report(text: str) -> tuple[TransferReports, dict[int, TransferReports], dict]:
    """Inverse of the report JSON: in-distribution reports, transfer reports per target, and meta."""
    doc = json.loads(text)
    reps_in: TransferReports = {}
    outs: dict[int, TransferReports] = {}
    for rec in doc["records"]:
        per = [(tuple(p["numbers"]), p["sr"], p["tc"]) for p in rec["per_puzzle"]]
        cell = CellResult(DecodeConfig.from_dict(rec), rec["n_puzzles"], sum(s for _, s, _ in per),
                          sum(t for _, _, t in per), per)
        reps = reps_in if rec["role"] == "in_distribution" else outs.setdefault(rec["target"], {})
        key = (rec["model"], rec["split"])
        if key not in reps:
            reps[key] = EvalReport(rec["target"], rec["split"], rec["model"], [], {})
        reps[key].cells.append(cell)
    return reps_in, outs, doc["meta"]
