"""Train/test splits stratified by oracle solution count.

For one target and operand range every 4-multiset is scored with its
canonical solution count.  Then, in this order and without reuse:

* ``train_easy`` -- sampled from solvable puzzles in the top count quartile;
* ``train_hard`` -- sampled from solvable puzzles in the bottom count quartile;
* ``test_lowdiv`` -- puzzles with exactly 1 or 2 solutions;
* ``test_highdiv`` -- puzzles with at least 7 solutions.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import InsufficientPuzzles
from .game_env import DEFAULT_MAX_OPERAND, Puzzle
from .oracle import sweep

SPLITS = ("train_easy", "train_hard", "test_lowdiv", "test_highdiv")
TRAIN_SPLITS = ("train_easy", "train_hard")
DEFAULT_SIZES = {"train_easy": 10, "train_hard": 10, "test": 50}
LOWDIV_COUNTS = (1, 2)
HIGHDIV_MIN = 7


@dataclass(frozen=True)
class PuzzleRecord:
    puzzle: Puzzle
    solution_count: int
    split: str

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}")
        if self.split == "test_lowdiv" and self.solution_count not in LOWDIV_COUNTS:
            raise ValueError(f"lowdiv record with {self.solution_count} solutions")
        if self.split == "test_highdiv" and self.solution_count < HIGHDIV_MIN:
            raise ValueError(f"highdiv record with {self.solution_count} solutions")

    def to_dict(self) -> dict:
        return {
            "numbers": list(self.puzzle.numbers),
            "target": self.puzzle.target,
            "solution_count": self.solution_count,
            "split": self.split,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "PuzzleRecord":
        return cls(Puzzle(tuple(d["numbers"]), int(d["target"])), int(d["solution_count"]), d["split"])


def dataset_config(target: int, seed: int, sizes: Mapping[str, int] | None = None,
                   operand_range: tuple[int, int] = (1, DEFAULT_MAX_OPERAND)) -> dict:
    sizes = {**DEFAULT_SIZES, **(sizes or {})}
    return {"target": int(target), "seed": int(seed), "sizes": dict(sorted(sizes.items())),
            "operand_range": [int(operand_range[0]), int(operand_range[1])]}


def config_hash(cfg: Mapping) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]


def _take(rng: np.random.Generator, pool: list, n: int, split: str) -> list:
    if len(pool) < n:
        raise InsufficientPuzzles(split, n, len(pool))
    picks = rng.choice(len(pool), size=n, replace=False)
    return [pool[i] for i in picks]


def build_dataset(
    target: int,
    seed: int,
    sizes: Mapping[str, int] | None = None,
    operand_range: tuple[int, int] = (1, DEFAULT_MAX_OPERAND),
) -> list[PuzzleRecord]:
    sizes = {**DEFAULT_SIZES, **(sizes or {})}
    rng = np.random.default_rng(seed)
    scored = sweep(tuple(operand_range), target)
    solvable = [(m, c) for m, c in scored if c > 0]
    if not solvable:
        raise InsufficientPuzzles("train_easy", sizes["train_easy"], 0)
    counts = np.array([c for _, c in solvable])
    q1, q3 = np.percentile(counts, [25, 75])

    used: set[tuple[int, ...]] = set()
    records: list[PuzzleRecord] = []
    plan = [
        ("train_easy", sizes["train_easy"], lambda c: c >= q3),
        ("train_hard", sizes["train_hard"], lambda c: c <= q1),
        ("test_lowdiv", sizes["test"], lambda c: c in LOWDIV_COUNTS),
        ("test_highdiv", sizes["test"], lambda c: c >= HIGHDIV_MIN),
    ]
    for split, n, keep in plan:
        pool = [(m, c) for m, c in solvable if keep(c) and m not in used]
        for m, c in _take(rng, pool, n, split):
            used.add(m)
            records.append(PuzzleRecord(Puzzle(m, target), c, split))
    return records


def by_split(records: Iterable[PuzzleRecord]) -> dict[str, list[PuzzleRecord]]:
    out: dict[str, list[PuzzleRecord]] = {s: [] for s in SPLITS}
    for r in records:
        out[r.split].append(r)
    return out


def dataset_filename(target: int, seed: int) -> str:
    return f"{target}_{seed}.jsonl"


def dump_dataset(records: Iterable[PuzzleRecord], meta: Mapping) -> str:
    """JSON lines: one ``{"meta": ...}`` header, then one record per puzzle."""
    lines = [json.dumps({"meta": dict(meta)}, sort_keys=True)]
    lines += [json.dumps(r.to_dict(), sort_keys=True) for r in records]
    return "\n".join(lines) + "\n"


def write_dataset(path, records: Iterable[PuzzleRecord], meta: Mapping) -> str:
    text = dump_dataset(records, meta)
    Path(path).write_text(text)
    return hashlib.sha256(text.encode()).hexdigest()


def read_dataset(path) -> tuple[list[PuzzleRecord], dict]:
    meta: dict = {}
    records = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        d = json.loads(line)
        if "meta" in d:
            meta = d["meta"]
        else:
            records.append(PuzzleRecord.from_dict(d))
    return records, meta
