import random

import numpy as np
import pytest

from conftest import traj
from gfn24.decoding import DecodeConfig, default_grid
from gfn24.errors import ChecksumMismatch
from gfn24.eval_harness import (
    EMPTY,
    PuzzleEval,
    Sampler,
    evaluate_puzzle,
    grade,
    load_report,
    plot_series,
    render_transfer,
    report_records,
    run_grid,
    transfer_experiment,
    verify_checkpoint,
)
from gfn24.game_env import Puzzle
from gfn24.oracle import solution_count
from gfn24.policy import PolicyModel
from gfn24.trainer import TrainConfig, init_model

NUMS = (2, 4, 8, 10)
PATHS = [
    ((8, "/", 4), (2, "+", 10), (2, "*", 12)),
    ((2, "+", 10), (8, "*", 12), (96, "/", 4)),
    ((2, "+", 10), (4, "+", 8), (12, "+", 12)),
]
MISS = ((2, "*", 4), (8, "+", 8), (16, "+", 10))
TOP10 = DecodeConfig(0.7, "top_k", k=10)


class Scripted(Sampler):
    """Replays a fixed list of step sequences, cycling."""

    def __init__(self, paths):
        super().__init__(None)
        self.paths = paths
        self.i = 0

    def attempt(self, puzzle, config, rng):
        path = self.paths[self.i % len(self.paths)]
        self.i += 1
        return traj(puzzle.numbers, *path, target=puzzle.target)


@pytest.fixture(scope="module")
def model():
    return PolicyModel.init(np.random.default_rng(0), hidden=16)


def test_three_distinct_successes():
    # 3 distinct solutions, duplicated, plus commutative re-orderings and misses
    attempts = [PATHS[0], PATHS[1], PATHS[2], MISS] * 4 + [
        ((10, "+", 2), (8, "+", 4), (12, "+", 12)),
        MISS,
        PATHS[0],
        ((10, "+", 2), (12, "*", 8), (96, "/", 4)),
    ]
    ev = PuzzleEval(Puzzle(NUMS, 24), tuple(grade(traj(NUMS, *p)) for p in attempts))
    assert len(ev.attempts) == 20
    assert (ev.sr, ev.tc) == (1, 3)


def test_scripted_single_solution():
    ev = evaluate_puzzle(Scripted([PATHS[0]]), Puzzle(NUMS, 24), TOP10, seed=0)
    assert (ev.sr, ev.tc) == (1, 1)


def test_unsolvable_puzzle(model):
    ev = evaluate_puzzle(model, Puzzle((1, 1, 1, 1), 24), TOP10, seed=0)
    assert (ev.sr, ev.tc) == (0, 0)


def test_tc_bounded_by_oracle(model):
    for numbers in [(2, 4, 8, 10), (1, 2, 3, 4), (3, 3, 8, 8)]:
        p = Puzzle(numbers, 24)
        ev = evaluate_puzzle(model, p, DecodeConfig(1.1, "none"), seed=1)
        assert ev.sr <= ev.tc <= min(20, solution_count(p))


def test_metric_invariant_is_enforced():
    good = grade(traj(NUMS, *PATHS[0]))
    ev = PuzzleEval(Puzzle(NUMS, 24), (good,) * 20)
    assert ev.tc == 1
    assert all(a.success for a in ev.attempts)


def test_all_fail_renders_dash():
    rep = run_grid(Scripted([MISS]), [Puzzle(NUMS, 24)] * 3, [TOP10], seed=0)
    cell = rep.cells[0]
    assert cell.sr == 0.0 and cell.tc_over_sr is None and cell.tc_over_sr_per_puzzle is None
    reps = {("trained", "test_highdiv"): rep}
    assert EMPTY in render_transfer(reps, {})


def test_all_solved_once():
    rep = run_grid(Scripted([PATHS[0]]), [Puzzle(NUMS, 24), Puzzle((4, 10, 2, 8), 24)], [TOP10], seed=0)
    assert rep.cells[0].sr == 1.0 and rep.cells[0].tc_over_sr == 1.0


def test_ratio_of_sums():
    a = Scripted(PATHS)  # every attempt a hit, 3 distinct
    rep = run_grid(a, [Puzzle(NUMS, 24)], [TOP10], seed=0)
    assert rep.cells[0].tc_sum == 3 and rep.cells[0].tc_over_sr == 3.0


def test_deterministic(model):
    p = Puzzle((1, 2, 3, 4), 24)
    a = evaluate_puzzle(model, p, TOP10, seed=5)
    b = evaluate_puzzle(model, p, TOP10, seed=5)
    assert [x.canonical_key for x in a.attempts] == [x.canonical_key for x in b.attempts]


def test_prefix_property(model):
    p = Puzzle((1, 3, 4, 6), 24)
    cfg = DecodeConfig(1.1, "none")
    ten = evaluate_puzzle(model, p, cfg, seed=2, attempts=10)
    twenty = evaluate_puzzle(model, p, cfg, seed=2, attempts=20)
    assert [x.canonical_key for x in twenty.attempts[:10]] == [x.canonical_key for x in ten.attempts]
    assert twenty.sr >= ten.sr


def test_order_independence(model):
    puzzles = [Puzzle(n, 24) for n in [(1, 2, 3, 4), (2, 4, 8, 10), (3, 3, 8, 8), (1, 5, 5, 5), (4, 6, 6, 8)]]
    shuffled = list(puzzles)
    random.Random(3).shuffle(shuffled)
    a = run_grid(model, puzzles, default_grid(), seed=0)
    b = run_grid(model, shuffled, default_grid(), seed=0)
    assert a.to_dict() == b.to_dict()


def test_mixed_targets_rejected(model):
    with pytest.raises(ValueError):
        run_grid(model, [Puzzle(NUMS, 24), Puzzle(NUMS, 42)], [TOP10], seed=0)


def _meta(cfg, targets=(24,)):
    return {"train_config": cfg.to_dict(), "train_config_hash": cfg.digest(), "train_targets": list(targets)}


def test_checkpoint_provenance_checks():
    cfg = TrainConfig(hidden=16)
    assert verify_checkpoint(_meta(cfg), 24) == cfg
    with pytest.raises(ChecksumMismatch):
        verify_checkpoint(_meta(cfg, (42,)), 24)
    bad = _meta(cfg)
    bad["train_config_hash"] = "0" * 64
    with pytest.raises(ChecksumMismatch):
        verify_checkpoint(bad, 24)


def test_transfer_reports_round_trip():
    from gfn24.dataset import PuzzleRecord

    cfg = TrainConfig(hidden=16)
    model = init_model(cfg)
    # the harness reads only puzzles and split names, so counts are placeholders
    recs24 = [PuzzleRecord(Puzzle((1, 1, 2, 12), 24), 1, "test_lowdiv"),
              PuzzleRecord(Puzzle((2, 4, 8, 10), 24), 49, "test_highdiv")]
    recs42 = [PuzzleRecord(Puzzle((1, 1, 2, 12), 42), 1, "test_lowdiv"),
              PuzzleRecord(Puzzle((2, 12, 3, 6), 42), 9, "test_highdiv")]
    reps_in, reps_out = transfer_experiment((model, _meta(cfg)), recs24, recs42, default_grid(), seed=0)
    assert set(reps_in) == set(reps_out) == {(m, s) for m in ("untrained", "trained")
                                              for s in ("test_lowdiv", "test_highdiv")}
    recs = report_records(reps_in, reps_out)
    gaps = [r for r in recs if r["role"] == "transfer"]
    assert len(gaps) == 4 * 9 and all("sr_gap" in r for r in gaps)
    text = render_transfer(reps_in, reps_out)
    assert "SR gap" in text and "Top-10" in text
    import json

    back_in, back_out, _ = load_report(json.dumps({"meta": {}, "records": recs}))
    assert render_transfer(back_in, back_out[42]) == text
    assert len(plot_series(reps_in, reps_out)) == 4 * 3
