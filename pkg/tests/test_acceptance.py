"""Acceptance criteria, one test each; verdicts are summarised at the end of the pytest run."""

import json
import math
import time
from collections import Counter

import numpy as np
import pytest

from conftest import finite_difference, gradients_close, random_trajectory, traj
from gfn24.cli import main
from gfn24.dataset import build_dataset, by_split
from gfn24.decoding import DecodeConfig, apply_temperature, default_grid, min_p, softmax, top_k, top_p
from gfn24.eval_harness import PuzzleEval, evaluate_puzzle, grade, run_grid
from gfn24.game_env import Puzzle
from gfn24.oracle import (
    enumerate_solutions,
    enumerate_terminals,
    positional_solution_count,
    solvable_tuple_count,
    terminal_counts,
    verify_solution,
)
from gfn24.policy import PolicyModel
from gfn24.trainer import TrainConfig, init_model, sample_batch, tb_loss_and_grads, train
from test_decoding import ref_min_p, ref_temperature, ref_top_k, ref_top_p


def test_oracle_soundness(acceptance):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    bad_verify, bad_count, checked = [], [], 0
    for _ in range(200):
        numbers = tuple(int(x) for x in rng.integers(1, 14, size=4))
        for target in (24, 42):
            sols = enumerate_solutions(Puzzle(numbers, target))
            checked += sols.count
            bad_verify += [t for t in sols.solutions if not verify_solution(t)]
            if positional_solution_count(numbers, target) != sols.count:
                bad_count.append((numbers, target))
    elapsed = time.perf_counter() - start
    ok = not bad_verify and not bad_count and elapsed < 60
    acceptance(1, ok, f"{checked} solutions re-verified, {len(bad_verify)} bad; "
                      f"{len(bad_count)} count mismatches; {elapsed:.1f}s (< 60s)")


def test_decoding_equivalence(acceptance):
    rng = np.random.default_rng(7)
    start = time.perf_counter()
    mismatches, identity_err = 0, 0.0
    for _ in range(1000):
        logits = rng.normal(scale=3.0, size=int(rng.integers(1, 11)))
        t = float(rng.uniform(0.05, 3.0))
        probs = apply_temperature(logits, t)
        pl = probs.tolist()
        k, p, q = int(rng.integers(1, 12)), float(rng.uniform(0.01, 1.0)), float(rng.uniform(0.0, 0.99))
        mismatches += probs.tolist() != ref_temperature(logits.tolist(), t)
        mismatches += top_k(probs, k).tolist() != ref_top_k(pl, k)
        mismatches += top_p(probs, p).tolist() != ref_top_p(pl, p)
        mismatches += min_p(probs, q).tolist() != ref_min_p(pl, q)
        base = softmax(logits)
        for out in (apply_temperature(logits, 1.0), top_k(base, base.size), top_p(base, 1.0), min_p(base, 0.0)):
            identity_err = max(identity_err, float(np.abs(out - base).max()))
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and identity_err <= 1e-12 and elapsed < 10
    acceptance(2, ok, f"{mismatches} mismatches in 4000 transform checks; identity error {identity_err:.1e} "
                      f"(<= 1e-12); {elapsed:.1f}s (< 10s)")


def test_gradient_check(acceptance):
    worst, failures = 0.0, 0
    for case in range(20):
        rng = np.random.default_rng(100 + case)
        m = PolicyModel.init(rng, hidden=8)
        for v in m.params.values():
            v += rng.normal(scale=0.2, size=v.shape)
        m.log_z = float(rng.normal())
        ts = [random_trajectory(rng, rng.integers(1, 14, size=4), target=int(rng.choice([24, 42])))
              for _ in range(int(rng.integers(1, 4)))]
        _, analytic = tb_loss_and_grads(m, ts)
        ok, ratio = gradients_close(analytic, finite_difference(lambda mm: tb_loss_and_grads(mm, ts)[0], m, h=1e-5))
        failures += not ok
        worst = max(worst, ratio)
    acceptance(3, failures == 0, f"{20 - failures}/20 cases within rtol 1e-4 (worst error/tolerance {worst:.3f})")


def test_gflownet_contract(acceptance):
    start = time.perf_counter()
    puzzle = Puzzle((2, 2, 2, 4), 24)
    terminals = enumerate_terminals(puzzle)
    rewards = {v: 100.0 if v == 24 else 0.001 for v in terminals}
    total = math.fsum(rewards.values())
    model, _ = train(TrainConfig(steps=20000, seed=0, probe_every=0), [puzzle])
    n = 50000
    counts = Counter(t.terminal_value for t in sample_batch(model, [puzzle] * n, np.random.default_rng(1), 0.0))
    assert set(counts) <= set(terminals)
    tv = 0.5 * math.fsum(abs(counts.get(v, 0) / n - r / total) for v, r in rewards.items())
    z_err = abs(math.exp(model.log_z) - total) / total
    elapsed = time.perf_counter() - start
    ok = tv <= 0.05 and z_err <= 0.10 and elapsed < 600
    acceptance(4, ok, f"{len(terminals)} terminals; TV {tv:.4f} (<= 0.05); exp(log Z) {math.exp(model.log_z):.2f} "
                      f"vs sum R {total:.2f}, rel err {z_err:.3f} (<= 0.10); {elapsed:.0f}s (< 600s)")


def test_metric_semantics(acceptance):
    hits = [((8, "/", 4), (2, "+", 10), (2, "*", 12)), ((2, "+", 10), (8, "*", 12), (96, "/", 4)),
            ((2, "+", 10), (4, "+", 8), (12, "+", 12))]
    miss = ((2, "*", 4), (8, "+", 8), (16, "+", 10))
    swapped = ((10, "+", 2), (12, "*", 8), (96, "/", 4))  # the second hit with operands swapped
    fixture = hits * 4 + [miss] * 6 + [swapped, hits[0]]
    ev = PuzzleEval(Puzzle((2, 4, 8, 10), 24), tuple(grade(traj((2, 4, 8, 10), *p)) for p in fixture))
    fixture_ok = len(ev.attempts) == 20 and (ev.sr, ev.tc) == (1, 3)

    model = PolicyModel.init(np.random.default_rng(0), hidden=32)
    violations, evaluated = 0, 0
    for numbers in [(2, 4, 8, 10), (1, 2, 3, 4), (3, 3, 8, 8), (1, 1, 1, 1), (4, 6, 6, 8), (2, 12, 3, 6)]:
        for target in (24, 42):
            p = Puzzle(numbers, target)
            count = enumerate_solutions(p).count
            for cfg in default_grid():
                e = evaluate_puzzle(model, p, cfg, seed=3)
                evaluated += 1
                violations += not (e.sr <= e.tc <= min(20, count))
    ok = fixture_ok and violations == 0
    acceptance(5, ok, f"fixture tc={ev.tc} (want 3); {violations} bound violations over {evaluated} evaluations")


def test_trained_beats_untrained(acceptance):
    start = time.perf_counter()
    records = build_dataset(24, 0)
    splits = by_split(records)
    train_split = splits["train_easy"] + splits["train_hard"]
    cell = DecodeConfig(0.7, "top_k", k=10)
    results = []
    for seed in (0, 1, 2):
        cfg = TrainConfig(seed=seed, probe_every=0)
        trained, _ = train(cfg, train_split)
        before = run_grid(init_model(cfg), splits["test_lowdiv"], [cell], seed).cells[0].sr
        after = run_grid(trained, splits["test_lowdiv"], [cell], seed).cells[0].sr
        results.append((seed, before, after))
    elapsed = time.perf_counter() - start
    ok = all(a > b for _, b, a in results) and elapsed < 1800
    detail = ", ".join(f"seed {s}: {b:.2f} -> {a:.2f}" for s, b, a in results)
    acceptance(6, ok, f"lowdiv-24 SR at Top-10, T=0.7, untrained -> trained: {detail}; {elapsed:.0f}s (< 1800s)")


RUN_CONFIG = {
    "target_train": 24,
    "target_eval": [42],
    "operand_range": [1, 13],
    "dataset_seed": 5,
    "sizes": {"train_easy": 5, "train_hard": 5, "test": 10},
    "train": {"steps": 300, "batch_size": 8, "hidden": 32, "probe_every": 100},
    "grid": "default",
    "eval_seed": 5,
    "attempts": 20,
    "out_dir": "out",
}


@pytest.fixture(scope="module")
def two_runs(tmp_path_factory):
    outs = []
    for name in ("first", "second"):
        root = tmp_path_factory.mktemp(name)
        (root / "cfg.json").write_text(json.dumps(RUN_CONFIG))
        code = main(["run", str(root / "cfg.json"), "--seed", "5"])
        files = {p.relative_to(root / "out").as_posix(): p.read_bytes()
                 for p in sorted((root / "out").rglob("*")) if p.is_file()}
        outs.append((code, files))
    return outs


def test_transfer_report(acceptance, two_runs):
    (code_a, a), (code_b, b) = two_runs
    doc = json.loads(a["report.json"])
    have = Counter((r["role"], r["model"], r["split"]) for r in doc["records"])
    want = {(role, m, s) for role in ("in_distribution", "transfer") for m in ("untrained", "trained")
            for s in ("test_lowdiv", "test_highdiv")}
    complete = set(have) == want and all(n == 9 for n in have.values())
    gaps = [r for r in doc["records"] if r["role"] == "transfer"]
    gaps_ok = len(gaps) == 36 and all(isinstance(r["sr_gap"], float) for r in gaps)
    text = a["report.txt"].decode()
    tables_ok = text.count("SR gap, Game 42 minus Game 24") == 2
    same = all(a[f] == b[f] for f in ("report.json", "report.txt", "plot_data.csv"))
    ok = code_a == code_b == 0 and complete and gaps_ok and tables_ok and same
    acceptance(7, ok, f"cells per block {sorted(set(have.values()))}, {len(gaps)} gap cells, gap tables "
                      f"{tables_ok}; byte-identical rerun {same}")


def test_forty_two_has_more_solvable_tuples(acceptance):
    # earlier tests may have memoised the sweeps; time a cold full sweep
    terminal_counts.cache_clear()
    start = time.perf_counter()
    n24 = solvable_tuple_count(24, (1, 13))
    n42 = solvable_tuple_count(42, (1, 13))
    elapsed = time.perf_counter() - start
    acceptance(8, n42 > n24 and elapsed < 300,
               f"solvable 4-multisets over [1,13]: target 42 -> {n42}, target 24 -> {n24}; {elapsed:.0f}s (< 300s)")


def test_run_is_deterministic(acceptance, two_runs):
    (code_a, a), (code_b, b) = two_runs
    kinds = {"datasets": [f for f in a if f.startswith("datasets/")], "checkpoint": ["checkpoint.json"],
             "reports": ["report.json", "report.txt", "plot_data.csv"]}
    present = all(f in a for fs in kinds.values() for f in fs) and len(kinds["datasets"]) == 2
    differing = sorted(f for f in set(a) | set(b) if a.get(f) != b.get(f))
    ok = code_a == code_b == 0 and present and not differing
    acceptance(9, ok, f"{len(a)} artifacts compared, differing: {differing or 'none'}")
