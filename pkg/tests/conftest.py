from fractions import Fraction

import numpy as np
import pytest

from gfn24.game_env import ArithStep, Puzzle, Trajectory


def step(a, op, b):
    return ArithStep.make(Fraction(a), op, Fraction(b))


def traj(numbers, *steps, target=24):
    return Trajectory(Puzzle(tuple(numbers), target), tuple(step(*s) for s in steps))


@pytest.fixture
def sample_puzzle():
    return Puzzle((2, 4, 8, 10), 24)


def random_trajectory(rng, numbers, target=24):
    """Uniformly random legal path; used as a generic test input."""
    from gfn24.game_env import GameState, apply, legal_actions

    puzzle = Puzzle(tuple(numbers), target)
    state, steps = GameState.initial(puzzle), []
    while not state.is_terminal:
        acts = legal_actions(state)
        a = acts[int(rng.integers(len(acts)))]
        steps.append(a)
        state = apply(state, a)
    return Trajectory(puzzle, tuple(steps))


def finite_difference(fn, model, h=1e-5):
    """Central differences of ``fn(model)`` w.r.t. every parameter and log_z."""
    out = {}
    for name, arr in model.params.items():
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            up = fn(model)
            flat[i] = keep - h
            down = fn(model)
            flat[i] = keep
            gflat[i] = (up - down) / (2 * h)
        out[name] = g
    keep = model.log_z
    model.log_z = keep + h
    up = fn(model)
    model.log_z = keep - h
    down = fn(model)
    model.log_z = keep
    out["log_z"] = np.array([(up - down) / (2 * h)])
    return out


def gradients_close(analytic, numeric, rtol=1e-4, atol=1e-9):
    """Per-element |a - n| <= rtol * max(|a|, |n|) + atol; returns the worst offending ratio."""
    worst = 0.0
    for name, n in numeric.items():
        a = analytic[name]
        err = np.abs(a - n) / (rtol * np.maximum(np.abs(a), np.abs(n)) + atol)
        worst = max(worst, float(err.max()))
    return worst <= 1.0, worst


# -- acceptance reporting --------------------------------------------------------------

_ACCEPTANCE: list[str] = []


@pytest.fixture
def acceptance():
    """``acceptance(n, ok, detail)`` records one verdict line and fails the test when ``ok`` is false."""

    def record(number: int, ok: bool, detail: str) -> None:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
