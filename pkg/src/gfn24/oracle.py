"""Brute-force solution enumeration.

Everything here is exhaustive.  Two independent routes are kept on purpose:

* :func:`enumerate_solutions` walks the canonical action DAG from
  :mod:`gfn24.game_env` (memoised terminal-value counts prune dead branches);
* :func:`positional_solution_count` ignores the environment entirely, picks
  operands by position, tries every operator and ordering, and only then
  deduplicates canonically.

:func:`evaluate_expression` is a separate straight-line interpreter used to
re-check any claimed solution.
"""

from __future__ import annotations

import ast
import itertools
import json
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Iterable, Iterator, Sequence

from .game_env import (
    COMMUTATIVE,
    NUM_STEPS,
    ArithStep,
    Puzzle,
    Trajectory,
    _actions_for,
    format_value,
    render_trajectory,
    successor_values,
)


@dataclass(frozen=True)
class SolutionSet:
    puzzle: Puzzle
    solutions: tuple[Trajectory, ...]

    @property
    def count(self) -> int:
        return len(self.solutions)

    @property
    def expression_count(self) -> int:
        """Coarser count: distinct expression trees (commutative children sorted)."""
        return len({expression_key(t) for t in self.solutions})

    def to_record(self) -> dict:
        return {
            "numbers": list(self.puzzle.numbers),
            "target": self.puzzle.target,
            "count": self.count,
            "solutions": [render_trajectory(t) for t in self.solutions],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_record(), sort_keys=True)


@lru_cache(maxsize=None)
def terminal_counts(values: tuple[Fraction, ...]) -> dict[Fraction, int]:
    """Map terminal value -> number of canonical action sequences reaching it."""
    if len(values) == 1:
        return {values[0]: 1}
    out: Counter = Counter()
    for step in _actions_for(values):
        for v, n in terminal_counts(successor_values(values, step)).items():
            out[v] += n
    return dict(out)


def _root(numbers: Iterable[int]) -> tuple[Fraction, ...]:
    return tuple(sorted(Fraction(n) for n in numbers))


def solution_count(puzzle: Puzzle) -> int:
    return terminal_counts(_root(puzzle.numbers)).get(Fraction(puzzle.target), 0)


def _solution_paths(values: tuple[Fraction, ...], target: Fraction) -> Iterator[tuple[ArithStep, ...]]:
    if len(values) == 1:
        if values[0] == target:
            yield ()
        return
    for step in _actions_for(values):
        child = successor_values(values, step)
        if target not in terminal_counts(child):
            continue
        for rest in _solution_paths(child, target):
            yield (step, *rest)


def enumerate_solutions(puzzle: Puzzle) -> SolutionSet:
    """All canonical trajectories of ``puzzle`` ending on its target.

    Sorted by rendered text so the output is deterministic.
    """
    paths = _solution_paths(_root(puzzle.numbers), Fraction(puzzle.target))
    trajs = [Trajectory(puzzle, steps) for steps in paths]
    trajs.sort(key=render_trajectory)
    return SolutionSet(puzzle, tuple(trajs))


def enumerate_terminals(puzzle: Puzzle) -> dict[Fraction, int]:
    """Every reachable terminal value with its canonical path count."""
    return dict(sorted(terminal_counts(_root(puzzle.numbers)).items()))


def solvable_tuple_count(target: int, operand_range: tuple[int, int]) -> int:
    """Unordered 4-multisets over ``operand_range`` with at least one solution."""
    lo, hi = operand_range
    if lo > hi:
        raise ValueError(f"empty operand range [{lo}, {hi}]")
    goal = Fraction(target)
    return sum(
        1
        for combo in itertools.combinations_with_replacement(range(lo, hi + 1), 4)
        if goal in terminal_counts(_root(combo))
    )


def sweep(operand_range: tuple[int, int], target: int) -> list[tuple[tuple[int, ...], int]]:
    """(multiset, solution count) for every 4-multiset over the range, in lexicographic order."""
    lo, hi = operand_range
    goal = Fraction(target)
    return [
        (combo, terminal_counts(_root(combo)).get(goal, 0))
        for combo in itertools.combinations_with_replacement(range(lo, hi + 1), 4)
    ]


# -- independent route: positional search -------------------------------------------

_POSITIONAL_OPS = {
    "+": lambda a, b: a + b,
    "-": lambda a, b: a - b,
    "*": lambda a, b: a * b,
    "/": lambda a, b: a / b,
}


def positional_step_sequences(numbers: Sequence[int]) -> Iterator[tuple[tuple, Fraction]]:
    """Yield (raw step tuples, final value) over every ordered operand choice by position."""

    def walk(pool: list[Fraction], steps: tuple):
        if len(pool) == 1:
            yield steps, pool[0]
            return
        for i, j in itertools.permutations(range(len(pool)), 2):
            a, b = pool[i], pool[j]
            rest = [v for k, v in enumerate(pool) if k not in (i, j)]
            for op, fn in _POSITIONAL_OPS.items():
                if op == "/" and b == 0:
                    continue
                r = fn(a, b)
                yield from walk(rest + [r], steps + ((a, op, b, r),))

    yield from walk([Fraction(n) for n in numbers], ())


def _canon_raw(step: tuple) -> tuple:
    a, op, b, r = step
    if op in COMMUTATIVE and b < a:
        a, b = b, a
    return (a, op, b, r)


def positional_solution_count(numbers: Sequence[int], target: int) -> int:
    goal = Fraction(target)
    seen = {
        tuple(_canon_raw(s) for s in steps)
        for steps, value in positional_step_sequences(numbers)
        if value == goal
    }
    return len(seen)


def positional_in_degrees(numbers: Sequence[int]) -> dict[tuple[int, tuple[Fraction, ...]], int]:
    """Distinct (parent, canonical step) edges into each (depth, state), found by positional search."""
    edges: set[tuple] = set()
    for steps, _ in positional_step_sequences(numbers):
        pool = sorted(Fraction(n) for n in numbers)
        for depth, raw in enumerate(steps, start=1):
            a, op, b, r = _canon_raw(raw)
            nxt = list(pool)
            nxt.remove(a)
            nxt.remove(b)
            nxt = sorted(nxt + [r])
            edges.add((depth, tuple(pool), (a, op, b), tuple(nxt)))
            pool = nxt
    counts: Counter = Counter((d, child) for d, _, _, child in edges)
    return dict(counts)


# -- independent route: expression evaluation ------------------------------------------


def trajectory_expression(trajectory: Trajectory) -> str:
    """Fold the steps of a trajectory into one fully parenthesised infix expression."""
    pool: list[tuple[Fraction, str]] = [(Fraction(n), str(n)) for n in trajectory.puzzle.numbers]
    for step in trajectory.steps:
        parts = []
        for operand in (step.left, step.right):
            idx = next(i for i, (v, _) in enumerate(pool) if v == operand)
            parts.append(pool.pop(idx)[1])
        pool.append((step.result, f"({parts[0]} {step.op} {parts[1]})"))
    assert len(pool) == 1
    return pool[0][1]


def evaluate_expression(text: str) -> Fraction:
    """Evaluate an infix expression over integer literals with exact rationals.

    Only ``+ - * /``, parentheses, unary minus and integer literals are accepted.
    """
    tree = ast.parse(text, mode="eval")

    def ev(node) -> Fraction:
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, int) and not isinstance(node.value, bool):
            return Fraction(node.value)
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, ast.USub):
            return -ev(node.operand)
        if isinstance(node, ast.BinOp):
            a, b = ev(node.left), ev(node.right)
            if isinstance(node.op, ast.Add):
                return a + b
            if isinstance(node.op, ast.Sub):
                return a - b
            if isinstance(node.op, ast.Mult):
                return a * b
            if isinstance(node.op, ast.Div):
                return a / b
        raise ValueError(f"unsupported syntax in {text!r}: {ast.dump(node)}")

    return ev(tree)


def verify_solution(trajectory: Trajectory) -> bool:
    """Independent re-check: the folded expression uses exactly the puzzle numbers and hits the target."""
    expr = trajectory_expression(trajectory)
    literals = sorted(
        n.value for n in ast.walk(ast.parse(expr, mode="eval")) if isinstance(n, ast.Constant)
    )
    if literals != sorted(trajectory.puzzle.numbers):
        return False
    try:
        return evaluate_expression(expr) == trajectory.puzzle.target
    except ZeroDivisionError:
        return False


def expression_key(trajectory: Trajectory) -> str:
    """Expression tree with commutative children ordered; step order is forgotten."""
    pool: list[tuple[Fraction, str]] = [(Fraction(n), str(n)) for n in trajectory.puzzle.numbers]
    for step in trajectory.steps:
        parts = []
        for operand in (step.left, step.right):
            idx = next(i for i, (v, _) in enumerate(pool) if v == operand)
            parts.append(pool.pop(idx)[1])
        if step.op in COMMUTATIVE:
            parts.sort()
        pool.append((step.result, f"({parts[0]}{step.op}{parts[1]})"))
    return pool[0][1]

