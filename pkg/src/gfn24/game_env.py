"""Game-of-N state space.

A puzzle is four positive integers and a target.  A state is the multiset of
values still in play; an action picks two of them, combines them with one of
``+ - * /`` and puts the result back.  After exactly three actions one value
remains and the episode ends.

All arithmetic is exact (:class:`fractions.Fraction`).  Intermediates may be
negative, zero or non-integer; only division by zero is excluded.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property, lru_cache
from typing import Iterable, Sequence

from .errors import ArithmeticOverflow, IllegalAction, TerminalState

NUM_OPERANDS = 4
NUM_STEPS = 3
DEFAULT_MAX_OPERAND = 13

REWARD_SUCCESS = 100.0
REWARD_FAIL = 0.001

OPS = ("+", "-", "*", "/")
COMMUTATIVE = frozenset({"+", "*"})

_INT64_MAX = 2**63 - 1


def _check_range(value: Fraction) -> Fraction:
    if abs(value.numerator) > _INT64_MAX or value.denominator > _INT64_MAX:
        raise ArithmeticOverflow(f"{value} does not fit in 64-bit numerator/denominator")
    return value


def combine(left: Fraction, op: str, right: Fraction) -> Fraction:
    """Exact ``left op right``; raises ZeroDivisionError for ``x / 0``."""
    if op == "+":
        out = left + right
    elif op == "-":
        out = left - right
    elif op == "*":
        out = left * right
    elif op == "/":
        if right == 0:
            raise ZeroDivisionError("division by zero")
        out = left / right
    else:
        raise ValueError(f"unknown operator {op!r}")
    return _check_range(out)


def format_value(value: Fraction) -> str:
    """Integers print bare, everything else as ``n/d``."""
    value = Fraction(value)
    if value.denominator == 1:
        return str(value.numerator)
    return f"{value.numerator}/{value.denominator}"


def parse_value(text: str) -> Fraction:
    return Fraction(text.strip())


@dataclass(frozen=True)
class Puzzle:
    numbers: tuple[int, ...]
    target: int

    def __post_init__(self):
        nums = tuple(int(n) for n in self.numbers)
        object.__setattr__(self, "numbers", nums)
        if len(nums) != NUM_OPERANDS:
            raise ValueError(f"a puzzle has exactly {NUM_OPERANDS} numbers, got {len(nums)}")
        if any(n < 1 for n in nums):
            raise ValueError(f"puzzle numbers must be positive: {nums}")
        if int(self.target) < 1:
            raise ValueError(f"target must be >= 1, got {self.target}")
        object.__setattr__(self, "target", int(self.target))

    @property
    def multiset(self) -> tuple[int, ...]:
        return tuple(sorted(self.numbers))

    def validate(self, max_operand: int = DEFAULT_MAX_OPERAND) -> "Puzzle":
        if any(n > max_operand for n in self.numbers):
            raise ValueError(f"puzzle numbers must lie in [1, {max_operand}]: {self.numbers}")
        return self


@dataclass(frozen=True)
class ArithStep:
    left: Fraction
    op: str
    right: Fraction
    result: Fraction

    @classmethod
    def make(cls, left, op: str, right) -> "ArithStep":
        left, right = Fraction(left), Fraction(right)
        return cls(left, op, right, combine(left, op, right))

    def canonical(self) -> "ArithStep":
        """Operand order normalised (smaller first) for ``+`` and ``*``."""
        if self.op in COMMUTATIVE and self.right < self.left:
            return ArithStep(self.right, self.op, self.left, self.result)
        return self

    def __str__(self) -> str:
        return f"{format_value(self.left)} {self.op} {format_value(self.right)} = {format_value(self.result)}"


@dataclass(frozen=True)
class GameState:
    """A DAG node: sorted tuple of remaining values, the target and the depth."""

    remaining: tuple[Fraction, ...]
    target: int
    depth: int

    def __post_init__(self):
        object.__setattr__(self, "remaining", tuple(sorted(Fraction(v) for v in self.remaining)))
        if not 0 <= self.depth <= NUM_STEPS:
            raise ValueError(f"depth must be in [0, {NUM_STEPS}], got {self.depth}")
        if len(self.remaining) != NUM_OPERANDS - self.depth:
            raise ValueError(
                f"state at depth {self.depth} must hold {NUM_OPERANDS - self.depth} values, "
                f"got {len(self.remaining)}"
            )

    @classmethod
    def initial(cls, puzzle: Puzzle) -> "GameState":
        return cls(tuple(Fraction(n) for n in puzzle.numbers), puzzle.target, 0)

    @property
    def is_terminal(self) -> bool:
        return self.depth == NUM_STEPS


@lru_cache(maxsize=None)
def _actions_for(values: tuple[Fraction, ...]) -> tuple[ArithStep, ...]:
    # one action per distinct (left, op, right) value triple
    seen: set[tuple[Fraction, str, Fraction]] = set()
    out: list[ArithStep] = []

    def add(a: Fraction, op: str, b: Fraction) -> None:
        if (a, op, b) in seen:
            return
        seen.add((a, op, b))
        out.append(ArithStep(a, op, b, combine(a, op, b)))

    n = len(values)
    for i in range(n):
        for j in range(i + 1, n):
            a, b = values[i], values[j]  # a <= b, values are sorted
            add(a, "+", b)
            add(a, "-", b)
            add(b, "-", a)
            add(a, "*", b)
            if b != 0:
                add(a, "/", b)
            if a != 0:
                add(b, "/", a)
    return tuple(out)


def remove_operands(values: Sequence[Fraction], left: Fraction, right: Fraction) -> list[Fraction]:
    """Drop one instance of each operand (first occurrence); IllegalAction if absent."""
    rest = list(values)
    for operand in (left, right):
        try:
            rest.remove(operand)
        except ValueError:
            raise IllegalAction(f"operand {format_value(operand)} not available in {_fmt(values)}") from None
    return rest


def _fmt(values: Iterable[Fraction]) -> str:
    return "{" + ", ".join(format_value(v) for v in values) + "}"


def successor_values(values: tuple[Fraction, ...], step: ArithStep) -> tuple[Fraction, ...]:
    rest = remove_operands(values, step.left, step.right)
    rest.append(step.result)
    return tuple(sorted(rest))


def legal_actions(state: GameState) -> list[ArithStep]:
    """Every distinct action available in ``state``.

    ``+`` and ``*`` appear once per unordered operand pair (smaller operand
    first); ``-`` and ``/`` once per ordering.  Repeated values do not
    produce repeated actions and ``x / 0`` is never offered.
    """
    if state.is_terminal:
        raise TerminalState("no actions from a terminal state")
    return list(_actions_for(state.remaining))


def is_legal(state: GameState, action: ArithStep) -> bool:
    if state.is_terminal:
        return False
    return action.canonical() in _action_set(state.remaining)


@lru_cache(maxsize=None)
def _action_set(values: tuple[Fraction, ...]) -> frozenset[ArithStep]:
    return frozenset(_actions_for(values))


def apply(state: GameState, action: ArithStep) -> GameState:
    if state.is_terminal:
        raise TerminalState("cannot act from a terminal state")
    if action.canonical() not in _action_set(state.remaining):
        raise IllegalAction(f"{action} is not legal in {_fmt(state.remaining)}")
    return GameState(successor_values(state.remaining, action), state.target, state.depth + 1)


@dataclass(frozen=True)
class Trajectory:
    """Three steps from a puzzle to a single remaining value.

    Construction replays the steps and raises :class:`IllegalAction` if any
    step is not legal where it is taken.
    """

    puzzle: Puzzle
    steps: tuple[ArithStep, ...]
    terminal_value: Fraction | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        if len(self.steps) != NUM_STEPS:
            raise IllegalAction(f"a trajectory has exactly {NUM_STEPS} steps, got {len(self.steps)}")
        final = self.states[-1].remaining[0]
        if self.terminal_value is not None and Fraction(self.terminal_value) != final:
            raise IllegalAction(f"terminal value {self.terminal_value} does not match replay ({final})")
        object.__setattr__(self, "terminal_value", final)

    @cached_property
    def states(self) -> tuple[GameState, ...]:
        state = GameState.initial(self.puzzle)
        out = [state]
        for step in self.steps:
            state = apply(state, step)
            out.append(state)
        return tuple(out)

    @property
    def success(self) -> bool:
        return self.terminal_value == self.puzzle.target

    def canonical(self) -> "Trajectory":
        return Trajectory(self.puzzle, tuple(s.canonical() for s in self.steps))

    def canonical_key(self) -> str:
        """Dedup key: canonical steps in order.  Step order matters."""
        return "; ".join(str(s.canonical()) for s in self.steps)


def reward(trajectory: Trajectory, success: float = REWARD_SUCCESS, fail: float = REWARD_FAIL) -> float:
    return success if trajectory.terminal_value == trajectory.puzzle.target else fail


def render_steps(numbers: Sequence[int], steps: Sequence[ArithStep]) -> list[str]:
    """Step lines ``X op Y = Z (left: ...)``; remaining values keep insertion order."""
    pool = [Fraction(n) for n in numbers]
    lines = []
    for step in steps:
        pool = remove_operands(pool, step.left, step.right)
        pool.append(step.result)
        left = " ".join(format_value(v) for v in pool)
        lines.append(f"{step} (left: {left})")
    return lines


def render_trajectory(trajectory: Trajectory) -> str:
    head = "Input: " + " ".join(str(n) for n in trajectory.puzzle.numbers)
    return "\n".join([head, *render_steps(trajectory.puzzle.numbers, trajectory.steps)])


@dataclass
class PuzzleDAG:
    """Forward-reachable states from one root, with incoming-edge counts.

    ``levels[d]`` holds the sorted value tuples reachable at depth ``d``;
    ``in_degree[(d, values)]`` counts distinct (parent, action) pairs that
    lead into that node.
    """

    root: tuple[Fraction, ...]
    levels: list[set[tuple[Fraction, ...]]]
    in_degree: dict[tuple[int, tuple[Fraction, ...]], int]

    @property
    def terminal_values(self) -> list[Fraction]:
        return sorted(v[0] for v in self.levels[NUM_STEPS])


@lru_cache(maxsize=4096)
def build_dag(root: tuple[Fraction, ...]) -> PuzzleDAG:
    root = tuple(sorted(Fraction(v) for v in root))
    levels: list[set[tuple[Fraction, ...]]] = [{root}]
    in_degree: dict[tuple[int, tuple[Fraction, ...]], int] = defaultdict(int)
    for depth in range(NUM_STEPS):
        nxt: set[tuple[Fraction, ...]] = set()
        for values in levels[depth]:
            for step in _actions_for(values):
                child = successor_values(values, step)
                in_degree[(depth + 1, child)] += 1
                nxt.add(child)
        levels.append(nxt)
    return PuzzleDAG(root, levels, dict(in_degree))


def puzzle_dag(puzzle: Puzzle) -> PuzzleDAG:
    return build_dag(tuple(Fraction(n) for n in puzzle.multiset))
