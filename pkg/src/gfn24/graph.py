"""Lazily expanded per-puzzle DAG with integer node ids.

Rollouts touch the same few hundred states over and over; hashing tuples of
Fractions on every visit is the dominant cost.  A :class:`PuzzleGraph`
resolves each state to an int once and caches its actions, children and
feature rows.
"""

from __future__ import annotations

import math
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .game_env import ArithStep, GameState, Puzzle, Trajectory, _actions_for, build_dag, successor_values
from .policy import EncoderConfig, encode_actions, encode_state


class PuzzleGraph:
    def __init__(self, puzzle: Puzzle):
        self.puzzle = puzzle
        root = GameState.initial(puzzle)
        self.states: list[GameState] = [root]
        self._ids: dict[tuple[Fraction, ...], int] = {root.remaining: 0}
        self._edges: dict[int, tuple[tuple[ArithStep, ...], np.ndarray]] = {}
        self._features: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        self._encoder = None
        self._log_pb: dict[int, float] = {}

    def _node(self, values: tuple[Fraction, ...]) -> int:
        node = self._ids.get(values)
        if node is None:
            node = len(self.states)
            self._ids[values] = node
            self.states.append(GameState(values, self.puzzle.target, 4 - len(values)))
        return node

    def expand(self, node: int) -> tuple[tuple[ArithStep, ...], np.ndarray]:
        """Legal actions of ``node`` and the child id reached by each."""
        out = self._edges.get(node)
        if out is None:
            values = self.states[node].remaining
            acts = _actions_for(values)
            children = np.array([self._node(successor_values(values, a)) for a in acts], dtype=np.int64)
            out = self._edges[node] = (acts, children)
        return out

    def features(self, node: int, encoder: EncoderConfig) -> tuple[np.ndarray, np.ndarray]:
        if self._encoder is None:
            self._encoder = encoder
        elif encoder != self._encoder:
            self._features.clear()
            self._encoder = encoder
        out = self._features.get(node)
        if out is None:
            s = self.states[node]
            out = self._features[node] = (encode_state(s.remaining, s.target, encoder), encode_actions(s.remaining, s.target, encoder))
        return out

    def log_pb(self, node: int) -> float:
        """log of the uniform backward probability of entering ``node``."""
        out = self._log_pb.get(node)
        if out is None:
            s = self.states[node]
            dag = build_dag(self.states[0].remaining)
            out = self._log_pb[node] = -math.log(dag.in_degree[(s.depth, s.remaining)])
        return out

    def is_success(self, node: int) -> bool:
        s = self.states[node]
        return s.is_terminal and s.remaining[0] == self.puzzle.target

    def trajectory(self, nodes, action_idx) -> Trajectory:
        steps = tuple(self.expand(n)[0][a] for n, a in zip(nodes, action_idx))
        return Trajectory(self.puzzle, steps)


@lru_cache(maxsize=4096)
def graph_for(puzzle: Puzzle) -> PuzzleGraph:
    return PuzzleGraph(puzzle)
