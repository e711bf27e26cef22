"""Temperature scaling and truncation filters over an action distribution.

Distributions are 1-D float64 numpy arrays over an ordered support.  Every
filter zeroes part of the support and renormalises what is left; the sum
used for renormalisation is ``math.fsum`` so results do not depend on
summation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidTemperature
from .policy import forward_logits

STRATEGIES = ("none", "top_k", "top_p", "min_p")


def _normalise(probs: np.ndarray) -> np.ndarray:
    return probs / math.fsum(probs)


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max()
    # math.exp rather than np.exp: numpy's vectorised exp can differ by an ulp
    # between builds, and decoding results should be bit-reproducible
    return _normalise(np.array([math.exp(v) for v in z.tolist()]))


def apply_temperature(logits, temperature: float) -> np.ndarray:
    """``softmax(logits / T)``."""
    if not temperature > 0:
        raise InvalidTemperature(f"temperature must be > 0, got {temperature}")
    return softmax(np.asarray(logits, dtype=np.float64) / temperature)


def _rank(probs: np.ndarray) -> np.ndarray:
    # descending probability, ties by lower index
    return np.argsort(-probs, kind="stable")


def top_k(probs: np.ndarray, k: int) -> np.ndarray:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    probs = np.asarray(probs, dtype=np.float64)
    if k >= probs.size:
        return probs.copy()
    keep = _rank(probs)[:k]
    out = np.zeros_like(probs)
    out[keep] = probs[keep]
    return _normalise(out)


def top_p(probs: np.ndarray, p: float) -> np.ndarray:
    """Keep the shortest most-probable prefix whose mass reaches ``p``."""
    if not 0 < p <= 1:
        raise ValueError(f"top-p needs p in (0, 1], got {p}")
    probs = np.asarray(probs, dtype=np.float64)
    order = _rank(probs)
    cum = np.cumsum(probs[order])
    hits = np.nonzero(cum >= p)[0]
    # rounding can leave the full cumulative sum a hair under p
    n_keep = int(hits[0]) + 1 if hits.size else probs.size
    out = np.zeros_like(probs)
    keep = order[:n_keep]
    out[keep] = probs[keep]
    return _normalise(out)


def min_p(probs: np.ndarray, p: float, relative: bool = True) -> np.ndarray:
    """Drop entries below ``p * max(probs)`` (or below ``p`` when ``relative`` is false).

    The most probable entry always survives.
    """
    if not 0 <= p < 1:
        raise ValueError(f"min-p needs p in [0, 1), got {p}")
    probs = np.asarray(probs, dtype=np.float64)
    top = probs.max()
    threshold = p * top if relative else min(p, top)
    out = np.where(probs >= threshold, probs, 0.0)
    return _normalise(out)


@dataclass(frozen=True)
class DecodeConfig:
    temperature: float = 1.0
    strategy: str = "none"
    k: Optional[int] = None
    p: Optional[float] = None
    min_p_relative: bool = True

    def __post_init__(self):
        if not self.temperature > 0:
            raise InvalidTemperature(f"temperature must be > 0, got {self.temperature}")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.strategy == "top_k" and (self.k is None or self.k < 1):
            raise ValueError("top_k needs k >= 1")
        if self.strategy == "top_p" and (self.p is None or not 0 < self.p <= 1):
            raise ValueError("top_p needs p in (0, 1]")
        if self.strategy == "min_p" and (self.p is None or not 0 <= self.p < 1):
            raise ValueError("min_p needs p in [0, 1)")

    @property
    def label(self) -> str:
        """Short column header: ``Top-10``, ``Min-0.05``, ``Top-0.85`` or ``Plain``."""
        if self.strategy == "top_k":
            return f"Top-{self.k}"
        if self.strategy == "top_p":
            return f"Top-{self.p:.2f}"
        if self.strategy == "min_p":
            suffix = "" if self.min_p_relative else "abs"
            return f"Min{suffix}-{self.p:.2f}"
        return "Plain"

    @property
    def key(self) -> str:
        return f"T={self.temperature:g}|{self.label}"

    def to_dict(self) -> dict:
        out: dict = {"temperature": self.temperature, "strategy": self.strategy}
        if self.k is not None:
            out["k"] = self.k
        if self.p is not None:
            out["p"] = self.p
        if not self.min_p_relative:
            out["min_p_relative"] = False
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "DecodeConfig":
        return cls(
            temperature=float(d.get("temperature", 1.0)),
            strategy=d.get("strategy", "none"),
            k=None if d.get("k") is None else int(d["k"]),
            p=None if d.get("p") is None else float(d["p"]),
            min_p_relative=bool(d.get("min_p_relative", True)),
        )


def transform(logits, config: DecodeConfig) -> np.ndarray:
    """Temperature first, then the configured filter."""
    probs = apply_temperature(logits, config.temperature)
    if config.strategy == "top_k":
        return top_k(probs, config.k)
    if config.strategy == "top_p":
        return top_p(probs, config.p)
    if config.strategy == "min_p":
        return min_p(probs, config.p, relative=config.min_p_relative)
    return probs


def sample_index(probs: np.ndarray, rng: np.random.Generator) -> int:
    """Inverse-CDF draw using exactly one uniform; zero-mass entries are never returned."""
    cum = np.cumsum(probs)
    idx = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
    if idx >= probs.size:
        idx = int(np.flatnonzero(probs)[-1])
    return idx


def default_grid(temperatures=(0.3, 0.7, 1.1)) -> list[DecodeConfig]:
    """The 3x3 grid: Top-10, Min-0.05, Top-0.85 at each temperature."""
    return [
        DecodeConfig(t, s, k=k, p=p)
        for t in temperatures
        for s, k, p in (("top_k", 10, None), ("min_p", None, 0.05), ("top_p", None, 0.85))
    ]


def extended_grid(temperatures=(0.3, 0.7, 1.1)) -> list[DecodeConfig]:
    """Three values each for top-k, min-p and top-p at each temperature (27 cells)."""
    strategies = (
        [("top_k", k, None) for k in (5, 10, 15)]
        + [("min_p", None, p) for p in (0.05, 0.10, 0.15)]
        + [("top_p", None, p) for p in (0.85, 0.90, 0.95)]
    )
    return [DecodeConfig(t, s, k=k, p=p) for t in temperatures for s, k, p in strategies]


def decode_sample(model, state, config: DecodeConfig, rng: np.random.Generator):
    """One action for ``state``: logits -> temperature -> filter -> draw."""
    scored = forward_logits(model, state)
    probs = transform([logit for _, logit in scored], config)
    return scored[sample_index(probs, rng)][0]
