"""Exception types shared across the package."""


class GameError(Exception):
    """Base class for game-environment errors."""


class TerminalState(GameError):
    """Raised when an action is requested from a depth-3 (terminal) state."""


class IllegalAction(GameError):
    """Raised when a step cannot be applied to a state."""


class ArithmeticOverflow(GameError):
    """A rational intermediate left the signed 64-bit range."""


class InsufficientPuzzles(Exception):
    """The operand range cannot fill one of the requested dataset splits."""

    def __init__(self, split: str, needed: int, available: int):
        self.split = split
        self.needed = needed
        self.available = available
        super().__init__(f"split {split!r} needs {needed} puzzles, only {available} available")


class DivergenceDetected(Exception):
    """Training produced a non-finite loss; ``last_good`` holds the model before the bad step."""

    def __init__(self, step: int, last_good):
        self.step = step
        self.last_good = last_good
        super().__init__(f"non-finite loss at step {step}")


class InvalidTemperature(ValueError):
    pass


class ChecksumMismatch(Exception):
    """A checkpoint's provenance does not match what the caller requires."""
