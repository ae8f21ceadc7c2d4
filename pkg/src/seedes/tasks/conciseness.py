"""Length-matching reward: short answers of the right size score best."""

from __future__ import annotations

import math

NORMALIZED_SCALE = 20.0


def text_length(s: str) -> int:
    """Unicode code points, whitespace included."""
    return len(s)


def conciseness_reward(response: str, solution: str) -> float:
    """-|len(response) - len(solution)|; 0 only when the lengths match."""
    return -float(abs(text_length(response) - text_length(solution)))


def normalized_conciseness(response: str, solution: str,
                           scale: float = NORMALIZED_SCALE) -> float:
    """exp(-|len diff| / scale) in (0, 1]. A reporting convenience of this
    package, not a training reward."""
    return math.exp(conciseness_reward(response, solution) / scale)


class ConcisenessTask:
    """Reward callable for the engine: mean conciseness reward over a prompt batch.

    The model is decoded greedily, so a given parameter vector always earns
    the same reward.
    """

    def __init__(self, pairs, max_new: int = 32, batch_size: int | None = None):
        pairs = list(pairs)
        if batch_size is not None:
            pairs = pairs[:batch_size]
        if not pairs:
            raise ValueError("conciseness task needs at least one prompt")
        self.pairs = pairs
        self.max_new = max_new

    def responses(self, model) -> list[str]:
        return model.respond([p.prompt for p in self.pairs], self.max_new)

    def rewards(self, model) -> list[float]:
        return [conciseness_reward(y, p.solution)
                for y, p in zip(self.responses(model), self.pairs)]

    def __call__(self, model) -> float:
        r = self.rewards(model)
        return sum(r) / len(r)
