"""Difficulty grading and adaptive retrieval budgets."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

from .index import DEFAULT_N_SCORE


class Difficulty(str, enum.Enum):
    EASY = "easy"
    MEDIUM = "medium"
    HARD = "hard"


@dataclass(frozen=True)
class PolicyConfig:
    """Knobs of the adaptive retrieval rule.

    ``k`` is the budget for hard queries; easy and medium queries get
    ``ceil(alpha * k)`` and ``ceil(beta * k)`` images.
    """

    k: int = 10
    alpha: float = 0.5
    beta: float = 0.7
    gamma_low: float = 0.4
    gamma_high: float = 0.6
    n_score: int = DEFAULT_N_SCORE

    def __post_init__(self):
        if not (isinstance(self.k, int) and self.k >= 1):
            raise ValueError(f"k must be a positive integer, got {self.k!r}")
        if not (0.0 < self.alpha < self.beta < 1.0):
            raise ValueError(f"need 0 < alpha < beta < 1, got alpha={self.alpha}, beta={self.beta}")
        if not (-1.0 <= self.gamma_low < self.gamma_high <= 1.0):
            raise ValueError(
                f"need -1 <= gamma_low < gamma_high <= 1, got {self.gamma_low}, {self.gamma_high}")
        if not (isinstance(self.n_score, int) and self.n_score >= 1):
            raise ValueError(f"n_score must be a positive integer, got {self.n_score!r}")


def classify(score: float, config: PolicyConfig) -> Difficulty:
    if score >= config.gamma_high:
        return Difficulty.EASY
    if score >= config.gamma_low:
        return Difficulty.MEDIUM
    return Difficulty.HARD


def _ceil(x: float) -> int:
    # 0.7 * 10 is 7.000000000000001 in binary floating point; round away
    # representation noise before taking the ceiling.
    return math.ceil(round(x, 9))


def budget(difficulty: Difficulty, config: PolicyConfig) -> int:
    if difficulty is Difficulty.EASY:
        n = _ceil(config.alpha * config.k)
    elif difficulty is Difficulty.MEDIUM:
        n = _ceil(config.beta * config.k)
    else:
        n = config.k
    return max(1, min(n, config.k))


def expected_average_k(distribution, config: PolicyConfig) -> float:
    """Mean budget over a population given ``(easy%, medium%, hard%)``."""
    try:
        pe, pm, ph = (float(p) for p in distribution)
    except (TypeError, ValueError):
        raise ValueError("distribution must be three percentages") from None
    if min(pe, pm, ph) < 0 or abs(pe + pm + ph - 100.0) > 1e-6:
        raise ValueError(f"percentages must be nonnegative and sum to 100, got {distribution}")
    return (pe * budget(Difficulty.EASY, config)
            + pm * budget(Difficulty.MEDIUM, config)
            + ph * budget(Difficulty.HARD, config)) / 100.0
