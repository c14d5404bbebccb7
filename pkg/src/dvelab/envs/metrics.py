"""Episode-level evaluation metrics: SPL, success rate, mean total reward."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence


@dataclass
class EpisodeOutcome:
    success: bool
    path_len: int
    optimal_len: int
    total_reward: float = 0.0

    def __post_init__(self):
        if self.optimal_len < 1:
            raise ValueError("optimal_len must be >= 1")
        if self.success and self.path_len < 1:
            raise ValueError("path_len must be >= 1 on success")


@dataclass
class EvalMetrics:
    spl: float
    success_rate: float
    mean_total_reward: float
    n_episodes: int


def spl(episodes: Sequence[EpisodeOutcome]) -> EvalMetrics:
    """Success weighted by path length: mean of S_i * L_i / max(P_i, L_i)."""
    if not episodes:
        raise ValueError("spl: empty episode list")
    n = len(episodes)
    score = sum(
        e.optimal_len / max(e.path_len, e.optimal_len) for e in episodes if e.success
    )
    return EvalMetrics(
        spl=score / n,
        success_rate=sum(e.success for e in episodes) / n,
        mean_total_reward=sum(e.total_reward for e in episodes) / n,
        n_episodes=n,
    )
