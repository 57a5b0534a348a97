"""
MetricsEngine: aggregates over the episode stream.

Turns EpisodeRecords into a TrainingSnapshot: reward, search length,
truncation rate, losses, and a per-source breakdown for semi-supervised
runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .types import EpisodeRecord, EvalRecord


@dataclass
class SourceStats:
    episodes: int = 0
    mean_reward: float = 0.0
    mean_quality: float | None = None


@dataclass
class TrainingSnapshot:
    """Aggregate view of a set of episodes."""
    episodes: int = 0
    last_global_step: int = 0
    mean_reward: float = 0.0
    mean_steps: float = 0.0
    mean_quality: float | None = None
    truncation_rate: float = 0.0
    mean_loss: float | None = None
    mean_assessor_loss: float | None = None
    last_epsilon: float | None = None
    by_source: dict[str, SourceStats] = field(default_factory=dict)
    last_eval: EvalRecord | None = None

    def to_dict(self) -> dict:
        def r(v: float | None, nd: int = 4) -> float | None:
            return round(v, nd) if v is not None else None

        return {
            "episodes": self.episodes,
            "last_global_step": self.last_global_step,
            "mean_reward": round(self.mean_reward, 4),
            "mean_steps": round(self.mean_steps, 2),
            "mean_quality": r(self.mean_quality),
            "truncation_rate": round(self.truncation_rate, 4),
            "mean_loss": r(self.mean_loss, 6),
            "mean_assessor_loss": r(self.mean_assessor_loss, 6),
            "last_epsilon": r(self.last_epsilon),
            "by_source": {
                k: {
                    "episodes": v.episodes,
                    "mean_reward": round(v.mean_reward, 4),
                    "mean_quality": r(v.mean_quality),
                }
                for k, v in self.by_source.items()
            },
            "last_eval": self.last_eval.to_dict() if self.last_eval else None,
        }


def _mean(values: list[float]) -> float | None:
    return float(np.mean(values)) if values else None


class MetricsEngine:
    """
    Computes training metrics from a list of episode records.

    Usage::

        engine = MetricsEngine()
        snapshot = engine.compute(tracker.recent(500), evals=tracker.evals)
    """

    def compute(
        self,
        records: list[EpisodeRecord],
        evals: list[EvalRecord] | None = None,
    ) -> TrainingSnapshot:
        snap = TrainingSnapshot()
        if evals:
            snap.last_eval = max(evals, key=lambda e: e.global_step)
        if not records:
            return snap

        snap.episodes = len(records)
        snap.last_global_step = max(r.global_step for r in records)
        snap.mean_reward = float(np.mean([r.reward for r in records]))
        snap.mean_steps = float(np.mean([r.steps for r in records]))
        snap.mean_quality = _mean([r.quality for r in records if r.quality is not None])
        snap.truncation_rate = sum(r.truncated for r in records) / len(records)
        snap.mean_loss = _mean([r.loss for r in records if r.loss is not None])
        snap.mean_assessor_loss = _mean(
            [r.assessor_loss for r in records if r.assessor_loss is not None]
        )
        snap.last_epsilon = max(records, key=lambda r: r.global_step).epsilon

        for source in sorted({r.source for r in records}):
            subset = [r for r in records if r.source == source]
            snap.by_source[source] = SourceStats(
                episodes=len(subset),
                mean_reward=float(np.mean([r.reward for r in subset])),
                mean_quality=_mean([r.quality for r in subset if r.quality is not None]),
            )
        return snap

    def compute_window(
        self,
        records: list[EpisodeRecord],
        last_n: int,
        evals: list[EvalRecord] | None = None,
    ) -> TrainingSnapshot:
        """Compute metrics for only the last `last_n` episodes."""
        ordered = sorted(records, key=lambda r: r.index)
        return self.compute(ordered[-last_n:] if last_n > 0 else [], evals=evals)
