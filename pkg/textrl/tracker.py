"""
RunTracker: the training-run recording engine.

Every finished word search and every periodic evaluation flows through
here. The tracker keeps recent records in memory, fans them out to
exporters (the JSONL metrics log, console, Prometheus) and notifies
listeners on each new record.
"""

from __future__ import annotations

import json
import logging
import threading
from pathlib import Path
from typing import TYPE_CHECKING, Callable, Union

from .types import EpisodeRecord, EvalRecord

if TYPE_CHECKING:
    from .exporters import BaseExporter
    from .metrics import TrainingSnapshot

logger = logging.getLogger("textrl.tracker")

Record = Union[EpisodeRecord, EvalRecord]

# Listeners react to every new record
RecordListener = Callable[[Record], None]


class RunTracker:
    """
    Thread-safe episode/eval recorder.

    Usage::

        tracker = RunTracker(run_id="supervised-seed0",
                             exporters=[JsonlExporter("runs/x/metrics.jsonl")])
        rec = tracker.record_episode(global_step=412, source="supervised",
                                     steps=17, reward=55.4, quality=0.80)
        tracker.record_eval(EvalRecord(global_step=20_000, f1=0.42))
    """

    def __init__(
        self,
        run_id: str = "default",
        max_history: int = 10_000,
        exporters: list[BaseExporter] | None = None,
    ):
        self.run_id = run_id
        self._episodes: list[EpisodeRecord] = []
        self._evals: list[EvalRecord] = []
        self._total_episodes = 0
        self._lock = threading.Lock()
        self._listeners: list[RecordListener] = []
        self._exporters: list[BaseExporter] = list(exporters or [])
        self._max_history = max_history

    # ── Recording ──────────────────────────────────────────────────────

    def record_episode(self, **kwargs) -> EpisodeRecord:
        """
        Record a finished search. Accepts any EpisodeRecord field as kwarg;
        ``index`` and ``run_id`` are filled in.
        """
        with self._lock:
            kwargs.setdefault("run_id", self.run_id)
            kwargs["index"] = self._total_episodes
            rec = EpisodeRecord(**kwargs)
            self._episodes.append(rec)
            self._total_episodes += 1
            self._trim()

        self._export(rec)
        self._notify(rec)

        logger.debug(
            f"[EPISODE] #{rec.index} step={rec.global_step} source={rec.source} "
            f"steps={rec.steps} reward={rec.reward:.3f}"
        )
        return rec

    def record_eval(self, rec: EvalRecord) -> EvalRecord:
        with self._lock:
            self._evals.append(rec)

        self._export(rec)
        self._notify(rec)

        logger.info(
            f"[EVAL] step={rec.global_step} P={rec.precision:.3f} "
            f"R={rec.recall:.3f} F={rec.f1:.3f}"
        )
        return rec

    # ── Queries ────────────────────────────────────────────────────────

    def recent(self, n: int = 50) -> list[EpisodeRecord]:
        """Return the N most recent episodes."""
        with self._lock:
            return self._episodes[-n:] if n > 0 else []

    def episodes(self, source: str | None = None) -> list[EpisodeRecord]:
        with self._lock:
            recs = list(self._episodes)
        if source is not None:
            recs = [r for r in recs if r.source == source]
        return recs

    @property
    def evals(self) -> list[EvalRecord]:
        with self._lock:
            return list(self._evals)

    @property
    def last_eval(self) -> EvalRecord | None:
        with self._lock:
            return self._evals[-1] if self._evals else None

    @property
    def count(self) -> int:
        """Episodes recorded over the whole run, including trimmed ones."""
        with self._lock:
            return self._total_episodes

    # ── Listeners & Exporters ─────────────────────────────────────────

    def add_listener(self, fn: RecordListener):
        self._listeners.append(fn)

    def add_exporter(self, exporter: BaseExporter):
        self._exporters.append(exporter)

    def _notify(self, rec: Record):
        for listener in self._listeners:
            try:
                listener(rec)
            except Exception as e:
                logger.warning(f"Listener error: {e}")

    def _export(self, rec: Record):
        """Push a record to all registered exporters."""
        for exp in self._exporters:
            try:
                exp.export_record(rec)
            except Exception as e:
                logger.warning(f"Exporter {exp.__class__.__name__} error: {e}")

    def publish_snapshot(self, snapshot: TrainingSnapshot):
        for exp in self._exporters:
            try:
                exp.export_snapshot(snapshot)
            except Exception as e:
                logger.warning(f"Exporter {exp.__class__.__name__} snapshot error: {e}")

    def close(self):
        for exp in self._exporters:
            try:
                exp.flush()
                exp.close()
            except Exception as e:
                logger.warning(f"Exporter {exp.__class__.__name__} close error: {e}")

    # ── Persistence ────────────────────────────────────────────────────

    def load_from_disk(self, path: str | Path) -> int:
        """Load records from a metrics log. Returns the number of episodes loaded."""
        episodes, evals = read_metrics_log(path)
        with self._lock:
            self._episodes.extend(episodes)
            self._evals.extend(evals)
            self._total_episodes += len(episodes)
            self._trim()
        logger.info(f"Loaded {len(episodes)} episodes and {len(evals)} evaluations from {path}")
        return len(episodes)

    # ── Internal ───────────────────────────────────────────────────────

    def _trim(self):
        """Keep only the max_history most recent episodes. Caller holds the lock."""
        excess = len(self._episodes) - self._max_history
        if excess > 0:
            del self._episodes[:excess]


def read_metrics_log(path: str | Path) -> tuple[list[EpisodeRecord], list[EvalRecord]]:
    """Parse a metrics log; unreadable lines are skipped with a warning."""
    episodes: list[EpisodeRecord] = []
    evals: list[EvalRecord] = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                d = json.loads(line)
                if d.get("kind") == "eval":
                    evals.append(EvalRecord(**{k: v for k, v in d.items() if k != "kind"}))
                else:
                    episodes.append(EpisodeRecord.from_dict(d))
            except (json.JSONDecodeError, TypeError, AttributeError) as e:
                logger.warning(f"{path}:{lineno}: skipped unreadable record ({e})")
    return episodes, evals
