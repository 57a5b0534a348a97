"""
Exporters: pluggable backends for shipping run records.

The exporter interface is simple: implement `export_record(rec)` and
optionally `export_snapshot(snapshot)`. The tracker calls exporters on
every finished episode and every evaluation.

Built-in exporters:
  - JsonlExporter: the metrics log (one JSON object per line)
  - ConsoleExporter: one-line summaries on stdout
  - MultiExporter: fan-out to multiple exporters

Roll your own:
  class MyExporter(BaseExporter):
      def export_record(self, rec): ...
"""

from __future__ import annotations

import json
import logging
import sys
import threading
from pathlib import Path
from typing import TYPE_CHECKING, TextIO

from .types import EvalRecord

if TYPE_CHECKING:
    from .metrics import TrainingSnapshot
    from .tracker import Record

logger = logging.getLogger("textrl.exporters")


class BaseExporter:
    """
    Abstract base for all exporters.
    Subclass and implement `export_record` at minimum.
    """

    def export_record(self, rec: Record) -> None:
        """Called on every episode and evaluation record."""
        raise NotImplementedError

    def export_snapshot(self, snapshot: TrainingSnapshot) -> None:
        """Called with an aggregate snapshot (at evaluation time). Optional."""
        pass

    def flush(self) -> None:
        pass

    def close(self) -> None:
        pass


class JsonlExporter(BaseExporter):
    """
    Append records as JSON lines. Records carry no timestamps, so two
    identical runs write identical files.

    ``truncate=True`` starts a fresh log instead of appending to an old one.
    """

    def __init__(self, path: str | Path, truncate: bool = False):
        self._path = Path(path)
        self._path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        if truncate:
            self._path.write_text("")
            self._path.with_suffix(".snapshots.jsonl").unlink(missing_ok=True)

    @property
    def path(self) -> Path:
        return self._path

    def export_record(self, rec: Record) -> None:
        with self._lock:
            try:
                with open(self._path, "a") as f:
                    f.write(json.dumps(rec.to_dict()) + "\n")
            except Exception as e:
                logger.warning(f"JsonlExporter write failed: {e}")

    def export_snapshot(self, snapshot: TrainingSnapshot) -> None:
        snap_path = self._path.with_suffix(".snapshots.jsonl")
        with self._lock:
            try:
                with open(snap_path, "a") as f:
                    f.write(json.dumps(snapshot.to_dict()) + "\n")
            except Exception as e:
                logger.warning(f"JsonlExporter snapshot write failed: {e}")


class ConsoleExporter(BaseExporter):
    """
    Print one line per record. ``every`` thins episode lines to every Nth.
    """

    def __init__(self, every: int = 1, stream: TextIO | None = None):
        self._every = max(every, 1)
        self._stream = stream

    def _print(self, line: str):
        print(line, file=self._stream or sys.stdout)

    def export_record(self, rec: Record) -> None:
        if isinstance(rec, EvalRecord):
            self._print(
                f"[textrl] EVAL step={rec.global_step} "
                f"P={rec.precision:.3f} R={rec.recall:.3f} F={rec.f1:.3f} "
                f"mIoU={rec.mean_iou:.3f}"
            )
            return
        if rec.index % self._every:
            return
        quality = f"{rec.quality:.3f}" if rec.quality is not None else "-"
        loss = f"{rec.loss:.4f}" if rec.loss is not None else "-"
        self._print(
            f"[textrl] #{rec.index} step={rec.global_step} {rec.source} "
            f"steps={rec.steps} reward={rec.reward:+.2f} q={quality} "
            f"eps={rec.epsilon:.3f} loss={loss}"
            + (" truncated" if rec.truncated else "")
        )

    def export_snapshot(self, snapshot: TrainingSnapshot) -> None:
        self._print(
            f"[textrl] SNAPSHOT: episodes={snapshot.episodes} "
            f"reward={snapshot.mean_reward:+.2f} steps={snapshot.mean_steps:.1f} "
            f"truncated={snapshot.truncation_rate:.1%}"
        )


class MultiExporter(BaseExporter):
    """
    Fan-out to multiple exporters. Errors in one don't block others.
    """

    def __init__(self, exporters: list[BaseExporter]):
        self._exporters = exporters

    def add(self, exporter: BaseExporter):
        self._exporters.append(exporter)

    def export_record(self, rec: Record) -> None:
        for exp in self._exporters:
            try:
                exp.export_record(rec)
            except Exception as e:
                logger.warning(f"{exp.__class__.__name__}.export_record error: {e}")

    def export_snapshot(self, snapshot: TrainingSnapshot) -> None:
        for exp in self._exporters:
            try:
                exp.export_snapshot(snapshot)
            except Exception as e:
                logger.warning(f"{exp.__class__.__name__}.export_snapshot error: {e}")

    def flush(self) -> None:
        for exp in self._exporters:
            try:
                exp.flush()
            except Exception:
                pass

    def close(self) -> None:
        for exp in self._exporters:
            try:
                exp.close()
            except Exception:
                pass
