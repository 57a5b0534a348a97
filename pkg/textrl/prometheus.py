"""
Prometheus exporter: expose a running training job's progress.

Requires: pip install textrl[prometheus]

Usage::

    from textrl.prometheus import PrometheusExporter

    prom = PrometheusExporter(port=9401, run_id="semi-seed0")
    tracker.add_exporter(prom)
    # Metrics now at http://localhost:9401/metrics
"""

from __future__ import annotations

import logging
from typing import TYPE_CHECKING

from .exporters import BaseExporter
from .types import EvalRecord

if TYPE_CHECKING:
    from .metrics import TrainingSnapshot
    from .tracker import Record

logger = logging.getLogger("textrl.prometheus")

# Lazy imports: only fail when actually used
_prometheus_available = None


def _check_prometheus():
    global _prometheus_available
    if _prometheus_available is None:
        try:
            import prometheus_client  # noqa: F401
            _prometheus_available = True
        except ImportError:
            _prometheus_available = False
    return _prometheus_available


class PrometheusExporter(BaseExporter):
    """
    Exposes training progress as Prometheus gauges/counters.

    Metrics exported:
      - textrl_episodes_total         (counter, labels: run_id, source)
      - textrl_truncated_total        (counter, labels: run_id, source)
      - textrl_global_step            (gauge, labels: run_id)
      - textrl_episode_reward         (gauge, labels: run_id, source)
      - textrl_epsilon                (gauge, labels: run_id)
      - textrl_dqn_loss               (gauge, labels: run_id)
      - textrl_assessor_loss          (gauge, labels: run_id)
      - textrl_eval_f1                (gauge, labels: run_id)
      - textrl_mean_reward            (gauge, labels: run_id)

    ``registry`` defaults to a private CollectorRegistry; pass ``port=None``
    to skip starting the HTTP server.
    """

    def __init__(self, port: int | None = 9401, run_id: str = "default", registry=None):
        if not _check_prometheus():
            raise ImportError(
                "PrometheusExporter requires prometheus_client. "
                "Install with: pip install textrl[prometheus]"
            )

        import prometheus_client as prom

        self._run_id = run_id
        self.registry = registry if registry is not None else prom.CollectorRegistry()
        reg = self.registry

        # Counters
        self.episodes_total = prom.Counter(
            "textrl_episodes_total", "Finished word searches", ["run_id", "source"], registry=reg,
        )
        self.truncated_total = prom.Counter(
            "textrl_truncated_total", "Searches ended by the step limit",
            ["run_id", "source"], registry=reg,
        )

        # Gauges
        self.global_step = prom.Gauge(
            "textrl_global_step", "Environment steps taken", ["run_id"], registry=reg,
        )
        self.episode_reward = prom.Gauge(
            "textrl_episode_reward", "Reward of the last finished search",
            ["run_id", "source"], registry=reg,
        )
        self.epsilon = prom.Gauge(
            "textrl_epsilon", "Current exploration rate", ["run_id"], registry=reg,
        )
        self.dqn_loss = prom.Gauge(
            "textrl_dqn_loss", "Mean TD loss over the last search", ["run_id"], registry=reg,
        )
        self.assessor_loss = prom.Gauge(
            "textrl_assessor_loss", "Last assessor batch loss", ["run_id"], registry=reg,
        )
        self.eval_f1 = prom.Gauge(
            "textrl_eval_f1", "F1 of the last periodic evaluation", ["run_id"], registry=reg,
        )
        self.mean_reward = prom.Gauge(
            "textrl_mean_reward", "Mean reward over the snapshot window", ["run_id"], registry=reg,
        )

        if port is not None:
            prom.start_http_server(port, registry=reg)
            logger.info(f"Prometheus metrics at http://0.0.0.0:{port}/metrics")

    def export_record(self, rec: Record) -> None:
        """Update Prometheus metrics on each record."""
        rid = self._run_id
        if isinstance(rec, EvalRecord):
            self.eval_f1.labels(run_id=rid).set(rec.f1)
            return

        self.episodes_total.labels(run_id=rid, source=rec.source).inc()
        if rec.truncated:
            self.truncated_total.labels(run_id=rid, source=rec.source).inc()
        self.global_step.labels(run_id=rid).set(rec.global_step)
        self.episode_reward.labels(run_id=rid, source=rec.source).set(rec.reward)
        self.epsilon.labels(run_id=rid).set(rec.epsilon)
        if rec.loss is not None:
            self.dqn_loss.labels(run_id=rid).set(rec.loss)
        if rec.assessor_loss is not None:
            self.assessor_loss.labels(run_id=rid).set(rec.assessor_loss)

    def export_snapshot(self, snapshot: TrainingSnapshot) -> None:
        """Update aggregate gauges from a snapshot."""
        self.mean_reward.labels(run_id=self._run_id).set(snapshot.mean_reward)
