"""
Tests for run observability: tracker, metrics engine and exporters.
"""

import json
import unittest

from textrl import (
    BaseExporter,
    ConsoleExporter,
    EpisodeRecord,
    EvalRecord,
    JsonlExporter,
    MetricsEngine,
    MultiExporter,
    RunTracker,
)
from textrl.tracker import read_metrics_log


class TestRunTracker(unittest.TestCase):
    def test_record_and_query(self):
        tracker = RunTracker(run_id="test-run")
        rec = tracker.record_episode(global_step=17, source="supervised", steps=17, reward=55.4)

        self.assertEqual(rec.run_id, "test-run")
        self.assertEqual(rec.index, 0)
        self.assertEqual(rec.reward, 55.4)
        self.assertEqual(tracker.count, 1)

    def test_recent(self):
        tracker = RunTracker()
        for i in range(10):
            tracker.record_episode(global_step=i, reward=float(i))

        recent = tracker.recent(5)
        self.assertEqual(len(recent), 5)
        self.assertEqual(recent[-1].reward, 9.0)

    def test_query_by_source(self):
        tracker = RunTracker()
        tracker.record_episode(source="supervised", reward=1.0)
        tracker.record_episode(source="weak", reward=2.0)
        tracker.record_episode(source="supervised", reward=3.0)

        supervised = tracker.episodes(source="supervised")
        self.assertEqual(len(supervised), 2)
        self.assertEqual(sum(r.reward for r in supervised), 4.0)

    def test_listener(self):
        tracker = RunTracker()
        received = []
        tracker.add_listener(lambda rec: received.append(rec))

        tracker.record_episode(reward=1.0)
        tracker.record_eval(EvalRecord(global_step=5, f1=0.5))

        self.assertEqual(len(received), 2)
        self.assertIsInstance(received[1], EvalRecord)

    def test_listener_errors_are_contained(self):
        tracker = RunTracker()

        def broken(rec):
            raise RuntimeError("boom")

        tracker.add_listener(broken)
        tracker.record_episode(reward=1.0)  # should not raise
        self.assertEqual(tracker.count, 1)

    def test_max_history(self):
        tracker = RunTracker(max_history=5)
        for i in range(10):
            tracker.record_episode(reward=float(i))

        # count covers the whole run; memory keeps the last 5
        self.assertEqual(tracker.count, 10)
        recent = tracker.recent(10)
        self.assertEqual(len(recent), 5)
        self.assertEqual(recent[0].reward, 5.0)
        self.assertEqual(recent[0].index, 5)

    def test_last_eval(self):
        tracker = RunTracker()
        self.assertIsNone(tracker.last_eval)
        tracker.record_eval(EvalRecord(global_step=10, f1=0.2))
        tracker.record_eval(EvalRecord(global_step=20, f1=0.4))
        self.assertEqual(tracker.last_eval.global_step, 20)
        self.assertEqual(len(tracker.evals), 2)


class TestMetricsEngine(unittest.TestCase):
    def test_basic_metrics(self):
        records = [
            EpisodeRecord(index=0, global_step=10, source="supervised", steps=10, reward=60.0,
                          quality=0.9, epsilon=0.9, loss=1.0),
            EpisodeRecord(index=1, global_step=30, source="weak", steps=20, reward=20.0,
                          quality=0.3, epsilon=0.8, assessor_loss=0.05),
            EpisodeRecord(index=2, global_step=130, source="supervised", steps=100, reward=-3.0,
                          truncated=True, epsilon=0.7, loss=3.0),
        ]
        snap = MetricsEngine().compute(records)

        self.assertEqual(snap.episodes, 3)
        self.assertEqual(snap.last_global_step, 130)
        self.assertAlmostEqual(snap.mean_reward, 77.0 / 3)
        self.assertAlmostEqual(snap.mean_steps, 130.0 / 3)
        self.assertAlmostEqual(snap.mean_quality, 0.6)
        self.assertAlmostEqual(snap.truncation_rate, 1 / 3)
        self.assertAlmostEqual(snap.mean_loss, 2.0)
        self.assertAlmostEqual(snap.mean_assessor_loss, 0.05)
        self.assertEqual(snap.last_epsilon, 0.7)
        self.assertEqual(snap.by_source["supervised"].episodes, 2)
        self.assertAlmostEqual(snap.by_source["weak"].mean_reward, 20.0)

    def test_empty_records(self):
        snap = MetricsEngine().compute([], evals=[EvalRecord(global_step=3, f1=0.1)])
        self.assertEqual(snap.episodes, 0)
        self.assertIsNone(snap.mean_quality)
        self.assertEqual(snap.last_eval.global_step, 3)

    def test_window(self):
        records = [EpisodeRecord(index=i, reward=float(i)) for i in range(10)]
        snap = MetricsEngine().compute_window(records, last_n=4)
        self.assertEqual(snap.episodes, 4)
        self.assertAlmostEqual(snap.mean_reward, 7.5)

    def test_to_dict_is_json(self):
        snap = MetricsEngine().compute([EpisodeRecord(reward=1.23456789, quality=0.5)])
        d = json.loads(json.dumps(snap.to_dict()))
        self.assertEqual(d["mean_reward"], 1.2346)
        self.assertIn("supervised", d["by_source"])


class TestExporters(unittest.TestCase):
    def test_jsonl_exporter(self):
        import os
        import tempfile

        with tempfile.TemporaryDirectory() as tmpdir:
            path = os.path.join(tmpdir, "metrics.jsonl")
            exporter = JsonlExporter(path)

            exporter.export_record(EpisodeRecord(global_step=42, reward=12.5, source="weak"))
            exporter.export_record(EvalRecord(global_step=50, f1=0.75))

            with open(path) as f:
                lines = f.readlines()
            self.assertEqual(len(lines), 2)
            first = json.loads(lines[0])
            self.assertEqual(first["kind"], "episode")
            self.assertAlmostEqual(first["reward"], 12.5)
            self.assertEqual(json.loads(lines[1])["kind"], "eval")

    def test_jsonl_truncate(self):
        import tempfile
        from pathlib import Path

        with tempfile.TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "metrics.jsonl"
            path.write_text('{"kind": "episode"}\n')
            JsonlExporter(path, truncate=True)
            self.assertEqual(path.read_text(), "")

    def test_log_roundtrip_through_tracker(self):
        import tempfile
        from pathlib import Path

        with tempfile.TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "metrics.jsonl"
            tracker = RunTracker(run_id="r", exporters=[JsonlExporter(path)])
            tracker.record_episode(global_step=5, steps=5, reward=1.5, detection=[0, 0, 4, 4])
            tracker.record_eval(EvalRecord(global_step=5, precision=0.5))
            with open(path, "a") as f:
                f.write("not json\n")
            tracker.close()

            episodes, evals = read_metrics_log(path)
            self.assertEqual(len(episodes), 1)
            self.assertEqual(episodes[0].detection, [0, 0, 4, 4])
            self.assertEqual(evals[0].precision, 0.5)

            fresh = RunTracker()
            self.assertEqual(fresh.load_from_disk(path), 1)
            self.assertEqual(fresh.count, 1)
            self.assertEqual(fresh.last_eval.global_step, 5)

    def test_console_exporter(self):
        import io

        buf = io.StringIO()
        exporter = ConsoleExporter(every=2, stream=buf)
        exporter.export_record(EpisodeRecord(index=0, global_step=9, source="supervised",
                                             reward=69.85, quality=1.0, epsilon=0.5))
        exporter.export_record(EpisodeRecord(index=1, global_step=12))
        exporter.export_record(EvalRecord(global_step=20, f1=0.5))

        output = buf.getvalue()
        self.assertIn("+69.85", output)
        self.assertIn("supervised", output)
        self.assertNotIn("#1 ", output)
        self.assertIn("EVAL step=20", output)

    def test_multi_exporter(self):
        received_a = []
        received_b = []

        class FakeA(BaseExporter):
            def export_record(self, rec):
                received_a.append(rec)

        class FakeB(BaseExporter):
            def export_record(self, rec):
                received_b.append(rec)

        multi = MultiExporter([FakeA(), FakeB()])
        multi.export_record(EpisodeRecord(reward=1.0))

        self.assertEqual(len(received_a), 1)
        self.assertEqual(len(received_b), 1)

    def test_multi_exporter_isolates_errors(self):
        received = []

        class BadExporter(BaseExporter):
            def export_record(self, rec):
                raise RuntimeError("boom")

        class GoodExporter(BaseExporter):
            def export_record(self, rec):
                received.append(rec)

        multi = MultiExporter([BadExporter(), GoodExporter()])
        multi.export_record(EpisodeRecord(reward=1.0))  # should not raise

        self.assertEqual(len(received), 1)

    def test_tracker_with_exporter(self):
        exported = []

        class CapturingExporter(BaseExporter):
            def export_record(self, rec):
                exported.append(rec)

        tracker = RunTracker(exporters=[CapturingExporter()])
        tracker.record_episode(reward=10.0)
        tracker.record_episode(reward=20.0)

        # 2 episodes = 2 exports
        self.assertEqual(len(exported), 2)
        self.assertAlmostEqual(exported[0].reward, 10.0)


class TestPrometheusExporter(unittest.TestCase):
    def setUp(self):
        try:
            import prometheus_client  # noqa: F401
        except ImportError:
            self.skipTest("prometheus_client not installed")

    def test_counts_and_gauges(self):
        from textrl.prometheus import PrometheusExporter

        prom = PrometheusExporter(port=None, run_id="t")
        tracker = RunTracker(exporters=[prom])
        tracker.record_episode(global_step=10, source="weak", reward=3.0, truncated=True,
                               epsilon=0.4, loss=0.2)
        tracker.record_episode(global_step=20, source="weak", reward=5.0, epsilon=0.3)
        tracker.record_eval(EvalRecord(global_step=20, f1=0.6))

        reg = prom.registry
        labels = {"run_id": "t", "source": "weak"}
        self.assertEqual(reg.get_sample_value("textrl_episodes_total", labels), 2.0)
        self.assertEqual(reg.get_sample_value("textrl_truncated_total", labels), 1.0)
        self.assertEqual(reg.get_sample_value("textrl_episode_reward", labels), 5.0)
        self.assertEqual(reg.get_sample_value("textrl_global_step", {"run_id": "t"}), 20.0)
        self.assertEqual(reg.get_sample_value("textrl_dqn_loss", {"run_id": "t"}), 0.2)
        self.assertEqual(reg.get_sample_value("textrl_eval_f1", {"run_id": "t"}), 0.6)


if __name__ == "__main__":
    unittest.main()
