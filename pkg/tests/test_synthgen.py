"""
Tests for synthetic scene rendering and assessor crop generation.
"""

import json
import tempfile
import unittest
from pathlib import Path

import numpy as np

from textrl.datasets import load_manifest
from textrl.geometry import Box, iou
from textrl.synthgen import (
    GenConfig,
    generate_dataset,
    generate_scenes,
    label_crop,
    quota_bins,
    render_nonempty_scene,
    render_scene,
    sample_crop,
)
from textrl.types import ConfigError, SceneRecord, Supervision


def _scene(boxes: list[Box]) -> SceneRecord:
    return SceneRecord(
        image=np.zeros((64, 64, 3), dtype=np.uint8),
        boxes=boxes,
        words=["w"] * len(boxes),
    )


class TestGenConfig(unittest.TestCase):
    def test_lists_become_tuples(self):
        cfg = GenConfig(words=["A", "B"], font_size=[8, 12])
        self.assertEqual(cfg.words, ("A", "B"))
        self.assertEqual(cfg.font_size, (8, 12))

    def test_invalid(self):
        cases = [
            dict(words=()),
            dict(words_per_scene=(0, 2)),
            dict(words_per_scene=(3, 2)),
            dict(font_size=(2, 10)),
            dict(bin_edges=(0.0, 0.5, 0.9)),
            dict(bin_quotas=(0.5, 0.5, 0.5)),
            dict(bin_quotas=(0.5, 0.5)),
            dict(backgrounds=("plasma",)),
            dict(width=4),
        ]
        for kwargs in cases:
            with self.subTest(**{k: str(v) for k, v in kwargs.items()}):
                with self.assertRaises(ConfigError):
                    GenConfig(**kwargs)

    def test_dict_roundtrip(self):
        cfg = GenConfig(seed=3, width=80, words=("X",))
        self.assertEqual(GenConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))), cfg)

    def test_unknown_key(self):
        with self.assertRaises(ConfigError):
            GenConfig.from_dict({"sead": 1})


class TestRenderScene(unittest.TestCase):
    def test_deterministic(self):
        cfg = GenConfig(seed=5, width=96, height=64)
        a = render_scene(cfg, np.random.default_rng([5, 0]))
        b = render_scene(cfg, np.random.default_rng([5, 0]))
        np.testing.assert_array_equal(a.image, b.image)
        self.assertEqual(a.boxes, b.boxes)
        self.assertEqual(a.words, b.words)

    def test_single_word(self):
        cfg = GenConfig(width=96, height=64, words_per_scene=(1, 1), font_size=(10, 14))
        scene = render_nonempty_scene(cfg, np.random.default_rng(0))
        self.assertEqual(len(scene.boxes), 1)
        self.assertEqual(scene.image.shape, (64, 96, 3))
        box = scene.boxes[0]
        self.assertGreaterEqual(box.x_min, 0)
        self.assertLessEqual(box.x_max, 96)
        self.assertGreaterEqual(box.y_min, 0)
        self.assertLessEqual(box.y_max, 64)

    def test_words_do_not_overlap(self):
        cfg = GenConfig(width=128, height=96, words_per_scene=(3, 3), font_size=(10, 14))
        for seed in range(10):
            scene = render_scene(cfg, np.random.default_rng(seed))
            for i, a in enumerate(scene.boxes):
                for b in scene.boxes[i + 1:]:
                    self.assertEqual(iou(a, b), 0.0)

    def test_text_is_drawn_inside_box(self):
        cfg = GenConfig(width=96, height=64, words_per_scene=(1, 1), backgrounds=("flat",))
        scene = render_nonempty_scene(cfg, np.random.default_rng(2))
        box = scene.boxes[0]
        x0, y0, x1, y1 = (int(v) for v in box.to_list())
        corners = [(0, 0), (0, 95), (63, 0), (63, 95)]
        r, c = next((r, c) for r, c in corners if not box.contains(Box(c, r, c + 1, r + 1)))
        background = scene.image[r, c].copy()
        outside = scene.image.copy()
        outside[y0:y1, x0:x1] = background
        self.assertTrue((outside == background).all())
        inside = scene.image[y0:y1, x0:x1]
        self.assertFalse((inside == background).all())


class TestLabels(unittest.TestCase):
    def setUp(self):
        self.scene = _scene([Box(0, 0, 10, 10), Box(20, 0, 30, 10)])

    def test_partial_overlap(self):
        label, best = label_crop(Box(5, 0, 15, 10), self.scene, target=1)
        self.assertAlmostEqual(label, 1 / 3, places=12)
        self.assertEqual(best, 0)

    def test_no_overlap_keeps_target(self):
        self.assertEqual(label_crop(Box(40, 40, 50, 50), self.scene, target=1), (0.0, 1))

    def test_exact(self):
        self.assertEqual(label_crop(Box(20, 0, 30, 10), self.scene, target=0), (1.0, 1))

    def test_sampled_labels_are_exact(self):
        cfg = GenConfig(width=96, height=64, crop_size=16)
        rng = np.random.default_rng(11)
        scene = render_nonempty_scene(cfg, rng)
        for _ in range(50):
            sample = sample_crop(scene, rng, cfg)
            self.assertEqual(sample.crop.shape, (16, 16, 4))
            self.assertAlmostEqual(sample.label, iou(sample.box, sample.word_box), places=12)
            self.assertGreaterEqual(sample.label, 0.0)
            self.assertLessEqual(sample.label, 1.0)

    def test_empty_scene(self):
        with self.assertRaises(ValueError):
            sample_crop(_scene([]), np.random.default_rng(0), GenConfig())


class TestQuotas(unittest.TestCase):
    def test_exact_counts(self):
        bins = quota_bins(GenConfig(), 10, np.random.default_rng(0))
        self.assertEqual(len(bins), 10)
        self.assertEqual([bins.count(b) for b in range(3)], [3, 4, 3])

    def test_remainder_goes_to_largest_fraction(self):
        bins = quota_bins(GenConfig(), 7, np.random.default_rng(0))
        # raw counts 2.1, 2.8, 2.1
        self.assertEqual([bins.count(b) for b in range(3)], [2, 3, 2])


class TestGenerateDataset(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)
        self.cfg = GenConfig(seed=4, width=96, height=64, crop_size=16, crops_per_scene=4)

    def tearDown(self):
        self.tmp.cleanup()

    def _records(self, manifest: Path) -> list[dict]:
        return [json.loads(line) for line in manifest.read_text().splitlines()]

    def test_writes_crops_and_manifest(self):
        manifest = generate_dataset(self.cfg, 10, self.root / "a")
        records = self._records(manifest)
        self.assertEqual(len(records), 10)
        for rec in records:
            self.assertTrue((manifest.parent / rec["crop"]).exists())
            self.assertGreaterEqual(rec["iou"], 0.0)
            self.assertLessEqual(rec["iou"], 1.0)
        self.assertEqual({rec["scene_id"] for rec in records}, {0, 1, 2})
        self.assertTrue((manifest.parent / "gen_config.json").exists())

    def test_quota_bins_met(self):
        records = self._records(generate_dataset(self.cfg, 10, self.root / "a"))
        labels = [rec["iou"] for rec in records]
        self.assertEqual(sum(1 for y in labels if y < 0.3), 3)
        self.assertEqual(sum(1 for y in labels if 0.3 <= y < 0.7), 4)
        self.assertEqual(sum(1 for y in labels if y >= 0.7), 3)

    def test_reproducible(self):
        a = generate_dataset(self.cfg, 10, self.root / "a")
        b = generate_dataset(self.cfg, 10, self.root / "b")
        self.assertEqual(a.read_text(), b.read_text())
        for rec in self._records(a):
            self.assertEqual((a.parent / rec["crop"]).read_bytes(),
                             (b.parent / rec["crop"]).read_bytes())

    def test_zero_samples(self):
        with self.assertRaises(ValueError):
            generate_dataset(self.cfg, 0, self.root / "a")


class TestGenerateScenes(unittest.TestCase):
    def test_labeled_scenes_load(self):
        cfg = GenConfig(seed=1, width=96, height=64)
        with tempfile.TemporaryDirectory() as tmp:
            manifest = generate_scenes(cfg, 3, tmp)
            ds = load_manifest(manifest)
            self.assertEqual(len(ds), 3)
            for entry in ds:
                self.assertIs(entry.supervision, Supervision.LABELED)
                self.assertGreaterEqual(len(entry.boxes), 1)
                self.assertEqual(len(entry.words), len(entry.boxes))
                self.assertEqual(entry.load_image().shape, (64, 96, 3))

    def test_unlabeled_scenes_carry_no_boxes(self):
        cfg = GenConfig(seed=1, width=96, height=64)
        with tempfile.TemporaryDirectory() as tmp:
            ds = load_manifest(generate_scenes(cfg, 2, tmp, supervision=Supervision.UNLABELED))
            self.assertTrue(all(e.supervision is Supervision.UNLABELED for e in ds))
            self.assertTrue(all(e.boxes == () for e in ds))


if __name__ == "__main__":
    unittest.main()
