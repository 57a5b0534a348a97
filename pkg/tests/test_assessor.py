"""
Tests for the IoU assessor network, its training step and the crop pool.
"""

import json
import tempfile
import unittest
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from textrl.assessor import (
    Assessor,
    AssessorNetwork,
    CropPool,
    crops_to_tensor,
    estimate_reward,
    predict_batch,
    predict_iou,
    prepare_crop,
    train_batch,
)
from textrl.config import AssessorConfig, EnvConfig
from textrl.geometry import Box
from textrl.imaging import crop_rgba, save_png
from textrl.types import AssessorSample, CheckpointError, DatasetError

TINY = AssessorConfig(input_size=16, widths=(8, 8), groups=4, lr=1e-3, batch_size=4)


def tiny_net(dtype=torch.float32) -> AssessorNetwork:
    torch.manual_seed(0)
    return AssessorNetwork.from_config(TINY).to(dtype)


def random_crops(n: int, seed: int = 0, size: int = 16) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    crops = []
    for _ in range(n):
        crop = rng.integers(0, 256, size=(size, size, 4), dtype=np.uint8)
        crop[..., 3] = 255
        crops.append(crop)
    return crops


def set_constant_output(net: AssessorNetwork, value: float):
    with torch.no_grad():
        net.fc.weight.zero_()
        net.fc.bias.fill_(value)


class TestNetwork(unittest.TestCase):
    def test_no_additive_bias_before_head(self):
        net = AssessorNetwork()
        convs = [m for m in net.modules() if isinstance(m, nn.Conv2d)]
        norms = [m for m in net.modules() if isinstance(m, nn.GroupNorm)]
        self.assertTrue(convs)
        self.assertTrue(norms)
        for conv in convs:
            self.assertIsNone(conv.bias)
        for norm in norms:
            self.assertIsNone(norm.weight)
            self.assertIsNone(norm.bias)

    def test_output_shape(self):
        net = tiny_net()
        out = net(torch.rand(3, 4, 16, 16))
        self.assertEqual(tuple(out.shape), (3,))

    def test_full_scale_forward(self):
        net = AssessorNetwork(input_size=64)
        out = net(torch.rand(2, 4, 64, 64))
        self.assertEqual(tuple(out.shape), (2,))

    def test_unknown_head(self):
        with self.assertRaises(ValueError):
            AssessorNetwork(head="softmax")

    def test_sigmoid_head_in_range(self):
        torch.manual_seed(0)
        net = AssessorNetwork(widths=(8,), groups=4, input_size=16, head="sigmoid")
        out = net(torch.rand(4, 4, 16, 16))
        self.assertTrue(((out > 0) & (out < 1)).all())


class TestPrediction(unittest.TestCase):
    def test_clamped_low(self):
        net = tiny_net()
        set_constant_output(net, -0.2)
        self.assertEqual(predict_iou(net, random_crops(1)[0]), 0.0)

    def test_clamped_high(self):
        net = tiny_net()
        set_constant_output(net, 1.3)
        self.assertEqual(predict_iou(net, random_crops(1)[0]), 1.0)

    def test_batch_matches_single(self):
        net = tiny_net()
        net.eval()
        crops = random_crops(3)
        batch = predict_batch(net, crops)
        for crop, value in zip(crops, batch):
            self.assertAlmostEqual(predict_iou(net, crop), float(value), places=5)

    def test_rgb_rejected(self):
        with self.assertRaises(ValueError):
            prepare_crop(np.zeros((16, 16, 3), dtype=np.uint8), 16)

    def test_resized_to_input(self):
        crop = np.zeros((30, 50, 4), dtype=np.uint8)
        crop[:, 25:, 3] = 255
        out = prepare_crop(crop, 16)
        self.assertEqual(out.shape, (16, 16, 4))
        self.assertEqual(set(np.unique(out[..., 3]).tolist()), {0, 255})

    def test_estimate_reward_uses_estimate(self):
        net = tiny_net()
        set_constant_output(net, 1.0)
        canvas = np.full((40, 40, 3), 200, dtype=np.uint8)
        reward = estimate_reward(net, canvas, Box(5, 5, 30, 20), 5, EnvConfig())
        self.assertAlmostEqual(reward, 69.85, delta=1e-9)


class TestCropAlpha(unittest.TestCase):
    def test_partially_outside(self):
        canvas = np.full((20, 20, 3), 255, dtype=np.uint8)
        crop = crop_rgba(canvas, Box(-10, 0, 10, 20), 20)
        self.assertEqual(crop.shape, (20, 20, 4))
        self.assertTrue((crop[:, :10, 3] == 0).all())
        self.assertTrue((crop[:, 10:, 3] == 255).all())
        self.assertTrue((crop[:, :10, :3] == 0).all())


class TestTraining(unittest.TestCase):
    def test_empty_batch(self):
        net = tiny_net()
        with self.assertRaises(ValueError):
            train_batch(net, torch.optim.Adam(net.parameters()), [])

    def test_fixed_point_has_zero_loss(self):
        net = tiny_net()
        set_constant_output(net, 0.4)
        samples = [AssessorSample(crop=c, label=0.4) for c in random_crops(4)]
        loss = train_batch(net, torch.optim.Adam(net.parameters(), lr=1e-3), samples)
        self.assertAlmostEqual(loss, 0.0, places=10)

    def test_overfits_small_batch(self):
        net = tiny_net()
        optimizer = torch.optim.Adam(net.parameters(), lr=1e-3)
        labels = np.random.default_rng(1).random(8)
        samples = [AssessorSample(crop=c, label=float(y))
                   for c, y in zip(random_crops(8, seed=2), labels)]
        first = train_batch(net, optimizer, samples)
        for _ in range(200):
            last = train_batch(net, optimizer, samples)
        self.assertLess(last, 0.5 * first)

    def test_finite_difference_gradient(self):
        net = tiny_net(torch.float64)
        crops = random_crops(4, seed=3)
        x = crops_to_tensor(crops, net)
        y = torch.tensor([0.1, 0.4, 0.7, 0.9], dtype=torch.float64)

        def loss_fn() -> torch.Tensor:
            return F.mse_loss(net(x), y)

        params = [
            net.fc.weight,
            net.blocks[0].body[0][0].weight,
            net.blocks[1].skip.weight,
        ]
        for param in params:
            net.zero_grad()
            loss_fn().backward()
            idx = (0,) * param.dim()
            analytic = param.grad[idx].item()
            h = 1e-6
            with torch.no_grad():
                param[idx] += h
                plus = loss_fn().item()
                param[idx] -= 2 * h
                minus = loss_fn().item()
                param[idx] += h
            numeric = (plus - minus) / (2 * h)
            scale = max(abs(analytic), abs(numeric), 1e-8)
            self.assertLess(abs(analytic - numeric) / scale, 1e-3)


class TestCropPool(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)
        labels = [0.0, 0.25, 0.5, 0.75, 1.0]
        with open(self.root / "crops.jsonl", "w") as f:
            for i, (crop, label) in enumerate(zip(random_crops(5, size=20), labels)):
                save_png(crop, self.root / "crops" / f"{i:04d}.png")
                f.write(json.dumps({"crop": f"crops/{i:04d}.png", "iou": label,
                                    "word_box": [0, 0, 10, 10], "scene_id": i}) + "\n")

    def tearDown(self):
        self.tmp.cleanup()

    def test_load(self):
        pool = CropPool.from_manifest(self.root / "crops.jsonl")
        self.assertEqual(len(pool), 5)
        sample = pool.load(2)
        self.assertEqual(sample.crop.shape, (20, 20, 4))
        self.assertEqual(sample.label, 0.5)

    def test_batches_cover_pool_once(self):
        pool = CropPool.from_manifest(self.root / "crops.jsonl")
        batches = list(pool.batches(2, np.random.default_rng(0)))
        self.assertEqual([len(b) for b in batches], [2, 2, 1])
        labels = sorted(s.label for b in batches for s in b)
        self.assertEqual(labels, [0.0, 0.25, 0.5, 0.75, 1.0])

    def test_missing_manifest(self):
        with self.assertRaises(DatasetError):
            CropPool.from_manifest(self.root / "nope.jsonl")

    def test_label_out_of_range(self):
        path = self.root / "bad.jsonl"
        path.write_text('{"crop": "crops/0000.png", "iou": 0.5}\n'
                        '{"crop": "crops/0001.png", "iou": 1.5}\n')
        with self.assertRaises(DatasetError) as ctx:
            CropPool.from_manifest(path)
        self.assertIn(":2:", str(ctx.exception))

    def test_missing_crop_file(self):
        path = self.root / "dangling.jsonl"
        path.write_text('{"crop": "crops/9999.png", "iou": 0.5}\n')
        pool = CropPool.from_manifest(path)
        with self.assertRaises(DatasetError):
            pool.load(0)

    def test_pretrain_and_score(self):
        pool = CropPool.from_manifest(self.root / "crops.jsonl")
        assessor = Assessor(TINY, pool=pool)
        losses = assessor.pretrain(2, np.random.default_rng(0))
        self.assertEqual(len(losses), 2)
        self.assertEqual(assessor.updates, 4)
        stats = assessor.score(pool)
        self.assertEqual(stats["n"], 5.0)
        self.assertGreaterEqual(stats["mae"], 0.0)

    def test_train_from_pool_without_pool(self):
        self.assertIsNone(Assessor(TINY).train_from_pool(np.random.default_rng(0)))


class TestAssessorCheckpoint(unittest.TestCase):
    def test_roundtrip(self):
        torch.manual_seed(0)
        assessor = Assessor(TINY)
        samples = [AssessorSample(crop=c, label=0.3) for c in random_crops(4)]
        assessor.train_on(samples)
        canvas = np.random.default_rng(0).integers(0, 256, (40, 60, 3), dtype=np.uint8)
        box = Box(5, 5, 40, 30)
        with tempfile.TemporaryDirectory() as tmp:
            path = assessor.save(Path(tmp) / "assessor.pt")
            loaded = Assessor.load(path)
        self.assertEqual(loaded.updates, 1)
        self.assertEqual(loaded.cfg.widths, (8, 8))
        self.assertAlmostEqual(loaded.quality(canvas, box), assessor.quality(canvas, box), places=6)

    def test_agent_archive_rejected(self):
        from textrl.agent import DQNAgent
        from textrl.config import AgentConfig

        agent = DQNAgent(EnvConfig(view_size=32, frame_stack=2, history_len=3),
                         AgentConfig(extractor="tiny", embedding_dim=8, hidden_units=8,
                                     batch_size=2, buffer_capacity=4))
        with tempfile.TemporaryDirectory() as tmp:
            path = agent.save(Path(tmp) / "agent.pt")
            with self.assertRaises(CheckpointError):
                Assessor.load(path)


if __name__ == "__main__":
    unittest.main()
