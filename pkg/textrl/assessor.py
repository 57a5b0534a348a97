"""
Assessor: an IoU-regression CNN that scores how well an RGBA crop covers
a word. In weak and semi-supervised training its prediction replaces the
ground-truth TIoU in the trigger reward.

The network carries no additive bias in any conv or normalization layer.
Each conv is followed by ReLU and a non-affine GroupNorm. Blocks 1-3 are
conv3x3 -> conv4x4 (stride 2) -> conv4x4; block 4 is two conv3x3. Skip
connections are identity, or a 1x1 strided projection when the shape
changes. Global average pooling feeds a single linear output unit.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image
from torch import nn

from .checkpoints import load_weights, read_archive, resolve_device, write_archive
from .config import AssessorConfig, EnvConfig
from .env import trigger_reward
from .geometry import Box
from .imaging import crop_rgba
from .types import AssessorSample, DatasetError

logger = logging.getLogger("textrl.assessor")

CHECKPOINT_KIND = "textrl-assessor"


# ── Network ────────────────────────────────────────────────────────────


def _conv(in_ch: int, out_ch: int, kernel: int, stride: int, groups: int) -> nn.Sequential:
    padding: int | str = "same" if stride == 1 else (kernel - 1) // 2
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, kernel, stride=stride, padding=padding, bias=False),
        nn.ReLU(),
        nn.GroupNorm(groups, out_ch, affine=False),
    )


class ResidualBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, groups: int, downsample: bool):
        super().__init__()
        if downsample:
            self.body = nn.Sequential(
                _conv(in_ch, out_ch, 3, 1, groups),
                _conv(out_ch, out_ch, 4, 2, groups),
                _conv(out_ch, out_ch, 4, 1, groups),
            )
        else:
            self.body = nn.Sequential(
                _conv(in_ch, out_ch, 3, 1, groups),
                _conv(out_ch, out_ch, 3, 1, groups),
            )
        if downsample or in_ch != out_ch:
            self.skip: nn.Module = nn.Conv2d(
                in_ch, out_ch, 1, stride=2 if downsample else 1, bias=False
            )
        else:
            self.skip = nn.Identity()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = self.body(x)
        skip = self.skip(x)
        # odd inputs: the strided 1x1 keeps one extra row/column
        return out + skip[..., :out.shape[-2], :out.shape[-1]]


class AssessorNetwork(nn.Module):
    """RGBA crop (N, 4, S, S) in [0, 1] -> raw IoU regression (N,)."""

    def __init__(
        self,
        widths: Sequence[int] = (64, 64, 128, 256),
        groups: int = 8,
        input_size: int = 224,
        head: str = "linear",
    ):
        super().__init__()
        if head not in ("linear", "sigmoid"):
            raise ValueError(f"head must be 'linear' or 'sigmoid', got {head!r}")
        blocks = []
        in_ch = 4
        for i, width in enumerate(widths):
            blocks.append(ResidualBlock(in_ch, width, groups, downsample=i < 3))
            in_ch = width
        self.blocks = nn.Sequential(*blocks)
        self.fc = nn.Linear(in_ch, 1)
        self.input_size = input_size
        self.head = head

    @classmethod
    def from_config(cls, cfg: AssessorConfig) -> AssessorNetwork:
        return cls(widths=cfg.widths, groups=cfg.groups, input_size=cfg.input_size, head=cfg.head)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        features = self.blocks(x).mean(dim=(2, 3))
        out = self.fc(features).squeeze(1)
        if self.head == "sigmoid":
            out = torch.sigmoid(out)
        return out


# ── Crops ──────────────────────────────────────────────────────────────


def prepare_crop(crop: np.ndarray, size: int) -> np.ndarray:
    """Check an RGBA crop and resize it to ``size`` x ``size`` if needed."""
    if crop.ndim != 3 or crop.shape[2] != 4:
        raise ValueError(f"assessor crops must be H x W x 4 (RGBA), got shape {crop.shape}")
    if crop.shape[0] == size and crop.shape[1] == size:
        return crop
    rgb = Image.fromarray(np.ascontiguousarray(crop[..., :3])).resize(
        (size, size), Image.Resampling.BILINEAR
    )
    alpha = Image.fromarray(np.ascontiguousarray(crop[..., 3])).resize(
        (size, size), Image.Resampling.NEAREST
    )
    return np.dstack([np.asarray(rgb), np.asarray(alpha)])


def crops_to_tensor(
    crops: Sequence[np.ndarray], net: AssessorNetwork
) -> torch.Tensor:
    param = next(net.parameters())
    batch = np.stack([prepare_crop(c, net.input_size) for c in crops])
    tensor = torch.as_tensor(batch, device=param.device).permute(0, 3, 1, 2)
    return tensor.to(param.dtype) / 255.0


# ── Operations ─────────────────────────────────────────────────────────


def predict_iou(net: AssessorNetwork, crop: np.ndarray) -> float:
    """Estimated IoU of an RGBA crop, clamped to [0, 1]."""
    with torch.no_grad():
        raw = net(crops_to_tensor([crop], net))
    return float(raw.clamp(0.0, 1.0).item())


def predict_batch(net: AssessorNetwork, crops: Sequence[np.ndarray]) -> np.ndarray:
    with torch.no_grad():
        raw = net(crops_to_tensor(crops, net))
    return raw.clamp(0.0, 1.0).cpu().numpy()


def train_batch(
    net: AssessorNetwork,
    optimizer: torch.optim.Optimizer,
    samples: Sequence[AssessorSample],
) -> float:
    """One Adam step on mean squared error; returns the batch loss."""
    if not samples:
        raise ValueError("train_batch needs at least one sample")
    param = next(net.parameters())
    x = crops_to_tensor([s.crop for s in samples], net)
    y = torch.as_tensor([s.label for s in samples], dtype=param.dtype, device=param.device)
    net.train()
    loss = F.mse_loss(net(x), y)
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    return float(loss.item())


def estimate_reward(
    net: AssessorNetwork,
    canvas: np.ndarray,
    detection: Box,
    steps: int,
    cfg: EnvConfig,
) -> float:
    """Trigger reward with the assessor's IoU estimate in place of the TIoU."""
    crop = crop_rgba(canvas, detection, net.input_size)
    return trigger_reward(predict_iou(net, crop), steps, cfg)


# ── Crop pool ──────────────────────────────────────────────────────────


class CropPool:
    """
    Synthetic assessor samples listed in a crop manifest.

    Each manifest line is ``{"crop": relpath, "iou": float, "word_box":
    [...], "scene_id": int}``. Crops are read from disk on demand.
    """

    def __init__(self, root: Path, records: list[dict]):
        self.root = root
        self.records = records

    @classmethod
    def from_manifest(cls, path: str | Path) -> CropPool:
        p = Path(path)
        if not p.exists():
            raise DatasetError(f"crop manifest not found: {p}")
        records = []
        with open(p) as f:
            for lineno, line in enumerate(f, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    rec = json.loads(line)
                    label = float(rec["iou"])
                    crop = str(rec["crop"])
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                    raise DatasetError(f"{p}:{lineno}: malformed crop record: {e}")
                if not 0.0 <= label <= 1.0:
                    raise DatasetError(f"{p}:{lineno}: iou label {label} outside [0, 1]")
                records.append({**rec, "crop": crop, "iou": label})
        logger.info(f"Loaded {len(records)} assessor crops from {p}")
        return cls(p.parent, records)

    def __len__(self) -> int:
        return len(self.records)

    def load(self, index: int) -> AssessorSample:
        rec = self.records[index]
        path = self.root / rec["crop"]
        try:
            with Image.open(path) as img:
                crop = np.array(img.convert("RGBA"), dtype=np.uint8)
        except FileNotFoundError:
            raise DatasetError(f"missing crop image: {path}")
        return AssessorSample(crop=crop, label=rec["iou"])

    def sample(self, n: int, rng: np.random.Generator) -> list[AssessorSample]:
        if not self.records:
            raise RuntimeError("crop pool is empty")
        return [self.load(int(i)) for i in rng.integers(0, len(self.records), size=n)]

    def batches(self, batch_size: int, rng: np.random.Generator) -> Iterator[list[AssessorSample]]:
        """One shuffled pass over the pool."""
        order = rng.permutation(len(self.records))
        for start in range(0, len(order), batch_size):
            yield [self.load(int(i)) for i in order[start:start + batch_size]]


# ── Assessor ───────────────────────────────────────────────────────────


class Assessor:
    """
    Network, optimizer and (optionally) the crop pool it trains on.

    Also the weak-mode reward source of ``TextSearchEnv``: ``quality``
    returns the clamped IoU estimate of a detection on the episode canvas.
    """

    def __init__(self, cfg: AssessorConfig, pool: CropPool | None = None, device: str = "cpu"):
        self.cfg = cfg
        self.pool = pool
        self.device = resolve_device(device)
        self.net = AssessorNetwork.from_config(cfg).to(self.device)
        self.optimizer = torch.optim.Adam(self.net.parameters(), lr=cfg.lr)
        self.updates = 0

    def quality(self, canvas: np.ndarray, detection: Box) -> float:
        self.net.eval()
        return predict_iou(self.net, crop_rgba(canvas, detection, self.net.input_size))

    def train_on(self, samples: Sequence[AssessorSample]) -> float:
        loss = train_batch(self.net, self.optimizer, samples)
        self.updates += 1
        return loss

    def train_from_pool(self, rng: np.random.Generator) -> float | None:
        """One batch drawn uniformly from the pool; None without a pool."""
        if self.pool is None or not len(self.pool):
            return None
        return self.train_on(self.pool.sample(self.cfg.batch_size, rng))

    def pretrain(self, epochs: int, rng: np.random.Generator) -> list[float]:
        if self.pool is None:
            raise RuntimeError("pretraining needs a crop pool")
        epoch_losses = []
        for epoch in range(epochs):
            losses = [self.train_on(b) for b in self.pool.batches(self.cfg.batch_size, rng)]
            epoch_losses.append(float(np.mean(losses)) if losses else 0.0)
            logger.info(f"Assessor pretraining epoch {epoch + 1}/{epochs}: "
                        f"loss={epoch_losses[-1]:.4f}")
        return epoch_losses

    def score(self, pool: CropPool, batch_size: int = 64) -> dict[str, float]:
        """Pearson correlation and MAE of predictions against pool labels."""
        self.net.eval()
        preds, labels = [], []
        for start in range(0, len(pool), batch_size):
            samples = [pool.load(i) for i in range(start, min(start + batch_size, len(pool)))]
            preds.extend(predict_batch(self.net, [s.crop for s in samples]).tolist())
            labels.extend(s.label for s in samples)
        p, y = np.asarray(preds), np.asarray(labels)
        pearson = float(np.corrcoef(p, y)[0, 1]) if len(p) > 1 and p.std() > 0 else 0.0
        return {"pearson": pearson, "mae": float(np.abs(p - y).mean()), "n": float(len(p))}

    # ── Checkpoints ────────────────────────────────────────────────────

    def save(self, path: str | Path) -> Path:
        cfg = asdict(self.cfg)
        cfg["widths"] = list(self.cfg.widths)
        return write_archive(path, CHECKPOINT_KIND, {
            "assessor_config": cfg,
            "network": self.net.state_dict(),
            "optimizer": self.optimizer.state_dict(),
            "updates": self.updates,
        })

    @classmethod
    def load(
        cls,
        path: str | Path,
        pool: CropPool | None = None,
        device: str = "cpu",
    ) -> Assessor:
        archive = read_archive(path, CHECKPOINT_KIND, device)
        assessor = cls(AssessorConfig(**archive["assessor_config"]), pool=pool, device=device)
        load_weights(assessor.net, archive["network"], path, "assessor")
        assessor.optimizer.load_state_dict(archive["optimizer"])
        assessor.updates = int(archive["updates"])
        logger.info(f"[CKPT] loaded assessor from {path} ({assessor.updates} updates)")
        return assessor
