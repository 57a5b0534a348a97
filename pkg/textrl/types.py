"""
Core data types for textrl.

These types are shared by the environment, the learners, the data
generators and the run tracker. Geometry lives in ``geometry.py``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import TYPE_CHECKING, Any

import numpy as np

if TYPE_CHECKING:
    from .geometry import Box


# ── Errors ─────────────────────────────────────────────────────────────


class TextRLError(Exception):
    """Base class for all textrl errors."""


class ConfigError(TextRLError, ValueError):
    """Invalid configuration or violated RunConfig invariant."""


class DatasetError(TextRLError, ValueError):
    """Malformed manifest / ground-truth file or missing image."""


class CheckpointError(TextRLError):
    """Checkpoint missing, of the wrong kind, or not matching the network."""

    def __init__(self, message: str, missing: bool = False):
        super().__init__(message)
        self.missing = missing


# ── Enums ──────────────────────────────────────────────────────────────


class Action(IntEnum):
    """The 9 box transformations. Index order is the Q-head order."""
    MOVE_LEFT = 0
    MOVE_RIGHT = 1
    MOVE_UP = 2
    MOVE_DOWN = 3
    BIGGER = 4
    SMALLER = 5
    FATTER = 6
    TALLER = 7
    TRIGGER = 8


NUM_ACTIONS = len(Action)


class SupervisionMode(str, Enum):
    """Where the trigger reward comes from."""
    SUPERVISED = "supervised"      # TIoU against ground truth
    WEAK = "weak"                  # assessor estimate


class TrainingMode(str, Enum):
    SUPERVISED = "supervised"
    WEAK = "weak"
    SEMI = "semi"


class Supervision(str, Enum):
    """Dataset entry tag."""
    LABELED = "labeled"
    UNLABELED = "unlabeled"


# ── Records ────────────────────────────────────────────────────────────


@dataclass
class Transition:
    """One replay-buffer element. ``next_observation`` is ignored when terminal."""
    observation: dict[str, np.ndarray]
    action: int
    reward: float
    next_observation: dict[str, np.ndarray]
    terminal: bool


@dataclass
class AssessorSample:
    """RGBA crop (H x W x 4, uint8, alpha 0 outside the image) and its IoU label."""
    crop: np.ndarray
    label: float
    box: Box | None = None                 # crop rectangle in scene coordinates
    word_box: Box | None = None            # word the label was measured against


@dataclass
class SceneRecord:
    """A rendered synthetic scene with tight word boxes."""
    image: np.ndarray                      # H x W x 3 uint8
    boxes: list[Box]
    words: list[str]
    metadata: dict[str, Any] = field(default_factory=dict)


@dataclass
class EpisodeRecord:
    """
    One finished word search, as written to the metrics log.

    Carries no wall-clock fields: two runs with the same seed and
    config produce identical logs.
    """
    index: int = 0
    run_id: str = ""
    global_step: int = 0
    source: str = SupervisionMode.SUPERVISED.value
    image: str = ""
    steps: int = 0
    reward: float = 0.0
    quality: float | None = None
    truncated: bool = False
    epsilon: float = 0.0
    loss: float | None = None
    assessor_loss: float | None = None
    detection: list[float] | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": "episode",
            "index": self.index,
            "run_id": self.run_id,
            "global_step": self.global_step,
            "source": self.source,
            "image": self.image,
            "steps": self.steps,
            "reward": self.reward,
            "quality": self.quality,
            "truncated": self.truncated,
            "epsilon": self.epsilon,
            "loss": self.loss,
            "assessor_loss": self.assessor_loss,
            "detection": self.detection,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> EpisodeRecord:
        return cls(
            index=d.get("index", 0),
            run_id=d.get("run_id", ""),
            global_step=d.get("global_step", 0),
            source=d.get("source", SupervisionMode.SUPERVISED.value),
            image=d.get("image", ""),
            steps=d.get("steps", 0),
            reward=d.get("reward", 0.0),
            quality=d.get("quality"),
            truncated=d.get("truncated", False),
            epsilon=d.get("epsilon", 0.0),
            loss=d.get("loss"),
            assessor_loss=d.get("assessor_loss"),
            detection=d.get("detection"),
        )


@dataclass
class EvalRecord:
    """Periodic evaluation result during training."""
    global_step: int = 0
    precision: float = 0.0
    recall: float = 0.0
    f1: float = 0.0
    mean_iou: float = 0.0
    mean_tiou: float = 0.0

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": "eval",
            "global_step": self.global_step,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "mean_iou": self.mean_iou,
            "mean_tiou": self.mean_tiou,
        }
