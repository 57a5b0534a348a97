"""
textrl: scene-text detection by reinforcement learning.

A DQN agent finds words by moving and reshaping a box over the image,
rewarded by how tightly its final box covers a word (TIoU). A synthetic
data-trained assessor can stand in for the ground truth, so the agent
can also learn from unannotated images.

Quick start::

    from textrl import TextDetector

    detector = TextDetector.from_checkpoint("runs/textrl/agent_final.pt")
    boxes = detector.detect("street.jpg")
    detector.annotate("street.jpg", boxes).save("street_boxes.png")
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .agent import DQNAgent, QNetwork, ReplayBuffer, epsilon_at, select_action, td_targets
from .assessor import Assessor, AssessorNetwork, CropPool, estimate_reward, predict_iou
from .config import (
    AgentConfig,
    AssessorConfig,
    EnvConfig,
    EvalConfig,
    RunConfig,
    load_run_config,
)
from .datasets import DetectionDataset, load_manifest, parse_icdar_gt, subsample, write_manifest
from .env import TextSearchEnv, apply_action, trigger_reward
from .evaluation import (
    AgentPolicy,
    EvalReport,
    ScriptedOraclePolicy,
    detect_boxes,
    evaluate,
    match_detections,
    prf,
)
from .exporters import BaseExporter, ConsoleExporter, JsonlExporter, MultiExporter
from .geometry import Box, iou, tiou, upscale_box
from .imaging import draw_boxes, load_rgb
from .metrics import MetricsEngine, TrainingSnapshot
from .synthgen import GenConfig, generate_dataset, generate_scenes, render_scene, sample_crop
from .tracker import RunTracker
from .training import Trainer, train
from .types import (
    Action,
    CheckpointError,
    ConfigError,
    DatasetError,
    EpisodeRecord,
    EvalRecord,
    TextRLError,
)


class TextDetector:
    """
    Trained agent wrapped for inference: greedy searches with IoR masking
    until the image is done, triggered boxes returned in search order.
    """

    def __init__(self, agent: DQNAgent, assessor: Assessor | None = None):
        self.agent = agent
        self.assessor = assessor
        self.env = TextSearchEnv(agent.env_cfg, reward_source=assessor)
        self.policy = AgentPolicy(agent.q_network)

    @classmethod
    def from_checkpoint(
        cls,
        path: str | Path,
        assessor_checkpoint: str | Path | None = None,
        device: str = "cpu",
    ) -> TextDetector:
        agent = DQNAgent.load(path, device=device)
        assessor = None
        if assessor_checkpoint:
            assessor = Assessor.load(assessor_checkpoint, device=device)
        return cls(agent, assessor)

    def detect(self, image: np.ndarray | str | Path) -> list[Box]:
        if isinstance(image, (str, Path)):
            return detect_boxes(self.env, self.policy, load_rgb(image), image_id=Path(image).name)
        return detect_boxes(self.env, self.policy, image)

    def annotate(self, image: np.ndarray | str | Path, boxes: list[Box]) -> Image.Image:
        canvas = load_rgb(image) if isinstance(image, (str, Path)) else image
        return draw_boxes(canvas, boxes)


__all__ = [
    "TextDetector",
    # Geometry & environment
    "Box",
    "iou",
    "tiou",
    "upscale_box",
    "Action",
    "TextSearchEnv",
    "apply_action",
    "trigger_reward",
    # Learners
    "QNetwork",
    "DQNAgent",
    "ReplayBuffer",
    "epsilon_at",
    "select_action",
    "td_targets",
    "AssessorNetwork",
    "Assessor",
    "CropPool",
    "predict_iou",
    "estimate_reward",
    # Data
    "GenConfig",
    "render_scene",
    "sample_crop",
    "generate_dataset",
    "generate_scenes",
    "DetectionDataset",
    "load_manifest",
    "write_manifest",
    "parse_icdar_gt",
    "subsample",
    # Evaluation
    "AgentPolicy",
    "ScriptedOraclePolicy",
    "EvalReport",
    "match_detections",
    "prf",
    "evaluate",
    "detect_boxes",
    # Config & training
    "EnvConfig",
    "AgentConfig",
    "AssessorConfig",
    "EvalConfig",
    "RunConfig",
    "load_run_config",
    "Trainer",
    "train",
    # Run observability
    "RunTracker",
    "MetricsEngine",
    "TrainingSnapshot",
    "EpisodeRecord",
    "EvalRecord",
    "BaseExporter",
    "JsonlExporter",
    "ConsoleExporter",
    "MultiExporter",
    # Errors
    "TextRLError",
    "ConfigError",
    "DatasetError",
    "CheckpointError",
]

__version__ = "0.1.0"
