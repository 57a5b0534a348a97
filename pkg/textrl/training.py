"""
Training loop behind ``textrl train``.

supervised: trigger reward is the TIoU against upscaled ground truth.
weak:       trigger reward comes from the assessor; the assessor trains
            one batch per finished search.
semi:       searches alternate between a labeled and an unlabeled
            environment according to ``semi_ratio``.

An episode is one word search. Each source keeps its own environment, so
an image's remaining searches continue when that source comes up next.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .agent import DQNAgent, epsilon_at
from .assessor import Assessor, CropPool
from .config import RunConfig, save_run_config
from .datasets import DetectionDataset, EpisodeMixer, cycle_entries, load_manifest
from .env import TextSearchEnv
from .evaluation import AgentPolicy, evaluate
from .exporters import BaseExporter, JsonlExporter
from .metrics import MetricsEngine
from .tracker import RunTracker
from .types import (
    EpisodeRecord,
    EvalRecord,
    Supervision,
    SupervisionMode,
    TrainingMode,
    Transition,
)

logger = logging.getLogger("textrl.training")

METRICS_LOG = "metrics.jsonl"
CONFIG_FILE = "config.json"
FINAL_CHECKPOINT = "agent_final.pt"
BEST_CHECKPOINT = "agent_best.pt"
ASSESSOR_CHECKPOINT = "assessor.pt"


def seed_everything(seed: int, num_threads: int = 1):
    torch.manual_seed(seed)
    torch.set_num_threads(num_threads)


@dataclass
class TrainResult:
    run_dir: Path
    checkpoint: Path
    metrics_log: Path
    global_step: int
    episodes: int
    last_eval: EvalRecord | None = None
    assessor_checkpoint: Path | None = None
    best_checkpoint: Path | None = None


class _Source:
    """One reward path: its dataset stream and its environment."""

    def __init__(self, tag: Supervision, dataset: DetectionDataset, env: TextSearchEnv,
                 rng: np.random.Generator):
        self.tag = tag
        self.mode = (SupervisionMode.SUPERVISED if tag is Supervision.LABELED
                     else SupervisionMode.WEAK)
        self.env = env
        self._entries = cycle_entries(dataset.entries, rng)
        self._started = False

    def begin_search(self) -> dict[str, np.ndarray]:
        """Observation for the next search, loading a new image when needed."""
        if self._started and not self.env.image_done:
            obs, _ = self.env.reset()
            return obs
        entry = next(self._entries)
        obs, _ = self.env.reset(options={
            "image": entry.load_image(),
            "annotations": list(entry.boxes),
            "mode": self.mode,
            "image_id": entry.image_id,
        })
        self._started = True
        return obs


class Trainer:
    """
    Usage::

        cfg = load_run_config("run.json", profile="desk")
        result = Trainer(cfg).run()
    """

    def __init__(self, cfg: RunConfig, exporters: list[BaseExporter] | None = None):
        self.cfg = cfg.validate()
        self.mode = cfg.training_mode
        self.run_dir = Path(cfg.checkpoint_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        save_run_config(cfg, self.run_dir / CONFIG_FILE)

        seed_everything(cfg.seed, cfg.num_threads)
        self.rng = np.random.default_rng(cfg.seed)

        self.metrics_log = self.run_dir / METRICS_LOG
        self.tracker = RunTracker(
            run_id=f"{self.mode.value}-seed{cfg.seed}",
            exporters=[JsonlExporter(self.metrics_log, truncate=True), *(exporters or [])],
        )
        self._best_eval: EvalRecord | None = None
        self.tracker.add_listener(self._keep_best)
        self.metrics = MetricsEngine()

        self.assessor = self._build_assessor() if self.mode is not TrainingMode.SUPERVISED else None
        self.agent = DQNAgent(cfg.env, cfg.agent, device=cfg.device)
        self.sources = self._build_sources()
        self.mixer = EpisodeMixer(cfg.semi_ratio) if self.mode is TrainingMode.SEMI else None
        self.eval_dataset = load_manifest(cfg.eval_manifest) if cfg.eval_manifest else None

    # ── Setup ──────────────────────────────────────────────────────────

    def _build_assessor(self) -> Assessor:
        a_cfg = self.cfg.assessor
        pool = CropPool.from_manifest(a_cfg.crop_manifest) if a_cfg.crop_manifest else None
        if a_cfg.checkpoint:
            assessor = Assessor.load(a_cfg.checkpoint, pool=pool, device=self.cfg.device)
        else:
            assessor = Assessor(a_cfg, pool=pool, device=self.cfg.device)
        if a_cfg.pretrain_epochs:
            assessor.pretrain(a_cfg.pretrain_epochs, self.rng)
        return assessor

    def _build_sources(self) -> dict[Supervision, _Source]:
        sources = {}
        if self.mode in (TrainingMode.SUPERVISED, TrainingMode.SEMI):
            labeled = load_manifest(self.cfg.labeled_manifest)
            sources[Supervision.LABELED] = _Source(
                Supervision.LABELED, labeled, TextSearchEnv(self.cfg.env), self.rng,
            )
        if self.mode in (TrainingMode.WEAK, TrainingMode.SEMI):
            unlabeled = load_manifest(self.cfg.unlabeled_manifest).as_unlabeled()
            sources[Supervision.UNLABELED] = _Source(
                Supervision.UNLABELED, unlabeled,
                TextSearchEnv(self.cfg.env, reward_source=self.assessor), self.rng,
            )
        return sources

    def _next_source(self) -> _Source:
        if self.mixer is not None:
            return self.sources[next(self.mixer)]
        return next(iter(self.sources.values()))

    # ── Loop ───────────────────────────────────────────────────────────

    def run(self) -> TrainResult:
        cfg = self.cfg
        agent = self.agent
        logger.info(
            f"Training {self.mode.value} for {cfg.total_env_steps} env steps into {self.run_dir}"
        )

        while agent.global_step < cfg.total_env_steps:
            if not self._run_episode(self._next_source()):
                break

        checkpoint = agent.save(self.run_dir / FINAL_CHECKPOINT, run_config=cfg.to_dict())
        assessor_ckpt = None
        if self.assessor is not None:
            assessor_ckpt = self.assessor.save(self.run_dir / ASSESSOR_CHECKPOINT)
        self.tracker.publish_snapshot(self.metrics.compute(
            self.tracker.recent(1000), evals=self.tracker.evals,
        ))
        self.tracker.close()
        logger.info(f"Finished after {agent.global_step} steps, {self.tracker.count} episodes")
        return TrainResult(
            run_dir=self.run_dir,
            checkpoint=checkpoint,
            metrics_log=self.metrics_log,
            global_step=agent.global_step,
            episodes=self.tracker.count,
            last_eval=self.tracker.last_eval,
            assessor_checkpoint=assessor_ckpt,
            best_checkpoint=self.run_dir / BEST_CHECKPOINT if self._best_eval is not None else None,
        )

    def _run_episode(self, source: _Source) -> bool:
        """One word search. Returns False when the step budget ran out mid-search."""
        cfg, agent, rng = self.cfg, self.agent, self.rng
        obs = source.begin_search()
        losses: list[float] = []

        while True:
            if agent.global_step >= cfg.total_env_steps:
                return False
            eps = epsilon_at(agent.global_step, cfg.agent)
            action = agent.act(obs, eps, rng)
            next_obs, reward, terminated, truncated, info = source.env.step(action)
            done = terminated or truncated
            agent.remember(Transition(obs, action, reward, next_obs, terminal=done))
            agent.global_step += 1
            if agent.ready_to_train():
                losses.append(agent.learn(rng))
            self._periodic(agent.global_step)
            obs = next_obs
            if done:
                break

        assessor_loss = None
        if self.assessor is not None:
            assessor_loss = self.assessor.train_from_pool(rng)

        detection = info["detection"]
        self.tracker.record_episode(
            global_step=agent.global_step,
            source=source.mode.value,
            image=source.env.image_id,
            steps=info["steps"],
            reward=float(reward),
            quality=info["quality"],
            truncated=bool(truncated),
            epsilon=eps,
            loss=float(np.mean(losses)) if losses else None,
            assessor_loss=assessor_loss,
            detection=detection.to_list() if detection is not None else None,
        )
        return True

    def _periodic(self, step: int):
        cfg = self.cfg
        if step % cfg.checkpoint_every == 0:
            self.agent.save(self.run_dir / f"agent_{step:08d}.pt", run_config=cfg.to_dict())
            if self.assessor is not None:
                self.assessor.save(self.run_dir / ASSESSOR_CHECKPOINT)
        if self.eval_dataset is not None and step % cfg.eval_every == 0:
            self.evaluate_now(step)

    def evaluate_now(self, step: int) -> EvalRecord:
        report = evaluate(
            AgentPolicy(self.agent.q_network),
            self.eval_dataset,
            self.cfg.env,
            self.cfg.eval,
            checkpoint_id=f"step {step}",
            max_images=self.cfg.eval.max_images,
        )
        rec = self.tracker.record_eval(EvalRecord(
            global_step=step,
            precision=report.precision,
            recall=report.recall,
            f1=report.f1,
            mean_iou=report.mean_iou,
            mean_tiou=report.mean_tiou,
        ))
        self.tracker.publish_snapshot(self.metrics.compute(
            self.tracker.recent(1000), evals=self.tracker.evals,
        ))
        return rec

    def _keep_best(self, rec: EpisodeRecord | EvalRecord):
        """Tracker listener: save the agent whenever an evaluation beats the best F so far."""
        if not isinstance(rec, EvalRecord):
            return
        if self._best_eval is not None and rec.f1 <= self._best_eval.f1:
            return
        self._best_eval = rec
        self.agent.save(self.run_dir / BEST_CHECKPOINT, run_config=self.cfg.to_dict())
        logger.info(f"[CKPT] best F={rec.f1:.4f} at step {rec.global_step}")


def train(cfg: RunConfig, exporters: list[BaseExporter] | None = None) -> TrainResult:
    return Trainer(cfg, exporters=exporters).run()
