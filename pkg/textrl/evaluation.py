"""
Detection scoring and search policies.

Detections are matched to ground truth one-to-one, greedily by
descending IoU (ties broken by detection index, then GT index). Only
care boxes can be matched; a leftover detection overlapping a
do-not-care box at the threshold is ignored instead of counted as a
false positive. Detections come from triggered searches only.

This is a simplified IoU-threshold protocol, not ICDAR DetEval, so
absolute numbers are not comparable to DetEval results.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Any, Protocol, Sequence

import numpy as np

from .config import EnvConfig, EvalConfig
from .env import RewardSource, TextSearchEnv, apply_action
from .geometry import Box, center_distance, iou, tiou
from .imaging import draw_boxes, save_png
from .types import NUM_ACTIONS, Action, DatasetError, Supervision, SupervisionMode

if TYPE_CHECKING:
    from .agent import QNetwork
    from .datasets import DetectionDataset

logger = logging.getLogger("textrl.evaluation")


# ── Matching ───────────────────────────────────────────────────────────


@dataclass(frozen=True)
class Match:
    det_index: int
    gt_index: int
    iou: float
    tiou: float


@dataclass
class Matching:
    matches: list[Match] = field(default_factory=list)
    num_detections: int = 0
    num_care_gt: int = 0
    ignored: list[int] = field(default_factory=list)     # detections on do-not-care boxes

    @property
    def tp(self) -> int:
        return len(self.matches)

    @property
    def fp(self) -> int:
        return self.num_detections - self.tp - len(self.ignored)

    @property
    def fn(self) -> int:
        return self.num_care_gt - self.tp


def match_detections(
    dets: Sequence[Box],
    gts: Sequence[Box],
    threshold: float = 0.5,
    care: Sequence[bool] | None = None,
) -> Matching:
    if not 0 < threshold <= 1:
        raise ValueError(f"threshold must be in (0, 1], got {threshold}")
    care = list(care) if care is not None else [True] * len(gts)
    if len(care) != len(gts):
        raise ValueError("care flags must match the ground-truth boxes")

    candidates: list[tuple[float, int, int]] = []
    for di, d in enumerate(dets):
        for gi, g in enumerate(gts):
            if not care[gi]:
                continue
            score = iou(d, g)
            if score >= threshold:
                candidates.append((score, di, gi))
    candidates.sort(key=lambda c: (-c[0], c[1], c[2]))

    used_det: set[int] = set()
    used_gt: set[int] = set()
    matches = []
    for score, di, gi in candidates:
        if di in used_det or gi in used_gt:
            continue
        used_det.add(di)
        used_gt.add(gi)
        matches.append(Match(det_index=di, gt_index=gi, iou=score, tiou=tiou(dets[di], gts[gi])))

    ignored = [
        di for di, d in enumerate(dets)
        if di not in used_det
        and any(not care[gi] and iou(d, g) >= threshold for gi, g in enumerate(gts))
    ]
    return Matching(
        matches=matches,
        num_detections=len(dets),
        num_care_gt=sum(care),
        ignored=ignored,
    )


def prf_counts(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp > 0 else 1.0
    recall = tp / (tp + fn) if tp + fn > 0 else 1.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def prf(matching: Matching) -> tuple[float, float, float]:
    """Precision, recall, F1; an image with no detections and no care GT scores 1.0."""
    return prf_counts(matching.tp, matching.fp, matching.fn)


# ── Policies ───────────────────────────────────────────────────────────


class SearchPolicy(Protocol):
    uses_ground_truth: bool

    def act(self, obs: dict[str, np.ndarray], env: TextSearchEnv) -> int: ...


class AgentPolicy:
    """Greedy (epsilon = 0) Q-network policy."""
    uses_ground_truth = False

    def __init__(self, q_network: QNetwork):
        self.q_network = q_network.eval()

    def act(self, obs: dict[str, np.ndarray], env: TextSearchEnv) -> int:
        from .agent import q_values

        return int(np.argmax(q_values(self.q_network, obs)))


class ScriptedOraclePolicy:
    """
    Ground-truth-aware greedy policy: take the transform that most raises
    the TIoU against the remaining words, trigger when none does.

    Ties in TIoU go to the transform that brings the box center closest
    to the target word, so a box that already contains a word off its
    center slides toward it before shrinking.
    """
    uses_ground_truth = True

    def act(self, obs: dict[str, np.ndarray], env: TextSearchEnv) -> int:
        s = env.state
        if not s.remaining_gt:
            return int(Action.TRIGGER)

        current = s.current_box
        target = max(
            s.remaining_gt, key=lambda g: (tiou(current, g), -center_distance(current, g))
        )

        def score(box: Box) -> float:
            return max(tiou(box, g) for g in s.remaining_gt)

        best_action = int(Action.TRIGGER)
        best_score, best_dist = score(current), center_distance(current, target)
        for action in range(NUM_ACTIONS - 1):
            box = apply_action(current, action, env.cfg, s.image_dims)
            candidate, dist = score(box), center_distance(box, target)
            if candidate > best_score + 1e-12 or (
                abs(candidate - best_score) <= 1e-12 and dist < best_dist - 1e-9
            ):
                best_action, best_score, best_dist = action, candidate, dist
        return best_action


class ImmediateTriggerPolicy:
    """Triggers on the full-image box. A baseline for the harness."""
    uses_ground_truth = False

    def act(self, obs: dict[str, np.ndarray], env: TextSearchEnv) -> int:
        return int(Action.TRIGGER)


# ── Search driver ──────────────────────────────────────────────────────


@dataclass
class SearchResult:
    detection: Box | None                  # None for truncated searches
    box: Box                               # final box, triggered or not
    steps: int
    reward: float
    quality: float | None

    @property
    def triggered(self) -> bool:
        return self.detection is not None


def run_searches(
    env: TextSearchEnv,
    policy: SearchPolicy,
    image: np.ndarray,
    annotations: Sequence[Box] = (),
    image_id: str = "",
) -> list[SearchResult]:
    """
    All word searches on one image in inference mode, IoR-masking each
    finished search, until the environment reports the image done.
    """
    mode = SupervisionMode.SUPERVISED if policy.uses_ground_truth else SupervisionMode.WEAK
    obs, _ = env.reset(options={
        "image": image,
        "annotations": list(annotations) if policy.uses_ground_truth else [],
        "mode": mode,
        "inference": True,
        "image_id": image_id,
    })
    results = []
    while True:
        while True:
            obs, reward, terminated, truncated, info = env.step(policy.act(obs, env))
            if terminated or truncated:
                break
        results.append(SearchResult(
            detection=info["detection"],
            box=info["box"],
            steps=info["steps"],
            reward=reward,
            quality=info["quality"],
        ))
        if env.image_done:
            return results
        obs, _ = env.reset()


def detect_boxes(
    env: TextSearchEnv, policy: SearchPolicy, image: np.ndarray, image_id: str = ""
) -> list[Box]:
    return [r.detection for r in run_searches(env, policy, image, image_id=image_id)
            if r.detection is not None]


# ── Reports ────────────────────────────────────────────────────────────


@dataclass
class ImageResult:
    image: str
    detections: list[Box]
    gt: list[Box]
    matching: Matching
    truncated_searches: int = 0
    assessor_scores: list[float] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "image": self.image,
            "detections": [d.to_list() for d in self.detections],
            "matches": [
                {"det": m.det_index, "gt": m.gt_index, "iou": m.iou, "tiou": m.tiou}
                for m in self.matching.matches
            ],
            "tp": self.matching.tp,
            "fp": self.matching.fp,
            "fn": self.matching.fn,
            "ignored": len(self.matching.ignored),
            "truncated_searches": self.truncated_searches,
        }


@dataclass
class EvalReport:
    precision: float = 1.0
    recall: float = 1.0
    f1: float = 1.0
    mean_iou: float = 0.0
    mean_tiou: float = 0.0
    tp: int = 0
    fp: int = 0
    fn: int = 0
    ignored: int = 0
    truncated_searches: int = 0
    mean_assessor_score: float | None = None
    threshold: float = 0.5
    dataset: str = ""
    checkpoint: str = ""
    policy: str = ""
    images: list[ImageResult] = field(default_factory=list)

    @classmethod
    def from_images(cls, images: list[ImageResult], **echo) -> EvalReport:
        tp = sum(r.matching.tp for r in images)
        fp = sum(r.matching.fp for r in images)
        fn = sum(r.matching.fn for r in images)
        matched = [m for r in images for m in r.matching.matches]
        scores = [s for r in images for s in r.assessor_scores]
        precision, recall, f1 = prf_counts(tp, fp, fn)
        return cls(
            precision=precision,
            recall=recall,
            f1=f1,
            mean_iou=float(np.mean([m.iou for m in matched])) if matched else 0.0,
            mean_tiou=float(np.mean([m.tiou for m in matched])) if matched else 0.0,
            tp=tp,
            fp=fp,
            fn=fn,
            ignored=sum(len(r.matching.ignored) for r in images),
            truncated_searches=sum(r.truncated_searches for r in images),
            mean_assessor_score=float(np.mean(scores)) if scores else None,
            images=images,
            **echo,
        )

    def summary(self) -> dict[str, Any]:
        return {
            "precision": round(self.precision, 4),
            "recall": round(self.recall, 4),
            "f1": round(self.f1, 4),
            "mean_iou": round(self.mean_iou, 4),
            "mean_tiou": round(self.mean_tiou, 4),
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "ignored": self.ignored,
            "truncated_searches": self.truncated_searches,
            "mean_assessor_score": (
                round(self.mean_assessor_score, 4)
                if self.mean_assessor_score is not None
                else None
            ),
        }

    def to_dict(self) -> dict[str, Any]:
        return {
            **self.summary(),
            "protocol": f"one-to-one greedy IoU >= {self.threshold}; "
                        "truncated searches produce no detection",
            "threshold": self.threshold,
            "dataset": self.dataset,
            "checkpoint": self.checkpoint,
            "policy": self.policy,
            "num_images": len(self.images),
            "images": [r.to_dict() for r in self.images],
        }

    def to_table(self) -> str:
        rows = [
            ("dataset", self.dataset),
            ("checkpoint", self.checkpoint or "-"),
            ("policy", self.policy),
            ("images", str(len(self.images))),
            ("IoU threshold", f"{self.threshold:g}"),
            ("precision", f"{self.precision:.4f}"),
            ("recall", f"{self.recall:.4f}"),
            ("F1", f"{self.f1:.4f}"),
            ("mean IoU", f"{self.mean_iou:.4f}"),
            ("mean TIoU", f"{self.mean_tiou:.4f}"),
            ("TP / FP / FN", f"{self.tp} / {self.fp} / {self.fn}"),
            ("ignored (do-not-care)", str(self.ignored)),
            ("truncated searches", str(self.truncated_searches)),
        ]
        if self.mean_assessor_score is not None:
            rows.append(("mean assessor score", f"{self.mean_assessor_score:.4f}"))
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows) + "\n"

    def write(self, out_dir: str | Path) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        json_path, txt_path = out / "report.json", out / "report.txt"
        with open(json_path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)
            f.write("\n")
        txt_path.write_text(self.to_table())
        return json_path, txt_path


def evaluate(
    policy: SearchPolicy,
    dataset: DetectionDataset,
    env_cfg: EnvConfig,
    eval_cfg: EvalConfig | None = None,
    assessor: RewardSource | None = None,
    annotate_dir: str | Path | None = None,
    checkpoint_id: str = "",
    max_images: int | None = None,
) -> EvalReport:
    """
    Run every search on every image and score the triggered boxes.

    With an assessor, each detection's estimated IoU is recorded and the
    report carries their mean.
    """
    eval_cfg = eval_cfg or EvalConfig()
    entries = list(dataset)[:max_images] if max_images else list(dataset)
    if not entries:
        raise DatasetError(f"evaluation dataset {dataset.name!r} is empty")

    env = TextSearchEnv(env_cfg, reward_source=assessor)
    images = []
    for entry in entries:
        if entry.supervision is not Supervision.LABELED:
            raise DatasetError(f"evaluation needs labeled entries: {entry.path}")
        image = entry.load_image()
        results = run_searches(env, policy, image, entry.boxes, image_id=entry.image_id)
        detections = [r.detection for r in results if r.detection is not None]
        matching = match_detections(
            detections, list(entry.boxes), eval_cfg.iou_threshold, care=entry.care_flags
        )
        scores = [r.quality for r in results if r.triggered and r.quality is not None]
        images.append(ImageResult(
            image=str(entry.path),
            detections=detections,
            gt=list(entry.boxes),
            matching=matching,
            truncated_searches=sum(1 for r in results if not r.triggered),
            assessor_scores=scores,
        ))
        if annotate_dir is not None:
            save_png(draw_boxes(image, detections), Path(annotate_dir) / f"{entry.path.stem}.png")

    report = EvalReport.from_images(
        images,
        threshold=eval_cfg.iou_threshold,
        dataset=dataset.name,
        checkpoint=checkpoint_id,
        policy=type(policy).__name__,
    )
    logger.info(
        f"[EVAL] {dataset.name}: P={report.precision:.3f} R={report.recall:.3f} "
        f"F={report.f1:.3f} over {len(images)} images"
    )
    return report

