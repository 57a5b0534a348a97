"""
The box-search environment.

The agent sees the image only through its current box, rendered as a
stack of the last ``frame_stack`` grayscale views plus a one-hot history
of the last ``history_len`` actions. Eight actions move or reshape the
box; the ninth (Trigger) ends the search. Only the final action is
rewarded::

    reward = eta * quality - steps * p

where quality is the TIoU against the best remaining ground-truth box
(supervised) or the assessor's IoU estimate (weak). After every search
an inhibition-of-return cross is painted so the next search on the same
image looks for a different word.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Protocol

import gymnasium as gym
import numpy as np
from gymnasium import spaces

from .config import EnvConfig
from .geometry import Box, closest_box, iou, tiou, upscale_box
from .imaging import draw_boxes, extract_patch, luma, pixel_bounds, resize_rgb
from .types import NUM_ACTIONS, Action, SupervisionMode

logger = logging.getLogger("textrl.env")


class RewardSource(Protocol):
    """Estimates the quality in [0, 1] of a detection when no ground truth is used."""

    def quality(self, canvas: np.ndarray, detection: Box) -> float: ...


# ── Transition function ────────────────────────────────────────────────


def _clamp_axis(lo: float, hi: float, min_side: float, bound_lo: float, bound_hi: float):
    size = min(max(hi - lo, min_side), bound_hi - bound_lo)
    center = (lo + hi) / 2
    lo = center - size / 2
    hi = lo + size
    if lo < bound_lo:
        lo, hi = bound_lo, bound_lo + size
    elif hi > bound_hi:
        lo, hi = bound_hi - size, bound_hi
    return lo, hi


def clamp_box(
    x_min: float, y_min: float, x_max: float, y_max: float,
    cfg: EnvConfig, image_dims: tuple[int, int],
) -> Box:
    """Enforce the minimum side and keep the box inside the extended canvas."""
    width, height = image_dims
    mx = cfg.canvas_margin_fraction * width
    my = cfg.canvas_margin_fraction * height
    x_min, x_max = _clamp_axis(x_min, x_max, cfg.min_box_side, -mx, width + mx)
    y_min, y_max = _clamp_axis(y_min, y_max, cfg.min_box_side, -my, height + my)
    return Box(x_min, y_min, x_max, y_max)


def apply_action(
    box: Box, action: Action | int, cfg: EnvConfig, image_dims: tuple[int, int]
) -> Box:
    """
    Move or reshape ``box`` by ``alpha`` of its current width/height.

    Bigger/Smaller change both sides, Fatter shrinks the height, Taller
    shrinks the width; all three keep the center. ``image_dims`` is
    ``(width, height)``.
    """
    action = Action(int(action))
    if action is Action.TRIGGER:
        raise ValueError("apply_action does not handle Trigger")

    dw = cfg.alpha * box.width
    dh = cfg.alpha * box.height
    x0, y0, x1, y1 = box.x_min, box.y_min, box.x_max, box.y_max

    if action is Action.MOVE_LEFT:
        x0, x1 = x0 - dw, x1 - dw
    elif action is Action.MOVE_RIGHT:
        x0, x1 = x0 + dw, x1 + dw
    elif action is Action.MOVE_UP:
        y0, y1 = y0 - dh, y1 - dh
    elif action is Action.MOVE_DOWN:
        y0, y1 = y0 + dh, y1 + dh
    elif action is Action.BIGGER:
        x0, x1, y0, y1 = x0 - dw / 2, x1 + dw / 2, y0 - dh / 2, y1 + dh / 2
    elif action is Action.SMALLER:
        x0, x1, y0, y1 = x0 + dw / 2, x1 - dw / 2, y0 + dh / 2, y1 - dh / 2
    elif action is Action.FATTER:
        y0, y1 = y0 + dh / 2, y1 - dh / 2
    elif action is Action.TALLER:
        x0, x1 = x0 + dw / 2, x1 - dw / 2

    return clamp_box(x0, y0, x1, y1, cfg, image_dims)


def trigger_reward(quality: float, steps: int, cfg: EnvConfig) -> float:
    return cfg.eta * quality - steps * cfg.penalty_p


def ground_truth_quality(detection: Box, remaining_gt: list[Box]) -> float:
    """Best TIoU of ``detection`` over the boxes not yet masked."""
    if not remaining_gt:
        return 0.0
    return max(tiou(detection, g) for g in remaining_gt)


# ── Rendering ──────────────────────────────────────────────────────────


def render_view(image: np.ndarray, box: Box, cfg: EnvConfig) -> np.ndarray:
    """Grayscale ``view_size`` x ``view_size`` view of ``box``; black off-canvas."""
    patch, _ = extract_patch(image, box)
    return luma(resize_rgb(patch, cfg.view_size))


def apply_ior_marker(canvas: np.ndarray, box: Box) -> np.ndarray:
    """
    Paint a black cross over ``box`` in place: a full-width bar one third of
    the box height and a full-height bar one third of the box width, both
    centered. Clipped to the canvas.
    """
    h, w = canvas.shape[:2]
    cx, cy = box.center
    bars = (
        (box.x_min, cy - box.height / 6, box.x_max, cy + box.height / 6),
        (cx - box.width / 6, box.y_min, cx + box.width / 6, box.y_max),
    )
    for coords in bars:
        x0, y0, x1, y1 = pixel_bounds(Box(*coords))
        x0, y0, x1, y1 = max(x0, 0), max(y0, 0), min(x1, w), min(y1, h)
        if x0 < x1 and y0 < y1:
            canvas[y0:y1, x0:x1] = 0
    return canvas


# ── Episode state ──────────────────────────────────────────────────────


@dataclass
class EpisodeState:
    image: np.ndarray                      # canvas, mutated by IoR markers
    current_box: Box
    mode: SupervisionMode
    remaining_gt: list[Box] = field(default_factory=list)
    steps: int = 0
    done: bool = False
    inference: bool = False
    searches: int = 0
    last_truncated: bool = False
    markers: list[Box] = field(default_factory=list)
    frames: deque = field(default_factory=deque)
    history: np.ndarray | None = None

    @property
    def image_dims(self) -> tuple[int, int]:
        return self.image.shape[1], self.image.shape[0]


class TextSearchEnv(gym.Env):
    """
    Word-search MDP over one image at a time.

    ``reset(options={"image": ..., "annotations": [...], "mode": ...})``
    loads a new image; a bare ``reset()`` starts the next search on the
    same canvas, which already carries the IoR markers of earlier searches.

    Usage::

        env = TextSearchEnv(EnvConfig(view_size=64))
        obs, info = env.reset(options={"image": img, "annotations": boxes})
        while True:
            obs, reward, terminated, truncated, info = env.step(action)
            if terminated or truncated:
                break
        if not env.image_done:
            obs, info = env.reset()
    """

    metadata = {"render_modes": ["rgb_array"]}

    def __init__(self, cfg: EnvConfig, reward_source: RewardSource | None = None):
        self.cfg = cfg
        self.reward_source = reward_source
        self.action_space = spaces.Discrete(NUM_ACTIONS)
        self.observation_space = spaces.Dict({
            "frames": spaces.Box(
                0.0, 1.0, (cfg.frame_stack, cfg.view_size, cfg.view_size), np.float32
            ),
            "history": spaces.Box(0.0, 1.0, (cfg.history_len * NUM_ACTIONS,), np.float32),
        })
        self.state: EpisodeState | None = None
        self.image_id = ""

    # ── Lifecycle ──────────────────────────────────────────────────────

    def reset(self, *, seed: int | None = None, options: dict[str, Any] | None = None):
        super().reset(seed=seed)
        options = options or {}

        if "image" in options:
            self._load_image(
                image=options["image"],
                annotations=options.get("annotations") or [],
                mode=SupervisionMode(options.get("mode", SupervisionMode.SUPERVISED)),
                inference=bool(options.get("inference", False)),
            )
            self.image_id = str(options.get("image_id", ""))
        elif self.state is None:
            raise RuntimeError("the first reset() needs options['image']")
        elif self.image_done:
            raise RuntimeError("all searches on this image are finished; pass a new image")

        s = self.state
        h, w = s.image.shape[:2]
        s.current_box = Box(0.0, 0.0, float(w), float(h))
        s.steps = 0
        s.done = False
        s.history = np.zeros((self.cfg.history_len, NUM_ACTIONS), dtype=np.float32)
        first = render_view(s.image, s.current_box, self.cfg)
        s.frames = deque([first] * self.cfg.frame_stack, maxlen=self.cfg.frame_stack)
        return self._observation(), self._info()

    def _load_image(self, image: np.ndarray, annotations: list[Box], mode: SupervisionMode,
                    inference: bool):
        if image.ndim != 3 or image.shape[2] != 3:
            raise ValueError(f"image must be H x W x 3, got shape {image.shape}")
        if mode is SupervisionMode.SUPERVISED and not annotations and not inference:
            raise ValueError("supervised episodes need at least one annotation")
        gt = [] if mode is SupervisionMode.WEAK else [
            upscale_box(b, self.cfg.upscale_factor) for b in annotations
        ]
        h, w = image.shape[:2]
        self.state = EpisodeState(
            image=np.array(image, dtype=np.uint8, copy=True),
            current_box=Box(0.0, 0.0, float(w), float(h)),
            mode=mode,
            remaining_gt=gt,
            inference=inference,
        )

    def step(self, action):
        s = self.state
        if s is None or s.done:
            raise RuntimeError("step() on a finished episode; call reset() first")

        action = Action(int(action))
        s.steps += 1
        terminated = action is Action.TRIGGER
        truncated = False
        if not terminated:
            s.current_box = apply_action(s.current_box, action, self.cfg, s.image_dims)
            truncated = s.steps >= self.cfg.max_steps

        s.history[1:] = s.history[:-1]
        s.history[0] = 0.0
        s.history[0, action] = 1.0
        if terminated:
            s.frames.append(s.frames[-1])
        else:
            s.frames.append(render_view(s.image, s.current_box, self.cfg))

        reward = 0.0
        info = self._info()
        info["action"] = action
        info["truncated"] = truncated
        if terminated or truncated:
            quality = self._quality(s.current_box)
            reward = trigger_reward(quality if quality is not None else 0.0, s.steps, self.cfg)
            info["quality"] = quality
            info["detection"] = s.current_box if terminated else None
            info["masked"] = self._finish_search(triggered=terminated)
            info["image_done"] = self.image_done
            logger.debug(
                f"[SEARCH] image={self.image_id} steps={s.steps} reward={reward:.3f} "
                f"truncated={truncated}"
            )
        obs = self._observation()
        return obs, reward, terminated, truncated, info

    # ── Search bookkeeping ─────────────────────────────────────────────

    def _quality(self, detection: Box) -> float | None:
        s = self.state
        if s.mode is SupervisionMode.SUPERVISED:
            return ground_truth_quality(detection, s.remaining_gt)
        if self.reward_source is None:
            return None
        return float(self.reward_source.quality(s.image, detection))

    def _finish_search(self, triggered: bool) -> Box | None:
        s = self.state
        s.done = True
        s.searches += 1
        s.last_truncated = not triggered

        masked = None
        if s.remaining_gt:
            idx = closest_box(s.current_box, s.remaining_gt)
            if not s.inference:
                masked = s.remaining_gt.pop(idx)
            elif triggered and iou(s.current_box, s.remaining_gt[idx]) > 0:
                s.remaining_gt.pop(idx)
        if masked is None and triggered:
            masked = s.current_box
        if masked is not None:
            apply_ior_marker(s.image, masked)
            s.markers.append(masked)
        return masked

    @property
    def image_done(self) -> bool:
        """No further search is useful on the current image."""
        s = self.state
        if s is None:
            return True
        if s.mode is SupervisionMode.SUPERVISED and not s.inference:
            return not s.remaining_gt
        if s.searches == 0:
            return False
        if s.searches >= self.cfg.max_searches or s.last_truncated:
            return True
        # scripted ground-truth policies at inference stop once every word is found
        return s.mode is SupervisionMode.SUPERVISED and not s.remaining_gt

    # ── Observation ────────────────────────────────────────────────────

    def _observation(self) -> dict[str, np.ndarray]:
        s = self.state
        return {
            "frames": np.stack(list(s.frames)).astype(np.float32),
            "history": s.history.reshape(-1).copy(),
        }

    def _info(self) -> dict[str, Any]:
        s = self.state
        return {"box": s.current_box, "steps": s.steps, "searches": s.searches}

    def render(self):
        s = self.state
        if s is None:
            return None
        return np.asarray(draw_boxes(s.image, [s.current_box]))
