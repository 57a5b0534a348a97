"""
Synthetic training data.

Scenes are rendered by drawing words in random fonts, sizes and colors
onto a background (an image directory, or procedural flat / gradient /
noise fills). Word boxes are the tight extents of the rendered glyphs.

Assessor samples are random crops around a scene word, labeled with
their exact IoU against the best-matching word. Label balance is
enforced with per-bin quotas.

All randomness comes from ``np.random.default_rng([seed, scene_index])``
so any scene can be regenerated in isolation, including in worker
processes.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Any

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from .datasets import IMAGE_SUFFIXES, DatasetEntry, write_manifest
from .geometry import Box, intersection_area, iou
from .imaging import LUMA_WEIGHTS, crop_rgba, save_png
from .types import AssessorSample, ConfigError, SceneRecord, Supervision

logger = logging.getLogger("textrl.synthgen")

DEFAULT_FONT = "default"     # Pillow's bundled scalable font

DEFAULT_WORDS = (
    "EXIT", "OPEN", "SALE", "STOP", "CAFE", "BAR", "HOTEL", "PARK", "BANK", "TAXI",
    "food", "shop", "news", "city", "road", "bus", "inn", "sun", "art", "fish",
    "Main", "West", "Pizza", "Book", "Gym", "Hall", "Deli", "Mall", "Zoo", "Tea",
)

MAX_PLACEMENT_ATTEMPTS = 100
MAX_CROP_ATTEMPTS = 1000
MAX_SCENE_RETRIES = 20


@dataclass
class GenConfig:
    seed: int = 0
    width: int = 64
    height: int = 64
    background_dir: str | None = None
    backgrounds: tuple[str, ...] = ("flat", "gradient", "noise")
    fonts: tuple[str, ...] = (DEFAULT_FONT,)
    words: tuple[str, ...] = DEFAULT_WORDS
    words_per_scene: tuple[int, int] = (1, 3)
    font_size: tuple[int, int] = (10, 20)
    min_contrast: float = 0.35          # luma distance between text and background
    word_gap: int = 2                   # minimum pixel gap between placed words
    crops_per_scene: int = 4
    crop_size: int = 64                 # side of the saved RGBA crops
    bin_edges: tuple[float, ...] = (0.0, 0.3, 0.7, 1.0)
    bin_quotas: tuple[float, ...] = (0.3, 0.4, 0.3)
    workers: int = 1

    def __post_init__(self):
        for name in ("backgrounds", "fonts", "words", "words_per_scene", "font_size",
                     "bin_edges", "bin_quotas"):
            setattr(self, name, tuple(getattr(self, name)))
        if not self.fonts:
            raise ConfigError("gen config needs at least one font")
        if not self.words:
            raise ConfigError("gen config needs at least one word")
        if not self.backgrounds and not self.background_dir:
            raise ConfigError("gen config needs a background directory or procedural kinds")
        unknown = set(self.backgrounds) - set(_PROCEDURAL)
        if unknown:
            raise ConfigError(f"unknown procedural backgrounds: {sorted(unknown)}")
        lo, hi = self.words_per_scene
        if not 1 <= lo <= hi:
            raise ConfigError(f"words_per_scene must satisfy 1 <= lo <= hi, got {lo, hi}")
        lo, hi = self.font_size
        if not 4 <= lo <= hi:
            raise ConfigError(f"font_size must satisfy 4 <= lo <= hi, got {lo, hi}")
        if self.width < 8 or self.height < 8 or self.crop_size < 8:
            raise ConfigError("scene and crop sizes must be >= 8 px")
        edges = self.bin_edges
        if edges[0] != 0.0 or edges[-1] != 1.0 or any(a >= b for a, b in zip(edges, edges[1:])):
            raise ConfigError("bin_edges must increase from 0.0 to 1.0")
        if len(self.bin_quotas) != len(edges) - 1:
            raise ConfigError("bin_quotas needs one value per bin")
        if any(q < 0 for q in self.bin_quotas) or not math.isclose(sum(self.bin_quotas), 1.0):
            raise ConfigError("bin_quotas must be non-negative and sum to 1")
        if self.crops_per_scene < 1 or self.workers < 1:
            raise ConfigError("crops_per_scene and workers must be >= 1")

    def to_dict(self) -> dict[str, Any]:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> GenConfig:
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown gendata keys: {sorted(unknown)}")
        return cls(**d)


# ── Backgrounds ────────────────────────────────────────────────────────


def _flat(rng: np.random.Generator, w: int, h: int) -> np.ndarray:
    color = rng.integers(0, 256, size=3)
    return np.broadcast_to(color, (h, w, 3)).astype(np.uint8)


def _gradient(rng: np.random.Generator, w: int, h: int) -> np.ndarray:
    a = rng.integers(0, 256, size=3).astype(np.float64)
    b = rng.integers(0, 256, size=3).astype(np.float64)
    if rng.random() < 0.5:
        t = np.linspace(0.0, 1.0, w)[None, :, None].repeat(h, axis=0)
    else:
        t = np.linspace(0.0, 1.0, h)[:, None, None].repeat(w, axis=1)
    return np.round(a + (b - a) * t).astype(np.uint8)


def _noise(rng: np.random.Generator, w: int, h: int) -> np.ndarray:
    base = rng.integers(40, 216, size=3).astype(np.float64)
    cells = rng.normal(0.0, 30.0, size=(max(h // 8, 2), max(w // 8, 2), 3))
    coarse = Image.fromarray(np.clip(base + cells, 0, 255).astype(np.uint8))
    smooth = np.asarray(coarse.resize((w, h), Image.Resampling.BILINEAR), dtype=np.float64)
    fine = rng.normal(0.0, 6.0, size=(h, w, 3))
    return np.clip(smooth + fine, 0, 255).astype(np.uint8)


_PROCEDURAL = {"flat": _flat, "gradient": _gradient, "noise": _noise}


@lru_cache(maxsize=8)
def _background_files(directory: str) -> tuple[Path, ...]:
    d = Path(directory)
    if not d.is_dir():
        raise ConfigError(f"background directory not found: {d}")
    files = tuple(sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES))
    if not files:
        raise ConfigError(f"no background images in {d}")
    return files


def sample_background(cfg: GenConfig, rng: np.random.Generator) -> np.ndarray:
    w, h = cfg.width, cfg.height
    if cfg.background_dir:
        files = _background_files(cfg.background_dir)
        with Image.open(files[int(rng.integers(len(files)))]) as img:
            img = img.convert("RGB")
            side_w, side_h = img.size
            # random window with the scene's aspect ratio, then resize
            scale = min(side_w / w, side_h / h) * rng.uniform(0.5, 1.0)
            cw, ch = max(int(w * scale), 1), max(int(h * scale), 1)
            x0 = int(rng.integers(0, side_w - cw + 1))
            y0 = int(rng.integers(0, side_h - ch + 1))
            window = img.crop((x0, y0, x0 + cw, y0 + ch)).resize(
                (w, h), Image.Resampling.BILINEAR
            )
            return np.array(window, dtype=np.uint8)
    kind = cfg.backgrounds[int(rng.integers(len(cfg.backgrounds)))]
    return _PROCEDURAL[kind](rng, w, h)


# ── Text ───────────────────────────────────────────────────────────────


@lru_cache(maxsize=256)
def load_font(name: str, size: int) -> ImageFont.FreeTypeFont | ImageFont.ImageFont:
    if name == DEFAULT_FONT:
        return ImageFont.load_default(size=size)
    try:
        return ImageFont.truetype(name, size=size)
    except OSError as e:
        raise ConfigError(f"cannot load font {name!r}: {e}")


def _luma(color: np.ndarray) -> float:
    return float(np.asarray(color, dtype=np.float64) @ LUMA_WEIGHTS / 255.0)


def sample_text_color(
    background: np.ndarray, rng: np.random.Generator, min_contrast: float
) -> np.ndarray:
    """Random color whose luma differs from the background region by ``min_contrast``."""
    bg = _luma(background.reshape(-1, 3).mean(axis=0))
    for _ in range(20):
        color = rng.integers(0, 256, size=3)
        if abs(_luma(color) - bg) >= min_contrast:
            return color.astype(np.uint8)
    return np.zeros(3, np.uint8) if bg >= 0.5 else np.full(3, 255, np.uint8)


def _render_mask(word: str, font, origin: tuple[int, int], dims: tuple[int, int]) -> Image.Image:
    mask = Image.new("L", dims, 0)
    ImageDraw.Draw(mask).text(origin, word, fill=255, font=font)
    return mask


def _separated(box: Box, placed: list[Box], gap: int) -> bool:
    grown = Box(box.x_min - gap, box.y_min - gap, box.x_max + gap, box.y_max + gap)
    return all(intersection_area(grown, other) == 0.0 for other in placed)


def render_scene(cfg: GenConfig, rng: np.random.Generator) -> SceneRecord:
    """
    Draw 1..N words at non-overlapping positions.

    Each word gets up to 100 placement attempts (word, size and position
    resampled every time). Words that cannot be placed are dropped and
    counted in ``metadata["placement_failures"]``.
    """
    w, h = cfg.width, cfg.height
    canvas = sample_background(cfg, rng).astype(np.float64)
    n_words = int(rng.integers(cfg.words_per_scene[0], cfg.words_per_scene[1] + 1))

    boxes: list[Box] = []
    words: list[str] = []
    failures = 0
    for _ in range(n_words):
        for _attempt in range(MAX_PLACEMENT_ATTEMPTS):
            word = cfg.words[int(rng.integers(len(cfg.words)))]
            font = load_font(
                cfg.fonts[int(rng.integers(len(cfg.fonts)))],
                int(rng.integers(cfg.font_size[0], cfg.font_size[1] + 1)),
            )
            left, top, right, bottom = ImageDraw.Draw(Image.new("L", (1, 1))).textbbox(
                (0, 0), word, font=font
            )
            tw, th = right - left, bottom - top
            if tw >= w or th >= h:
                continue
            x = int(rng.integers(0, w - tw)) - left
            y = int(rng.integers(0, h - th)) - top
            mask = _render_mask(word, font, (x, y), (w, h))
            bbox = mask.getbbox()
            if bbox is None:
                continue
            box = Box(*(float(v) for v in bbox))
            if not _separated(box, boxes, cfg.word_gap):
                continue

            x0, y0, x1, y1 = bbox
            color = sample_text_color(canvas[y0:y1, x0:x1].astype(np.uint8), rng, cfg.min_contrast)
            alpha = np.asarray(mask, dtype=np.float64)[..., None] / 255.0
            canvas = canvas * (1.0 - alpha) + color.astype(np.float64) * alpha
            boxes.append(box)
            words.append(word)
            break
        else:
            failures += 1

    if failures:
        logger.debug(f"[GEN] placed {len(boxes)}/{n_words} words")
    return SceneRecord(
        image=np.round(canvas).astype(np.uint8),
        boxes=boxes,
        words=words,
        metadata={"placement_failures": failures, "requested_words": n_words},
    )


def render_nonempty_scene(cfg: GenConfig, rng: np.random.Generator) -> SceneRecord:
    for _ in range(MAX_SCENE_RETRIES):
        scene = render_scene(cfg, rng)
        if scene.boxes:
            return scene
    raise RuntimeError(
        f"could not place any word on a {cfg.width}x{cfg.height} scene; "
        f"reduce font_size {cfg.font_size} or use shorter words"
    )


# ── Crops ──────────────────────────────────────────────────────────────


def label_crop(crop: Box, scene: SceneRecord, target: int) -> tuple[float, int]:
    """IoU against the best-overlapping word (the target word when all are 0)."""
    scores = [iou(crop, b) for b in scene.boxes]
    best = int(np.argmax(scores))
    if scores[best] == 0.0:
        return 0.0, target
    return scores[best], best


def jitter_crop(word: Box, rng: np.random.Generator, spread: float) -> Box:
    """Integer crop around ``word``; ``spread`` in [0, 1] scales the scale/offset jitter."""
    sw = math.exp(rng.uniform(-1.0, 1.0) * spread)
    sh = math.exp(rng.uniform(-1.0, 1.0) * spread)
    cx, cy = word.center
    cx += rng.uniform(-0.75, 0.75) * spread * word.width
    cy += rng.uniform(-0.75, 0.75) * spread * word.height
    half_w = max(word.width * sw / 2, 0.5)
    half_h = max(word.height * sh / 2, 0.5)
    x0, x1 = round(cx - half_w), round(cx + half_w)
    y0, y1 = round(cy - half_h), round(cy + half_h)
    return Box(float(x0), float(y0), float(max(x1, x0 + 1)), float(max(y1, y0 + 1)))


def _bin_of(label: float, edges: tuple[float, ...]) -> int:
    for i in range(len(edges) - 2):
        if label < edges[i + 1]:
            return i
    return len(edges) - 2


def sample_crop(
    scene: SceneRecord,
    rng: np.random.Generator,
    cfg: GenConfig,
    target_bin: int | None = None,
) -> AssessorSample:
    """
    Random crop around a uniformly chosen word with its exact IoU label.

    With ``target_bin`` the crop is resampled until its label falls in
    that quota bin; the jitter widens for lower bins.
    """
    if not scene.boxes:
        raise ValueError("sample_crop needs a scene with at least one word")
    target = int(rng.integers(len(scene.boxes)))
    word = scene.boxes[target]

    if target_bin is None:
        spread = float(rng.uniform(0.0, 1.5))
    else:
        lo, hi = cfg.bin_edges[target_bin], cfg.bin_edges[target_bin + 1]
        spread = 1.0 - (lo + hi) / 2

    crop = jitter_crop(word, rng, spread)
    label, best = label_crop(crop, scene, target)
    if target_bin is not None:
        attempts = 1
        while _bin_of(label, cfg.bin_edges) != target_bin:
            if attempts >= MAX_CROP_ATTEMPTS:
                logger.warning(f"[GEN] crop quota bin {target_bin} not reached; "
                               f"keeping label {label:.3f}")
                break
            # widen slowly so low-IoU bins stay reachable for tiny words
            widen = spread * (1.0 + attempts / 200) if target_bin == 0 else spread
            crop = jitter_crop(word, rng, widen)
            label, best = label_crop(crop, scene, target)
            attempts += 1

    return AssessorSample(
        crop=crop_rgba(scene.image, crop, cfg.crop_size),
        label=label,
        box=crop,
        word_box=scene.boxes[best],
    )


def quota_bins(cfg: GenConfig, n: int, rng: np.random.Generator) -> list[int]:
    """Exactly ``n`` bin assignments, proportional to the quotas, shuffled."""
    raw = [q * n for q in cfg.bin_quotas]
    counts = [math.floor(r) for r in raw]
    remainder = n - sum(counts)
    by_fraction = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in by_fraction[:remainder]:
        counts[i] += 1
    bins = [b for b, c in enumerate(counts) for _ in range(c)]
    return [bins[int(i)] for i in rng.permutation(len(bins))]


# ── Dataset writers ────────────────────────────────────────────────────


def _crop_task(args: tuple[GenConfig, int, list[int], int, str]) -> list[dict[str, Any]]:
    cfg, scene_id, bins, first_index, out_dir = args
    rng = np.random.default_rng([cfg.seed, scene_id])
    scene = render_nonempty_scene(cfg, rng)
    records = []
    for offset, target_bin in enumerate(bins):
        sample = sample_crop(scene, rng, cfg, target_bin=target_bin)
        rel = f"crops/{first_index + offset:06d}.png"
        save_png(sample.crop, Path(out_dir) / rel)
        records.append({
            "crop": rel,
            "iou": sample.label,
            "word_box": sample.word_box.to_list(),
            "scene_id": scene_id,
        })
    return records


def _scene_task(args: tuple[GenConfig, int, str]) -> tuple[str, list[Box], list[str]]:
    cfg, scene_id, out_dir = args
    rng = np.random.default_rng([cfg.seed, scene_id])
    scene = render_nonempty_scene(cfg, rng)
    rel = f"images/{scene_id:06d}.png"
    save_png(scene.image, Path(out_dir) / rel)
    return rel, scene.boxes, scene.words


def _run_tasks(fn, tasks: list, workers: int) -> list:
    if workers <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


def _write_gen_config(cfg: GenConfig, out: Path, **extra):
    with open(out / "gen_config.json", "w") as f:
        json.dump({**cfg.to_dict(), **extra}, f, indent=2, sort_keys=True)
        f.write("\n")


def generate_dataset(cfg: GenConfig, n_samples: int, out_dir: str | Path) -> Path:
    """
    Write ``n_samples`` RGBA crops and ``manifest.jsonl`` into ``out_dir``.

    Returns the manifest path.
    """
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    out = Path(out_dir)
    try:
        (out / "crops").mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create output directory {out}: {e}")

    bins = quota_bins(cfg, n_samples, np.random.default_rng(cfg.seed))
    k = cfg.crops_per_scene
    tasks = [
        (cfg, scene_id, bins[start:start + k], start, str(out))
        for scene_id, start in enumerate(range(0, n_samples, k))
    ]
    logger.info(f"[GEN] rendering {n_samples} crops from {len(tasks)} scenes into {out}")
    records = [r for chunk in _run_tasks(_crop_task, tasks, cfg.workers) for r in chunk]

    manifest = out / "manifest.jsonl"
    with open(manifest, "w") as f:
        for rec in records:
            f.write(json.dumps(rec) + "\n")
    _write_gen_config(cfg, out, n_samples=n_samples, kind="assessor")
    logger.info(f"[GEN] wrote {manifest}")
    return manifest


def generate_scenes(
    cfg: GenConfig,
    n_scenes: int,
    out_dir: str | Path,
    supervision: Supervision = Supervision.LABELED,
) -> Path:
    """Write whole scenes as a detection dataset in the canonical manifest format."""
    if n_scenes < 1:
        raise ValueError(f"n_scenes must be >= 1, got {n_scenes}")
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)

    tasks = [(cfg, scene_id, str(out)) for scene_id in range(n_scenes)]
    logger.info(f"[GEN] rendering {n_scenes} scenes into {out}")
    entries = []
    for rel, boxes, words in _run_tasks(_scene_task, tasks, cfg.workers):
        if supervision is Supervision.LABELED:
            entries.append(DatasetEntry(
                path=out / rel, boxes=tuple(boxes), supervision=supervision, words=tuple(words),
            ))
        else:
            entries.append(DatasetEntry(path=out / rel, supervision=supervision))

    manifest = write_manifest(entries, out / "manifest.jsonl")
    _write_gen_config(cfg, out, n_scenes=n_scenes, kind="scenes", supervision=supervision.value)
    logger.info(f"[GEN] wrote {manifest}")
    return manifest
