"""
Detection datasets.

One canonical on-disk format, a JSON Lines manifest::

    {"image": "images/000001.png", "boxes": [[x1, y1, x2, y2], ...],
     "supervision": "labeled", "care": [true, ...], "words": ["EXIT", ...]}

``care`` and ``words`` are optional. Image paths are relative to the
manifest's directory. ICDAR ground truth and synthetic scenes are
converted into this format before training or evaluation.
"""

from __future__ import annotations

import json
import logging
import math
import os
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .geometry import Box
from .imaging import load_rgb
from .types import DatasetError, Supervision

logger = logging.getLogger("textrl.datasets")

DO_NOT_CARE = "###"

IMAGE_SUFFIXES = (".jpg", ".jpeg", ".png", ".bmp", ".gif", ".tif", ".tiff")


@dataclass(frozen=True)
class DatasetEntry:
    path: Path                              # resolved image path
    boxes: tuple[Box, ...] = ()
    supervision: Supervision = Supervision.LABELED
    care: tuple[bool, ...] | None = None
    words: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.supervision is Supervision.LABELED and not self.boxes:
            raise ValueError(f"labeled entry {self.path} has no boxes")
        if self.supervision is Supervision.UNLABELED and self.boxes:
            raise ValueError(f"unlabeled entry {self.path} carries boxes")
        for name, values in (("care", self.care), ("words", self.words)):
            if values is not None and len(values) != len(self.boxes):
                raise ValueError(f"{name} has {len(values)} values for {len(self.boxes)} boxes")

    @property
    def care_flags(self) -> tuple[bool, ...]:
        return self.care if self.care is not None else (True,) * len(self.boxes)

    @property
    def care_boxes(self) -> list[Box]:
        return [b for b, c in zip(self.boxes, self.care_flags) if c]

    @property
    def image_id(self) -> str:
        return self.path.name

    def load_image(self) -> np.ndarray:
        try:
            return load_rgb(self.path)
        except FileNotFoundError:
            raise DatasetError(f"missing image: {self.path}")

    def unlabeled(self) -> DatasetEntry:
        return DatasetEntry(path=self.path, supervision=Supervision.UNLABELED)


@dataclass
class DetectionDataset:
    """Immutable after load; safe to share between readers."""
    entries: list[DatasetEntry] = field(default_factory=list)
    name: str = ""
    source_format: str = "manifest"

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[DatasetEntry]:
        return iter(self.entries)

    def __getitem__(self, index: int) -> DatasetEntry:
        return self.entries[index]

    def as_unlabeled(self) -> DetectionDataset:
        """Drop every annotation; used to train weakly on a labeled corpus."""
        return DetectionDataset(
            entries=[e.unlabeled() for e in self.entries],
            name=self.name,
            source_format=self.source_format,
        )


# ── Canonical manifest ─────────────────────────────────────────────────


def _parse_entry(rec: object, root: Path) -> DatasetEntry:
    if not isinstance(rec, dict):
        raise ValueError("record must be a JSON object")
    image = rec.get("image")
    if not isinstance(image, str) or not image:
        raise ValueError("missing 'image'")
    supervision = Supervision(rec.get("supervision", Supervision.LABELED.value))
    boxes = tuple(Box.from_list(b) for b in rec.get("boxes", []))
    care = rec.get("care")
    words = rec.get("words")
    return DatasetEntry(
        path=root / image,
        boxes=boxes,
        supervision=supervision,
        care=tuple(bool(c) for c in care) if care is not None else None,
        words=tuple(str(w) for w in words) if words is not None else None,
    )


def load_manifest(path: str | Path, check_images: bool = True) -> DetectionDataset:
    """
    Parse a canonical manifest.

    Raises DatasetError naming the line for malformed records and naming
    the path for images that do not exist.
    """
    p = Path(path)
    if not p.exists():
        raise DatasetError(f"manifest not found: {p}")
    root = p.parent
    entries = []
    with open(p) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                entry = _parse_entry(json.loads(line), root)
            except (json.JSONDecodeError, TypeError, ValueError) as e:
                raise DatasetError(f"{p}:{lineno}: {e}")
            if check_images and not entry.path.exists():
                raise DatasetError(f"{p}:{lineno}: missing image: {entry.path}")
            entries.append(entry)
    logger.info(f"Loaded {len(entries)} entries from {p}")
    return DetectionDataset(entries=entries, name=p.stem, source_format="manifest")


def entry_to_dict(entry: DatasetEntry, root: Path) -> dict:
    rec: dict = {
        "image": Path(os.path.relpath(entry.path, root)).as_posix(),
        "boxes": [b.to_list() for b in entry.boxes],
        "supervision": entry.supervision.value,
    }
    if entry.care is not None:
        rec["care"] = list(entry.care)
    if entry.words is not None:
        rec["words"] = list(entry.words)
    return rec


def write_manifest(entries: DetectionDataset | Iterable[DatasetEntry], path: str | Path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    root = p.parent.resolve()
    with open(p, "w") as f:
        for entry in entries:
            resolved = replace(entry, path=entry.path.resolve())
            f.write(json.dumps(entry_to_dict(resolved, root)) + "\n")
    return p


# ── ICDAR ground truth ─────────────────────────────────────────────────


@dataclass(frozen=True)
class IcdarWord:
    box: Box
    text: str
    care: bool


_GT_LINE = re.compile(r'^(?P<coords>[^"]*),\s*"(?P<text>.*)"\s*$')


def parse_icdar_gt(gt_file: str | Path) -> list[IcdarWord]:
    """
    Read a comma-separated ICDAR ground-truth file::

        38, 43, 920, 215, "Tiredness"

    ``"###"`` marks a do-not-care region. Space-separated and
    quadrilateral dialects are rejected.
    """
    p = Path(gt_file)
    words = []
    with open(p, encoding="utf-8-sig") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            m = _GT_LINE.match(line)
            if m is None:
                raise DatasetError(
                    f"{p}:{lineno}: unsupported ground-truth dialect "
                    f"(expected 'x1, y1, x2, y2, \"text\"'): {line!r}"
                )
            parts = [s.strip() for s in m.group("coords").split(",")]
            if len(parts) != 4:
                raise DatasetError(
                    f"{p}:{lineno}: expected 4 coordinates, found {len(parts)} "
                    f"(unsupported ground-truth dialect)"
                )
            try:
                coords = [float(s) for s in parts]
            except ValueError:
                raise DatasetError(f"{p}:{lineno}: non-numeric coordinate in {line!r}")
            try:
                box = Box.from_list(coords)
            except ValueError as e:
                raise DatasetError(f"{p}:{lineno}: {e}")
            text = m.group("text")
            words.append(IcdarWord(box=box, text=text, care=text != DO_NOT_CARE))
    return words


def convert_icdar(images_dir: str | Path, gt_dir: str | Path, out_manifest: str | Path) -> Path:
    """
    Pair ``img_N.*`` with ``gt_img_N.txt`` and write a canonical manifest.

    Images without a ground-truth file, or whose file lists no word, are
    skipped with a warning.
    """
    images_dir, gt_dir = Path(images_dir), Path(gt_dir)
    if not images_dir.is_dir():
        raise DatasetError(f"ICDAR image directory not found: {images_dir}")
    if not gt_dir.is_dir():
        raise DatasetError(f"ICDAR ground-truth directory not found: {gt_dir}")

    entries = []
    for image in sorted(images_dir.iterdir()):
        if image.suffix.lower() not in IMAGE_SUFFIXES:
            continue
        gt_file = gt_dir / f"gt_{image.stem}.txt"
        if not gt_file.exists():
            logger.warning(f"No ground truth for {image.name}; skipped")
            continue
        words = parse_icdar_gt(gt_file)
        if not words:
            logger.warning(f"{gt_file.name} lists no words; {image.name} skipped")
            continue
        entries.append(DatasetEntry(
            path=image,
            boxes=tuple(w.box for w in words),
            supervision=Supervision.LABELED,
            care=tuple(w.care for w in words),
            words=tuple(w.text for w in words),
        ))
    logger.info(f"Converted {len(entries)} ICDAR images from {images_dir}")
    return write_manifest(entries, out_manifest)


# ── Subsets and mixing ─────────────────────────────────────────────────


def subsample(ds: DetectionDataset, fraction: float, seed: int) -> DetectionDataset:
    """Uniform subset without replacement of round(fraction * len) entries, order kept."""
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    n = len(ds)
    k = math.floor(fraction * n + 0.5)
    if k >= n:
        chosen = list(range(n))
    else:
        rng = np.random.default_rng(seed)
        chosen = sorted(int(i) for i in rng.choice(n, size=k, replace=False))
    return DetectionDataset(
        entries=[ds.entries[i] for i in chosen],
        name=f"{ds.name}@{fraction:g}",
        source_format=ds.source_format,
    )


def cycle_entries(entries: list[DatasetEntry], rng: np.random.Generator) -> Iterator[DatasetEntry]:
    """Endless reshuffled passes over ``entries``."""
    if not entries:
        raise DatasetError("cannot draw episodes from an empty dataset")
    while True:
        for i in rng.permutation(len(entries)):
            yield entries[int(i)]


class EpisodeMixer:
    """
    Decides, episode by episode, whether the next word search runs on
    labeled (ground-truth reward) or unlabeled (assessor reward) data.

    The next episode is labeled while ``labeled_count <= ratio *
    unlabeled_count``. For ratios in (0, 1] or of the form 1 + 1/k this
    keeps ``|labeled_count - ratio * unlabeled_count| <= 1`` at every
    prefix.
    """

    def __init__(self, ratio: float = 1.0):
        if ratio <= 0:
            raise ValueError(f"ratio must be > 0, got {ratio}")
        self.ratio = ratio
        self.labeled_count = 0
        self.unlabeled_count = 0

    def peek(self) -> Supervision:
        if self.labeled_count - self.ratio * self.unlabeled_count <= 1e-9:
            return Supervision.LABELED
        return Supervision.UNLABELED

    def __iter__(self) -> Iterator[Supervision]:
        return self

    def __next__(self) -> Supervision:
        source = self.peek()
        if source is Supervision.LABELED:
            self.labeled_count += 1
        else:
            self.unlabeled_count += 1
        return source
