"""
Raster helpers shared by the environment, the assessor, the synthetic
data generator and the evaluation harness.

Canvases are H x W x 3 ``uint8`` numpy arrays. Boxes are rasterized by
rounding to the nearest pixel edge; pixels outside the canvas are black
(and transparent in RGBA crops).
"""

from __future__ import annotations

import logging
import math
from pathlib import Path
from typing import Iterable

import numpy as np
from PIL import Image, ImageDraw

from .geometry import Box

logger = logging.getLogger("textrl.imaging")

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114], dtype=np.float64)


def load_rgb(path: str | Path) -> np.ndarray:
    """Read an image file as a writable H x W x 3 uint8 array."""
    with Image.open(path) as img:
        return np.array(img.convert("RGB"), dtype=np.uint8)


def save_png(array: np.ndarray | Image.Image, path: str | Path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    img = array if isinstance(array, Image.Image) else Image.fromarray(array)
    img.save(p, format="PNG")
    return p


def pixel_bounds(box: Box) -> tuple[int, int, int, int]:
    """Integer pixel edges of ``box``; always at least one pixel wide and high."""
    x0 = math.floor(box.x_min + 0.5)
    y0 = math.floor(box.y_min + 0.5)
    x1 = max(math.floor(box.x_max + 0.5), x0 + 1)
    y1 = max(math.floor(box.y_max + 0.5), y0 + 1)
    return x0, y0, x1, y1


def extract_patch(canvas: np.ndarray, box: Box) -> tuple[np.ndarray, np.ndarray]:
    """
    Cut ``box`` out of ``canvas``.

    Returns the patch (out-of-canvas pixels zero) and a boolean mask that
    is True where the patch lies on the canvas.
    """
    h, w = canvas.shape[:2]
    x0, y0, x1, y1 = pixel_bounds(box)
    patch = np.zeros((y1 - y0, x1 - x0) + canvas.shape[2:], dtype=canvas.dtype)
    mask = np.zeros((y1 - y0, x1 - x0), dtype=bool)

    sx0, sy0 = max(x0, 0), max(y0, 0)
    sx1, sy1 = min(x1, w), min(y1, h)
    if sx0 < sx1 and sy0 < sy1:
        patch[sy0 - y0:sy1 - y0, sx0 - x0:sx1 - x0] = canvas[sy0:sy1, sx0:sx1]
        mask[sy0 - y0:sy1 - y0, sx0 - x0:sx1 - x0] = True
    return patch, mask


def resize_rgb(patch: np.ndarray, size: int) -> np.ndarray:
    img = Image.fromarray(patch)
    return np.asarray(img.resize((size, size), Image.Resampling.BILINEAR))


def luma(rgb: np.ndarray) -> np.ndarray:
    """Grayscale in [0, 1] with ITU-R 601 weights."""
    gray = rgb.astype(np.float64) @ LUMA_WEIGHTS / 255.0
    return np.clip(gray, 0.0, 1.0).astype(np.float32)


def crop_rgba(canvas: np.ndarray, box: Box, size: int) -> np.ndarray:
    """
    RGBA crop of ``box`` resized to ``size`` x ``size``.

    Alpha is 255 on the canvas and 0 outside it. The alpha plane is resized
    with nearest-neighbour sampling so it stays binary.
    """
    patch, mask = extract_patch(canvas, box)
    rgb = resize_rgb(patch, size)
    alpha = Image.fromarray(mask.astype(np.uint8) * 255).resize(
        (size, size), Image.Resampling.NEAREST
    )
    return np.dstack([rgb, np.asarray(alpha)]).astype(np.uint8)


def draw_boxes(
    canvas: np.ndarray,
    boxes: Iterable[Box],
    color: tuple[int, int, int] = (255, 0, 0),
    width: int = 2,
) -> Image.Image:
    """Copy of ``canvas`` with rectangles drawn (red by default)."""
    img = Image.fromarray(canvas).convert("RGB")
    draw = ImageDraw.Draw(img)
    for box in boxes:
        draw.rectangle(box.to_list(), outline=color, width=width)
    return img
