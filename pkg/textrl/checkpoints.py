"""
Checkpoint archives shared by the agent and the assessor.

An archive is a single ``torch.save`` file holding network weights,
optimizer state, counters and the resolved configuration, tagged with
its ``kind`` so an assessor file cannot be loaded as an agent.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Any

import torch

from .types import CheckpointError

logger = logging.getLogger("textrl.checkpoints")

FORMAT_VERSION = 1


def resolve_device(device: str | torch.device = "cpu") -> torch.device:
    if str(device) == "auto":
        return torch.device("cuda" if torch.cuda.is_available() else "cpu")
    return torch.device(device)


def write_archive(path: str | Path, kind: str, payload: dict[str, Any]) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    archive = {"kind": kind, "format_version": FORMAT_VERSION, **payload}
    tmp = p.with_name(p.name + ".tmp")
    torch.save(archive, tmp)
    tmp.replace(p)
    logger.info(f"[CKPT] wrote {kind} checkpoint {p}")
    return p


def read_archive(path: str | Path, kind: str, device: str | torch.device = "cpu") -> dict[str, Any]:
    p = Path(path)
    if not p.exists():
        raise CheckpointError(f"checkpoint not found: {p}", missing=True)
    try:
        archive = torch.load(p, map_location=resolve_device(device), weights_only=True)
    except Exception as e:
        raise CheckpointError(f"cannot read checkpoint {p}: {e}")
    if not isinstance(archive, dict) or archive.get("kind") != kind:
        found = archive.get("kind") if isinstance(archive, dict) else type(archive).__name__
        raise CheckpointError(f"{p} is not a {kind} checkpoint (found {found!r})")
    if archive.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{p} has format version {archive.get('format_version')}, expected {FORMAT_VERSION}"
        )
    return archive


def load_weights(module: torch.nn.Module, state_dict: dict[str, Any], path: str | Path, what: str):
    """load_state_dict with a descriptive CheckpointError on shape/key mismatch."""
    try:
        module.load_state_dict(state_dict)
    except RuntimeError as e:
        raise CheckpointError(
            f"checkpoint {path} does not match the configured {what} architecture: {e}"
        )
