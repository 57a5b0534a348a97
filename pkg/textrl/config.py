"""
Run configuration.

All defaults are the published full-scale values. The ``desk`` profile
scales them down so toy runs finish on a desktop CPU.

Precedence, lowest to highest::

    dataclass defaults -> profile -> config file -> flags (--set key=value)

Config files are JSON documents whose nesting mirrors ``RunConfig``.
"""

from __future__ import annotations

import copy
import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from .types import ConfigError, TrainingMode

logger = logging.getLogger("textrl.config")

SEED_ENV_VAR = "TEXTRL_SEED"


@dataclass
class EnvConfig:
    alpha: float = 0.2                  # move/resize step as fraction of box size
    eta: float = 70.0                   # trigger reward scale
    penalty_p: float = 0.03             # per-step penalty
    view_size: int = 224
    frame_stack: int = 4
    history_len: int = 10
    max_steps: int = 100                # per word search
    upscale_factor: float = 1.1
    min_box_side: float = 8.0
    canvas_margin_fraction: float = 0.25
    max_searches: int = 8               # word searches per image

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ConfigError(f"env.alpha must be in (0, 1), got {self.alpha}")
        if self.frame_stack < 1:
            raise ConfigError(f"env.frame_stack must be >= 1, got {self.frame_stack}")
        if self.history_len < 1:
            raise ConfigError(f"env.history_len must be >= 1, got {self.history_len}")
        if self.max_steps < 1:
            raise ConfigError(f"env.max_steps must be >= 1, got {self.max_steps}")
        if self.upscale_factor < 1:
            raise ConfigError(f"env.upscale_factor must be >= 1, got {self.upscale_factor}")
        if self.view_size < 8:
            raise ConfigError(f"env.view_size too small: {self.view_size}")
        if self.min_box_side <= 0:
            raise ConfigError(f"env.min_box_side must be > 0, got {self.min_box_side}")
        if self.canvas_margin_fraction < 0:
            raise ConfigError("env.canvas_margin_fraction must be >= 0")
        if self.max_searches < 1:
            raise ConfigError(f"env.max_searches must be >= 1, got {self.max_searches}")


@dataclass
class AgentConfig:
    gamma: float = 0.95
    lr: float = 1e-4
    buffer_capacity: int = 20_000
    batch_size: int = 64
    eps_start: float = 1.0
    eps_end: float = 0.1
    eps_anneal_steps: int = 3_000_000
    train_every: int = 4
    warmup_transitions: int = 1000
    target_sync_every: int = 1000       # in gradient updates
    extractor: str = "resnet18"         # "resnet18" | "tiny"
    embedding_dim: int = 512
    hidden_units: int = 1024
    double_dqn: bool = False

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ConfigError(f"agent.gamma must be in (0, 1), got {self.gamma}")
        if self.eps_end > self.eps_start:
            raise ConfigError("agent.eps_end must be <= agent.eps_start")
        if not (0 <= self.eps_end and self.eps_start <= 1):
            raise ConfigError("agent epsilons must lie in [0, 1]")
        if self.buffer_capacity < self.batch_size:
            raise ConfigError("agent.buffer_capacity must be >= agent.batch_size")
        if self.eps_anneal_steps < 1 or self.train_every < 1 or self.target_sync_every < 1:
            raise ConfigError("agent step intervals must be >= 1")
        if self.extractor not in ("resnet18", "tiny"):
            raise ConfigError(
                f"agent.extractor must be 'resnet18' or 'tiny', got {self.extractor!r}"
            )


@dataclass
class AssessorConfig:
    input_size: int = 224
    widths: tuple[int, ...] = (64, 64, 128, 256)
    groups: int = 8
    lr: float = 1e-4
    batch_size: int = 32
    head: str = "linear"                # "linear" (clamped) | "sigmoid"
    checkpoint: str | None = None       # reuse a trained assessor
    crop_manifest: str | None = None    # synthetic crops for online training
    pretrain_epochs: int = 0

    def __post_init__(self):
        self.widths = tuple(self.widths)
        if not 1 <= len(self.widths) <= 4:
            raise ConfigError("assessor.widths must name 1 to 4 residual blocks")
        if any(w % self.groups for w in self.widths):
            raise ConfigError("assessor.groups must divide every block width")
        if self.head not in ("linear", "sigmoid"):
            raise ConfigError(f"assessor.head must be 'linear' or 'sigmoid', got {self.head!r}")
        if self.batch_size < 1 or self.pretrain_epochs < 0:
            raise ConfigError("assessor.batch_size must be >= 1, pretrain_epochs >= 0")

    @property
    def configured(self) -> bool:
        return bool(self.checkpoint or self.crop_manifest)


@dataclass
class EvalConfig:
    iou_threshold: float = 0.5
    max_images: int | None = None       # cap for periodic in-training evaluation

    def __post_init__(self):
        if not 0 < self.iou_threshold <= 1:
            raise ConfigError(f"eval.iou_threshold must be in (0, 1], got {self.iou_threshold}")


def mixable_ratio(r: float) -> bool:
    """True if labeled/unlabeled interleaving can keep |A - r*B| <= 1 at every prefix."""
    if 0 < r <= 1:
        return True
    if not 1 < r <= 2:
        return False
    k = 1.0 / (r - 1.0)
    return abs(k - round(k)) < 1e-9


@dataclass
class RunConfig:
    mode: str = TrainingMode.SUPERVISED.value
    env: EnvConfig = field(default_factory=EnvConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    assessor: AssessorConfig = field(default_factory=AssessorConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    labeled_manifest: str | None = None
    unlabeled_manifest: str | None = None
    eval_manifest: str | None = None
    total_env_steps: int = 15_000_000
    eval_every: int = 100_000
    checkpoint_every: int = 500_000
    checkpoint_dir: str = "runs/textrl"
    seed: int = 0
    semi_ratio: float = 1.0             # labeled episodes per unlabeled episode
    num_threads: int = 1                # 1 = reproducible single-threaded mode
    device: str = "cpu"

    def validate(self) -> RunConfig:
        """Check cross-field invariants. Raises ConfigError."""
        try:
            mode = TrainingMode(self.mode)
        except ValueError:
            raise ConfigError(f"mode must be supervised, weak or semi, got {self.mode!r}")

        if mode is TrainingMode.SUPERVISED:
            if not self.labeled_manifest:
                raise ConfigError("supervised mode requires a labeled manifest")
            if self.unlabeled_manifest:
                raise ConfigError("supervised mode takes no unlabeled manifest")
        if mode in (TrainingMode.WEAK, TrainingMode.SEMI):
            if not self.unlabeled_manifest:
                raise ConfigError(f"{mode.value} mode requires an unlabeled manifest")
            if not self.assessor.configured:
                raise ConfigError(
                    f"{mode.value} mode requires assessor settings "
                    "(assessor.checkpoint or assessor.crop_manifest)"
                )
        if mode is TrainingMode.SEMI and not self.labeled_manifest:
            raise ConfigError("semi mode requires a labeled manifest")
        if mode is TrainingMode.WEAK and self.labeled_manifest:
            raise ConfigError("weak mode takes no labeled manifest")
        if not mixable_ratio(self.semi_ratio):
            raise ConfigError(
                f"semi_ratio must be in (0, 1] or of the form 1 + 1/k (2, 1.5, ...), "
                f"got {self.semi_ratio}"
            )
        if self.total_env_steps < 1 or self.eval_every < 1 or self.checkpoint_every < 1:
            raise ConfigError("step counts must be >= 1")
        return self

    @property
    def training_mode(self) -> TrainingMode:
        return TrainingMode(self.mode)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["assessor"]["widths"] = list(self.assessor.widths)
        return d


_SECTIONS = {
    "env": EnvConfig,
    "agent": AgentConfig,
    "assessor": AssessorConfig,
    "eval": EvalConfig,
}

PROFILES: dict[str, dict[str, Any]] = {
    "full": {},
    "desk": {
        "env": {"view_size": 64, "min_box_side": 4.0},
        "agent": {
            "extractor": "tiny",
            "embedding_dim": 64,
            "eps_anneal_steps": 50_000,
            "buffer_capacity": 10_000,
        },
        "assessor": {"input_size": 64},
        "total_env_steps": 200_000,
        "eval_every": 20_000,
        "checkpoint_every": 50_000,
    },
}


# ── Dict plumbing ──────────────────────────────────────────────────────


def merge_dicts(base: dict[str, Any], top: dict[str, Any]) -> dict[str, Any]:
    """Recursive merge; values in ``top`` win."""
    out = copy.deepcopy(base)
    for key, value in top.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = merge_dicts(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _parse_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def parse_overrides(items: list[str]) -> dict[str, Any]:
    """Turn ``["agent.lr=0.001", "mode=weak"]`` into a nested dict."""
    nested: dict[str, Any] = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value: {item!r}")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        cursor = nested
        for part in parts[:-1]:
            cursor = cursor.setdefault(part, {})
        cursor[parts[-1]] = _parse_value(raw.strip())
    return nested


def _build_section(cls, values: dict[str, Any], name: str):
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown {name} keys: {sorted(unknown)}")
    try:
        return cls(**values)
    except TypeError as e:
        raise ConfigError(f"bad {name} section: {e}")


def run_config_from_dict(d: dict[str, Any]) -> RunConfig:
    top_known = {f.name for f in fields(RunConfig)}
    unknown = set(d) - top_known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")

    kwargs: dict[str, Any] = {}
    for key, value in d.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"config section {key!r} must be an object")
            kwargs[key] = _build_section(_SECTIONS[key], value, key)
        else:
            kwargs[key] = value
    return RunConfig(**kwargs)


# ── Loading / saving ───────────────────────────────────────────────────


def read_config_file(path: str | Path) -> dict[str, Any]:
    p = Path(path)
    try:
        with open(p) as f:
            data = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {p}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {p} is not valid JSON: {e}")
    if not isinstance(data, dict):
        raise ConfigError(f"config file {p} must hold a JSON object")
    return data


def load_run_config(
    path: str | Path | None = None,
    profile: str | None = None,
    overrides: dict[str, Any] | None = None,
    validate: bool = True,
) -> RunConfig:
    """Resolve a RunConfig from profile, config file and flag overrides."""
    resolved: dict[str, Any] = {}
    if profile:
        if profile not in PROFILES:
            raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
        resolved = merge_dicts(resolved, PROFILES[profile])

    file_values = read_config_file(path) if path else {}
    resolved = merge_dicts(resolved, file_values)
    resolved = merge_dicts(resolved, overrides or {})

    if "seed" not in resolved and os.environ.get(SEED_ENV_VAR):
        try:
            resolved["seed"] = int(os.environ[SEED_ENV_VAR])
        except ValueError:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer")

    cfg = run_config_from_dict(resolved)
    if validate:
        cfg.validate()
    logger.debug(f"Resolved config: profile={profile} file={path} seed={cfg.seed}")
    return cfg


def save_run_config(cfg: RunConfig, path: str | Path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with open(p, "w") as f:
        json.dump(cfg.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    return p
