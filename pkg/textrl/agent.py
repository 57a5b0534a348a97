"""
Deep Q-learning agent.

QNetwork: a grayscale frame-stack feature extractor (ResNet-18 at full
scale, a 4-layer CNN at desk scale) whose embedding is concatenated with
the flattened action history and fed through two 1024-unit hidden layers
to 9 Q-values.

Training follows the usual DQN recipe: epsilon-greedy exploration with
linear annealing, a FIFO replay buffer sampled uniformly with
replacement, TD targets from a periodically synced target network and
a mean-squared TD-error loss optimized with Adam.
"""

from __future__ import annotations

import copy
import logging
from contextlib import contextmanager
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Iterator

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .checkpoints import load_weights, read_archive, resolve_device, write_archive
from .config import AgentConfig, EnvConfig
from .types import NUM_ACTIONS, Transition

logger = logging.getLogger("textrl.agent")

CHECKPOINT_KIND = "textrl-agent"


# ── Networks ───────────────────────────────────────────────────────────


class TinyExtractor(nn.Module):
    """Four strided conv layers; the desk-scale feature extractor."""

    def __init__(self, in_channels: int, embedding_dim: int = 64):
        super().__init__()
        self.features = nn.Sequential(
            nn.Conv2d(in_channels, 32, kernel_size=5, stride=2, padding=2),
            nn.ReLU(),
            nn.Conv2d(32, 32, kernel_size=3, stride=2, padding=1),
            nn.ReLU(),
            nn.Conv2d(32, 64, kernel_size=3, stride=2, padding=1),
            nn.ReLU(),
            nn.Conv2d(64, 64, kernel_size=3, stride=2, padding=1),
            nn.ReLU(),
            nn.AdaptiveAvgPool2d((2, 2)),
            nn.Flatten(),
        )
        self.fc = nn.Linear(64 * 4, embedding_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.relu(self.fc(self.features(x)))


def resnet18_extractor(in_channels: int, embedding_dim: int = 512) -> nn.Module:
    """torchvision ResNet-18 (random init) taking ``in_channels`` grayscale frames."""
    from torchvision.models import resnet18

    net = resnet18(weights=None)
    net.conv1 = nn.Conv2d(in_channels, 64, kernel_size=7, stride=2, padding=3, bias=False)
    net.fc = nn.Linear(net.fc.in_features, embedding_dim)
    return nn.Sequential(net, nn.ReLU())


class QNetwork(nn.Module):
    def __init__(
        self,
        frame_stack: int = 4,
        history_dim: int = 10 * NUM_ACTIONS,
        extractor: str = "tiny",
        embedding_dim: int = 64,
        hidden_units: int = 1024,
        n_actions: int = NUM_ACTIONS,
    ):
        super().__init__()
        if extractor == "resnet18":
            self.extractor = resnet18_extractor(frame_stack, embedding_dim)
        elif extractor == "tiny":
            self.extractor = TinyExtractor(frame_stack, embedding_dim)
        else:
            raise ValueError(f"unknown extractor {extractor!r}")
        self.frame_stack = frame_stack
        self.history_dim = history_dim
        self.head = nn.Sequential(
            nn.Linear(embedding_dim + history_dim, hidden_units),
            nn.ReLU(),
            nn.Linear(hidden_units, hidden_units),
            nn.ReLU(),
            nn.Linear(hidden_units, n_actions),
        )

    @classmethod
    def from_config(cls, env_cfg: EnvConfig, agent_cfg: AgentConfig) -> QNetwork:
        return cls(
            frame_stack=env_cfg.frame_stack,
            history_dim=env_cfg.history_len * NUM_ACTIONS,
            extractor=agent_cfg.extractor,
            embedding_dim=agent_cfg.embedding_dim,
            hidden_units=agent_cfg.hidden_units,
        )

    def forward(self, frames: torch.Tensor, history: torch.Tensor) -> torch.Tensor:
        if frames.shape[1] != self.frame_stack or history.shape[1] != self.history_dim:
            raise ValueError(
                f"observation shape mismatch: frames {tuple(frames.shape)}, "
                f"history {tuple(history.shape)}"
            )
        embedding = self.extractor(frames)
        return self.head(torch.cat([embedding, history], dim=1))


def _device_of(module: nn.Module) -> torch.device:
    return next(module.parameters()).device


def _dtype_of(module: nn.Module) -> torch.dtype:
    return next(module.parameters()).dtype


@contextmanager
def inference_mode(module: nn.Module) -> Iterator[nn.Module]:
    """
    Eval mode and no gradients for the duration, previous mode restored after.
    Forward passes inside leave BatchNorm running statistics untouched.
    """
    was_training = module.training
    module.eval()
    try:
        with torch.no_grad():
            yield module
    finally:
        module.train(was_training)


def q_values(q_network: QNetwork, obs: dict[str, np.ndarray]) -> np.ndarray:
    device, dtype = _device_of(q_network), _dtype_of(q_network)
    frames = torch.as_tensor(_frames_as_float(obs["frames"]), dtype=dtype, device=device)
    history = torch.as_tensor(obs["history"], dtype=dtype, device=device)
    with inference_mode(q_network):
        q = q_network(frames.unsqueeze(0), history.unsqueeze(0))
    return q.squeeze(0).cpu().numpy()


# ── Exploration ────────────────────────────────────────────────────────


def epsilon_at(step: int, cfg: AgentConfig) -> float:
    """Linear anneal from eps_start (step 0) to eps_end (eps_anneal_steps), then flat."""
    if step < 0:
        raise ValueError(f"step must be >= 0, got {step}")
    if step >= cfg.eps_anneal_steps:
        return cfg.eps_end
    frac = step / cfg.eps_anneal_steps
    return cfg.eps_start + (cfg.eps_end - cfg.eps_start) * frac


def select_action(
    q_network: QNetwork,
    obs: dict[str, np.ndarray],
    eps: float,
    rng: np.random.Generator,
) -> int:
    """Epsilon-greedy; greedy ties go to the lowest action index."""
    if rng.random() < eps:
        return int(rng.integers(NUM_ACTIONS))
    return int(np.argmax(q_values(q_network, obs)))


# ── Replay ─────────────────────────────────────────────────────────────


class ReplayBuffer:
    """
    Fixed-capacity FIFO store, sampled uniformly with replacement.

    Iteration yields items oldest first.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._items: list[Any] = []
        self._next = 0

    def push(self, item: Any):
        if len(self._items) < self.capacity:
            self._items.append(item)
        else:
            self._items[self._next] = item
        self._next = (self._next + 1) % self.capacity

    def sample(self, n: int, rng: np.random.Generator) -> list[Any]:
        if len(self._items) < n:
            raise RuntimeError(
                f"replay buffer holds {len(self._items)} transitions, cannot sample {n}"
            )
        idx = rng.integers(0, len(self._items), size=n)
        return [self._items[i] for i in idx]

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self) -> Iterator[Any]:
        if len(self._items) < self.capacity:
            return iter(list(self._items))
        return iter(self._items[self._next:] + self._items[:self._next])


def compress_observation(obs: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Frames to uint8 (1/255 resolution) so full-size buffers fit in memory."""
    return {
        "frames": np.round(obs["frames"] * 255.0).astype(np.uint8),
        "history": obs["history"].astype(np.uint8),
    }


def _frames_as_float(frames: np.ndarray) -> np.ndarray:
    if frames.dtype == np.uint8:
        return frames.astype(np.float32) / 255.0
    return frames


@dataclass
class Batch:
    frames: torch.Tensor
    history: torch.Tensor
    actions: torch.Tensor
    rewards: torch.Tensor
    next_frames: torch.Tensor
    next_history: torch.Tensor
    terminals: torch.Tensor

    @classmethod
    def from_transitions(
        cls,
        transitions: list[Transition],
        device: str | torch.device = "cpu",
        dtype: torch.dtype = torch.float32,
    ) -> Batch:
        if not transitions:
            raise ValueError("empty batch")

        def stack(key: str, nxt: bool) -> torch.Tensor:
            arrays = [
                (t.next_observation if nxt else t.observation)[key] for t in transitions
            ]
            if key == "frames":
                arrays = [_frames_as_float(a) for a in arrays]
            return torch.as_tensor(np.stack(arrays), dtype=dtype, device=device)

        return cls(
            frames=stack("frames", False),
            history=stack("history", False),
            actions=torch.as_tensor(
                [t.action for t in transitions], dtype=torch.long, device=device
            ),
            rewards=torch.as_tensor([t.reward for t in transitions], dtype=dtype, device=device),
            next_frames=stack("frames", True),
            next_history=stack("history", True),
            terminals=torch.as_tensor([t.terminal for t in transitions], dtype=torch.bool,
                                      device=device),
        )


# ── Learning ───────────────────────────────────────────────────────────


def td_targets(
    batch: Batch,
    target_network: QNetwork,
    gamma: float,
    online_network: QNetwork | None = None,
) -> torch.Tensor:
    """
    ``r`` for terminal transitions, ``r + gamma * max_a Q_target(s', a)`` otherwise.

    With ``online_network`` given, the next action is chosen by the online
    network and evaluated by the target network (double DQN).
    """
    with inference_mode(target_network):
        next_q = target_network(batch.next_frames, batch.next_history)
    if online_network is not None:
        with inference_mode(online_network):
            best = online_network(batch.next_frames, batch.next_history).argmax(dim=1)
        next_v = next_q.gather(1, best.unsqueeze(1)).squeeze(1)
    else:
        next_v = next_q.max(dim=1).values
    return torch.where(batch.terminals, batch.rewards, batch.rewards + gamma * next_v)


def train_step(
    q_network: QNetwork,
    target_network: QNetwork,
    optimizer: torch.optim.Optimizer,
    batch: Batch,
    cfg: AgentConfig,
) -> float:
    """
    One gradient step on the mean squared TD error; returns the batch loss.

    The online network is in train mode only for the gradient pass and is
    left in eval mode afterwards.
    """
    online = q_network if cfg.double_dqn else None
    targets = td_targets(batch, target_network, cfg.gamma, online_network=online)
    q_network.train()
    try:
        q = q_network(batch.frames, batch.history)
        q = q.gather(1, batch.actions.unsqueeze(1)).squeeze(1)
        loss = F.mse_loss(q, targets)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
    finally:
        q_network.eval()
    return float(loss.item())


class DQNAgent:
    """
    Online network, target network, optimizer and replay buffer.

    Usage::

        agent = DQNAgent(env_cfg, agent_cfg)
        action = agent.act(obs, epsilon_at(agent.global_step, agent_cfg), rng)
        agent.remember(Transition(obs, action, reward, next_obs, done))
        if agent.ready_to_train():
            loss = agent.learn(rng)
    """

    def __init__(self, env_cfg: EnvConfig, agent_cfg: AgentConfig, device: str = "cpu"):
        self.env_cfg = env_cfg
        self.cfg = agent_cfg
        self.device = resolve_device(device)
        # both networks rest in eval mode; train_step switches modes itself
        self.q_network = QNetwork.from_config(env_cfg, agent_cfg).to(self.device).eval()
        self.target_network = copy.deepcopy(self.q_network)
        self.optimizer = torch.optim.Adam(self.q_network.parameters(), lr=agent_cfg.lr)
        self.buffer = ReplayBuffer(agent_cfg.buffer_capacity)
        self.global_step = 0
        self.updates = 0

    # ── Acting ─────────────────────────────────────────────────────────

    def act(self, obs: dict[str, np.ndarray], eps: float, rng: np.random.Generator) -> int:
        return select_action(self.q_network, obs, eps, rng)

    def remember(self, transition: Transition):
        self.buffer.push(Transition(
            observation=compress_observation(transition.observation),
            action=int(transition.action),
            reward=float(transition.reward),
            next_observation=compress_observation(transition.next_observation),
            terminal=bool(transition.terminal),
        ))

    # ── Learning ───────────────────────────────────────────────────────

    def ready_to_train(self) -> bool:
        return (
            self.global_step % self.cfg.train_every == 0
            and len(self.buffer) >= max(self.cfg.warmup_transitions, self.cfg.batch_size)
        )

    def learn(self, rng: np.random.Generator) -> float:
        batch = Batch.from_transitions(
            self.buffer.sample(self.cfg.batch_size, rng), device=self.device
        )
        return self.train_on(batch)

    def train_on(self, batch: Batch) -> float:
        loss = train_step(self.q_network, self.target_network, self.optimizer, batch, self.cfg)
        self.updates += 1
        if self.updates % self.cfg.target_sync_every == 0:
            self.sync_target()
        return loss

    def sync_target(self):
        self.target_network.load_state_dict(self.q_network.state_dict())
        logger.debug(f"Target network synced at update {self.updates}")

    # ── Checkpoints ────────────────────────────────────────────────────

    def save(self, path: str | Path, run_config: dict[str, Any] | None = None) -> Path:
        return write_archive(path, CHECKPOINT_KIND, {
            "env_config": asdict(self.env_cfg),
            "agent_config": asdict(self.cfg),
            "run_config": run_config,
            "q_network": self.q_network.state_dict(),
            "target_network": self.target_network.state_dict(),
            "optimizer": self.optimizer.state_dict(),
            "global_step": self.global_step,
            "updates": self.updates,
        })

    @classmethod
    def load(cls, path: str | Path, device: str = "cpu") -> DQNAgent:
        archive = read_archive(path, CHECKPOINT_KIND, device)
        agent = cls(
            EnvConfig(**archive["env_config"]),
            AgentConfig(**archive["agent_config"]),
            device=device,
        )
        load_weights(agent.q_network, archive["q_network"], path, "Q-network")
        load_weights(agent.target_network, archive["target_network"], path, "target network")
        agent.optimizer.load_state_dict(archive["optimizer"])
        agent.global_step = int(archive["global_step"])
        agent.updates = int(archive["updates"])
        agent.run_config = archive.get("run_config")
        logger.info(f"[CKPT] loaded agent from {path} (step {agent.global_step})")
        return agent
