"""
Versioned policy checkpoints.

A checkpoint is a ``torch.save`` dict holding a header (magic, format version,
action speeds, observation layout hash, variant) next to the network weights,
the frozen observation normalizer and the configs used for training. Only
plain containers and tensors are stored so files load with
``weights_only=True``.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Sequence

import numpy as np
import torch

from simulator.env import ActionMode, ActionSet, EnvConfig, Variant, observation_layout_hash

from .exceptions import CheckpointError
from .ppo import PolicyNet, RunningNormalizer, TrainConfig

logger = logging.getLogger(__name__)

MAGIC = "PEDXCKPT"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    policy: PolicyNet
    normalizer: RunningNormalizer
    variant: Variant
    actions: ActionSet
    env_config: EnvConfig
    train_config: Dict
    seed: int
    iteration: int
    path: Optional[Path] = None

    def act(self, obs: np.ndarray) -> int:
        """Greedy action for a single raw observation"""
        normalized = self.normalizer.normalize(np.asarray(obs)[None])
        return int(self.policy.greedy_actions(torch.as_tensor(normalized))[0])

    def act_batch(self, obs: np.ndarray) -> np.ndarray:
        normalized = self.normalizer.normalize(np.asarray(obs))
        return self.policy.greedy_actions(torch.as_tensor(normalized)).numpy()

    def check_actions(self, actions: Sequence[float]) -> None:
        if list(actions) != self.actions.to_list():
            raise CheckpointError(
                f"Checkpoint action set {self.actions.to_list()} does not match "
                f"environment action set {list(actions)}"
            )


def save_checkpoint(
    path: Path,
    policy: PolicyNet,
    normalizer: RunningNormalizer,
    variant,
    actions: ActionSet,
    env_config: EnvConfig,
    train_config: TrainConfig,
    seed: int,
    iteration: int,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "magic": MAGIC,
        "format_version": FORMAT_VERSION,
        "variant": Variant.parse(variant).value,
        "actions": actions.to_list(),
        "action_mode": actions.mode.value,
        "observation_layout": observation_layout_hash(),
        "obs_size": policy.obs_size,
        "hidden_sizes": list(policy.hidden_sizes),
        "state_dict": policy.state_dict(),
        "normalizer": normalizer.state_dict(),
        "env_config": env_config.to_dict(),
        "train_config": train_config.to_dict(),
        "seed": int(seed),
        "iteration": int(iteration),
    }
    torch.save(payload, path)
    logger.info(f"Saved checkpoint {path} (iteration {iteration})")
    return path


def load_checkpoint(path: Path, actions: Optional[Sequence[float]] = None) -> Checkpoint:
    """Load and validate a checkpoint; missing files raise FileNotFoundError"""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as e:
        raise CheckpointError(f"Could not read checkpoint {path}: {e}") from e

    if not isinstance(payload, dict) or payload.get("magic") != MAGIC:
        raise CheckpointError(f"{path} is not a crossing policy checkpoint")
    if payload.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"Unsupported checkpoint format {payload.get('format_version')} (expected {FORMAT_VERSION})"
        )
    if payload.get("observation_layout") != observation_layout_hash():
        raise CheckpointError("Checkpoint was trained on a different observation layout")

    action_set = ActionSet(tuple(payload["actions"]), ActionMode(payload.get("action_mode", "with_wait")))
    policy = PolicyNet(payload["obs_size"], len(action_set), payload["hidden_sizes"])
    try:
        policy.load_state_dict(payload["state_dict"])
    except RuntimeError as e:
        raise CheckpointError(f"Checkpoint weights do not fit the network: {e}") from e
    policy.eval()

    checkpoint = Checkpoint(
        policy=policy,
        normalizer=RunningNormalizer.from_state(payload["normalizer"]),
        variant=Variant.parse(payload["variant"]),
        actions=action_set,
        env_config=EnvConfig.from_dict(payload["env_config"]),
        train_config=payload["train_config"],
        seed=payload["seed"],
        iteration=payload["iteration"],
        path=path,
    )
    if actions is not None:
        checkpoint.check_actions(actions)
    logger.debug(f"Loaded {checkpoint.variant.value} checkpoint from {path}")
    return checkpoint
