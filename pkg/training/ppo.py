"""
Proximal Policy Optimization for the crossing environment.

The policy is a small tanh MLP with a categorical head over target walking
speeds and a state-value head. Observations are normalized with running
statistics that are frozen into checkpoints. Rollouts are gathered from a
pool of environments stepped in lockstep; updates are single-threaded.
"""

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import torch
from torch import nn
from torch.distributions import Categorical

from crossing_sim.seeds import derive_seed
from simulator.env import CrossingEnv, EnvConfig, NonPolicyParams, Variant

from .exceptions import TrainingDivergedError, TrainingError

logger = logging.getLogger(__name__)


NORMALIZER_CLIP = 10.0

LEARNING_CURVE_COLUMNS = (
    "iteration",
    "env_steps",
    "episodes",
    "mean_episode_reward",
    "collision_rate",
    "crossing_rate",
    "timeout_rate",
    "policy_loss",
    "value_loss",
    "entropy",
    "approx_kl",
    "clip_fraction",
)


@dataclass(frozen=True)
class TrainConfig:
    total_env_steps: int = 3_000_000
    rollout_length: int = 2048
    minibatch_size: int = 64
    epochs: int = 10
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip: float = 0.2
    value_coef: float = 0.5
    entropy_coef: float = 0.0
    learning_rate: float = 3e-4
    max_grad_norm: float = 0.5
    num_envs: int = 8
    hidden_sizes: Tuple[int, ...] = (128, 64)
    checkpoint_every: int = 10
    fixed_params: Optional[Dict[str, float]] = None

    def __post_init__(self):
        if not 0 < self.clip < 1:
            raise TrainingError(f"clip must lie in (0, 1), got {self.clip}")
        for name in ("gamma", "gae_lambda"):
            value = getattr(self, name)
            if not 0 < value <= 1:
                raise TrainingError(f"{name} must lie in (0, 1], got {value}")
        for name in ("total_env_steps", "rollout_length", "minibatch_size", "epochs", "num_envs"):
            if getattr(self, name) < 1:
                raise TrainingError(f"{name} must be at least 1, got {getattr(self, name)}")
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if self.fixed_params is not None:
            # validates names and ranges
            NonPolicyParams.from_dict(self.fixed_params)

    @classmethod
    def from_dict(cls, data: Optional[Dict]) -> "TrainConfig":
        try:
            return cls(**(data or {}))
        except TypeError as e:
            raise TrainingError(f"Invalid training configuration: {e}") from e

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["hidden_sizes"] = list(self.hidden_sizes)
        return data

    @property
    def batch_size(self) -> int:
        return self.rollout_length * self.num_envs

    @property
    def iterations(self) -> int:
        return max(1, math.ceil(self.total_env_steps / self.batch_size))


class RunningNormalizer:
    """Running mean/variance of observations (parallel-batch update)"""

    def __init__(self, size: int, epsilon: float = 1e-4):
        self.mean = np.zeros(size, dtype=np.float64)
        self.var = np.ones(size, dtype=np.float64)
        self.count = epsilon
        self.frozen = False

    def update(self, batch: np.ndarray) -> None:
        if self.frozen:
            return
        batch = np.asarray(batch, dtype=np.float64).reshape(-1, self.mean.shape[0])
        batch_mean = batch.mean(axis=0)
        batch_var = batch.var(axis=0)
        batch_count = batch.shape[0]

        delta = batch_mean - self.mean
        total = self.count + batch_count
        self.mean = self.mean + delta * batch_count / total
        m2 = self.var * self.count + batch_var * batch_count + delta ** 2 * self.count * batch_count / total
        self.var = m2 / total
        self.count = total

    def normalize(self, obs: np.ndarray) -> np.ndarray:
        scaled = (np.asarray(obs, dtype=np.float64) - self.mean) / np.sqrt(self.var + 1e-8)
        return np.clip(scaled, -NORMALIZER_CLIP, NORMALIZER_CLIP).astype(np.float32)

    def state_dict(self) -> Dict[str, object]:
        return {"mean": self.mean.tolist(), "var": self.var.tolist(), "count": float(self.count)}

    @classmethod
    def from_state(cls, state: Dict[str, object]) -> "RunningNormalizer":
        normalizer = cls(len(state["mean"]))
        normalizer.mean = np.asarray(state["mean"], dtype=np.float64)
        normalizer.var = np.asarray(state["var"], dtype=np.float64)
        normalizer.count = float(state["count"])
        normalizer.frozen = True
        return normalizer


class PolicyNet(nn.Module):
    """Shared tanh trunk with action-logit and state-value heads"""

    def __init__(self, obs_size: int, n_actions: int, hidden_sizes: Sequence[int] = (128, 64)):
        super().__init__()
        layers: List[nn.Module] = []
        width = obs_size
        for hidden in hidden_sizes:
            layers += [nn.Linear(width, hidden), nn.Tanh()]
            width = hidden
        self.trunk = nn.Sequential(*layers)
        self.logits = nn.Linear(width, n_actions)
        self.value = nn.Linear(width, 1)
        self.obs_size = obs_size
        self.n_actions = n_actions
        self.hidden_sizes = tuple(hidden_sizes)

        for module in self.trunk:
            if isinstance(module, nn.Linear):
                nn.init.orthogonal_(module.weight, gain=math.sqrt(2))
                nn.init.zeros_(module.bias)
        nn.init.orthogonal_(self.logits.weight, gain=0.01)
        nn.init.zeros_(self.logits.bias)
        nn.init.orthogonal_(self.value.weight, gain=1.0)
        nn.init.zeros_(self.value.bias)

    def forward(self, obs: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        features = self.trunk(obs)
        return self.logits(features), self.value(features).squeeze(-1)

    def distribution(self, obs: torch.Tensor) -> Tuple[Categorical, torch.Tensor]:
        logits, value = self(obs)
        return Categorical(logits=logits), value

    @torch.no_grad()
    def greedy_actions(self, obs: torch.Tensor) -> torch.Tensor:
        logits, _ = self(obs)
        return torch.argmax(logits, dim=-1)


@dataclass
class RolloutBuffer:
    """One PPO batch, arrays shaped (rollout_length, num_envs)"""

    observations: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    last_values: np.ndarray
    advantages: Optional[np.ndarray] = None
    returns: Optional[np.ndarray] = None

    @classmethod
    def allocate(cls, steps: int, envs: int, obs_size: int) -> "RolloutBuffer":
        return cls(
            observations=np.zeros((steps, envs, obs_size), dtype=np.float32),
            actions=np.zeros((steps, envs), dtype=np.int64),
            log_probs=np.zeros((steps, envs), dtype=np.float32),
            rewards=np.zeros((steps, envs), dtype=np.float64),
            values=np.zeros((steps, envs), dtype=np.float64),
            dones=np.zeros((steps, envs), dtype=np.float64),
            last_values=np.zeros(envs, dtype=np.float64),
        )

    def __len__(self) -> int:
        return self.rewards.size


def compute_gae(
    rewards: np.ndarray,
    values: np.ndarray,
    dones: np.ndarray,
    last_values,
    gamma: float,
    lam: float,
) -> Tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimation over the leading (time) axis.

    ``dones[t]`` marks that the episode ended after step ``t``; truncated
    episodes are expected to carry their bootstrap value in the reward.
    Returns (advantages, returns).
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    advantages = np.zeros_like(rewards)
    gae = np.zeros_like(rewards[0])
    next_values = np.asarray(last_values, dtype=np.float64)
    for t in reversed(range(rewards.shape[0])):
        nonterminal = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_values * nonterminal - values[t]
        gae = delta + gamma * lam * nonterminal * gae
        advantages[t] = gae
        next_values = values[t]
    return advantages, advantages + values


def clipped_surrogate(ratio: torch.Tensor, advantages: torch.Tensor, clip: float) -> torch.Tensor:
    return torch.min(ratio * advantages, torch.clamp(ratio, 1.0 - clip, 1.0 + clip) * advantages)


def ppo_loss(
    policy: PolicyNet,
    obs: torch.Tensor,
    actions: torch.Tensor,
    old_log_probs: torch.Tensor,
    advantages: torch.Tensor,
    returns: torch.Tensor,
    config: TrainConfig,
) -> Tuple[torch.Tensor, Dict[str, torch.Tensor]]:
    dist, values = policy.distribution(obs)
    log_probs = dist.log_prob(actions)
    ratio = torch.exp(log_probs - old_log_probs)

    policy_loss = -clipped_surrogate(ratio, advantages, config.clip).mean()
    value_loss = ((returns - values) ** 2).mean()
    entropy = dist.entropy().mean()
    loss = policy_loss + config.value_coef * value_loss - config.entropy_coef * entropy

    with torch.no_grad():
        log_ratio = log_probs - old_log_probs
        approx_kl = ((ratio - 1.0) - log_ratio).mean()
        clip_fraction = ((ratio - 1.0).abs() > config.clip).float().mean()
    stats = {
        "policy_loss": policy_loss.detach(),
        "value_loss": value_loss.detach(),
        "entropy": entropy.detach(),
        "approx_kl": approx_kl,
        "clip_fraction": clip_fraction,
    }
    return loss, stats


def ppo_update(
    policy: PolicyNet,
    optimizer: torch.optim.Optimizer,
    buffer: RolloutBuffer,
    config: TrainConfig,
    generator: torch.Generator,
) -> Dict[str, float]:
    if buffer.advantages is None:
        raise TrainingError("Advantages must be computed before the update")

    obs = torch.as_tensor(buffer.observations.reshape(-1, buffer.observations.shape[-1]))
    actions = torch.as_tensor(buffer.actions.reshape(-1))
    old_log_probs = torch.as_tensor(buffer.log_probs.reshape(-1))
    advantages = torch.as_tensor(buffer.advantages.reshape(-1), dtype=torch.float32)
    returns = torch.as_tensor(buffer.returns.reshape(-1), dtype=torch.float32)

    n = obs.shape[0]
    totals: Dict[str, float] = {}
    updates = 0
    for _ in range(config.epochs):
        order = torch.randperm(n, generator=generator)
        for start in range(0, n, config.minibatch_size):
            idx = order[start : start + config.minibatch_size]
            batch_adv = advantages[idx]
            if batch_adv.numel() > 1:
                batch_adv = (batch_adv - batch_adv.mean()) / (batch_adv.std() + 1e-8)

            loss, stats = ppo_loss(
                policy, obs[idx], actions[idx], old_log_probs[idx], batch_adv, returns[idx], config
            )
            if not torch.isfinite(loss):
                diagnostics = {k: float(v) for k, v in stats.items()}
                diagnostics["loss"] = float(loss.detach())
                logger.error(f"Non-finite PPO loss: {diagnostics}")
                raise TrainingDivergedError("PPO loss became non-finite", diagnostics)

            optimizer.zero_grad()
            loss.backward()
            nn.utils.clip_grad_norm_(policy.parameters(), config.max_grad_norm)
            optimizer.step()

            for key, value in stats.items():
                totals[key] = totals.get(key, 0.0) + float(value)
            updates += 1

    return {key: value / updates for key, value in totals.items()}


class EnvPool:
    """Environments stepped in lockstep, each with its own RNG stream"""

    def __init__(
        self,
        variant,
        count: int,
        env_config: Optional[EnvConfig] = None,
        fixed_params: Optional[NonPolicyParams] = None,
    ):
        self.envs = [CrossingEnv(variant=variant, config=env_config) for _ in range(count)]
        self.fixed_params = fixed_params
        self.observations: Optional[np.ndarray] = None
        self.episode_returns = np.zeros(count)

    def __len__(self) -> int:
        return len(self.envs)

    @property
    def actions(self):
        return self.envs[0].actions

    def _options(self):
        return {"params": self.fixed_params} if self.fixed_params is not None else None

    def reset(self, seed: int) -> np.ndarray:
        self.observations = np.stack(
            [
                env.reset(seed=derive_seed(seed, "train", i), options=self._options())[0]
                for i, env in enumerate(self.envs)
            ]
        )
        self.episode_returns[:] = 0.0
        return self.observations


@dataclass
class EpisodeStats:
    returns: List[float] = field(default_factory=list)
    outcomes: List[str] = field(default_factory=list)

    def rate(self, outcome: str) -> float:
        if not self.outcomes:
            return math.nan
        return sum(o == outcome for o in self.outcomes) / len(self.outcomes)

    @property
    def mean_return(self) -> float:
        return float(np.mean(self.returns)) if self.returns else math.nan


def collect_rollouts(
    policy: PolicyNet,
    normalizer: RunningNormalizer,
    pool: EnvPool,
    config: TrainConfig,
    generator: torch.Generator,
) -> Tuple[RolloutBuffer, EpisodeStats]:
    """Run every env for ``rollout_length`` decisions with the stochastic policy"""
    steps, count = config.rollout_length, len(pool)
    buffer = RolloutBuffer.allocate(steps, count, policy.obs_size)
    stats = EpisodeStats()

    for t in range(steps):
        normalizer.update(pool.observations)
        obs = normalizer.normalize(pool.observations)
        with torch.no_grad():
            logits, values = policy(torch.as_tensor(obs))
            if not torch.isfinite(logits).all():
                raise TrainingDivergedError("Policy produced non-finite logits", {"step": t})
            probs = torch.softmax(logits, dim=-1)
            actions = torch.multinomial(probs, 1, generator=generator).squeeze(-1)
            log_probs = torch.log_softmax(logits, dim=-1).gather(1, actions[:, None]).squeeze(-1)

        buffer.observations[t] = obs
        buffer.actions[t] = actions.numpy()
        buffer.log_probs[t] = log_probs.numpy()
        buffer.values[t] = values.numpy()

        for i, env in enumerate(pool.envs):
            next_obs, reward, terminated, truncated, info = env.step(int(actions[i]))
            pool.episode_returns[i] += reward
            if truncated and not terminated:
                # timeout: bootstrap from the value of the final observation
                with torch.no_grad():
                    _, final_value = policy(torch.as_tensor(normalizer.normalize(next_obs[None])))
                reward += config.gamma * float(final_value[0])
            buffer.rewards[t, i] = reward
            if terminated or truncated:
                buffer.dones[t, i] = 1.0
                stats.returns.append(float(pool.episode_returns[i]))
                stats.outcomes.append(info["status"])
                pool.episode_returns[i] = 0.0
                next_obs, _ = env.reset(options=pool._options())
            pool.observations[i] = next_obs

    with torch.no_grad():
        _, last_values = policy(torch.as_tensor(normalizer.normalize(pool.observations)))
    buffer.last_values = last_values.numpy().astype(np.float64)
    buffer.advantages, buffer.returns = compute_gae(
        buffer.rewards, buffer.values, buffer.dones, buffer.last_values, config.gamma, config.gae_lambda
    )
    return buffer, stats


@dataclass
class TrainResult:
    policy: PolicyNet
    normalizer: RunningNormalizer
    learning_curve: pd.DataFrame
    checkpoint_path: Optional[Path] = None
    iterations: int = 0
    env_steps: int = 0


def train(
    variant,
    config: Optional[TrainConfig] = None,
    seed: int = 0,
    env_config: Optional[EnvConfig] = None,
    output_dir: Optional[Path] = None,
    progress: Optional[Callable[[Dict[str, float]], None]] = None,
) -> TrainResult:
    """Alternate rollout collection and PPO updates until the step budget is spent"""
    from .checkpoints import save_checkpoint

    variant = Variant.parse(variant)
    config = config or TrainConfig()
    env_config = env_config or EnvConfig()
    fixed = NonPolicyParams.from_dict(config.fixed_params) if config.fixed_params else None

    torch.manual_seed(seed)
    generator = torch.Generator().manual_seed(seed)
    pool = EnvPool(variant, config.num_envs, env_config, fixed)
    pool.reset(seed)

    obs_size = pool.envs[0].observation_space.shape[0]
    policy = PolicyNet(obs_size, len(pool.actions), config.hidden_sizes)
    optimizer = torch.optim.Adam(policy.parameters(), lr=config.learning_rate, eps=1e-5)
    normalizer = RunningNormalizer(obs_size)

    output_dir = Path(output_dir) if output_dir else None
    curve_path = output_dir / "learning_curve.csv" if output_dir else None
    rows: List[Dict[str, float]] = []
    episodes = 0
    env_steps = 0
    checkpoint_path = None

    logger.info(
        f"Training {variant.value}: {config.iterations} iterations of "
        f"{config.batch_size} steps, seed {seed}"
    )
    for iteration in range(1, config.iterations + 1):
        started = time.monotonic()
        buffer, stats = collect_rollouts(policy, normalizer, pool, config, generator)
        losses = ppo_update(policy, optimizer, buffer, config, generator)
        env_steps += len(buffer)
        episodes += len(stats.returns)

        row = {
            "iteration": iteration,
            "env_steps": env_steps,
            "episodes": episodes,
            "mean_episode_reward": stats.mean_return,
            "collision_rate": stats.rate("collision"),
            "crossing_rate": stats.rate("crossed"),
            "timeout_rate": stats.rate("timeout"),
            **losses,
        }
        rows.append(row)
        logger.info(
            f"iter {iteration}/{config.iterations} steps={env_steps} "
            f"reward={row['mean_episode_reward']:.3f} collisions={row['collision_rate']:.3f} "
            f"({time.monotonic() - started:.1f}s)"
        )
        if progress:
            progress(row)

        if output_dir:
            learning_curve_frame(rows).to_csv(curve_path, index=False, float_format="%.6f")
            if iteration % config.checkpoint_every == 0 and iteration != config.iterations:
                save_checkpoint(
                    output_dir / "checkpoints" / f"iter_{iteration:05d}.pt",
                    policy, normalizer, variant, pool.actions, env_config, config, seed, iteration,
                )

    normalizer.frozen = True
    if output_dir:
        checkpoint_path = save_checkpoint(
            output_dir / "policy.pt",
            policy, normalizer, variant, pool.actions, env_config, config, seed, config.iterations,
        )

    return TrainResult(
        policy=policy,
        normalizer=normalizer,
        learning_curve=learning_curve_frame(rows),
        checkpoint_path=checkpoint_path,
        iterations=config.iterations,
        env_steps=env_steps,
    )


def learning_curve_frame(rows: List[Dict[str, float]]) -> pd.DataFrame:
    return pd.DataFrame(rows, columns=list(LEARNING_CURVE_COLUMNS))
