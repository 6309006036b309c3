"""
Greedy evaluation episodes and the process pool that runs them.
"""

import logging
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

import torch

from crossing_sim.seeds import derive_seed
from simulator.env import CrossingEnv, NonPolicyParams
from simulator.records import EpisodeRecord
from simulator.scenario import ScenarioSpec, Trial

from .checkpoints import Checkpoint, load_checkpoint

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EpisodeTask:
    index: int
    spec: ScenarioSpec
    params: NonPolicyParams
    seed: int


def greedy_rollout(
    checkpoint: Checkpoint,
    spec: ScenarioSpec,
    params: NonPolicyParams,
    seed: int,
    episode: int = 0,
) -> EpisodeRecord:
    """Argmax-action episode with the full tick log"""
    env = CrossingEnv(variant=checkpoint.variant, config=checkpoint.env_config, record=True)
    checkpoint.check_actions(env.actions.to_list())
    obs, _ = env.reset(seed=seed, options={"scenario": spec, "params": params})
    done = False
    while not done:
        obs, _, terminated, truncated, _ = env.step(checkpoint.act(obs))
        done = terminated or truncated
    record = env.record
    record.episode = episode
    return record


def episode_tasks(
    trials: Iterable[Trial],
    params: NonPolicyParams,
    master_seed: int,
    stream: str = "eval",
) -> List[EpisodeTask]:
    return [
        EpisodeTask(trial.index, trial.spec, params, derive_seed(master_seed, stream, trial.index))
        for trial in trials
    ]


_worker_checkpoint: Optional[Checkpoint] = None


def _init_worker(path: str) -> None:
    global _worker_checkpoint
    torch.set_num_threads(1)
    _worker_checkpoint = load_checkpoint(path)


def _run_task(task: EpisodeTask) -> EpisodeRecord:
    return greedy_rollout(_worker_checkpoint, task.spec, task.params, task.seed, task.index)


def run_episodes(
    checkpoint_path: Path,
    tasks: Sequence[EpisodeTask],
    workers: int = 1,
    checkpoint: Optional[Checkpoint] = None,
) -> List[EpisodeRecord]:
    """Run every task and return records in task order"""
    if workers <= 1 or len(tasks) < 2:
        checkpoint = checkpoint or load_checkpoint(checkpoint_path)
        return [greedy_rollout(checkpoint, t.spec, t.params, t.seed, t.index) for t in tasks]

    chunksize = max(1, len(tasks) // (workers * 4))
    logger.debug(f"Running {len(tasks)} episodes on {workers} workers")
    with ProcessPoolExecutor(
        max_workers=workers,
        mp_context=multiprocessing.get_context("spawn"),
        initializer=_init_worker,
        initargs=(str(checkpoint_path),),
    ) as executor:
        return list(executor.map(_run_task, tasks, chunksize=chunksize))
