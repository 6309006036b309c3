"""
Episode records and tick logs.

One row per 0.1 s tick. Vehicle columns are empty (NaN) for vehicles that
are not present.
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Optional

import pandas as pd

from .scenario import ScenarioSpec

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.6f"

TICK_LOG_COLUMNS = (
    "episode",
    "t",
    "ped_position",
    "ped_speed",
    "target_speed",
    "v1_d",
    "v1_v",
    "v1_d_hat",
    "v1_v_hat",
    "v2_d",
    "v2_v",
    "v2_d_hat",
    "v2_v_hat",
    "r_arrival",
    "r_collision",
    "r_effort",
    "r_looming",
    "r_clamp",
    "reward",
)


class Outcome(str, Enum):
    CROSSED = "crossed"
    COLLISION = "collision"
    TIMEOUT = "timeout"
    RUNNING = "running"


@dataclass
class RewardBreakdown:
    """Reward components; ``clamp`` is the adjustment made by the clip"""

    arrival: float = 0.0
    collision: float = 0.0
    effort: float = 0.0
    looming: float = 0.0
    clamp: float = 0.0

    @property
    def total(self) -> float:
        return self.arrival + self.collision + self.effort + self.looming + self.clamp

    def add(self, other: "RewardBreakdown") -> None:
        self.arrival += other.arrival
        self.collision += other.collision
        self.effort += other.effort
        self.looming += other.looming
        self.clamp += other.clamp

    def to_dict(self) -> Dict[str, float]:
        data = asdict(self)
        data["total"] = self.total
        return data


@dataclass
class TickRow:
    t: float
    ped_position: float
    ped_speed: float
    target_speed: float
    v1_d: float = math.nan
    v1_v: float = math.nan
    v1_d_hat: float = math.nan
    v1_v_hat: float = math.nan
    v2_d: float = math.nan
    v2_v: float = math.nan
    v2_d_hat: float = math.nan
    v2_v_hat: float = math.nan
    r_arrival: float = 0.0
    r_collision: float = 0.0
    r_effort: float = 0.0
    r_looming: float = 0.0
    r_clamp: float = 0.0

    @property
    def reward(self) -> float:
        return self.r_arrival + self.r_collision + self.r_effort + self.r_looming + self.r_clamp


@dataclass
class EpisodeRecord:
    """Everything one episode produced, enough to recompute every metric"""

    spec: ScenarioSpec
    params: Dict[str, float]
    variant: str
    seed: Optional[int] = None
    episode: int = 0
    outcome: Outcome = Outcome.RUNNING
    ticks: List[TickRow] = field(default_factory=list)
    rewards: RewardBreakdown = field(default_factory=RewardBreakdown)
    decisions: int = 0

    @property
    def total_reward(self) -> float:
        return self.rewards.total

    @property
    def duration(self) -> float:
        return self.ticks[-1].t if self.ticks else 0.0

    @property
    def gap_onset_time(self) -> float:
        return self.spec.gap_onset_time

    def times(self) -> List[float]:
        return [row.t for row in self.ticks]

    def positions(self) -> List[float]:
        return [row.ped_position for row in self.ticks]

    def speeds(self) -> List[float]:
        return [row.ped_speed for row in self.ticks]

    def vehicle_speeds(self, vehicle: int) -> List[float]:
        column = f"v{vehicle}_v"
        return [getattr(row, column) for row in self.ticks]

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for row in self.ticks:
            data = asdict(row)
            data["reward"] = row.reward
            data["episode"] = self.episode
            rows.append(data)
        return pd.DataFrame(rows, columns=list(TICK_LOG_COLUMNS))

    def summary(self) -> Dict[str, object]:
        key = self.spec.condition_key
        return {
            "episode": self.episode,
            "seed": self.seed,
            "variant": self.variant,
            "v0": key.v0,
            "tau0": key.tau0,
            "yielding": key.yielding,
            "ehmi": key.ehmi,
            "night": key.night,
            "outcome": self.outcome.value,
            "duration": self.duration,
            "total_reward": self.total_reward,
            **{f"param_{k}": v for k, v in self.params.items()},
        }


def tick_log_frame(records: Iterable[EpisodeRecord]) -> pd.DataFrame:
    frames = [record.to_frame() for record in records]
    if not frames:
        return pd.DataFrame(columns=list(TICK_LOG_COLUMNS))
    return pd.concat(frames, ignore_index=True)


def write_tick_log(records: Iterable[EpisodeRecord], path: Path) -> Path:
    """Write the concatenated tick logs with the fixed header"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = tick_log_frame(records)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    logger.debug(f"Wrote {len(frame)} tick rows to {path}")
    return path


def read_tick_log(path: Path) -> pd.DataFrame:
    frame = pd.read_csv(path)
    missing = [c for c in TICK_LOG_COLUMNS if c not in frame.columns]
    if missing:
        raise ValueError(f"Tick log {path} is missing columns: {', '.join(missing)}")
    return frame
