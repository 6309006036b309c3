"""
Crossing environment.

The agent picks a target walking speed; the world then ticks at 0.1 s until
that walking step is complete (or, for the sensory-only variant, for a single
tick with the speed set instantly). Vehicles are perceived through the
noisy-vision Kalman tracker and non-policy parameters are part of the
observation so one policy covers the whole parameter range.
"""

import hashlib
import logging
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import gymnasium as gym
import numpy as np
from gymnasium import spaces

from .exceptions import EnvError
from .locomotion import BodyParams, GaitState, advance, apply_step_command, set_speed, step_effort
from .perception import (
    DEFAULT_PRIOR_SPEED_VARIANCE,
    DEFAULT_PROCESS_NOISE,
    AngularNoiseModel,
    NoiseTarget,
    VehicleBelief,
    VehicleTracker,
    total_looming,
)
from .records import EpisodeRecord, Outcome, RewardBreakdown, TickRow
from .scenario import (
    RoadGeometry,
    ScenarioSpec,
    VehicleState,
    advance_vehicle,
    build_scenario,
    sample_training_scenario,
)

logger = logging.getLogger(__name__)

MAX_VEHICLES = 2

OBSERVATION_FIELDS = (
    "ped_position",
    "ped_speed",
    "v1_d_hat",
    "v1_v_hat",
    "v1_d_std",
    "v1_v_std",
    "v2_d_hat",
    "v2_v_hat",
    "v2_d_std",
    "v2_v_std",
    "t",
    "ehmi",
    "sigma_v_active",
    "time_pressure_gain",
    "effort_weight",
    "looming_weight",
)
OBSERVATION_SIZE = len(OBSERVATION_FIELDS)
_STD_SLOTS = [OBSERVATION_FIELDS.index(f) for f in ("v1_d_std", "v1_v_std", "v2_d_std", "v2_v_std")]


def observation_layout_hash() -> str:
    return hashlib.sha256(",".join(OBSERVATION_FIELDS).encode()).hexdigest()[:16]


class Variant(str, Enum):
    SM = "SM"
    S = "S"
    M = "M"

    @classmethod
    def parse(cls, value) -> "Variant":
        try:
            return cls(str(value).upper())
        except ValueError:
            raise EnvError(f"Unknown variant {value!r}; expected one of SM, S, M")


PARAM_RANGES = {
    "sigma_v_day": (0.0, 10.0),
    "sigma_v_night": (0.0, 10.0),
    "time_pressure_gain": (0.0, 4.0),
    "effort_weight": (0.0, 10.0),
    "looming_weight": (0.0, 10.0),
}
PARAM_NAMES = tuple(PARAM_RANGES)


@dataclass(frozen=True)
class NonPolicyParams:
    sigma_v_day: float = 2.0
    sigma_v_night: float = 4.0
    time_pressure_gain: float = 1.0
    effort_weight: float = 1.0
    looming_weight: float = 1.0

    def __post_init__(self):
        for name, (low, high) in PARAM_RANGES.items():
            value = getattr(self, name)
            if not low <= value <= high:
                raise EnvError(f"{name}={value} outside [{low}, {high}]")

    @classmethod
    def sample(cls, rng: np.random.Generator) -> "NonPolicyParams":
        return cls(*(float(rng.uniform(low, high)) for low, high in PARAM_RANGES.values()))

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "NonPolicyParams":
        if len(values) != len(PARAM_NAMES):
            raise EnvError(f"Expected {len(PARAM_NAMES)} parameter values, got {len(values)}")
        return cls(*(float(v) for v in values))

    @classmethod
    def from_dict(cls, data: Dict[str, float]) -> "NonPolicyParams":
        unknown = set(data) - set(PARAM_NAMES)
        if unknown:
            raise EnvError(f"Unknown non-policy parameters: {', '.join(sorted(unknown))}")
        return cls(**{k: float(v) for k, v in data.items()})

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in PARAM_NAMES], dtype=float)

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)

    def sigma_for(self, night: bool) -> float:
        return self.sigma_v_night if night else self.sigma_v_day


class ActionMode(str, Enum):
    WITH_WAIT = "with_wait"
    MOVING_ONLY = "moving_only"


@dataclass(frozen=True)
class ActionSet:
    """Discrete target walking speeds (m/s)"""

    speeds: Tuple[float, ...]
    mode: ActionMode = ActionMode.WITH_WAIT

    def __post_init__(self):
        if not self.speeds:
            raise EnvError("Action set is empty")
        if any(s < 0 for s in self.speeds):
            raise EnvError("Target speeds must be >= 0")
        if list(self.speeds) != sorted(set(self.speeds)):
            raise EnvError("Target speeds must be sorted and unique")

    @classmethod
    def build(cls, mode="with_wait") -> "ActionSet":
        mode = ActionMode(mode)
        first = 0 if mode == ActionMode.WITH_WAIT else 1
        return cls(tuple(round(0.1 * i, 1) for i in range(first, 21)), mode)

    def __len__(self) -> int:
        return len(self.speeds)

    def __getitem__(self, index: int) -> float:
        return self.speeds[index]

    def to_list(self) -> List[float]:
        return list(self.speeds)


@dataclass(frozen=True)
class EnvConfig:
    dt: float = 0.1
    timeout: float = 30.0
    process_noise: float = DEFAULT_PROCESS_NOISE
    prior_speed_variance: float = DEFAULT_PRIOR_SPEED_VARIANCE
    action_mode: ActionMode = ActionMode.WITH_WAIT
    noise_target: NoiseTarget = NoiseTarget.SIZE
    with_vehicles: bool = True
    reward_clip: float = 20.0
    arrival_reward: float = 20.0
    collision_penalty: float = 20.0
    lead_time: float = 2.0
    body: BodyParams = field(default_factory=BodyParams)
    geometry: RoadGeometry = field(default_factory=RoadGeometry)

    def __post_init__(self):
        if not self.dt > 0 or not self.timeout > 0:
            raise EnvError(f"dt and timeout must be positive (dt={self.dt}, timeout={self.timeout})")
        object.__setattr__(self, "action_mode", ActionMode(self.action_mode))
        object.__setattr__(self, "noise_target", NoiseTarget(self.noise_target))

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> "EnvConfig":
        data = dict(data or {})
        if "body" in data:
            data["body"] = BodyParams(**data["body"])
        if "geometry" in data:
            data["geometry"] = RoadGeometry(**data["geometry"])
        try:
            return cls(**data)
        except TypeError as e:
            raise EnvError(f"Invalid environment configuration: {e}") from e

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["action_mode"] = self.action_mode.value
        data["noise_target"] = self.noise_target.value
        return data

    @property
    def timeout_ticks(self) -> int:
        return int(round(self.timeout / self.dt))


@dataclass(frozen=True)
class WorldState:
    ticks: int
    t: float
    gait: GaitState
    vehicles: Tuple[VehicleState, ...]


def _disc_hits_rectangle(cx, cy, radius, x0, x1, y0, y1) -> bool:
    nearest_x = min(max(cx, x0), x1)
    nearest_y = min(max(cy, y0), y1)
    return (cx - nearest_x) ** 2 + (cy - nearest_y) ** 2 < radius * radius


def collision_check(world: WorldState, geometry: RoadGeometry) -> bool:
    """Pedestrian disc against every vehicle footprint"""
    low, high = geometry.lane_band
    for vehicle in world.vehicles:
        front = vehicle.distance
        if _disc_hits_rectangle(
            0.0,
            world.gait.position,
            geometry.ped_radius,
            front,
            front + geometry.vehicle_length,
            low,
            high,
        ):
            return True
    return False


def terminal_state(world: WorldState, geometry: RoadGeometry, timeout_ticks: int) -> Outcome:
    if collision_check(world, geometry):
        return Outcome.COLLISION
    if world.gait.position >= geometry.far_curb:
        return Outcome.CROSSED
    if world.ticks >= timeout_ticks:
        return Outcome.TIMEOUT
    return Outcome.RUNNING


def arrival_reward(t: float, time_pressure_gain: float, base: float = 20.0) -> float:
    return base - time_pressure_gain * t


def clamp_reward(value: float, limit: float = 20.0) -> float:
    return min(max(value, -limit), limit)


class CrossingEnv(gym.Env):
    """Single pedestrian, up to two vehicles, one walking step per action"""

    metadata = {"render_modes": []}

    def __init__(
        self,
        variant="SM",
        config: Optional[EnvConfig] = None,
        record: bool = False,
    ):
        super().__init__()
        self.variant = Variant.parse(variant)
        self.config = config or EnvConfig()
        self.actions = ActionSet.build(self.config.action_mode)
        self.action_space = spaces.Discrete(len(self.actions))
        self.observation_space = spaces.Box(
            low=-np.inf, high=np.inf, shape=(OBSERVATION_SIZE,), dtype=np.float32
        )
        self.record_ticks = record

        self.spec_: Optional[ScenarioSpec] = None
        self.params: Optional[NonPolicyParams] = None
        self.world: Optional[WorldState] = None
        self.tracker: Optional[VehicleTracker] = None
        self.record: Optional[EpisodeRecord] = None
        self.episode_count = 0
        self._done = True
        self._sigma = 0.0
        self._beta = 0.0
        self._c = 0.0

    # -- episode setup -------------------------------------------------

    def reset(self, *, seed: Optional[int] = None, options: Optional[Dict[str, Any]] = None):
        super().reset(seed=seed)
        options = options or {}

        spec = options.get("scenario")
        if spec is None:
            spec = sample_training_scenario(
                self.np_random, lead_time=self.config.lead_time, geometry=self.config.geometry
            )
        params = options.get("params")
        if params is None:
            params = NonPolicyParams.sample(self.np_random)
        elif isinstance(params, dict):
            params = NonPolicyParams.from_dict(params)

        self.spec_ = spec
        self.params = params
        self._sigma = params.sigma_for(spec.night)
        self._beta = params.effort_weight
        self._c = params.looming_weight
        if self.variant == Variant.M:
            self._sigma = 0.0
            self._c = 0.0
        elif self.variant == Variant.S:
            self._beta = 0.0

        vehicles: Tuple[VehicleState, ...] = ()
        if self.config.with_vehicles:
            vehicles = build_scenario(spec).vehicles
        self.world = WorldState(ticks=0, t=0.0, gait=GaitState(), vehicles=vehicles)

        geometry = spec.geometry
        noise = AngularNoiseModel(
            sigma_v=self._sigma,
            vehicle_width=geometry.vehicle_width,
            target=self.config.noise_target,
            lateral_offset=geometry.ped_start_offset + geometry.lane_center,
        )
        self.tracker = VehicleTracker(
            noise,
            self.np_random,
            q=self.config.process_noise,
            prior_speed_variance=self.config.prior_speed_variance,
        )
        self.tracker.start([v.distance for v in vehicles])

        self.episode_count += 1
        self._done = False
        self.record = None
        if self.record_ticks:
            self.record = EpisodeRecord(
                spec=spec,
                params=params.to_dict(),
                variant=self.variant.value,
                seed=seed,
                episode=self.episode_count - 1,
            )
            self.record.ticks.append(self._tick_row(0.0, RewardBreakdown()))

        return self._observation(), {"scenario": spec, "params": params}

    # -- stepping ------------------------------------------------------

    def step(self, action):
        if self._done:
            raise EnvError("step() called on a finished episode; call reset() first")
        index = int(action)
        if not 0 <= index < len(self.actions):
            raise EnvError(f"Action index {index} outside [0, {len(self.actions)})")
        target = self.actions[index]

        world = self.world
        if self.variant == Variant.S:
            gait = set_speed(world.gait, target)
            effort_cost = 0.0
        else:
            effort_cost = self._beta * step_effort(world.gait.speed, target, self.config.body)
            gait = apply_step_command(world.gait, target, self.config.body)
        self.world = replace(world, gait=gait)

        step_rewards = RewardBreakdown()
        pending_effort = -effort_cost
        status = Outcome.RUNNING
        last_row: Optional[TickRow] = None
        while True:
            tick_rewards, status = self._tick()
            tick_rewards.effort = pending_effort
            pending_effort = 0.0
            step_rewards.add(tick_rewards)
            if self.record is not None:
                last_row = self._tick_row(target, tick_rewards)
                self.record.ticks.append(last_row)
            if status != Outcome.RUNNING:
                break
            if self.variant == Variant.S or not self.world.gait.in_step:
                break

        raw_total = step_rewards.total
        clipped = clamp_reward(raw_total, self.config.reward_clip)
        step_rewards.clamp = clipped - raw_total
        if last_row is not None:
            last_row.r_clamp = step_rewards.clamp

        terminated = status in (Outcome.CROSSED, Outcome.COLLISION)
        truncated = status == Outcome.TIMEOUT
        self._done = terminated or truncated
        if self.record is not None:
            self.record.rewards.add(step_rewards)
            self.record.decisions += 1
            if self._done:
                self.record.outcome = status

        info = {
            "status": status.value,
            "t": self.world.t,
            "target_speed": target,
            "rewards": step_rewards,
        }
        return self._observation(), float(clipped), terminated, truncated, info

    def _tick(self) -> Tuple[RewardBreakdown, Outcome]:
        dt = self.config.dt
        world = self.world
        previous_position = world.gait.position
        gait = advance(world.gait, dt)
        vehicles = tuple(advance_vehicle(v, dt) for v in world.vehicles)
        ticks = world.ticks + 1
        self.world = WorldState(ticks=ticks, t=ticks * dt, gait=gait, vehicles=vehicles)
        beliefs = self.tracker.tick([v.distance for v in vehicles], dt)

        rewards = RewardBreakdown()
        moving = gait.position > previous_position
        rewards.looming = -total_looming(beliefs, self._c, moving)

        status = terminal_state(self.world, self.spec_.geometry, self.config.timeout_ticks)
        if status == Outcome.COLLISION:
            rewards.collision = -self.config.collision_penalty
        elif status == Outcome.CROSSED:
            rewards.arrival = arrival_reward(
                self.world.t, self.params.time_pressure_gain, self.config.arrival_reward
            )
        return rewards, status

    # -- observation & logging ----------------------------------------

    def _observation(self) -> np.ndarray:
        obs = np.zeros(OBSERVATION_SIZE, dtype=np.float64)
        obs[0] = self.world.gait.position
        obs[1] = self.world.gait.speed
        for i, belief in enumerate(self.tracker.beliefs[:MAX_VEHICLES]):
            base = 2 + 4 * i
            obs[base : base + 4] = (
                belief.distance,
                belief.speed,
                belief.distance_std,
                belief.speed_std,
            )
        obs[10] = self.world.t
        obs[11] = 1.0 if self.spec_.ehmi else 0.0
        obs[12] = self._sigma
        obs[13] = self.params.time_pressure_gain
        obs[14] = self._beta
        obs[15] = self._c
        if self.variant == Variant.M:
            obs[_STD_SLOTS] = 0.0
        return obs.astype(np.float32)

    def _tick_row(self, target: float, rewards: RewardBreakdown) -> TickRow:
        row = TickRow(
            t=self.world.t,
            ped_position=self.world.gait.position,
            ped_speed=self.world.gait.speed,
            target_speed=target,
            r_arrival=rewards.arrival,
            r_collision=rewards.collision,
            r_effort=rewards.effort,
            r_looming=rewards.looming,
        )
        beliefs: List[VehicleBelief] = self.tracker.beliefs
        for i, (vehicle, belief) in enumerate(zip(self.world.vehicles, beliefs), start=1):
            setattr(row, f"v{i}_d", vehicle.distance)
            setattr(row, f"v{i}_v", vehicle.speed)
            setattr(row, f"v{i}_d_hat", belief.distance)
            setattr(row, f"v{i}_v_hat", belief.speed)
        return row

    @property
    def done(self) -> bool:
        return self._done

    @property
    def scenario(self) -> Optional[ScenarioSpec]:
        return self.spec_
