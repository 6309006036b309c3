"""
Trial geometry, vehicle kinematics and scenario tables for the crossing task.

Coordinates: vehicles are described by the distance of their front bumper to
the crossing line (positive while approaching). The pedestrian moves along
the crossing axis starting at 0, ``ped_start_offset`` behind the near curb,
and has crossed once past the far curb.
"""

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterator, List, NamedTuple, Optional, Tuple

import numpy as np
import yaml

from .exceptions import ScenarioError

logger = logging.getLogger(__name__)

MPH_TO_MPS = 0.44704
YIELD_DECELERATION = 2.3

TRAINING_SPEED_RANGE = (8.0, 17.0)
TRAINING_GAP_RANGE = (0.1, 10.0)

BUNDLED_SCENARIOS = Path(__file__).resolve().parent / "config" / "scenarios.yaml"


def mph_to_mps(v: float) -> float:
    """Convert miles per hour to metres per second"""
    if v < 0:
        raise ScenarioError(f"Speed must be non-negative, got {v} mph")
    return v * MPH_TO_MPS


@dataclass(frozen=True)
class RoadGeometry:
    """Single-lane road crossed at right angles; lengths in metres"""

    road_width: float = 3.5
    ped_start_offset: float = 0.5
    lane_center: float = 1.75
    vehicle_length: float = 4.5
    vehicle_width: float = 1.8
    ped_radius: float = 0.25
    stop_margin: float = 3.0

    def __post_init__(self):
        for name in (
            "road_width",
            "ped_start_offset",
            "lane_center",
            "vehicle_length",
            "vehicle_width",
            "ped_radius",
            "stop_margin",
        ):
            if getattr(self, name) <= 0:
                raise ScenarioError(f"{name} must be positive, got {getattr(self, name)}")
        if self.lane_center + self.vehicle_width / 2 > self.road_width:
            raise ScenarioError("Vehicle lane extends past the far curb")

    @property
    def near_curb(self) -> float:
        return self.ped_start_offset

    @property
    def far_curb(self) -> float:
        return self.ped_start_offset + self.road_width

    @property
    def lane_band(self) -> Tuple[float, float]:
        """Extent of the vehicle lane along the crossing axis"""
        center = self.ped_start_offset + self.lane_center
        half = self.vehicle_width / 2
        return center - half, center + half


class ConditionKey(NamedTuple):
    """Experimental condition a trial belongs to"""

    v0: float
    tau0: float
    yielding: bool
    ehmi: bool
    night: bool


@dataclass(frozen=True)
class ScenarioSpec:
    """One vehicle-approach trial"""

    v0: float
    tau0: float
    yielding: bool = False
    decel: float = YIELD_DECELERATION
    ehmi: bool = False
    night: bool = False
    lead_time: float = 2.0
    geometry: RoadGeometry = field(default_factory=RoadGeometry)

    def __post_init__(self):
        if not self.v0 > 0:
            raise ScenarioError(f"Initial vehicle speed must be positive, got {self.v0}")
        if not self.tau0 > 0:
            raise ScenarioError(f"Time gap must be positive, got {self.tau0}")
        if self.yielding and not self.decel > 0:
            raise ScenarioError(f"Yielding deceleration must be positive, got {self.decel}")
        if self.ehmi and not self.yielding:
            raise ScenarioError("eHMI is only shown by a yielding vehicle")
        if self.lead_time < 0:
            raise ScenarioError(f"Lead time must be non-negative, got {self.lead_time}")
        if self.yielding and self.v0 * (self.lead_time + self.tau0) <= self.geometry.stop_margin:
            raise ScenarioError(
                f"Yielding vehicle starts {self.v0 * (self.lead_time + self.tau0):.3f} m from the line, "
                f"not beyond its stop margin of {self.geometry.stop_margin} m"
            )

    @property
    def condition_key(self) -> ConditionKey:
        return ConditionKey(
            round(self.v0, 3), round(self.tau0, 3), self.yielding, self.ehmi, self.night
        )

    @property
    def gap_onset_time(self) -> float:
        """Time at which the rear of vehicle 1 passes the crossing line"""
        return self.lead_time + self.geometry.vehicle_length / self.v0


class VehiclePhase(str, Enum):
    CRUISE = "cruise"
    BRAKING = "braking"
    STOPPED = "stopped"


@dataclass(frozen=True)
class VehicleState:
    """Ground-truth kinematics of one vehicle"""

    distance: float
    speed: float
    phase: VehiclePhase = VehiclePhase.CRUISE
    yield_onset_distance: Optional[float] = None
    decel: float = 0.0

    @property
    def yielding(self) -> bool:
        return self.yield_onset_distance is not None


@dataclass(frozen=True)
class InitialWorldState:
    vehicles: Tuple[VehicleState, ...]
    pedestrian_position: float = 0.0

    @property
    def d1(self) -> float:
        return self.vehicles[0].distance

    @property
    def d2(self) -> float:
        return self.vehicles[1].distance

    @property
    def yield_onset_distance(self) -> Optional[float]:
        return self.vehicles[1].yield_onset_distance


def yield_onset_distance(v0: float, decel: float, stop_margin: float) -> float:
    """Distance to the line at which braking at ``decel`` stops ``stop_margin`` short"""
    if decel <= 0:
        raise ScenarioError(f"Deceleration must be positive, got {decel}")
    return v0 * v0 / (2.0 * decel) + stop_margin


def build_scenario(spec: ScenarioSpec) -> InitialWorldState:
    """Place both vehicles so vehicle 1 reaches the line at ``lead_time``"""
    if spec.v0 <= 0 or spec.tau0 <= 0:
        raise ScenarioError(f"Invalid kinematics v0={spec.v0}, tau0={spec.tau0}")

    d1 = spec.v0 * spec.lead_time
    d2 = d1 + spec.v0 * spec.tau0
    lead = VehicleState(distance=d1, speed=spec.v0)

    if not spec.yielding:
        return InitialWorldState(vehicles=(lead, VehicleState(distance=d2, speed=spec.v0)))

    margin = spec.geometry.stop_margin
    onset = yield_onset_distance(spec.v0, spec.decel, margin)
    decel = spec.decel
    if d2 < onset:
        # Too close to brake at the nominal rate: brake harder from t=0.
        decel = spec.v0 * spec.v0 / (2.0 * (d2 - margin))
        onset = d2
        logger.debug(
            f"Vehicle 2 starts inside its braking distance; using {decel:.3f} m/s^2"
        )
    follower = VehicleState(
        distance=d2, speed=spec.v0, yield_onset_distance=onset, decel=decel
    )
    return InitialWorldState(vehicles=(lead, follower))


def advance_vehicle(state: VehicleState, dt: float) -> VehicleState:
    """Move a vehicle forward by ``dt`` seconds with exact piecewise kinematics"""
    if state.phase == VehiclePhase.STOPPED:
        return state

    distance, speed, phase = state.distance, state.speed, state.phase
    remaining = dt

    if phase == VehiclePhase.CRUISE:
        onset = state.yield_onset_distance
        if onset is None or distance - speed * remaining > onset:
            return replace(state, distance=distance - speed * remaining)
        time_to_onset = max(0.0, (distance - onset) / speed)
        distance -= speed * time_to_onset
        remaining -= time_to_onset
        phase = VehiclePhase.BRAKING

    time_to_stop = speed / state.decel
    if time_to_stop <= remaining:
        distance -= speed * speed / (2.0 * state.decel)
        speed = 0.0
        phase = VehiclePhase.STOPPED
    else:
        distance -= speed * remaining - 0.5 * state.decel * remaining * remaining
        speed -= state.decel * remaining

    return replace(state, distance=distance, speed=speed, phase=phase)


def sample_training_scenario(
    rng: np.random.Generator,
    lead_time: float = 2.0,
    geometry: Optional[RoadGeometry] = None,
) -> ScenarioSpec:
    """Draw a scenario from the wide training distribution"""
    v0 = float(rng.uniform(*TRAINING_SPEED_RANGE))
    tau0 = float(rng.uniform(*TRAINING_GAP_RANGE))
    yielding = bool(rng.random() < 0.5)
    # always drawn so the stream layout does not depend on the yielding draw
    ehmi_draw = bool(rng.random() < 0.5)
    night = bool(rng.random() < 0.5)
    return ScenarioSpec(
        v0=v0,
        tau0=tau0,
        yielding=yielding,
        ehmi=yielding and ehmi_draw,
        night=night,
        lead_time=lead_time,
        geometry=geometry or RoadGeometry(),
    )


class EhmiMode(str, Enum):
    OFF = "off"
    ON = "on"
    ALTERNATE = "alternate"


@dataclass(frozen=True)
class ScenarioRow:
    name: str
    v0: float
    tau0: float
    yielding: bool = False
    decel: float = YIELD_DECELERATION
    ehmi: EhmiMode = EhmiMode.OFF


@dataclass(frozen=True)
class Trial:
    index: int
    row: str
    rep: int
    spec: ScenarioSpec


@dataclass(frozen=True)
class ScenarioTable:
    rows: Tuple[ScenarioRow, ...]
    lead_time: float = 2.0
    geometry: RoadGeometry = field(default_factory=RoadGeometry)

    def spec_for(self, row: ScenarioRow, night: bool, ehmi: bool) -> ScenarioSpec:
        return ScenarioSpec(
            v0=row.v0,
            tau0=row.tau0,
            yielding=row.yielding,
            decel=row.decel,
            ehmi=ehmi,
            night=night,
            lead_time=self.lead_time,
            geometry=self.geometry,
        )

    def expand_trials(self, reps: int) -> List[Trial]:
        """One trial per row x {day, night} x rep"""
        return list(self.iter_trials(reps))

    def iter_trials(self, reps: int) -> Iterator[Trial]:
        if reps < 1:
            raise ScenarioError(f"reps must be at least 1, got {reps}")
        index = 0
        for row in self.rows:
            for night in (False, True):
                for rep in range(reps):
                    if not row.yielding or row.ehmi == EhmiMode.OFF:
                        ehmi = False
                    elif row.ehmi == EhmiMode.ON:
                        ehmi = True
                    else:
                        ehmi = rep % 2 == 1
                    yield Trial(index, row.name, rep, self.spec_for(row, night, ehmi))
                    index += 1


def _parse_row(raw: dict, position: int) -> ScenarioRow:
    try:
        if "v0_mph" in raw:
            v0 = mph_to_mps(float(raw["v0_mph"]))
        else:
            v0 = float(raw["v0"])
        tau0 = float(raw["tau0"])
    except KeyError as e:
        raise ScenarioError(f"Scenario row {position} is missing {e}") from e

    yielding = bool(raw.get("yielding", False))
    ehmi_raw = raw.get("ehmi", "off")
    if isinstance(ehmi_raw, bool):
        ehmi_raw = "on" if ehmi_raw else "off"
    try:
        ehmi = EhmiMode(str(ehmi_raw).lower())
    except ValueError as e:
        raise ScenarioError(f"Scenario row {position}: unknown eHMI mode {ehmi_raw!r}") from e
    if ehmi != EhmiMode.OFF and not yielding:
        raise ScenarioError(f"Scenario row {position}: eHMI requires a yielding vehicle")

    name = raw.get("name") or f"row-{position}"
    return ScenarioRow(
        name=str(name),
        v0=v0,
        tau0=tau0,
        yielding=yielding,
        decel=float(raw.get("decel", YIELD_DECELERATION)),
        ehmi=ehmi,
    )


def load_scenario_table(path: Optional[Path] = None) -> ScenarioTable:
    """Read a scenario table from YAML (JSON is accepted as well)"""
    path = Path(path) if path else BUNDLED_SCENARIOS
    try:
        with open(path, "r") as fh:
            data = yaml.safe_load(fh)
    except FileNotFoundError:
        raise
    except yaml.YAMLError as e:
        raise ScenarioError(f"Could not parse scenario table {path}: {e}") from e

    if isinstance(data, list):
        data = {"scenarios": data}
    if not isinstance(data, dict) or not data.get("scenarios"):
        raise ScenarioError(f"Scenario table {path} has no scenarios")

    geometry = RoadGeometry(**(data.get("geometry") or {}))
    rows = tuple(_parse_row(raw, i) for i, raw in enumerate(data["scenarios"]))
    table = ScenarioTable(
        rows=rows, lead_time=float(data.get("lead_time", 2.0)), geometry=geometry
    )
    logger.info(f"Loaded {len(rows)} scenario rows from {path}")
    return table
