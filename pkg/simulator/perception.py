"""
Noisy vision, Kalman tracking and looming for approaching vehicles.

Distances are sensed through a visual angle corrupted by constant Gaussian
noise (degrees). Each vehicle is tracked by a two-state constant closing
speed Kalman filter over [distance-to-line, closing speed].
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, List, Optional, Sequence

import numpy as np

from .exceptions import PerceptionError

logger = logging.getLogger(__name__)

ANGLE_FLOOR = 1e-6
MIN_CLOSING_SPEED = 0.01
PSD_TOLERANCE = 1e-9
EXACT_VARIANCE = 1e-12
DEFAULT_PROCESS_NOISE = 0.5
DEFAULT_PRIOR_SPEED_VARIANCE = 1e4

_MEASUREMENT = np.array([[1.0, 0.0]])


class NoiseTarget(str, Enum):
    SIZE = "size"
    BEARING = "bearing"


@dataclass(frozen=True)
class AngularNoiseModel:
    """Gaussian noise on the visual angle a vehicle subtends (or its bearing)"""

    sigma_v: float
    vehicle_width: float = 1.8
    target: NoiseTarget = NoiseTarget.SIZE
    lateral_offset: float = 2.25

    def __post_init__(self):
        if self.sigma_v < 0:
            raise PerceptionError(f"sigma_v must be >= 0, got {self.sigma_v}")
        if self.vehicle_width <= 0:
            raise PerceptionError(f"vehicle width must be positive, got {self.vehicle_width}")
        if self.target == NoiseTarget.BEARING and self.lateral_offset <= 0:
            raise PerceptionError(
                f"bearing sensing needs a positive lateral offset, got {self.lateral_offset}"
            )

    def observe(self, true_d: float, rng: np.random.Generator) -> float:
        if self.target == NoiseTarget.BEARING:
            return observe_bearing_distance(true_d, self.lateral_offset, self.sigma_v, rng)
        return observe_distance(true_d, self.vehicle_width, self.sigma_v, rng)

    def variance(self, d: float) -> float:
        if self.target == NoiseTarget.BEARING:
            return bearing_measurement_variance(d, self.lateral_offset, self.sigma_v)
        return measurement_variance(d, self.vehicle_width, self.sigma_v)


def subtended_angle(d: float, width: float) -> float:
    return 2.0 * math.atan(width / (2.0 * d))


def angle_to_distance(theta: float, width: float) -> float:
    """Distance at which an object of ``width`` subtends ``theta``"""
    theta = min(max(theta, ANGLE_FLOOR), math.pi - ANGLE_FLOOR)
    return width / (2.0 * math.tan(theta / 2.0))


def observe_distance(
    true_d: float, width: float, sigma_v: float, rng: np.random.Generator
) -> float:
    if not true_d > 0:
        raise PerceptionError(f"Cannot observe a vehicle at distance {true_d}")
    if sigma_v == 0:
        return float(true_d)
    theta = subtended_angle(true_d, width)
    noisy = theta + rng.normal(0.0, math.radians(sigma_v))
    return angle_to_distance(noisy, width)


def measurement_variance(d: float, width: float, sigma_v: float) -> float:
    """Distance variance implied by angular noise, linearized at ``d``"""
    if not d > 0:
        raise PerceptionError(f"Measurement variance needs d > 0, got {d}")
    jacobian = (d * d + width * width / 4.0) / width
    return jacobian * jacobian * math.radians(sigma_v) ** 2


def observe_bearing_distance(
    true_d: float, lateral: float, sigma_v: float, rng: np.random.Generator
) -> float:
    if not true_d > 0:
        raise PerceptionError(f"Cannot observe a vehicle at distance {true_d}")
    if sigma_v == 0:
        return float(true_d)
    theta = math.atan2(lateral, true_d) + rng.normal(0.0, math.radians(sigma_v))
    theta = min(max(theta, ANGLE_FLOOR), math.pi / 2 - ANGLE_FLOOR)
    return lateral / math.tan(theta)


def bearing_measurement_variance(d: float, lateral: float, sigma_v: float) -> float:
    if not d > 0:
        raise PerceptionError(f"Measurement variance needs d > 0, got {d}")
    jacobian = (d * d + lateral * lateral) / lateral
    return jacobian * jacobian * math.radians(sigma_v) ** 2


@dataclass(frozen=True)
class VehicleBelief:
    """Posterior over [distance-to-line, closing speed]"""

    mean: np.ndarray
    covariance: np.ndarray = field(repr=False)

    @property
    def distance(self) -> float:
        return float(self.mean[0])

    @property
    def speed(self) -> float:
        return float(self.mean[1])

    @property
    def distance_std(self) -> float:
        return math.sqrt(max(self.covariance[0, 0], 0.0))

    @property
    def speed_std(self) -> float:
        return math.sqrt(max(self.covariance[1, 1], 0.0))

    @classmethod
    def from_first_measurement(
        cls, z: float, r: float, prior_speed_variance: float = DEFAULT_PRIOR_SPEED_VARIANCE
    ) -> "VehicleBelief":
        return cls(
            mean=np.array([z, 0.0]),
            covariance=np.diag([r, prior_speed_variance]).astype(float),
        )


def _check_psd(covariance: np.ndarray) -> None:
    if not np.allclose(covariance, covariance.T, atol=PSD_TOLERANCE):
        raise PerceptionError(f"Belief covariance is not symmetric: {covariance.tolist()}")
    smallest = float(np.linalg.eigvalsh(covariance)[0])
    if smallest < -PSD_TOLERANCE:
        raise PerceptionError(
            f"Belief covariance is not positive semi-definite (min eigenvalue {smallest:.3g})"
        )


def kalman_predict(belief: VehicleBelief, dt: float, q: float = DEFAULT_PROCESS_NOISE) -> VehicleBelief:
    if not dt > 0:
        raise PerceptionError(f"Prediction step must be positive, got {dt}")
    transition = np.array([[1.0, -dt], [0.0, 1.0]])
    process = q * np.array([[dt ** 3 / 3.0, dt ** 2 / 2.0], [dt ** 2 / 2.0, dt]])
    mean = transition @ belief.mean
    covariance = transition @ belief.covariance @ transition.T + process
    covariance = 0.5 * (covariance + covariance.T)
    return VehicleBelief(mean=mean, covariance=covariance)


def kalman_update(belief: VehicleBelief, z: float, r: float) -> VehicleBelief:
    """Scalar distance measurement update (Joseph form)"""
    if r < 0:
        raise PerceptionError(f"Measurement variance must be >= 0, got {r}")
    _check_psd(belief.covariance)

    prior = belief.covariance
    innovation_var = float(prior[0, 0] + r)
    if innovation_var <= EXACT_VARIANCE:
        # Both the prior distance and the measurement are exact.
        mean = belief.mean.copy()
        mean[0] = z
        return VehicleBelief(mean=mean, covariance=prior.copy())

    gain = prior[:, 0:1] / innovation_var
    mean = belief.mean + gain[:, 0] * (z - belief.mean[0])
    if r == 0:
        mean[0] = z

    identity_minus_kh = np.eye(2) - gain @ _MEASUREMENT
    covariance = identity_minus_kh @ prior @ identity_minus_kh.T + r * (gain @ gain.T)
    covariance = 0.5 * (covariance + covariance.T)
    return VehicleBelief(mean=mean, covariance=covariance)


def estimate_tta(belief: VehicleBelief) -> float:
    """Estimated time to arrival, +inf when the vehicle is not closing"""
    if belief.speed > MIN_CLOSING_SPEED and belief.distance > 0:
        return belief.distance / belief.speed
    return math.inf


def looming_penalty(tta: float, c: float, pedestrian_moving: bool) -> float:
    if c < 0:
        raise PerceptionError(f"Looming weight must be >= 0, got {c}")
    if not pedestrian_moving or not math.isfinite(tta) or tta <= 0:
        return 0.0
    return c / tta


def total_looming(beliefs: Iterable[Optional[VehicleBelief]], c: float, pedestrian_moving: bool) -> float:
    """Looming summed over every tracked vehicle"""
    return sum(
        looming_penalty(estimate_tta(b), c, pedestrian_moving) for b in beliefs if b is not None
    )


class VehicleTracker:
    """Owns the beliefs of one episode and feeds them one tick at a time"""

    def __init__(
        self,
        noise: AngularNoiseModel,
        rng: np.random.Generator,
        q: float = DEFAULT_PROCESS_NOISE,
        prior_speed_variance: float = DEFAULT_PRIOR_SPEED_VARIANCE,
    ):
        self.noise = noise
        self.rng = rng
        self.q = q
        self.prior_speed_variance = prior_speed_variance
        self.beliefs: List[Optional[VehicleBelief]] = []

    def start(self, true_distances: Sequence[float]) -> List[VehicleBelief]:
        self.beliefs = []
        for d in true_distances:
            z = self.noise.observe(d, self.rng)
            self.beliefs.append(
                VehicleBelief.from_first_measurement(
                    z, self.noise.variance(z), self.prior_speed_variance
                )
            )
        return list(self.beliefs)

    def tick(self, true_distances: Sequence[float], dt: float) -> List[VehicleBelief]:
        updated = []
        for belief, d in zip(self.beliefs, true_distances):
            belief = kalman_predict(belief, dt, self.q)
            if d > 0:
                z = self.noise.observe(d, self.rng)
                belief = kalman_update(belief, z, self.noise.variance(z))
            updated.append(belief)
        self.beliefs = updated
        return list(updated)
