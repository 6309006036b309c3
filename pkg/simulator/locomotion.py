"""
Biomechanical walking model: step length/frequency law, pendulum leg geometry,
per-step effort and ballistic within-step speed changes.

Effort is per unit body mass.
"""

import logging
import math
from dataclasses import dataclass, replace

from .exceptions import LocomotionError

logger = logging.getLogger(__name__)

STEP_LENGTH_EXPONENT = 0.42
COMPLETION_TOLERANCE = 1e-9


@dataclass(frozen=True)
class BodyParams:
    leg_length: float = 0.9
    standing_redecision_interval: float = 0.5

    def __post_init__(self):
        if self.leg_length <= 0:
            raise LocomotionError(f"leg_length must be positive, got {self.leg_length}")
        if self.standing_redecision_interval <= 0:
            raise LocomotionError(
                "standing_redecision_interval must be positive, "
                f"got {self.standing_redecision_interval}"
            )


@dataclass(frozen=True)
class GaitState:
    position: float = 0.0
    speed: float = 0.0
    step_target_speed: float = 0.0
    step_accel: float = 0.0
    step_time_remaining: float = 0.0

    @property
    def in_step(self) -> bool:
        return self.step_time_remaining > 0

    @property
    def moving(self) -> bool:
        return self.speed > 0


def step_length(v: float) -> float:
    if v < 0:
        raise LocomotionError(f"Walking speed must be >= 0, got {v}")
    return v ** STEP_LENGTH_EXPONENT if v > 0 else 0.0


def step_duration(v: float, standing_interval: float = 0.5) -> float:
    if v < 0:
        raise LocomotionError(f"Walking speed must be >= 0, got {v}")
    if v == 0:
        return standing_interval
    return v ** (STEP_LENGTH_EXPONENT - 1.0)


def leg_angle(step_len: float, leg_length: float) -> float:
    """Angle between the legs at double support (2 alpha)"""
    if step_len < 0 or step_len >= 2.0 * leg_length:
        raise LocomotionError(
            f"Step length {step_len:.4f} m is impossible for leg length {leg_length} m"
        )
    return 2.0 * math.asin(step_len / (2.0 * leg_length))


def _check_angle(two_alpha: float) -> None:
    if not 0 < two_alpha < math.pi:
        raise LocomotionError(f"Leg angle must lie in (0, pi), got {two_alpha}")


def effort(v_minus: float, v_plus: float, two_alpha: float) -> float:
    """Push-off work per unit mass to go from v_minus to v_plus in one step"""
    _check_angle(two_alpha)
    sin_sq = math.sin(two_alpha) ** 2
    return (v_minus * math.cos(two_alpha) - v_plus) ** 2 / (2.0 * sin_sq)


def new_speed(v_minus: float, u: float, two_alpha: float) -> float:
    """Speed after a push-off of work ``u`` per unit mass"""
    _check_angle(two_alpha)
    if u < 0:
        raise LocomotionError(f"Push-off work must be >= 0, got {u}")
    return v_minus * math.cos(two_alpha) + math.sqrt(2.0 * u) * math.sin(two_alpha)


def step_effort(current: float, target: float, body: BodyParams) -> float:
    """Effort charged for committing to ``target`` from ``current``.

    The leg angle comes from the step length at the target speed, or at the
    current speed when stopping. Standing still costs nothing.
    """
    reference = target if target > 0 else current
    if reference == 0:
        return 0.0
    two_alpha = leg_angle(step_length(reference), body.leg_length)
    return effort(current, target, two_alpha)


def apply_step_command(gait: GaitState, target: float, body: BodyParams) -> GaitState:
    """Commit to a new step; no re-decision until it completes"""
    if target < 0:
        raise LocomotionError(f"Target speed must be >= 0, got {target}")
    duration = step_duration(target, body.standing_redecision_interval)
    return replace(
        gait,
        step_target_speed=target,
        step_accel=(target - gait.speed) / duration,
        step_time_remaining=duration,
    )


def set_speed(gait: GaitState, target: float) -> GaitState:
    """Instantaneous speed control, used by the sensory-only variant"""
    if target < 0:
        raise LocomotionError(f"Target speed must be >= 0, got {target}")
    return replace(
        gait, speed=target, step_target_speed=target, step_accel=0.0, step_time_remaining=0.0
    )


def advance(gait: GaitState, dt: float) -> GaitState:
    """Integrate position and speed over ``dt`` (exact within the step)"""
    if not dt > 0:
        raise LocomotionError(f"Integration step must be positive, got {dt}")

    if gait.step_time_remaining <= 0:
        return replace(gait, position=gait.position + gait.speed * dt)

    if gait.step_time_remaining <= dt + COMPLETION_TOLERANCE:
        in_step = gait.step_time_remaining
        target = gait.step_target_speed
        position = gait.position + 0.5 * (gait.speed + target) * in_step
        position += target * max(dt - in_step, 0.0)
        return replace(
            gait, position=position, speed=target, step_accel=0.0, step_time_remaining=0.0
        )

    speed = gait.speed + gait.step_accel * dt
    if gait.step_accel > 0:
        speed = min(speed, gait.step_target_speed)
    elif gait.step_accel < 0:
        speed = max(speed, gait.step_target_speed)
    return replace(
        gait,
        position=gait.position + 0.5 * (gait.speed + speed) * dt,
        speed=speed,
        step_time_remaining=gait.step_time_remaining - dt,
    )
