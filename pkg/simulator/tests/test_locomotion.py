import math

import numpy as np
from django.test import SimpleTestCase

from simulator.exceptions import LocomotionError
from simulator.locomotion import (
    BodyParams,
    GaitState,
    advance,
    apply_step_command,
    effort,
    leg_angle,
    new_speed,
    step_duration,
    step_effort,
    step_length,
)


class GaitLawTests(SimpleTestCase):
    def test_step_length(self):
        self.assertAlmostEqual(step_length(1.0), 1.0)
        self.assertAlmostEqual(step_length(1.5), 1.1857, delta=1e-4)
        self.assertAlmostEqual(step_length(0.5), 0.7474, delta=1e-4)
        self.assertEqual(step_length(0.0), 0.0)

    def test_step_duration(self):
        self.assertAlmostEqual(step_duration(1.0), 1.0)
        self.assertAlmostEqual(step_duration(1.5), 0.7904, delta=1e-4)
        self.assertEqual(step_duration(0.0), 0.5)
        speeds = np.linspace(0.1, 2.0, 20)
        durations = [step_duration(v) for v in speeds]
        self.assertTrue(all(b < a for a, b in zip(durations, durations[1:])))

    def test_leg_angle(self):
        self.assertEqual(leg_angle(0.0, 0.9), 0.0)
        self.assertAlmostEqual(leg_angle(1.0, 0.9), 1.178, delta=1e-3)
        with self.assertRaises(LocomotionError):
            leg_angle(1.8, 0.9)


class EffortTests(SimpleTestCase):
    def test_zero_effort_curve(self):
        self.assertAlmostEqual(effort(1.2, 1.2 * math.cos(0.7), 0.7), 0.0, places=12)

    def test_hand_value(self):
        self.assertAlmostEqual(effort(1.2, 1.4, 0.698), 0.2797, delta=1e-4)

    def test_round_trip_example(self):
        v_plus = new_speed(1.2, 0.2797, 0.698)
        self.assertAlmostEqual(v_plus, 1.4001, delta=1e-4)
        self.assertAlmostEqual(effort(1.2, v_plus, 0.698), 0.2797, delta=1e-9)

    def test_round_trip_grid(self):
        for v_minus in np.linspace(0.0, 2.0, 10):
            for u in np.linspace(0.0, 2.0, 10):
                for two_alpha in np.linspace(0.2, 2.0, 12)[1:-1]:
                    v_plus = new_speed(v_minus, u, two_alpha)
                    self.assertAlmostEqual(effort(v_minus, v_plus, two_alpha), u, delta=1e-9)

    def test_rejects_degenerate_angle(self):
        with self.assertRaises(LocomotionError):
            effort(1.0, 1.0, 0.0)
        with self.assertRaises(LocomotionError):
            effort(1.0, 1.0, math.pi)

    def test_standing_still_is_free(self):
        self.assertEqual(step_effort(0.0, 0.0, BodyParams()), 0.0)
        self.assertGreater(step_effort(1.0, 0.0, BodyParams()), 0.0)


class StepCommandTests(SimpleTestCase):
    def test_constant_speed_command(self):
        gait = apply_step_command(GaitState(speed=1.0), 1.0, BodyParams())
        self.assertEqual(gait.step_accel, 0.0)
        self.assertAlmostEqual(gait.step_time_remaining, 1.0)

    def test_start_walking(self):
        gait = apply_step_command(GaitState(), 1.5, BodyParams())
        self.assertAlmostEqual(gait.step_time_remaining, 0.7904, delta=1e-4)
        self.assertAlmostEqual(gait.step_accel, 1.898, delta=1e-3)

    def test_stop(self):
        gait = apply_step_command(GaitState(speed=1.0), 0.0, BodyParams())
        self.assertAlmostEqual(gait.step_accel, -2.0)
        self.assertAlmostEqual(gait.step_time_remaining, 0.5)


class AdvanceTests(SimpleTestCase):
    def test_cruise(self):
        gait = advance(GaitState(speed=1.0, step_target_speed=1.0), 0.1)
        self.assertAlmostEqual(gait.position, 0.1)

    def test_full_step_displacement(self):
        gait = apply_step_command(GaitState(), 1.5, BodyParams())
        gait = advance(gait, gait.step_time_remaining)
        self.assertAlmostEqual(gait.position, 0.5928, delta=1e-4)
        self.assertEqual(gait.speed, 1.5)
        self.assertEqual(gait.step_time_remaining, 0.0)

    def test_ticked_step_lands_on_target(self):
        gait = apply_step_command(GaitState(speed=0.4), 1.7, BodyParams())
        speeds = [gait.speed]
        while gait.in_step:
            gait = advance(gait, 0.1)
            speeds.append(gait.speed)
        self.assertAlmostEqual(gait.speed, 1.7, delta=1e-9)
        # piecewise linear, no overshoot
        self.assertTrue(all(b >= a for a, b in zip(speeds, speeds[1:])))
        self.assertTrue(all(s <= 1.7 + 1e-12 for s in speeds))

    def test_deceleration_does_not_undershoot(self):
        gait = apply_step_command(GaitState(speed=1.2), 0.3, BodyParams())
        while gait.in_step:
            gait = advance(gait, 0.1)
            self.assertGreaterEqual(gait.speed, 0.3 - 1e-12)
        self.assertAlmostEqual(gait.speed, 0.3, delta=1e-9)
