import json
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from simulator.exceptions import ScenarioError
from simulator.scenario import (
    BUNDLED_SCENARIOS,
    ScenarioSpec,
    VehiclePhase,
    advance_vehicle,
    build_scenario,
    load_scenario_table,
    mph_to_mps,
    sample_training_scenario,
    yield_onset_distance,
)


def run_until_stopped(vehicle, dt=0.1, limit=1000):
    for _ in range(limit):
        vehicle = advance_vehicle(vehicle, dt)
        if vehicle.phase == VehiclePhase.STOPPED:
            return vehicle
    raise AssertionError("vehicle never stopped")


class ScenarioGeometryTests(SimpleTestCase):
    def test_mph_conversion(self):
        self.assertAlmostEqual(mph_to_mps(25), 11.176, places=6)
        self.assertAlmostEqual(mph_to_mps(30), 13.4112, places=6)

    def test_vehicle_placement(self):
        world = build_scenario(ScenarioSpec(v0=mph_to_mps(25), tau0=3.0))
        self.assertAlmostEqual(world.d1, 22.352, places=6)
        self.assertAlmostEqual(world.d2, 55.88, places=6)
        self.assertIsNone(world.yield_onset_distance)
        self.assertEqual(world.pedestrian_position, 0.0)

    def test_yield_onset_distance(self):
        onset = yield_onset_distance(11.176, 2.3, 3.0)
        self.assertAlmostEqual(onset, 11.176 ** 2 / 4.6 + 3.0, places=9)

    def test_yielding_vehicle_stops_at_margin(self):
        spec = ScenarioSpec(v0=mph_to_mps(25), tau0=3.0, yielding=True)
        world = build_scenario(spec)
        lead, follower = world.vehicles
        self.assertFalse(lead.yielding)
        self.assertTrue(follower.yielding)
        stopped = run_until_stopped(follower)
        self.assertAlmostEqual(stopped.distance, spec.geometry.stop_margin, delta=1e-9)
        self.assertEqual(stopped.speed, 0.0)

    def test_late_yield_brakes_harder_and_still_stops_at_margin(self):
        spec = ScenarioSpec(v0=mph_to_mps(30), tau0=0.5, lead_time=0.1, yielding=True)
        follower = build_scenario(spec).vehicles[1]
        self.assertGreater(follower.decel, 2.3)
        stopped = run_until_stopped(follower)
        self.assertAlmostEqual(stopped.distance, 3.0, delta=1e-9)

    def test_listed_placements_and_onsets(self):
        world = build_scenario(ScenarioSpec(v0=13.411, tau0=3.0, lead_time=2.0))
        self.assertAlmostEqual(world.d1, 26.82, delta=0.01)
        self.assertAlmostEqual(world.d2, 67.06, delta=0.01)
        world = build_scenario(ScenarioSpec(v0=11.176, tau0=5.0, lead_time=2.0))
        self.assertAlmostEqual(world.d1, 22.35, delta=0.01)
        self.assertAlmostEqual(world.d2, 78.23, delta=0.01)
        self.assertAlmostEqual(yield_onset_distance(11.176, 2.3, 3.0), 30.15, delta=0.01)
        self.assertAlmostEqual(yield_onset_distance(13.411, 2.3, 3.0), 42.10, delta=0.01)

    def test_yielding_vehicle_must_start_beyond_stop_margin(self):
        for tau0 in (0.3, 0.2):
            with self.subTest(tau0=tau0), self.assertRaises(ScenarioError):
                ScenarioSpec(v0=10.0, tau0=tau0, lead_time=0.0, yielding=True)
        # the same placement is fine for a vehicle that does not yield
        world = build_scenario(ScenarioSpec(v0=10.0, tau0=0.2, lead_time=0.0))
        self.assertAlmostEqual(world.d2, 2.0, places=9)

    def test_follower_never_moves_backwards(self):
        follower = build_scenario(ScenarioSpec(v0=10.0, tau0=0.31, lead_time=0.0, yielding=True)).vehicles[1]
        self.assertGreater(follower.decel, 0.0)
        previous = follower.distance
        while follower.phase != VehiclePhase.STOPPED:
            follower = advance_vehicle(follower, 0.01)
            self.assertLessEqual(follower.distance, previous + 1e-12)
            previous = follower.distance
        self.assertAlmostEqual(follower.distance, 3.0, delta=1e-9)

    def test_constant_speed_vehicle_never_slows(self):
        lead = build_scenario(ScenarioSpec(v0=10.0, tau0=3.0)).vehicles[0]
        for _ in range(50):
            lead = advance_vehicle(lead, 0.1)
        self.assertEqual(lead.speed, 10.0)
        self.assertAlmostEqual(lead.distance, 20.0 - 50.0, places=9)

    def test_gap_onset_time(self):
        spec = ScenarioSpec(v0=11.176, tau0=3.0)
        self.assertAlmostEqual(spec.gap_onset_time, 2.0 + 4.5 / 11.176, places=9)

    def test_rejects_invalid_kinematics(self):
        with self.assertRaises(ScenarioError):
            ScenarioSpec(v0=0.0, tau0=3.0)
        with self.assertRaises(ValueError):
            ScenarioSpec(v0=10.0, tau0=-1.0)
        with self.assertRaises(ScenarioError):
            ScenarioSpec(v0=10.0, tau0=3.0, ehmi=True)


class TrainingScenarioTests(SimpleTestCase):
    def test_draws_within_ranges(self):
        rng = np.random.default_rng(3)
        for _ in range(500):
            spec = sample_training_scenario(rng)
            self.assertTrue(8.0 <= spec.v0 <= 17.0)
            self.assertTrue(0.1 <= spec.tau0 <= 10.0)
            if spec.ehmi:
                self.assertTrue(spec.yielding)

    def test_same_seed_same_scenarios(self):
        a = [sample_training_scenario(np.random.default_rng(11)) for _ in range(3)]
        b = [sample_training_scenario(np.random.default_rng(11)) for _ in range(3)]
        self.assertEqual(a, b)


class ScenarioTableTests(SimpleTestCase):
    def test_bundled_table(self):
        table = load_scenario_table(BUNDLED_SCENARIOS)
        self.assertEqual(len(table.rows), 8)
        self.assertEqual(sum(row.yielding for row in table.rows), 4)

    def test_expand_trials_counts(self):
        table = load_scenario_table()
        trials = table.expand_trials(50)
        self.assertEqual(len(trials), 8 * 2 * 50)
        self.assertEqual([t.index for t in trials], list(range(800)))
        self.assertEqual(sum(t.spec.night for t in trials), 400)

    def test_alternating_ehmi(self):
        trials = load_scenario_table().expand_trials(4)
        yielding = [t for t in trials if t.spec.yielding]
        self.assertEqual(sum(t.spec.ehmi for t in yielding), len(yielding) // 2)
        self.assertFalse(any(t.spec.ehmi for t in trials if not t.spec.yielding))
        self.assertEqual([t.spec.ehmi for t in yielding[:4]], [False, True, False, True])

    def test_json_table(self):
        rows = [{"name": "fast", "v0": 12.0, "tau0": 4.0}]
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "table.json"
            path.write_text(json.dumps({"lead_time": 1.5, "scenarios": rows}))
            table = load_scenario_table(path)
        self.assertEqual(table.rows[0].v0, 12.0)
        self.assertEqual(table.lead_time, 1.5)

    def test_ehmi_on_constant_row_rejected(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "table.yaml"
            path.write_text("scenarios:\n  - {v0_mph: 25, tau0: 3, ehmi: on}\n")
            with self.assertRaises(ScenarioError):
                load_scenario_table(path)

    def test_rejects_zero_reps(self):
        with self.assertRaises(ScenarioError):
            load_scenario_table().expand_trials(0)
