import math
import shutil
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd
from django.conf import settings
from django.test import SimpleTestCase

from analysis.behaviour import MetricTable
from analysis.calibration import (
    DISCREPANCY_FLOOR,
    PARAM_BOUNDS,
    BolfiConfig,
    bolfi_minimize,
    bolfi_run,
    discrepancy,
    from_unit,
    gp_fit,
    space_filling_design,
    to_unit,
)
from analysis.exceptions import CalibrationError, MetricTableError
from simulator.scenario import load_scenario_table
from training.checkpoints import load_checkpoint
from training.tests.test_checkpoints import write_checkpoint


def condition(v0=11.176, tau0=3.0, yielding=False, ehmi=False, night=False, **metrics):
    row = {
        'v0': v0, 'tau0': tau0, 'yielding': yielding, 'ehmi': ehmi, 'night': night,
        'g': np.nan, 'e': np.nan, 'cit': 1.0, 'speed': 1.4, 'n': 10, 'n_ny': 10, 'n_y': 0,
    }
    row.update(metrics)
    return row


def table(*rows):
    return MetricTable(pd.DataFrame(list(rows)))


class DiscrepancyTests(SimpleTestCase):
    def setUp(self):
        self.observed = MetricTable.read_csv(settings.CROSSING_SYNTHETIC_OBSERVED)

    def test_identical_tables_hit_the_floor(self):
        value = discrepancy(self.observed, self.observed)
        self.assertAlmostEqual(value, math.log(DISCREPANCY_FLOOR), places=9)
        self.assertAlmostEqual(value, -20.7233, places=4)

    def test_single_condition_rate_difference(self):
        observed = table(condition(g=0.5))
        simulated = table(condition(g=0.7))
        self.assertAlmostEqual(discrepancy(observed, simulated), -1.2528, places=4)

    def test_symmetric(self):
        shifted = self.observed.frame.copy()
        shifted['cit'] = shifted['cit'] * 1.3
        shifted['g'] = shifted['g'] * 0.8
        other = MetricTable(shifted)
        self.assertAlmostEqual(discrepancy(self.observed, other), discrepancy(other, self.observed), places=12)

    def test_condition_mismatch_is_rejected(self):
        subset = MetricTable(self.observed.frame.iloc[:-1])
        with self.assertRaises(MetricTableError):
            discrepancy(self.observed, subset)

    def test_undefined_cells_are_skipped(self):
        observed = table(condition(g=0.5, cit=np.nan), condition(tau0=5.0, g=0.9))
        simulated = table(condition(g=0.5), condition(tau0=5.0, g=0.9))
        self.assertAlmostEqual(discrepancy(observed, simulated), math.log(DISCREPANCY_FLOOR), places=9)

    def test_trial_counts_weight_conditions(self):
        observed = table(condition(g=0.5, n=30, n_ny=30), condition(tau0=5.0, g=1.0, n=10, n_ny=10))
        simulated = table(condition(g=0.7, n=30, n_ny=30), condition(tau0=5.0, g=1.0, n=10, n_ny=10))
        # weight 60 / mean(60, 20) = 1.5, scale max(g) = 1.0
        self.assertAlmostEqual(discrepancy(observed, simulated), math.log(1.5 * 0.2), places=9)

    def test_zero_maximum_falls_back_to_unit_scale(self):
        observed = table(condition(g=0.0, cit=0.0))
        simulated = table(condition(g=0.0, cit=0.0, speed=1.5))
        self.assertAlmostEqual(discrepancy(observed, simulated), math.log(0.1 / 1.5), places=9)

    def test_larger_differences_increase_discrepancy(self):
        values = []
        for factor in (1.05, 1.2, 1.5):
            shifted = self.observed.frame.copy()
            shifted['speed'] = shifted['speed'] * factor
            values.append(discrepancy(self.observed, MetricTable(shifted)))
        self.assertLess(values[0], values[1])
        self.assertLess(values[1], values[2])


class SurrogateTests(SimpleTestCase):
    def test_posterior_mean_interpolates_training_points(self):
        x = np.linspace(0.0, 1.0, 10)[:, None]
        y = np.sin(3.0 * x[:, 0])
        surrogate = gp_fit(x, y, restarts=2)
        mean, std = surrogate.predict(x)
        np.testing.assert_allclose(mean, y, atol=0.05)
        self.assertTrue(np.all(np.isfinite(std)))

    def test_variance_is_lower_at_training_points(self):
        x = np.linspace(0.0, 1.0, 6)[:, None]
        y = np.cos(4.0 * x[:, 0])
        surrogate = gp_fit(x, y, restarts=2)
        _, at_points = surrogate.predict(x[2:4])
        _, between = surrogate.predict(np.array([[0.5]]))
        self.assertLess(at_points.max(), between[0])

    def test_quadratic_minimum_is_recovered(self):
        x = np.linspace(0.0, 1.0, 20)[:, None]
        y = (x[:, 0] - 0.3) ** 2
        surrogate = gp_fit(x, y, restarts=2)
        grid = np.linspace(0.0, 1.0, 1001)[:, None]
        mean, _ = surrogate.predict(grid)
        self.assertLessEqual(abs(grid[np.argmin(mean), 0] - 0.3), 0.015)

    def test_fit_is_invariant_to_point_order(self):
        rng = np.random.default_rng(2)
        x = rng.uniform(size=(12, 2))
        y = np.sum((x - 0.4) ** 2, axis=1)
        order = rng.permutation(12)
        probe = rng.uniform(size=(5, 2))
        first, _ = gp_fit(x, y, restarts=0).predict(probe)
        second, _ = gp_fit(x[order], y[order], restarts=0).predict(probe)
        np.testing.assert_allclose(first, second, atol=1e-4)

    def test_parameter_space_bounds(self):
        rng = np.random.default_rng(3)
        points = from_unit(rng.uniform(size=(8, 5)), PARAM_BOUNDS)
        values = rng.normal(size=8)
        surrogate = gp_fit(points, values, bounds=PARAM_BOUNDS, restarts=0)
        mean, _ = surrogate.predict(points)
        self.assertEqual(mean.shape, (8,))

    def test_invalid_inputs(self):
        with self.assertRaises(CalibrationError):
            gp_fit(np.array([[0.5]]), np.array([1.0]))
        with self.assertRaises(CalibrationError):
            gp_fit(np.array([[0.1], [0.5]]), np.array([1.0, np.inf]))


class DesignTests(SimpleTestCase):
    def test_space_filling_points(self):
        points = space_filling_design(20, 5, seed=0)
        self.assertEqual(points.shape, (20, 5))
        self.assertTrue(np.all((points >= 0) & (points <= 1)))
        self.assertEqual(len(np.unique(points, axis=0)), 20)

    def test_unit_mapping_round_trip(self):
        point = np.array([2.0, 4.0, 1.0, 1.0, 1.0])
        np.testing.assert_allclose(from_unit(to_unit(point, PARAM_BOUNDS), PARAM_BOUNDS), point)

    def test_config_validation(self):
        with self.assertRaises(ValueError):
            BolfiConfig(budget=10, init_points=20)
        with self.assertRaises(ValueError):
            BolfiConfig.from_dict({'iterations': 5})
        self.assertEqual(BolfiConfig().budget, 80)


class BolfiTests(SimpleTestCase):
    bounds = np.array([[0.0, 1.0], [0.0, 2.0]])
    config = BolfiConfig(budget=24, init_points=8, reps=1, gp_restarts=1, acquisition_starts=5)

    @staticmethod
    def objective(point):
        return float((point[0] - 0.3) ** 2 + (point[1] - 1.2) ** 2)

    def test_minimizes_synthetic_function(self):
        result = bolfi_minimize(self.objective, self.bounds, self.config, seed=0, names=('a', 'b'))
        trace = result.trace
        self.assertEqual(len(trace), 24)
        self.assertEqual(list(trace['phase'][:8]), ['init'] * 8)
        self.assertTrue((trace['best_so_far'].diff().dropna() <= 0).all())
        self.assertTrue(((trace['a'] >= 0) & (trace['a'] <= 1) & (trace['b'] >= 0) & (trace['b'] <= 2)).all())
        self.assertLessEqual(result.best_value, 0.02)
        self.assertEqual(result.best_value, trace['discrepancy'].min())
        self.assertEqual(set(result.best_dict()), {'a', 'b'})

    def test_same_seed_gives_same_trace(self):
        first = bolfi_minimize(self.objective, self.bounds, self.config, seed=4)
        second = bolfi_minimize(self.objective, self.bounds, self.config, seed=4)
        pd.testing.assert_frame_equal(first.trace, second.trace)

    def test_callback_sees_every_evaluation(self):
        lengths = []
        bolfi_minimize(self.objective, self.bounds, self.config, seed=1, callback=lambda t: lengths.append(len(t)))
        self.assertEqual(lengths, list(range(1, 25)))

    def test_non_finite_objective_aborts_with_trace(self):
        calls = []

        def objective(point):
            calls.append(point)
            return math.nan if len(calls) == 3 else 1.0

        with self.assertRaises(CalibrationError) as ctx:
            bolfi_minimize(objective, self.bounds, self.config, seed=0)
        self.assertEqual(len(ctx.exception.trace), 2)


class BolfiRunConditionTests(SimpleTestCase):
    config = BolfiConfig(budget=3, init_points=3, reps=1)

    def setUp(self):
        self.tmp = Path(tempfile.mkdtemp())
        write_checkpoint(self.tmp / 'policy.pt')
        self.checkpoint = load_checkpoint(self.tmp / 'policy.pt')
        self.full = MetricTable.read_csv(settings.CROSSING_SYNTHETIC_OBSERVED)
        self.scenarios = load_scenario_table()

    def tearDown(self):
        shutil.rmtree(self.tmp, ignore_errors=True)

    def test_observed_subset_of_conditions(self):
        day_only = MetricTable(self.full.frame[~self.full.frame['night'].astype(bool)])
        result = bolfi_run(self.checkpoint, day_only, self.scenarios, self.config, seed=0)
        self.assertEqual(len(result.trace), 3)
        self.assertTrue(np.isfinite(result.trace['discrepancy']).all())

    def test_conditions_beyond_the_simulated_reps_are_ignored(self):
        # one rep per condition never shows the eHMI on alternating rows
        with self.assertLogs('analysis.calibration', level='WARNING') as logs:
            result = bolfi_run(self.checkpoint, self.full, self.scenarios, self.config, seed=0)
        self.assertIn('Ignoring 8 observed conditions', logs.output[0])
        self.assertEqual(len(result.trace), 3)

    def test_no_shared_condition(self):
        elsewhere = table(condition(v0=20.0, tau0=7.0))
        with self.assertRaises(MetricTableError):
            bolfi_run(self.checkpoint, elsewhere, self.scenarios, self.config, seed=0)
