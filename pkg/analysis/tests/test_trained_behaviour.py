"""
Long runs on trained policies. Each class trains its own checkpoint once;
run with ``python manage.py test --tag slow``.
"""

import shutil
import tempfile
from pathlib import Path

from django.conf import settings
from django.test import SimpleTestCase, tag

from analysis.behaviour import phenomenon_checklist
from analysis.calibration import BolfiConfig, bolfi_run, discrepancy, simulate_participant
from simulator.env import PARAM_RANGES, NonPolicyParams
from simulator.scenario import load_scenario_table, mph_to_mps
from training.checkpoints import load_checkpoint
from training.ppo import TrainConfig, train

MID_RANGE = NonPolicyParams(**{name: (low + high) / 2 for name, (low, high) in PARAM_RANGES.items()})


def gap_acceptance(table, v0, tau0):
    """Trial-weighted gap acceptance over day and night at one non-yielding condition"""
    frame = table.frame
    rows = frame[(frame['v0'] == round(v0, 3)) & (frame['tau0'] == tau0) & ~frame['yielding'].astype(bool)]
    return float((rows['g'] * rows['n_ny']).sum() / rows['n_ny'].sum())


class TrainedCheckpointTestCase(SimpleTestCase):
    train_config = TrainConfig(total_env_steps=1_000_000)

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.tmp = Path(tempfile.mkdtemp())
        result = train('SM', cls.train_config, seed=0, output_dir=cls.tmp / 'train')
        cls.checkpoint = load_checkpoint(result.checkpoint_path)
        cls.scenarios = load_scenario_table()
        cls.workers = settings.CROSSING_WORKERS

    @classmethod
    def tearDownClass(cls):
        shutil.rmtree(cls.tmp, ignore_errors=True)
        super().tearDownClass()


@tag('slow')
class TrendReproductionTests(TrainedCheckpointTestCase):
    train_config = TrainConfig(total_env_steps=1_000_000, fixed_params=MID_RANGE.to_dict())

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        table = simulate_participant(
            cls.checkpoint, MID_RANGE, cls.scenarios, reps=100, seed=0, workers=cls.workers, stream='eval'
        )
        cls.checklist = {item.name: item for item in phenomenon_checklist(table)}

    def test_gap_acceptance_rises_with_gap(self):
        item = self.checklist['gap_acceptance_increases_with_gap']
        self.assertGreaterEqual(item.magnitude, 0.15)

    def test_walking_speed_is_lower_for_longer_gap(self):
        self.assertTrue(self.checklist['speed_lower_for_longer_gap'].holds)

    def test_early_crossings_are_faster(self):
        self.assertTrue(self.checklist['early_faster_than_late'].holds)

    def test_initiation_time_rises_with_gap(self):
        self.assertTrue(self.checklist['cit_increases_with_gap'].holds)


@tag('slow')
class ParameterResponseTests(TrainedCheckpointTestCase):
    def test_penalties_lower_gap_acceptance(self):
        zero = NonPolicyParams(0.0, 0.0, 0.0, 0.0, 0.0)
        penalized = NonPolicyParams(0.0, 0.0, 0.0, effort_weight=10.0, looming_weight=10.0)
        rates = [
            gap_acceptance(
                simulate_participant(self.checkpoint, point, self.scenarios, reps=50, seed=0, workers=self.workers),
                mph_to_mps(25),
                3.0,
            )
            for point in (zero, penalized)
        ]
        self.assertLess(rates[1], rates[0])

    def test_calibration_recovers_synthetic_point(self):
        truth = NonPolicyParams(
            sigma_v_day=2.0, sigma_v_night=6.0, time_pressure_gain=1.5, effort_weight=2.0, looming_weight=4.0
        )
        config = BolfiConfig(budget=80, init_points=20, reps=20)
        observed = simulate_participant(
            self.checkpoint, truth, self.scenarios, config.reps, seed=0, workers=self.workers, stream='synthesize'
        )
        at_truth = discrepancy(
            observed, simulate_participant(self.checkpoint, truth, self.scenarios, config.reps, 0, self.workers)
        )

        result = bolfi_run(self.checkpoint, observed, self.scenarios, config, seed=0, workers=self.workers)

        self.assertEqual(len(result.trace), 80)
        self.assertTrue((result.trace['best_so_far'].diff().dropna() <= 0).all())
        self.assertLessEqual(result.best_value, at_truth + 0.1)
