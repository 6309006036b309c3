import shutil
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd
import torch
from django.test import SimpleTestCase, tag

from simulator.env import OBSERVATION_SIZE, ActionSet, EnvConfig, NonPolicyParams, Variant
from simulator.records import Outcome
from simulator.scenario import load_scenario_table
from training.checkpoints import FORMAT_VERSION, MAGIC, load_checkpoint, save_checkpoint
from training.exceptions import CheckpointError
from training.ppo import PolicyNet, RunningNormalizer, TrainConfig
from training.rollouts import episode_tasks, greedy_rollout, run_episodes


def write_checkpoint(path, variant='SM', seed=0):
    torch.manual_seed(seed)
    actions = ActionSet.build()
    policy = PolicyNet(OBSERVATION_SIZE, len(actions), (16,))
    normalizer = RunningNormalizer(OBSERVATION_SIZE)
    normalizer.update(np.random.default_rng(seed).normal(size=(64, OBSERVATION_SIZE)))
    save_checkpoint(path, policy, normalizer, variant, actions, EnvConfig(), TrainConfig(), seed, 3)
    return policy, normalizer


class CheckpointTests(SimpleTestCase):
    def setUp(self):
        self.tmp = Path(tempfile.mkdtemp())
        self.path = self.tmp / 'policy.pt'

    def tearDown(self):
        shutil.rmtree(self.tmp, ignore_errors=True)

    def test_round_trip_preserves_greedy_actions(self):
        policy, normalizer = write_checkpoint(self.path)
        checkpoint = load_checkpoint(self.path)

        obs = np.random.default_rng(1).normal(scale=5.0, size=(100, OBSERVATION_SIZE)).astype(np.float32)
        expected = policy.greedy_actions(torch.as_tensor(normalizer.normalize(obs))).numpy()
        np.testing.assert_array_equal(checkpoint.act_batch(obs), expected)
        self.assertEqual(checkpoint.act(obs[0]), int(expected[0]))
        self.assertEqual(checkpoint.variant, Variant.SM)
        self.assertEqual(checkpoint.iteration, 3)
        self.assertTrue(checkpoint.normalizer.frozen)

    def test_missing_file(self):
        with self.assertRaises(FileNotFoundError):
            load_checkpoint(self.tmp / 'absent.pt')

    def test_bad_magic_is_rejected(self):
        torch.save({'magic': 'SOMETHING', 'format_version': FORMAT_VERSION}, self.path)
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path)

    def test_garbage_file_is_rejected(self):
        self.path.write_bytes(b'not a checkpoint')
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path)

    def test_future_format_is_rejected(self):
        write_checkpoint(self.path)
        payload = torch.load(self.path, weights_only=True)
        payload['format_version'] = FORMAT_VERSION + 1
        torch.save(payload, self.path)
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path)

    def test_action_set_mismatch_is_rejected(self):
        write_checkpoint(self.path)
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path, actions=ActionSet.build('moving_only').to_list())
        self.assertEqual(load_checkpoint(self.path, actions=ActionSet.build().to_list()).actions.mode.value,
                         'with_wait')

    def test_header_fields(self):
        write_checkpoint(self.path, variant='M')
        payload = torch.load(self.path, weights_only=True)
        self.assertEqual(payload['magic'], MAGIC)
        self.assertEqual(payload['variant'], 'M')
        self.assertEqual(len(payload['actions']), 21)


class RolloutTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.tmp = Path(tempfile.mkdtemp())
        cls.path = cls.tmp / 'policy.pt'
        write_checkpoint(cls.path)
        cls.checkpoint = load_checkpoint(cls.path)
        cls.table = load_scenario_table()

    @classmethod
    def tearDownClass(cls):
        shutil.rmtree(cls.tmp, ignore_errors=True)
        super().tearDownClass()

    def test_greedy_rollout_is_deterministic(self):
        spec = self.table.expand_trials(1)[0].spec
        first = greedy_rollout(self.checkpoint, spec, NonPolicyParams(), seed=11, episode=4)
        second = greedy_rollout(self.checkpoint, spec, NonPolicyParams(), seed=11, episode=4)
        self.assertNotEqual(first.outcome, Outcome.RUNNING)
        self.assertEqual(first.episode, 4)
        pd.testing.assert_frame_equal(first.to_frame(), second.to_frame())

    def test_tasks_cover_every_trial_with_distinct_seeds(self):
        trials = self.table.expand_trials(2)
        tasks = episode_tasks(trials, NonPolicyParams(), master_seed=5)
        self.assertEqual(len(tasks), 32)
        self.assertEqual(len({t.seed for t in tasks}), 32)
        self.assertEqual([t.index for t in tasks], list(range(32)))

    def test_in_process_run_preserves_order(self):
        tasks = episode_tasks(self.table.expand_trials(1)[:4], NonPolicyParams(), master_seed=0)
        records = run_episodes(self.path, tasks, workers=1, checkpoint=self.checkpoint)
        self.assertEqual([r.episode for r in records], [0, 1, 2, 3])
        self.assertEqual([r.spec for r in records], [t.spec for t in tasks])

    @tag('slow')
    def test_worker_pool_matches_in_process_run(self):
        tasks = episode_tasks(self.table.expand_trials(1)[:6], NonPolicyParams(), master_seed=2)
        serial = run_episodes(self.path, tasks, workers=1)
        parallel = run_episodes(self.path, tasks, workers=2)
        for a, b in zip(serial, parallel):
            pd.testing.assert_frame_equal(a.to_frame(), b.to_frame())
