"""
Management command to train a crossing policy with PPO
"""
import dataclasses
import logging
import math

from django.core.management.base import BaseCommand

from crossing_sim.runs import RunConfig, RunContext, add_run_arguments, command_errors, configure_determinism
from simulator.env import EnvConfig
from training.ppo import TrainConfig, train

logger = logging.getLogger(__name__)


def finite_or_none(value):
    """None in place of NaN, which the run-history JSON column rejects"""
    value = float(value)
    return value if math.isfinite(value) else None


class Command(BaseCommand):
    help = 'Train a crossing policy (SM, S or M variant) and write a checkpoint and learning curve'

    def add_arguments(self, parser):
        add_run_arguments(parser, 'variant', 'seed', 'steps', 'output_dir', 'single_thread')

    def handle(self, *args, **options):
        with command_errors():
            config = RunConfig.resolve('train', options)
            train_config = TrainConfig.from_dict(config.section('train'))
            if config.steps:
                train_config = dataclasses.replace(train_config, total_env_steps=config.steps)
            env_config = EnvConfig.from_dict(config.section('env'))
            configure_determinism(config.seed, config.single_thread)

            self.stdout.write(
                self.style.SUCCESS(
                    f'Training {config.variant} for {train_config.total_env_steps} steps '
                    f'({train_config.iterations} iterations, seed {config.seed})'
                )
            )

            with RunContext(config) as run:
                result = train(
                    config.variant,
                    train_config,
                    seed=config.seed,
                    env_config=env_config,
                    output_dir=config.output_dir,
                    progress=self.report_progress if options['verbosity'] > 1 else None,
                )
                run.checkpoint_path = result.checkpoint_path
                run.add_file(result.checkpoint_path)
                run.add_file(config.output_dir / 'learning_curve.csv')
                run.add_files(sorted((config.output_dir / 'checkpoints').glob('*.pt')))

                last = result.learning_curve.iloc[-1]
                run.summary.update({
                    'iterations': result.iterations,
                    'env_steps': result.env_steps,
                    'final_mean_episode_reward': finite_or_none(last['mean_episode_reward']),
                    'final_collision_rate': finite_or_none(last['collision_rate']),
                    'checkpoint': str(result.checkpoint_path),
                })

        reward = run.summary['final_mean_episode_reward']
        if reward is None:
            self.stdout.write(self.style.WARNING('No episode finished in the last iteration'))
        else:
            self.stdout.write(
                f'Final mean episode reward {reward:.3f}, '
                f'collision rate {run.summary["final_collision_rate"]:.3f}'
            )
        self.stdout.write(self.style.SUCCESS(f'Checkpoint written to {result.checkpoint_path}'))

    def report_progress(self, row):
        self.stdout.write(
            f'  iter {row["iteration"]}: steps {row["env_steps"]}, '
            f'reward {row["mean_episode_reward"]:.3f}, collisions {row["collision_rate"]:.3f}'
        )
