"""
Management command to run greedy evaluation episodes over a scenario table
"""
import logging

from django.conf import settings
from django.core.management.base import BaseCommand

from analysis.behaviour import MetricTable, aggregate_episodes
from analysis.reports import EPISODES_FILE, METRICS_FILE, TICKS_FILE, episode_table, write_frame
from crossing_sim.runs import (
    RunConfig,
    RunContext,
    add_run_arguments,
    command_errors,
    configure_determinism,
    resolve_checkpoint,
)
from simulator.env import NonPolicyParams
from simulator.records import write_tick_log
from simulator.scenario import load_scenario_table
from training.checkpoints import load_checkpoint
from training.rollouts import episode_tasks, run_episodes

logger = logging.getLogger(__name__)


def simulate_defaults():
    return {
        'scenario_table': settings.CROSSING_SCENARIO_TABLE,
        'workers': settings.CROSSING_WORKERS,
    }


class Command(BaseCommand):
    help = 'Run greedy episodes of a trained policy over every scenario condition and aggregate metrics'

    def add_arguments(self, parser):
        add_run_arguments(
            parser, 'variant', 'seed', 'checkpoint', 'scenario_table', 'reps', 'workers',
            'output_dir', 'single_thread',
        )

    def handle(self, *args, **options):
        with command_errors():
            config = RunConfig.resolve('simulate', options, simulate_defaults())
            checkpoint_path = resolve_checkpoint(config)
            config.require('scenario_table')
            table = load_scenario_table(config.scenario_table)
            params = NonPolicyParams.from_dict(config.section('params'))
            configure_determinism(config.seed, config.single_thread)

            checkpoint = load_checkpoint(checkpoint_path)
            if checkpoint.variant.value != config.variant:
                logger.warning(
                    f'Checkpoint variant {checkpoint.variant.value} differs from requested {config.variant}; '
                    f'using the checkpoint variant'
                )

            trials = table.expand_trials(config.reps)
            self.stdout.write(
                self.style.SUCCESS(
                    f'Simulating {len(trials)} episodes ({len(table.rows)} rows x day/night x {config.reps} reps) '
                    f'on {config.workers} worker(s)'
                )
            )

            with RunContext(config) as run:
                run.checkpoint_path = checkpoint_path
                tasks = episode_tasks(trials, params, config.seed, stream='eval')
                records = run_episodes(checkpoint_path, tasks, workers=config.workers, checkpoint=checkpoint)

                episodes = episode_table(records)
                metrics = MetricTable(aggregate_episodes(episodes))
                run.add_file(write_tick_log(records, config.output_dir / TICKS_FILE))
                run.add_file(write_frame(episodes, config.output_dir / EPISODES_FILE))
                run.add_file(metrics.to_csv(config.output_dir / METRICS_FILE))

                outcomes = episodes['outcome'].value_counts().to_dict()
                run.summary.update({
                    'episodes': len(records),
                    'conditions': len(metrics),
                    'outcomes': {str(k): int(v) for k, v in outcomes.items()},
                    'params': params.to_dict(),
                    'checkpoint': str(checkpoint_path),
                })

        for outcome, count in sorted(run.summary['outcomes'].items()):
            self.stdout.write(f'  {outcome}: {count}')
        self.stdout.write(self.style.SUCCESS(f'Wrote {len(records)} episodes to {config.output_dir}'))
