"""
Management command to generate an observed-metric table from a policy at a known parameter point
"""
import json
import logging

import pandas as pd
from django.conf import settings
from django.core.management.base import BaseCommand

from analysis.behaviour import MetricTable
from analysis.calibration import discrepancy, simulate_participant
from crossing_sim.runs import (
    RunConfig,
    RunConfigError,
    RunContext,
    add_run_arguments,
    command_errors,
    configure_determinism,
    resolve_checkpoint,
)
from simulator.env import NonPolicyParams
from simulator.scenario import load_scenario_table
from training.checkpoints import load_checkpoint

logger = logging.getLogger(__name__)


class Command(BaseCommand):
    help = 'Simulate a synthetic observed-metric table at known non-policy parameters'

    def add_arguments(self, parser):
        add_run_arguments(
            parser, 'variant', 'seed', 'checkpoint', 'scenario_table', 'reps', 'workers', 'output_dir',
            'single_thread',
        )
        parser.add_argument(
            '--participants',
            default='0',
            help='Write this many participant tables with independent seeds (default: one table, no column)',
        )

    def handle(self, *args, **options):
        with command_errors():
            config = RunConfig.resolve('synthesize', options, {
                'scenario_table': settings.CROSSING_SCENARIO_TABLE,
                'workers': settings.CROSSING_WORKERS,
            })
            try:
                participants = int(options.get('participants') or 0)
            except ValueError:
                raise RunConfigError(f'--participants must be an integer, got {options["participants"]!r}')
            if participants < 0:
                raise RunConfigError(f'--participants must be >= 0, got {participants}')

            checkpoint_path = resolve_checkpoint(config)
            config.require('scenario_table')
            table = load_scenario_table(config.scenario_table)
            point = NonPolicyParams.from_dict(config.section('params'))
            checkpoint = load_checkpoint(checkpoint_path)
            configure_determinism(config.seed, config.single_thread)

            self.stdout.write(
                self.style.SUCCESS(
                    f'Synthesizing observed metrics from {checkpoint.variant.value} at '
                    + ', '.join(f'{k}={v:g}' for k, v in point.to_dict().items())
                )
            )

            with RunContext(config) as run:
                run.checkpoint_path = checkpoint_path
                frames = []
                for index in range(max(participants, 1)):
                    metrics = simulate_participant(
                        checkpoint, point, table, config.reps, config.seed + index,
                        workers=config.workers, stream='synthesize',
                    )
                    frame = metrics.frame
                    if participants:
                        frame.insert(0, 'participant', f'P{index + 1:02d}')
                    frames.append(frame)
                    self.stdout.write(f'  table {index + 1}: {len(metrics)} conditions')

                observed = MetricTable(pd.concat(frames, ignore_index=True))
                observed_path = run.add_file(observed.to_csv(config.output_dir / 'observed.csv'))

                # Objective value of the true point as calibrate evaluates it with the same seed
                reference = simulate_participant(
                    checkpoint, point, table, config.reps, config.seed, workers=config.workers,
                )
                first = observed.for_participant('P01') if participants else observed
                point_path = config.output_dir / 'point.json'
                with open(point_path, 'w') as fh:
                    json.dump({
                        'variant': checkpoint.variant.value,
                        'seed': config.seed,
                        'reps': config.reps,
                        'participants': participants,
                        'params': point.to_dict(),
                        'discrepancy_at_point': discrepancy(first, reference),
                    }, fh, indent=2, sort_keys=True)
                run.add_file(point_path)
                run.summary.update({'params': point.to_dict(), 'observed': str(observed_path)})

        self.stdout.write(self.style.SUCCESS(f'Observed table written to {observed_path}'))
