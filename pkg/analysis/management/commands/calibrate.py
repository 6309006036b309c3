"""
Management command to fit non-policy parameters to an observed metric table
"""
import dataclasses
import json
import logging

from django.conf import settings
from django.core.management.base import BaseCommand

from analysis.behaviour import MetricTable
from analysis.calibration import BolfiConfig, bolfi_run
from analysis.exceptions import CalibrationError
from analysis.reports import write_frame
from crossing_sim.runs import (
    RunConfig,
    RunContext,
    add_run_arguments,
    command_errors,
    configure_determinism,
    resolve_checkpoint,
)
from simulator.scenario import load_scenario_table
from training.checkpoints import load_checkpoint

logger = logging.getLogger(__name__)


class Command(BaseCommand):
    help = 'Calibrate sigma_v (day/night), time pressure, effort and looming weights against observed metrics'

    def add_arguments(self, parser):
        add_run_arguments(
            parser, 'variant', 'seed', 'checkpoint', 'observed', 'scenario_table', 'budget', 'reps',
            'workers', 'output_dir', 'single_thread',
        )

    def handle(self, *args, **options):
        with command_errors():
            config = RunConfig.resolve('calibrate', options, {
                'scenario_table': settings.CROSSING_SCENARIO_TABLE,
                'observed': settings.CROSSING_SYNTHETIC_OBSERVED,
                'workers': settings.CROSSING_WORKERS,
            })
            checkpoint_path = resolve_checkpoint(config)
            config.require('observed', 'scenario_table')
            bolfi = dataclasses.replace(
                BolfiConfig.from_dict(config.section('bolfi')), budget=config.budget, reps=config.reps
            )
            observed = MetricTable.read_csv(config.observed)
            table = load_scenario_table(config.scenario_table)
            checkpoint = load_checkpoint(checkpoint_path)
            configure_determinism(config.seed, config.single_thread)

            participants = observed.participants() or [None]
            self.stdout.write(
                self.style.SUCCESS(
                    f'Calibrating {checkpoint.variant.value} against {config.observed} '
                    f'({len(participants)} participant table(s), {bolfi.budget} evaluations each)'
                )
            )

            with RunContext(config) as run:
                run.checkpoint_path = checkpoint_path
                results = {}
                for participant in participants:
                    target = observed.for_participant(participant) if participant is not None else observed
                    results[participant] = self.calibrate_one(run, participant, checkpoint, target, table, bolfi)

                run.summary.update({
                    'bolfi': bolfi.to_dict(),
                    'best': {
                        str(p) if p is not None else 'all': {
                            'discrepancy': r.best_value,
                            'params': r.best_dict(),
                        }
                        for p, r in results.items()
                    },
                })

        for participant, result in results.items():
            label = f'participant {participant}' if participant is not None else 'observed table'
            params = ', '.join(f'{k}={v:.3f}' for k, v in result.best_dict().items())
            self.stdout.write(f'  {label}: discrepancy {result.best_value:.4f} at {params}')
        self.stdout.write(self.style.SUCCESS(f'Calibration written to {config.output_dir}'))

    def calibrate_one(self, run, participant, checkpoint, observed, table, bolfi):
        suffix = f'_{participant}' if participant is not None else ''
        trace_path = run.config.output_dir / f'trace{suffix}.csv'
        best_path = run.config.output_dir / f'best_point{suffix}.json'

        def save_trace(trace):
            write_frame(trace, trace_path)

        try:
            result = bolfi_run(
                checkpoint,
                observed,
                table,
                config=bolfi,
                seed=run.config.seed,
                workers=run.config.workers,
                callback=save_trace,
            )
        except CalibrationError as e:
            if e.trace is not None:
                run.add_file(write_frame(e.trace, trace_path))
            raise
        finally:
            if trace_path.exists():
                run.add_file(trace_path)

        best = {
            'participant': participant,
            'variant': checkpoint.variant.value,
            'seed': run.config.seed,
            'discrepancy': result.best_value,
            'iteration': int(result.trace['discrepancy'].idxmin()),
            'params': result.best_dict(),
        }
        with open(best_path, 'w') as fh:
            json.dump(best, fh, indent=2, sort_keys=True)
        run.add_file(best_path)
        logger.info(f'Best discrepancy {result.best_value:.4f} written to {best_path}')
        return result
