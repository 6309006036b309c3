"""
Management command to compare SM, S and M policies on identical scenarios and seeds
"""
import logging
from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand

from analysis.behaviour import MetricTable, aggregate_episodes
from analysis.reports import (
    EPISODES_FILE,
    METRICS_FILE,
    TICKS_FILE,
    episode_table,
    phenomenon_matrix,
    variant_summary,
    write_frame,
)
from crossing_sim.runs import (
    VARIANTS,
    MissingInputError,
    RunConfig,
    RunConfigError,
    RunContext,
    add_run_arguments,
    command_errors,
    configure_determinism,
    latest_checkpoint,
)
from simulator.env import NonPolicyParams
from simulator.records import tick_log_frame
from simulator.scenario import load_scenario_table
from training.checkpoints import load_checkpoint
from training.rollouts import episode_tasks, run_episodes

logger = logging.getLogger(__name__)


def parse_checkpoints(values):
    """``VARIANT=PATH`` pairs into a mapping"""
    checkpoints = {}
    for value in values or []:
        variant, sep, path = value.partition('=')
        variant = variant.strip().upper()
        if not sep or variant not in VARIANTS or not path:
            raise RunConfigError(f'Expected VARIANT=PATH with VARIANT in {", ".join(VARIANTS)}, got {value!r}')
        checkpoints[variant] = Path(path)
    return checkpoints


class Command(BaseCommand):
    help = 'Run several model variants over the same scenarios and compare roughness and phenomena'

    def add_arguments(self, parser):
        add_run_arguments(parser, 'seed', 'scenario_table', 'reps', 'workers', 'output_dir', 'single_thread')
        parser.add_argument(
            '--checkpoints',
            nargs='+',
            metavar='VARIANT=PATH',
            help='Checkpoint per variant (default: latest successful training run of SM, S and M)',
        )

    def handle(self, *args, **options):
        with command_errors():
            config = RunConfig.resolve('compare_variants', options, {
                'scenario_table': settings.CROSSING_SCENARIO_TABLE,
                'workers': settings.CROSSING_WORKERS,
            })
            config.require('scenario_table')
            checkpoints = parse_checkpoints(options.get('checkpoints'))
            if not checkpoints:
                for variant in VARIANTS:
                    path = latest_checkpoint(variant)
                    if path is None:
                        raise MissingInputError(f'No successful {variant} training run; pass --checkpoints')
                    checkpoints[variant] = path
            if len(checkpoints) < 2:
                raise RunConfigError('Comparison needs checkpoints for at least two variants')
            for variant, path in checkpoints.items():
                if not path.exists():
                    raise MissingInputError(f'{variant} checkpoint not found: {path}')

            table = load_scenario_table(config.scenario_table)
            params = NonPolicyParams.from_dict(config.section('params'))
            trials = table.expand_trials(config.reps)
            configure_determinism(config.seed, config.single_thread)

            self.stdout.write(
                self.style.SUCCESS(
                    f'Comparing {", ".join(checkpoints)} over {len(trials)} episodes each (seed {config.seed})'
                )
            )

            with RunContext(config) as run:
                tables, ticks = {}, {}
                for variant, path in checkpoints.items():
                    checkpoint = load_checkpoint(path)
                    if checkpoint.variant.value != variant:
                        raise RunConfigError(
                            f'{path} holds a {checkpoint.variant.value} policy, not {variant}'
                        )
                    tasks = episode_tasks(trials, params, config.seed, stream='eval')
                    records = run_episodes(path, tasks, workers=config.workers, checkpoint=checkpoint)

                    variant_dir = config.output_dir / variant
                    episodes = episode_table(records)
                    tables[variant] = MetricTable(aggregate_episodes(episodes))
                    ticks[variant] = tick_log_frame(records)
                    run.add_file(write_frame(ticks[variant], variant_dir / TICKS_FILE))
                    run.add_file(write_frame(episodes, variant_dir / EPISODES_FILE))
                    run.add_file(tables[variant].to_csv(variant_dir / METRICS_FILE))
                    self.stdout.write(f'  {variant}: {len(records)} episodes')

                summary = variant_summary(tables, ticks)
                matrix = phenomenon_matrix(tables)
                run.add_file(write_frame(summary, config.output_dir / 'variant_summary.csv'))
                run.add_file(write_frame(matrix, config.output_dir / 'phenomenon_matrix.csv'))
                run.summary.update({
                    'checkpoints': {v: str(p) for v, p in checkpoints.items()},
                    'roughness': {row.variant: row.roughness for row in summary.itertuples(index=False)},
                })

        for variant, value in run.summary['roughness'].items():
            self.stdout.write(f'  {variant} roughness: {value:.4f} m/s per tick')
        self.stdout.write(self.style.SUCCESS(f'Comparison written to {config.output_dir}'))
