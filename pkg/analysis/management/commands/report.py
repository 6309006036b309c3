"""
Management command to build the phenomenon checklist and plot-ready tables from a simulate run
"""
import logging

from django.conf import settings
from django.core.management.base import BaseCommand

from analysis.behaviour import MetricTable, aggregate_episodes, format_checklist, phenomenon_checklist
from analysis.reports import EPISODES_FILE, METRICS_FILE, TICKS_FILE, read_episode_table, write_report
from crossing_sim.runs import RunConfig, RunContext, add_run_arguments, command_errors
from simulator.records import read_tick_log
from simulator.scenario import load_scenario_table

logger = logging.getLogger(__name__)


class Command(BaseCommand):
    help = 'Report behavioural phenomena, per-condition metrics, speed profiles and CIT distributions'

    def add_arguments(self, parser):
        add_run_arguments(parser, 'run_dir', 'scenario_table', 'seed', 'output_dir')

    def handle(self, *args, **options):
        with command_errors():
            config = RunConfig.resolve('report', options, {'scenario_table': settings.CROSSING_SCENARIO_TABLE})
            config.require('run_dir', 'scenario_table')
            run_dir = config.run_dir
            for name in (EPISODES_FILE, TICKS_FILE):
                if not (run_dir / name).exists():
                    raise FileNotFoundError(f'{run_dir} has no {name}; is it a simulate output directory?')

            episodes = read_episode_table(run_dir / EPISODES_FILE)
            ticks = read_tick_log(run_dir / TICKS_FILE)
            metrics_path = run_dir / METRICS_FILE
            if metrics_path.exists():
                table = MetricTable.read_csv(metrics_path)
            else:
                table = MetricTable(aggregate_episodes(episodes))
            geometry = load_scenario_table(config.scenario_table).geometry

            self.stdout.write(self.style.SUCCESS(f'Reporting on {len(episodes)} episodes from {run_dir}'))
            with RunContext(config) as run:
                paths = write_report(
                    config.output_dir, episodes, ticks, table=table, extent=geometry.far_curb, seed=config.seed
                )
                run.add_files(paths)
                checklist = phenomenon_checklist(table)
                run.summary.update({
                    'source': str(run_dir),
                    'episodes': len(episodes),
                    'phenomena_reproduced': sum(1 for item in checklist if item.holds),
                    'phenomena_evaluable': sum(1 for item in checklist if item.evaluable),
                })

        self.stdout.write(format_checklist(checklist))
        self.stdout.write(self.style.SUCCESS(f'Report written to {config.output_dir}'))
