"""
Run plumbing shared by the management commands: configuration resolution,
seeding, output directories, manifests, run history and exit codes.
"""

import json
import logging
from contextlib import contextmanager
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional

import yaml
from django.conf import settings
from django.core.management.base import CommandError
from django.db import DatabaseError
from django.utils import timezone

from analysis.exceptions import AnalysisError, CalibrationError, MetricTableError
from simulator.exceptions import SimulationError
from training.exceptions import CheckpointError, TrainingDivergedError, TrainingError

from .version import get_build_info, get_version_display

logger = logging.getLogger(__name__)

EXIT_USAGE = 2
EXIT_MISSING_INPUT = 3
EXIT_NUMERIC = 4

VARIANTS = ("SM", "S", "M")
SECTIONS = ("env", "train", "bolfi", "params")


class RunConfigError(ValueError):
    """Invalid command-line or configuration-file value"""


class MissingInputError(FileNotFoundError):
    """A required input file does not exist"""


def configure_determinism(seed: int, single_thread: bool) -> None:
    import torch

    torch.manual_seed(seed)
    if single_thread:
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True)
        logger.info("Single-threaded deterministic mode enabled")


RUN_ARGUMENTS = {
    "variant": dict(help="Model variant: SM (default), S or M"),
    "seed": dict(help="Master seed (default: 0)"),
    "steps": dict(help="Total environment steps for training"),
    "checkpoint": dict(help="Policy checkpoint (default: latest successful training run)"),
    "scenario_table": dict(help="Scenario table YAML/JSON (default: bundled table)"),
    "observed": dict(help="Observed metric table CSV"),
    "run_dir": dict(help="Output directory of a simulate run"),
    "reps": dict(help="Repetitions per scenario row and lighting block (default: 20)"),
    "budget": dict(help="Total calibration evaluations including initial points (default: 80)"),
    "workers": dict(help="Episode worker processes"),
    "output_dir": dict(help="Output directory (default: $CROSSING_OUTPUT_ROOT/<command>-<variant>-<time>)"),
}


def add_run_arguments(parser, *names: str) -> None:
    """Register the shared flags; values are validated by RunConfig, not argparse"""
    parser.add_argument("--config", help="YAML or JSON run configuration file")
    for name in names:
        if name == "single_thread":
            parser.add_argument(
                "--single-thread",
                action="store_true",
                help="One thread and one worker for bit-reproducible output",
            )
            continue
        parser.add_argument(f"--{name.replace('_', '-')}", dest=name, **RUN_ARGUMENTS[name])


def load_config_file(path: Path, command: str) -> Dict[str, Any]:
    """Read a YAML/JSON run configuration; a ``<command>:`` section wins over a flat file"""
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"Configuration file not found: {path}")
    try:
        with open(path, "r") as fh:
            data = yaml.safe_load(fh) or {}
    except yaml.YAMLError as e:
        raise RunConfigError(f"Could not parse configuration file {path}: {e}") from e
    if not isinstance(data, dict):
        raise RunConfigError(f"Configuration file {path} must hold a mapping")
    section = data.get(command)
    if isinstance(section, dict):
        return dict(section)
    return data


@dataclass
class RunConfig:
    """Resolved settings of one command run"""

    command: str
    variant: str = "SM"
    seed: int = 0
    output_dir: Optional[Path] = None
    scenario_table: Optional[Path] = None
    checkpoint: Optional[Path] = None
    observed: Optional[Path] = None
    run_dir: Optional[Path] = None
    reps: int = 20
    budget: int = 80
    steps: Optional[int] = None
    workers: int = 1
    single_thread: bool = False
    sections: Dict[str, Dict[str, Any]] = field(default_factory=dict)

    @classmethod
    def resolve(
        cls, command: str, options: Dict[str, Any], defaults: Optional[Dict[str, Any]] = None
    ) -> "RunConfig":
        """Bundled defaults, then the config file, then explicit flags"""
        names = {f.name for f in fields(cls)} - {"command", "sections"}
        values: Dict[str, Any] = dict(defaults or {})
        sections: Dict[str, Dict[str, Any]] = {}

        if options.get("config"):
            for key, value in load_config_file(options["config"], command).items():
                if key in SECTIONS:
                    if not isinstance(value, dict):
                        raise RunConfigError(f"Section {key!r} must be a mapping")
                    sections[key] = value
                elif key in names:
                    values[key] = value
                else:
                    raise RunConfigError(f"Unknown configuration key {key!r} for {command}")

        for key in names:
            value = options.get(key)
            if value is None or value is False:
                continue
            values[key] = value

        config = cls(command=command, sections=sections, **values)
        config.normalize()
        return config

    def normalize(self) -> None:
        self.variant = str(self.variant).upper()
        if self.variant not in VARIANTS:
            raise RunConfigError(f"Unknown variant {self.variant!r}; expected one of {', '.join(VARIANTS)}")
        for name in ("output_dir", "scenario_table", "checkpoint", "observed", "run_dir"):
            value = getattr(self, name)
            if value is not None:
                setattr(self, name, Path(value))
        try:
            self.seed = int(self.seed)
            self.reps = int(self.reps)
            self.budget = int(self.budget)
            self.workers = int(self.workers)
            self.steps = int(self.steps) if self.steps is not None else None
        except (TypeError, ValueError) as e:
            raise RunConfigError(f"Invalid numeric setting: {e}") from e
        if self.seed < 0:
            raise RunConfigError(f"Seed must be >= 0, got {self.seed}")
        for name in ("reps", "budget", "workers"):
            if getattr(self, name) < 1:
                raise RunConfigError(f"{name} must be at least 1, got {getattr(self, name)}")
        if self.steps is not None and self.steps < 1:
            raise RunConfigError(f"steps must be at least 1, got {self.steps}")
        if self.single_thread:
            self.workers = 1
        if self.output_dir is None:
            stamp = timezone.now().strftime("%Y%m%d-%H%M%S")
            self.output_dir = Path(settings.CROSSING_OUTPUT_ROOT) / f"{self.command}-{self.variant}-{stamp}"

    def require(self, *names: str) -> None:
        """Every named path must be set and exist"""
        for name in names:
            path = getattr(self, name)
            if path is None:
                raise MissingInputError(f"No {name.replace('_', ' ')} given")
            if not Path(path).exists():
                raise MissingInputError(f"{name.replace('_', ' ').capitalize()} not found: {path}")

    def section(self, name: str) -> Dict[str, Any]:
        return dict(self.sections.get(name) or {})

    def to_dict(self) -> Dict[str, Any]:
        data = {}
        for f in fields(self):
            value = getattr(self, f.name)
            data[f.name] = str(value) if isinstance(value, Path) else value
        return data


class RunManifest:
    """manifest.json describing how an output directory was produced"""

    def __init__(self, config: RunConfig, seeds: Optional[Dict[str, int]] = None):
        self.config = config
        self.seeds = seeds or {"master": config.seed}
        self.started_at = timezone.now()
        self.files: List[str] = []

    def add_file(self, path: Path) -> Path:
        path = Path(path)
        try:
            name = str(path.relative_to(self.config.output_dir))
        except ValueError:
            name = str(path)
        if name not in self.files:
            self.files.append(name)
        return path

    def write(self, status: str, summary: Optional[Dict[str, Any]] = None) -> Path:
        manifest = {
            "command": self.config.command,
            "status": status,
            "config": self.config.to_dict(),
            "seeds": self.seeds,
            "version": get_version_display(),
            "build": get_build_info(),
            "started_at": self.started_at.isoformat(),
            "finished_at": timezone.now().isoformat(),
            "files": sorted(self.files),
            "summary": summary or {},
        }
        path = Path(self.config.output_dir) / "manifest.json"
        with open(path, "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
        return path


class RunContext:
    """Output directory, manifest and run-history record for one command"""

    def __init__(self, config: RunConfig):
        self.config = config
        self.manifest = RunManifest(config)
        self.summary: Dict[str, Any] = {}
        self.checkpoint_path: Optional[Path] = None
        self.record = None

    def __enter__(self) -> "RunContext":
        Path(self.config.output_dir).mkdir(parents=True, exist_ok=True)
        try:
            from simulator.models import RunRecord

            self.record = RunRecord.objects.create(
                command=self.config.command,
                variant=self.config.variant,
                seed=self.config.seed,
                config=self.config.to_dict(),
                output_dir=str(self.config.output_dir),
            )
        except DatabaseError as e:
            logger.warning(f"Run history unavailable ({e}); run `manage.py migrate` to enable it")
            self.record = None
        return self

    def add_file(self, path: Path) -> Path:
        return self.manifest.add_file(path)

    def add_files(self, paths: Iterable[Path]) -> None:
        for path in paths:
            self.add_file(path)

    def __exit__(self, exc_type, exc, tb):
        status = "succeeded" if exc is None else "failed"
        if exc is not None:
            self.summary.setdefault("error", str(exc))
        self.manifest.write(status, self.summary)
        if self.record is not None:
            try:
                if exc is None:
                    self.record.mark_finished(self.summary, self.checkpoint_path or "")
                else:
                    self.record.mark_failed(exc)
            except DatabaseError as e:
                logger.warning(f"Could not update run history: {e}")
        return False


def latest_checkpoint(variant: str) -> Optional[Path]:
    try:
        from simulator.models import RunRecord

        path = RunRecord.latest_checkpoint(variant)
    except DatabaseError as e:
        logger.warning(f"Run history unavailable: {e}")
        return None
    return Path(path) if path else None


@contextmanager
def command_errors():
    """Translate domain errors into CommandError with the documented exit codes"""
    try:
        yield
    except CommandError:
        raise
    except (MissingInputError, FileNotFoundError) as e:
        logger.error(str(e))
        raise CommandError(str(e), returncode=EXIT_MISSING_INPUT)
    except (CheckpointError, MetricTableError) as e:
        logger.error(str(e))
        raise CommandError(str(e), returncode=EXIT_MISSING_INPUT)
    except (TrainingDivergedError, CalibrationError, FloatingPointError) as e:
        logger.error(f"Numeric failure: {e}")
        raise CommandError(f"Numeric failure: {e}", returncode=EXIT_NUMERIC)
    except (RunConfigError, SimulationError, TrainingError, AnalysisError, ValueError) as e:
        logger.error(str(e))
        raise CommandError(str(e), returncode=EXIT_USAGE)


def resolve_checkpoint(config: RunConfig) -> Path:
    """Explicit checkpoint, else the latest successful training run of the variant"""
    if config.checkpoint is None:
        config.checkpoint = latest_checkpoint(config.variant)
        if config.checkpoint is not None:
            logger.info(f"Using latest {config.variant} checkpoint {config.checkpoint}")
    config.require("checkpoint")
    return config.checkpoint
