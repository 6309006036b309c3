"""
Likelihood-free calibration of the non-policy parameters.

Simulated metric tables are compared to an observed table with a normalized,
trial-count weighted log discrepancy. A Gaussian-process surrogate of that
discrepancy is refit after every evaluation and the next point is the
minimizer of its lower confidence bound.
"""

import logging
import math
import warnings
from dataclasses import asdict, dataclass, fields
from typing import Any, Callable, Dict, List, Optional

import numpy as np
import pandas as pd
from scipy.optimize import minimize
from scipy.stats import qmc
from sklearn.exceptions import ConvergenceWarning
from sklearn.gaussian_process import GaussianProcessRegressor
from sklearn.gaussian_process.kernels import RBF, ConstantKernel, WhiteKernel

from crossing_sim.seeds import derive_seed
from simulator.env import PARAM_NAMES, PARAM_RANGES, NonPolicyParams
from simulator.scenario import ScenarioTable
from training.checkpoints import Checkpoint
from training.rollouts import episode_tasks, run_episodes

from .behaviour import MetricTable, aggregate
from .exceptions import CalibrationError, MetricTableError

logger = logging.getLogger(__name__)

DISCREPANCY_FLOOR = 1e-9
DISCREPANCY_TERMS = (("g", "n_ny"), ("e", "n_y"), ("cit", "n"), ("speed", "n"))
JITTER_LEVELS = (1e-10, 1e-8, 1e-6, 1e-4)

ParamPoint = NonPolicyParams
PARAM_BOUNDS = np.array([PARAM_RANGES[name] for name in PARAM_NAMES], dtype=float)


@dataclass(frozen=True)
class BolfiConfig:
    budget: int = 80
    init_points: int = 20
    reps: int = 20
    kappa: float = 2.0
    gp_restarts: int = 5
    acquisition_starts: int = 10
    min_distance: float = 1e-3

    def __post_init__(self):
        if self.init_points < 2:
            raise ValueError(f"init_points must be at least 2, got {self.init_points}")
        if self.budget < self.init_points:
            raise ValueError(f"budget ({self.budget}) must be >= init_points ({self.init_points})")
        if self.reps < 1:
            raise ValueError(f"reps must be at least 1, got {self.reps}")

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> "BolfiConfig":
        data = dict(data or {})
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"Unknown calibration settings: {', '.join(sorted(unknown))}")
        return cls(**data)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def discrepancy(observed: MetricTable, simulated: MetricTable, floor: float = DISCREPANCY_FLOOR) -> float:
    """
    Log of the summed absolute metric differences.

    Each metric is divided by its largest magnitude over both tables and each
    condition is weighted by its trial count relative to the mean count.
    Cells undefined in either table are skipped.
    """
    a, b = observed.indexed(), simulated.indexed()
    if not a.index.is_unique or not b.index.is_unique:
        raise MetricTableError("Metric tables must hold one row per condition")
    if set(a.index) != set(b.index):
        only_a = len(set(a.index) - set(b.index))
        only_b = len(set(b.index) - set(a.index))
        raise MetricTableError(
            f"Condition sets differ ({only_a} only observed, {only_b} only simulated)"
        )
    b = b.loc[a.index]

    total = 0.0
    for metric, count in DISCREPANCY_TERMS:
        x, y = a[metric].astype(float), b[metric].astype(float)
        mask = x.notna() & y.notna()
        if not mask.any():
            continue
        scale = np.nanmax(np.abs(np.concatenate([x.to_numpy(), y.to_numpy()])))
        if not scale > 0:
            scale = 1.0
        weights = (a[count] + b[count])[mask].to_numpy(dtype=float)
        if weights.sum() <= 0:
            weights = np.ones(mask.sum())
        weights = weights / weights.mean()
        diff = np.abs(x[mask].to_numpy() - y[mask].to_numpy())
        total += float(np.sum(weights * diff) / scale)

    value = math.log(max(total, floor))
    if not math.isfinite(value):
        raise CalibrationError(f"Non-finite discrepancy (sum={total})")
    return value


def simulate_participant(
    checkpoint: Checkpoint,
    point: NonPolicyParams,
    scenario_table: ScenarioTable,
    reps: int,
    seed: int,
    workers: int = 1,
    stream: str = "calibration",
) -> MetricTable:
    """Greedy rollouts over every condition at ``point``, aggregated per condition"""
    trials = scenario_table.expand_trials(reps)
    tasks = episode_tasks(trials, point, seed, stream=stream)
    records = run_episodes(checkpoint.path, tasks, workers=workers, checkpoint=checkpoint)
    return aggregate(records)


def to_unit(points: np.ndarray, bounds: np.ndarray) -> np.ndarray:
    return (np.asarray(points, dtype=float) - bounds[:, 0]) / (bounds[:, 1] - bounds[:, 0])


def from_unit(unit: np.ndarray, bounds: np.ndarray) -> np.ndarray:
    unit = np.clip(np.asarray(unit, dtype=float), 0.0, 1.0)
    return bounds[:, 0] + unit * (bounds[:, 1] - bounds[:, 0])


class GPSurrogate:
    """Fitted Gaussian process over points scaled to the unit cube"""

    def __init__(self, regressor: GaussianProcessRegressor, bounds: np.ndarray, jitter: float):
        self.regressor = regressor
        self.bounds = bounds
        self.jitter = jitter

    @property
    def kernel(self):
        return self.regressor.kernel_

    def predict(self, points: np.ndarray):
        """Posterior mean and standard deviation at points in parameter space"""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return self.predict_unit(to_unit(points, self.bounds))

    def predict_unit(self, unit: np.ndarray):
        mean, std = self.regressor.predict(np.atleast_2d(unit), return_std=True)
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(std))):
            raise CalibrationError("Surrogate produced non-finite predictions")
        return mean, std

    def lcb_unit(self, unit: np.ndarray, kappa: float) -> np.ndarray:
        mean, std = self.predict_unit(unit)
        return mean - kappa * std


def gp_fit(
    points: np.ndarray,
    values: np.ndarray,
    bounds: Optional[np.ndarray] = None,
    restarts: int = 5,
    random_state: int = 0,
) -> GPSurrogate:
    """
    Fit a squared-exponential GP with one length scale per dimension and a
    learned noise term. Hyperparameters maximize the marginal likelihood;
    jitter is raised step by step when the kernel matrix is singular.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    values = np.asarray(values, dtype=float).ravel()
    if len(points) < 2:
        raise CalibrationError(f"Need at least 2 points to fit the surrogate, got {len(points)}")
    if len(points) != len(values):
        raise CalibrationError(f"{len(points)} points but {len(values)} values")
    if not np.all(np.isfinite(values)):
        raise CalibrationError("Surrogate targets must be finite")

    dims = points.shape[1]
    if bounds is None:
        bounds = np.tile([0.0, 1.0], (dims, 1))
    bounds = np.asarray(bounds, dtype=float)
    unit = to_unit(points, bounds)

    kernel = ConstantKernel(1.0, (1e-3, 1e3)) * RBF(
        length_scale=np.full(dims, 0.3), length_scale_bounds=(1e-2, 1e2)
    ) + WhiteKernel(noise_level=1e-2, noise_level_bounds=(1e-8, 1e1))

    last_error = None
    for jitter in JITTER_LEVELS:
        regressor = GaussianProcessRegressor(
            kernel=kernel,
            alpha=jitter,
            normalize_y=True,
            n_restarts_optimizer=restarts,
            random_state=random_state,
        )
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", ConvergenceWarning)
                regressor.fit(unit, values)
        except (np.linalg.LinAlgError, ValueError) as e:
            last_error = e
            logger.warning(f"Surrogate fit failed with jitter {jitter:g}: {e}")
            continue
        return GPSurrogate(regressor, bounds, jitter)

    raise CalibrationError(f"Surrogate fit failed at maximum jitter {JITTER_LEVELS[-1]:g}: {last_error}")


def space_filling_design(count: int, dims: int, seed: int) -> np.ndarray:
    """Scrambled Sobol points in the unit cube"""
    sampler = qmc.Sobol(d=dims, scramble=True, seed=seed)
    m = max(1, math.ceil(math.log2(count)))
    return sampler.random_base2(m)[:count]


def next_candidate(
    surrogate: GPSurrogate,
    evaluated_unit: np.ndarray,
    config: BolfiConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """Minimizer of the lower confidence bound over the unit cube"""
    dims = evaluated_unit.shape[1]
    best_seen = evaluated_unit[np.argmin(surrogate.regressor.y_train_)]
    starts = [best_seen] + [rng.uniform(0.0, 1.0, dims) for _ in range(config.acquisition_starts - 1)]

    def objective(u):
        return float(surrogate.lcb_unit(u[None], config.kappa)[0])

    best_u, best_value = None, math.inf
    for start in starts:
        result = minimize(objective, start, method="L-BFGS-B", bounds=[(0.0, 1.0)] * dims)
        if np.isfinite(result.fun) and result.fun < best_value:
            best_u, best_value = np.clip(result.x, 0.0, 1.0), float(result.fun)

    if best_u is None:
        raise CalibrationError("Acquisition optimization produced no finite candidate")
    if np.min(np.linalg.norm(evaluated_unit - best_u, axis=1)) < config.min_distance:
        logger.debug("Acquisition minimizer duplicates an evaluated point; sampling at random")
        best_u = rng.uniform(0.0, 1.0, dims)
    return best_u


@dataclass
class BolfiResult:
    trace: pd.DataFrame
    best_point: np.ndarray
    best_value: float
    names: tuple

    @property
    def best_params(self) -> NonPolicyParams:
        return NonPolicyParams.from_array(self.best_point)

    def best_dict(self) -> Dict[str, float]:
        return {name: float(v) for name, v in zip(self.names, self.best_point)}


def _trace_frame(rows: List[Dict[str, Any]], names) -> pd.DataFrame:
    columns = ["iteration", "phase", *names, "discrepancy", "best_so_far", "predicted_mean", "predicted_std"]
    return pd.DataFrame(rows, columns=columns)


def bolfi_minimize(
    objective: Callable[[np.ndarray], float],
    bounds: np.ndarray,
    config: BolfiConfig,
    seed: int,
    names=None,
    callback: Optional[Callable[[pd.DataFrame], None]] = None,
) -> BolfiResult:
    """
    Minimize an expensive noisy objective within a box.

    ``config.init_points`` space-filling evaluations are followed by surrogate
    guided evaluations until ``config.budget`` evaluations have been made.
    ``callback`` receives the trace after each evaluation.
    """
    bounds = np.asarray(bounds, dtype=float)
    dims = len(bounds)
    names = tuple(names or (f"x{i}" for i in range(dims)))
    rng = np.random.default_rng(seed)

    evaluated_unit: List[np.ndarray] = []
    values: List[float] = []
    rows: List[Dict[str, Any]] = []

    def evaluate(unit, phase, predicted=(math.nan, math.nan)):
        point = from_unit(unit, bounds)
        value = float(objective(point))
        iteration = len(values)
        if not math.isfinite(value):
            raise CalibrationError(
                f"Objective returned {value} at evaluation {iteration}", trace=_trace_frame(rows, names)
            )
        evaluated_unit.append(np.asarray(unit, dtype=float))
        values.append(value)
        best = min(values)
        rows.append(
            {
                "iteration": iteration,
                "phase": phase,
                **{name: float(v) for name, v in zip(names, point)},
                "discrepancy": value,
                "best_so_far": best,
                "predicted_mean": predicted[0],
                "predicted_std": predicted[1],
            }
        )
        logger.info(f"Evaluation {iteration + 1}/{config.budget} ({phase}): {value:.4f}, best {best:.4f}")
        if callback is not None:
            callback(_trace_frame(rows, names))

    for unit in space_filling_design(config.init_points, dims, seed):
        evaluate(unit, "init")

    while len(values) < config.budget:
        try:
            surrogate = gp_fit(
                np.array(evaluated_unit),
                np.array(values),
                restarts=config.gp_restarts,
                random_state=derive_seed(seed, "calibration", len(values)) % (2 ** 32),
            )
        except CalibrationError as e:
            raise CalibrationError(str(e), trace=_trace_frame(rows, names)) from e
        candidate = next_candidate(surrogate, np.array(evaluated_unit), config, rng)
        mean, std = surrogate.predict_unit(candidate[None])
        evaluate(candidate, "acquisition", (float(mean[0]), float(std[0])))

    best = int(np.argmin(values))
    return BolfiResult(
        trace=_trace_frame(rows, names),
        best_point=from_unit(evaluated_unit[best], bounds),
        best_value=values[best],
        names=names,
    )


def bolfi_run(
    checkpoint: Checkpoint,
    observed: MetricTable,
    scenario_table: ScenarioTable,
    config: Optional[BolfiConfig] = None,
    seed: int = 0,
    workers: int = 1,
    callback: Optional[Callable[[pd.DataFrame], None]] = None,
) -> BolfiResult:
    """Fit the non-policy parameters of ``checkpoint`` to an observed metric table"""
    config = config or BolfiConfig()
    simulated_keys = {tuple(t.spec.condition_key) for t in scenario_table.expand_trials(config.reps)}
    shared = set(observed.keys()) & simulated_keys
    if not shared:
        raise MetricTableError("Observed table shares no condition with the scenario table")
    missing = len(set(observed.keys()) - shared)
    if missing:
        logger.warning(
            f"Ignoring {missing} observed conditions the scenario table does not produce at "
            f"{config.reps} reps"
        )
        observed = observed.restrict_to(shared)

    def objective(vector: np.ndarray) -> float:
        point = NonPolicyParams.from_array(vector)
        simulated = simulate_participant(checkpoint, point, scenario_table, config.reps, seed, workers)
        return discrepancy(observed, simulated.restrict_to(shared))

    logger.info(
        f"Calibrating {checkpoint.variant.value} checkpoint: {config.budget} evaluations, "
        f"{config.init_points} initial, {config.reps} reps per condition"
    )
    return bolfi_minimize(objective, PARAM_BOUNDS, config, seed, names=PARAM_NAMES, callback=callback)
