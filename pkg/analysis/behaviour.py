"""
Behavioural metrics of crossing episodes.

Episode-level events (movement onset, road entry and exit, crossing class)
are extracted from tick logs, then aggregated per experimental condition into
a MetricTable: gap acceptance rate g, early-crossing rate e, mean crossing
initiation time and mean walking speed, with trial counts.
"""

import json
import logging
import math
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

import pandas as pd

from simulator.records import EpisodeRecord, Outcome

from .exceptions import MetricTableError

logger = logging.getLogger(__name__)

ONSET_THRESHOLD = 0.05
EARLY_SPEED_FRACTION = 2.0 / 3.0

KEY_COLUMNS = ["v0", "tau0", "yielding", "ehmi", "night"]
METRIC_COLUMNS = ["g", "e", "cit", "speed"]
COUNT_COLUMNS = ["n", "n_ny", "n_y"]
OPTIONAL_COLUMNS = [
    "cit_sd",
    "speed_sd",
    "cit_early",
    "cit_late",
    "speed_early",
    "speed_late",
    "collision_rate",
]
TABLE_COLUMNS = KEY_COLUMNS + METRIC_COLUMNS + COUNT_COLUMNS


class CrossingClass(str, Enum):
    ACCEPTED_GAP = "accepted_gap"
    REJECTED_GAP = "rejected_gap"
    EARLY_CROSS = "early_cross"
    LATE_CROSS = "late_cross"
    NO_CROSS = "no_cross"


def movement_onset(record: EpisodeRecord, threshold: float = ONSET_THRESHOLD) -> Optional[float]:
    """Time of the first tick whose displacement from the start exceeds ``threshold``"""
    if not record.ticks:
        return None
    start = record.ticks[0].ped_position
    for row in record.ticks:
        if row.ped_position - start > threshold:
            return row.t
    return None


def first_time_past(record: EpisodeRecord, position: float) -> Optional[float]:
    for row in record.ticks:
        if row.ped_position >= position:
            return row.t
    return None


def road_entry_time(record: EpisodeRecord) -> Optional[float]:
    return first_time_past(record, record.spec.geometry.near_curb)


def road_exit_time(record: EpisodeRecord) -> Optional[float]:
    if record.outcome != Outcome.CROSSED:
        return None
    return first_time_past(record, record.spec.geometry.far_curb)


def lane_clear_time(record: EpisodeRecord) -> Optional[float]:
    """Time the pedestrian's body has fully left the vehicle lane"""
    geometry = record.spec.geometry
    return first_time_past(record, geometry.lane_band[1] + geometry.ped_radius)


def vehicle_speed_at(record: EpisodeRecord, t: float, vehicle: int = 2) -> float:
    column = f"v{vehicle}_v"
    for row in record.ticks:
        if row.t >= t - 1e-9:
            return getattr(row, column)
    return getattr(record.ticks[-1], column)


def classify_crossing(record: EpisodeRecord, threshold: float = ONSET_THRESHOLD) -> CrossingClass:
    spec = record.spec
    if record.outcome in (Outcome.TIMEOUT, Outcome.RUNNING):
        return CrossingClass.NO_CROSS

    if not spec.yielding:
        if record.outcome == Outcome.COLLISION:
            return CrossingClass.REJECTED_GAP
        cleared = lane_clear_time(record)
        second_arrival = spec.lead_time + spec.tau0
        if cleared is not None and cleared < second_arrival:
            return CrossingClass.ACCEPTED_GAP
        return CrossingClass.REJECTED_GAP

    onset = movement_onset(record, threshold)
    if onset is None:
        return CrossingClass.NO_CROSS
    if vehicle_speed_at(record, onset) > EARLY_SPEED_FRACTION * spec.v0:
        return CrossingClass.EARLY_CROSS
    return CrossingClass.LATE_CROSS


def cit(record: EpisodeRecord, threshold: float = ONSET_THRESHOLD) -> Optional[float]:
    """Crossing initiation time, absent when the pedestrian never crossed"""
    if record.outcome != Outcome.CROSSED:
        return None
    onset = movement_onset(record, threshold)
    if onset is None:
        return None
    value = onset - record.gap_onset_time
    if value < -1e-9:
        logger.warning(
            f"Episode {record.episode}: movement onset {onset:.3f} s precedes gap onset "
            f"{record.gap_onset_time:.3f} s; CIT reported as 0"
        )
    return max(0.0, value)


def avg_speed(record: EpisodeRecord, threshold: float = ONSET_THRESHOLD) -> Optional[float]:
    exit_time = road_exit_time(record)
    onset = movement_onset(record, threshold)
    if exit_time is None or onset is None or exit_time <= onset:
        return None
    return record.spec.geometry.far_curb / (exit_time - onset)


@dataclass
class EpisodeMetrics:
    episode: int
    v0: float
    tau0: float
    yielding: bool
    ehmi: bool
    night: bool
    outcome: str
    crossing_class: str
    gap_onset: float
    movement_onset: Optional[float]
    entry_time: Optional[float]
    exit_time: Optional[float]
    cit: Optional[float]
    speed: Optional[float]
    vehicle2_speed_at_onset: Optional[float]
    collision: bool


EPISODE_COLUMNS = list(EpisodeMetrics.__dataclass_fields__)
OPTIONAL_EVENT_COLUMNS = ["movement_onset", "entry_time", "exit_time", "cit", "speed", "vehicle2_speed_at_onset"]


def episode_metrics(record: EpisodeRecord, threshold: float = ONSET_THRESHOLD) -> EpisodeMetrics:
    key = record.spec.condition_key
    onset = movement_onset(record, threshold)
    return EpisodeMetrics(
        episode=record.episode,
        v0=key.v0,
        tau0=key.tau0,
        yielding=key.yielding,
        ehmi=key.ehmi,
        night=key.night,
        outcome=record.outcome.value,
        crossing_class=classify_crossing(record, threshold).value,
        gap_onset=record.gap_onset_time,
        movement_onset=onset,
        entry_time=road_entry_time(record),
        exit_time=road_exit_time(record),
        cit=cit(record, threshold),
        speed=avg_speed(record, threshold),
        vehicle2_speed_at_onset=vehicle_speed_at(record, onset) if onset is not None else None,
        collision=record.outcome == Outcome.COLLISION,
    )


def episode_frame(records: Iterable[EpisodeRecord], threshold: float = ONSET_THRESHOLD) -> pd.DataFrame:
    rows = [asdict(episode_metrics(r, threshold)) for r in records]
    frame = pd.DataFrame(rows, columns=EPISODE_COLUMNS)
    for column in OPTIONAL_EVENT_COLUMNS:
        frame[column] = frame[column].astype(float)
    return frame


def _mean(values: pd.Series) -> float:
    values = values.dropna()
    return float(values.mean()) if len(values) else math.nan


def _sd(values: pd.Series) -> float:
    values = values.dropna()
    return float(values.std(ddof=1)) if len(values) > 1 else math.nan


def aggregate_episodes(episodes: pd.DataFrame) -> pd.DataFrame:
    """Per-condition means and rates from an episode-metrics frame"""
    rows = []
    if episodes.empty:
        return pd.DataFrame(columns=TABLE_COLUMNS + OPTIONAL_COLUMNS)

    for key, group in episodes.groupby(KEY_COLUMNS, sort=True):
        v0, tau0, yielding, ehmi, night = key
        n = len(group)
        classes = group["crossing_class"]
        early = int((classes == CrossingClass.EARLY_CROSS.value).sum())
        late = int((classes == CrossingClass.LATE_CROSS.value).sum())
        accepted = int((classes == CrossingClass.ACCEPTED_GAP.value).sum())
        is_early = classes == CrossingClass.EARLY_CROSS.value
        is_late = classes == CrossingClass.LATE_CROSS.value

        rows.append(
            {
                "v0": float(v0),
                "tau0": float(tau0),
                "yielding": bool(yielding),
                "ehmi": bool(ehmi),
                "night": bool(night),
                "g": math.nan if yielding else accepted / n,
                "e": early / (early + late) if yielding and early + late else math.nan,
                "cit": _mean(group["cit"]),
                "speed": _mean(group["speed"]),
                "n": n,
                "n_ny": 0 if yielding else n,
                "n_y": n if yielding else 0,
                "cit_sd": _sd(group["cit"]),
                "speed_sd": _sd(group["speed"]),
                "cit_early": _mean(group.loc[is_early, "cit"]),
                "cit_late": _mean(group.loc[is_late, "cit"]),
                "speed_early": _mean(group.loc[is_early, "speed"]),
                "speed_late": _mean(group.loc[is_late, "speed"]),
                "collision_rate": float(group["collision"].astype(bool).mean()),
            }
        )
    return pd.DataFrame(rows, columns=TABLE_COLUMNS + OPTIONAL_COLUMNS)


class MetricTable:
    """Per-condition behavioural metrics, optionally per participant"""

    def __init__(self, frame: pd.DataFrame):
        missing = [c for c in TABLE_COLUMNS if c not in frame.columns]
        if missing:
            raise MetricTableError(f"Metric table is missing columns: {', '.join(missing)}")
        frame = frame.copy()
        for column in ("yielding", "ehmi", "night"):
            frame[column] = frame[column].map(_as_bool)
        for column in COUNT_COLUMNS:
            frame[column] = frame[column].fillna(0).astype(int)
        frame["v0"] = frame["v0"].astype(float).round(3)
        frame["tau0"] = frame["tau0"].astype(float).round(3)
        for column in ("g", "e"):
            values = frame[column].dropna()
            if ((values < 0) | (values > 1)).any():
                raise MetricTableError(f"Rates in column {column!r} must lie in [0, 1]")
        if (frame[COUNT_COLUMNS] < 0).any().any():
            raise MetricTableError("Trial counts must be non-negative")
        self.frame = frame.reset_index(drop=True)

    @classmethod
    def from_records(cls, records: Iterable[EpisodeRecord], threshold: float = ONSET_THRESHOLD) -> "MetricTable":
        return cls(aggregate_episodes(episode_frame(records, threshold)))

    @classmethod
    def read_csv(cls, path: Path) -> "MetricTable":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Metric table not found: {path}")
        try:
            frame = pd.read_csv(path)
        except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
            raise MetricTableError(f"Could not parse metric table {path}: {e}") from e
        return cls(frame)

    def to_csv(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        columns = (["participant"] if self.has_participants else []) + TABLE_COLUMNS
        columns += [c for c in OPTIONAL_COLUMNS if c in self.frame.columns]
        self.frame.to_csv(path, index=False, columns=columns, float_format="%.6f")
        return path

    @property
    def has_participants(self) -> bool:
        return "participant" in self.frame.columns

    def participants(self) -> List[str]:
        if not self.has_participants:
            return []
        return sorted(str(p) for p in self.frame["participant"].dropna().unique())

    def for_participant(self, participant) -> "MetricTable":
        if not self.has_participants:
            raise MetricTableError("Metric table has no participant column")
        subset = self.frame[self.frame["participant"].astype(str) == str(participant)]
        if subset.empty:
            raise MetricTableError(f"No rows for participant {participant!r}")
        return MetricTable(subset.drop(columns=["participant"]))

    def keys(self) -> List[tuple]:
        return [tuple(row) for row in self.frame[KEY_COLUMNS].itertuples(index=False)]

    def restrict_to(self, keys: Iterable[tuple]) -> "MetricTable":
        """Rows whose condition key is in ``keys``"""
        wanted = set(keys)
        mask = [key in wanted for key in self.keys()]
        return MetricTable(self.frame[mask])

    def indexed(self) -> pd.DataFrame:
        return self.frame.set_index(KEY_COLUMNS).sort_index()

    def __len__(self) -> int:
        return len(self.frame)


def _as_bool(value) -> bool:
    if isinstance(value, str):
        lowered = value.strip().lower()
        if lowered in ("true", "1", "yes", "on"):
            return True
        if lowered in ("false", "0", "no", "off", ""):
            return False
        raise MetricTableError(f"Not a boolean: {value!r}")
    return bool(value)


def aggregate(records: Iterable[EpisodeRecord], threshold: float = ONSET_THRESHOLD) -> MetricTable:
    return MetricTable.from_records(records, threshold)


# -- effect sizes ---------------------------------------------------------


def cohen_h(p1: float, p2: float) -> float:
    return 2.0 * math.asin(math.sqrt(p1)) - 2.0 * math.asin(math.sqrt(p2))


def pooled_sd(sd1: float, n1: int, sd2: float, n2: int) -> float:
    if n1 + n2 <= 2:
        return math.nan
    return math.sqrt(((n1 - 1) * sd1 ** 2 + (n2 - 1) * sd2 ** 2) / (n1 + n2 - 2))


def cohen_d(mean1: float, mean2: float, sd: float) -> Optional[float]:
    if sd is None or not math.isfinite(sd) or sd == 0:
        return None
    return (mean1 - mean2) / sd


def effect_sizes(table_a: MetricTable, table_b: MetricTable) -> pd.DataFrame:
    """Cohen's h for rates and Cohen's d for means, per shared condition"""
    a, b = table_a.indexed(), table_b.indexed()
    shared = a.index.intersection(b.index)
    if len(shared) == 0:
        raise MetricTableError("Tables share no conditions")

    rows = []
    for key in shared:
        ra, rb = a.loc[key], b.loc[key]
        row = dict(zip(KEY_COLUMNS, key))
        for rate in ("g", "e"):
            pa, pb = ra[rate], rb[rate]
            row[f"h_{rate}"] = cohen_h(pa, pb) if pd.notna(pa) and pd.notna(pb) else None
        for metric in ("cit", "speed"):
            sd = pooled_sd(
                ra.get(f"{metric}_sd", math.nan), int(ra["n"]), rb.get(f"{metric}_sd", math.nan), int(rb["n"])
            )
            ma, mb = ra[metric], rb[metric]
            row[f"d_{metric}"] = cohen_d(ma, mb, sd) if pd.notna(ma) and pd.notna(mb) else None
        rows.append(row)
    return pd.DataFrame(rows)


# -- phenomenon checklist -------------------------------------------------


@dataclass
class Phenomenon:
    name: str
    description: str
    holds: Optional[bool]
    magnitude: Optional[float]

    @property
    def evaluable(self) -> bool:
        return self.holds is not None


def _level_means(frame: pd.DataFrame, factor: str, metric: str):
    data = frame[[factor, metric]].dropna()
    if data[factor].nunique() < 2:
        return None
    low, high = data[factor].min(), data[factor].max()
    return data.loc[data[factor] == low, metric].mean(), data.loc[data[factor] == high, metric].mean()


def _increase(frame: pd.DataFrame, factor: str, metric: str) -> Optional[float]:
    """Mean of ``metric`` at the highest level of ``factor`` minus the lowest"""
    means = _level_means(frame, factor, metric)
    if means is None:
        return None
    return float(means[1] - means[0])


def _difference(first: pd.Series, second: pd.Series) -> Optional[float]:
    first, second = first.dropna(), second.dropna()
    if first.empty or second.empty:
        return None
    return float(first.mean() - second.mean())


def _phenomenon(name: str, description: str, diff: Optional[float]) -> Phenomenon:
    if diff is None or not math.isfinite(diff):
        return Phenomenon(name, description, None, None)
    return Phenomenon(name, description, diff > 0, diff)


def phenomenon_checklist(table: MetricTable) -> List[Phenomenon]:
    """Directional behavioural effects; positive magnitude means the effect holds"""
    frame = table.frame
    constant = frame[~frame["yielding"]]
    yielding = frame[frame["yielding"]]

    speed_by_gap = _increase(constant, "tau0", "speed")
    checks = [
        ("gap_acceptance_increases_with_gap", "Gap acceptance rises with the time gap",
         _increase(constant, "tau0", "g")),
        ("gap_acceptance_increases_with_speed", "Gap acceptance rises with vehicle speed",
         _increase(constant, "v0", "g")),
        ("early_crossing_increases_with_gap", "Early crossing rises with the time gap",
         _increase(yielding, "tau0", "e")),
        ("early_crossing_increases_with_speed", "Early crossing rises with vehicle speed",
         _increase(yielding, "v0", "e")),
        ("cit_increases_with_gap", "Crossing initiation time rises with the time gap",
         _increase(constant, "tau0", "cit")),
        ("cit_increases_with_speed", "Crossing initiation time rises with vehicle speed",
         _increase(constant, "v0", "cit")),
        ("speed_lower_for_longer_gap", "Walking speed is lower for the longer gap",
         -speed_by_gap if speed_by_gap is not None else None),
        ("early_faster_than_late", "Early crossings are faster than late crossings",
         _difference(yielding.get("speed_early", pd.Series(dtype=float)),
                     yielding.get("speed_late", pd.Series(dtype=float)))),
        ("ehmi_lowers_late_cit", "eHMI shortens the initiation time of late crossings",
         _difference(yielding.loc[~yielding["ehmi"]].get("cit_late", pd.Series(dtype=float)),
                     yielding.loc[yielding["ehmi"]].get("cit_late", pd.Series(dtype=float)))),
        ("day_crossing_exceeds_night", "Gap acceptance is higher by day than at night",
         _difference(constant.loc[~constant["night"], "g"], constant.loc[constant["night"], "g"])),
    ]
    return [_phenomenon(name, description, diff) for name, description, diff in checks]


def checklist_to_json(items: Sequence[Phenomenon]) -> str:
    return json.dumps([asdict(item) for item in items], indent=2)


def format_checklist(items: Sequence[Phenomenon]) -> str:
    lines = []
    for item in items:
        if item.holds is None:
            mark, detail = "n/a ", "not evaluable"
        else:
            mark = "PASS" if item.holds else "FAIL"
            detail = f"{item.magnitude:+.3f}"
        lines.append(f"[{mark}] {item.description} ({detail})")
    held = sum(1 for item in items if item.holds)
    evaluable = sum(1 for item in items if item.evaluable)
    lines.append(f"{held}/{evaluable} evaluable effects reproduced")
    return "\n".join(lines)
