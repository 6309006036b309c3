"""
Report tables derived from simulation output: per-episode event tables, speed
profiles over the crossing axis, CIT distributions, roughness and the
cross-variant phenomenon matrix.
"""

import json
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional

import numpy as np
import pandas as pd

from simulator.records import FLOAT_FORMAT, EpisodeRecord, Outcome
from simulator.scenario import RoadGeometry

from .behaviour import (
    EPISODE_COLUMNS,
    MetricTable,
    aggregate_episodes,
    checklist_to_json,
    episode_frame,
    format_checklist,
    phenomenon_checklist,
)
from .exceptions import AnalysisError

logger = logging.getLogger(__name__)

PROFILE_BIN_WIDTH = 0.25
PROFILE_TRACES = 10

EPISODES_FILE = "episodes.csv"
TICKS_FILE = "ticks.csv"
METRICS_FILE = "metrics.csv"


def episode_table(records: Iterable[EpisodeRecord]) -> pd.DataFrame:
    """Per-episode events joined with seed, duration, total reward and parameters"""
    records = list(records)
    events = episode_frame(records)
    extra = pd.DataFrame([r.summary() for r in records])
    if extra.empty:
        extra = pd.DataFrame(columns=["episode", "seed", "variant", "duration", "total_reward"])
    extra = extra.drop(columns=[c for c in extra.columns if c in events.columns and c != "episode"])
    return events.merge(extra, on="episode", how="left")


def write_frame(frame: pd.DataFrame, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


def read_episode_table(path: Path) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Episode table not found: {path}")
    frame = pd.read_csv(path)
    missing = [c for c in EPISODE_COLUMNS if c not in frame.columns]
    if missing:
        raise AnalysisError(f"Episode table {path} is missing columns: {', '.join(missing)}")
    return frame


def roughness(ticks: pd.DataFrame) -> float:
    """Mean absolute tick-to-tick change of walking speed"""
    if ticks.empty:
        return float("nan")
    deltas = ticks.groupby("episode", sort=False)["ped_speed"].diff().abs().dropna()
    return float(deltas.mean()) if len(deltas) else 0.0


def speed_profile(
    ticks: pd.DataFrame,
    episodes: pd.DataFrame,
    extent: Optional[float] = None,
    bin_width: float = PROFILE_BIN_WIDTH,
    traces: int = PROFILE_TRACES,
    seed: int = 0,
) -> pd.DataFrame:
    """
    Walking speed binned by position between the start point and the far curb.

    Each crossed episode contributes its mean speed per bin between movement
    onset and road exit; the profile averages those over episodes. A random
    subset of episodes is appended as ``trace_<episode>`` columns.
    """
    extent = extent if extent is not None else RoadGeometry().far_curb
    edges = np.arange(0.0, extent + bin_width / 2, bin_width)
    centers = (edges[:-1] + edges[1:]) / 2
    profile = pd.DataFrame({"position_bin": centers})

    crossed = episodes[episodes["outcome"] == Outcome.CROSSED.value]
    per_episode = {}
    for row in crossed.itertuples(index=False):
        window = ticks[
            (ticks["episode"] == row.episode)
            & (ticks["t"] >= row.movement_onset)
            & (ticks["t"] <= row.exit_time)
        ]
        bins = pd.cut(window["ped_position"], edges, labels=False, include_lowest=True)
        per_episode[int(row.episode)] = (
            window.groupby(bins)["ped_speed"].mean().reindex(range(len(centers)))
        )

    if per_episode:
        matrix = pd.DataFrame(per_episode)
        profile["mean_speed"] = matrix.mean(axis=1, skipna=True).to_numpy()
        profile["std_speed"] = matrix.std(axis=1, skipna=True, ddof=1).to_numpy()
        profile["n_episodes"] = matrix.notna().sum(axis=1).to_numpy()
        rng = np.random.default_rng(seed)
        chosen = sorted(rng.choice(list(per_episode), size=min(traces, len(per_episode)), replace=False))
        for episode in chosen:
            profile[f"trace_{episode}"] = matrix[episode].to_numpy()
    else:
        profile["mean_speed"] = np.nan
        profile["std_speed"] = np.nan
        profile["n_episodes"] = 0
    return profile


def cit_distribution(episodes: pd.DataFrame) -> pd.DataFrame:
    columns = ["episode", "v0", "tau0", "yielding", "ehmi", "night", "crossing_class", "cit", "speed"]
    return episodes.loc[episodes["cit"].notna(), columns].reset_index(drop=True)


def report_summary(table: MetricTable, episodes: pd.DataFrame, ticks: pd.DataFrame) -> Dict[str, object]:
    outcomes = episodes["outcome"].value_counts().to_dict()
    return {
        "episodes": int(len(episodes)),
        "conditions": int(len(table)),
        "outcomes": {str(k): int(v) for k, v in outcomes.items()},
        "collision_rate": float(episodes["collision"].astype(bool).mean()) if len(episodes) else None,
        "mean_cit": float(episodes["cit"].mean()) if episodes["cit"].notna().any() else None,
        "mean_speed": float(episodes["speed"].mean()) if episodes["speed"].notna().any() else None,
        "roughness": roughness(ticks),
    }


def write_report(
    output_dir: Path,
    episodes: pd.DataFrame,
    ticks: pd.DataFrame,
    table: Optional[MetricTable] = None,
    extent: Optional[float] = None,
    seed: int = 0,
) -> List[Path]:
    """Checklist, per-condition tables and plot-ready CSVs"""
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    if table is None:
        table = MetricTable(aggregate_episodes(episodes))
    checklist = phenomenon_checklist(table)

    paths = [
        table.to_csv(output_dir / "conditions.csv"),
        write_frame(speed_profile(ticks, episodes, extent=extent, seed=seed), output_dir / "speed_profile.csv"),
        write_frame(cit_distribution(episodes), output_dir / "cit_distribution.csv"),
    ]

    checklist_path = output_dir / "checklist.json"
    checklist_path.write_text(checklist_to_json(checklist))
    text_path = output_dir / "checklist.txt"
    text_path.write_text(format_checklist(checklist) + "\n")
    summary_path = output_dir / "summary.json"
    summary_path.write_text(json.dumps(report_summary(table, episodes, ticks), indent=2, sort_keys=True))
    paths += [checklist_path, text_path, summary_path]

    logger.info(f"Wrote report with {len(paths)} files to {output_dir}")
    return paths


def phenomenon_matrix(tables: Dict[str, MetricTable]) -> pd.DataFrame:
    """Which directional phenomena each variant reproduces"""
    columns = {}
    descriptions = {}
    for variant, table in tables.items():
        items = phenomenon_checklist(table)
        columns[variant] = [item.holds for item in items]
        descriptions = {item.name: item.description for item in items}
    frame = pd.DataFrame(columns, index=list(descriptions))
    frame.index.name = "phenomenon"
    frame.insert(0, "description", [descriptions[name] for name in frame.index])
    return frame.reset_index()


def variant_summary(tables: Dict[str, MetricTable], ticks: Dict[str, pd.DataFrame]) -> pd.DataFrame:
    rows = []
    for variant, table in tables.items():
        frame = table.frame
        items = phenomenon_checklist(table)
        rows.append(
            {
                "variant": variant,
                "roughness": roughness(ticks[variant]),
                "mean_g": float(frame["g"].mean()),
                "mean_e": float(frame["e"].mean()),
                "mean_cit": float(frame["cit"].mean()),
                "mean_speed": float(frame["speed"].mean()),
                "collision_rate": float(frame["collision_rate"].mean()) if "collision_rate" in frame else np.nan,
                "phenomena_reproduced": sum(1 for item in items if item.holds),
                "phenomena_evaluable": sum(1 for item in items if item.evaluable),
            }
        )
    return pd.DataFrame(rows)
