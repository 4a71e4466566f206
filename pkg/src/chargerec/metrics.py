"""Episode metrics, comparison tables, and the fleet-wide savings estimate."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .mdp import EpisodeLedger
from .scenario import STEP_MINUTES

TABLE_COLUMNS = ("policy", "reward", "inconvenience_min", "wait_min", "drive_min")
QUANTILES = (0.5, 0.9, 0.99)


@dataclass
class EpisodeMetrics:
    reward: float
    wait_min: float
    drive_min: float
    inconvenience_min: float
    n_queries: int
    quantiles: dict = field(default_factory=dict)


def aggregate(ledger: EpisodeLedger, K: float = 10.0, lam: float = 1.0) -> EpisodeMetrics:
    """Per-user means in minutes plus the episode's total reward."""
    users = list(ledger.users.values())
    reward = ledger.total_reward(K, lam)
    if not users:
        return EpisodeMetrics(reward, 0.0, 0.0, 0.0, 0, {})
    wait = np.array([u.wait_steps for u in users], dtype=np.float64) * STEP_MINUTES
    drive = np.array([u.drive_steps for u in users], dtype=np.float64) * STEP_MINUTES
    inconv = wait + lam * drive
    q = {
        f"{name}_p{int(p * 100)}": float(np.quantile(arr, p))
        for name, arr in (("wait", wait), ("drive", drive), ("inconvenience", inconv))
        for p in QUANTILES
    }
    return EpisodeMetrics(reward, float(wait.mean()), float(drive.mean()), float(inconv.mean()), len(users), q)


def pool(metrics: Sequence[EpisodeMetrics]) -> EpisodeMetrics:
    """Combine episodes: user-weighted time means, per-episode mean reward."""
    if not metrics:
        return EpisodeMetrics(0.0, 0.0, 0.0, 0.0, 0, {})
    n = sum(m.n_queries for m in metrics)
    reward = float(np.mean([m.reward for m in metrics]))
    if n == 0:
        return EpisodeMetrics(reward, 0.0, 0.0, 0.0, 0, {})

    def wmean(attr):
        return sum(getattr(m, attr) * m.n_queries for m in metrics) / n

    return EpisodeMetrics(reward, wmean("wait_min"), wmean("drive_min"), wmean("inconvenience_min"), n, {})


def compare_table(metrics_by_policy: dict) -> list:
    """One row per policy with the comparison-table columns."""
    rows = []
    for name, m in metrics_by_policy.items():
        if isinstance(m, (list, tuple)):
            m = pool(m)
        rows.append({
            "policy": name,
            "reward": m.reward,
            "inconvenience_min": m.inconvenience_min,
            "wait_min": m.wait_min,
            "drive_min": m.drive_min,
        })
    return rows


def format_table(rows: Iterable[dict]) -> str:
    rows = list(rows)
    lines = ["{:<16}{:>12}{:>16}{:>10}{:>10}".format("policy", "reward", "inconvenience", "wait", "drive")]
    for r in rows:
        lines.append("{:<16}{:>12.2f}{:>16.2f}{:>10.2f}{:>10.2f}".format(
            r["policy"], r["reward"], r["inconvenience_min"], r["wait_min"], r["drive_min"]))
    return "\n".join(lines)


def write_report(rows: Sequence[dict], out_dir, stem: str = "report") -> tuple:
    """Write ``<stem>.csv`` (2-decimal display values) and ``<stem>.json`` (full precision)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    columns = list(rows[0]) if rows else list(TABLE_COLUMNS)
    csv_path, json_path = out / f"{stem}.csv", out / f"{stem}.json"
    with csv_path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns)
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.2f}" if isinstance(v, float) else v) for k, v in r.items()})
    json_path.write_text(json.dumps(list(rows), indent=1) + "\n")
    return csv_path, json_path


def estimate_global_savings(fleet: float, active_fraction: float, miles_per_year: float, range_miles: float, minutes_saved: float) -> float:
    """Person-hours saved per year: active cars x charges per car per year x minutes saved / 60."""
    for name, v in (("fleet", fleet), ("active_fraction", active_fraction), ("miles_per_year", miles_per_year), ("range_miles", range_miles)):
        if not v > 0:
            raise ValueError(f"{name} must be positive")
    if minutes_saved < 0:
        raise ValueError("minutes_saved must be non-negative")
    charges_per_year = miles_per_year / range_miles
    return fleet * active_fraction * charges_per_year * minutes_saved / 60.0


def metrics_dict(m: EpisodeMetrics) -> dict:
    return asdict(m)
