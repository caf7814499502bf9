"""Sweep output: long-format CSV plus JSON aggregates with 95% intervals."""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from privfair.harness.sweep import METRICS, SweepResult

CSV_COLUMNS = ("epsilon", "trial", "metric", "value")
Z95 = 1.96


def _fmt(v: float) -> str:
    return repr(float(v))


def aggregate(result: SweepResult) -> list[dict]:
    """Mean, sd and ``mean +/- 1.96 sd / sqrt(trials)`` per (epsilon, metric)."""
    out = []
    for eps in result.config.epsilon_grid:
        failed = sum(1 for e, _, m in result.cells if e == eps and not isinstance(m, dict))
        for metric in METRICS:
            v = result.values(eps, metric)
            if v.size == 0:
                continue
            mean = float(v.mean())
            sd = float(v.std(ddof=1)) if v.size > 1 else 0.0
            half = Z95 * sd / math.sqrt(v.size)
            out.append({
                "epsilon": eps,
                "metric": metric,
                "mean": mean,
                "sd": sd,
                "ci_low": mean - half,
                "ci_high": mean + half,
                "trials": int(v.size),
                "failed": failed,
            })
    return out


def emit_report(result: SweepResult, out_dir) -> tuple[Path, Path]:
    """Write ``sweep.csv`` and ``sweep.json`` into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path, json_path = out_dir / "sweep.csv", out_dir / "sweep.json"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for eps, trial, metrics in result.cells:
            if isinstance(metrics, dict):
                for name in METRICS:
                    writer.writerow((_fmt(eps), trial, name, _fmt(metrics[name])))
            else:
                writer.writerow((_fmt(eps), trial, "failed", _fmt(metrics)))
    payload = {"config": result.config.to_dict(), "aggregates": aggregate(result)}
    with open(json_path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
    return csv_path, json_path


def read_sweep_csv(path) -> list[tuple[float, int, str, float]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != CSV_COLUMNS:
            raise ValueError(f"unexpected columns {header}")
        return [(float(e), int(t), m, float(v)) for e, t, m, v in reader]


def read_aggregates(path) -> list[dict]:
    with open(path) as fh:
        return json.load(fh)["aggregates"]


def trend_table(aggregates: list[dict], metrics=("disc_step1", "disc_step2", "acc_step1", "acc_step2")) -> str:
    """Plain-text table of means per epsilon, for logs."""
    by = {(a["epsilon"], a["metric"]): a["mean"] for a in aggregates}
    eps = sorted({a["epsilon"] for a in aggregates})
    lines = ["epsilon " + " ".join(f"{m:>14}" for m in metrics)]
    for e in eps:
        lines.append(f"{e:7g} " + " ".join(f"{by.get((e, m), np.nan):14.4f}" for m in metrics))
    return "\n".join(lines)
