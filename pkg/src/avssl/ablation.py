"""Ablation runner: sweep one axis (mask type, contrastive on/off, gate
threshold, frames per localization map) across seeds and tabulate accuracy.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .config import RunConfig
from .synthdata import DatasetBundle
from .train import Trainer

AXES: dict[str, list] = {
    "mask_type": ["asl", "tube", "random"],
    "contrastive": [True, False],
    "tau": [0.1, 0.3, 0.5, 0.7, 0.9],
    "frames_per_map": [1, 2, 4, 8],
}


def apply_axis_value(cfg: RunConfig, axis: str, value) -> RunConfig:
    if axis == "mask_type":
        return cfg.updated({"mask.type": value})
    if axis == "contrastive":
        gamma3 = cfg["loss.gamma3"] if value else 0.0
        return cfg.updated({"loss.gamma3": gamma3})
    if axis == "tau":
        return cfg.updated({"ssl.tau_base": value})
    if axis == "frames_per_map":
        return cfg.updated({"mask.frames_per_map": value})
    raise ValueError(f"unknown ablation axis {axis!r}; choose from {sorted(AXES)}")


def run_ablation(
    axis: str,
    base_cfg: RunConfig,
    seeds: list[int],
    bundle: DatasetBundle | None = None,
    out_dir: str | Path | None = None,
    values: list | None = None,
) -> list[dict]:
    """Train one run per (axis value, seed); returns a row per run with the
    final accuracy. Metrics logs land under ``out_dir`` when given."""
    if axis not in AXES:
        raise ValueError(f"unknown ablation axis {axis!r}; choose from {sorted(AXES)}")
    values = AXES[axis] if values is None else values
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    rows = []
    for value in values:
        for seed in seeds:
            cfg = apply_axis_value(base_cfg, axis, value).updated({"seed": seed})
            metrics = out / f"{axis}-{value}-seed{seed}.jsonl" if out else None
            trainer = Trainer(cfg, bundle=bundle, metrics_path=metrics)
            result = trainer.run()
            rows.append(
                {
                    "axis": axis,
                    "value": value,
                    "seed": seed,
                    "top1": result["top1"],
                    "student_top1": result["student_top1"],
                }
            )
    if out:
        with open(out / f"{axis}-results.json", "w") as fh:
            json.dump(rows, fh, indent=2)
    return rows


def summarize(rows: list[dict]) -> dict:
    """Mean and standard deviation of top-1 accuracy per axis value."""
    by_value: dict = {}
    for row in rows:
        by_value.setdefault(row["value"], []).append(row["top1"])
    return {
        value: {
            "mean": float(np.mean(accs)),
            "std": float(np.std(accs)),
            "runs": len(accs),
        }
        for value, accs in by_value.items()
    }


def format_table(rows: list[dict]) -> str:
    stats = summarize(rows)
    axis = rows[0]["axis"] if rows else "axis"
    lines = [f"{axis:>16} | mean top-1 |    std | runs"]
    lines.append("-" * len(lines[0]))
    for value, s in stats.items():
        lines.append(f"{str(value):>16} | {s['mean']:10.4f} | {s['std']:6.4f} | {s['runs']:4d}")
    return "\n".join(lines)
