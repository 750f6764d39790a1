"""Plot emission from metrics logs and saliency overlays from a bundle."""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .features import bilinear_resize
from .localize import OracleLocalizer
from .masks import compute_localization
from .synthdata import DatasetBundle, Sample


def read_metrics(path: str | Path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def plot_metrics(metrics_path: str | Path, out_dir: str | Path) -> list[Path]:
    """Loss/pass-rate curves and, when eval events exist, the accuracy curve."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = read_metrics(metrics_path)
    steps_rows = [r for r in rows if r.get("event") == "train_step"]
    written = []

    fig, axes = plt.subplots(1, 2, figsize=(11, 4))
    steps = [r["step"] for r in steps_rows]
    for key in ("loss_total", "loss_s", "loss_u", "loss_mix", "loss_con"):
        axes[0].plot(steps, [r[key] for r in steps_rows], label=key, linewidth=1)
    axes[0].set_xlabel("step")
    axes[0].set_ylabel("loss")
    axes[0].legend(fontsize=8)
    axes[1].plot(steps, [r["pass_rate"] for r in steps_rows], label="pass rate")
    axes[1].plot(steps, [r["mix_pass_rate"] for r in steps_rows], label="mix pass rate")
    axes[1].set_xlabel("step")
    axes[1].set_ylim(-0.02, 1.02)
    axes[1].legend(fontsize=8)
    fig.tight_layout()
    path = out / "losses.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    eval_rows = [r for r in rows if r.get("event") in ("eval", "final")]
    if eval_rows:
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot([r["step"] for r in eval_rows], [r["top1"] for r in eval_rows], marker="o")
        ax.set_xlabel("step")
        ax.set_ylabel("top-1 accuracy")
        ax.set_ylim(0, 1.02)
        fig.tight_layout()
        path = out / "accuracy.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    return written


def saliency_overlay(
    sample: Sample,
    bundle: DatasetBundle,
    out_dir: str | Path,
    grid: int = 4,
    feat_dim: int = 16,
    noise: float = 0.05,
    seed: int = 0,
) -> Path:
    """Oracle-localizer saliency heatmap blended over the sample's frames."""
    from .localize import LocalizerConfig

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t, h, w, _ = sample.clip.frames.shape
    loc = OracleLocalizer(LocalizerConfig(grid=grid, feat_dim=feat_dim, noise=noise))
    feats = loc.extract(sample.clip, None, sample.source, np.random.default_rng(seed))
    gh = int(bundle.metadata["height"]) // int(bundle.metadata["patch_size"])
    gw = int(bundle.metadata["width"]) // int(bundle.metadata["patch_size"])
    loc_map = compute_localization(feats, (gh, gw))

    fig, axes = plt.subplots(1, t, figsize=(1.6 * t, 2))
    for ti in range(t):
        ax = axes[ti] if t > 1 else axes
        ax.imshow(sample.clip.frames[ti])
        heat = bilinear_resize(loc_map.saliency[ti].reshape(gh, gw), h, w)
        ax.imshow(heat, alpha=0.45, cmap="inferno", vmin=0.0, vmax=1.0)
        x0, y0, x1, y1 = sample.source.frame_boxes[ti]
        ax.add_patch(
            plt.Rectangle((x0 - 0.5, y0 - 0.5), x1 - x0, y1 - y0, fill=False, color="cyan", lw=1)
        )
        ax.set_axis_off()
    fig.tight_layout()
    path = out / f"saliency-{sample.uid}.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
