"""Multi-view test evaluation: uniform temporal windows times spatial crops,
prediction averaging, and per-class accounting.

Each window resamples its frame range back to the model's clip length; each
crop is taken at evenly spaced horizontal origins (vertically centered) and
bilinearly resized back to the frame size, so every view matches the trained
input geometry.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import torch

from .features import LogMelSpec, bilinear_resize, patchify
from .synthdata import Sample, VideoClip


@dataclass
class EvalPolicy:
    segments: int = 5
    crops: int = 3
    crop_size: int = 24

    @property
    def views(self) -> int:
        return self.segments * self.crops


@dataclass
class EvalResult:
    top1: float
    per_class: list[float]
    confusion: list[list[int]]
    views: int


def temporal_view_indices(t: int, segments: int) -> list[np.ndarray]:
    """Frame index arrays for ``segments`` windows laid out uniformly over the
    clip, each resampled (nearest) back to t frames."""
    if segments <= 1:
        return [np.arange(t)]
    window = max(1, t - segments + 1)
    starts = np.round(np.linspace(0, t - window, segments)).astype(int)
    views = []
    for s in starts:
        views.append(np.round(np.linspace(s, s + window - 1, t)).astype(int))
    return views


def crop_origins(full: int, crop: int, crops: int) -> list[int]:
    """Evenly spaced crop origins covering the axis (left/center/right at 3)."""
    if crop > full:
        raise ValueError(f"crop {crop} larger than axis {full}")
    if crops <= 1:
        return [(full - crop) // 2]
    return [int(round(x)) for x in np.linspace(0, full - crop, crops)]


def _crop_and_resize(frames: np.ndarray, x0: int, y0: int, crop: int) -> np.ndarray:
    t, h, w, c = frames.shape
    patch = frames[:, y0 : y0 + crop, x0 : x0 + crop, :]
    if crop == h and crop == w:
        return patch
    out = np.empty_like(frames)
    for ti in range(t):
        for ci in range(c):
            out[ti, :, :, ci] = bilinear_resize(patch[ti, :, :, ci].astype(np.float64), h, w)
    return np.clip(out, 0.0, 1.0)


def make_views(clip: VideoClip, policy: EvalPolicy) -> np.ndarray:
    """All evaluation views of one clip, [views, T, H, W, C]."""
    frames = clip.frames
    t, h, w, _ = frames.shape
    xs = crop_origins(w, policy.crop_size, policy.crops)
    y0 = (h - policy.crop_size) // 2
    views = []
    for idx in temporal_view_indices(t, policy.segments):
        windowed = frames[idx]
        for x0 in xs:
            views.append(_crop_and_resize(windowed, x0, y0, policy.crop_size))
    return np.stack(views)


def evaluate(
    model,
    samples: Sequence[Sample],
    policy: EvalPolicy,
    patch_size: int,
    spec_fn: Callable[[Sample], LogMelSpec],
    batch_size: int = 64,
) -> EvalResult:
    """Average the model's softmax output over all views of each sample and
    score argmax against the true label (``label`` on the test split)."""
    if not samples:
        raise ValueError("test split is empty")
    labels = []
    for s in samples:
        lab = s.label if s.label is not None else s.diag_label
        if lab is None:
            raise ValueError(f"sample {s.uid} has no label to evaluate against")
        labels.append(int(lab))

    dtype = next(model.parameters()).dtype
    num_classes = model.cfg.num_classes
    was_training = model.training
    model.eval()
    probs_sum = np.zeros((len(samples), num_classes))
    pending_tokens: list[np.ndarray] = []
    pending_specs: list[np.ndarray] = []
    pending_owner: list[int] = []

    def flush() -> None:
        if not pending_tokens:
            return
        with torch.no_grad():
            out = model(
                torch.as_tensor(np.stack(pending_tokens), dtype=dtype),
                torch.as_tensor(np.stack(pending_specs), dtype=dtype),
            )
        p = out.probs.to(torch.float64).numpy()
        for row, owner in enumerate(pending_owner):
            probs_sum[owner] += p[row]
        pending_tokens.clear()
        pending_specs.clear()
        pending_owner.clear()

    for i, s in enumerate(samples):
        spec = spec_fn(s).values
        for view in make_views(s.clip, policy):
            pending_tokens.append(patchify(VideoClip(view.astype(np.float32)), patch_size).tokens)
            pending_specs.append(spec)
            pending_owner.append(i)
            if len(pending_tokens) >= batch_size:
                flush()
    flush()
    if was_training:
        model.train()

    preds = probs_sum.argmax(axis=1)
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    for lab, pred in zip(labels, preds):
        confusion[lab, pred] += 1
    per_class = [
        float(confusion[c, c] / confusion[c].sum()) if confusion[c].sum() else 0.0
        for c in range(num_classes)
    ]
    top1 = float((preds == np.asarray(labels)).mean())
    return EvalResult(
        top1=top1,
        per_class=per_class,
        confusion=confusion.tolist(),
        views=policy.views,
    )
