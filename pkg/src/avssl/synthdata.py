"""Seeded synthetic audio-visual classification data.

Every sample is a short clip of a class-specific textured sprite moving over a
noisy background, paired with a class-band carrier tone whose amplitude
envelope follows the sprite's speed. The sprite bounding box per frame is kept
as ground truth, which lets the oracle localizer and mask-quality diagnostics
work without any pretrained localization model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Iterator

import numpy as np

from .container import read_container, write_container

BUNDLE_KIND = "dataset-bundle"

# per-class RGB tints, cycled when num_classes > 8
_PALETTE = np.array(
    [
        [1.00, 0.35, 0.35],
        [0.35, 1.00, 0.45],
        [0.40, 0.55, 1.00],
        [1.00, 0.95, 0.35],
        [1.00, 0.45, 1.00],
        [0.40, 1.00, 1.00],
        [1.00, 0.70, 0.35],
        [0.75, 0.75, 0.75],
    ]
)


class DataConfigError(ValueError):
    """Invalid generation or batching configuration."""


@dataclass
class VideoClip:
    """Frame stack [T, H, W, C], float32 values in [0, 1]."""

    frames: np.ndarray

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return tuple(self.frames.shape)  # type: ignore[return-value]

    def validate(self, patch_size: int | None = None) -> None:
        t, h, w, _ = self.frames.shape
        if t < 1:
            raise ValueError("clip needs at least one frame")
        if not np.isfinite(self.frames).all():
            raise ValueError("clip contains non-finite values")
        if self.frames.min() < 0.0 or self.frames.max() > 1.0:
            raise ValueError("clip values outside [0, 1]")
        if patch_size is not None and (h % patch_size or w % patch_size):
            raise ValueError(f"frame size {h}x{w} not divisible by patch {patch_size}")

    def __eq__(self, other) -> bool:
        return isinstance(other, VideoClip) and np.array_equal(self.frames, other.frames)


@dataclass
class Waveform:
    """Mono waveform, |samples| <= 1."""

    samples: np.ndarray
    sample_rate: int

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Waveform)
            and self.sample_rate == other.sample_rate
            and np.array_equal(self.samples, other.samples)
        )


@dataclass
class SourceRegion:
    """Per-frame sprite bounding boxes [T, 4] as (x0, y0, x1, y1) pixels."""

    frame_boxes: np.ndarray

    def validate(self, h: int, w: int) -> None:
        b = self.frame_boxes
        if b.ndim != 2 or b.shape[1] != 4:
            raise ValueError("frame_boxes must have shape [T, 4]")
        x0, y0, x1, y1 = b[:, 0], b[:, 1], b[:, 2], b[:, 3]
        if not ((0 <= x0) & (x0 < x1) & (x1 <= w)).all():
            raise ValueError("invalid x extent in frame_boxes")
        if not ((0 <= y0) & (y0 < y1) & (y1 <= h)).all():
            raise ValueError("invalid y extent in frame_boxes")

    def __eq__(self, other) -> bool:
        return isinstance(other, SourceRegion) and np.array_equal(
            self.frame_boxes, other.frame_boxes
        )


@dataclass
class Sample:
    """One audio-visual sample. ``label`` is None on the unlabeled split; the
    true class is retained in ``diag_label`` for evaluation-only diagnostics
    and must never be read by the training loop."""

    uid: str
    clip: VideoClip
    waveform: Waveform
    source: SourceRegion
    label: int | None
    diag_label: int | None = None

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Sample)
            and self.uid == other.uid
            and self.label == other.label
            and self.diag_label == other.diag_label
            and self.clip == other.clip
            and self.waveform == other.waveform
            and self.source == other.source
        )


@dataclass
class DatasetBundle:
    labeled: list[Sample]
    unlabeled: list[Sample]
    test: list[Sample]
    metadata: dict

    @property
    def num_classes(self) -> int:
        return int(self.metadata["num_classes"])

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, DatasetBundle)
            and self.metadata == other.metadata
            and self.labeled == other.labeled
            and self.unlabeled == other.unlabeled
            and self.test == other.test
        )


@dataclass
class GenConfig:
    """Generation parameters; the defaults are the desk-scale bundle."""

    num_classes: int = 4
    per_class_labeled: int = 1
    per_class_unlabeled: int = 24
    per_class_test: int = 12
    frames: int = 8
    height: int = 32
    width: int = 32
    channels: int = 3
    sample_rate: int = 8000
    duration: float = 1.0
    patch_size: int = 8
    sprite_size: int = 16
    motion_speed: float = 1.0
    bg_noise: float = 0.08
    audio_noise: float = 0.10
    carrier_jitter: float = 0.10
    seed: int = 0

    def validate(self) -> None:
        if self.num_classes < 2:
            raise DataConfigError("num_classes must be >= 2")
        if self.height % self.patch_size or self.width % self.patch_size:
            raise DataConfigError(
                f"frame size {self.height}x{self.width} not divisible by "
                f"patch size {self.patch_size}"
            )
        if self.per_class_labeled < 1 or self.per_class_test < 1:
            raise DataConfigError("labeled and test splits must be non-empty")
        if self.per_class_unlabeled < 10 * self.per_class_labeled:
            raise DataConfigError(
                "unlabeled/labeled ratio must be >= 10 "
                f"(got {self.per_class_unlabeled}:{self.per_class_labeled})"
            )
        if self.sprite_size >= min(self.height, self.width):
            raise DataConfigError("sprite must be smaller than the frame")
        if self.frames < 1:
            raise DataConfigError("frames must be >= 1")


def _sprite_texture(cls: int, size: int, channels: int, phase: float, scale: float) -> np.ndarray:
    """Class-indexed procedural texture patch in [0, 1], shape [size, size, C]."""
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    kind = cls % 4
    freq = (0.8 + 0.4 * scale) * 2.0 * math.pi / size
    if kind == 0:  # diagonal stripes
        base = 0.5 + 0.5 * np.sin(freq * 3.0 * (xx + yy) + phase)
    elif kind == 1:  # checkerboard
        block = max(2, int(round(size / (3.0 + scale))))
        base = (((xx // block) + (yy // block)) % 2).astype(np.float64)
    elif kind == 2:  # dot lattice
        base = 0.5 + 0.5 * np.sin(freq * 2.5 * xx + phase) * np.sin(freq * 2.5 * yy + phase)
        base = base**2
    else:  # oriented gradient
        ang = phase
        base = (xx * math.cos(ang) + yy * math.sin(ang)) / (size * 1.5) + 0.5
    base = np.clip(base, 0.0, 1.0)
    tint = _PALETTE[cls % len(_PALETTE)][:channels]
    out = 0.15 + 0.8 * base[:, :, None] * tint[None, None, :]
    return np.clip(out, 0.0, 1.0)


def _random_walk_boxes(
    rng: np.random.Generator, cfg: GenConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Sprite top-left random walk clipped to the frame.

    Returns integer boxes [T, 4] and per-frame speeds [T] normalized to [0, 1].
    """
    s = cfg.sprite_size
    max_x, max_y = cfg.width - s, cfg.height - s
    step = 2.0 * cfg.motion_speed
    pos = np.array([rng.uniform(0, max_x), rng.uniform(0, max_y)])
    vel = rng.normal(0.0, step, size=2)
    boxes = np.empty((cfg.frames, 4), dtype=np.int32)
    speeds = np.empty(cfg.frames)
    for t in range(cfg.frames):
        x0, y0 = int(round(pos[0])), int(round(pos[1]))
        boxes[t] = (x0, y0, x0 + s, y0 + s)
        vel += rng.normal(0.0, 0.6 * step, size=2)
        vel = np.clip(vel, -2.0 * step, 2.0 * step)
        speeds[t] = float(np.hypot(*vel)) / (2.0 * step * math.sqrt(2.0))
        pos = pos + vel
        # reflect at the borders so the sprite stays fully inside
        for ax, hi in ((0, max_x), (1, max_y)):
            if pos[ax] < 0:
                pos[ax] = -pos[ax]
                vel[ax] = -vel[ax]
            if pos[ax] > hi:
                pos[ax] = 2 * hi - pos[ax]
                vel[ax] = -vel[ax]
            pos[ax] = np.clip(pos[ax], 0, hi)
    return boxes, np.clip(speeds, 0.0, 1.0)


def _render_clip(
    rng: np.random.Generator, cfg: GenConfig, cls: int, boxes: np.ndarray
) -> np.ndarray:
    phase = rng.uniform(0.0, 2.0 * math.pi)
    scale = rng.uniform(0.0, 1.0)
    drift = rng.uniform(0.1, 0.4)
    frames = np.empty((cfg.frames, cfg.height, cfg.width, cfg.channels), dtype=np.float32)
    for t in range(cfg.frames):
        bg = 0.5 + cfg.bg_noise * rng.standard_normal(
            (cfg.height, cfg.width, cfg.channels)
        )
        tex = _sprite_texture(cls, cfg.sprite_size, cfg.channels, phase + drift * t, scale)
        x0, y0, x1, y1 = boxes[t]
        bg[y0:y1, x0:x1, :] = tex
        frames[t] = np.clip(bg, 0.0, 1.0)
    return frames


def _render_waveform(
    rng: np.random.Generator, cfg: GenConfig, cls: int, speeds: np.ndarray
) -> np.ndarray:
    n = int(round(cfg.duration * cfg.sample_rate))
    # class-specific carrier band, jittered per sample inside the band
    base = 400.0 + 300.0 * cls
    freq = base * (1.0 + cfg.carrier_jitter * rng.uniform(-1.0, 1.0))
    t = np.arange(n) / cfg.sample_rate
    env = np.repeat(speeds, max(1, n // len(speeds)))[:n]
    if len(env) < n:
        env = np.pad(env, (0, n - len(env)), mode="edge")
    carrier = np.sin(2.0 * math.pi * freq * t + rng.uniform(0.0, 2.0 * math.pi))
    wave = (0.30 + 0.55 * env) * carrier + cfg.audio_noise * rng.standard_normal(n)
    return np.clip(wave, -1.0, 1.0).astype(np.float32)


def _make_sample(rng: np.random.Generator, cfg: GenConfig, cls: int, uid: str, labeled: bool) -> Sample:
    boxes, speeds = _random_walk_boxes(rng, cfg)
    clip = VideoClip(_render_clip(rng, cfg, cls, boxes))
    wave = Waveform(_render_waveform(rng, cfg, cls, speeds), cfg.sample_rate)
    return Sample(
        uid=uid,
        clip=clip,
        waveform=wave,
        source=SourceRegion(boxes),
        label=cls if labeled else None,
        diag_label=cls,
    )


def generate_dataset(cfg: GenConfig) -> DatasetBundle:
    """Generate a seeded bundle; identical configs produce identical bundles."""
    cfg.validate()
    root = np.random.SeedSequence(cfg.seed)
    splits = {
        "lab": cfg.per_class_labeled,
        "unl": cfg.per_class_unlabeled,
        "tst": cfg.per_class_test,
    }
    total = sum(n * cfg.num_classes for n in splits.values())
    children = iter(root.spawn(total))
    out: dict[str, list[Sample]] = {k: [] for k in splits}
    for split, per_class in splits.items():
        idx = 0
        for cls in range(cfg.num_classes):
            for _ in range(per_class):
                rng = np.random.default_rng(next(children))
                uid = f"{split}-{idx:04d}"
                out[split].append(_make_sample(rng, cfg, cls, uid, labeled=split != "unl"))
                idx += 1
    metadata = {**asdict(cfg), "num_classes": cfg.num_classes}
    return DatasetBundle(out["lab"], out["unl"], out["tst"], metadata)


# ---------------------------------------------------------------------------
# bundle I/O


def write_bundle(bundle: DatasetBundle, path: str | Path) -> None:
    """Serialize to the shared manifest + raw-array container."""
    sample_docs = []
    arrays: dict[str, np.ndarray] = {}
    for split, samples in (
        ("labeled", bundle.labeled),
        ("unlabeled", bundle.unlabeled),
        ("test", bundle.test),
    ):
        for s in samples:
            sample_docs.append(
                {
                    "uid": s.uid,
                    "split": split,
                    "label": s.label,
                    "diag_label": s.diag_label,
                    "sample_rate": s.waveform.sample_rate,
                }
            )
            arrays[f"{s.uid}/clip"] = s.clip.frames.astype("<f4")
            arrays[f"{s.uid}/waveform"] = s.waveform.samples.astype("<f4")
            arrays[f"{s.uid}/boxes"] = s.source.frame_boxes.astype("<i4")
    manifest = {"kind": BUNDLE_KIND, "metadata": bundle.metadata, "samples": sample_docs}
    write_container(path, manifest, arrays)


def read_bundle(path: str | Path) -> DatasetBundle:
    manifest, arrays = read_container(path)
    if manifest.get("kind") != BUNDLE_KIND:
        raise DataConfigError(f"{path} is not a dataset bundle")
    splits: dict[str, list[Sample]] = {"labeled": [], "unlabeled": [], "test": []}
    for doc in manifest["samples"]:
        uid = doc["uid"]
        sample = Sample(
            uid=uid,
            clip=VideoClip(arrays[f"{uid}/clip"]),
            waveform=Waveform(arrays[f"{uid}/waveform"], int(doc["sample_rate"])),
            source=SourceRegion(arrays[f"{uid}/boxes"]),
            label=doc["label"],
            diag_label=doc["diag_label"],
        )
        splits[doc["split"]].append(sample)
    return DatasetBundle(splits["labeled"], splits["unlabeled"], splits["test"], manifest["metadata"])


# ---------------------------------------------------------------------------
# batching


def make_batches(
    bundle: DatasetBundle, batch_labeled: int, ratio: int, seed: int | np.random.Generator
) -> Iterator[tuple[list[Sample], list[Sample]]]:
    """Infinite stream of (labeled, unlabeled) batch pairs.

    Unlabeled samples are drawn without replacement within an epoch; the
    labeled split recycles with a reshuffle whenever it runs out. Batch sizes
    are (batch_labeled, batch_labeled * ratio).
    """
    if batch_labeled < 1 or ratio < 1:
        raise DataConfigError("batch_labeled and ratio must be >= 1")
    if not bundle.labeled:
        raise DataConfigError("labeled split is empty")
    batch_unlabeled = batch_labeled * ratio
    if batch_unlabeled > len(bundle.unlabeled):
        raise DataConfigError(
            f"unlabeled batch {batch_unlabeled} exceeds split size {len(bundle.unlabeled)}"
        )
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    def labeled_stream() -> Iterator[Sample]:
        while True:
            order = rng.permutation(len(bundle.labeled))
            for i in order:
                yield bundle.labeled[i]

    lab_iter = labeled_stream()
    while True:
        order = rng.permutation(len(bundle.unlabeled))
        n_full = len(order) // batch_unlabeled
        for b in range(n_full):
            unl = [bundle.unlabeled[i] for i in order[b * batch_unlabeled : (b + 1) * batch_unlabeled]]
            lab = [next(lab_iter) for _ in range(batch_labeled)]
            yield lab, unl


def steps_per_epoch(bundle: DatasetBundle, batch_labeled: int, ratio: int) -> int:
    return len(bundle.unlabeled) // (batch_labeled * ratio)
