"""Visual and audio feature pipelines.

Video side: weak augmentation (flip + small shift), a six-op strong
augmentation with temporal-warping frame padding, and non-overlapping patch
tokenization. Audio side: log mel-filterbank extraction (HTK mel scale,
magnitude STFT, fixed power floor) and SpecAugment-style masking filled with
the per-spectrogram mean.

Augmentations are split into parameter sampling and deterministic application
so boxes can be co-transformed and tests can force specific draws.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .synthdata import VideoClip

STRONG_OPS = ("flip", "translate", "brightness", "contrast", "grayscale", "cutout")
STRONG_OPS_PER_CLIP = 2

_LUMA = np.array([0.299, 0.587, 0.114])


@dataclass
class TokenGrid:
    """Per-frame patch tokens [T, N, D] with the spatial grid shape (gh, gw)."""

    tokens: np.ndarray
    grid_shape: tuple[int, int]

    @property
    def tokens_per_frame(self) -> int:
        return self.grid_shape[0] * self.grid_shape[1]


@dataclass
class LogMelSpec:
    """Log mel-filterbank matrix [M, L]; ``floor`` is the power floor applied
    before the log, so ``values >= log(floor)`` everywhere."""

    values: np.ndarray
    floor: float = 1e-10


@dataclass
class LogMelParams:
    n_fft: int = 256
    hop: int = 128
    n_mels: int = 64
    floor: float = 1e-10
    fmin: float = 0.0
    fmax: float | None = None


@dataclass
class SpecAugmentParams:
    n_time_masks: int = 2
    n_freq_masks: int = 2
    # None -> 15% of the respective axis
    max_time_width: int | None = None
    max_freq_width: int | None = None


# ---------------------------------------------------------------------------
# weak augmentation


@dataclass
class WeakAugParams:
    flip: bool
    dx: int
    dy: int


def sample_weak_params(rng: np.random.Generator, h: int, w: int) -> WeakAugParams:
    max_dx, max_dy = w // 10, h // 10
    return WeakAugParams(
        flip=bool(rng.random() < 0.5),
        dx=int(rng.integers(-max_dx, max_dx + 1)),
        dy=int(rng.integers(-max_dy, max_dy + 1)),
    )


def _flip_frames(frames: np.ndarray) -> np.ndarray:
    return frames[:, :, ::-1, :]


def _translate_frames(frames: np.ndarray, dx: int, dy: int, fill: float = 0.5) -> np.ndarray:
    if dx == 0 and dy == 0:
        return frames
    t, h, w, c = frames.shape
    out = np.full_like(frames, fill)
    ys = slice(max(dy, 0), h + min(dy, 0))
    xs = slice(max(dx, 0), w + min(dx, 0))
    ys_src = slice(max(-dy, 0), h + min(-dy, 0))
    xs_src = slice(max(-dx, 0), w + min(-dx, 0))
    out[:, ys, xs, :] = frames[:, ys_src, xs_src, :]
    return out


def apply_weak(clip: VideoClip, params: WeakAugParams) -> VideoClip:
    frames = clip.frames
    if params.flip:
        frames = _flip_frames(frames)
    frames = _translate_frames(frames, params.dx, params.dy)
    return VideoClip(np.ascontiguousarray(frames, dtype=clip.frames.dtype))


def weak_augment(clip: VideoClip, rng: np.random.Generator) -> VideoClip:
    """Horizontal flip and integer shift of at most 10% of each axis, applied
    identically to all frames."""
    _, h, w, _ = clip.frames.shape
    return apply_weak(clip, sample_weak_params(rng, h, w))


def _shift_boxes(boxes: np.ndarray, dx: int, dy: int, h: int, w: int) -> np.ndarray:
    out = boxes.copy()
    out[:, 0] += dx
    out[:, 2] += dx
    out[:, 1] += dy
    out[:, 3] += dy
    out[:, 0] = np.clip(out[:, 0], 0, w - 1)
    out[:, 2] = np.clip(out[:, 2], out[:, 0] + 1, w)
    out[:, 1] = np.clip(out[:, 1], 0, h - 1)
    out[:, 3] = np.clip(out[:, 3], out[:, 1] + 1, h)
    return out


def _flip_boxes(boxes: np.ndarray, w: int) -> np.ndarray:
    out = boxes.copy()
    out[:, 0] = w - boxes[:, 2]
    out[:, 2] = w - boxes[:, 0]
    return out


def transform_boxes_weak(boxes: np.ndarray, params: WeakAugParams, h: int, w: int) -> np.ndarray:
    out = boxes
    if params.flip:
        out = _flip_boxes(out, w)
    return _shift_boxes(out, params.dx, params.dy, h, w)


# ---------------------------------------------------------------------------
# strong augmentation


@dataclass
class StrongAugParams:
    """Two sampled ops (name, magnitude) followed by temporal warping.

    Magnitudes are chosen so zero means identity: flip 0/1, translate (dx, dy),
    brightness additive delta, contrast deviation of the factor from 1,
    grayscale blend in [0, 1], cutout (cy, cx, side) with side 0 disabling it.
    """

    ops: list[tuple[str, object]] = field(default_factory=list)
    twaug_selected: list[int] = field(default_factory=list)


def sample_strong_params(rng: np.random.Generator, t: int, h: int, w: int) -> StrongAugParams:
    chosen = rng.choice(len(STRONG_OPS), size=STRONG_OPS_PER_CLIP, replace=False)
    ops: list[tuple[str, object]] = []
    for op in (STRONG_OPS[i] for i in chosen):
        if op == "flip":
            mag: object = 1
        elif op == "translate":
            mag = (int(rng.integers(-w // 8, w // 8 + 1)), int(rng.integers(-h // 8, h // 8 + 1)))
        elif op == "brightness":
            mag = float(rng.uniform(-0.3, 0.3))
        elif op == "contrast":
            mag = float(rng.uniform(-0.4, 0.4))
        elif op == "grayscale":
            mag = float(rng.uniform(0.2, 0.7))
        else:  # cutout
            side = int(rng.integers(1, max(2, min(h, w) // 3)))
            mag = (int(rng.integers(0, h)), int(rng.integers(0, w)), side)
        ops.append((op, mag))
    n_keep = int(rng.integers(1, t + 1))
    selected = sorted(int(i) for i in rng.choice(t, size=n_keep, replace=False))
    return StrongAugParams(ops=ops, twaug_selected=selected)


def _apply_strong_op(frames: np.ndarray, op: str, mag: object) -> np.ndarray:
    if op == "flip":
        return _flip_frames(frames) if mag else frames
    if op == "translate":
        dx, dy = mag  # type: ignore[misc]
        return _translate_frames(frames, dx, dy)
    if op == "brightness":
        return frames + mag if mag else frames
    if op == "contrast":
        if not mag:
            return frames
        mean = frames.mean()
        return mean + (1.0 + mag) * (frames - mean)
    if op == "grayscale":
        if not mag:
            return frames
        luma = frames[..., :3] @ _LUMA if frames.shape[-1] >= 3 else frames.mean(-1)
        gray = np.repeat(luma[..., None], frames.shape[-1], axis=-1)
        return (1.0 - mag) * frames + mag * gray
    if op == "cutout":
        cy, cx, side = mag  # type: ignore[misc]
        if side == 0:
            return frames
        out = frames.copy()
        _, h, w, _ = frames.shape
        y0, y1 = max(cy - side // 2, 0), min(cy + (side + 1) // 2, h)
        x0, x1 = max(cx - side // 2, 0), min(cx + (side + 1) // 2, w)
        out[:, y0:y1, x0:x1, :] = 0.5
        return out
    raise ValueError(f"unknown strong op {op!r}")


def apply_strong(clip: VideoClip, params: StrongAugParams) -> VideoClip:
    frames = clip.frames.astype(np.float64)
    for op, mag in params.ops:
        frames = _apply_strong_op(frames, op, mag)
    frames = np.clip(frames, 0.0, 1.0)
    out = VideoClip(frames.astype(clip.frames.dtype))
    return twaug(out, params.twaug_selected)


def strong_augment(clip: VideoClip, rng: np.random.Generator) -> VideoClip:
    """Two randomly chosen strong ops with seeded magnitudes, then temporal
    warping; output clamped to [0, 1]."""
    t, h, w, _ = clip.frames.shape
    return apply_strong(clip, sample_strong_params(rng, t, h, w))


def transform_boxes_strong(boxes: np.ndarray, params: StrongAugParams, h: int, w: int) -> np.ndarray:
    """Co-transform source boxes under the geometric part of a strong draw.

    Photometric ops leave boxes unchanged; temporal warping reorders the rows
    the same way it reorders frames.
    """
    out = boxes
    for op, mag in params.ops:
        if op == "flip" and mag:
            out = _flip_boxes(out, w)
        elif op == "translate":
            dx, dy = mag  # type: ignore[misc]
            out = _shift_boxes(out, dx, dy, h, w)
    idx = _twaug_index(len(out), params.twaug_selected)
    return out[idx].copy()


# ---------------------------------------------------------------------------
# temporal warping


def _twaug_index(t: int, selected: list[int]) -> np.ndarray:
    if not selected:
        raise ValueError("twaug needs a non-empty frame selection")
    sel = np.asarray(sorted(selected))
    if sel[0] < 0 or sel[-1] >= t:
        raise ValueError(f"selected indices out of range [0, {t})")
    idx = np.empty(t, dtype=np.int64)
    for pos in range(t):
        at_or_before = sel[sel <= pos]
        idx[pos] = at_or_before[-1] if len(at_or_before) else sel[0]
    return idx


def twaug(clip: VideoClip, selected: list[int]) -> VideoClip:
    """Pad the clip with the chosen frames: position t shows the latest
    selected frame at or before t (the first selected frame before that)."""
    idx = _twaug_index(clip.frames.shape[0], selected)
    return VideoClip(clip.frames[idx].copy())


# ---------------------------------------------------------------------------
# tokenization


def patchify(clip: VideoClip, patch_size: int) -> TokenGrid:
    """Flatten non-overlapping P x P x C patches into tokens, row-major grid
    order, so token (t, n) is frame t's n-th patch."""
    t, h, w, c = clip.frames.shape
    if h % patch_size or w % patch_size:
        raise ValueError(f"frame size {h}x{w} not divisible by patch {patch_size}")
    gh, gw = h // patch_size, w // patch_size
    x = clip.frames.reshape(t, gh, patch_size, gw, patch_size, c)
    x = x.transpose(0, 1, 3, 2, 4, 5).reshape(t, gh * gw, patch_size * patch_size * c)
    return TokenGrid(tokens=np.ascontiguousarray(x), grid_shape=(gh, gw))


# ---------------------------------------------------------------------------
# audio features


def _hann(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * math.pi * np.arange(n) / n)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int, fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    """Triangular HTK-mel filterbank [n_mels, n_fft // 2 + 1], peak 1."""
    if fmax is None:
        fmax = sample_rate / 2.0
    mel_pts = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    bin_freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    fb = np.zeros((n_mels, len(bin_freqs)))
    for m in range(n_mels):
        lo, ctr, hi = hz_pts[m], hz_pts[m + 1], hz_pts[m + 2]
        rising = (bin_freqs - lo) / max(ctr - lo, 1e-12)
        falling = (hi - bin_freqs) / max(hi - ctr, 1e-12)
        fb[m] = np.clip(np.minimum(rising, falling), 0.0, None)
    return fb


def logmel(samples: np.ndarray, sample_rate: int, params: LogMelParams | None = None) -> LogMelSpec:
    """Magnitude STFT -> triangular mel filterbank -> natural log of
    max(power, floor). Frames are hop-strided full windows, no padding, so
    L = 1 + (S - n_fft) // hop."""
    p = params or LogMelParams()
    samples = np.asarray(samples, dtype=np.float64)
    s = len(samples)
    if s < p.n_fft:
        raise ValueError(f"waveform length {s} shorter than n_fft {p.n_fft}")
    n_frames = 1 + (s - p.n_fft) // p.hop
    idx = np.arange(p.n_fft)[None, :] + p.hop * np.arange(n_frames)[:, None]
    frames = samples[idx] * _hann(p.n_fft)[None, :]
    power = np.abs(np.fft.rfft(frames, axis=1)) ** 2  # [L, n_fft//2+1]
    fb = mel_filterbank(p.n_mels, p.n_fft, sample_rate, p.fmin, p.fmax)
    mel_power = power @ fb.T  # [L, M]
    values = np.log(np.maximum(mel_power.T, p.floor))
    return LogMelSpec(values=values, floor=p.floor)


def specaugment(
    spec: LogMelSpec, rng: np.random.Generator, params: SpecAugmentParams | None = None
) -> LogMelSpec:
    """Mask random time and frequency bands, filling with the spectrogram mean."""
    p = params or SpecAugmentParams()
    m, l = spec.values.shape
    max_t = p.max_time_width if p.max_time_width is not None else int(0.15 * l)
    max_f = p.max_freq_width if p.max_freq_width is not None else int(0.15 * m)
    if max_t >= l or max_f >= m:
        raise ValueError("mask widths must be smaller than the spectrogram axes")
    fill = float(spec.values.mean())
    out = spec.values.copy()
    for _ in range(p.n_time_masks):
        width = int(rng.integers(0, max_t + 1))
        start = int(rng.integers(0, l - width + 1))
        out[:, start : start + width] = fill
    for _ in range(p.n_freq_masks):
        width = int(rng.integers(0, max_f + 1))
        start = int(rng.integers(0, m - width + 1))
        out[start : start + width, :] = fill
    return LogMelSpec(values=out, floor=spec.floor)


# ---------------------------------------------------------------------------
# shared resize helper (saliency maps, evaluation crops)


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of a 2-D array with corner alignment; exact copy when
    the size is unchanged."""
    in_h, in_w = img.shape
    if (in_h, in_w) == (out_h, out_w):
        return img.copy()
    ys = np.linspace(0.0, in_h - 1.0, out_h) if out_h > 1 else np.array([(in_h - 1) / 2.0])
    xs = np.linspace(0.0, in_w - 1.0, out_w) if out_w > 1 else np.array([(in_w - 1) / 2.0])
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    a = img[np.ix_(y0, x0)]
    b = img[np.ix_(y0, x1)]
    c = img[np.ix_(y1, x0)]
    d = img[np.ix_(y1, x1)]
    return (1 - wy) * ((1 - wx) * a + wx * b) + wy * ((1 - wx) * c + wx * d)
