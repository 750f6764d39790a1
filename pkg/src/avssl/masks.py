"""Token masks for mixing: localization-guided, tube, and per-frame random.

The guided path turns localizer features into a per-frame saliency over the
patch grid (self-attention maps, their product, row-mean reduction, bilinear
resize, per-frame min-max normalization with a positive floor), then samples
tokens without replacement using the saliency as multinomial weights. All
builders keep exactly ``max(1, floor(lam * N))`` tokens per frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .features import bilinear_resize


@dataclass
class LocFeatures:
    """Localizer outputs: per-frame visual tokens [T, N_loc, d] and one set of
    audio tokens [N_loc, d] pooled to the same token count."""

    f_vid: np.ndarray
    f_aud: np.ndarray

    def validate(self) -> None:
        if self.f_vid.ndim != 3 or self.f_aud.ndim != 2:
            raise ValueError("f_vid must be [T, N, d], f_aud must be [N, d]")
        if self.f_vid.shape[1:] != self.f_aud.shape:
            raise ValueError(
                f"token mismatch: f_vid {self.f_vid.shape[1:]} vs f_aud {self.f_aud.shape}"
            )


@dataclass
class LocalizationMap:
    """Raw per-frame maps [T, N_loc, N_loc] and the reduced, resized,
    per-frame-normalized saliency [T, N] over the patch grid."""

    raw: np.ndarray
    saliency: np.ndarray


@dataclass
class BinaryTokenMask:
    """{0,1} token selection [T, N]; every frame row sums to ``keep_count``."""

    mask: np.ndarray
    keep_count: int

    def validate(self) -> None:
        if not np.isin(self.mask, (0, 1)).all():
            raise ValueError("mask entries must be 0 or 1")
        sums = self.mask.sum(axis=1)
        if not (sums == self.keep_count).all():
            raise ValueError(f"frame rows must sum to {self.keep_count}, got {sums}")


def keep_count(lam: float, n_tokens: int) -> int:
    """Tokens retained at ratio ``lam``: floor(lam * N), at least 1."""
    if not 0.0 < lam <= 1.0:
        raise ValueError(f"lam must be in (0, 1], got {lam}")
    return max(1, int(math.floor(lam * n_tokens)))


def self_attention_map(f: np.ndarray) -> np.ndarray:
    """Gram matrix f @ f.T of a token-feature matrix [n, d]."""
    f = np.asarray(f, dtype=np.float64)
    return f @ f.T


def localization_map(f_vid_t: np.ndarray, f_aud: np.ndarray) -> np.ndarray:
    """Product of the two self-attention maps for one frame."""
    f_vid_t = np.asarray(f_vid_t, dtype=np.float64)
    f_aud = np.asarray(f_aud, dtype=np.float64)
    if f_vid_t.shape != f_aud.shape:
        raise ValueError(
            f"feature shapes must match, got {f_vid_t.shape} vs {f_aud.shape}"
        )
    return self_attention_map(f_vid_t) @ self_attention_map(f_aud).T


def reduce_and_resize(map_t: np.ndarray, target_grid: tuple[int, int]) -> np.ndarray:
    """Row-mean a [N_loc, N_loc] map to one scalar per location, then
    bilinearly resize the square location grid to the target patch grid and
    flatten row-major."""
    n_loc = map_t.shape[0]
    g = math.isqrt(n_loc)
    if g * g != n_loc:
        raise ValueError(f"location count {n_loc} is not a square grid")
    per_loc = map_t.mean(axis=1).reshape(g, g)
    gh, gw = target_grid
    return bilinear_resize(per_loc, gh, gw).reshape(-1)


def minmax_floor(weights: np.ndarray, eps: float = 1e-3) -> np.ndarray:
    """Min-max normalize to [0, 1] and floor at ``eps`` so every entry stays
    sampleable; constant input maps to all ones."""
    w = np.asarray(weights, dtype=np.float64)
    lo, hi = w.min(), w.max()
    if hi == lo:
        return np.ones_like(w)
    return np.maximum((w - lo) / (hi - lo), eps)


def compute_localization(
    feats: LocFeatures, target_grid: tuple[int, int], eps: float = 1e-3
) -> LocalizationMap:
    """Full map pipeline for a clip: per-frame attention product, reduction to
    the patch grid, and per-frame normalization."""
    feats.validate()
    t = feats.f_vid.shape[0]
    n = target_grid[0] * target_grid[1]
    raw = np.empty((t, feats.f_aud.shape[0], feats.f_aud.shape[0]))
    saliency = np.empty((t, n))
    for i in range(t):
        raw[i] = localization_map(feats.f_vid[i], feats.f_aud)
        saliency[i] = minmax_floor(reduce_and_resize(raw[i], target_grid), eps)
    return LocalizationMap(raw=raw, saliency=saliency)


# ---------------------------------------------------------------------------
# weighted sampling without replacement


def _validate_weights(weights: np.ndarray, k: int) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1:
        raise ValueError("weights must be one-dimensional")
    if not (w > 0).all():
        raise ValueError("all sampling weights must be positive")
    if not 1 <= k <= len(w):
        raise ValueError(f"k must be in [1, {len(w)}], got {k}")
    return w


def _sequential_draws(w: np.ndarray, k: int, n_trials: int, rng: np.random.Generator) -> np.ndarray:
    """Run ``n_trials`` independent successive-draw chains over one weight
    vector. Each step removes the drawn index by zeroing its weight."""
    n = len(w)
    live = np.tile(w, (n_trials, 1))
    out = np.empty((n_trials, k), dtype=np.int64)
    rows = np.arange(n_trials)
    for step in range(k):
        cum = np.cumsum(live, axis=1)
        u = rng.random(n_trials) * cum[:, -1]
        idx = np.minimum((u[:, None] >= cum).sum(axis=1), n - 1)
        out[:, step] = idx
        live[rows, idx] = 0.0
    return out


def sample_without_replacement(
    weights: np.ndarray, k: int, rng: np.random.Generator
) -> np.ndarray:
    """Draw k distinct indices by successive weighted draws: each draw picks
    index i with probability w_i over the remaining total, then removes it.
    Returns the indices in draw order."""
    w = _validate_weights(weights, k)
    return _sequential_draws(w, k, 1, rng)[0]


def sample_without_replacement_batch(
    weights: np.ndarray, k: int, n_trials: int, rng: np.random.Generator
) -> np.ndarray:
    """Vectorized repetition of :func:`sample_without_replacement` for Monte
    Carlo use; a single trial consumes the generator identically to the
    scalar version."""
    w = _validate_weights(weights, k)
    return _sequential_draws(w, k, n_trials, rng)


# ---------------------------------------------------------------------------
# mask builders


def build_asl_mask(
    loc: LocalizationMap, lam: float, frames_per_map: int, rng: np.random.Generator
) -> BinaryTokenMask:
    """Saliency-guided mask: average saliency over consecutive groups of
    ``frames_per_map`` frames, sample one token set per group, share it across
    the group's frames."""
    t, n = loc.saliency.shape
    if frames_per_map < 1 or t % frames_per_map:
        raise ValueError(f"frames_per_map {frames_per_map} must divide T={t}")
    kc = keep_count(lam, n)
    mask = np.zeros((t, n), dtype=np.uint8)
    for g in range(t // frames_per_map):
        rows = slice(g * frames_per_map, (g + 1) * frames_per_map)
        group_weights = loc.saliency[rows].mean(axis=0)
        chosen = sample_without_replacement(group_weights, kc, rng)
        mask[rows, chosen[None, :]] = 1
    return BinaryTokenMask(mask=mask, keep_count=kc)


def build_tube_mask(n: int, t: int, lam: float, rng: np.random.Generator) -> BinaryTokenMask:
    """One uniform token subset copied to every frame."""
    kc = keep_count(lam, n)
    chosen = rng.choice(n, size=kc, replace=False)
    mask = np.zeros((t, n), dtype=np.uint8)
    mask[:, chosen] = 1
    return BinaryTokenMask(mask=mask, keep_count=kc)


def build_random_mask(n: int, t: int, lam: float, rng: np.random.Generator) -> BinaryTokenMask:
    """Independent uniform token subset per frame."""
    kc = keep_count(lam, n)
    mask = np.zeros((t, n), dtype=np.uint8)
    for row in range(t):
        mask[row, rng.choice(n, size=kc, replace=False)] = 1
    return BinaryTokenMask(mask=mask, keep_count=kc)
