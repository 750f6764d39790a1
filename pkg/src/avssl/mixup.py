"""Mixing operators: token-level video mixing, spectrogram interpolation, and
pseudo-label interpolation, all driven by one Beta-distributed ratio.

The token mix is a hard selection (mask 1 keeps the first clip's token, mask 0
takes the second clip's), while audio and labels interpolate linearly with the
same ratio.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .features import LogMelSpec, TokenGrid
from .masks import BinaryTokenMask, keep_count


@dataclass
class MixRatio:
    """Mix ratio and the token keep count it implies for an N-token grid."""

    lam: float
    k_tok: int


@dataclass
class MixedPair:
    """One mixture and the bookkeeping tying its fields to a single ratio."""

    tokens: TokenGrid
    audio: LogMelSpec
    pseudo_label: np.ndarray
    mask: BinaryTokenMask
    ratio: MixRatio
    uid_a: str
    uid_b: str


def sample_lambda(
    rng: np.random.Generator, n_tokens: int, alpha1: float = 5.0, alpha2: float = 10.0
) -> MixRatio:
    """Draw the mix ratio from Beta(alpha1, alpha2); open interval enforced."""
    if alpha1 <= 0 or alpha2 <= 0:
        raise ValueError("beta parameters must be positive")
    lam = float(rng.beta(alpha1, alpha2))
    while not 0.0 < lam < 1.0:
        lam = float(rng.beta(alpha1, alpha2))
    return MixRatio(lam=lam, k_tok=keep_count(lam, n_tokens))


def mix_tokens(e_a: TokenGrid, e_b: TokenGrid, mask: BinaryTokenMask) -> TokenGrid:
    """Select tokens: mask 1 takes the token from ``e_a``, mask 0 from ``e_b``.
    Pure selection, so every output token equals one of the inputs exactly."""
    if e_a.tokens.shape != e_b.tokens.shape:
        raise ValueError(
            f"token grids must match, got {e_a.tokens.shape} vs {e_b.tokens.shape}"
        )
    if mask.mask.shape != e_a.tokens.shape[:2]:
        raise ValueError(
            f"mask shape {mask.mask.shape} does not match grid {e_a.tokens.shape[:2]}"
        )
    sel = mask.mask.astype(bool)[:, :, None]
    return TokenGrid(tokens=np.where(sel, e_a.tokens, e_b.tokens), grid_shape=e_a.grid_shape)


def mix_audio(a_a: LogMelSpec, a_b: LogMelSpec, lam: float) -> LogMelSpec:
    """Cellwise interpolation lam * A + (1 - lam) * B."""
    if a_a.values.shape != a_b.values.shape:
        raise ValueError(
            f"spectrogram shapes must match, got {a_a.values.shape} vs {a_b.values.shape}"
        )
    return LogMelSpec(values=lam * a_a.values + (1.0 - lam) * a_b.values, floor=a_a.floor)


def mix_pseudo_labels(y_a: np.ndarray, y_b: np.ndarray, lam: float) -> np.ndarray:
    """Interpolate probability rows; inputs must lie on the simplex."""
    y_a = np.asarray(y_a, dtype=np.float64)
    y_b = np.asarray(y_b, dtype=np.float64)
    if y_a.shape != y_b.shape:
        raise ValueError(f"label shapes must match, got {y_a.shape} vs {y_b.shape}")
    for name, y in (("first", y_a), ("second", y_b)):
        sums = y.sum(axis=-1)
        if not np.allclose(sums, 1.0, atol=1e-6) or (y < -1e-9).any():
            raise ValueError(f"{name} input is not a probability distribution")
    return lam * y_a + (1.0 - lam) * y_b


def make_mixed_pair(
    tokens_a: TokenGrid,
    tokens_b: TokenGrid,
    audio_a: LogMelSpec,
    audio_b: LogMelSpec,
    probs_a: np.ndarray,
    probs_b: np.ndarray,
    mask: BinaryTokenMask,
    ratio: MixRatio,
    uid_a: str = "",
    uid_b: str = "",
) -> MixedPair:
    """Assemble a mixture, asserting that the mask keep count and the ratio's
    token count agree (one lambda drives every field)."""
    if mask.keep_count != ratio.k_tok:
        raise ValueError(
            f"mask keeps {mask.keep_count} tokens but ratio implies {ratio.k_tok}"
        )
    return MixedPair(
        tokens=mix_tokens(tokens_a, tokens_b, mask),
        audio=mix_audio(audio_a, audio_b, ratio.lam),
        pseudo_label=mix_pseudo_labels(probs_a, probs_b, ratio.lam),
        mask=mask,
        ratio=ratio,
        uid_a=uid_a,
        uid_b=uid_b,
    )
