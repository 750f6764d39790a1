import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from avssl.features import (
    LogMelParams,
    LogMelSpec,
    SpecAugmentParams,
    StrongAugParams,
    WeakAugParams,
    apply_strong,
    apply_weak,
    bilinear_resize,
    logmel,
    mel_filterbank,
    mel_to_hz,
    hz_to_mel,
    patchify,
    sample_strong_params,
    specaugment,
    strong_augment,
    transform_boxes_strong,
    transform_boxes_weak,
    twaug,
    weak_augment,
    STRONG_OPS,
)
from avssl.synthdata import VideoClip


def random_clip(rng, t=4, h=16, w=16, c=3):
    return VideoClip(rng.random((t, h, w, c)).astype(np.float32))


# ---------------------------------------------------------------------------
# weak augmentation


def test_weak_noop_params_identity():
    clip = random_clip(np.random.default_rng(0))
    out = apply_weak(clip, WeakAugParams(flip=False, dx=0, dy=0))
    assert np.array_equal(out.frames, clip.frames)


def test_weak_flip_is_involution():
    clip = random_clip(np.random.default_rng(1))
    p = WeakAugParams(flip=True, dx=0, dy=0)
    assert np.array_equal(apply_weak(apply_weak(clip, p), p).frames, clip.frames)


def test_weak_preserves_shape_and_range():
    rng = np.random.default_rng(2)
    for seed in range(20):
        clip = random_clip(np.random.default_rng(seed))
        out = weak_augment(clip, rng)
        assert out.frames.shape == clip.frames.shape
        assert out.frames.min() >= 0.0 and out.frames.max() <= 1.0


def test_weak_translation_co_transforms_boxes():
    rng = np.random.default_rng(3)
    t, h, w = 4, 16, 16
    clip = random_clip(rng, t, h, w)
    boxes = np.array([[2, 3, 8, 9]] * t, dtype=np.int32)
    p = WeakAugParams(flip=False, dx=2, dy=0)
    out = apply_weak(clip, p)
    moved = transform_boxes_weak(boxes, p, h, w)
    # direct box arithmetic
    assert np.array_equal(moved, boxes + np.array([2, 0, 2, 0]))
    # the pixels inside the moved box match the original box contents
    assert np.array_equal(
        out.frames[:, 3:9, 4:10, :], clip.frames[:, 3:9, 2:8, :]
    )


def test_weak_flip_boxes():
    boxes = np.array([[2, 3, 8, 9]], dtype=np.int32)
    p = WeakAugParams(flip=True, dx=0, dy=0)
    moved = transform_boxes_weak(boxes, p, 16, 16)
    assert np.array_equal(moved, np.array([[8, 3, 14, 9]]))


# ---------------------------------------------------------------------------
# strong augmentation


def test_strong_identity_params():
    clip = random_clip(np.random.default_rng(4))
    params = StrongAugParams(
        ops=[("brightness", 0.0), ("contrast", 0.0)],
        twaug_selected=list(range(clip.frames.shape[0])),
    )
    out = apply_strong(clip, params)
    assert np.array_equal(out.frames, clip.frames)


def test_strong_brightness_clamps():
    clip = VideoClip(np.full((2, 8, 8, 3), 0.8, dtype=np.float32))
    params = StrongAugParams(ops=[("brightness", 0.5)], twaug_selected=[0, 1])
    out = apply_strong(clip, params)
    assert np.array_equal(out.frames, np.ones_like(clip.frames))


def test_strong_preserves_shape_and_range():
    rng = np.random.default_rng(5)
    for seed in range(30):
        clip = random_clip(np.random.default_rng(100 + seed))
        out = strong_augment(clip, rng)
        assert out.frames.shape == clip.frames.shape
        assert out.frames.min() >= 0.0 and out.frames.max() <= 1.0


def test_strong_op_frequencies():
    """Two of six ops drawn without replacement: inclusion rate 1/3 each."""
    rng = np.random.default_rng(6)
    counts = {op: 0 for op in STRONG_OPS}
    n = 1000
    for _ in range(n):
        params = sample_strong_params(rng, t=4, h=16, w=16)
        for op, _ in params.ops:
            counts[op] += 1
    for op, c in counts.items():
        assert abs(c / n - 2 / 6) <= 0.05, (op, c / n)


def test_strong_box_transform_tracks_flip_and_twaug():
    boxes = np.array([[2, 3, 8, 9], [4, 5, 10, 11], [0, 0, 6, 6], [1, 1, 7, 7]], dtype=np.int32)
    params = StrongAugParams(ops=[("flip", 1), ("brightness", 0.1)], twaug_selected=[1, 3])
    out = transform_boxes_strong(boxes, params, 16, 16)
    flipped = boxes.copy()
    flipped[:, 0] = 16 - boxes[:, 2]
    flipped[:, 2] = 16 - boxes[:, 0]
    expect = flipped[[1, 1, 1, 3]]
    assert np.array_equal(out, expect)


# ---------------------------------------------------------------------------
# temporal warping


def test_twaug_padding_rule():
    clip = random_clip(np.random.default_rng(7), t=4)
    out = twaug(clip, [0, 2])
    f = clip.frames
    assert np.array_equal(out.frames, f[[0, 0, 2, 2]])


def test_twaug_all_selected_identity():
    clip = random_clip(np.random.default_rng(8), t=4)
    assert np.array_equal(twaug(clip, [0, 1, 2, 3]).frames, clip.frames)


def test_twaug_single_late_frame():
    clip = random_clip(np.random.default_rng(9), t=4)
    assert np.array_equal(twaug(clip, [3]).frames, clip.frames[[3, 3, 3, 3]])


def test_twaug_empty_selection_rejected():
    clip = random_clip(np.random.default_rng(10), t=4)
    with pytest.raises(ValueError):
        twaug(clip, [])


@given(st.integers(1, 8), st.data())
@settings(max_examples=40, deadline=None)
def test_twaug_uses_only_selected_frames(t, data):
    sel = sorted(data.draw(st.sets(st.integers(0, t - 1), min_size=1)))
    clip = random_clip(np.random.default_rng(11), t=t, h=4, w=4, c=1)
    out = twaug(clip, sel)
    for pos in range(t):
        assert any(np.array_equal(out.frames[pos], clip.frames[s]) for s in sel)


# ---------------------------------------------------------------------------
# tokenization


def unpatchify(tokens, grid_shape, patch, c):
    """Inverse of patchify, test-side implementation."""
    gh, gw = grid_shape
    t = tokens.shape[0]
    x = tokens.reshape(t, gh, gw, patch, patch, c)
    return x.transpose(0, 1, 3, 2, 4, 5).reshape(t, gh * patch, gw * patch, c)


def test_patchify_counts():
    clip = random_clip(np.random.default_rng(12), t=2, h=32, w=32)
    grid = patchify(clip, 8)
    assert grid.tokens.shape == (2, 16, 192)
    assert grid.grid_shape == (4, 4)


def test_patchify_constant_clip():
    clip = VideoClip(np.full((2, 16, 16, 3), 0.5, dtype=np.float32))
    grid = patchify(clip, 8)
    assert (grid.tokens == 0.5).all()


def test_patchify_bijective():
    clip = random_clip(np.random.default_rng(13), t=3, h=24, w=16)
    grid = patchify(clip, 8)
    back = unpatchify(grid.tokens, grid.grid_shape, 8, 3)
    assert np.array_equal(back, clip.frames)


def test_patchify_rejects_indivisible():
    clip = random_clip(np.random.default_rng(14), t=2, h=15, w=16)
    with pytest.raises(ValueError):
        patchify(clip, 8)


# ---------------------------------------------------------------------------
# log mel


def test_logmel_silence_hits_floor():
    spec = logmel(np.zeros(4000, dtype=np.float32), 8000, LogMelParams(floor=1e-10))
    assert np.allclose(spec.values, math.log(1e-10))


def test_logmel_frame_count():
    spec = logmel(np.random.default_rng(0).standard_normal(8000) * 0.1, 8000,
                  LogMelParams(n_fft=256, hop=128))
    assert spec.values.shape == (64, 61)


def test_logmel_too_short_rejected():
    with pytest.raises(ValueError):
        logmel(np.zeros(100), 8000, LogMelParams(n_fft=256))


def naive_dft_power(frame):
    """O(n^2) direct DFT of one windowed frame (independent oracle)."""
    n = len(frame)
    k = np.arange(n // 2 + 1)
    angles = -2j * math.pi * np.outer(k, np.arange(n)) / n
    return np.abs(np.exp(angles) @ frame) ** 2


def test_logmel_sine_peaks_at_center_bin():
    """A tone at a mel filter's center frequency wins that mel bin, checked
    against a naive-DFT + filterbank oracle."""
    sr, p = 8000, LogMelParams(n_fft=256, hop=128, n_mels=64)
    fb = mel_filterbank(p.n_mels, p.n_fft, sr)
    mel_pts = np.linspace(hz_to_mel(0.0), hz_to_mel(sr / 2), p.n_mels + 2)
    for target_bin in (10, 30, 50):
        freq = float(mel_to_hz(mel_pts[target_bin + 1]))
        t = np.arange(sr) / sr
        wave = 0.8 * np.sin(2 * math.pi * freq * t)
        spec = logmel(wave, sr, p)
        # oracle on the first frame
        window = 0.5 - 0.5 * np.cos(2 * math.pi * np.arange(p.n_fft) / p.n_fft)
        oracle_mel = fb @ naive_dft_power(wave[: p.n_fft] * window)
        assert oracle_mel.argmax() == target_bin
        assert (spec.values.argmax(axis=0) == target_bin).all()


def test_logmel_monotone_in_power():
    rng = np.random.default_rng(15)
    wave = rng.standard_normal(2000) * 0.2
    a = logmel(wave, 8000, LogMelParams(n_fft=256, hop=128)).values
    b = logmel(3.0 * wave, 8000, LogMelParams(n_fft=256, hop=128)).values
    assert (b >= a - 1e-12).all()


# ---------------------------------------------------------------------------
# spec augment


def test_specaugment_zero_widths_identity():
    rng = np.random.default_rng(16)
    spec = LogMelSpec(values=rng.standard_normal((32, 40)))
    out = specaugment(spec, rng, SpecAugmentParams(max_time_width=0, max_freq_width=0))
    assert np.array_equal(out.values, spec.values)


def test_specaugment_full_time_mask_means():
    class ForcedRng:
        """integers() returns the maximum, so the time mask spans everything."""

        def integers(self, lo, hi):
            return hi - 1

    rng = np.random.default_rng(17)
    spec = LogMelSpec(values=rng.standard_normal((8, 10)))
    out = specaugment(
        spec, ForcedRng(), SpecAugmentParams(n_time_masks=1, n_freq_masks=0, max_time_width=9)
    )
    # width 9 starting at column 1; remaining column untouched
    assert np.allclose(out.values[:, 1:], spec.values.mean())
    assert np.array_equal(out.values[:, 0], spec.values[:, 0])


def test_specaugment_differing_cells_match_geometry():
    rng = np.random.default_rng(18)
    spec = LogMelSpec(values=rng.standard_normal((16, 20)))

    class ScriptedRng:
        """Plays back a fixed series of draws: one 4-wide time mask at column
        2, one 3-wide freq mask at row 5."""

        def __init__(self):
            self.script = iter([4, 2, 3, 5])

        def integers(self, lo, hi):
            return next(self.script)

    out = specaugment(
        spec,
        ScriptedRng(),
        SpecAugmentParams(n_time_masks=1, n_freq_masks=1, max_time_width=5, max_freq_width=5),
    )
    m, l = spec.values.shape
    expect = 4 * m + 3 * l - 4 * 3  # time cells + freq cells - overlap
    assert (out.values != spec.values).sum() == expect


# ---------------------------------------------------------------------------
# bilinear resize


def test_bilinear_identity_and_constant():
    img = np.random.default_rng(19).standard_normal((5, 7))
    assert np.array_equal(bilinear_resize(img, 5, 7), img)
    const = np.full((2, 2), 3.25)
    assert np.allclose(bilinear_resize(const, 6, 4), 3.25)


def test_bilinear_2x2_to_4x4_closed_form():
    img = np.array([[0.0, 1.0], [1.0, 0.0]])
    out = bilinear_resize(img, 4, 4)
    ys = np.linspace(0, 1, 4)
    expect = ys[:, None] + ys[None, :] - 2 * np.outer(ys, ys)
    assert np.allclose(out, expect, atol=1e-12)
