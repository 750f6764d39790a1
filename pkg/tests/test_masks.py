import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from avssl.masks import (
    BinaryTokenMask,
    LocFeatures,
    LocalizationMap,
    build_asl_mask,
    build_random_mask,
    build_tube_mask,
    compute_localization,
    keep_count,
    localization_map,
    minmax_floor,
    reduce_and_resize,
    sample_without_replacement,
    sample_without_replacement_batch,
    self_attention_map,
)


def inclusion_probs_exact(weights, k):
    """Exact inclusion probabilities of successive weighted draws without
    replacement, by enumerating every ordered draw sequence."""
    n = len(weights)
    weights = [Fraction(w).limit_denominator(10**9) for w in weights]
    probs = [Fraction(0)] * n

    def rec(remaining, chosen, p):
        if len(chosen) == k:
            for i in chosen:
                probs[i] += p
            return
        total = sum(weights[i] for i in remaining)
        for i in remaining:
            rec([j for j in remaining if j != i], chosen + [i], p * weights[i] / total)

    rec(list(range(n)), [], Fraction(1))
    return np.array([float(p) for p in probs])


def empirical_inclusion(weights, k, n_trials, seed=0):
    rng = np.random.default_rng(seed)
    draws = sample_without_replacement_batch(np.asarray(weights, float), k, n_trials, rng)
    counts = np.zeros(len(weights))
    for col in range(k):
        counts += np.bincount(draws[:, col], minlength=len(weights))
    return counts / n_trials


# ---------------------------------------------------------------------------
# attention maps


def test_self_attention_identity():
    eye = np.eye(2)
    assert np.array_equal(self_attention_map(eye), eye)


def test_self_attention_hand_product():
    f = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(self_attention_map(f), np.array([[5.0, 11.0], [11.0, 25.0]]))


def test_self_attention_symmetric_psd():
    rng = np.random.default_rng(0)
    for _ in range(10):
        f = rng.standard_normal((5, 3))
        m = self_attention_map(f)
        assert np.allclose(m, m.T)
        assert np.linalg.eigvalsh(m).min() >= -1e-10


def test_localization_map_identity_and_zero():
    eye = np.eye(2)
    assert np.array_equal(localization_map(eye, eye), eye)
    out = localization_map(np.ones((3, 2)), np.zeros((3, 2)))
    assert np.array_equal(out, np.zeros((3, 3)))


def test_localization_map_matches_index_loops():
    rng = np.random.default_rng(1)
    f_vid = rng.standard_normal((3, 2))
    f_aud = rng.standard_normal((3, 2))
    out = localization_map(f_vid, f_aud)
    n = 3
    expect = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            acc = 0.0
            for m in range(n):
                vid_im = sum(f_vid[i, d] * f_vid[m, d] for d in range(2))
                aud_jm = sum(f_aud[j, d] * f_aud[m, d] for d in range(2))
                acc += vid_im * aud_jm
            expect[i, j] = acc
    assert np.allclose(out, expect, rtol=1e-12, atol=1e-12)


def test_localization_map_shape_mismatch():
    with pytest.raises(ValueError):
        localization_map(np.ones((3, 2)), np.ones((4, 2)))


def test_reduce_and_resize_constant_and_identity():
    const = np.full((4, 4), 2.5)
    assert np.allclose(reduce_and_resize(const, (3, 5)), 2.5)
    m = np.random.default_rng(2).standard_normal((4, 4))
    out = reduce_and_resize(m, (2, 2))
    assert np.allclose(out, m.mean(axis=1))


def test_reduce_and_resize_bilinear_hand_case():
    # row-means form [[0,1],[1,0]] on a 2x2 location grid
    m = np.array([[0.0, 0.0], [1.0, 1.0]])[[0, 1]]
    map_ = np.stack([np.full(4, 0.0), np.full(4, 1.0), np.full(4, 1.0), np.full(4, 0.0)])
    out = reduce_and_resize(map_, (4, 4))
    ys = np.linspace(0, 1, 4)
    expect = (ys[:, None] + ys[None, :] - 2 * np.outer(ys, ys)).reshape(-1)
    assert np.allclose(out, expect)


def test_reduce_and_resize_nonsquare_rejected():
    with pytest.raises(ValueError):
        reduce_and_resize(np.ones((6, 6)), (2, 2))


def test_minmax_floor_cases():
    assert np.allclose(minmax_floor(np.array([2.0, 4.0, 6.0]), eps=0.0), [0.0, 0.5, 1.0])
    assert np.array_equal(minmax_floor(np.array([5.0, 5.0, 5.0])), np.ones(3))
    assert np.allclose(minmax_floor(np.array([0.0, 10.0]), eps=1e-3), [1e-3, 1.0])


# ---------------------------------------------------------------------------
# weighted sampling without replacement


def test_sampler_exhaustive_selection():
    rng = np.random.default_rng(3)
    for _ in range(20):
        out = sample_without_replacement(np.array([1.0, 2.0, 3.0]), 3, rng)
        assert sorted(out) == [0, 1, 2]


def test_sampler_validation():
    rng = np.random.default_rng(4)
    with pytest.raises(ValueError):
        sample_without_replacement(np.array([1.0, 2.0]), 3, rng)
    with pytest.raises(ValueError):
        sample_without_replacement(np.array([1.0, 0.0]), 1, rng)
    with pytest.raises(ValueError):
        sample_without_replacement(np.array([1.0, -2.0]), 1, rng)


def test_sampler_batch_matches_scalar_stream():
    """A one-trial batch consumes the generator exactly like the scalar API."""
    w = np.array([0.5, 1.5, 2.0, 1.0])
    a = sample_without_replacement(w, 3, np.random.default_rng(5))
    b = sample_without_replacement_batch(w, 3, 1, np.random.default_rng(5))[0]
    assert np.array_equal(a, b)


def test_sampler_uniform_single_draw():
    inc = empirical_inclusion([1.0, 1.0, 1.0], 1, 100_000, seed=6)
    assert np.abs(inc - 1 / 3).max() <= 0.02


def test_sampler_123_case_exact_values():
    exact = inclusion_probs_exact([1, 2, 3], 2)
    assert np.allclose(exact, [5 / 12, 11 / 15, 17 / 20])
    inc = empirical_inclusion([1.0, 2.0, 3.0], 2, 100_000, seed=7)
    assert np.abs(inc - exact).max() <= 0.01


@pytest.mark.parametrize("n,k,seed", [(4, 2, 8), (5, 3, 9), (6, 4, 10)])
def test_sampler_matches_enumeration(n, k, seed):
    rng = np.random.default_rng(seed)
    w = rng.uniform(0.2, 3.0, size=n)
    exact = inclusion_probs_exact(list(w), k)
    inc = empirical_inclusion(w, k, 50_000, seed=seed)
    assert np.abs(inc - exact).max() <= 0.015


def test_sampler_monotone_in_weight():
    """Raising one weight never decreases its exact inclusion probability."""
    base = [1.0, 0.7, 1.3, 0.4, 2.0]
    for idx in range(5):
        for k in (1, 2, 3):
            p0 = inclusion_probs_exact(base, k)[idx]
            raised = list(base)
            raised[idx] *= 1.5
            p1 = inclusion_probs_exact(raised, k)[idx]
            assert p1 >= p0 - 1e-12


def test_sampler_deterministic_per_seed():
    w = np.array([1.0, 2.0, 3.0, 4.0])
    a = sample_without_replacement(w, 2, np.random.default_rng(11))
    b = sample_without_replacement(w, 2, np.random.default_rng(11))
    assert np.array_equal(a, b)


# ---------------------------------------------------------------------------
# mask builders


def _loc_map(saliency):
    t, n = saliency.shape
    g = int(math.isqrt(n))
    return LocalizationMap(raw=np.zeros((t, n, n)), saliency=saliency)


def test_keep_count_floor_and_min():
    assert keep_count(0.3, 16) == 4
    assert keep_count(1.0, 16) == 16
    assert keep_count(0.01, 16) == 1
    with pytest.raises(ValueError):
        keep_count(0.0, 16)


@given(st.floats(0.02, 1.0), st.integers(0, 10_000))
@settings(max_examples=60, deadline=None)
def test_builders_row_sums(lam, seed):
    rng = np.random.default_rng(seed)
    t, n = 4, 16
    saliency = minmax_floor(rng.random(n))[None, :].repeat(t, axis=0)
    expect = max(1, math.floor(lam * n))
    for mask in (
        build_asl_mask(_loc_map(saliency), lam, 1, rng),
        build_tube_mask(n, t, lam, rng),
        build_random_mask(n, t, lam, rng),
    ):
        mask.validate()
        assert mask.keep_count == expect
        assert (mask.mask.sum(axis=1) == expect).all()


def test_lambda_one_keeps_everything():
    rng = np.random.default_rng(12)
    sal = np.abs(np.random.default_rng(0).standard_normal((4, 16))) + 0.1
    for mask in (
        build_asl_mask(_loc_map(sal), 1.0, 1, rng),
        build_tube_mask(16, 4, 1.0, rng),
        build_random_mask(16, 4, 1.0, rng),
    ):
        assert (mask.mask == 1).all()


def test_tube_mask_rows_identical():
    rng = np.random.default_rng(13)
    mask = build_tube_mask(16, 8, 0.25, rng)
    assert (mask.mask == mask.mask[0]).all()


def test_asl_group_sharing_and_tube_property():
    rng = np.random.default_rng(14)
    sal = np.abs(np.random.default_rng(1).standard_normal((8, 16))) + 0.1
    whole = build_asl_mask(_loc_map(sal), 0.25, 8, rng)
    assert (whole.mask == whole.mask[0]).all()
    pairs = build_asl_mask(_loc_map(sal), 0.25, 2, rng)
    for g in range(4):
        assert np.array_equal(pairs.mask[2 * g], pairs.mask[2 * g + 1])


def test_asl_invalid_group_rejected():
    rng = np.random.default_rng(15)
    sal = np.ones((8, 16))
    with pytest.raises(ValueError):
        build_asl_mask(_loc_map(sal), 0.5, 3, rng)


def test_random_mask_rows_differ():
    """Independent per-frame subsets: distinct-row pairs ~ 1 - 1/C(16,4)."""
    rng = np.random.default_rng(16)
    distinct = 0
    trials = 1000
    for _ in range(trials):
        mask = build_random_mask(16, 2, 0.25, rng)
        distinct += int(not np.array_equal(mask.mask[0], mask.mask[1]))
    assert distinct / trials >= 0.99


def test_asl_concentrates_on_salient_quadrant():
    """Weights 1 on a 4-token quadrant, floor eps elsewhere: nearly all kept
    tokens land in the quadrant (analytic mean fraction ~ 0.994)."""
    weights = np.full(16, 1e-3)
    quadrant = [0, 1, 4, 5]
    weights[quadrant] = 1.0
    exact = inclusion_probs_exact(list(weights), 4)
    analytic_fraction = exact[quadrant].sum() / 4.0
    assert analytic_fraction >= 0.95

    rng = np.random.default_rng(17)
    draws = sample_without_replacement_batch(weights, 4, 10_000, rng)
    inside = np.isin(draws, quadrant).mean()
    assert inside >= 0.95
    assert abs(inside - analytic_fraction) <= 0.01


def test_compute_localization_normalizes_per_frame():
    rng = np.random.default_rng(18)
    feats = LocFeatures(f_vid=rng.standard_normal((3, 16, 8)), f_aud=rng.standard_normal((16, 8)))
    loc = compute_localization(feats, (4, 4), eps=1e-3)
    assert loc.raw.shape == (3, 16, 16)
    assert loc.saliency.shape == (3, 16)
    assert (loc.saliency > 0).all()
    assert np.allclose(loc.saliency.max(axis=1), 1.0)


def test_loc_features_token_mismatch():
    with pytest.raises(ValueError):
        LocFeatures(f_vid=np.ones((2, 16, 8)), f_aud=np.ones((9, 8))).validate()
