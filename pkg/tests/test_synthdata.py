import numpy as np
import pytest

from avssl.synthdata import (
    DataConfigError,
    GenConfig,
    generate_dataset,
    make_batches,
    read_bundle,
    steps_per_epoch,
    write_bundle,
)


@pytest.fixture(scope="module")
def small_cfg():
    return GenConfig(
        num_classes=4,
        per_class_labeled=1,
        per_class_unlabeled=10,
        per_class_test=2,
        seed=7,
    )


@pytest.fixture(scope="module")
def bundle(small_cfg):
    return generate_dataset(small_cfg)


def test_labeled_split_exact_counts(bundle):
    assert len(bundle.labeled) == 4
    assert sorted(s.label for s in bundle.labeled) == [0, 1, 2, 3]


def test_label_balance_all_splits(bundle):
    for split in (bundle.labeled, bundle.test):
        counts = np.bincount([s.label for s in split], minlength=4)
        assert (counts == counts[0]).all()
    # unlabeled split hides labels but keeps the diagnostics field
    assert all(s.label is None for s in bundle.unlabeled)
    diag = np.bincount([s.diag_label for s in bundle.unlabeled], minlength=4)
    assert (diag == diag[0]).all()


def test_same_seed_same_bundle(small_cfg):
    a = generate_dataset(small_cfg)
    b = generate_dataset(small_cfg)
    assert a == b


def test_different_seed_differs(small_cfg, bundle):
    import dataclasses

    other = generate_dataset(dataclasses.replace(small_cfg, seed=8))
    assert other != bundle


def test_sprite_boxes_area_and_bounds():
    cfg = GenConfig(per_class_unlabeled=10, sprite_size=8, seed=3)
    b = generate_dataset(cfg)
    for s in b.labeled + b.unlabeled + b.test:
        boxes = s.source.frame_boxes
        areas = (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])
        assert (areas == 64).all()
        assert (boxes[:, 0] >= 0).all() and (boxes[:, 2] <= 32).all()
        assert (boxes[:, 1] >= 0).all() and (boxes[:, 3] <= 32).all()


def test_clip_values_valid(bundle):
    for s in bundle.labeled + bundle.test[:4]:
        s.clip.validate(patch_size=8)
        assert np.abs(s.waveform.samples).max() <= 1.0


def test_source_region_carries_signal(bundle):
    """Pixel variance inside the sprite box dominates the background."""
    ratios = []
    for s in bundle.unlabeled:
        frames = s.clip.frames
        inside_vals, outside_vals = [], []
        for t, (x0, y0, x1, y1) in enumerate(s.source.frame_boxes):
            m = np.zeros(frames.shape[1:3], dtype=bool)
            m[y0:y1, x0:x1] = True
            inside_vals.append(frames[t][m])
            outside_vals.append(frames[t][~m])
        ratios.append(np.concatenate(inside_vals).var() / np.concatenate(outside_vals).var())
    assert np.mean(ratios) >= 2.0


def test_geometry_validation():
    with pytest.raises(DataConfigError):
        generate_dataset(GenConfig(height=30, per_class_unlabeled=10))
    with pytest.raises(DataConfigError):
        generate_dataset(GenConfig(num_classes=1, per_class_unlabeled=10))
    with pytest.raises(DataConfigError):
        generate_dataset(GenConfig(per_class_unlabeled=5))  # ratio < 10


# ---------------------------------------------------------------------------
# I/O


def test_bundle_roundtrip(tmp_path, bundle):
    write_bundle(bundle, tmp_path / "b")
    back = read_bundle(tmp_path / "b")
    assert back == bundle


def test_write_twice_byte_identical(tmp_path, small_cfg):
    import dataclasses

    cfg = dataclasses.replace(small_cfg, seed=7)
    write_bundle(generate_dataset(cfg), tmp_path / "b1")
    write_bundle(generate_dataset(cfg), tmp_path / "b2")
    for name in ("manifest.json", "arrays.bin"):
        assert (tmp_path / "b1" / name).read_bytes() == (tmp_path / "b2" / name).read_bytes()


# ---------------------------------------------------------------------------
# batching


def test_batch_sizes(bundle):
    stream = make_batches(bundle, 2, 5, seed=0)
    for _ in range(20):
        lab, unl = next(stream)
        assert (len(lab), len(unl)) == (2, 10)


def test_batch_sizes_minimal(bundle):
    lab, unl = next(make_batches(bundle, 1, 1, seed=0))
    assert (len(lab), len(unl)) == (1, 1)


def test_epoch_covers_unlabeled_once(bundle):
    # 40 unlabeled, batch 10 -> a 4-step epoch covers each uid exactly once
    stream = make_batches(bundle, 2, 5, seed=1)
    spe = steps_per_epoch(bundle, 2, 5)
    seen = []
    for _ in range(spe):
        _, unl = next(stream)
        seen.extend(s.uid for s in unl)
    assert len(seen) == len(bundle.unlabeled)
    assert sorted(seen) == sorted(s.uid for s in bundle.unlabeled)


def test_batch_stream_deterministic(bundle):
    a = make_batches(bundle, 2, 5, seed=3)
    b = make_batches(bundle, 2, 5, seed=3)
    for _ in range(12):
        la, ua = next(a)
        lb, ub = next(b)
        assert [s.uid for s in la] == [s.uid for s in lb]
        assert [s.uid for s in ua] == [s.uid for s in ub]


def test_oversized_batch_rejected(bundle):
    with pytest.raises(DataConfigError):
        next(make_batches(bundle, 10, 5, seed=0))
