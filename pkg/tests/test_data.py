"""Synthetic task generators and the manifest-driven feature datasets.

The retrieval task's oracle: re-derive the noise from the seeded stream and
check that the sample differs from it in exactly one cell, by exactly the
signal scale, inside the first quarter, on the label's channel.
"""

import numpy as np
import pytest
from sklearn.linear_model import LogisticRegression

from s4video.data import (FeatureDataset, SPLIT_IDS, SyntheticDataset,
                          SyntheticTask, gen_long_majority, load_features,
                          sample_rng, write_manifest)
from s4video.stf import save_stf


def _task(**over):
    base = dict(kind="delayed-class", length=64, d_in=8, n_classes=4, seed=3)
    base.update(over)
    return SyntheticTask(**base)


# ---------------------------------------------------------------------------
# determinism and stream separation

def test_samples_are_bitwise_reproducible():
    ds = SyntheticDataset(_task(), "train", 10)
    for i in (0, 3, 9):
        x1, y1 = ds[i]
        x2, y2 = ds[i]
        assert y1 == y2
        assert np.array_equal(x1, x2)


def test_splits_are_disjoint_streams():
    task = _task()
    rows = {}
    for split in SPLIT_IDS:
        ds = SyntheticDataset(task, split, 4)
        rows[split] = ds.raw(0)[0]
    assert not np.array_equal(rows["train"], rows["val"])
    assert not np.array_equal(rows["train"], rows["test"])
    assert not np.array_equal(rows["val"], rows["test"])


def test_task_seed_changes_the_data():
    a = SyntheticDataset(_task(seed=1), "train", 1).raw(0)[0]
    b = SyntheticDataset(_task(seed=2), "train", 1).raw(0)[0]
    assert not np.array_equal(a, b)


def test_sample_rng_rejects_unknown_split():
    with pytest.raises(ValueError):
        sample_rng(0, "dev", 0)


# ---------------------------------------------------------------------------
# delayed-class generator

def test_retrieval_sample_is_noise_plus_one_spike():
    task = _task(signal_scale=6.0)
    ds = SyntheticDataset(task, "train", 40)
    for i in range(40):
        raw, label = ds.raw(i)
        assert label == i % 4
        rng = sample_rng(task.seed, "train", i)
        noise = rng.standard_normal((task.length, task.d_in))
        delta = raw - noise
        hits = np.argwhere(delta != 0)
        assert hits.shape == (1, 2), f"sample {i} has {len(hits)} modified cells"
        pos, chan = hits[0]
        assert chan == label
        assert pos < task.length // 4
        assert delta[pos, chan] == 6.0  # exactly, no float fuzz


def test_retrieval_labels_balanced_round_robin():
    ds = SyntheticDataset(_task(), "val", 39)
    labels = [ds.raw(i)[1] for i in range(39)]
    counts = np.bincount(labels, minlength=4)
    assert counts.max() - counts.min() <= 1


def test_retrieval_grid_shape():
    ds = SyntheticDataset(_task(), "train", 2)
    x, y = ds[0]
    assert x.shape == (64, 1, 1, 8)
    assert x.dtype == np.float64
    raw, _ = ds.raw(0)
    assert raw.shape == (64, 8)
    assert np.array_equal(x[:, 0, 0, :], raw)


def test_retrieval_tail_carries_no_label_signal():
    # a linear probe on last-quarter features must sit at chance: the spike
    # lives in the first quarter, everything after is pure noise
    task = _task(length=64, d_in=8, n_classes=4)
    tr = SyntheticDataset(task, "train", 600)
    te = SyntheticDataset(task, "val", 300)

    def tail_feats(ds):
        xs, ys = [], []
        for i in range(len(ds)):
            raw, y = ds.raw(i)
            xs.append(raw[-task.length // 4:].mean(axis=0))
            ys.append(y)
        return np.stack(xs), np.asarray(ys)

    xtr, ytr = tail_feats(tr)
    xte, yte = tail_feats(te)
    probe = LogisticRegression(max_iter=200).fit(xtr, ytr)
    acc = probe.score(xte, yte)
    assert acc <= 0.25 + 0.08, f"tail probe reached {acc:.3f}, should be chance"


# ---------------------------------------------------------------------------
# long-majority generator

def test_majority_label_matches_brute_recount():
    task = _task(kind="long-majority", length=32, d_in=4, window=20)
    ds = SyntheticDataset(task, "train", 64)
    for i in range(64):
        raw, label = ds.raw(i)
        positives = int((raw[:20, 0] > 0).sum())
        assert positives != 10, "tie should have been redrawn"
        assert label == int(positives > 10)


def test_majority_window_defaults_to_half():
    task = _task(kind="long-majority", length=32, d_in=2, window=None)
    raw, label = gen_long_majority(task, "train", 5)
    positives = int((raw[:16, 0] > 0).sum())
    assert positives != 8
    assert label == int(positives > 8)
    assert task.classes == 2


def test_majority_is_two_class_balanced_roughly():
    ds = SyntheticDataset(_task(kind="long-majority", length=32, d_in=2), "train", 400)
    labels = np.array([ds.raw(i)[1] for i in range(400)])
    frac = labels.mean()
    assert 0.4 < frac < 0.6


# ---------------------------------------------------------------------------
# task validation

def test_task_validation():
    with pytest.raises(ValueError):
        _task(kind="parity")
    with pytest.raises(ValueError):
        _task(n_classes=9, d_in=8)
    with pytest.raises(ValueError):
        _task(length=2)
    with pytest.raises(ValueError):
        _task(kind="long-majority", window=10, length=64)
    with pytest.raises(ValueError):
        SyntheticDataset(_task(), "dev", 4)


def test_dataset_bounds():
    ds = SyntheticDataset(_task(), "train", 3)
    assert len(ds) == 3
    with pytest.raises(IndexError):
        ds[3]
    with pytest.raises(IndexError):
        ds[-1]


# ---------------------------------------------------------------------------
# feature manifests

def _write_features(root, n=3, shape=(4, 1, 1, 2)):
    rng = np.random.default_rng(0)
    entries = []
    grids = []
    for i in range(n):
        grid = rng.standard_normal(shape).astype(np.float32)
        save_stf(root / f"clip{i}.stf", grid)
        entries.append((f"clip{i}.stf", i % 2))
        grids.append(grid)
    write_manifest(root / "index.tsv", shape, entries)
    return grids


def test_feature_roundtrip(tmp_path):
    grids = _write_features(tmp_path)
    ds = load_features(tmp_path / "index.tsv")
    assert isinstance(ds, FeatureDataset)
    assert len(ds) == 3
    assert ds.shape == (4, 1, 1, 2)
    for i, grid in enumerate(grids):
        x, y = ds[i]
        assert y == i % 2
        assert np.array_equal(x, grid)


def test_feature_paths_resolve_relative_to_manifest(tmp_path):
    sub = tmp_path / "nested"
    sub.mkdir()
    _write_features(sub, n=1)
    ds = load_features(sub / "index.tsv")
    x, _ = ds[0]  # loads even though cwd is elsewhere
    assert x.shape == (4, 1, 1, 2)


def test_empty_manifest_is_empty_dataset(tmp_path):
    p = tmp_path / "index.tsv"
    p.write_text("")
    assert len(FeatureDataset(p)) == 0


def test_manifest_comments_and_blanks_skipped(tmp_path):
    _write_features(tmp_path, n=1)
    p = tmp_path / "index.tsv"
    p.write_text("# header comment\n\n" + p.read_text() + "\n# trailer\n")
    assert len(FeatureDataset(p)) == 1


def test_manifest_rejects_duplicate_shape(tmp_path):
    p = tmp_path / "index.tsv"
    p.write_text("shape\t2,1,1,2\nshape\t2,1,1,2\n")
    with pytest.raises(ValueError, match="duplicate shape"):
        FeatureDataset(p)


def test_manifest_rejects_entry_before_shape(tmp_path):
    p = tmp_path / "index.tsv"
    p.write_text("clip0.stf\t0\nshape\t2,1,1,2\n")
    with pytest.raises(ValueError, match="shape line must"):
        FeatureDataset(p)


def test_manifest_rejects_malformed_line(tmp_path):
    p = tmp_path / "index.tsv"
    p.write_text("shape\t2,1,1,2\nclip0.stf 0\n")
    with pytest.raises(ValueError, match=":2"):
        FeatureDataset(p)


def test_feature_shape_mismatch_names_file(tmp_path):
    _write_features(tmp_path, n=2)
    save_stf(tmp_path / "clip1.stf", np.zeros((9, 1, 1, 2), dtype=np.float32))
    ds = load_features(tmp_path / "index.tsv")
    ds[0]  # intact entry still loads
    with pytest.raises(ValueError, match="clip1.stf"):
        ds[1]
