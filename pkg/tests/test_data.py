import csv

import numpy as np
import pytest
import torch
from PIL import Image

from seatrans.data import (
    ArrayDataset,
    ChannelStats,
    SyntheticConfig,
    generate_synthetic,
    load_dataset,
    mask_vcdr,
    materialize,
    split_counts,
    synthetic_splits,
    vcdr_label,
    write_dataset,
    split_names,
)
from seatrans.errors import (
    ConfigError,
    EmptyDatasetError,
    ImageDecodeError,
    LabelError,
    MaskSizeMismatchError,
    MissingFileError,
)


def write_manifest(tmp_path, rows, size=(8, 8), mask_size=None):
    for i in range(len(rows)):
        Image.fromarray(np.full((*size, 3), 40 * i, np.uint8)).save(tmp_path / f"img{i}.png")
        Image.fromarray(np.zeros((*(mask_size or size), 3), np.uint8)).save(tmp_path / f"mask{i}.png")
    path = tmp_path / "manifest.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["image", "mask", "label", "split"])
        w.writerows(rows)
    return path


class TestSynthetic:
    def test_label_rule(self):
        assert vcdr_label(0.9) == 1
        assert vcdr_label(0.5) == 0

    def test_label_recomputable_from_mask(self):
        ds = generate_synthetic(SyntheticConfig(n_samples=64, seed=3))
        for mask, label in zip(ds.masks, ds.labels):
            assert label == vcdr_label(mask_vcdr(mask[..., 0], mask[..., 1]))

    def test_deterministic_per_seed(self):
        a = generate_synthetic(SyntheticConfig(n_samples=16, seed=7))
        b = generate_synthetic(SyntheticConfig(n_samples=16, seed=7))
        c = generate_synthetic(SyntheticConfig(n_samples=16, seed=8))
        assert a.images.tobytes() == b.images.tobytes()
        assert a.masks.tobytes() == b.masks.tobytes()
        assert not np.array_equal(a.images, c.images)

    def test_class_balance_and_types(self):
        ds = generate_synthetic(SyntheticConfig(n_samples=128, seed=0))
        assert 0.3 <= ds.labels.mean() <= 0.7
        assert ds.images.dtype == np.uint8 and ds.images.shape == (128, 32, 32, 3)
        assert set(np.unique(ds.masks)) <= {0, 1}
        # cup lies inside the disc
        assert not np.any(ds.masks[..., 1] & ~ds.masks[..., 0])

    def test_presets_differ(self):
        a = generate_synthetic(SyntheticConfig(n_samples=8, preset="synthetic-a"))
        b = generate_synthetic(SyntheticConfig(n_samples=8, preset="synthetic-b"))
        assert abs(a.images.mean() - b.images.mean()) > 5

    @pytest.mark.parametrize(
        "kw", [{"threshold": 0.99}, {"preset": "nope"}, {"cup_ratio": (0.5, 1.2)}, {"n_samples": 0}]
    )
    def test_invalid_config(self, kw):
        with pytest.raises(ConfigError):
            generate_synthetic(SyntheticConfig(**kw))

    def test_splits_are_slices(self):
        splits = synthetic_splits("synthetic-a", 10, 4, 6, seed=1)
        assert [len(splits[s]) for s in ("train", "val", "test")] == [10, 4, 6]

    def test_write_and_reload(self, tmp_path):
        ds = generate_synthetic(SyntheticConfig(n_samples=6, seed=2))
        manifest = write_dataset(ds, tmp_path, split_names(4, 0, 2))
        samples = load_dataset(manifest)
        assert split_counts(samples) == {"train": 4, "val": 0, "test": 2}
        arrays = materialize(samples, image_size=32)
        assert torch.equal(arrays.masks, ds.to_arrays().masks)
        assert torch.equal(arrays.labels, ds.to_arrays().labels)
        torch.testing.assert_close(arrays.images, ds.to_arrays().images)


class TestManifest:
    def test_three_rows(self, tmp_path):
        rows = [[f"img{i}.png", f"mask{i}.png", i % 2, "train"] for i in range(3)]
        samples = load_dataset(write_manifest(tmp_path, rows))
        assert len(samples) == 3
        assert [s.label for s in samples] == [0, 1, 0]

    def test_bad_label_names_row(self, tmp_path):
        rows = [["img0.png", "mask0.png", 0, "train"], ["img1.png", "mask1.png", 2, "train"]]
        with pytest.raises(LabelError, match="row 3"):
            load_dataset(write_manifest(tmp_path, rows))

    def test_bad_split(self, tmp_path):
        with pytest.raises(LabelError, match="split"):
            load_dataset(write_manifest(tmp_path, [["img0.png", "", 0, "holdout"]]))

    def test_missing_file(self, tmp_path):
        path = write_manifest(tmp_path, [["img0.png", "", 0, "train"]])
        (tmp_path / "img0.png").unlink()
        with pytest.raises(MissingFileError, match="row 2"):
            load_dataset(path)

    def test_undecodable_image(self, tmp_path):
        path = write_manifest(tmp_path, [["img0.png", "", 0, "train"]])
        (tmp_path / "img0.png").write_bytes(b"not a png")
        with pytest.raises(ImageDecodeError):
            load_dataset(path)

    def test_mask_size_mismatch(self, tmp_path):
        path = write_manifest(tmp_path, [["img0.png", "mask0.png", 0, "train"]], mask_size=(4, 4))
        with pytest.raises(MaskSizeMismatchError):
            load_dataset(path)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(MissingFileError):
            load_dataset(tmp_path / "none.csv")

    def test_materialize_empty(self):
        with pytest.raises(EmptyDatasetError):
            materialize([])


class TestArrays:
    def test_standardize(self):
        images = torch.rand(10, 3, 4, 4) * 5 + 2
        ds = ArrayDataset(images, torch.zeros(10)).standardized(ChannelStats.from_images(images))
        torch.testing.assert_close(ds.images.mean(dim=(0, 2, 3)), torch.zeros(3), atol=1e-5, rtol=0)
        torch.testing.assert_close(ds.images.std(dim=(0, 2, 3)), torch.ones(3), atol=1e-4, rtol=0)

    def test_mask_mismatch(self):
        with pytest.raises(MaskSizeMismatchError):
            ArrayDataset(torch.zeros(2, 3, 4, 4), torch.zeros(2), torch.zeros(2, 2, 3, 3))
