import numpy as np
import pytest

from mgrs.data import dataset_bytes, load_dataset, make_dataset, make_sample, quantize, write_dataset
from mgrs.errors import ContractError, FormatError
from mgrs.masking import make_gt_mask


def test_samples_are_independent_of_generation_order():
    a = make_dataset(7, "train", 3, size=32)
    b = make_sample(7, "train", 2, size=32)
    assert np.array_equal(a[2].degraded, b.degraded) and a[2].name == "train_00002"


def test_rain_mask_is_threshold_of_stored_pair():
    t = make_sample(7, "train", 0, size=32)
    assert np.array_equal(t.mask, make_gt_mask(t.clean, t.degraded, 0.05))
    assert np.array_equal(quantize(t.clean), t.clean)


def test_blur_sample_mask_is_region():
    t = make_sample(1, "train", 0, size=32, kind="blur")
    ys, xs = np.nonzero(t.mask)
    assert t.mask[ys.min():ys.max() + 1, xs.min():xs.max() + 1].all()
    with pytest.raises(ContractError):
        make_sample(1, "train", 0, kind="snow")


def test_write_then_load_round_trip(tmp_path):
    out = write_dataset(tmp_path, 5, 3, 2, size=32)
    train = load_dataset(tmp_path / "train")
    assert [t.name for t in train] == [t.name for t in out["train"]]
    assert dataset_bytes(train) == dataset_bytes(out["train"])
    for t, u in zip(train, out["train"]):
        assert np.array_equal(t.mask, u.mask)


def test_loader_errors(tmp_path):
    with pytest.raises(FormatError):
        load_dataset(tmp_path)
    write_dataset(tmp_path, 5, 2, 0, size=32)
    (tmp_path / "train" / "train_00001_clean.ppm").write_bytes(b"P6\n2 2\n255\n\x00")
    with pytest.raises(FormatError):
        load_dataset(tmp_path / "train")
    loaded = load_dataset(tmp_path / "train", tolerant=True)
    assert isinstance(loaded[1], tuple) and loaded[1][0] == "train_00001"
    with pytest.raises(ContractError):
        load_dataset(tmp_path / "train", min_size=64)
