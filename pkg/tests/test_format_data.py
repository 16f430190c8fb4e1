# imports
import os

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from skeattn_utils.errors import ConfigError, FormatError, ShapeMismatchError
from skeattn_utils.format_data import (
    SKD_HEADER,
    Dataset,
    batch_indices,
    derive_stream_dataset,
    instantiate_dir,
    load_dataset,
    save_dataset,
    split_dataset,
)
from skeattn_utils.skeleton import ntu_topology
from skeattn_utils.synthetic import synth_generate


@pytest.fixture
def dataset(small_cfg, topology):
    return synth_generate(small_cfg.synth, seed=3, topology=topology)


def test_save_then_load(tmp_path, dataset):
    path = tmp_path / "train.skd"
    save_dataset(dataset, path)
    loaded = load_dataset(path)
    assert_array_equal(loaded.coords, dataset.coords)
    assert_array_equal(loaded.labels, dataset.labels)
    assert loaded.class_count == dataset.class_count

    mapped = load_dataset(path, mmap=True)
    assert_array_equal(np.asarray(mapped.coords), dataset.coords)


def test_unlabeled_samples(tmp_path, dataset):
    save_dataset(dataset.unlabeled(), tmp_path / "u.skd")
    loaded = load_dataset(tmp_path / "u.skd")
    assert not loaded.is_labeled
    assert loaded[0].label is None


def test_truncated_file(tmp_path, dataset):
    path = tmp_path / "train.skd"
    save_dataset(dataset, path)
    content = path.read_bytes()
    (tmp_path / "short.skd").write_bytes(content[:-10])
    with pytest.raises(FormatError) as err:
        load_dataset(tmp_path / "short.skd")
    record = (len(content) - SKD_HEADER.size) // len(dataset)
    assert err.value.offset == SKD_HEADER.size + (len(dataset) - 1) * record

    (tmp_path / "head.skd").write_bytes(content[:20])
    with pytest.raises(FormatError):
        load_dataset(tmp_path / "head.skd")

    (tmp_path / "magic.skd").write_bytes(b"XXXXXXXX" + content[8:])
    with pytest.raises(FormatError) as err:
        load_dataset(tmp_path / "magic.skd")
    assert err.value.offset == 0


def test_topology_mismatch(tmp_path, dataset):
    save_dataset(dataset, tmp_path / "train.skd")
    with pytest.raises(ShapeMismatchError):
        load_dataset(tmp_path / "train.skd", topology=ntu_topology())


def test_dataset_validation(topology):
    with pytest.raises(ShapeMismatchError):
        Dataset(np.zeros((2, 3, 4, 9, 1)), np.zeros(3), 2, topology)
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 3, 4, 9, 1)), np.array([0, 5]), 2, topology)


def test_split_is_stratified(dataset):
    train, test = split_dataset(dataset, test_size=0.5, seed=0)
    assert len(train) + len(test) == len(dataset)
    assert np.bincount(test.labels).tolist() == [3] * 4
    assert test.split == "test"


def test_stream_dataset_keeps_labels(dataset):
    motion = derive_stream_dataset(dataset, "motion")
    assert_array_equal(motion.labels, dataset.labels)
    assert not motion.coords[:, :, -1].any()


def test_batch_indices():
    batches = list(batch_indices(10, 4))
    assert [len(b) for b in batches] == [4, 4]
    batches = list(batch_indices(10, 4, drop_last=False))
    assert [len(b) for b in batches] == [4, 4, 2]
    shuffled = np.concatenate(list(batch_indices(8, 4, np.random.default_rng(0))))
    assert sorted(shuffled.tolist()) == list(range(8))
    # fewer samples than a batch still yields one batch
    assert [len(b) for b in batch_indices(3, 4)] == [3]


def test_instantiate_dir(tmp_path):
    out = tmp_path / "run"
    instantiate_dir(out, False)
    assert os.path.isdir(out)
    with pytest.raises(ConfigError):
        instantiate_dir(out, False)
    (out / "stale.txt").write_text("x")
    instantiate_dir(out, True)
    assert os.listdir(out) == []
