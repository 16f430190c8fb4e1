"""
Datasets of skeleton sequences and the SKD1 file format

SKD1 layout (little-endian):
    8 bytes   magic "SKELDS01"
    u32       sample count N
    u32       class count
    4*u32     C, T, V, M
    N records of: i32 label (-1 = unlabeled), C*T*V*M float32 values
"""

import os
import shutil
import struct
from dataclasses import dataclass

import numpy as np
from loguru import logger
from sklearn.model_selection import train_test_split

from skeattn_utils.errors import ConfigError, FormatError, ShapeMismatchError
from skeattn_utils.skeleton import SkeletonSequence, desk_topology, stream_coords

SKD_MAGIC = b"SKELDS01"
SKD_HEADER = struct.Struct("<8sII4I")
UNLABELED = -1


def instantiate_dir(output_dir, force):
    """
    Generate output directory relative to whether force has been specified
    """

    # remove the existing outdir on force
    if force:
        if os.path.isdir(output_dir):
            shutil.rmtree(output_dir)
        else:
            logger.warning(f"--force was specified even though {output_dir} does not exist")

    # refuse to overwrite without force
    elif os.path.isdir(output_dir):
        raise ConfigError(
            f"Output directory {output_dir} already exists and force was not specified. "
            "Please specify -f or --force to overwrite the output directory."
        )

    os.makedirs(output_dir)


@dataclass
class Dataset:
    """
    Array-backed collection of skeleton sequences

    :param coords: (N, C, T, V, M) float array
    :param labels: (N,) int array, -1 for unlabeled samples
    :param class_count: number of classes
    :param topology: shared joint graph
    :param split: 'train' or 'test'
    """

    coords: np.ndarray
    labels: np.ndarray
    class_count: int
    topology: object = None
    split: str = "train"

    def __post_init__(self):
        if self.topology is None:
            self.topology = desk_topology()
        self.labels = np.asarray(self.labels, dtype=np.int32)
        if self.coords.ndim != 5:
            raise ShapeMismatchError(f"dataset coords must be (N, C, T, V, M), got {self.coords.shape}")
        if len(self.labels) != len(self.coords):
            raise ShapeMismatchError(
                f"{len(self.coords)} samples but {len(self.labels)} labels"
            )
        if self.coords.shape[3] != self.topology.joint_count:
            raise ShapeMismatchError(
                f"dataset has V={self.coords.shape[3]} but topology '{self.topology.name}' "
                f"has {self.topology.joint_count} joints"
            )
        labeled = self.labels[self.labels != UNLABELED]
        if len(labeled) and (labeled.min() < 0 or labeled.max() >= self.class_count):
            raise ValueError(f"labels must lie in [0, {self.class_count})")

    def __len__(self):
        return len(self.coords)

    def __getitem__(self, index):
        label = int(self.labels[index])
        return SkeletonSequence(
            np.asarray(self.coords[index]),
            self.topology,
            None if label == UNLABELED else label,
        )

    @property
    def shape(self):
        """
        (C, T, V, M) of one sample
        """
        return tuple(self.coords.shape[1:])

    @property
    def is_labeled(self):
        return len(self) > 0 and bool(np.all(self.labels != UNLABELED))

    def subset(self, indices, split=None):
        indices = np.asarray(indices, dtype=int)
        return Dataset(
            np.asarray(self.coords[indices]),
            self.labels[indices],
            self.class_count,
            self.topology,
            split or self.split,
        )

    def unlabeled(self):
        return Dataset(
            self.coords,
            np.full(len(self), UNLABELED, dtype=np.int32),
            self.class_count,
            self.topology,
            self.split,
        )


def derive_stream_dataset(dataset, stream):
    """
    Convert every sample of a dataset to the joint, motion or bone stream
    """
    coords = stream_coords(np.asarray(dataset.coords), dataset.topology, stream)
    return Dataset(coords, dataset.labels, dataset.class_count, dataset.topology, dataset.split)


def _record_dtype(shape):
    return np.dtype([("label", "<i4"), ("coords", "<f4", shape)])


def save_dataset(dataset, path):
    """
    Write a dataset as SKD1
    """
    shape = dataset.shape
    records = np.empty(len(dataset), dtype=_record_dtype(shape))
    records["label"] = dataset.labels
    records["coords"] = dataset.coords
    with open(path, "wb") as handle:
        handle.write(SKD_HEADER.pack(SKD_MAGIC, len(dataset), dataset.class_count, *shape))
        handle.write(records.tobytes())
    logger.info(f"{len(dataset)} samples of shape {shape} saved to {path}")


def load_dataset(path, topology=None, split="train", mmap=False):
    """
    Read an SKD1 dataset

    :param path: file path
    :param topology: joint graph the file must match. Defaults to the desk topology
    :param split: split tag for the returned dataset
    :param mmap: map the payload read-only instead of reading it into memory
    :raises FormatError: bad magic or truncated content, with the byte offset
    :raises ShapeMismatchError: V in the header differs from the topology
    """
    topology = topology or desk_topology()
    file_size = os.path.getsize(path)
    with open(path, "rb") as handle:
        header = handle.read(SKD_HEADER.size)
    if len(header) < 8 or header[:8] != SKD_MAGIC:
        raise FormatError(f"{path} is not an SKD1 file", 0)
    if len(header) < SKD_HEADER.size:
        raise FormatError(f"truncated SKD1 header in {path}", len(header))

    _, count, class_count, *shape = SKD_HEADER.unpack(header)
    shape = tuple(shape)
    if shape[2] != topology.joint_count:
        raise ShapeMismatchError(
            f"{path} holds V={shape[2]} joints but topology '{topology.name}' "
            f"has {topology.joint_count}"
        )

    record = _record_dtype(shape)
    expected = SKD_HEADER.size + count * record.itemsize
    if file_size < expected:
        complete = (file_size - SKD_HEADER.size) // record.itemsize
        raise FormatError(
            f"truncated SKD1 payload in {path}: {count} samples declared, {complete} complete",
            SKD_HEADER.size + complete * record.itemsize,
        )
    if file_size > expected:
        raise FormatError(f"trailing bytes in {path}", expected)

    if mmap:
        records = np.memmap(path, dtype=record, mode="r", offset=SKD_HEADER.size, shape=(count,))
        coords = records["coords"]
    else:
        with open(path, "rb") as handle:
            handle.seek(SKD_HEADER.size)
            records = np.frombuffer(handle.read(), dtype=record, count=count)
        coords = np.array(records["coords"], dtype=np.float32)

    labels = np.array(records["label"], dtype=np.int32)
    logger.info(f"{count} samples loaded from {path}")
    return Dataset(coords, labels, class_count, topology, split)


def split_dataset(dataset, test_size=0.2, seed=42):
    """
    Stratified split of a labeled dataset into train and test parts
    """
    indices = np.arange(len(dataset))
    train_index, test_index = train_test_split(
        indices,
        test_size=test_size,
        random_state=seed,
        stratify=dataset.labels,
    )
    return (
        dataset.subset(np.sort(train_index), split="train"),
        dataset.subset(np.sort(test_index), split="test"),
    )


def batch_indices(count, batch_size, rng=None, drop_last=True):
    """
    Yield index arrays covering a dataset, shuffled when an rng is given
    """
    order = rng.permutation(count) if rng is not None else np.arange(count)
    stop = count - count % batch_size if drop_last and count >= batch_size else count
    for start in range(0, stop, batch_size):
        yield order[start : start + batch_size]
