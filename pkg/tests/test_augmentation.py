# imports
import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from skeattn_utils.augmentation import (
    augment_batch,
    mix_augment,
    mix_segment_bounds,
    normal_augment,
    resize_time,
    sample_rng,
    shear,
    temporal_crop_pad,
)
from skeattn_utils.config import AugmentConfig
from skeattn_utils.errors import DegenerateLengthError, PartGroupMismatchError
from skeattn_utils.skeleton import SkeletonSequence, ntu_topology


@pytest.fixture
def seq(topology, rng):
    return SkeletonSequence(rng.normal(size=(3, 16, 9, 1)), topology)


def test_zero_shear_is_identity(seq, rng):
    assert_array_equal(shear(seq, 0.0, rng).coords, seq.coords)


def test_fixed_shear_matrix(topology, rng):
    point = np.zeros((3, 1, 9, 1))
    point[0] = 1.0
    matrix = np.full((3, 3), 0.5)
    np.fill_diagonal(matrix, 1.0)
    out = shear(SkeletonSequence(point, topology), 0.5, rng, matrix=matrix)
    assert_allclose(out.coords[:, 0, 0, 0], [1.0, 0.5, 0.5])


def test_shear_keeps_shape(seq, rng):
    out = shear(seq, 0.5, rng)
    assert out.coords.shape == seq.coords.shape
    assert not np.allclose(out.coords, seq.coords)


def test_crop_of_constant_sequence_is_constant(topology, rng):
    coords = np.full((3, 12, 9, 1), 2.5)
    out = temporal_crop_pad(SkeletonSequence(coords, topology), 6, 16, rng)
    assert out.frames == 16
    assert_allclose(out.coords, 2.5)


def test_crop_without_padding_at_origin_is_identity(seq, rng):
    out = temporal_crop_pad(seq, 100, 16, rng, start=0)
    assert_array_equal(out.coords, seq.coords)


def test_resize_keeps_linear_ramp():
    ramp = np.broadcast_to(np.arange(8.0)[None, :, None, None], (3, 8, 2, 1))
    resized = resize_time(ramp, 16)
    assert_allclose(resized[0, :, 0, 0], np.linspace(0, 7, 16))
    assert resized[0, 0, 0, 0] == 0 and resized[0, -1, 0, 0] == 7


def test_crop_needs_two_frames(topology, rng):
    with pytest.raises(DegenerateLengthError):
        temporal_crop_pad(SkeletonSequence(np.zeros((3, 1, 9, 1)), topology), 6, 16, rng)


def test_normal_augment(seq):
    cfg = AugmentConfig(window_size=12)
    x_q, x_k = normal_augment(seq, cfg, np.random.default_rng(4))
    assert x_q.frames == 12 and x_k.frames == 12
    assert not np.allclose(x_q.coords, x_k.coords)

    again = normal_augment(seq, cfg, np.random.default_rng(4))
    assert x_q.coords.tobytes() == again[0].coords.tobytes()
    assert x_k.coords.tobytes() == again[1].coords.tobytes()


def test_segment_bounds():
    assert mix_segment_bounds(16, AugmentConfig(temporal_l=4, temporal_u=7)) == (2, 4)


def test_self_mix_is_identity(seq, rng):
    assert_array_equal(mix_augment(seq, seq, AugmentConfig(), rng).coords, seq.coords)


def test_mix_is_local(seq, topology):
    cfg = AugmentConfig()
    partner = seq.with_coords(seq.coords + 10.0)
    groups = {name: set(joints) for name, joints in topology.part_groups.items()}
    lengths = set()
    for seed in range(50):
        mixed = mix_augment(seq, partner, cfg, np.random.default_rng(seed)).coords
        changed = mixed != seq.coords
        # changed entries come from the partner, all channels of a (frame, joint) move together
        assert_array_equal(mixed[changed], partner.coords[changed])
        cells = changed.all(axis=0)[..., 0]
        assert_array_equal(changed.any(axis=0)[..., 0], cells)

        frames = np.flatnonzero(cells.any(axis=1))
        assert np.array_equal(frames, np.arange(frames[0], frames[-1] + 1))
        lengths.add(len(frames))

        joints = set(np.flatnonzero(cells.any(axis=0)).tolist())
        chosen = [name for name, members in groups.items() if members <= joints]
        assert set().union(*(groups[name] for name in chosen)) == joints
        assert 3 <= len(chosen) <= 4
        # the same joints change in every frame of the segment
        assert (cells[frames].sum(axis=1) == len(joints)).all()
    assert lengths <= {2, 3, 4}


def test_mix_rejects_mismatches(seq, rng):
    other = SkeletonSequence(np.zeros((3, 16, 25, 1)), ntu_topology())
    with pytest.raises(PartGroupMismatchError):
        mix_augment(seq, other, AugmentConfig(), rng)
    shorter = seq.with_coords(seq.coords[:, :8])
    with pytest.raises(PartGroupMismatchError):
        mix_augment(seq, shorter, AugmentConfig(), rng)
    too_many = AugmentConfig(spatial_l=3, spatial_u=6)
    with pytest.raises(PartGroupMismatchError):
        mix_augment(seq, seq, too_many, rng)


def test_sample_rng_streams_are_independent():
    a = sample_rng(1, 0, 0, 0, 0).random()
    assert a == sample_rng(1, 0, 0, 0, 0).random()
    assert a != sample_rng(1, 0, 0, 0, 1).random()
    assert a != sample_rng(1, 0, 0, 1, 0).random()


def test_augment_batch(topology, rng):
    coords = rng.normal(size=(4, 3, 20, 9, 1))
    cfg = AugmentConfig(window_size=16)
    x_q, x_k, x_mix = augment_batch(coords, topology, cfg, seed=3, epoch=1, step=2)
    assert x_q.shape == x_k.shape == x_mix.shape == (4, 3, 16, 9, 1)
    assert x_q.dtype == np.float32

    threaded = augment_batch(coords, topology, cfg, seed=3, epoch=1, step=2, workers=2)
    for single, parallel in zip((x_q, x_k, x_mix), threaded):
        assert_array_equal(single, parallel)

    _, _, none = augment_batch(coords, topology, cfg, seed=3, with_mix=False)
    assert none is None

    other_step = augment_batch(coords, topology, cfg, seed=3, epoch=1, step=3)[0]
    assert not np.array_equal(x_q, other_step)
