"""
Normal augmentation (shear + temporal crop) and part-mixing augmentation

Every transform is a pure function of its input and a numpy Generator. Batch
helpers derive one Generator per sample from (seed, epoch, step, index, tag),
so results never depend on how samples are spread over workers.
"""

import numpy as np
from joblib import Parallel, delayed
from loguru import logger

from skeattn_utils.errors import DegenerateLengthError, PartGroupMismatchError
from skeattn_utils.skeleton import SkeletonSequence

NORMAL_STREAM = 0
MIX_STREAM = 1


def shear_matrix(amplitude, rng):
    """
    3x3 matrix with ones on the diagonal and off-diagonals in [-amplitude, amplitude]
    """
    matrix = rng.uniform(-amplitude, amplitude, size=(3, 3))
    np.fill_diagonal(matrix, 1.0)
    return matrix


def shear(seq, amplitude, rng, matrix=None):
    """
    Apply one random shear to every joint of every frame

    :param seq: SkeletonSequence
    :param amplitude: bound of the off-diagonal entries
    :param rng: numpy Generator
    :param matrix: use this 3x3 matrix instead of drawing one
    :return: SkeletonSequence
    """
    if matrix is None:
        matrix = shear_matrix(amplitude, rng)
    coords = np.einsum("ij,jtvm->itvm", matrix, seq.coords)
    return seq.with_coords(coords.astype(seq.coords.dtype, copy=False))


def resize_time(coords, window):
    """
    Linear interpolation of (C, T, V, M) coords to window frames, endpoints kept
    """
    frames = coords.shape[1]
    if frames == 1:
        return np.repeat(coords, window, axis=1)
    positions = np.linspace(0, frames - 1, window)
    lower = np.floor(positions).astype(int)
    upper = np.minimum(lower + 1, frames - 1)
    weight = (positions - lower)[None, :, None, None]
    return coords[:, lower] * (1 - weight) + coords[:, upper] * weight


def temporal_crop_pad(seq, padding_ratio, window, rng, crop_length=None, start=None):
    """
    Reflection-pad by T/padding_ratio frames per side, crop, resize to window frames

    :param seq: SkeletonSequence with T >= 2
    :param padding_ratio: pad int(T / padding_ratio) frames on each side
    :param window: output frame count
    :param rng: numpy Generator drawing the crop start
    :param crop_length: crop length in padded frames. Defaults to T
    :param start: fixed crop start instead of a random one
    :return: SkeletonSequence with window frames
    """
    frames = seq.frames
    if frames < 2:
        raise DegenerateLengthError(f"temporal crop needs at least 2 frames, got {frames}")

    # reflect mode cannot pad more than T - 1 frames
    pad = min(int(frames / padding_ratio), frames - 1)
    padded = np.pad(seq.coords, ((0, 0), (pad, pad), (0, 0), (0, 0)), mode="reflect")

    length = padded.shape[1]
    crop_length = min(crop_length or frames, length)
    if start is None:
        start = int(rng.integers(0, length - crop_length + 1))
    cropped = padded[:, start : start + crop_length]

    resized = resize_time(cropped, window)
    return seq.with_coords(resized.astype(seq.coords.dtype, copy=False))


def normal_augment(seq, cfg, rng):
    """
    Two independent crop-then-shear views of the same sample

    :return: (x_q, x_k)
    """
    views = []
    for _ in range(2):
        view = temporal_crop_pad(seq, cfg.temporal_padding_ratio, cfg.window_size, rng)
        views.append(shear(view, cfg.shear_amplitude, rng))
    return tuple(views)


def mix_segment_bounds(frames, cfg):
    """
    Inclusive range of mixing segment lengths: round(T/temporal_u) .. round(T/temporal_l)
    """
    lower = max(1, int(round(frames / cfg.temporal_u)))
    upper = min(frames, max(lower, int(round(frames / cfg.temporal_l))))
    return lower, upper


def mix_augment(x_q, partner, cfg, rng):
    """
    Swap the joints of randomly chosen part groups with the partner inside one time segment

    Only the selected groups within the selected segment change; every other
    coordinate is copied from x_q unchanged.

    :param x_q: SkeletonSequence, the query view
    :param partner: SkeletonSequence of the same topology and shape
    :param cfg: AugmentConfig
    :param rng: numpy Generator
    :return: SkeletonSequence x_mix
    """
    topology = x_q.topology
    if partner.topology != topology or partner.coords.shape != x_q.coords.shape:
        raise PartGroupMismatchError(
            f"cannot mix a {partner.topology.name} sample of shape {partner.coords.shape} "
            f"into a {topology.name} sample of shape {x_q.coords.shape}"
        )
    groups = topology.group_names
    if cfg.spatial_u > len(groups):
        raise PartGroupMismatchError(
            f"spatial_u={cfg.spatial_u} exceeds the {len(groups)} part groups of {topology.name}"
        )

    count = int(rng.integers(cfg.spatial_l, cfg.spatial_u + 1))
    chosen = sorted(rng.choice(len(groups), size=count, replace=False))
    joints = np.concatenate([topology.part_groups[groups[g]] for g in chosen])

    frames = x_q.frames
    lower, upper = mix_segment_bounds(frames, cfg)
    length = int(rng.integers(lower, upper + 1))
    offset = int(rng.integers(0, frames - length + 1))

    coords = np.array(x_q.coords)
    segment = slice(offset, offset + length)
    coords[:, segment, joints] = partner.coords[:, segment, joints]

    logger.debug(
        f"mix: groups {[groups[g] for g in chosen]}, segment length {length} at offset {offset}"
    )
    return x_q.with_coords(coords)


def sample_rng(seed, epoch, step, index, stream):
    """
    Independent Generator per (seed, epoch, step, sample index, stream tag)
    """
    return np.random.default_rng([seed, epoch, step, index, stream])


def _normal_views(coords, topology, cfg, rng):
    x_q, x_k = normal_augment(SkeletonSequence(coords, topology), cfg, rng)
    return x_q.coords, x_k.coords


def _mixed_view(x_q, partner, topology, cfg, rng):
    return mix_augment(
        SkeletonSequence(x_q, topology), SkeletonSequence(partner, topology), cfg, rng
    ).coords


def augment_batch(coords, topology, cfg, seed, epoch=0, step=0, with_mix=True, workers=1):
    """
    Produce the three views a pretraining step consumes

    Sample i is mixed with the query view of sample (i + 1) mod B.

    :param coords: (B, C, T, V, M) batch
    :param topology: SkeletonTopology of the batch
    :param cfg: AugmentConfig
    :param seed: run seed
    :param epoch: epoch index, part of the per-sample seed
    :param step: step index within the epoch, part of the per-sample seed
    :param with_mix: also produce x_mix
    :param workers: joblib threads
    :return: (x_q, x_k, x_mix) float32 arrays, x_mix is None without mixing
    """
    batch = len(coords)
    parallel = Parallel(n_jobs=workers, backend="threading")

    views = parallel(
        delayed(_normal_views)(
            np.asarray(coords[i]), topology, cfg, sample_rng(seed, epoch, step, i, NORMAL_STREAM)
        )
        for i in range(batch)
    )
    x_q = np.stack([q for q, _ in views]).astype(np.float32)
    x_k = np.stack([k for _, k in views]).astype(np.float32)

    x_mix = None
    if with_mix:
        mixed = parallel(
            delayed(_mixed_view)(
                x_q[i],
                x_q[(i + 1) % batch],
                topology,
                cfg,
                sample_rng(seed, epoch, step, i, MIX_STREAM),
            )
            for i in range(batch)
        )
        x_mix = np.stack(mixed).astype(np.float32)
    return x_q, x_k, x_mix
