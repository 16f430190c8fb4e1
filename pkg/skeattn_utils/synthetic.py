"""
Synthetic labeled skeleton actions for desk-scale experiments

Every class shares the same whole-body nuisance motion (sway, translation,
scale) and differs only in which limb swings and how fast, so telling classes
apart requires attending to local part motion. Mirrored limbs never share a
swing rate, so no shear of the whole body turns one class into another.
"""

import numpy as np
from loguru import logger

from skeattn_utils.config import SynthConfig
from skeattn_utils.errors import InvalidConfigError
from skeattn_utils.format_data import Dataset
from skeattn_utils.skeleton import desk_topology

BONE_LENGTH = 0.3

GROUP_DIRECTIONS = {
    "torso": (0.0, 1.0, 0.0),
    "left_arm": (-0.8, -0.3, 0.0),
    "right_arm": (0.8, -0.3, 0.0),
    "left_leg": (-0.2, -1.0, 0.0),
    "right_leg": (0.2, -1.0, 0.0),
}

SPLIT_CODES = {"train": 0, "test": 1}


def _joint_groups(topology):
    groups = np.empty(topology.joint_count, dtype=object)
    for name, joints in topology.part_groups.items():
        for joint in joints:
            groups[joint] = name
    return groups


def rest_pose(topology):
    """
    (V, 3) rest coordinates: every bone points along the direction of its part group
    """
    groups = _joint_groups(topology)
    parents = topology.parents
    pose = np.zeros((topology.joint_count, 3))

    # walk joints in breadth-first order from the root
    order = [topology.root]
    children = {j: [] for j in range(topology.joint_count)}
    for parent, child in topology.edges:
        children[parent].append(child)
    for joint in order:
        order.extend(children[joint])

    for joint in order[1:]:
        direction = np.asarray(GROUP_DIRECTIONS.get(groups[joint], (0.0, 1.0, 0.0)))
        pose[joint] = pose[parents[joint]] + BONE_LENGTH * direction / np.linalg.norm(direction)
    return pose


def swinging_groups(topology):
    """
    Part groups that can carry class motion: every group except the one holding the root
    """
    return [name for name, joints in topology.part_groups.items() if topology.root not in joints]


def _rotation_matrices(axis, angles):
    """
    Rodrigues rotation about a unit axis, one 3x3 matrix per angle
    """
    x, y, z = axis
    cross = np.array([[0, -z, y], [z, 0, -x], [-y, x, 0]])
    outer = np.outer(axis, axis)
    cos = np.cos(angles)[:, None, None]
    sin = np.sin(angles)[:, None, None]
    return cos * np.eye(3) + sin * cross + (1 - cos) * outer


def _limb(topology, pose, group):
    joints = np.asarray(topology.part_groups[group])
    parents = topology.parents
    top = [j for j in joints if parents[j] not in joints][0]
    pivot = pose[parents[top]]
    direction = pose[top] - pivot
    axis = np.cross(direction, (0.0, 0.0, 1.0))
    return joints, pivot, axis / np.linalg.norm(axis)


def class_motion(class_id, topology):
    """
    (swinging part group, frequency multiplier) of a class

    The second limb of each left/right pair swings at twice the rate of the first.
    """
    limbs = swinging_groups(topology)
    limb = class_id % len(limbs)
    return limbs[limb], 1 + limb % 2 + 2 * (class_id // len(limbs))


def synth_sample(class_id, config, topology, pose, rng):
    """
    Draw one (C, T, V, M) sample of a class
    """
    frames = config.frames
    t = np.arange(frames) / frames
    group, multiplier = class_motion(class_id, topology)
    joints, pivot, axis = _limb(topology, pose, group)

    amplitude = config.swing_amplitude * rng.uniform(0.8, 1.2)
    phase = rng.uniform(0, 2 * np.pi)
    angles = amplitude * np.sin(2 * np.pi * config.base_frequency * multiplier * t + phase)
    rotations = _rotation_matrices(axis, angles)

    # (T, V, 3)
    coords = np.broadcast_to(pose, (frames,) + pose.shape).copy()
    offsets = pose[joints] - pivot
    coords[:, joints] = pivot + np.einsum("tij,vj->tvi", rotations, offsets)

    # shared whole-body nuisance
    sway_phase = rng.uniform(0, 2 * np.pi)
    coords[..., 0] += config.sway * np.sin(2 * np.pi * t + sway_phase)[:, None]
    coords *= 1 + rng.uniform(-config.scale_jitter, config.scale_jitter)
    coords += rng.uniform(-config.translation_jitter, config.translation_jitter, size=3)
    if config.noise > 0:
        coords += rng.normal(0, config.noise, size=coords.shape)

    persons = [coords + np.array([1.0 * m, 0.0, 0.0]) for m in range(config.persons)]
    # (T, V, 3, M) -> (3, T, V, M)
    return np.stack(persons, axis=-1).transpose(2, 0, 1, 3)


def synth_generate(config=None, seed=0, topology=None, split="train"):
    """
    Generate a balanced labeled dataset of part-motion classes

    Pure function of (config, seed, topology, split): the same arguments give a
    bit-identical dataset.

    :param config: SynthConfig
    :param seed: integer seed
    :param topology: SkeletonTopology, defaults to the desk topology
    :param split: 'train' draws samples_per_class, 'test' test_samples_per_class
    :return: Dataset
    """
    config = config or SynthConfig()
    topology = topology or desk_topology()
    if split not in SPLIT_CODES:
        raise InvalidConfigError(f"split must be 'train' or 'test', not '{split}'")
    if not swinging_groups(topology):
        raise InvalidConfigError(f"topology '{topology.name}' has no limb part groups")

    per_class = config.samples_per_class if split == "train" else config.test_samples_per_class
    rng = np.random.default_rng([seed, SPLIT_CODES[split]])
    pose = rest_pose(topology)

    labels = np.repeat(np.arange(config.class_count), per_class)
    samples = [synth_sample(label, config, topology, pose, rng) for label in labels]
    order = rng.permutation(len(labels))

    shape = (len(labels), 3, config.frames, topology.joint_count, config.persons)
    coords = np.stack(samples).astype(np.float32) if samples else np.zeros(shape, np.float32)
    logger.info(
        f"generated {len(labels)} {split} samples over {config.class_count} classes "
        f"(seed {seed}, topology {topology.name})"
    )
    return Dataset(coords[order], labels[order], config.class_count, topology, split)
