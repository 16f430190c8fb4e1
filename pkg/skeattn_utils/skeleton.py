"""
Skeleton topologies, sequences and stream derivation

Coordinates are stored channel-first as (C, T, V, M): 3 coordinates, T frames,
V joints and M persons.
"""

from dataclasses import dataclass, field

import numpy as np

from skeattn_utils.errors import ShapeMismatchError, UnknownStreamError

STREAMS = ("joint", "motion", "bone")
STREAM_ALIASES = {"j": "joint", "m": "motion", "b": "bone"}


@dataclass(frozen=True)
class SkeletonTopology:
    """
    Joint graph of a skeleton

    :param name: preset name
    :param joint_count: number of joints V
    :param edges: (parent, child) pairs forming a tree
    :param root: centre joint the tree hangs from
    :param part_groups: named joint subsets partitioning all joints
    """

    name: str
    joint_count: int
    edges: tuple
    root: int
    part_groups: dict = field(hash=False)

    def __post_init__(self):
        self.validate()

    def validate(self):
        joints = set(range(self.joint_count))
        children = [child for _, child in self.edges]
        if len(self.edges) != self.joint_count - 1 or len(set(children)) != len(children):
            raise ShapeMismatchError(f"edges of topology '{self.name}' do not form a tree")
        if self.root in children or set(children) | {self.root} != joints:
            raise ShapeMismatchError(
                f"topology '{self.name}' is not a tree rooted at joint {self.root}"
            )

        # every joint must reach the root through its parents
        parents = self.parents
        for joint in joints:
            seen = set()
            while joint != self.root:
                if joint in seen:
                    raise ShapeMismatchError(f"topology '{self.name}' contains a cycle")
                seen.add(joint)
                joint = parents[joint]

        grouped = [j for group in self.part_groups.values() for j in group]
        if sorted(grouped) != sorted(joints):
            raise ShapeMismatchError(
                f"part groups of topology '{self.name}' must partition all {self.joint_count} joints"
            )

    @property
    def parents(self):
        """
        Parent index of every joint. The root is its own parent
        """
        parents = np.arange(self.joint_count)
        for parent, child in self.edges:
            parents[child] = parent
        return parents

    @property
    def group_names(self):
        return list(self.part_groups)

    def adjacency(self):
        """
        Row-normalised adjacency with self loops: D^-1 (I + A)
        """
        adjacency = np.eye(self.joint_count)
        for parent, child in self.edges:
            adjacency[parent, child] = 1
            adjacency[child, parent] = 1
        return adjacency / adjacency.sum(axis=1, keepdims=True)


def desk_topology():
    """
    Nine-joint skeleton: pelvis, neck, head, left/right elbow and hand, left/right foot
    """
    return SkeletonTopology(
        name="desk9",
        joint_count=9,
        edges=((0, 1), (1, 2), (1, 3), (3, 4), (1, 5), (5, 6), (0, 7), (0, 8)),
        root=0,
        part_groups={
            "torso": (0, 1, 2),
            "left_arm": (3, 4),
            "right_arm": (5, 6),
            "left_leg": (7,),
            "right_leg": (8,),
        },
    )


# NTU RGB+D bones as (child, parent), 1-indexed; joint 21 (spine) is the centre
NTU_BONES = (
    (1, 2), (2, 21), (3, 21), (4, 3), (5, 21), (6, 5), (7, 6), (8, 7), (9, 21),
    (10, 9), (11, 10), (12, 11), (13, 1), (14, 13), (15, 14), (16, 15), (17, 1),
    (18, 17), (19, 18), (20, 19), (22, 23), (23, 8), (24, 25), (25, 12),
)  # fmt: skip


def ntu_topology():
    """
    25-joint NTU RGB+D skeleton with the five semantic body parts used for mixing
    """
    return SkeletonTopology(
        name="ntu25",
        joint_count=25,
        edges=tuple((parent - 1, child - 1) for child, parent in NTU_BONES),
        root=20,
        part_groups={
            "torso": (0, 1, 2, 3, 20),
            "left_arm": (4, 5, 6, 7, 21, 22),
            "right_arm": (8, 9, 10, 11, 23, 24),
            "left_leg": (12, 13, 14, 15),
            "right_leg": (16, 17, 18, 19),
        },
    )


TOPOLOGIES = {"desk9": desk_topology, "ntu25": ntu_topology}


def get_topology(name):
    """
    Look up a topology preset by name. One of ['desk9', 'ntu25']
    """
    if name not in TOPOLOGIES:
        raise ValueError(f"Invalid topology '{name}'. Must be one of {list(TOPOLOGIES)}")
    return TOPOLOGIES[name]()


@dataclass(frozen=True)
class SkeletonSequence:
    """
    One skeleton sample

    :param coords: (C, T, V, M) coordinates
    :param topology: joint graph the coordinates follow
    :param label: class id, or None when unlabeled
    """

    coords: np.ndarray
    topology: SkeletonTopology
    label: int = None

    def __post_init__(self):
        if self.coords.ndim != 4:
            raise ShapeMismatchError(f"coords must be (C, T, V, M), got shape {self.coords.shape}")
        if self.coords.shape[2] != self.topology.joint_count:
            raise ShapeMismatchError(
                f"coords have {self.coords.shape[2]} joints but topology "
                f"'{self.topology.name}' has {self.topology.joint_count}"
            )

    @property
    def frames(self):
        return self.coords.shape[1]

    def with_coords(self, coords):
        return SkeletonSequence(coords, self.topology, self.label)


def normalise_stream(stream):
    stream = str(stream).lower()
    stream = STREAM_ALIASES.get(stream, stream)
    if stream not in STREAMS:
        raise UnknownStreamError(f"Unknown stream '{stream}'. Must be one of {list(STREAMS)}")
    return stream


def stream_coords(coords, topology, stream):
    """
    Derive a stream from coordinates with time on axis -3 and joints on axis -2

    Works on a single (C, T, V, M) sample or a batch (N, C, T, V, M).
    """
    stream = normalise_stream(stream)
    if stream == "joint":
        return coords

    if stream == "motion":
        motion = np.zeros_like(coords)
        motion[..., :-1, :, :] = coords[..., 1:, :, :] - coords[..., :-1, :, :]
        return motion

    bone = coords - coords[..., topology.parents, :]
    bone[..., topology.root, :] = 0
    return bone


def derive_stream(seq, stream):
    """
    joint: identity. motion: frame-to-frame difference with a zero last frame.
    bone: child minus parent per edge with a zero root bone.
    """
    return seq.with_coords(stream_coords(seq.coords, seq.topology, stream))
