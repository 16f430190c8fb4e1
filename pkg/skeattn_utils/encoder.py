"""
Spatio-temporal graph convolution encoder

Input batches are (B, C, T, V, M). The encoder folds persons into the batch,
works on (B*M, T, V, C) and returns feature maps of shape (B, n, C_f) with the
n = T_out * V * M locations flattened time-major, then joint, then person.
"""

import numpy as np
from loguru import logger

from skeattn_utils.autodiff import Tensor, matmul
from skeattn_utils.errors import ShapeMismatchError
from skeattn_utils.layers import Module, get_initializer
from skeattn_utils.skeleton import SkeletonSequence


def temporal_shift_matrix(frames, kernel, stride):
    """
    Stack of K selection matrices turning a zero-padded temporal convolution into one matmul

    Row k * T_out + t of the (K * T_out, T) result picks input frame
    t * stride + k - K // 2, or is all-zero where that frame falls in the padding.

    :return: (matrix, T_out)
    """
    pad = kernel // 2
    out_frames = (frames + 2 * pad - kernel) // stride + 1
    shift = np.zeros((kernel, out_frames, frames))
    for k in range(kernel):
        for t in range(out_frames):
            source = t * stride + k - pad
            if 0 <= source < frames:
                shift[k, t, source] = 1.0
    return shift.reshape(kernel * out_frames, frames), out_frames


class Encoder(Module):
    """
    Base class of the encoders E_q / E_k

    Subclasses implement forward on a (B, C, T, V, M) tensor and output_shape.
    """

    name = "encoder"

    def __call__(self, x):
        return self.forward(x)

    def forward(self, x):
        raise NotImplementedError

    def output_shape(self, frames, joints, persons):
        raise NotImplementedError


class STGCNEncoder(Encoder):
    """
    Stack of blocks: spatial aggregation (A * E) X W, temporal convolution, ReLU

    :param topology: SkeletonTopology giving the adjacency
    :param in_channels: coordinate channels C
    :param channels: output channels per block
    :param strides: temporal stride per block
    :param temporal_kernel: odd temporal kernel width
    :param edge_importance_weighting: learn an elementwise weight per adjacency entry
    :param initializer: name understood by get_initializer
    :param seed: seed of the parameter initialisation
    :param dtype: parameter precision
    :param adjacency: optional (V, V) matrix replacing the topology adjacency
    """

    name = "stgcn"

    def __init__(
        self,
        topology,
        in_channels=3,
        channels=(16, 32, 64),
        strides=(1, 2, 1),
        temporal_kernel=5,
        edge_importance_weighting=True,
        initializer="kaiming_uniform",
        seed=0,
        dtype=np.float32,
        adjacency=None,
    ):
        super().__init__(dtype)
        if len(channels) != len(strides):
            raise ShapeMismatchError("channels and strides must have equal length")
        self.topology = topology
        self.in_channels = in_channels
        self.channels = list(channels)
        self.strides = list(strides)
        self.temporal_kernel = temporal_kernel
        self.edge_importance_weighting = edge_importance_weighting
        self.adjacency = np.asarray(
            topology.adjacency() if adjacency is None else adjacency, dtype=self.dtype
        )
        self._shift_cache = {}

        init = get_initializer(initializer)
        rng = np.random.default_rng(seed)
        joints = topology.joint_count
        width = in_channels
        for i, out in enumerate(self.channels):
            self.add_parameter(f"layers.{i}.spatial", init((width, out), width, rng))
            if edge_importance_weighting:
                self.add_parameter(f"layers.{i}.edge_importance", np.ones((joints, joints)))
            self.add_parameter(
                f"layers.{i}.temporal",
                init((temporal_kernel * out, out), temporal_kernel * out, rng),
            )
            width = out

    @property
    def out_channels(self):
        return self.channels[-1]

    def output_frames(self, frames):
        for stride in self.strides:
            frames = temporal_shift_matrix(frames, self.temporal_kernel, stride)[1]
        return frames

    def output_shape(self, frames, joints=None, persons=1):
        """
        (n, C_f) produced for inputs of T frames, V joints and M persons
        """
        joints = joints or self.topology.joint_count
        return self.output_frames(frames) * joints * persons, self.out_channels

    def _shift(self, frames, stride):
        key = (frames, stride)
        if key not in self._shift_cache:
            matrix, out_frames = temporal_shift_matrix(frames, self.temporal_kernel, stride)
            self._shift_cache[key] = (Tensor(matrix, dtype=self.dtype), out_frames)
        return self._shift_cache[key]

    def _check_input(self, x):
        if x.ndim != 5:
            raise ShapeMismatchError(f"encoder input must be (B, C, T, V, M), got {x.shape}")
        _, channels, frames, joints, _ = x.shape
        if channels != self.in_channels or joints != self.topology.joint_count:
            raise ShapeMismatchError(
                f"encoder expects C={self.in_channels}, V={self.topology.joint_count}, "
                f"got input of shape {x.shape}"
            )
        if frames < 1:
            raise ShapeMismatchError("encoder input has no frames")

    def forward(self, x):
        """
        :param x: (B, C, T, V, M) Tensor or array
        :return: (B, n, C_f) Tensor
        """
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype))
        self._check_input(x)
        batch, channels, frames, joints, persons = x.shape

        h = x.transpose(0, 4, 2, 3, 1).reshape(batch * persons, frames, joints, channels)
        for i, stride in enumerate(self.strides):
            adjacency = self.adjacency
            if self.edge_importance_weighting:
                adjacency = self.params[f"layers.{i}.edge_importance"] * adjacency
            h = matmul(matmul(adjacency, h), self.params[f"layers.{i}.spatial"])

            samples, frames, _, width = h.shape
            shift, out_frames = self._shift(frames, stride)
            # (N, V, K * T_out, C) -> (N, T_out, V, K * C)
            h = matmul(shift, h.transpose(0, 2, 1, 3))
            h = h.reshape(samples, joints, self.temporal_kernel, out_frames, width)
            h = h.transpose(0, 3, 1, 2, 4).reshape(
                samples, out_frames, joints, self.temporal_kernel * width
            )
            h = matmul(h, self.params[f"layers.{i}.temporal"]).relu()

        frames = h.shape[1]
        h = h.reshape(batch, persons, frames, joints, self.out_channels).transpose(0, 2, 3, 1, 4)
        return h.reshape(batch, frames * joints * persons, self.out_channels)


ENCODERS = {"stgcn": STGCNEncoder}


def get_encoder(encoder_cfg, topology, seed=0, dtype=np.float32):
    """
    Build an encoder from its config section

    :param encoder_cfg: EncoderConfig
    :param topology: SkeletonTopology
    :param seed: parameter initialisation seed
    :param dtype: parameter precision
    :return: Encoder
    """
    if encoder_cfg.name not in ENCODERS:
        raise ValueError(f"Invalid encoder '{encoder_cfg.name}'. Must be one of {list(ENCODERS)}")
    encoder = ENCODERS[encoder_cfg.name](
        topology,
        in_channels=encoder_cfg.in_channels,
        channels=encoder_cfg.channels,
        strides=encoder_cfg.strides,
        temporal_kernel=encoder_cfg.temporal_kernel,
        edge_importance_weighting=encoder_cfg.edge_importance_weighting,
        initializer=encoder_cfg.initializer,
        seed=seed,
        dtype=dtype,
    )
    logger.debug(
        f"{encoder_cfg.name} encoder with channels {encoder_cfg.channels}, "
        f"{sum(p.size for p in encoder.params.values())} parameters"
    )
    return encoder


def encode(x, encoder):
    """
    Feature map of one sequence (n, C_f) or of a batch (B, n, C_f)
    """
    if isinstance(x, SkeletonSequence):
        f = encoder(np.asarray(x.coords)[None])
        return f.reshape(f.shape[1:])
    return encoder(x)


def global_average_pool(f):
    """
    Mean over the n locations of an (n, C_f) or (B, n, C_f) feature map
    """
    return f.mean(axis=-2)
