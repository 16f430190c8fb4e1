"""
Momentum coefficient schedule, momentum (EMA) parameter updates and the memory bank
"""

import numpy as np
from loguru import logger

from skeattn_utils.errors import OutOfRangeError, ShapeMismatchError, StructureMismatchError

UNIT_NORM_TOL = 1e-5


def dynamic_momentum(iteration, iter_max, m0):
    """
    Cosine schedule M = 1 - (1 - M0) * (cos(pi * iter / iter_max) + 1) / 2

    :param iteration: global optimizer step in [0, iter_max]
    :param iter_max: total number of optimizer steps
    :param m0: base momentum in (0, 1)
    :return: M in [M0, 1]
    """
    if iter_max <= 0 or not 0 <= iteration <= iter_max:
        raise OutOfRangeError(f"iteration {iteration} outside [0, {iter_max}]")
    if not 0 < m0 < 1:
        raise OutOfRangeError(f"base momentum {m0} outside (0, 1)")
    return 1.0 - (1.0 - m0) * (np.cos(np.pi * iteration / iter_max) + 1.0) / 2.0


def _named(params):
    return params.named_parameters() if hasattr(params, "named_parameters") else params


def momentum_update(key_params, query_params, m):
    """
    theta_k <- M * theta_k + (1 - M) * theta_q for every parameter pair

    :param key_params: Module or mapping of name -> Parameter, updated in place
    :param query_params: Module or mapping of name -> Parameter with the same structure
    :param m: momentum coefficient in [0, 1]
    """
    key_params, query_params = _named(key_params), _named(query_params)
    if set(key_params) != set(query_params):
        raise StructureMismatchError(
            f"key parameters {sorted(set(key_params) ^ set(query_params))} have no counterpart"
        )
    if not 0 <= m <= 1:
        raise OutOfRangeError(f"momentum {m} outside [0, 1]")
    for name, key in key_params.items():
        query = query_params[name]
        if key.shape != query.shape:
            raise StructureMismatchError(
                f"parameter '{name}' has shape {key.shape} on the key side and {query.shape} on the query side"
            )
        key.assign(m * key.data + (1 - m) * query.data)


class MemoryBank:
    """
    FIFO ring buffer of unit-norm key embeddings used as negatives

    :param capacity: maximum number of stored vectors K
    :param dim: embedding width C_z
    :param dtype: storage precision
    """

    def __init__(self, capacity, dim, dtype=np.float32):
        if capacity < 1:
            raise ValueError("memory bank capacity must be positive")
        self.capacity = capacity
        self.dim = dim
        self.buffer = np.zeros((capacity, dim), dtype=dtype)
        self.size = 0
        self.cursor = 0

    @classmethod
    def random(cls, capacity, dim, seed=0, dtype=np.float32):
        """
        Bank filled with unit-normalised gaussian vectors so negatives exist from the first step
        """
        bank = cls(capacity, dim, dtype)
        vectors = np.random.default_rng(seed).normal(size=(capacity, dim))
        vectors /= np.linalg.norm(vectors, axis=1, keepdims=True)
        bank.buffer[:] = vectors
        bank.size = capacity
        return bank

    def __len__(self):
        return self.size

    @property
    def is_full(self):
        return self.size == self.capacity

    def enqueue(self, vectors):
        """
        Append a batch in order, evicting the oldest entries once full

        :param vectors: (B, C_z) unit-norm rows
        """
        vectors = np.asarray(vectors, dtype=self.buffer.dtype)
        if vectors.ndim != 2 or vectors.shape[1] != self.dim:
            raise ShapeMismatchError(f"bank stores (B, {self.dim}) batches, got {vectors.shape}")
        norms = np.linalg.norm(vectors.astype(np.float64), axis=1)
        if np.any(np.abs(norms - 1) > UNIT_NORM_TOL):
            raise OutOfRangeError("memory bank entries must be unit-norm")

        # only the newest capacity rows of an oversized batch survive
        skipped = max(0, len(vectors) - self.capacity)
        vectors = vectors[skipped:]
        self.cursor = (self.cursor + skipped) % self.capacity

        positions = (self.cursor + np.arange(len(vectors))) % self.capacity
        self.buffer[positions] = vectors
        self.cursor = (self.cursor + len(vectors)) % self.capacity
        self.size = min(self.capacity, self.size + len(vectors) + skipped)
        logger.debug(f"enqueued {len(vectors)} keys, bank holds {self.size}/{self.capacity}")

    def contents(self):
        """
        Stored vectors ordered oldest to newest
        """
        if self.size < self.capacity:
            start = (self.cursor - self.size) % self.capacity
            return np.take(self.buffer, (start + np.arange(self.size)) % self.capacity, axis=0)
        return np.concatenate([self.buffer[self.cursor :], self.buffer[: self.cursor]])

    def snapshot(self):
        """
        Read-only copy handed to the loss computation
        """
        snapshot = self.contents()
        snapshot.setflags(write=False)
        return snapshot

    def state(self):
        return {"buffer": np.array(self.buffer), "meta": np.array([self.size, self.cursor], dtype=np.float64)}

    def load_state(self, state):
        buffer = np.asarray(state["buffer"])
        if buffer.shape != self.buffer.shape:
            raise ShapeMismatchError(f"bank state {buffer.shape} does not fit {self.buffer.shape}")
        self.buffer = buffer.astype(self.buffer.dtype, copy=True)
        self.size, self.cursor = (int(v) for v in state["meta"])
