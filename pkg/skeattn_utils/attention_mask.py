"""
Multi-head self-attention soft mask over feature locations

A feature map f (n locations x C_f channels, optionally batched) goes through
scaled dot-product attention with h heads; a channel-preserving projection
scaled by the gain lambda and a sigmoid turn the attended features into a
mask of the same shape. Mask pooling then splits f into a salient and a
non-salient vector whose sum is the global average of f.
"""

import numpy as np

from skeattn_utils.autodiff import Tensor, matmul, no_grad, sigmoid, softmax
from skeattn_utils.errors import HeadDivisibilityError, InvalidConfigError, ShapeMismatchError
from skeattn_utils.layers import Module, get_initializer

MHSAM_WEIGHTS = ("w_q", "w_k", "w_v", "proj")


class MHSAM(Module):
    """
    Attention-mask parameters

    :param channels: feature channels C_f
    :param heads: attention heads h, must divide C_f
    :param lam: polarization gain lambda
    :param initializer: weight initializer name
    :param seed: initialisation seed
    :param dtype: parameter precision
    """

    def __init__(self, channels, heads=8, lam=2.0, initializer="uniform_fan_in", seed=0, dtype=np.float32):
        super().__init__(dtype)
        if channels % heads != 0:
            raise HeadDivisibilityError(f"{channels} channels cannot be split into {heads} heads")
        if not lam > 0:
            raise InvalidConfigError(f"lambda must be positive, got {lam}")
        self.channels = channels
        self.heads = heads
        self.lam = lam
        init = get_initializer(initializer)
        rng = np.random.default_rng(seed)
        for name in MHSAM_WEIGHTS:
            self.add_parameter(name, init((channels, channels), channels, rng))

    @property
    def head_width(self):
        return self.channels // self.heads


def get_mhsam(mhsam_cfg, channels, seed=0, dtype=np.float32):
    return MHSAM(channels, mhsam_cfg.heads, mhsam_cfg.lam, seed=seed, dtype=dtype)


def _split_heads(x, heads):
    # (B, n, C) -> (B, h, n, d)
    batch, locations, channels = x.shape
    return x.reshape(batch, locations, heads, channels // heads).transpose(0, 2, 1, 3)


def attend(f, mhsam):
    """
    Concatenated multi-head attention output x_attn, same shape as f
    """
    batched = f.ndim == 3
    if not batched:
        f = f.reshape((1,) + f.shape)
    if f.shape[-1] != mhsam.channels:
        raise HeadDivisibilityError(
            f"feature map has {f.shape[-1]} channels, attention mask expects {mhsam.channels}"
        )
    batch, locations, channels = f.shape
    params = mhsam.params

    query = _split_heads(matmul(f, params["w_q"]), mhsam.heads)
    key = _split_heads(matmul(f, params["w_k"]), mhsam.heads)
    value = _split_heads(matmul(f, params["w_v"]), mhsam.heads)

    scores = matmul(query, key.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(mhsam.head_width))
    attended = matmul(softmax(scores, axis=-1), value)
    out = attended.transpose(0, 2, 1, 3).reshape(batch, locations, channels)
    return out if batched else out.reshape(locations, channels)


def compute_mask(f, mhsam, lam=None):
    """
    Soft mask M_s = sigmoid(lambda * proj(x_attn)), entries strictly inside (0, 1)

    :param f: (n, C_f) or (B, n, C_f) feature map
    :param mhsam: MHSAM parameters
    :param lam: gain overriding mhsam.lam
    :return: Tensor shaped like f
    """
    if f.shape[-1] % mhsam.heads != 0:
        raise HeadDivisibilityError(f"{f.shape[-1]} channels cannot be split into {mhsam.heads} heads")
    lam = mhsam.lam if lam is None else lam
    return sigmoid(matmul(attend(f, mhsam), mhsam.params["proj"]) * lam)


def complement(m):
    """
    Non-salient mask M_ns = 1 - M_s
    """
    return 1.0 - m


def mask_pool(f, m):
    """
    Masked sum over the n locations divided by n (not by the mask mass)
    """
    if f.shape != m.shape:
        raise ShapeMismatchError(f"feature map {f.shape} and mask {m.shape} differ in shape")
    return (f * m).mean(axis=-2)


def split_salient(f_query, f_key, mhsam, key_mhsam=None, mask=None):
    """
    Pool query and key feature maps into salient and non-salient vectors

    The query mask governs both branches unless a momentum twin key_mhsam is
    given. No gradient reaches f_key or the key-side mask.

    :param f_query: feature map of the mixed view, carries gradient
    :param f_key: feature map of the key view
    :param mhsam: query-side MHSAM
    :param key_mhsam: optional frozen MHSAM computing a separate key-side mask
    :param mask: precomputed query mask, computed from f_query when None
    :return: (f_s, f_ns, f_ks, f_kns)
    """
    if f_query.shape != f_key.shape:
        raise ShapeMismatchError(
            f"query feature map {f_query.shape} and key feature map {f_key.shape} differ"
        )
    m = compute_mask(f_query, mhsam) if mask is None else mask
    f_s = mask_pool(f_query, m)
    f_ns = mask_pool(f_query, complement(m))

    with no_grad():
        f_key = f_key.detach() if isinstance(f_key, Tensor) else Tensor(f_key)
        key_mask = m.detach() if key_mhsam is None else compute_mask(f_key, key_mhsam)
        f_ks = mask_pool(f_key, key_mask)
        f_kns = mask_pool(f_key, complement(key_mask))
    return f_s, f_ns, f_ks, f_kns
