"""
Contrastive losses

All embeddings entering a loss are unit-norm. Keys and memory bank entries are
treated as constants: gradient flows only through the query-side embeddings.
"""

from dataclasses import dataclass

import numpy as np

from skeattn_utils.autodiff import Tensor, concatenate, logsumexp, matmul, reduce_mean, reduce_sum
from skeattn_utils.errors import EmptyBankError, NonFiniteError, ShapeMismatchError


@dataclass
class LossBreakdown:
    """
    Scalar values of every loss term of one step
    """

    info: float
    salient: float
    non_salient: float
    local: float
    total: float

    def as_row(self):
        return {
            "L_info": self.info,
            "L_s": self.salient,
            "L_ns": self.non_salient,
            "L_local": self.local,
            "L": self.total,
        }


def _rows(t):
    return t.reshape(1, t.shape[0]) if t.ndim == 1 else t


def _constant(value, dtype):
    data = value.data if isinstance(value, Tensor) else np.asarray(value)
    return Tensor(data.astype(dtype, copy=False))


def _check_bank(bank, dim):
    bank = np.asarray(bank)
    if bank.ndim != 2 or len(bank) == 0:
        raise EmptyBankError("the memory bank holds no negatives")
    if bank.shape[1] != dim:
        raise ShapeMismatchError(f"bank vectors have width {bank.shape[1]}, embeddings {dim}")
    return bank


def contrast(anchor, positive, bank, temperature, extra_negative=None):
    """
    Mean over the batch of -log(exp(a.p/t) / (exp(a.p/t) + [exp(a.x/t)] + sum_i exp(a.m_i/t)))

    :param anchor: (B, C) Tensor carrying gradient
    :param positive: (B, C) positive embeddings, used as constants
    :param bank: (K, C) array of negatives
    :param temperature: tau
    :param extra_negative: optional (B, C) Tensor paired negative, gradient flows through it
    :return: scalar Tensor
    """
    anchor = _rows(anchor)
    dtype = anchor.dtype
    positive = _rows(_constant(positive, dtype))
    bank = _check_bank(bank, anchor.shape[-1])
    if positive.shape != anchor.shape:
        raise ShapeMismatchError(f"anchor {anchor.shape} and positive {positive.shape} differ")

    columns = [reduce_sum(anchor * positive, axis=-1, keepdims=True)]
    if extra_negative is not None:
        columns.append(reduce_sum(anchor * _rows(extra_negative), axis=-1, keepdims=True))
    columns.append(matmul(anchor, Tensor(bank.T.astype(dtype))))

    logits = concatenate(columns, axis=-1) * (1.0 / temperature)
    positive_logit = columns[0].reshape(anchor.shape[0]) * (1.0 / temperature)
    return reduce_mean(logsumexp(logits, axis=-1) - positive_logit)


def info_nce(z_q, z_k, bank, temperature):
    """
    Global instance discrimination loss of query embeddings against their keys and the bank
    """
    return contrast(z_q, z_k, bank, temperature)


def local_losses(q_s, k_s, q_ns, k_ns, bank, weights, negative_pair=True, use_ns=True):
    """
    Salient and non-salient contrastive losses and their weighted sum

    L_s contrasts q_s with k_s against q_ns (when negative_pair) and the bank;
    L_ns mirrors it. L_local = mu * L_s + (1 - mu) * L_ns, or L_s alone when
    use_ns is off.

    :param weights: LossWeights giving temperature and mu
    :return: (L_s, L_ns, L_local) scalar Tensors
    """
    tau = weights.temperature
    salient = contrast(q_s, k_s, bank, tau, q_ns if negative_pair else None)
    non_salient = contrast(q_ns, k_ns, bank, tau, q_s if negative_pair else None)
    if not use_ns:
        return salient, non_salient, salient
    return salient, non_salient, combine_local(salient, non_salient, weights.mu)


def combine_local(l_s, l_ns, mu):
    """
    Weighted local loss mu * L_s + (1 - mu) * L_ns
    """
    return mu * l_s + (1 - mu) * l_ns


def total_loss(l_info, l_local):
    """
    L = L_info + L_local

    :raises NonFiniteError: if either term or the sum is not finite
    """
    total = l_info + l_local
    value = total.item() if isinstance(total, Tensor) else float(total)
    if not np.isfinite(value):
        raise NonFiniteError(f"non-finite total loss {value}")
    return total


def _value(term):
    return term.item() if isinstance(term, Tensor) else float(term)


def breakdown(l_info, l_s, l_ns, l_local, total):
    return LossBreakdown(_value(l_info), _value(l_s), _value(l_ns), _value(l_local), _value(total))
