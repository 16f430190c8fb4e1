# imports
import numpy as np
import pytest
from conftest import unit_rows
from numpy.testing import assert_allclose

from skeattn_utils.autodiff import Parameter, Tensor, gradients, l2_normalize
from skeattn_utils.config import LossWeights
from skeattn_utils.errors import EmptyBankError, NonFiniteError, ShapeMismatchError
from skeattn_utils.gradcheck import finite_difference_check
from skeattn_utils.losses import (
    LossBreakdown,
    breakdown,
    combine_local,
    contrast,
    info_nce,
    local_losses,
    total_loss,
)


def scalar_contrast(anchor, positive, bank, tau, extra=None):
    """
    Per-sample loop oracle of the contrastive loss
    """
    losses = []
    for b in range(len(anchor)):
        pos = np.exp(np.dot(anchor[b], positive[b]) / tau)
        denominator = pos
        if extra is not None:
            denominator += np.exp(np.dot(anchor[b], extra[b]) / tau)
        for m in bank:
            denominator += np.exp(np.dot(anchor[b], m) / tau)
        losses.append(-np.log(pos / denominator))
    return sum(losses) / len(losses)


def test_symmetric_logits_give_ln2():
    z_q = Tensor([[1.0, 0.0]])
    z_k = np.array([[0.0, 1.0]])
    bank = np.array([[0.0, -1.0]])
    for tau in (0.07, 0.2, 1.0):
        assert abs(info_nce(z_q, z_k, bank, tau).item() - np.log(2)) < 1e-9


def test_info_nce_closed_form():
    loss = info_nce(Tensor([[1.0, 0.0]]), np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]), 0.2)
    assert loss.item() == pytest.approx(np.log1p(np.exp(-5.0)), rel=1e-12)
    assert loss.item() == pytest.approx(0.00672, abs=1e-5)


def test_batched_losses_match_scalar_oracle():
    rng = np.random.default_rng(21)
    weights = LossWeights(temperature=0.2, mu=0.5)
    for _ in range(100):
        batch, size, dim = int(rng.integers(1, 9)), int(rng.integers(1, 65)), int(rng.integers(2, 9))
        q, k, q_ns, k_ns = (unit_rows(rng, batch, dim) for _ in range(4))
        bank = unit_rows(rng, size, dim)

        got = info_nce(Tensor(q), k, bank, 0.2).item()
        assert got == pytest.approx(scalar_contrast(q, k, bank, 0.2), rel=1e-6)

        l_s, l_ns, l_local = local_losses(Tensor(q), k, Tensor(q_ns), k_ns, bank, weights)
        expected_s = scalar_contrast(q, k, bank, 0.2, extra=q_ns)
        expected_ns = scalar_contrast(q_ns, k_ns, bank, 0.2, extra=q)
        assert l_s.item() == pytest.approx(expected_s, rel=1e-6)
        assert l_ns.item() == pytest.approx(expected_ns, rel=1e-6)
        assert l_local.item() == pytest.approx(0.5 * expected_s + 0.5 * expected_ns, rel=1e-6)
        assert got > 0


def test_salient_closed_form():
    q_s = Tensor([[1.0, 0.0]])
    q_ns = Tensor([[0.0, 1.0]])
    bank = np.array([[0.0, -1.0]])
    l_s, _, _ = local_losses(q_s, q_s.data, q_ns, q_ns.data, bank, LossWeights(temperature=1.0))
    assert l_s.item() == pytest.approx(np.log(np.e + 2) - 1, rel=1e-12)
    assert l_s.item() == pytest.approx(0.5514, abs=1e-4)


def test_mirror_symmetry(rng):
    q_s, k_s, q_ns, k_ns = (unit_rows(rng, 3, 8) for _ in range(4))
    bank = unit_rows(rng, 10, 8)
    weights = LossWeights()
    l_s, l_ns, l_local = local_losses(Tensor(q_s), k_s, Tensor(q_ns), k_ns, bank, weights)
    m_s, m_ns, m_local = local_losses(Tensor(q_ns), k_ns, Tensor(q_s), k_s, bank, weights)
    assert m_s.item() == l_ns.item()
    assert m_ns.item() == l_s.item()
    assert m_local.item() == pytest.approx(l_local.item())


def test_ablation_switches(rng):
    q_s, k_s, q_ns, k_ns = (unit_rows(rng, 2, 4) for _ in range(4))
    bank = unit_rows(rng, 5, 4)
    weights = LossWeights(temperature=0.5)
    full = local_losses(Tensor(q_s), k_s, Tensor(q_ns), k_ns, bank, weights)
    no_pair = local_losses(Tensor(q_s), k_s, Tensor(q_ns), k_ns, bank, weights, negative_pair=False)
    no_ns = local_losses(Tensor(q_s), k_s, Tensor(q_ns), k_ns, bank, weights, use_ns=False)

    assert no_pair[0].item() == pytest.approx(scalar_contrast(q_s, k_s, bank, 0.5))
    assert no_pair[0].item() < full[0].item()
    assert no_ns[2].item() == full[0].item()


def test_combine_and_total():
    assert combine_local(2.0, 4.0, 0.5) == 3.0
    assert total_loss(0.5, 0.3) == pytest.approx(0.8)
    assert total_loss(Tensor(0.5), 0.0).item() == 0.5
    assert total_loss(0.3, 0.5) == total_loss(0.5, 0.3)
    with pytest.raises(NonFiniteError):
        total_loss(np.inf, 0.0)


def test_bank_errors(rng):
    z = Tensor(unit_rows(rng, 2, 4))
    with pytest.raises(EmptyBankError):
        info_nce(z, z.data, np.zeros((0, 4)), 0.2)
    with pytest.raises(ShapeMismatchError):
        info_nce(z, z.data, unit_rows(rng, 3, 5), 0.2)
    with pytest.raises(ShapeMismatchError):
        info_nce(z, unit_rows(rng, 3, 4), unit_rows(rng, 3, 4), 0.2)


def test_gradient_only_through_query(rng):
    q = Parameter(rng.normal(size=(3, 6)), dtype=np.float64)
    k = Parameter(rng.normal(size=(3, 6)), dtype=np.float64)
    bank = unit_rows(rng, 8, 6)
    loss = info_nce(l2_normalize(q), l2_normalize(k), bank, 0.2)
    grads = gradients(loss, {"q": q, "k": k})
    assert np.abs(grads["q"]).sum() > 0
    assert not grads["k"].any()


def test_local_loss_gradients_match_finite_differences(rng):
    q_s = Parameter(rng.normal(size=(2, 6)), dtype=np.float64)
    q_ns = Parameter(rng.normal(size=(2, 6)), dtype=np.float64)
    k_s, k_ns = unit_rows(rng, 2, 6), unit_rows(rng, 2, 6)
    bank = unit_rows(rng, 7, 6)

    def fn():
        return local_losses(l2_normalize(q_s), k_s, l2_normalize(q_ns), k_ns, bank, LossWeights())[2]

    report = finite_difference_check(fn, {"q_s": q_s, "q_ns": q_ns})
    assert report.max_error <= 1e-4


def test_breakdown_row():
    parts = breakdown(Tensor(1.0), 2.0, Tensor(3.0), 2.5, 3.5)
    assert parts == LossBreakdown(1.0, 2.0, 3.0, 2.5, 3.5)
    assert list(parts.as_row()) == ["L_info", "L_s", "L_ns", "L_local", "L"]
