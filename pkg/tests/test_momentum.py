# imports
import numpy as np
import pytest
from conftest import unit_rows
from numpy.testing import assert_allclose, assert_array_equal

from skeattn_utils.autodiff import Parameter
from skeattn_utils.errors import OutOfRangeError, ShapeMismatchError, StructureMismatchError
from skeattn_utils.momentum import MemoryBank, dynamic_momentum, momentum_update
from skeattn_utils.predictor import Predictor


def test_dynamic_momentum_closed_form():
    assert dynamic_momentum(0, 100, 0.996) == pytest.approx(0.996)
    assert dynamic_momentum(100, 100, 0.996) == pytest.approx(1.0)
    assert dynamic_momentum(50, 100, 0.996) == pytest.approx(0.998)
    values = [dynamic_momentum(i, 37, 0.99) for i in range(38)]
    assert all(b >= a for a, b in zip(values, values[1:]))
    assert min(values) >= 0.99 and max(values) <= 1.0


def test_dynamic_momentum_range():
    with pytest.raises(OutOfRangeError):
        dynamic_momentum(11, 10, 0.996)
    with pytest.raises(OutOfRangeError):
        dynamic_momentum(-1, 10, 0.996)
    with pytest.raises(OutOfRangeError):
        dynamic_momentum(0, 10, 1.0)


def test_momentum_update_edge_cases():
    key = {"w": Parameter(np.zeros(3), trainable=False)}
    query = {"w": Parameter(np.ones(3))}
    momentum_update(key, query, 1.0)
    assert_array_equal(key["w"].data, 0.0)
    momentum_update(key, query, 0.996)
    assert_allclose(key["w"].data, 0.004)
    momentum_update(key, query, 0.0)
    assert_array_equal(key["w"].data, 1.0)


def test_momentum_update_matches_closed_form_ema():
    rng = np.random.default_rng(5)
    key = {"a": Parameter(np.array([0.3]), trainable=False), "b": Parameter(np.array([-1.2]), trainable=False)}
    query = {"a": Parameter(np.array([0.0])), "b": Parameter(np.array([0.0]))}
    history = {name: [] for name in query}
    coefficients = []
    start = {name: float(p.data[0]) for name, p in key.items()}

    for step in range(25):
        for name in query:
            query[name].assign(rng.normal(size=1))
            history[name].append(float(query[name].data[0]))
        m = dynamic_momentum(step, 24, 0.9)
        coefficients.append(m)
        momentum_update(key, query, m)

    for name in key:
        expected = start[name] * np.prod(coefficients)
        for i, value in enumerate(history[name]):
            expected += (1 - coefficients[i]) * value * np.prod(coefficients[i + 1 :])
        assert abs(key[name].data[0] - expected) < 1e-5


def test_momentum_update_modules_and_errors():
    query = Predictor(8, 4, seed=1, dtype=np.float64)
    key = query.frozen_copy()
    query.params["fc0.weight"].assign(query.params["fc0.weight"].data + 1.0)
    momentum_update(key, query, 0.5)
    assert_allclose(key.params["fc0.weight"].data, query.params["fc0.weight"].data - 0.5)

    with pytest.raises(StructureMismatchError):
        momentum_update(key, Predictor(8, 4, layers=1), 0.5)
    with pytest.raises(StructureMismatchError):
        momentum_update(key, Predictor(6, 4), 0.5)
    with pytest.raises(OutOfRangeError):
        momentum_update(key, query, 1.5)


def test_bank_fifo_small(rng):
    bank = MemoryBank(4, 3)
    vectors = unit_rows(rng, 6, 3).astype(np.float32)
    bank.enqueue(vectors[:2])
    assert len(bank) == 2 and not bank.is_full
    bank.enqueue(vectors[2:])
    assert bank.is_full
    assert_array_equal(bank.contents(), vectors[2:])


def test_bank_bit_identical_retrieval(rng):
    bank = MemoryBank(8, 5, dtype=np.float64)
    vectors = unit_rows(rng, 3, 5)
    bank.enqueue(vectors)
    assert bank.contents().tobytes() == vectors.tobytes()


def test_bank_fifo_randomized():
    rng = np.random.default_rng(9)
    for _ in range(10000):
        capacity = int(rng.integers(1, 7))
        bank = MemoryBank(capacity, 2, dtype=np.float64)
        history = []
        for _ in range(int(rng.integers(1, 5))):
            batch = unit_rows(rng, int(rng.integers(1, 9)), 2)
            bank.enqueue(batch)
            history.extend(batch)
        expected = np.array(history[-capacity:])
        assert_array_equal(bank.contents(), expected)
        assert len(bank) == len(expected)


def test_bank_rejects_bad_vectors(rng):
    bank = MemoryBank(4, 3)
    with pytest.raises(OutOfRangeError):
        bank.enqueue(np.ones((2, 3)))
    with pytest.raises(ShapeMismatchError):
        bank.enqueue(unit_rows(rng, 2, 4))


def test_random_bank_and_snapshot():
    bank = MemoryBank.random(16, 8, seed=[1, 3])
    assert bank.is_full
    assert_allclose(np.linalg.norm(bank.contents(), axis=1), 1.0, atol=1e-5)
    snapshot = bank.snapshot()
    with pytest.raises(ValueError):
        snapshot[0, 0] = 2.0


def test_bank_state(rng):
    bank = MemoryBank(5, 3)
    bank.enqueue(unit_rows(rng, 7, 3))
    restored = MemoryBank(5, 3)
    restored.load_state(bank.state())
    assert_array_equal(restored.contents(), bank.contents())
    assert (restored.size, restored.cursor) == (bank.size, bank.cursor)
    with pytest.raises(ShapeMismatchError):
        MemoryBank(4, 3).load_state(bank.state())
