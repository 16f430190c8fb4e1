# imports
import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from skeattn_utils.errors import StructureMismatchError
from skeattn_utils.layers import Module, get_initializer
from skeattn_utils.predictor import Predictor


@pytest.mark.parametrize(
    "name,bound",
    [
        ("kaiming_uniform", np.sqrt(6.0 / 16)),
        ("xavier_uniform", np.sqrt(6.0 / 24)),
        ("uniform_fan_in", 0.25),
    ],
)
def test_uniform_initializers_respect_bounds(name, bound):
    values = get_initializer(name)((16, 8), 16, np.random.default_rng(0))
    assert values.shape == (16, 8)
    assert np.abs(values).max() <= bound


def test_other_initializers():
    rng = np.random.default_rng(0)
    assert not get_initializer("zeros")((3, 2), 3, rng).any()
    assert np.abs(get_initializer("random_normal")((100,), 1, rng)).max() < 0.1
    with pytest.raises(ValueError):
        get_initializer("orthogonal")


def make_module():
    module = Module(np.float64)
    module.add_parameter("w", np.arange(6.0).reshape(2, 3))
    module.add_parameter("b", np.zeros(3))
    return module


def test_state_dict_round_trip():
    module = make_module()
    state = module.state_dict(prefix="m.")
    assert sorted(state) == ["m.b", "m.w"]

    other = make_module()
    other.params["w"].assign(np.ones((2, 3)))
    other.load_state_dict(state, prefix="m.")
    assert_array_equal(other.params["w"].data, module.params["w"].data)


def test_load_state_dict_rejects_other_structures():
    module = make_module()
    with pytest.raises(StructureMismatchError):
        module.load_state_dict({"w": np.zeros((2, 3))})
    with pytest.raises(StructureMismatchError):
        module.load_state_dict({"w": np.zeros((2, 3)), "b": np.zeros(3), "extra": np.zeros(1)})


def test_clone_owns_its_parameters():
    module = make_module()
    twin = module.frozen_copy()
    assert not twin.trainable and module.trainable
    twin.params["w"].assign(np.zeros((2, 3)))
    assert module.params["w"].data.any()
    assert module.clone(trainable=True).trainable


def test_predictor_shapes_and_depths(rng):
    x = rng.normal(size=(5, 8))
    two = Predictor(8, 4, seed=3, dtype=np.float64)
    assert two(x).shape == (5, 4)
    assert sorted(two.params) == ["fc0.bias", "fc0.weight", "fc1.bias", "fc1.weight"]

    one = Predictor(8, 4, layers=1, dtype=np.float64)
    expected = x @ one.params["fc0.weight"].data + one.params["fc0.bias"].data
    assert_allclose(one(x).data, expected)

    with pytest.raises(ValueError):
        Predictor(8, 4, layers=3)


def test_predictor_embedding_is_unit_norm(rng):
    z = Predictor(8, 6, seed=1).embed(rng.normal(size=(4, 8)).astype(np.float32))
    assert z.dtype == np.float32
    assert_allclose(np.linalg.norm(z.data, axis=1), 1.0, atol=1e-5)
