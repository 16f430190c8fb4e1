"""
Parameter containers and initializers shared by the encoder, mask and heads
"""

import copy

import numpy as np

from skeattn_utils.autodiff import Parameter, matmul
from skeattn_utils.errors import StructureMismatchError


def get_initializer(initializer_function):
    """
    Get the weight initializer for a layer

    Every initializer is called as init(shape, fan_in, rng) and returns an array.

    :param initializer_function: one of ['kaiming_uniform', 'xavier_uniform', 'uniform_fan_in', 'random_normal', 'zeros']
    :return: initializer function
    """

    if initializer_function == "kaiming_uniform":

        def initializer(shape, fan_in, rng):
            bound = np.sqrt(6.0 / fan_in)
            return rng.uniform(-bound, bound, size=shape)

    elif initializer_function == "xavier_uniform":

        def initializer(shape, fan_in, rng):
            fan_out = shape[-1]
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-bound, bound, size=shape)

    elif initializer_function == "uniform_fan_in":

        def initializer(shape, fan_in, rng):
            bound = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=shape)

    elif initializer_function == "random_normal":

        def initializer(shape, fan_in, rng):
            return rng.normal(0.0, 0.01, size=shape)

    elif initializer_function == "zeros":

        def initializer(shape, fan_in, rng):
            return np.zeros(shape)

    else:
        raise ValueError(
            "Invalid initializer function. Must be one of "
            "['kaiming_uniform', 'xavier_uniform', 'uniform_fan_in', 'random_normal', 'zeros']"
        )

    return initializer


class Module:
    """
    Named collection of parameters

    Subclasses fill self.params (name -> Parameter) in their constructor.
    """

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.params = {}

    def add_parameter(self, name, data, trainable=True):
        self.params[name] = Parameter(data, trainable=trainable, dtype=self.dtype)
        return self.params[name]

    def named_parameters(self, prefix=""):
        return {prefix + name: p for name, p in self.params.items()}

    @property
    def trainable(self):
        return any(p.trainable for p in self.params.values())

    def state_dict(self, prefix=""):
        return {prefix + name: np.array(p.data) for name, p in self.params.items()}

    def load_state_dict(self, state, prefix=""):
        """
        Assign arrays keyed by parameter path. Missing or extra keys are an error
        """
        keys = {key[len(prefix) :] for key in state if key.startswith(prefix)}
        if keys != set(self.params):
            raise StructureMismatchError(
                f"state keys {sorted(keys)} do not match parameters {sorted(self.params)}"
            )
        for name, parameter in self.params.items():
            parameter.assign(state[prefix + name])

    def clone(self, trainable=False):
        """
        Copy of the module with its own parameters, frozen by default
        """
        twin = copy.copy(self)
        twin.params = {
            name: Parameter(p.data, trainable=trainable, dtype=self.dtype)
            for name, p in self.params.items()
        }
        return twin

    def frozen_copy(self):
        return self.clone(trainable=False)


def dense(x, weight, bias=None):
    out = matmul(x, weight)
    return out if bias is None else out + bias
