"""
Predictor heads mapping pooled features to contrastive embeddings
"""

import numpy as np

from skeattn_utils.autodiff import Tensor, l2_normalize
from skeattn_utils.layers import Module, dense, get_initializer


class Predictor(Module):
    """
    C_f -> C_f -> C_z with a ReLU in between, or a single C_f -> C_z layer

    :param in_features: pooled feature width C_f
    :param out_features: embedding width C_z
    :param layers: 1 or 2
    :param seed: initialisation seed
    :param dtype: parameter precision
    """

    def __init__(self, in_features, out_features=128, layers=2, seed=0, dtype=np.float32):
        super().__init__(dtype)
        if layers not in (1, 2):
            raise ValueError("Invalid predictor depth. Must be one of [1, 2]")
        self.in_features = in_features
        self.out_features = out_features
        self.layers = layers

        init = get_initializer("uniform_fan_in")
        rng = np.random.default_rng(seed)
        widths = [in_features] * layers + [out_features]
        for i in range(layers):
            self.add_parameter(f"fc{i}.weight", init((widths[i], widths[i + 1]), widths[i], rng))
            self.add_parameter(f"fc{i}.bias", init((widths[i + 1],), widths[i], rng))

    def __call__(self, x):
        return self.forward(x)

    def forward(self, x):
        """
        Unnormalised prediction of a (B, C_f) batch
        """
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype))
        for i in range(self.layers):
            x = dense(x, self.params[f"fc{i}.weight"], self.params[f"fc{i}.bias"])
            if i < self.layers - 1:
                x = x.relu()
        return x

    def embed(self, x):
        """
        Unit-norm embedding entering the dot-product losses
        """
        return l2_normalize(self.forward(x), axis=-1)
