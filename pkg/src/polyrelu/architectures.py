"""Model builders used by the experiments.

The LeNet variant uses average pooling so ReLU is the only nonlinearity that
gets substituted.
"""

import numpy as np

from .activations import Activation, ActivationSpec
from .errors import StructuralError
from .layers import AvgPool2d, Conv2d, Dense, Flatten
from .network import Network


def mlp(input_shape=(1, 28, 28), hidden=(128,), classes=10, activation=None, seed=0,
        init="relu"):
    """Flatten -> [Dense -> act]* -> Dense.  ``hidden=()`` gives logistic regression."""
    activation = activation or ActivationSpec.relu()
    rng = np.random.default_rng(seed)
    width = int(np.prod(input_shape))
    layers = [Flatten()]
    for h in hidden:
        layers += [Dense(width, h, rng=rng, init=init), Activation(activation)]
        width = h
    layers.append(Dense(width, classes, rng=rng, init=init))
    return Network(layers, input_shape=input_shape)


def lenet(input_shape=(1, 28, 28), classes=10, activation=None, seed=0, init="relu"):
    """conv5(6, pad 2) -> act -> avgpool -> conv5(16) -> act -> avgpool -> flatten
    -> dense120 -> act -> dense84 -> act -> dense(classes)."""
    activation = activation or ActivationSpec.relu()
    rng = np.random.default_rng(seed)
    if len(input_shape) != 3 or min(input_shape[1:]) < 12:
        raise StructuralError(f"lenet needs (channels, height, width) images of at least 12x12, "
                              f"got {tuple(input_shape)}")
    c, h, w = input_shape
    flat = 16 * ((h // 2 - 4) // 2) * ((w // 2 - 4) // 2)
    layers = [
        Conv2d(c, 6, 5, padding=2, rng=rng, init=init), Activation(activation), AvgPool2d(2),
        Conv2d(6, 16, 5, rng=rng, init=init), Activation(activation), AvgPool2d(2),
        Flatten(),
        Dense(flat, 120, rng=rng, init=init), Activation(activation),
        Dense(120, 84, rng=rng, init=init), Activation(activation),
        Dense(84, classes, rng=rng, init=init),
    ]
    return Network(layers, input_shape=input_shape)


ARCHITECTURES = {"mlp": mlp, "lenet": lenet}


def build(name, input_shape, classes, seed=0, **kwargs):
    try:
        builder = ARCHITECTURES[name]
    except KeyError:
        raise ValueError(f"unknown architecture {name!r}; choose from {sorted(ARCHITECTURES)}")
    return builder(input_shape=input_shape, classes=classes, seed=seed, **kwargs)
