"""Scalar nonlinearities: ReLU, its first-order Taylor substitute, Quad and polynomials."""

from dataclasses import dataclass

import numpy as np

from .layers import Layer

RELU = "relu"
TAYLOR_RELU = "taylor_relu"
QUAD = "quad"
POLYNOMIAL = "polynomial"
KINDS = (RELU, TAYLOR_RELU, QUAD, POLYNOMIAL)


@dataclass(frozen=True)
class ActivationSpec:
    kind: str
    coefficients: tuple = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown activation kind {self.kind!r}")
        if self.kind == POLYNOMIAL:
            if self.coefficients is None or len(self.coefficients) < 2:
                raise ValueError("polynomial activation needs coefficients w0..wD with D >= 1")
            object.__setattr__(self, "coefficients", tuple(float(c) for c in self.coefficients))
        elif self.coefficients is not None:
            raise ValueError(f"{self.kind} takes no coefficients")

    @classmethod
    def relu(cls):
        return cls(RELU)

    @classmethod
    def taylor(cls):
        return cls(TAYLOR_RELU)

    @classmethod
    def quad(cls):
        return cls(QUAD)

    @classmethod
    def polynomial(cls, w):
        return cls(POLYNOMIAL, tuple(w))

    @property
    def degree(self):
        return {RELU: None, TAYLOR_RELU: 1, QUAD: 2}.get(self.kind, len(self.coefficients or ()) - 1)

    def to_dict(self):
        d = {"kind": self.kind}
        if self.coefficients is not None:
            d["coefficients"] = list(self.coefficients)
        return d

    @classmethod
    def from_dict(cls, d):
        coeffs = d.get("coefficients")
        return cls(d["kind"], None if coeffs is None else tuple(coeffs))


def horner(w, x):
    """Evaluate sum_d w[d] * x**d with Horner's rule."""
    x = np.asarray(x, dtype=np.float64)
    out = np.full_like(x, w[-1])
    for c in w[-2::-1]:
        out = out * x + c
    return out


def polyder(w):
    return tuple(d * w[d] for d in range(1, len(w))) or (0.0,)


def apply(spec, x):
    x = np.asarray(x, dtype=np.float64)
    if spec.kind == RELU:
        return np.maximum(x, 0.0)
    if spec.kind == TAYLOR_RELU:
        return 0.5 * x
    if spec.kind == QUAD:
        return x * x
    return horner(spec.coefficients, x)


def derivative(spec, x):
    # ReLU'(0) is taken to be 0
    x = np.asarray(x, dtype=np.float64)
    if spec.kind == RELU:
        return (x > 0).astype(np.float64)
    if spec.kind == TAYLOR_RELU:
        return np.full_like(x, 0.5)
    if spec.kind == QUAD:
        return 2.0 * x
    return horner(polyder(spec.coefficients), x)


class Activation(Layer):
    kind = "activation"

    def __init__(self, spec):
        super().__init__()
        self.spec = spec

    def forward(self, x, train=False, record=True):
        if record:
            self._cache = x
        return apply(self.spec, x)

    def backward(self, grad_out, need_input_grad=True):
        x = self._take_cache()
        return grad_out * derivative(self.spec, x) if need_input_grad else None

    def config(self):
        return {"kind": self.kind, "spec": self.spec.to_dict()}


def replace_all(net, from_kind, to_spec):
    """Copy of ``net`` with every activation of ``from_kind`` swapped for ``to_spec``.

    Parameters are copied bit-for-bit and the layer count is unchanged.
    """
    new = net.copy()
    for i, layer in enumerate(new.layers):
        if isinstance(layer, Activation) and layer.spec.kind == from_kind:
            new.layers[i] = Activation(to_spec)
    return new


def count_activations(net, kind):
    return sum(isinstance(l, Activation) and l.spec.kind == kind for l in net.layers)
