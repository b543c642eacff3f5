"""Least-squares polynomial fits of ReLU over a symmetric range [-a, a]."""

import json
from dataclasses import dataclass

import numpy as np

from .activations import ActivationSpec, horner

DEFAULT_DX = 1e-3


def relu(x):
    return np.maximum(x, 0.0)


@dataclass(frozen=True)
class PolyCoefficients:
    w: tuple
    range_a: float
    degree_D: int
    residual: float

    def __post_init__(self):
        if len(self.w) != self.degree_D + 1:
            raise ValueError(f"{len(self.w)} coefficients for degree {self.degree_D}")
        if self.residual < 0:
            raise ValueError("residual must be non-negative")

    def activation(self):
        return ActivationSpec.polynomial(self.w)

    def to_json(self):
        return json.dumps({"a": self.range_a, "D": self.degree_D, "w": list(self.w),
                           "residual": self.residual})

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(tuple(d["w"]), d["a"], d["D"], d["residual"])


def sample_points(a, dx):
    """Midpoints of the cells of width ~dx tiling [-a, a]."""
    if not a > 0 or not dx > 0 or dx > a:
        raise ValueError(f"need a > 0 and 0 < dx <= a, got a={a}, dx={dx}")
    n = max(int(round(2 * a / dx)), 1)
    h = 2 * a / n
    return -a + h * (np.arange(n) + 0.5), h


def _objective(w, a, dx, target):
    # Riemann sum of the squared residual divided by the range length 2a,
    # i.e. the mean squared error of the fit over [-a, a]
    x, h = sample_points(a, dx)
    r = horner(w, x) - target(x)
    return float(np.sum(r * r) * h / (2 * a))


def fit_relu(a, D, dx=DEFAULT_DX, target=relu):
    """Coefficients w0..wD minimising the discretised squared error against
    ``target`` (ReLU by default) on [-a, a].

    The Vandermonde system is built in the scaled variable t = x / a, which
    keeps its columns on a common [-1, 1] scale, and solved with an SVD-based
    least-squares routine; coefficients are mapped back with w_d = c_d / a**d.
    """
    D = int(D)
    if not 1 <= D <= 16:
        raise ValueError(f"degree must lie in [1, 16], got {D}")
    x, _ = sample_points(a, dx)
    if len(x) < D + 1:
        raise ValueError(f"{len(x)} sample points cannot determine a degree-{D} fit")
    t = x / a
    vander = np.vander(t, D + 1, increasing=True)
    c, *_ = np.linalg.lstsq(vander, target(x), rcond=None)
    w = c / a ** np.arange(D + 1)
    w = tuple(float(v) for v in w)
    return PolyCoefficients(w, float(a), D, _objective(w, a, dx, target))


def fit_error(coeffs, dx=DEFAULT_DX, target=relu):
    """Discretised objective for arbitrary coefficients over ``coeffs.range_a``."""
    return _objective(coeffs.w, coeffs.range_a, dx, target)
