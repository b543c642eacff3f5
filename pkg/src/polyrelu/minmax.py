"""Approximate min-max normalisation.

Training rescales each dimension with the true batch extremes and folds them
into exponential moving averages; inference reuses the stored averages, so
inputs outside the stored range are *not* clamped and overshoot is visible.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import StructuralError, UsageError
from .layers import Layer

APPROX = "approx"
TRUE = "true"


def dimension_layout(shape):
    """Reduction axes and slot count for per-dimension statistics.

    (batch, features) -> one slot per feature; (batch, C, H, W) -> one slot per
    channel, reduced over batch and spatial positions.
    """
    shape = tuple(shape)
    if len(shape) < 2:
        raise StructuralError(f"min-max normalisation needs a batch axis, got shape {shape}")
    if len(shape) == 2:
        return (0,), shape[1]
    return (0,) + tuple(range(2, len(shape))), shape[1]


def _broadcast(vec, ndim):
    return vec.reshape((1, -1) + (1,) * (ndim - 2))


@dataclass
class MinMaxState:
    alpha: float = 2.0
    beta: float = 1.0
    gamma: float = 0.1
    epsilon: float = 1e-6
    running_min: np.ndarray = None
    running_max: np.ndarray = None
    initialized: bool = False
    updates: int = field(default=0)

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")

    def to_dict(self):
        return {
            "alpha": self.alpha, "beta": self.beta, "gamma": self.gamma,
            "epsilon": self.epsilon, "initialized": self.initialized, "updates": self.updates,
        }


def _batch_extremes(x):
    axes, _ = dimension_layout(x.shape)
    return x.min(axis=axes), x.max(axis=axes)


def _scale(state, x, lo, hi):
    lo = _broadcast(lo, x.ndim)
    hi = _broadcast(hi, x.ndim)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        factor = state.alpha / (hi - lo + state.epsilon)
        return factor * (x - lo) - state.beta, factor


def forward_train(state, x, return_factor=False):
    """Normalise with batch extremes and update the running averages."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] < 1:
        raise StructuralError("empty batch")
    lo, hi = _batch_extremes(x)
    if not state.initialized:
        state.running_min = lo.copy()
        state.running_max = hi.copy()
        state.initialized = True
    else:
        if state.running_min.shape != lo.shape:
            raise StructuralError(f"statistics for {state.running_min.shape[0]} dimensions, "
                                  f"batch has {lo.shape[0]}")
        g = state.gamma
        state.running_min = (1 - g) * state.running_min + g * lo
        state.running_max = (1 - g) * state.running_max + g * hi
    state.updates += 1
    y, factor = _scale(state, x, lo, hi)
    return (y, factor) if return_factor else y


def forward_eval(state, x, return_factor=False):
    """Normalise with the stored running extremes; no statistics update."""
    if not state.initialized:
        raise UsageError("min-max normalisation evaluated before any training batch")
    x = np.asarray(x, dtype=np.float64)
    _, slots = dimension_layout(x.shape)
    if slots != state.running_min.shape[0]:
        raise StructuralError(f"statistics for {state.running_min.shape[0]} dimensions, "
                              f"input has {slots}")
    y, factor = _scale(state, x, state.running_min, state.running_max)
    return (y, factor) if return_factor else y


def forward_true(state, x, return_factor=False):
    """Diagnostic twin: normalise with the current input's own extremes, no update."""
    x = np.asarray(x, dtype=np.float64)
    lo, hi = _batch_extremes(x)
    y, factor = _scale(state, x, lo, hi)
    return (y, factor) if return_factor else y


class MinMaxNorm(Layer):
    """Layer wrapper.  ``eval_mode`` is ``"approx"`` (running averages) or ``"true"``."""

    kind = "minmax_norm"

    def __init__(self, state=None, eval_mode=APPROX):
        super().__init__()
        self.state = state or MinMaxState()
        self.eval_mode = eval_mode

    def forward(self, x, train=False, record=True):
        if train:
            y, factor = forward_train(self.state, x, return_factor=True)
        elif self.eval_mode == TRUE:
            y, factor = forward_true(self.state, x, return_factor=True)
        else:
            y, factor = forward_eval(self.state, x, return_factor=True)
        if record:
            self._cache = factor
        return y

    def backward(self, grad_out, need_input_grad=True):
        # batch extremes are treated as constants
        factor = self._take_cache()
        if not need_input_grad:
            return None
        with np.errstate(invalid="ignore", over="ignore"):
            return grad_out * factor

    def config(self):
        return {"kind": self.kind, "eval_mode": self.eval_mode, "state": self.state.to_dict()}
