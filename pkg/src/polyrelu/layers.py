"""Parameterised and structural layers of the sequential engine.

Every layer caches what it needs for its backward pass when ``record`` is
true.  Gradients are *written* (not accumulated) into each parameter's
``grad`` slot.
"""

import copy

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import StructuralError, UsageError
from .tensor import Tensor


INIT_SCHEMES = ("relu", "fan-in")


def kaiming_uniform(rng, shape, fan_in, negative_slope=0.0):
    bound = np.sqrt(6.0 / ((1.0 + negative_slope ** 2) * fan_in))
    return rng.uniform(-bound, bound, size=shape)


def init_params(rng, weight_shape, fan_in, scheme="relu"):
    """Kaiming-uniform weights.

    ``"relu"``: gain for ReLU (bound sqrt(6/fan_in)), zero bias.
    ``"fan-in"``: negative slope sqrt(5), i.e. bound 1/sqrt(fan_in), with the
    bias drawn from the same interval.
    """
    if scheme == "relu":
        return kaiming_uniform(rng, weight_shape, fan_in), np.zeros(weight_shape[0])
    if scheme == "fan-in":
        weight = kaiming_uniform(rng, weight_shape, fan_in, np.sqrt(5.0))
        bound = 1.0 / np.sqrt(fan_in)
        return weight, rng.uniform(-bound, bound, size=weight_shape[0])
    raise ValueError(f"unknown init scheme {scheme!r}; expected one of {INIT_SCHEMES}")


class Layer:
    kind = "layer"

    def __init__(self):
        self.frozen = False
        self._cache = None

    def params(self):
        return {}

    def __deepcopy__(self, memo):
        cls = type(self)
        new = cls.__new__(cls)
        memo[id(self)] = new
        for k, v in self.__dict__.items():
            setattr(new, k, None if k == "_cache" else copy.deepcopy(v, memo))
        return new

    def forward(self, x, train=False, record=True):
        raise NotImplementedError

    def backward(self, grad_out, need_input_grad=True):
        raise NotImplementedError

    def config(self):
        """JSON-serialisable description of everything except parameter arrays."""
        return {"kind": self.kind}

    def _take_cache(self):
        if self._cache is None:
            raise UsageError(f"{self.kind}: backward called without a recorded forward pass")
        cache, self._cache = self._cache, None
        return cache

    def _zero_param_grads(self):
        for p in self.params().values():
            p.zero_grad()

    def __repr__(self):
        return f"{type(self).__name__}({self.config()})"


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_features, out_features, rng=None, weight=None, bias=None, init="relu"):
        super().__init__()
        self.in_features = int(in_features)
        self.out_features = int(out_features)
        if weight is None:
            rng = np.random.default_rng(0) if rng is None else rng
            weight, fresh_bias = init_params(rng, (self.out_features, self.in_features),
                                             self.in_features, init)
            bias = fresh_bias if bias is None else bias
        if bias is None:
            bias = np.zeros(self.out_features)
        self.weight = Tensor(weight)
        self.bias = Tensor(bias)
        if self.weight.shape != (self.out_features, self.in_features):
            raise StructuralError(f"dense weight shape {self.weight.shape}, expected "
                                  f"{(self.out_features, self.in_features)}")
        if self.bias.shape != (self.out_features,):
            raise StructuralError(f"dense bias shape {self.bias.shape}")

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def forward(self, x, train=False, record=True):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise StructuralError(f"dense expects (batch, {self.in_features}), got {x.shape}")
        if record:
            self._cache = x
        return x @ self.weight.data.T + self.bias.data

    def backward(self, grad_out, need_input_grad=True):
        x = self._take_cache()
        if self.frozen:
            self._zero_param_grads()
        else:
            self.weight.grad = grad_out.T @ x
            self.bias.grad = grad_out.sum(axis=0)
        return grad_out @ self.weight.data if need_input_grad else None

    def config(self):
        return {"kind": self.kind, "in_features": self.in_features,
                "out_features": self.out_features}


def _patches(x, kh, kw):
    """(N, C, H, W) -> (N*Ho*Wo, C*kh*kw) im2col matrix (a copy)."""
    n, c, h, w = x.shape
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))  # N, C, Ho, Wo, kh, kw
    ho, wo = win.shape[2], win.shape[3]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw), ho, wo


class Conv2d(Layer):
    """Stride-1 2-D cross-correlation with optional zero padding."""

    kind = "conv2d"

    def __init__(self, in_channels, out_channels, kernel_size, padding=0, rng=None,
                 weight=None, bias=None, init="relu"):
        super().__init__()
        self.in_channels = int(in_channels)
        self.out_channels = int(out_channels)
        self.kernel_size = int(kernel_size)
        self.padding = int(padding)
        k = self.kernel_size
        fan_in = self.in_channels * k * k
        if weight is None:
            rng = np.random.default_rng(0) if rng is None else rng
            weight, fresh_bias = init_params(rng, (self.out_channels, self.in_channels, k, k),
                                             fan_in, init)
            bias = fresh_bias if bias is None else bias
        if bias is None:
            bias = np.zeros(self.out_channels)
        self.weight = Tensor(weight)
        self.bias = Tensor(bias)
        if self.weight.shape != (self.out_channels, self.in_channels, k, k):
            raise StructuralError(f"conv weight shape {self.weight.shape}")
        if self.bias.shape != (self.out_channels,):
            raise StructuralError(f"conv bias shape {self.bias.shape}")

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def forward(self, x, train=False, record=True):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise StructuralError(
                f"conv2d expects (batch, {self.in_channels}, H, W), got {x.shape}")
        p, k = self.padding, self.kernel_size
        if p:
            x = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        if x.shape[2] < k or x.shape[3] < k:
            raise StructuralError(f"conv2d kernel {k} larger than padded input {x.shape[2:]}")
        cols, ho, wo = _patches(x, k, k)
        out = cols @ self.weight.data.reshape(self.out_channels, -1).T + self.bias.data
        if record:
            self._cache = (cols, x.shape)
        return np.ascontiguousarray(
            out.reshape(x.shape[0], ho, wo, self.out_channels).transpose(0, 3, 1, 2))

    def backward(self, grad_out, need_input_grad=True):
        cols, padded_shape = self._take_cache()
        n, o, ho, wo = grad_out.shape
        g2 = grad_out.transpose(0, 2, 3, 1).reshape(-1, o)
        if self.frozen:
            self._zero_param_grads()
        else:
            self.weight.grad = (g2.T @ cols).reshape(self.weight.shape)
            self.bias.grad = g2.sum(axis=0)
        if not need_input_grad:
            return None
        # full correlation of the output gradient with the flipped kernel
        k, p = self.kernel_size, self.padding
        gp = np.pad(grad_out, ((0, 0), (0, 0), (k - 1, k - 1), (k - 1, k - 1)))
        gcols, h, w = _patches(gp, k, k)
        wflip = self.weight.data[:, :, ::-1, ::-1].transpose(0, 2, 3, 1).reshape(-1, self.in_channels)
        dx = (gcols @ wflip).reshape(n, h, w, self.in_channels).transpose(0, 3, 1, 2)
        if p:
            dx = dx[:, :, p:h - p, p:w - p]
        return np.ascontiguousarray(dx)

    def config(self):
        return {"kind": self.kind, "in_channels": self.in_channels,
                "out_channels": self.out_channels, "kernel_size": self.kernel_size,
                "padding": self.padding}


class AvgPool2d(Layer):
    kind = "avgpool2d"

    def __init__(self, kernel_size=2):
        super().__init__()
        self.kernel_size = int(kernel_size)

    def forward(self, x, train=False, record=True):
        k = self.kernel_size
        if x.ndim != 4 or x.shape[2] % k or x.shape[3] % k:
            raise StructuralError(f"avgpool2d({k}) cannot tile input of shape {x.shape}")
        n, c, h, w = x.shape
        if record:
            self._cache = x.shape
        return x.reshape(n, c, h // k, k, w // k, k).mean(axis=(3, 5))

    def backward(self, grad_out, need_input_grad=True):
        self._take_cache()
        k = self.kernel_size
        if not need_input_grad:
            return None
        g = grad_out / (k * k)
        return np.repeat(np.repeat(g, k, axis=2), k, axis=3)

    def config(self):
        return {"kind": self.kind, "kernel_size": self.kernel_size}


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x, train=False, record=True):
        if record:
            self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad_out, need_input_grad=True):
        shape = self._take_cache()
        return grad_out.reshape(shape) if need_input_grad else None
