"""Sequential network with exposed intermediate representations ("taps")."""

import copy

import numpy as np

from .errors import StructuralError, UsageError


class Network:
    """Ordered stack of layers.

    ``tap_points`` are layer indices; ``forward`` returns the output captured
    right after each of those layers alongside the logits.
    """

    def __init__(self, layers, tap_points=(), input_shape=None):
        self.layers = list(layers)
        self.tap_points = tuple(int(t) for t in tap_points)
        self.input_shape = None if input_shape is None else tuple(input_shape)
        self._check_taps()
        self._recorded_shape = None
        if self.input_shape is not None:
            self.validate()

    def _check_taps(self):
        taps = self.tap_points
        if any(b <= a for a, b in zip(taps, taps[1:])):
            raise StructuralError(f"tap points must be strictly increasing: {taps}")
        if taps and (taps[0] < 0 or taps[-1] >= len(self.layers)):
            raise StructuralError(f"tap points {taps} out of range for {len(self.layers)} layers")

    def validate(self, input_shape=None):
        """Probe forward pass on zeros; raises StructuralError on incompatible layers."""
        shape = input_shape or self.input_shape
        if shape is None:
            raise UsageError("no input shape to validate against")
        logits, _ = self.forward(np.zeros((1, *shape)), record=False)
        return logits.shape[1:]

    def __len__(self):
        return len(self.layers)

    def forward(self, x, train=False, record=True, hook=None):
        """Return ``(logits, taps)``.

        Non-finite values propagate untouched.  ``hook(index, layer, output)``
        is called after every layer and must not modify ``output``.
        """
        x = np.asarray(x, dtype=np.float64)
        if self.input_shape is not None and x.shape[1:] != self.input_shape:
            raise StructuralError(f"input shape {x.shape[1:]} != network input {self.input_shape}")
        taps = []
        tap_set = set(self.tap_points)
        with np.errstate(over="ignore", invalid="ignore"):
            for i, layer in enumerate(self.layers):
                x = layer.forward(x, train=train, record=record)
                if i in tap_set:
                    taps.append(x)
                if hook is not None:
                    hook(i, layer, x)
        self._recorded_shape = x.shape if record else None
        return x, taps

    __call__ = forward

    def backward(self, grad, upto=None, input_grad=False):
        """Reverse-mode pass from a gradient seed on the logits.

        ``upto`` selects the layer whose output ``grad`` refers to (default: the
        last layer), so a loss on an intermediate tap can be backpropagated.
        Frozen layers get zero parameter gradients.  Propagation stops below the
        shallowest trainable layer unless ``input_grad`` is set, in which case
        the gradient w.r.t. the network input is returned.
        """
        if self._recorded_shape is None:
            raise UsageError("backward called without a recorded forward pass")
        last = len(self.layers) - 1 if upto is None else int(upto)
        grad = np.asarray(grad, dtype=np.float64)
        if upto is None and grad.shape != self._recorded_shape:
            raise StructuralError(f"seed shape {grad.shape} != logits shape {self._recorded_shape}")
        trainable = [i for i, l in enumerate(self.layers[:last + 1])
                     if l.params() and not l.frozen]
        start = trainable[0] if trainable else last + 1
        if input_grad:
            start = -1
        with np.errstate(over="ignore", invalid="ignore"):
            for i in range(last, -1, -1):
                layer = self.layers[i]
                if i >= start:
                    grad = layer.backward(grad, need_input_grad=i > start)
                else:
                    layer._cache = None
                    layer._zero_param_grads()
        for layer in self.layers[last + 1:]:
            layer._cache = None
            layer._zero_param_grads()
        self._recorded_shape = None
        return grad if input_grad else None

    def named_parameters(self):
        for i, layer in enumerate(self.layers):
            for name, p in layer.params().items():
                yield f"{i}.{name}", layer, p

    def parameters(self):
        return [p for _, _, p in self.named_parameters()]

    def set_frozen(self, indices, frozen=True):
        for i in indices:
            self.layers[i].frozen = frozen

    def copy(self):
        return copy.deepcopy(self)

    def state_arrays(self):
        return {name: p.data.copy() for name, _, p in self.named_parameters()}

    def __repr__(self):
        inner = ", ".join(repr(l) for l in self.layers)
        return f"Network([{inner}], tap_points={self.tap_points})"
