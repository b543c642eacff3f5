import numpy as np


class Tensor:
    """Dense float64 array with an optional gradient slot.

    Parameters of every layer are stored as ``Tensor``; activations flowing
    between layers are plain ``np.ndarray`` since the engine only differentiates
    sequential stacks and never needs per-activation graph nodes.
    """

    __slots__ = ("data", "grad")

    def __init__(self, data, grad=None):
        self.data = np.array(data, dtype=np.float64, order="C")
        if self.data.ndim == 0:
            self.data = self.data.reshape(1)
        self.grad = None
        if grad is not None:
            grad = np.asarray(grad, dtype=np.float64)
            if grad.shape != self.data.shape:
                raise ValueError(f"grad shape {grad.shape} != data shape {self.data.shape}")
            self.grad = grad.copy()

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __deepcopy__(self, memo):
        return self.copy()

    def copy(self):
        return Tensor(self.data.copy(), None if self.grad is None else self.grad.copy())

    def __repr__(self):
        return f"Tensor(shape={self.shape})"
