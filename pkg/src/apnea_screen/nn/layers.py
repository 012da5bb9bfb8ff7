"""Layer objects wrapping the functional kernels with parameters and caches."""
from __future__ import annotations

import enum

import numpy as np

from . import functional as F


class LayerKind(enum.IntEnum):
    CONV_STD = 1
    CONV_DW = 2
    CONV_PW = 3
    BATCHNORM = 4
    RELU6 = 5
    AVGPOOL_GLOBAL = 6
    FC = 7
    SOFTMAX = 8
    BOTTLENECK = 9


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Layer:
    kind: LayerKind

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def sublayers(self) -> list["Layer"]:
        return [self]

    def tensors(self) -> dict[str, np.ndarray]:
        """Parameters followed by buffers, in serialization order."""
        return {**self.params, **self.buffers}

    def astype(self, dtype) -> None:
        for store in (self.params, self.buffers):
            for k in store:
                store[k] = store[k].astype(dtype)

    def __repr__(self):
        shapes = {k: v.shape for k, v in self.tensors().items()}
        return f"{type(self).__name__}({shapes})"


class Conv(Layer):
    """Convolution without bias; every conv in the network feeds a batch norm."""

    _kinds = {"standard": LayerKind.CONV_STD, "depthwise": LayerKind.CONV_DW,
              "pointwise": LayerKind.CONV_PW}

    def __init__(self, c_in: int, c_out: int, kernel: int = 3, stride: int = 1,
                 mode: str = "standard", rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.mode, self.stride = mode, stride
        self.kind = self._kinds[mode]
        if mode == "depthwise":
            if c_in != c_out:
                raise ValueError("depthwise conv keeps the channel count")
            shape, fan_in = (kernel, kernel, c_in), kernel * kernel
        elif mode == "pointwise":
            shape, fan_in = (1, 1, c_in, c_out), c_in
        else:
            shape, fan_in = (kernel, kernel, c_in, c_out), kernel * kernel * c_in
        self.params["kernel"] = kaiming_uniform(rng, shape, fan_in)

    def forward(self, x, train=False):
        out, self._cache = F.conv2d_forward(x, self.params["kernel"], self.stride, "same", self.mode)
        return out

    def backward(self, grad_out):
        gx, gk = F.conv2d_backward(grad_out, self._cache)
        self.grads["kernel"] = gk
        return gx


class BatchNorm(Layer):
    kind = LayerKind.BATCHNORM

    def __init__(self, channels: int, momentum: float = 0.9, eps: float = 1e-5):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.params["gamma"] = np.ones(channels)
        self.params["beta"] = np.zeros(channels)
        self.buffers["running_mean"] = np.zeros(channels)
        self.buffers["running_var"] = np.ones(channels)

    def forward(self, x, train=False):
        out, self._cache = F.batchnorm_forward(
            x, self.params["gamma"], self.params["beta"],
            self.buffers["running_mean"], self.buffers["running_var"],
            train=train, momentum=self.momentum, eps=self.eps)
        return out

    def backward(self, grad_out):
        gx, self.grads["gamma"], self.grads["beta"] = F.batchnorm_backward(grad_out, self._cache)
        return gx


class ReLU6(Layer):
    kind = LayerKind.RELU6

    def forward(self, x, train=False):
        out, self._cache = F.relu6_forward(x)
        return out

    def backward(self, grad_out):
        return F.relu6_backward(grad_out, self._cache)


class GlobalAvgPool(Layer):
    kind = LayerKind.AVGPOOL_GLOBAL

    def forward(self, x, train=False):
        out, self._cache = F.global_avgpool_forward(x)
        return out

    def backward(self, grad_out):
        return F.global_avgpool_backward(grad_out, self._cache)


class Dense(Layer):
    kind = LayerKind.FC

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.params["weight"] = kaiming_uniform(rng, (d_in, d_out), d_in)
        self.params["bias"] = np.zeros(d_out)

    def forward(self, x, train=False):
        out, self._cache = F.fc_forward(x, self.params["weight"], self.params["bias"])
        return out

    def backward(self, grad_out):
        gx, self.grads["weight"], self.grads["bias"] = F.fc_backward(
            grad_out, self._cache, self.params["weight"])
        return gx


class Softmax(Layer):
    """Inference head.  Training fuses it into the cross-entropy gradient."""

    kind = LayerKind.SOFTMAX

    def forward(self, x, train=False):
        out = F.softmax(x)
        self._cache = out
        return out

    def backward(self, grad_out):
        p = self._cache
        return p * (grad_out - np.sum(grad_out * p, axis=-1, keepdims=True))


class Bottleneck(Layer):
    """Inverted residual block: expand -> depthwise -> linear projection."""

    kind = LayerKind.BOTTLENECK

    def __init__(self, c_in: int, c_out: int, stride: int, expansion: int,
                 rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.c_in, self.c_out, self.stride, self.expansion = c_in, c_out, stride, expansion
        hidden = c_in * expansion
        layers: list[Layer] = []
        if expansion != 1:
            layers += [Conv(c_in, hidden, 1, 1, "pointwise", rng), BatchNorm(hidden), ReLU6()]
        layers += [
            Conv(hidden, hidden, 3, stride, "depthwise", rng), BatchNorm(hidden), ReLU6(),
            Conv(hidden, c_out, 1, 1, "pointwise", rng), BatchNorm(c_out),
        ]
        self.layers = layers
        self.residual = stride == 1 and c_in == c_out

    @property
    def projection(self) -> Conv:
        return self.layers[-2]

    def sublayers(self):
        return list(self.layers)

    def tensors(self):
        return {}

    def astype(self, dtype):
        for layer in self.layers:
            layer.astype(dtype)

    def forward(self, x, train=False):
        out = x
        for layer in self.layers:
            out = layer.forward(out, train)
        return out + x if self.residual else out

    def backward(self, grad_out):
        g = grad_out
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g + grad_out if self.residual else g

    def __repr__(self):
        return (f"Bottleneck(c_in={self.c_in}, c_out={self.c_out}, "
                f"stride={self.stride}, t={self.expansion})")
