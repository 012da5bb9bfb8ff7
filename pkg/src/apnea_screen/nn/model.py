"""Network assembly: layer specs, the generic sequential network, and the
MobileNetV2-style classifier used for both screening tasks."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from ..errors import ShapeMismatch
from . import functional as F
from .layers import (BatchNorm, Bottleneck, Conv, Dense, GlobalAvgPool, Layer,
                     LayerKind, ReLU6, Softmax)

# (expansion t, output channels c, repeats n, first stride s)
MOBILENET_V2_SCHEDULE = (
    (1, 16, 1, 1),
    (6, 24, 2, 2),
    (6, 32, 3, 2),
    (6, 64, 4, 2),
    (6, 96, 3, 1),
    (6, 160, 3, 2),
    (6, 320, 1, 1),
)
STEM_FILTERS = 32
HEAD_CHANNELS = 1280
INPUT_SHAPE = (96, 96, 3)


@dataclass(frozen=True)
class LayerSpec:
    kind: LayerKind
    c_in: int = 0
    c_out: int = 0
    kernel: int = 1
    stride: int = 1
    expansion: int = 1


def mobilenet_v2_specs(num_classes: int = 2, in_channels: int = 3,
                       schedule=MOBILENET_V2_SCHEDULE, stem: int = STEM_FILTERS,
                       head: int = HEAD_CHANNELS) -> list[LayerSpec]:
    K = LayerKind
    specs = [LayerSpec(K.CONV_STD, in_channels, stem, 3, 2), LayerSpec(K.BATCHNORM, stem, stem),
             LayerSpec(K.RELU6)]
    c = stem
    for t, c_out, n, s in schedule:
        for i in range(n):
            specs.append(LayerSpec(K.BOTTLENECK, c, c_out, 3, s if i == 0 else 1, t))
            c = c_out
    specs += [LayerSpec(K.CONV_PW, c, head), LayerSpec(K.BATCHNORM, head, head),
              LayerSpec(K.RELU6), LayerSpec(K.AVGPOOL_GLOBAL),
              LayerSpec(K.FC, head, num_classes), LayerSpec(K.SOFTMAX)]
    return specs


def _build_layer(spec: LayerSpec, rng) -> Layer:
    K = spec.kind
    if K == LayerKind.CONV_STD:
        return Conv(spec.c_in, spec.c_out, spec.kernel, spec.stride, "standard", rng)
    if K == LayerKind.CONV_DW:
        return Conv(spec.c_in, spec.c_out, spec.kernel, spec.stride, "depthwise", rng)
    if K == LayerKind.CONV_PW:
        return Conv(spec.c_in, spec.c_out, 1, spec.stride, "pointwise", rng)
    if K == LayerKind.BATCHNORM:
        return BatchNorm(spec.c_out)
    if K == LayerKind.RELU6:
        return ReLU6()
    if K == LayerKind.AVGPOOL_GLOBAL:
        return GlobalAvgPool()
    if K == LayerKind.FC:
        return Dense(spec.c_in, spec.c_out, rng)
    if K == LayerKind.SOFTMAX:
        return Softmax()
    if K == LayerKind.BOTTLENECK:
        return Bottleneck(spec.c_in, spec.c_out, spec.stride, spec.expansion, rng)
    raise ValueError(f"unknown layer kind {K}")


class Network:
    """A chain of layers ending in a softmax head.

    ``forward`` returns logits; the softmax is applied by ``predict_proba`` and
    fused into the loss gradient during training.
    """

    def __init__(self, specs: list[LayerSpec], seed: int = 0, dtype=np.float32,
                 input_shape: tuple[int, int, int] = INPUT_SHAPE):
        if not specs or specs[-1].kind != LayerKind.SOFTMAX:
            raise ShapeMismatch("network must end in a SOFTMAX head")
        rng = np.random.default_rng(seed)
        self.specs = list(specs)
        self.input_shape = tuple(input_shape)
        self.layers = [_build_layer(s, rng) for s in specs[:-1]]
        self.head = Softmax()
        self.num_classes = specs[-2].c_out
        self.astype(dtype)

    # -- structure ---------------------------------------------------------
    def flat_layers(self) -> list[Layer]:
        out = []
        for layer in self.layers:
            out.extend(layer.sublayers())
        return out

    def named_tensors(self) -> list[tuple[str, LayerKind, np.ndarray]]:
        """Every stored tensor (params then buffers) in a fixed order."""
        out = []
        for i, layer in enumerate(self.flat_layers()):
            for name, arr in layer.tensors().items():
                out.append((f"{i}.{name}", layer.kind, arr))
        return out

    def parameters(self) -> list[np.ndarray]:
        return [p for layer in self.flat_layers() for p in layer.params.values()]

    def gradients(self) -> list[np.ndarray]:
        return [layer.grads[k] for layer in self.flat_layers() for k in layer.params]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    @property
    def dtype(self):
        return self.parameters()[0].dtype

    def astype(self, dtype) -> "Network":
        for layer in self.layers:
            layer.astype(dtype)
        return self

    def checksum(self) -> str:
        h = hashlib.sha256()
        for _, _, arr in self.named_tensors():
            h.update(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        return h.hexdigest()

    def count_bottlenecks(self) -> int:
        return sum(isinstance(l, Bottleneck) for l in self.layers)

    # -- computation -------------------------------------------------------
    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        if x.ndim != 4 or x.shape[-1] != self.specs[0].c_in:
            raise ShapeMismatch(f"input {x.shape} incompatible with {self.specs[0].c_in} channels")
        out = x.astype(self.dtype, copy=False)
        for layer in self.layers:
            out = layer.forward(out, train)
        return out

    def backward(self, grad_logits: np.ndarray) -> np.ndarray:
        g = grad_logits
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g

    def predict_proba(self, x: np.ndarray, batch_size: int = 64) -> np.ndarray:
        """Class probabilities, evaluated in fixed-size chunks."""
        chunks = [self.head.forward(self.forward(x[i : i + batch_size]))
                  for i in range(0, len(x), batch_size)]
        return np.concatenate(chunks, axis=0)

    def loss_and_backward(self, x: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
        """Train-mode forward, softmax cross-entropy, full backward pass.

        Returns the mean loss and the probabilities.
        """
        logits = self.forward(x, train=True)
        probs = F.softmax(logits)
        loss = F.cross_entropy(probs, target)
        self.backward(F.softmax_cross_entropy_backward(probs, target))
        return loss, probs


def mobilenet_v2(num_classes: int = 2, seed: int = 0, dtype=np.float32,
                 input_shape=INPUT_SHAPE) -> Network:
    """The four-stage screening network: stem conv, 17 bottlenecks,
    1x1 expansion + global average pool, fully connected softmax head."""
    net = Network(mobilenet_v2_specs(num_classes, input_shape[-1]), seed, dtype, input_shape)
    stem = net.layers[0]
    assert stem.kind == LayerKind.CONV_STD and stem.params["kernel"].shape == (3, 3, 3, 32)
    assert net.count_bottlenecks() == 17
    return net
