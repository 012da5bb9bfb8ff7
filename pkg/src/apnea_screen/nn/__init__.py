"""Micro neural-network engine: NHWC layers, MobileNetV2-style model, Adam."""
from .functional import (conv2d_backward, conv2d_forward, count_multiplies,
                         cross_entropy, softmax)
from .layers import (BatchNorm, Bottleneck, Conv, Dense, GlobalAvgPool, LayerKind,
                     ReLU6, Softmax)
from .model import LayerSpec, Network, mobilenet_v2, mobilenet_v2_specs
from .optim import AdamState, adam_step
from .train import EpochLog, TrainResult, evaluate, predict, train
from .weights import load_mobilenet, load_weights, read_weights, save_weights

__all__ = [
    "AdamState", "BatchNorm", "Bottleneck", "Conv", "Dense", "EpochLog", "GlobalAvgPool",
    "LayerKind", "LayerSpec", "Network", "ReLU6", "Softmax", "TrainResult", "adam_step",
    "conv2d_backward", "conv2d_forward", "count_multiplies", "cross_entropy", "evaluate",
    "load_mobilenet", "load_weights", "mobilenet_v2", "mobilenet_v2_specs", "predict",
    "read_weights", "save_weights", "softmax", "train",
]
