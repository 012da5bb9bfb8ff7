import math

import numpy as np
import pytest

from apnea_screen.errors import EmptyDataset, ShapeMismatch, WeightsFormatError
from apnea_screen.nn import (AdamState, LayerKind, LayerSpec, Network, adam_step, load_weights,
                             mobilenet_v2, predict, read_weights, save_weights, train)
from apnea_screen.nn.layers import BatchNorm, Bottleneck, Conv, Dense
from apnea_screen.nn.model import mobilenet_v2_specs
from apnea_screen.nn.weights import load_mobilenet, manifest_path, verify_manifest
from apnea_screen.synth import halves_images
from oracles import naive_conv

K = LayerKind


def _reference_adam(w, grad_fn, steps, lr, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t in range(1, steps + 1):
        g = grad_fn(w)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w -= lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
    return w


def test_adam_quadratic():
    w = np.array([1.0])
    state = AdamState(lr=0.1)
    for _ in range(200):
        adam_step([w], [2 * w], state)
    assert abs(w[0]) < 0.05
    assert w[0] == pytest.approx(_reference_adam(1.0, lambda x: 2 * x, 200, 0.1), abs=1e-12)


def test_adam_zero_gradient():
    w = np.array([0.3, -2.0])
    state = AdamState()
    for _ in range(3):
        adam_step([w], [np.zeros(2)], state)
    np.testing.assert_array_equal(w, [0.3, -2.0])
    assert state.t == 3


@pytest.mark.parametrize("scale", [1e-4, 1.0, 1e4])
def test_adam_first_step_is_lr(scale):
    w = np.array([0.0, 0.0])
    adam_step([w], [np.array([scale, -scale])], AdamState(lr=1e-3))
    # bias-corrected first step is lr * |g| / (|g| + eps)
    np.testing.assert_allclose(np.abs(w), 1e-3 * scale / (scale + 1e-8), rtol=1e-9)
    np.testing.assert_allclose(np.abs(w), 1e-3, rtol=1e-3)
    assert w[0] < 0 < w[1]


def _small_net(seed=0, size=32, dtype=np.float32):
    schedule = ((1, 8, 1, 1), (4, 16, 2, 2))
    specs = mobilenet_v2_specs(2, 3, schedule, stem=8, head=32)
    return Network(specs, seed, dtype, (size, size, 3))


def test_toy_halves_trains():
    x, y = halves_images(400, size=32, seed=1)
    net = _small_net(0)
    res = train(net, x, y, epochs=5, seed=0)
    assert max(e.accuracy for e in res.log) >= 0.99
    assert len(res.log) <= 5


def test_training_is_deterministic():
    x, y = halves_images(128, size=32, seed=2)
    a = train(_small_net(3), x, y, epochs=2, seed=7, val=(x[:32], y[:32]))
    b = train(_small_net(3), x, y, epochs=2, seed=7, val=(x[:32], y[:32]))
    assert a.checksum == b.checksum
    assert [e.loss for e in a.log] == [e.loss for e in b.log]


def test_zero_learning_rate_keeps_weights():
    x, y = halves_images(64, size=32, seed=3)
    net = _small_net(4)
    before = [p.copy() for p in net.parameters()]
    train(net, x, y, epochs=2, lr=0.0)
    for p, q in zip(before, net.parameters()):
        np.testing.assert_array_equal(p, q)


def test_train_errors():
    net = _small_net()
    with pytest.raises(EmptyDataset):
        train(net, np.zeros((0, 32, 32, 3)), np.zeros(0, int))
    with pytest.raises(ShapeMismatch):
        train(net, np.zeros((4, 32, 32)), np.zeros(4, int))


def test_predict_tie_goes_to_class_zero():
    net = _small_net()
    fc = net.layers[-1]
    fc.params["weight"][:] = 0
    fc.params["bias"][:] = 0
    cls, probs = predict(net, np.full((32, 32, 3), 0.5, np.float32))
    assert cls == 0
    np.testing.assert_allclose(probs, [0.5, 0.5])


def test_predict_probs_sum_to_one_and_shape_check():
    net = _small_net()
    x = np.random.default_rng(0).uniform(size=(5, 32, 32, 3)).astype(np.float32)
    classes, probs = predict(net, x)
    assert classes.shape == (5,)
    np.testing.assert_allclose(probs.sum(axis=1), 1, atol=1e-6)
    with pytest.raises(ShapeMismatch):
        predict(net, np.zeros((16, 16, 3)))


def test_inference_bitwise_deterministic():
    net = _small_net()
    x = np.random.default_rng(1).uniform(size=(3, 32, 32, 3)).astype(np.float32)
    assert predict(net, x)[1].tobytes() == predict(net, x)[1].tobytes()


# -- brute-force oracle for a two-bottleneck micro model ----------------------

def _oracle_forward(net, x):
    def bn(layer, a):
        p, b = layer.params, layer.buffers
        return (a - b["running_mean"]) / np.sqrt(b["running_var"] + layer.eps) * p["gamma"] + p["beta"]

    def conv(layer, a):
        k = layer.params["kernel"]
        return naive_conv(a, k, layer.stride, (k.shape[0] - 1) // 2, layer.mode)

    def run(layer, a):
        if isinstance(layer, Conv):
            return conv(layer, a)
        if isinstance(layer, BatchNorm):
            return bn(layer, a)
        if isinstance(layer, Dense):
            return a @ layer.params["weight"] + layer.params["bias"]
        if isinstance(layer, Bottleneck):
            out = a
            for sub in layer.layers:
                out = run(sub, out)
            return out + a if layer.residual else out
        if layer.kind == K.RELU6:
            return np.minimum(np.maximum(a, 0), 6)
        if layer.kind == K.AVGPOOL_GLOBAL:
            return a.mean(axis=(1, 2))
        raise AssertionError(layer)

    a = x
    for layer in net.layers:
        a = run(layer, a)
    e = np.exp(a - a.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def test_micro_model_matches_oracle():
    specs = [LayerSpec(K.CONV_STD, 3, 4, 3, 2), LayerSpec(K.BATCHNORM, 4, 4), LayerSpec(K.RELU6),
             LayerSpec(K.BOTTLENECK, 4, 4, 3, 1, 2), LayerSpec(K.BOTTLENECK, 4, 6, 3, 2, 3),
             LayerSpec(K.CONV_PW, 6, 8), LayerSpec(K.BATCHNORM, 8, 8), LayerSpec(K.RELU6),
             LayerSpec(K.AVGPOOL_GLOBAL), LayerSpec(K.FC, 8, 2), LayerSpec(K.SOFTMAX)]
    net = Network(specs, seed=5, dtype=np.float64, input_shape=(8, 8, 3))
    rng = np.random.default_rng(6)
    for layer in net.flat_layers():
        if isinstance(layer, BatchNorm):
            c = len(layer.params["gamma"])
            layer.params["gamma"][:] = rng.uniform(0.5, 1.5, c)
            layer.params["beta"][:] = rng.normal(0, 0.3, c)
            layer.buffers["running_mean"][:] = rng.normal(0, 0.2, c)
            layer.buffers["running_var"][:] = rng.uniform(0.5, 2, c)
    assert net.layers[3].residual and not net.layers[4].residual
    x = rng.normal(size=(2, 8, 8, 3))
    _, probs = predict(net, x)
    np.testing.assert_allclose(probs, _oracle_forward(net, x), atol=1e-10)


# -- full model and weights file ---------------------------------------------

@pytest.fixture(scope="module")
def full_model():
    return mobilenet_v2(2, seed=0)


def test_full_model_structure(full_model):
    assert full_model.count_bottlenecks() == 17
    assert full_model.layers[0].params["kernel"].shape == (3, 3, 3, 32)
    assert full_model.num_parameters() == 2_226_434
    logits = full_model.forward(np.zeros((1, 96, 96, 3), np.float32))
    assert logits.shape == (1, 2)


def test_weights_roundtrip(tmp_path, full_model):
    path = save_weights(full_model, tmp_path / "m.apnw")
    assert path.read_bytes()[:4] == b"APNW"
    assert verify_manifest(path)
    loaded = load_mobilenet(path)
    assert loaded.checksum() == full_model.checksum()
    classes, entries = read_weights(path)
    assert classes == 2 and len(entries) == len(full_model.named_tensors())
    lines = manifest_path(path).read_text().splitlines()
    assert len(lines) == 3 + len(entries) + 1


def test_weights_rejects_corruption(tmp_path):
    net = _small_net()
    path = save_weights(net, tmp_path / "s.apnw")
    data = path.read_bytes()
    (tmp_path / "bad.apnw").write_bytes(b"XXXX" + data[4:])
    with pytest.raises(WeightsFormatError):
        read_weights(tmp_path / "bad.apnw")
    (tmp_path / "short.apnw").write_bytes(data[:-3])
    with pytest.raises(WeightsFormatError):
        read_weights(tmp_path / "short.apnw")
    with pytest.raises(WeightsFormatError):
        load_weights(mobilenet_v2(2, input_shape=(32, 32, 3)), path)
    path.write_bytes(data[:-4] + b"\x01\x02\x03\x04")
    assert not verify_manifest(path)
