import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lma import engine, model
from lma.image import MemoryImage, to_image


# ---- brute-force references (independent of the numpy implementations) ----

def conv2d_reference(x, weight, bias, stride, pad):
    in_ch, h, w = x.shape
    out_ch, _, k, _ = weight.shape
    padded = np.zeros((in_ch, h + 2 * pad, w + 2 * pad), dtype=np.float64)
    padded[:, pad : pad + h, pad : pad + w] = x
    oh = (h + 2 * pad - k) // stride + 1
    ow = (w + 2 * pad - k) // stride + 1
    out = np.zeros((out_ch, oh, ow), dtype=np.float64)
    for o in range(out_ch):
        for y in range(oh):
            for xx in range(ow):
                acc = 0.0
                for c in range(in_ch):
                    for dy in range(k):
                        for dx in range(k):
                            acc += weight[o, c, dy, dx] * padded[c, y * stride + dy, xx * stride + dx]
                out[o, y, xx] = acc + bias[o]
    return out


def maxpool_reference(x, k, stride):
    c, h, w = x.shape
    oh = (h - k) // stride + 1
    ow = (w - k) // stride + 1
    out = np.zeros((c, oh, ow))
    for ch in range(c):
        for y in range(oh):
            for xx in range(ow):
                out[ch, y, xx] = x[ch, y * stride : y * stride + k, xx * stride : xx * stride + k].max()
    return out


def test_hand_computed_convolution():
    # all-ones 2x2 kernel over an all-ones 3x3 input: every output is 4.0
    layer = model.Conv2d(1, 1, 2, 1, 0,
                         weight=np.ones((1, 1, 2, 2), np.float32),
                         bias=np.zeros(1, np.float32))
    out = engine.conv2d(np.ones((1, 3, 3), np.float32), layer)
    assert out.shape == (1, 2, 2)
    assert np.array_equal(out, np.full((1, 2, 2), 4.0, np.float32))


@settings(max_examples=40, deadline=None)
@given(
    st.integers(1, 4),   # in channels
    st.integers(1, 4),   # out channels
    st.integers(2, 8),   # spatial size
    st.integers(1, 3),   # kernel
    st.integers(1, 2),   # stride
    st.integers(0, 1),   # pad
    st.integers(0, 2**32 - 1),
)
def test_conv2d_matches_brute_force(cin, cout, size, k, stride, pad, seed):
    if size + 2 * pad < k:
        return
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(cin, size, size)).astype(np.float32)
    layer = model.Conv2d(cin, cout, k, stride, pad,
                         weight=rng.normal(size=(cout, cin, k, k)).astype(np.float32),
                         bias=rng.normal(size=cout).astype(np.float32))
    got = engine.conv2d(x, layer)
    expected = conv2d_reference(x, layer.weight, layer.bias, stride, pad)
    assert got.shape == expected.shape
    assert np.abs(got - expected).max() < 1e-5


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 8), st.integers(1, 3), st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_maxpool_matches_brute_force(size, k, stride, seed):
    if size < k:
        return
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(3, size, size)).astype(np.float32)
    got = engine.maxpool2d(x, model.MaxPool2d(k, stride))
    expected = maxpool_reference(x, k, stride)
    assert np.abs(got - expected).max() < 1e-6


def test_dense_matches_manual():
    rng = np.random.default_rng(5)
    layer = model.Dense(6, 2,
                        weight=rng.normal(size=(2, 6)).astype(np.float32),
                        bias=rng.normal(size=2).astype(np.float32))
    graph = model.ModelGraph(layers=[layer])
    x = rng.normal(size=6).astype(np.float32)
    got = engine.forward_logits(graph, x.reshape(1, 1, 6))
    expected = layer.weight.astype(np.float64) @ x + layer.bias
    assert np.abs(got - expected).max() < 1e-6


def test_global_avg_pool_is_mean():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(4, 8, 8)).astype(np.float32)
    layers = [model.GlobalAvgPool(),
              model.Dense(4, 2, weight=np.eye(2, 4, dtype=np.float32),
                          bias=np.zeros(2, np.float32))]
    got = engine.forward_logits(model.ModelGraph(layers=layers), x)
    assert np.abs(got - x.mean(axis=(1, 2))[:2]).max() < 1e-6


def test_residual_add_forward():
    # identity conv + residual doubles the input
    w = np.zeros((1, 1, 1, 1), np.float32)
    w[0, 0, 0, 0] = 1.0
    layers = [
        model.Conv2d(1, 1, 1, 1, 0, weight=w, bias=np.zeros(1, np.float32)),
        model.Conv2d(1, 1, 1, 1, 0, weight=w, bias=np.zeros(1, np.float32)),
        model.ResidualAdd(0),
        model.GlobalAvgPool(),
        model.Dense(1, 2, weight=np.array([[1.0], [2.0]], np.float32),
                    bias=np.zeros(2, np.float32)),
    ]
    x = np.full((1, 4, 4), 3.0, np.float32)
    logits = engine.forward_logits(model.ModelGraph(layers=layers), x)
    assert np.allclose(logits, [6.0, 12.0])


@given(st.lists(st.floats(-30, 30), min_size=2, max_size=2))
def test_softmax_normalization(raw):
    probs = engine.softmax(np.array(raw, dtype=np.float32))
    assert abs(float(probs.sum()) - 1.0) < 1e-6
    assert (probs >= 0).all()


def test_tie_classifies_corrupted():
    layers = [model.Dense(4, 2, weight=np.zeros((2, 4), np.float32),
                          bias=np.zeros(2, np.float32))]
    graph = model.ModelGraph(layers=layers, input_side=2)
    image = MemoryImage(side=2, pixels=np.ones((2, 2), np.float32))
    result = engine.infer(graph, image)
    assert result.score == pytest.approx(0.5)
    assert result.label is engine.Label.CORRUPTED


def test_shape_mismatch_raises():
    graph = model.random_small_resnet(seed=1)
    with pytest.raises(model.ShapeMismatch):
        engine.forward_logits(graph, np.ones((2, 128, 128), np.float32))


def test_full_graph_on_memory_image():
    graph = model.random_small_resnet(seed=2)
    memory = bytes(np.random.default_rng(0).integers(0, 256, 65536, dtype=np.uint8))
    result = engine.infer(graph, to_image(memory, 128))
    assert 0.0 <= result.score <= 1.0
    again = engine.infer(graph, to_image(memory, 128))
    assert again == result


def test_backend_registry():
    graph = model.random_small_resnet(seed=3)
    backend = engine.get_backend("builtin", graph)
    memory = b"\x42" * 65536
    a = backend.classify(to_image(memory, 128))
    b = backend.classify(to_image(memory, 128))
    assert a == b
    with pytest.raises(engine.BackendUnavailable):
        engine.get_backend("openvino", graph)


def test_single_inference_latency_budget():
    graph = model.random_small_resnet(seed=4)
    image = to_image(b"\x55" * 65536, 128)
    engine.infer(graph, image)  # warm up
    t0 = time.perf_counter()
    engine.infer(graph, image)
    assert time.perf_counter() - t0 < 0.1
