"""Forward-pass engine for the classifier graph, plus the backend registry.

All math is float32.  conv2d is evaluated as an unfold (im2col) contraction;
the test suite checks it against a brute-force quadruple-loop reference.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Dict

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .image import MemoryImage
from .model import (
    Conv2d,
    Dense,
    GlobalAvgPool,
    MaxPool2d,
    ModelGraph,
    Relu,
    ResidualAdd,
    ShapeMismatch,
    Softmax,
)


class BackendUnavailable(Exception):
    pass


class Label(str, Enum):
    BENIGN = "Benign"
    CORRUPTED = "Corrupted"


@dataclass(frozen=True)
class Classification:
    label: Label
    score: float  # probability of Corrupted

    @staticmethod
    def from_score(score: float) -> "Classification":
        # ties classify as Corrupted: fail closed
        label = Label.CORRUPTED if score >= 0.5 else Label.BENIGN
        return Classification(label=label, score=score)


def conv2d(x: np.ndarray, layer: Conv2d) -> np.ndarray:
    """x: (C, H, W) float32 -> (out_ch, OH, OW) float32."""
    if x.shape[0] != layer.in_ch:
        raise ShapeMismatch("conv2d expects %d channels, got %d" % (layer.in_ch, x.shape[0]))
    if layer.pad:
        x = np.pad(x, ((0, 0), (layer.pad, layer.pad), (layer.pad, layer.pad)))
    windows = sliding_window_view(x, (layer.k, layer.k), axis=(1, 2))
    windows = windows[:, :: layer.stride, :: layer.stride]  # (C, OH, OW, k, k)
    out = np.tensordot(layer.weight, windows, axes=((1, 2, 3), (0, 3, 4)))
    return (out + layer.bias[:, None, None]).astype(np.float32, copy=False)


def maxpool2d(x: np.ndarray, layer: MaxPool2d) -> np.ndarray:
    windows = sliding_window_view(x, (layer.k, layer.k), axis=(1, 2))
    windows = windows[:, :: layer.stride, :: layer.stride]
    return windows.max(axis=(3, 4))


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    exps = np.exp(shifted, dtype=np.float32)
    return exps / exps.sum(dtype=np.float32)


def forward_logits(graph: ModelGraph, x: np.ndarray) -> np.ndarray:
    """Run the graph up to (not including) a trailing softmax; returns (2,) logits."""
    x = np.asarray(x, dtype=np.float32)
    if x.ndim == 2:
        x = x[None, :, :]
    outputs = []
    for layer in graph.layers:
        if isinstance(layer, Conv2d):
            x = conv2d(x, layer)
        elif isinstance(layer, Relu):
            x = np.maximum(x, np.float32(0))
        elif isinstance(layer, MaxPool2d):
            x = maxpool2d(x, layer)
        elif isinstance(layer, GlobalAvgPool):
            x = x.mean(axis=(1, 2), dtype=np.float32)
        elif isinstance(layer, Dense):
            flat = x.reshape(-1)
            if flat.shape[0] != layer.in_f:
                raise ShapeMismatch(
                    "dense expects %d features, got %d" % (layer.in_f, flat.shape[0])
                )
            x = (layer.weight @ flat + layer.bias).astype(np.float32, copy=False)
        elif isinstance(layer, ResidualAdd):
            src = outputs[layer.source]
            if src.shape != x.shape:
                raise ShapeMismatch(
                    "residual source shape %r != current %r" % (src.shape, x.shape)
                )
            x = x + src
        elif isinstance(layer, Softmax):
            pass  # applied by the caller on the final logits
        outputs.append(x)
    if x.shape != (2,):
        raise ShapeMismatch("graph produced %r, expected 2 logits" % (x.shape,))
    return x


def infer(graph: ModelGraph, image: MemoryImage) -> Classification:
    if graph.input_side is not None and image.side != graph.input_side:
        raise ShapeMismatch(
            "model expects side %d, image is %d" % (graph.input_side, image.side)
        )
    logits = forward_logits(graph, image.pixels)
    probs = softmax(logits)
    return Classification.from_score(float(probs[1]))


class BuiltinBackend:
    """In-process numpy engine; the only backend shipped with the toolkit."""

    name = "builtin"

    def __init__(self, graph: ModelGraph):
        self.graph = graph

    def classify(self, image: MemoryImage) -> Classification:
        return infer(self.graph, image)


_REGISTRY: Dict[str, Callable[[ModelGraph], object]] = {"builtin": BuiltinBackend}


def register_backend(name: str, factory: Callable[[ModelGraph], object]) -> None:
    _REGISTRY[name] = factory


def get_backend(name: str, graph: ModelGraph):
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise BackendUnavailable(
            "no backend named %r (available: %s)" % (name, ", ".join(sorted(_REGISTRY)))
        )
    return factory(graph)
