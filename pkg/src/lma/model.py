"""Classifier graph and the ``.lmaw`` weight-file format.

File layout (little-endian)::

    magic       4 bytes  b"LMAW"
    version     u8       1
    layer_count u16
    per layer:  kind u8, dims (u32 each, count fixed per kind),
                params (f32, row-major)
    crc         u32      CRC-32 over all preceding bytes

Dims per kind: conv2d (in_ch, out_ch, k, stride, pad); maxpool2d (k, stride);
dense (in, out); residual_add (source_layer_index); relu / global_avg_pool /
softmax take none.  Conv weights are (out, in, k, k); dense weights are
(out, in); biases follow weights.  Dense logit order is (benign, corrupted).
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from enum import IntEnum
from math import isqrt
from typing import Optional, Union

import numpy as np

MAGIC = b"LMAW"
VERSION = 1
DEFAULT_SIDE = 128


class ModelError(Exception):
    pass


class BadMagic(ModelError):
    pass


class UnsupportedVersion(ModelError):
    pass


class UnknownLayerKind(ModelError):
    pass


class ShapeMismatch(ModelError):
    pass


class ChecksumMismatch(ModelError):
    pass


class LayerKind(IntEnum):
    CONV2D = 1
    RELU = 2
    MAXPOOL2D = 3
    GLOBAL_AVG_POOL = 4
    DENSE = 5
    RESIDUAL_ADD = 6
    SOFTMAX = 7


@dataclass
class Conv2d:
    in_ch: int
    out_ch: int
    k: int
    stride: int
    pad: int
    weight: np.ndarray = field(default=None, repr=False)  # (out, in, k, k) f32
    bias: np.ndarray = field(default=None, repr=False)  # (out,) f32

    kind = LayerKind.CONV2D

    @property
    def dims(self):
        return (self.in_ch, self.out_ch, self.k, self.stride, self.pad)

    @property
    def n_params(self) -> int:
        return self.out_ch * self.in_ch * self.k * self.k + self.out_ch


@dataclass
class Relu:
    kind = LayerKind.RELU
    dims = ()
    n_params = 0


@dataclass
class MaxPool2d:
    k: int
    stride: int

    kind = LayerKind.MAXPOOL2D
    n_params = 0

    @property
    def dims(self):
        return (self.k, self.stride)


@dataclass
class GlobalAvgPool:
    kind = LayerKind.GLOBAL_AVG_POOL
    dims = ()
    n_params = 0


@dataclass
class Dense:
    in_f: int
    out_f: int
    weight: np.ndarray = field(default=None, repr=False)  # (out, in) f32
    bias: np.ndarray = field(default=None, repr=False)  # (out,) f32

    kind = LayerKind.DENSE

    @property
    def dims(self):
        return (self.in_f, self.out_f)

    @property
    def n_params(self) -> int:
        return self.out_f * self.in_f + self.out_f


@dataclass
class ResidualAdd:
    source: int  # index of the earlier layer whose output is added

    kind = LayerKind.RESIDUAL_ADD
    n_params = 0

    @property
    def dims(self):
        return (self.source,)


@dataclass
class Softmax:
    kind = LayerKind.SOFTMAX
    dims = ()
    n_params = 0


Layer = Union[Conv2d, Relu, MaxPool2d, GlobalAvgPool, Dense, ResidualAdd, Softmax]

_DIM_COUNT = {
    LayerKind.CONV2D: 5,
    LayerKind.RELU: 0,
    LayerKind.MAXPOOL2D: 2,
    LayerKind.GLOBAL_AVG_POOL: 0,
    LayerKind.DENSE: 2,
    LayerKind.RESIDUAL_ADD: 1,
    LayerKind.SOFTMAX: 0,
}

# (kind, dims) constructors for loading
def _make_layer(kind: LayerKind, dims: tuple) -> Layer:
    if kind == LayerKind.CONV2D:
        return Conv2d(*dims)
    if kind == LayerKind.RELU:
        return Relu()
    if kind == LayerKind.MAXPOOL2D:
        return MaxPool2d(*dims)
    if kind == LayerKind.GLOBAL_AVG_POOL:
        return GlobalAvgPool()
    if kind == LayerKind.DENSE:
        return Dense(*dims)
    if kind == LayerKind.RESIDUAL_ADD:
        return ResidualAdd(*dims)
    return Softmax()


# Shape state during inference/validation: ("img", c, h, w) or ("flat", n)
def _step_shape(shape, layer: Layer, index: int, outputs: list):
    if isinstance(layer, Conv2d):
        if shape[0] != "img":
            raise ShapeMismatch("layer %d: conv2d needs an image input" % index)
        _, c, h, w = shape
        if c != layer.in_ch:
            raise ShapeMismatch(
                "layer %d: conv2d expects %d channels, got %d" % (index, layer.in_ch, c)
            )
        oh = (h + 2 * layer.pad - layer.k) // layer.stride + 1
        ow = (w + 2 * layer.pad - layer.k) // layer.stride + 1
        if h + 2 * layer.pad < layer.k or oh < 1 or ow < 1:
            raise ShapeMismatch("layer %d: conv2d output collapses" % index)
        return ("img", layer.out_ch, oh, ow)
    if isinstance(layer, MaxPool2d):
        if shape[0] != "img":
            raise ShapeMismatch("layer %d: maxpool2d needs an image input" % index)
        _, c, h, w = shape
        oh = (h - layer.k) // layer.stride + 1
        ow = (w - layer.k) // layer.stride + 1
        if h < layer.k or oh < 1 or ow < 1:
            raise ShapeMismatch("layer %d: maxpool2d output collapses" % index)
        return ("img", c, oh, ow)
    if isinstance(layer, GlobalAvgPool):
        if shape[0] != "img":
            raise ShapeMismatch("layer %d: global_avg_pool needs an image input" % index)
        return ("flat", shape[1])
    if isinstance(layer, Dense):
        n = shape[1] if shape[0] == "flat" else shape[1] * shape[2] * shape[3]
        if n != layer.in_f:
            raise ShapeMismatch(
                "layer %d: dense expects %d features, got %d" % (index, layer.in_f, n)
            )
        return ("flat", layer.out_f)
    if isinstance(layer, ResidualAdd):
        if not 0 <= layer.source < index:
            raise ShapeMismatch(
                "layer %d: residual source %d out of range" % (index, layer.source)
            )
        if outputs[layer.source] != shape:
            raise ShapeMismatch(
                "layer %d: residual shape %r != current %r"
                % (index, outputs[layer.source], shape)
            )
        return shape
    # relu / softmax preserve shape
    return shape


@dataclass
class ModelGraph:
    layers: list
    input_side: Optional[int] = None  # pinned only for dense-first graphs

    @property
    def n_params(self) -> int:
        return sum(layer.n_params for layer in self.layers)

    def infer_shapes(self, side: int) -> list:
        """Propagate shapes from a (1, side, side) input; raises ShapeMismatch."""
        if self.layers and isinstance(self.layers[0], Dense):
            shape = ("flat", self.layers[0].in_f)
        else:
            shape = ("img", 1, side, side)
        outputs = []
        for i, layer in enumerate(self.layers):
            shape = _step_shape(shape, layer, i, outputs)
            outputs.append(shape)
        final = outputs[-1] if outputs else shape
        if final != ("flat", 2):
            raise ShapeMismatch("graph must end in 2 logits, got %r" % (final,))
        return outputs

    def validate(self, probe_side: int = DEFAULT_SIDE) -> None:
        self.infer_shapes(self.input_side or probe_side)


def _probe_side(layers: list) -> Optional[int]:
    if layers and isinstance(layers[0], Dense):
        root = isqrt(layers[0].in_f)
        return root if root * root == layers[0].in_f else None
    return None


def save_model(graph: ModelGraph) -> bytes:
    out = bytearray()
    out += MAGIC
    out += struct.pack("<BH", VERSION, len(graph.layers))
    for layer in graph.layers:
        out += struct.pack("<B", int(layer.kind))
        for dim in layer.dims:
            out += struct.pack("<I", dim)
        if isinstance(layer, (Conv2d, Dense)):
            weight = np.ascontiguousarray(layer.weight, dtype="<f4")
            bias = np.ascontiguousarray(layer.bias, dtype="<f4")
            if weight.size + bias.size != layer.n_params:
                raise ShapeMismatch("parameter arrays do not match declared dims")
            out += weight.tobytes()
            out += bias.tobytes()
    out += struct.pack("<I", zlib.crc32(bytes(out)))
    return bytes(out)


def load_model(data: bytes) -> ModelGraph:
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagic("not a weight file")
    if len(data) < 7 + 4:
        raise ShapeMismatch("weight file truncated")
    version, layer_count = struct.unpack_from("<BH", data, 4)
    if version != VERSION:
        raise UnsupportedVersion("unsupported weight file version %d" % version)
    pos = 7
    layers = []
    for index in range(layer_count):
        if pos + 1 > len(data) - 4:
            raise ShapeMismatch("layer %d: header truncated" % index)
        raw_kind = data[pos]
        pos += 1
        try:
            kind = LayerKind(raw_kind)
        except ValueError:
            raise UnknownLayerKind("layer %d: unknown kind %d" % (index, raw_kind))
        ndims = _DIM_COUNT[kind]
        if pos + 4 * ndims > len(data) - 4:
            raise ShapeMismatch("layer %d: dims truncated" % index)
        dims = struct.unpack_from("<%dI" % ndims, data, pos) if ndims else ()
        pos += 4 * ndims
        layer = _make_layer(kind, dims)
        if layer.n_params:
            nbytes = 4 * layer.n_params
            if pos + nbytes > len(data) - 4:
                raise ShapeMismatch("layer %d: parameters truncated" % index)
            params = np.frombuffer(data, dtype="<f4", count=layer.n_params, offset=pos)
            pos += nbytes
            if isinstance(layer, Conv2d):
                split = layer.out_ch * layer.in_ch * layer.k * layer.k
                layer.weight = params[:split].reshape(
                    layer.out_ch, layer.in_ch, layer.k, layer.k
                )
                layer.bias = params[split:]
            else:
                split = layer.out_f * layer.in_f
                layer.weight = params[:split].reshape(layer.out_f, layer.in_f)
                layer.bias = params[split:]
        layers.append(layer)
    if pos != len(data) - 4:
        raise ShapeMismatch(
            "weight file length mismatch (%d trailing bytes)" % (len(data) - 4 - pos)
        )
    (crc,) = struct.unpack_from("<I", data, pos)
    if crc != zlib.crc32(data[:pos]):
        raise ChecksumMismatch("weight file checksum mismatch")
    graph = ModelGraph(layers=layers, input_side=_probe_side(layers))
    graph.validate()
    return graph


def load_model_file(path) -> ModelGraph:
    with open(path, "rb") as fh:
        return load_model(fh.read())


def small_resnet_arch(channels: int = 8) -> list:
    """Default architecture: stem conv, two residual blocks around a maxpool,
    global average pooling, and a 2-logit head."""
    c = channels
    return [
        Conv2d(1, c, 3, 1, 1),
        Relu(),
        Conv2d(c, c, 3, 1, 1),
        Relu(),
        Conv2d(c, c, 3, 1, 1),
        ResidualAdd(1),
        Relu(),
        MaxPool2d(2, 2),
        Conv2d(c, c, 3, 1, 1),
        Relu(),
        Conv2d(c, c, 3, 1, 1),
        ResidualAdd(7),
        Relu(),
        GlobalAvgPool(),
        Dense(c, 2),
        Softmax(),
    ]


def random_small_resnet(seed: int = 0, channels: int = 8) -> ModelGraph:
    """Small-resnet with He-style random weights; used for tests and benches."""
    rng = np.random.default_rng(seed)
    layers = small_resnet_arch(channels)
    for layer in layers:
        if isinstance(layer, Conv2d):
            fan_in = layer.in_ch * layer.k * layer.k
            layer.weight = rng.normal(0, (2.0 / fan_in) ** 0.5,
                                      (layer.out_ch, layer.in_ch, layer.k, layer.k)
                                      ).astype(np.float32)
            layer.bias = np.zeros(layer.out_ch, dtype=np.float32)
        elif isinstance(layer, Dense):
            layer.weight = rng.normal(0, (2.0 / layer.in_f) ** 0.5,
                                      (layer.out_f, layer.in_f)).astype(np.float32)
            layer.bias = np.zeros(layer.out_f, dtype=np.float32)
    return ModelGraph(layers=layers)
