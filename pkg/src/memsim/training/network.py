"""Small CNN / MLP definitions, im2col mapping and the float reference math."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..costmodel import LayerShape
from ..errors import MappingError, ShapeError


@dataclass(frozen=True)
class Layer:
    kind: str            # "conv", "dense" or "pool"
    size: int            # filters, units, or pool window
    kernel: int = 3
    pad: int = 0         # zero padding on each side (conv only)

    def __post_init__(self):
        if self.kind not in ("conv", "dense", "pool"):
            raise ShapeError(f"unknown layer kind {self.kind!r}")
        if self.size < 1 or self.kernel < 1:
            raise ShapeError("layer sizes must be >= 1")
        if self.pad < 0 or (self.pad and self.kind != "conv"):
            raise ShapeError("padding must be >= 0 and only applies to conv layers")


def _parse_layer(d) -> Layer:
    if isinstance(d, Layer):
        return d
    if isinstance(d, dict):
        if len(d) == 1 and "kernel" not in d:
            (kind, size), = d.items()
            return Layer(kind, int(size))
        d = dict(d)
        return Layer(d.pop("kind"), int(d.pop("size")), int(d.pop("kernel", 3)), int(d.pop("pad", 0)))
    kind, size = d
    return Layer(kind, int(size))


@dataclass
class NetworkSpec:
    """Ordered layers over an ``(H, W, C)`` input.

    ReLU follows every conv and every dense layer except the last; pooling is
    2x2 max (window = ``size``).  Convolutions have stride 1 and are unpadded
    unless a layer sets ``pad``.
    """

    input_shape: tuple
    layers: list
    classes: int = 10
    shapes: list = field(init=False, repr=False)

    def __post_init__(self):
        self.input_shape = tuple(int(s) for s in self.input_shape)
        if len(self.input_shape) == 2:
            self.input_shape = self.input_shape + (1,)
        self.layers = [_parse_layer(l) for l in self.layers]
        if not self.layers or self.layers[-1].kind != "dense":
            raise ShapeError("network must end with a dense layer")
        if self.layers[-1].size != self.classes:
            raise ShapeError(f"final layer has {self.layers[-1].size} units for {self.classes} classes")
        self.shapes = []
        shape = self.input_shape
        for layer in self.layers:
            if layer.kind == "conv":
                if len(shape) != 3:
                    raise ShapeError("conv layer after flattening")
                h, w, d = shape
                h, w = h + 2 * layer.pad, w + 2 * layer.pad
                k = layer.kernel
                if k > h or k > w:
                    raise ShapeError(f"{k}x{k} kernel does not fit a {h}x{w} input")
                shape = (h - k + 1, w - k + 1, layer.size)
            elif layer.kind == "pool":
                if len(shape) != 3:
                    raise ShapeError("pool layer after flattening")
                h, w, d = shape
                if h < layer.size or w < layer.size:
                    raise ShapeError("pool window larger than feature map")
                shape = (h // layer.size, w // layer.size, d)
            else:
                shape = (layer.size,)
            self.shapes.append(shape)

    @classmethod
    def mnist_cnn(cls) -> "NetworkSpec":
        return cls((28, 28, 1), [("conv", 5), ("pool", 2), ("conv", 15), ("pool", 2),
                                 ("conv", 25), ("dense", 10)])

    @classmethod
    def mlp(cls, inputs: int, hidden: Sequence[int] = (100,), classes: int = 10) -> "NetworkSpec":
        return cls((inputs, 1, 1), [("dense", h) for h in hidden] + [("dense", classes)], classes)

    @classmethod
    def vgg8(cls) -> "NetworkSpec":
        conv = [Layer("conv", n, 3, pad=1) for n in (128, 128, 256, 256, 512, 512)]
        pool = Layer("pool", 2)
        return cls((32, 32, 3), [conv[0], conv[1], pool, conv[2], conv[3], pool, conv[4], conv[5],
                                 pool, ("dense", 1024), ("dense", 10)])

    def input_shape_of(self, index: int) -> tuple:
        return self.input_shape if index == 0 else self.shapes[index - 1]

    def weighted(self) -> list[int]:
        return [k for k, l in enumerate(self.layers) if l.kind != "pool"]

    def matrix_shape(self, index: int) -> tuple[int, int]:
        layer = self.layers[index]
        shape = self.input_shape_of(index)
        if layer.kind == "conv":
            return layer.kernel * layer.kernel * shape[2], layer.size
        return int(np.prod(shape)), layer.size

    def layer_shapes(self) -> list[LayerShape]:
        out = []
        for k in self.weighted():
            rows, cols = self.matrix_shape(k)
            vectors = 1
            if self.layers[k].kind == "conv":
                vectors = self.shapes[k][0] * self.shapes[k][1]
            out.append(LayerShape(f"{self.layers[k].kind}{k}", rows, cols, vectors))
        return out


@dataclass
class ConvMapping:
    """Row layout of a conv layer's weight matrix.

    Rows are ordered ``(kh, kw, d)``, so spatial offset ``(i, j)`` owns the
    ``D x N`` sub-matrix at rows ``(i*K + j)*D ... +D``.
    """

    kernel: int
    in_channels: int
    out_channels: int
    blocks: list[slice]

    @property
    def rows(self) -> int:
        return self.kernel * self.kernel * self.in_channels


def im2col_map(kernel: int, in_channels: int, out_channels: int) -> ConvMapping:
    if min(kernel, in_channels, out_channels) < 1:
        raise MappingError("conv dimensions must be >= 1")
    D = in_channels
    blocks = [slice(b * D, (b + 1) * D) for b in range(kernel * kernel)]
    return ConvMapping(kernel, D, out_channels, blocks)


def row_tiles(blocks: Sequence[slice], array_rows: int) -> list[slice]:
    """Group consecutive sub-matrix row blocks into array-sized row ranges.

    Whole blocks are packed while they fit; a block taller than an array is
    split across several arrays on its own.
    """
    if array_rows < 1:
        raise MappingError("array must have at least one row")
    tiles = []
    start = stop = blocks[0].start
    for b in blocks:
        height = b.stop - b.start
        if height > array_rows:
            if stop > start:
                tiles.append(slice(start, stop))
            for s in range(b.start, b.stop, array_rows):
                tiles.append(slice(s, min(s + array_rows, b.stop)))
            start = stop = b.stop
        elif b.stop - start > array_rows:
            tiles.append(slice(start, stop))
            start, stop = b.start, b.stop
        else:
            stop = b.stop
    if stop > start:
        tiles.append(slice(start, stop))
    return tiles


def pad_hw(x: np.ndarray, p: int) -> np.ndarray:
    return np.pad(x, ((0, 0), (p, p), (p, p), (0, 0))) if p else x


def im2col(x: np.ndarray, k: int) -> np.ndarray:
    """``(n, H, W, D)`` -> ``(n, oh, ow, k*k*D)`` patches in ``(kh, kw, d)`` order."""
    win = sliding_window_view(x, (k, k), axis=(1, 2))       # n, oh, ow, D, kh, kw
    n, oh, ow = win.shape[:3]
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(n, oh, ow, -1)


def col2im(dcols: np.ndarray, k: int, in_shape: tuple) -> np.ndarray:
    n, oh, ow, _ = dcols.shape
    H, W, D = in_shape
    d = dcols.reshape(n, oh, ow, k, k, D)
    dx = np.zeros((n, H, W, D))
    for i in range(k):
        for j in range(k):
            dx[:, i:i + oh, j:j + ow, :] += d[:, :, :, i, j, :]
    return dx


def maxpool(x: np.ndarray, s: int):
    n, H, W, D = x.shape
    h, w = H // s, W // s
    v = x[:, :h * s, :w * s].reshape(n, h, s, w, s, D).transpose(0, 1, 3, 5, 2, 4).reshape(n, h, w, D, s * s)
    arg = v.argmax(axis=-1)
    return np.take_along_axis(v, arg[..., None], -1)[..., 0], arg


def maxpool_backward(dy: np.ndarray, arg: np.ndarray, s: int, in_shape: tuple) -> np.ndarray:
    n, h, w, D = dy.shape
    H, W, _ = in_shape
    dv = np.zeros((n, h, w, D, s * s))
    np.put_along_axis(dv, arg[..., None], dy[..., None], -1)
    dv = dv.reshape(n, h, w, D, s, s).transpose(0, 1, 4, 2, 5, 3).reshape(n, h * s, w * s, D)
    dx = np.zeros((n, H, W, D))
    dx[:, :h * s, :w * s] = dv
    return dx


def softmax_xent(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy and its gradient with respect to the logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = len(labels)
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n


def init_weights(spec: NetworkSpec, rng: np.random.Generator, w_max: float = 1.0):
    """He-uniform weights clipped to ``[-w_max, w_max]``, zero biases."""
    weights, biases = {}, {}
    for k in spec.weighted():
        rows, cols = spec.matrix_shape(k)
        lim = min(np.sqrt(6.0 / rows), w_max)
        weights[k] = rng.uniform(-lim, lim, size=(rows, cols))
        biases[k] = np.zeros(cols)
    return weights, biases
