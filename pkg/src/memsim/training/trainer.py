"""Forward/backward passes through the engines and the SGD training loop."""
from __future__ import annotations

import time
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .. import devices, meminductor
from ..devices import DeviceParams
from ..errors import ConfigError, ParameterError, ShapeError, TrainingDiverged
from .data import Dataset, split
from .engines import CrossbarEngine, Engine, FloatEngine, MeminductorEngine, PeripheryConfig
from .network import (NetworkSpec, col2im, im2col, im2col_map, init_weights, maxpool, pad_hw,
                      maxpool_backward, row_tiles, softmax_xent)

METRIC_COLUMNS = ("epoch", "loss", "train_acc", "val_acc", "test_acc")


@dataclass
class TrainConfig:
    lr: float = 0.05
    epochs: int = 5
    batch_size: int = 32
    seed: int = 0
    analog_path: str = "ideal"          # ideal | nonideal
    backend: str = "float"              # float | device | meminductor
    device: DeviceParams | None = None  # for backend=device
    r_line: float = 0.0
    v_read: float = 0.2
    access: str = "passive"
    periphery: PeripheryConfig = field(default_factory=PeripheryConfig)
    w_scale: float = 1.0                # per-layer range = w_scale * sqrt(6 / fan_in)
    val_fraction: float = 0.1
    eval_batch: int = 500
    backprop_weights: str = "effective"  # effective | target
    r_sense: float = 1.5e3
    on_off: float = 10.0
    lr_decay: float = 1.0               # multiplied into lr after every epoch

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError("learning rate must be > 0")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.analog_path not in ("ideal", "nonideal"):
            raise ConfigError(f"analog_path must be ideal or nonideal, got {self.analog_path!r}")
        if self.backend not in ("float", "device", "meminductor"):
            raise ConfigError(f"unknown backend {self.backend!r}")
        if self.backprop_weights not in ("effective", "target"):
            raise ConfigError("backprop_weights must be effective or target")
        if not 0 <= self.val_fraction < 1:
            raise ConfigError("val_fraction must lie in [0, 1)")
        if isinstance(self.periphery, dict):
            self.periphery = PeripheryConfig(**self.periphery)
        if self.backend == "device" and self.device is None:
            self.device = devices.preset("tiox-memristor")


class Network:
    def __init__(self, spec: NetworkSpec, engines: dict[int, Engine], biases: dict[int, np.ndarray]):
        self.spec = spec
        self.engines = engines
        self.biases = biases

    @classmethod
    def build(cls, spec: NetworkSpec, config: TrainConfig, rng: np.random.Generator | None = None,
              weights=None) -> "Network":
        ss = np.random.SeedSequence(config.seed)
        init_ss, dev_ss = ss.spawn(2)
        rng = rng or np.random.default_rng(init_ss)
        if weights is None:
            weights, biases = init_weights(spec, rng)
        else:
            biases = {k: np.zeros(spec.matrix_shape(k)[1]) for k in spec.weighted()}
        engines = {}
        dev_rngs = [np.random.default_rng(s) for s in dev_ss.spawn(len(spec.weighted()))]
        for k, drng in zip(spec.weighted(), dev_rngs):
            layer = spec.layers[k]
            rows, cols = spec.matrix_shape(k)
            w = weights[k]
            if w.shape != (rows, cols):
                raise ShapeError(f"layer {k}: weights {w.shape}, expected {(rows, cols)}")
            tiles = None
            if layer.kind == "conv":
                cm = im2col_map(layer.kernel, spec.input_shape_of(k)[2], layer.size)
                tiles = row_tiles(cm.blocks, config.periphery.array_size)
            w_max = config.w_scale * np.sqrt(6.0 / rows)
            if config.backend == "float":
                engines[k] = FloatEngine(w, w_max, config.periphery, tiles)
            elif config.backend == "device":
                engines[k] = CrossbarEngine(w, config.device, drng, w_max, config.r_line,
                                            config.v_read, config.access, config.periphery, tiles)
            else:
                engines[k] = MeminductorEngine(w, meminductor.MeminductorReadout(), config.r_sense,
                                               config.on_off, w_max, config.periphery, tiles)
        return cls(spec, engines, biases)

    def begin_epoch(self):
        for e in self.engines.values():
            e.begin_epoch()

    def state(self):
        return ({k: e.state() for k, e in self.engines.items()},
                {k: b.copy() for k, b in self.biases.items()})

    def restore(self, state):
        eng, biases = state
        for k, s in eng.items():
            self.engines[k].restore(s)
        self.biases = {k: b.copy() for k, b in biases.items()}


@dataclass
class ForwardCache:
    inputs: list        # per layer: what the layer consumed (patches for conv)
    aux: list           # relu masks / pool argmax
    logits: np.ndarray


def _prepare(net: Network, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    want = net.spec.input_shape
    if x.shape[1:] == want:
        return x
    if int(np.prod(x.shape[1:])) != int(np.prod(want)):
        raise ShapeError(f"batch of {x.shape[1:]} does not fit input shape {want}")
    return x.reshape((len(x),) + want)


def forward(net: Network, batch, mode: str = "ideal") -> ForwardCache:
    spec = net.spec
    x = _prepare(net, batch)
    n = len(x)
    last = len(spec.layers) - 1
    inputs, aux = [], []
    for k, layer in enumerate(spec.layers):
        if layer.kind == "pool":
            inputs.append(x.shape)
            x, arg = maxpool(x, layer.size)
            aux.append(arg)
            continue
        eng = net.engines[k]
        if layer.kind == "conv":
            cols = im2col(pad_hw(x, layer.pad), layer.kernel)
            oh, ow = cols.shape[1:3]
            flat = cols.reshape(-1, cols.shape[-1])
            z = eng.matmul(flat, mode) + net.biases[k]
            inputs.append((flat, x.shape))
            z = z.reshape(n, oh, ow, layer.size)
        else:
            flat = x.reshape(n, -1)
            z = eng.matmul(flat, mode) + net.biases[k]
            inputs.append((flat, x.shape))
        if k == last:
            aux.append(None)
            x = z
        else:
            mask = z > 0
            aux.append(mask)
            x = z * mask
    return ForwardCache(inputs, aux, x)


def _backprop_weights(eng: Engine, which: str):
    w = eng.effective()
    if which == "target" and isinstance(eng, CrossbarEngine):
        w = w + eng.residual
    return w


def backward(net: Network, cache: ForwardCache, labels=None, dlogits=None,
             backprop_weights: str = "effective"):
    """Softmax cross-entropy gradients for every weighted layer.

    Returns ``(loss, grads)`` where ``grads[k] = (dW, db)``.  Pass ``dlogits``
    instead of ``labels`` to backpropagate an arbitrary output error (the loss
    is then ``nan``).
    """
    spec = net.spec
    if dlogits is None:
        loss, d = softmax_xent(cache.logits, np.asarray(labels))
    else:
        loss, d = float("nan"), np.asarray(dlogits, dtype=float)
    grads = {}
    last = len(spec.layers) - 1
    for k in range(last, -1, -1):
        layer = spec.layers[k]
        if layer.kind == "pool":
            d = maxpool_backward(d, cache.aux[k], layer.size, cache.inputs[k][1:])
            continue
        if k != last:
            d = d * cache.aux[k]
        flat, in_shape = cache.inputs[k]
        d2 = d.reshape(-1, layer.size)
        grads[k] = (flat.T @ d2, d2.sum(axis=0))
        if k == 0:
            break
        dflat = d2 @ _backprop_weights(net.engines[k], backprop_weights).T
        if layer.kind == "conv":
            n, h, w_, _ = in_shape
            p = layer.pad
            oh, ow = h + 2 * p - layer.kernel + 1, w_ + 2 * p - layer.kernel + 1
            d = col2im(dflat.reshape(n, oh, ow, -1), layer.kernel, (h + 2 * p, w_ + 2 * p, in_shape[3]))
            d = d[:, p:p + h, p:p + w_]
        else:
            d = dflat.reshape(in_shape)
    return loss, grads


def program_update(net: Network, grads, lr: float) -> None:
    """Write ``-lr * grad`` into every layer (pulses for device layers); biases stay digital."""
    if not lr > 0:
        raise ParameterError("learning rate must be > 0")
    for k, (dw, db) in grads.items():
        net.engines[k].update(-lr * dw)
        net.biases[k] = net.biases[k] - lr * db


def evaluate(net: Network, ds: Dataset, mode: str, batch: int = 500):
    if len(ds) == 0:
        return float("nan"), float("nan")
    total_loss, correct = 0.0, 0
    for s in range(0, len(ds), batch):
        x, y = ds.images[s:s + batch], ds.labels[s:s + batch]
        logits = forward(net, x, mode).logits
        loss, _ = softmax_xent(logits, y)
        total_loss += loss * len(y)
        correct += int((logits.argmax(axis=1) == y).sum())
    return total_loss / len(ds), correct / len(ds)


@dataclass
class TrainResult:
    history: list[dict]
    best_epoch: int
    test_acc: float
    epoch_seconds: list[float]

    def rows(self):
        """One row per trained epoch; the untrained baseline (epoch 0) is left out."""
        return [[h[c] for c in METRIC_COLUMNS] for h in self.history if h["epoch"] > 0]

    @property
    def initial_test_acc(self) -> float:
        return self.history[0]["test_acc"]


def run_training(net: Network, train: Dataset, test: Dataset, config: TrainConfig,
                 val: Dataset | None = None, log=None) -> TrainResult:
    """Plain minibatch SGD with a held-out validation split for model selection.

    Epoch 0 is the untrained network.  The returned ``test_acc`` belongs to
    the epoch with the best validation accuracy (earliest on ties); that
    epoch's weights are restored into ``net`` on return.
    """
    ss = np.random.SeedSequence([config.seed, 1])
    split_rng, order_rng = (np.random.default_rng(s) for s in ss.spawn(2))
    if val is None:
        if config.val_fraction > 0:
            val, train = split(train, [config.val_fraction, 1 - config.val_fraction], split_rng)
        else:
            val = train.subset(np.arange(0))
    mode = config.analog_path
    history, seconds = [], []
    net.begin_epoch()
    loss, train_acc = evaluate(net, train, mode, config.eval_batch)
    _, val_acc = evaluate(net, val, mode, config.eval_batch)
    _, test_acc = evaluate(net, test, mode, config.eval_batch)
    history.append(dict(epoch=0, loss=loss, train_acc=train_acc, val_acc=val_acc, test_acc=test_acc))
    best = (val_acc, 0, test_acc, net.state())
    lr = config.lr
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        net.begin_epoch()
        order = order_rng.permutation(len(train))
        loss_sum, correct = 0.0, 0
        for s in range(0, len(order), config.batch_size):
            idx = order[s:s + config.batch_size]
            y = train.labels[idx]
            cache = forward(net, train.images[idx], mode)
            loss, grads = backward(net, cache, y, backprop_weights=config.backprop_weights)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch {s // config.batch_size}"
                                       f" (lr={lr}); lower the learning rate")
            loss_sum += loss * len(idx)
            correct += int((cache.logits.argmax(axis=1) == y).sum())
            program_update(net, grads, lr)
        _, val_acc = evaluate(net, val, mode, config.eval_batch)
        _, test_acc = evaluate(net, test, mode, config.eval_batch)
        row = dict(epoch=epoch, loss=loss_sum / len(train), train_acc=correct / len(train),
                   val_acc=val_acc, test_acc=test_acc)
        history.append(row)
        seconds.append(time.perf_counter() - t0)
        if log:
            log(row)
        if len(val) and val_acc > best[0]:
            best = (val_acc, epoch, test_acc, net.state())
        elif not len(val):
            best = (val_acc, epoch, test_acc, net.state())
        lr *= config.lr_decay
    _, best_epoch, best_test, state = best
    net.restore(state)
    return TrainResult(history, best_epoch, best_test, seconds)
