"""Small networks trained through ideal, device-crossbar or meminductor VMM engines."""
from .data import (Dataset, downsample, load_cifar10, load_dataset, load_mnist, mnist_subset,
                   read_idx, split,
                   write_idx)
from .engines import CrossbarEngine, Engine, FloatEngine, MeminductorEngine, PeripheryConfig
from .network import (ConvMapping, Layer, NetworkSpec, im2col, im2col_map, init_weights,
                      row_tiles, softmax_xent)
from .trainer import (METRIC_COLUMNS, ForwardCache, Network, TrainConfig, TrainResult, backward,
                      evaluate, forward, program_update, run_training)

__all__ = [
    "ConvMapping", "CrossbarEngine", "Dataset", "Engine", "FloatEngine", "ForwardCache",
    "Layer", "METRIC_COLUMNS", "MeminductorEngine", "Network", "NetworkSpec", "PeripheryConfig",
    "TrainConfig", "TrainResult", "backward", "downsample", "evaluate", "forward", "im2col",
    "im2col_map", "init_weights", "load_cifar10", "load_dataset", "load_mnist", "mnist_subset", "program_update", "read_idx",
    "row_tiles", "run_training", "softmax_xent", "split", "write_idx",
]
