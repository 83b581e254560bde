"""Experiment configuration: YAML sections, defaults and strict key validation."""
from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import yaml

from .errors import ConfigError

KINDS = ("train", "vmm-bench", "hysteresis", "sweep", "amoeba", "cost")

# every accepted key with its default; None marks "no default / optional"
SCHEMA: dict = {
    "experiment": None,
    "seed": 0,
    "output": None,
    "device": {
        "preset": "tiox-memristor", "x_min": None, "x_max": None, "p_max": None,
        "a_ltp": None, "a_ltd": None, "sigma_d2d": None, "sigma_c2c": None,
        "stuck_prob": None, "kind": None,
    },
    "crossbar": {
        "rows": 64, "cols": 64, "r_line": 0.5, "v_read": 0.2, "access": "passive",
        "w_max": 1.0, "vectors": 32, "r_line_values": None,
    },
    "quantizer": {"input_bits": 8, "adc_bits": 5, "calibrate": True, "array_size": 128},
    "meminductor": {
        "preset": "tiox-meminductor", "k": None, "gm1": None, "gm3": None, "c1": None,
        "c2": None, "v_ss": None, "v_t": None, "mode": None, "sign": None,
    },
    "hysteresis": {"v_m": 0.5, "f": 3e6, "cycles": 6, "steps_per_cycle": 2000,
                   "topology": "single", "elements": 2},
    "sweep": {"param": "f", "values": [1e6, 3e6, 10e6, 30e6], "v_m": 0.5, "f": 3e6,
              "cycles": 6, "steps_per_cycle": 2000},
    "amoeba": {"r": 1e3, "c": 10e-12, "dt": 2e-8, "duration": 2e-4, "frozen": False,
               "waveform": "dips", "level": 1.0, "depth": 0.5, "period": 4e-5, "width": 8e-6},
    "training": {
        "network": "mnist-cnn", "hidden": [32], "downsample": 1,
        "dataset": "idx", "data_dir": None, "train_images": 20000, "test_images": 10000,
        "lr": 0.05, "epochs": 4, "batch_size": 32, "analog_path": "ideal", "backend": "float",
        "r_line": 0.0, "v_read": 0.2, "access": "passive", "w_scale": 2.0, "val_fraction": 0.1,
        "eval_batch": 500, "backprop_weights": "effective", "r_sense": 1.5e3, "on_off": 10.0,
        "lr_decay": 1.0,
    },
    "tech": {"preset": "plausible-22nm", "overrides": {}},
    "cost": {"network": "vgg8", "array_size": 128, "pe_arrays": 2, "cols_per_weight": None,
             "samples": 50000, "training": True, "max_arrays": None},
}

SECTIONS = tuple(k for k, v in SCHEMA.items() if isinstance(v, dict))


def _merge(defaults: dict, given: dict, where: str) -> dict:
    unknown = sorted(set(given) - set(defaults))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    out = copy.deepcopy(defaults)
    for k, v in given.items():
        if isinstance(defaults[k], dict) and k not in ("overrides",):
            if not isinstance(v, dict):
                raise ConfigError(f"{where}.{k} must be a mapping")
            out[k] = _merge(defaults[k], v, f"{where}.{k}")
        else:
            out[k] = v
    return out


def resolve(raw: dict) -> dict:
    """Validate ``raw`` against the schema and fill defaults."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping at the top level")
    cfg = _merge(SCHEMA, raw, "config")
    kind = cfg["experiment"]
    if kind not in KINDS:
        raise ConfigError(f"experiment must be one of {', '.join(KINDS)}; got {kind!r}")
    seed = cfg["seed"]
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0 or seed >= 2 ** 64:
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {seed!r}")
    return cfg


def load(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML in {path}: {exc}") from exc
    return resolve(raw)


def canonical(cfg: dict) -> str:
    return json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)


def config_hash(cfg: dict, version: str) -> str:
    return hashlib.sha256((canonical(cfg) + "\n" + version).encode()).hexdigest()


def pick(section: dict) -> dict:
    """Entries of a section that were actually set (drops ``None`` and the preset key)."""
    return {k: v for k, v in section.items() if v is not None and k != "preset"}
