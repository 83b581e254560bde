"""``memsim`` command line: run one experiment from a YAML config.

Exit status: 0 on success, 2 for configuration errors, 3 for runtime errors.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, config as cfgmod, costmodel, crossbar, devices, meminductor
from .errors import ConfigError, MemsimError
from .report import Table, emit_report

log = logging.getLogger("memsim")

SUMMARY_COLUMNS = ("sweep_param", "lobe_area", "pinch_residual", "m_inv_amplitude")


# --------------------------------------------------------------------------
# parameter assembly

def device_params(section: dict) -> devices.DeviceParams:
    try:
        return devices.preset(section["preset"], **cfgmod.pick(section))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"device: {exc}") from exc


def meminductor_params(section: dict) -> meminductor.MeminductorParams:
    try:
        return meminductor.preset(section["preset"], **cfgmod.pick(section))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"meminductor: {exc}") from exc


def tech_config(section: dict) -> costmodel.TechConfig:
    name = section["preset"]
    if name not in costmodel.TECH_PRESETS:
        raise ConfigError(f"unknown tech preset {name!r}; known: {sorted(costmodel.TECH_PRESETS)}")
    base = costmodel.TECH_PRESETS[name].to_dict()
    base.update(section.get("overrides") or {})
    return costmodel.TechConfig.from_dict(base)


# --------------------------------------------------------------------------
# experiments; each returns a list of Tables

def run_hysteresis(cfg, ctx):
    h = cfg["hysteresis"]
    p = meminductor_params(cfg["meminductor"])
    topo = h["topology"]
    if topo == "single":
        tr = meminductor.hysteresis_trace(p, h["v_m"], h["f"], h["cycles"], h["steps_per_cycle"])
    elif topo in ("series", "parallel"):
        tr = meminductor.compose([p] * int(h["elements"]), topo, h["v_m"], h["f"],
                                 h["cycles"], h["steps_per_cycle"])
    else:
        raise ConfigError(f"hysteresis.topology must be single, series or parallel; got {topo!r}")
    trace = Table("trace", meminductor.Trace.COLUMNS, [list(r) for r in tr.rows()])
    summary = Table("summary", SUMMARY_COLUMNS,
                    [[h["f"], tr.lobe_area, tr.pinch_residual, tr.m_inv_amplitude]])
    return [trace, summary]


SWEEP_PARAMS = ("f", "v_m", "gm", "gm1", "gm3", "c1", "c2", "k", "v_t", "v_ss")


def _sweep_point(args):
    p, v_m, f, cycles, spc = args
    tr = meminductor.hysteresis_trace(p, v_m, f, cycles, spc)
    return tr.lobe_area, tr.pinch_residual, tr.m_inv_amplitude


def run_sweep(cfg, ctx):
    s = cfg["sweep"]
    base = meminductor_params(cfg["meminductor"])
    name = s["param"]
    if name not in SWEEP_PARAMS:
        raise ConfigError(f"sweep.param must be one of {', '.join(SWEEP_PARAMS)}; got {name!r}")
    values = [float(v) for v in (s["values"] or [])]
    jobs = []
    for v in values:
        p, v_m, f = base, s["v_m"], s["f"]
        if name == "f":
            f = v
        elif name == "v_m":
            v_m = v
        elif name == "gm":
            p = base.with_(gm1=v, gm3=v)
        else:
            p = base.with_(**{name: v})
        jobs.append((p, v_m, f, s["cycles"], s["steps_per_cycle"]))
    if ctx["threads"] > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(ctx["threads"], len(jobs))) as pool:
            results = list(pool.map(_sweep_point, jobs))
    else:
        results = [_sweep_point(j) for j in jobs]
    rows = [[v, *r] for v, r in zip(values, results)]
    return [Table("summary", SUMMARY_COLUMNS, rows)]


def amoeba_waveform(a: dict) -> np.ndarray:
    n = int(round(a["duration"] / a["dt"])) + 1
    t = np.arange(n) * a["dt"]
    if a["waveform"] == "step":
        return np.full(n, float(a["level"]))
    if a["waveform"] == "dips":
        phase = np.mod(t, a["period"])
        start = 0.5 * a["period"]
        dip = (phase >= start) & (phase < start + a["width"])
        return np.where(dip, a["level"] - a["depth"], a["level"])
    raise ConfigError(f"amoeba.waveform must be step or dips; got {a['waveform']!r}")


def run_amoeba(cfg, ctx):
    a = cfg["amoeba"]
    p = meminductor_params(cfg["meminductor"])
    if a["frozen"]:
        p = p.with_(gm3=0.0)
    tr = meminductor.simulate_amoeba(p, a["r"], a["c"], amoeba_waveform(a), a["dt"])
    return [Table("trace", meminductor.AmoebaTrace.COLUMNS, [list(r) for r in tr.rows()])]


def run_vmm_bench(cfg, ctx):
    x = cfg["crossbar"]
    params = device_params(cfg["device"])
    rng = ctx["rng"]
    mapping = crossbar.WeightMapping.for_device(params, w_max=x["w_max"])
    w = rng.uniform(-x["w_max"], x["w_max"], size=(x["rows"], x["cols"]))
    v = rng.uniform(0.0, 1.0, size=(x["vectors"], x["rows"])) * x["v_read"]
    values = x["r_line_values"] or [x["r_line"]]
    array = crossbar.map_weights(w, mapping, params, rng, v_read=x["v_read"], access=x["access"])
    ideal = crossbar.ideal_vmm(array, v)
    rows = []
    for r in values:
        array.r_line = float(r)
        array.invalidate()
        par = crossbar.parasitic_vmm(array, v)
        err = np.abs(par - ideal) / np.maximum(np.abs(ideal), 1e-30)
        att = float(np.sum(par * ideal) / np.sum(ideal * ideal))
        rows.append([float(r), float(np.mean(err)), float(np.max(err)), att])
    return [Table("summary", ("r_line", "mean_rel_error", "max_rel_error", "attenuation"), rows)]


def _network(name, t, long_run):
    from .training import NetworkSpec

    if name == "mnist-cnn":
        return NetworkSpec.mnist_cnn()
    if name == "mlp":
        side = 28 // int(t.get("downsample", 1) or 1)
        return NetworkSpec.mlp(side * side, tuple(t.get("hidden") or ()))
    if name == "vgg8":
        if not long_run:
            raise ConfigError("network vgg8 is only available with --long-run")
        return NetworkSpec.vgg8()
    raise ConfigError(f"unknown network {name!r}")


def _datasets(t, seed, long_run):
    from .training import data

    kind = t["dataset"]
    if kind == "idx":
        if not t["data_dir"]:
            raise ConfigError("training.data_dir is required for dataset idx")
        train, test = data.load_mnist(t["data_dir"])
        train = train.subset(np.arange(min(len(train), int(t["train_images"]))))
        test = test.subset(np.arange(min(len(test), int(t["test_images"]))))
    elif kind == "subset":
        ds = data.mnist_subset()
        train, test = data.split(ds, [0.8, 0.2], np.random.default_rng([seed, 7]))
    elif kind == "cifar10":
        if not long_run:
            raise ConfigError("dataset cifar10 is only available with --long-run")
        if not t["data_dir"]:
            raise ConfigError("training.data_dir is required for dataset cifar10")
        train, test = data.load_cifar10(t["data_dir"])
    else:
        raise ConfigError(f"unknown dataset {kind!r}")
    f = int(t["downsample"] or 1)
    if f > 1:
        train, test = data.downsample(train, f), data.downsample(test, f)
    return train, test


TRAIN_KEYS = ("lr", "epochs", "batch_size", "analog_path", "backend", "r_line", "v_read", "access",
              "w_scale", "val_fraction", "eval_batch", "backprop_weights", "r_sense", "on_off",
              "lr_decay")


def run_train(cfg, ctx):
    from .training import METRIC_COLUMNS, Network, PeripheryConfig, TrainConfig, run_training

    t = cfg["training"]
    q = cfg["quantizer"]
    spec = _network(t["network"], t, ctx["long_run"])
    train, test = _datasets(t, cfg["seed"], ctx["long_run"])
    tc = TrainConfig(seed=cfg["seed"], device=device_params(cfg["device"]),
                     periphery=PeripheryConfig(q["input_bits"], q["adc_bits"], q["array_size"],
                                               q["calibrate"]),
                     **{k: t[k] for k in TRAIN_KEYS})
    net = Network.build(spec, tc)
    res = run_training(net, train, test, tc, log=lambda row: log.info("epoch %(epoch)d: %(test_acc).4f", row))
    ctx["timing"] = {"epoch_seconds": res.epoch_seconds}
    metrics = Table("metrics", METRIC_COLUMNS, res.rows())
    summary = Table("summary", ("best_epoch", "test_acc", "initial_test_acc"),
                    [[res.best_epoch, res.test_acc, res.initial_test_acc]])
    return [metrics, summary]


def run_cost(cfg, ctx):
    from .training import NetworkSpec

    c = cfg["cost"]
    tech = tech_config(cfg["tech"])
    name = c["network"]
    if name == "vgg8":
        shapes = costmodel.vgg8_shapes()
    elif name == "mnist-cnn":
        shapes = NetworkSpec.mnist_cnn().layer_shapes()
    else:
        raise ConfigError(f"cost.network must be vgg8 or mnist-cnn; got {name!r}")
    cpw = c["cols_per_weight"] if c["cols_per_weight"] is not None else 2
    plan = costmodel.plan_tiles(shapes, c["array_size"], cpw, c["pe_arrays"], c["max_arrays"])
    traffic = costmodel.traffic_for_epoch(shapes, int(c["samples"]),
                                          cfg["quantizer"]["input_bits"], bool(c["training"]))
    report = costmodel.estimate_costs(plan, shapes, traffic, tech)
    cost = Table("cost", ("metric", "value"), [list(r) for r in report.rows()]
                 + [["utilization", plan.utilization], ["tile_arrays", plan.tile_arrays]])
    placement = Table("plan", ("layer", "cells", "tiles", "arrays"),
                      [[p.name, p.cells, p.tiles, p.arrays] for p in plan.layers])
    search = Table("search", ("tile_arrays", "utilization"), [list(s) for s in plan.search])
    ctx["formats"] = {"cost": ("csv", "text")}
    return [cost, placement, search]


RUNNERS = {
    "hysteresis": run_hysteresis, "sweep": run_sweep, "amoeba": run_amoeba,
    "vmm-bench": run_vmm_bench, "train": run_train, "cost": run_cost,
}


# --------------------------------------------------------------------------

def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run_experiment(config_path, seed=None, out=None, threads=None, long_run=False) -> dict:
    """Run the experiment in ``config_path``; returns the manifest written next to the outputs."""
    cfg = cfgmod.load(config_path)
    if seed is not None:
        cfg["seed"] = int(seed)
        cfg = cfgmod.resolve(cfg)
    out_dir = Path(out or os.environ.get("MEMSIM_OUT") or cfg["output"] or "out")
    cap = threads or int(os.environ.get("MEMSIM_THREADS", "1") or 1)
    if cap < 1:
        raise ConfigError("thread count must be >= 1")
    ctx = {"rng": np.random.default_rng(cfg["seed"]), "threads": cap, "long_run": long_run,
           "formats": {}}
    tables = RUNNERS[cfg["experiment"]](cfg, ctx)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for t in tables:
        written += emit_report(t, out_dir, ctx["formats"].get(t.name, ("csv",)))
    if "timing" in ctx:  # wall-clock data kept out of the deterministic CSVs
        (out_dir / "timing.json").write_text(json.dumps(ctx["timing"], indent=2) + "\n")
    cfg_for_hash = dict(cfg, output=None)
    manifest = {
        "version": __version__,
        "experiment": cfg["experiment"],
        "seed": cfg["seed"],
        "config": cfg_for_hash,
        "config_sha256": cfgmod.config_hash(cfg_for_hash, __version__),
        "outputs": {p.name: _sha256(p) for p in written},
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return manifest


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="memsim", description=__doc__.splitlines()[0])
    ap.add_argument("--config", required=True, help="experiment YAML file")
    ap.add_argument("--seed", type=int, help="override the config seed (unsigned 64-bit)")
    ap.add_argument("--out", help="output directory (env MEMSIM_OUT, else config 'output', else ./out)")
    ap.add_argument("--threads", type=int, help="worker cap for sweeps (env MEMSIM_THREADS)")
    ap.add_argument("--long-run", action="store_true", help="unlock CIFAR-10 / VGG-8 training")
    ap.add_argument("-v", "--verbose", action="store_true")
    ap.add_argument("--version", action="version", version=f"memsim {__version__}")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        manifest = run_experiment(args.config, args.seed, args.out, args.threads, args.long_run)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (MemsimError, OSError, ArithmeticError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    for name, digest in sorted(manifest["outputs"].items()):
        print(f"{digest[:12]}  {name}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
