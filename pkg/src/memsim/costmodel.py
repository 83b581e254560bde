"""Chip-level area / latency / energy estimates for a network mapped onto crossbar tiles.

Every technology constant is configuration.  The shipped ``plausible-22nm``
preset is an order-of-magnitude placeholder, not foundry data.
"""
from __future__ import annotations

import math
from dataclasses import MISSING, asdict, dataclass, field, fields
from typing import Iterable, Sequence

from .errors import ConfigError, PlanningError


@dataclass(frozen=True)
class TechConfig:
    clock_hz: float
    e_cell_read: float          # J per cell per read cycle
    e_adc_per_bit: float        # J per conversion per resolved bit
    e_shift_add: float          # J per accumulate operation
    e_buffer_per_bit: float     # J per bit written or read
    e_interconnect_per_bit_mm: float
    area_cell_um2: float
    area_adc_um2: float
    area_shift_add_um2: float
    area_buffer_per_bit_um2: float
    wire_pitch_mm: float        # H-tree wire pitch, sets wire area
    wire_delay_per_mm: float    # s/mm
    adc_bits: int = 5
    columns_per_adc: int = 8
    buffer_bits_per_cycle: int = 512
    leakage_w: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "leakage_w":
                if v < 0:
                    raise ConfigError("leakage_w must be >= 0")
            elif not v > 0:
                raise ConfigError(f"tech constant {f.name} must be > 0, got {v}")

    @classmethod
    def from_dict(cls, d: dict) -> "TechConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown tech constants: {sorted(unknown)}")
        required = [f.name for f in fields(cls) if f.default is MISSING]
        for name in required:
            if name not in d:
                raise ConfigError(f"missing tech constant: {name}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


TECH_PRESETS = {
    # placeholder magnitudes for a 22 nm-class node; not derived from any PDK
    "plausible-22nm": TechConfig(
        clock_hz=1e9,
        e_cell_read=5e-16,
        e_adc_per_bit=2e-13,
        e_shift_add=5e-14,
        e_buffer_per_bit=2e-14,
        e_interconnect_per_bit_mm=1e-13,
        area_cell_um2=0.0484,
        area_adc_um2=250.0,
        area_shift_add_um2=40.0,
        area_buffer_per_bit_um2=0.15,
        wire_pitch_mm=2e-4,
        wire_delay_per_mm=1e-10,
    ),
}


@dataclass(frozen=True)
class LayerShape:
    name: str
    rows: int              # weight-matrix rows (K*K*D for conv)
    cols: int              # output channels / units
    vectors_per_sample: int = 1   # input vectors per inference (output pixels for conv)

    @property
    def macs_per_sample(self) -> int:
        return self.rows * self.cols * self.vectors_per_sample


@dataclass
class LayerPlacement:
    name: str
    cells: int
    tiles: int
    arrays: int


@dataclass
class ChipPlan:
    array_size: int
    tile_arrays: int           # tile side, in arrays
    pe_arrays: int             # PE side, in arrays
    cols_per_weight: int
    layers: list[LayerPlacement]
    utilization: float
    search: list[tuple[int, float]] = field(default_factory=list)

    @property
    def pes_per_tile(self) -> int:
        return (self.tile_arrays // self.pe_arrays) ** 2

    @property
    def arrays_per_pe(self) -> int:
        return self.pe_arrays ** 2

    @property
    def tiles(self) -> int:
        return sum(l.tiles for l in self.layers)

    @property
    def arrays(self) -> int:
        return self.tiles * self.tile_arrays ** 2


def _as_shapes(net) -> list[LayerShape]:
    if hasattr(net, "layer_shapes"):
        return net.layer_shapes()
    return [s if isinstance(s, LayerShape) else LayerShape(f"L{k}", *s) for k, s in enumerate(net)]


def _place(shapes, array_size, t, cpw):
    side = t * array_size
    placed = []
    for s in shapes:
        r, c = s.rows, s.cols * cpw
        tiles = math.ceil(r / side) * math.ceil(c / side)
        placed.append(LayerPlacement(s.name, r * c, tiles, tiles * t * t))
    cells = sum(p.cells for p in placed)
    total = sum(p.tiles for p in placed) * side * side
    return placed, cells / total


def plan_tiles(net, array_size: int = 128, cols_per_weight: int = 1, pe_arrays: int = 2,
               max_arrays: int | None = None) -> ChipPlan:
    """Choose a tile size (in arrays per side) that maximises memory utilisation.

    The search starts from the power-of-two tile that holds the largest layer
    and halves down to one PE; utilisation is weight-mapped cells over all
    cells of instantiated tiles.  Ties go to the smaller tile.
    """
    shapes = _as_shapes(net)
    if not shapes:
        raise PlanningError("network has no weight layers")
    largest = max(max(s.rows, s.cols * cols_per_weight) for s in shapes)
    t = max(pe_arrays, 2 ** math.ceil(math.log2(math.ceil(largest / array_size))))
    best = None
    search = []
    while t >= pe_arrays:
        placed, util = _place(shapes, array_size, t, cols_per_weight)
        search.append((t, util))
        if best is None or util >= best[2]:
            best = (t, placed, util)
        t //= 2
    t, placed, util = best
    plan = ChipPlan(array_size, t, pe_arrays, cols_per_weight, placed, util, search)
    if max_arrays is not None and plan.arrays > max_arrays:
        raise PlanningError(f"network needs {plan.arrays} arrays, chip has {max_arrays}")
    return plan


def htree_wirelength(levels: int, unit_length: float) -> float:
    if levels < 1:
        raise PlanningError("H-tree needs at least one level")
    return unit_length * sum(2 ** l * 2.0 ** (-math.ceil(l / 2)) for l in range(1, levels + 1))


def htree_metrics(levels: int, unit_length: float, tech: TechConfig) -> dict:
    """Total wirelength (mm) of an H-tree and the latency / energy-per-bit it implies."""
    wl = htree_wirelength(levels, unit_length)
    return {"wirelength": wl,
            "latency": wl * tech.wire_delay_per_mm,
            "energy_per_bit": wl * tech.e_interconnect_per_bit_mm}


@dataclass(frozen=True)
class LayerTraffic:
    macs: float
    vectors: float          # input vectors presented to the layer's arrays
    input_bits: int = 8
    buffer_bits: float = 0.0
    interconnect_bits: float = 0.0


@dataclass
class TrafficStats:
    layers: dict[str, LayerTraffic]
    samples: int

    @property
    def macs(self) -> float:
        return sum(l.macs for l in self.layers.values())


def traffic_for_epoch(net, samples: int, input_bits: int = 8, training: bool = True,
                      act_bits: int = 8) -> TrafficStats:
    """Operation counts for one pass over ``samples`` inputs.

    Training counts three VMM passes per layer (forward, error propagation,
    weight gradient).
    """
    passes = 3 if training else 1
    out = {}
    for s in _as_shapes(net):
        vectors = passes * samples * s.vectors_per_sample
        bits = vectors * (s.rows + s.cols) * act_bits
        out[s.name] = LayerTraffic(macs=passes * samples * s.macs_per_sample, vectors=vectors,
                                   input_bits=input_bits, buffer_bits=bits, interconnect_bits=bits)
    return TrafficStats(out, samples)


@dataclass
class CostReport:
    area_mm2: float
    latency_s: float
    energy_j: float
    throughput_tops: float
    efficiency_tops_w: float
    breakdown: dict[str, float]

    def rows(self) -> list[tuple[str, float]]:
        base = [("area_mm2", self.area_mm2), ("latency_s", self.latency_s),
                ("energy_j", self.energy_j), ("throughput_tops", self.throughput_tops),
                ("efficiency_tops_w", self.efficiency_tops_w)]
        return base + sorted(self.breakdown.items())


def estimate_costs(plan: ChipPlan, net, traffic: TrafficStats, tech: TechConfig) -> CostReport:
    """Event-count accounting over the plan.

    Layers form pipeline stages; the stage time is the slowest layer's
    per-sample latency, and a pass over the data takes
    ``stage * (samples + stages - 1)``.  One MAC counts as two operations.
    """
    shapes = {s.name: s for s in _as_shapes(net)}
    placement = {p.name: p for p in plan.layers}
    A = plan.array_size
    side = plan.tile_arrays * A
    tile_mm = math.sqrt(side * side * tech.area_cell_um2) * 1e-3
    levels = max(1, 2 * math.ceil(math.log2(max(2, plan.tile_arrays))))
    ic = htree_metrics(levels, tile_mm / 2 ** (levels // 2), tech)

    e = {"array": 0.0, "adc": 0.0, "shift_add": 0.0, "buffer": 0.0, "interconnect": 0.0}
    stage_compute = []
    stage_other = []
    for name, tr in traffic.layers.items():
        if name not in shapes or name not in placement:
            raise PlanningError(f"traffic for unplanned layer {name!r}")
        s = shapes[name]
        cols_phys = s.cols * plan.cols_per_weight
        row_tiles = math.ceil(s.rows / A)
        conversions = tr.vectors * tr.input_bits * cols_phys * row_tiles
        e["array"] += tr.vectors * tr.input_bits * s.rows * cols_phys * tech.e_cell_read
        e["adc"] += conversions * tech.adc_bits * tech.e_adc_per_bit
        e["shift_add"] += conversions * tech.e_shift_add
        e["buffer"] += tr.buffer_bits * tech.e_buffer_per_bit
        e["interconnect"] += tr.interconnect_bits * ic["energy_per_bit"]
        per_sample = tr.vectors / max(traffic.samples, 1)
        cycles = per_sample * tr.input_bits * tech.columns_per_adc * tech.adc_bits
        cycles += tr.buffer_bits / max(traffic.samples, 1) / tech.buffer_bits_per_cycle
        stage_compute.append(cycles / tech.clock_hz)
        stage_other.append(ic["latency"])

    n_stages = len(stage_compute)
    fill = traffic.samples + n_stages - 1 if traffic.samples else 0
    compute = max(stage_compute, default=0.0) * fill
    wire = max(stage_other, default=0.0) * fill
    latency = compute + wire
    energy = sum(e.values())

    areas = {
        "area_arrays": plan.arrays * A * A * tech.area_cell_um2 * 1e-6,
        "area_adc": plan.arrays * math.ceil(A / tech.columns_per_adc) * tech.area_adc_um2 * 1e-6,
        "area_shift_add": plan.arrays * math.ceil(A / tech.columns_per_adc) * tech.area_shift_add_um2 * 1e-6,
        "area_buffer": plan.tiles * 2 * side * 8 * tech.area_buffer_per_bit_um2 * 1e-6,
        "area_interconnect": plan.tiles * ic["wirelength"] * tech.wire_pitch_mm,
    }
    area = sum(areas.values())
    ops = 2.0 * traffic.macs
    throughput = ops / latency / 1e12 if latency > 0 else 0.0
    power = energy / latency if latency > 0 else 0.0
    efficiency = throughput / power if power > 0 else 0.0

    breakdown = {f"energy_{k}": v for k, v in e.items()}
    breakdown.update(areas)
    breakdown["latency_compute"] = compute
    breakdown["latency_interconnect"] = wire
    breakdown["leakage_energy"] = tech.leakage_w * latency  # reported, not in dynamic total
    return CostReport(area, latency, energy, throughput, efficiency, breakdown)


def vgg8_shapes() -> list[LayerShape]:
    """VGG-8 for 32x32x3 inputs: six 3x3 conv layers and two dense layers."""
    convs = [(3, 128, 32), (128, 128, 32), (128, 256, 16), (256, 256, 16),
             (256, 512, 8), (512, 512, 8)]
    shapes = [LayerShape(f"conv{k + 1}", 9 * d, n, hw * hw) for k, (d, n, hw) in enumerate(convs)]
    shapes += [LayerShape("fc1", 8192, 1024), LayerShape("fc2", 1024, 10)]
    return shapes
