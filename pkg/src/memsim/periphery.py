"""Behavioral periphery: bit-sliced input encoding, ADC quantization, shift-and-add."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import CalibrationError, DomainError, ParameterError, ShapeError


@dataclass(frozen=True)
class QuantizerConfig:
    edges: np.ndarray
    levels: np.ndarray
    input_bits: int = 8
    adc_bits: int = 5

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=float)
        levels = np.asarray(self.levels, dtype=float)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "levels", levels)
        if self.input_bits < 1 or self.adc_bits < 1:
            raise ParameterError("bit widths must be >= 1")
        if edges.ndim != 1 or len(edges) != 2 ** self.adc_bits - 1:
            raise ParameterError(f"need {2 ** self.adc_bits - 1} edges for {self.adc_bits} ADC bits")
        if np.any(np.diff(edges) <= 0):
            raise ParameterError("quantization edges must be strictly increasing")
        if len(levels) != len(edges) + 1:
            raise ParameterError("need one level per code")

    def to_dict(self) -> dict:
        return {"input_bits": self.input_bits, "adc_bits": self.adc_bits,
                "edges": self.edges.tolist(), "levels": self.levels.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "QuantizerConfig":
        return cls(edges=d["edges"], levels=d["levels"],
                   input_bits=int(d.get("input_bits", 8)), adc_bits=int(d.get("adc_bits", 5)))


def uniform_quantizer(lo: float, hi: float, adc_bits: int = 5, input_bits: int = 8) -> QuantizerConfig:
    """Round-to-nearest ADC with levels ``lo + k*step`` and edges halfway between levels."""
    if not hi > lo:
        raise ParameterError("need hi > lo")
    n = 2 ** adc_bits
    step = (hi - lo) / n
    levels = lo + step * np.arange(n)
    edges = levels[:-1] + step / 2
    return QuantizerConfig(edges, levels, input_bits=input_bits, adc_bits=adc_bits)


def calibrate_edges(partial_sum_samples, adc_bits: int = 5, input_bits: int = 8) -> QuantizerConfig:
    """Nonuniform ADC fitted to observed partial sums.

    Edges sit at equal-probability quantiles; each code's level is the median
    of the samples falling in its bin.
    """
    s = np.sort(np.asarray(partial_sum_samples, dtype=float).ravel())
    n_codes = 2 ** adc_bits
    if s.size < n_codes:
        raise CalibrationError(f"need at least {n_codes} samples, got {s.size}")
    if not np.all(np.isfinite(s)):
        raise CalibrationError("calibration samples must be finite")
    edges = np.quantile(s, np.arange(1, n_codes) / n_codes)
    if np.any(np.diff(edges) <= 0):
        raise CalibrationError("sample distribution too concentrated for distinct edges")
    bins = np.searchsorted(edges, s, side="left")
    levels = np.empty(n_codes)
    for k in range(n_codes):
        members = s[bins == k]
        if members.size:
            levels[k] = np.median(members)
        else:  # empty bin between tied quantiles; fall back to its midpoint
            lo = edges[k - 1] if k > 0 else edges[0]
            hi = edges[k] if k < n_codes - 1 else edges[-1]
            levels[k] = 0.5 * (lo + hi)
    return QuantizerConfig(edges, levels, input_bits=input_bits, adc_bits=adc_bits)


def adc_quantize(analog, config: QuantizerConfig):
    """ADC code = number of edges strictly below the analog value."""
    codes = np.searchsorted(config.edges, np.asarray(analog, dtype=float), side="left")
    return codes if np.ndim(codes) else int(codes)


def adc_read(analog, config: QuantizerConfig):
    """Quantize and return each code's representative level."""
    return config.levels[adc_quantize(analog, config)]


def quantize_input(x, input_bits: int = 8) -> np.ndarray:
    """Signed fixed-point integers for inputs in [-1, 1), round-half-even, saturating."""
    x = np.asarray(x, dtype=float)
    if np.any(np.isnan(x)):
        raise DomainError("NaN input")
    scale = 2.0 ** (input_bits - 1)
    q = np.rint(x * scale)
    return np.clip(q, -scale, scale - 1).astype(np.int64)


def encode_input(x, input_bits: int = 8) -> np.ndarray:
    """Two's-complement bit slices, MSB first: ``out[k]`` holds bit ``input_bits-1-k``."""
    q = quantize_input(x, input_bits)
    u = np.where(q < 0, q + (1 << input_bits), q)
    shifts = np.arange(input_bits - 1, -1, -1).reshape((-1,) + (1,) * q.ndim)
    return ((u[None, ...] >> shifts) & 1).astype(np.uint8)


def twos_complement_weights(input_bits: int) -> np.ndarray:
    w = 2.0 ** np.arange(input_bits - 1, -1, -1)
    w[0] = -w[0]
    return w


def decode_input(slices, input_bits: int | None = None) -> np.ndarray:
    slices = np.asarray(slices)
    bits = slices.shape[0] if input_bits is None else input_bits
    q = shift_accumulate(slices, twos_complement_weights(bits))
    return q / 2.0 ** (bits - 1)


def shift_accumulate(codes_per_slice, slice_weights: Sequence[float] | None = None):
    """Digital shift-and-add: ``sum_k w_k * codes_k``.

    Default weights treat slice 0 as the two's-complement MSB.
    """
    codes = np.asarray(codes_per_slice)
    if slice_weights is None:
        slice_weights = twos_complement_weights(codes.shape[0])
    w = np.asarray(slice_weights)
    if w.shape[0] != codes.shape[0]:
        raise ShapeError(f"{codes.shape[0]} slices but {w.shape[0]} slice weights")
    if np.issubdtype(codes.dtype, np.integer) and np.all(w == np.rint(w)):
        w = w.astype(np.int64)
    return np.tensordot(w, codes, axes=(0, 0))


@dataclass
class SlicedReadout:
    """Bit-sliced VMM through an analog core, an ADC and a shift-add accumulator.

    ``vmm`` maps a ``(batch, rows)`` matrix of 0/1 drive levels to
    ``(batch, cols)`` analog outputs.  ``quantizer=None`` models an
    infinite-precision ADC.  With ``calibrate=True`` the ADC edges are
    refitted on the next call's partial sums.
    """

    input_bits: int = 8
    adc_bits: int | None = 5
    quantizer: QuantizerConfig | None = None
    calibrate: bool = True
    samples: list = field(default_factory=list, repr=False)

    def __call__(self, x, vmm: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        slices = encode_input(x, self.input_bits)
        partial = np.stack([vmm(s.astype(float)) for s in slices])
        if self.adc_bits is not None:
            if self.calibrate or self.quantizer is None:
                self.quantizer = calibrate_or_uniform(partial, self.adc_bits, self.input_bits)
                self.calibrate = False
            partial = adc_read(partial, self.quantizer)
        acc = shift_accumulate(partial, twos_complement_weights(self.input_bits))
        return acc / 2.0 ** (self.input_bits - 1)


def calibrate_or_uniform(samples, adc_bits: int, input_bits: int = 8) -> QuantizerConfig:
    """Quantile calibration, falling back to a uniform ADC on degenerate distributions."""
    try:
        return calibrate_edges(samples, adc_bits, input_bits)
    except CalibrationError:
        s = np.asarray(samples, dtype=float)
        lo, hi = float(s.min()), float(s.max())
        if hi <= lo:
            hi = lo + 1.0
        return uniform_quantizer(lo, hi, adc_bits, input_bits)
