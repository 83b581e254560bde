"""Per-layer compute back-ends for training.

An engine owns one layer's weight matrix and answers three questions: what
``x @ W`` comes out of the hardware (``matmul``), which weights the digital
side should use for error propagation (``effective``), and how a desired
weight change is written back (``update``).

``matmul(x, "nonideal")`` runs the bit-sliced periphery path: each input row
is scaled by its own power of two into ``[-1, 1)``, encoded into two's
complement slices, pushed slice by slice through every row tile of the array,
converted by a per-layer ADC and shift-added.  Slices that drive no row at
all are skipped (zero-detect), so they neither hit the ADC nor enter its
calibration sample.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import crossbar, devices, meminductor
from ..devices import DeviceParams
from ..errors import ParameterError, ShapeError
from ..periphery import (QuantizerConfig, adc_read, calibrate_or_uniform, encode_input,
                         shift_accumulate, twos_complement_weights,
                         uniform_quantizer)


@dataclass
class PeripheryConfig:
    input_bits: int = 8
    adc_bits: int | None = 5      # None = infinite-precision ADC
    array_size: int = 128
    calibrate: bool = True        # False: uniform ADC over the observed range


def row_scales(x: np.ndarray) -> np.ndarray:
    """Power-of-two scale per row with ``|x| / scale <= 1``; zero rows get scale 1."""
    m = np.abs(x).max(axis=1)
    with np.errstate(divide="ignore"):
        e = np.ceil(np.log2(np.where(m > 0, m, 1.0)))
    return np.exp2(e)


class Engine:
    rows: int
    cols: int

    def __init__(self, rows, cols, w_max, periphery: PeripheryConfig | None = None, tiles=None):
        self.rows, self.cols = int(rows), int(cols)
        self.w_max = float(w_max)
        if not self.w_max > 0:
            raise ParameterError("w_max must be > 0")
        self.periphery = periphery or PeripheryConfig()
        self.tiles = tiles or [slice(s, min(s + self.periphery.array_size, self.rows))
                               for s in range(0, self.rows, self.periphery.array_size)]
        self.quantizer: QuantizerConfig | None = None
        self._calibrate = True
        self.calibration_sample: np.ndarray | None = None

    # hooks -------------------------------------------------------------
    def effective(self) -> np.ndarray:
        raise NotImplementedError

    def _tile_vmm(self, t: int, bits: np.ndarray) -> np.ndarray:
        """Analog partial sums of row tile ``t`` for 0/1 drives, in weight units."""
        raise NotImplementedError

    def update(self, dw: np.ndarray) -> None:
        raise NotImplementedError

    def state(self):
        raise NotImplementedError

    def restore(self, state) -> None:
        raise NotImplementedError

    # shared ------------------------------------------------------------
    def begin_epoch(self):
        self._calibrate = True

    def matmul(self, x, mode: str = "ideal") -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.rows:
            raise ShapeError(f"input {x.shape} does not match {self.rows} rows")
        if mode == "ideal":
            return x @ self.effective()
        if mode != "nonideal":
            raise ParameterError(f"unknown mode {mode!r}")
        return self._sliced(x)

    def _sliced(self, x):
        cfg = self.periphery
        scale = row_scales(x)
        slices = encode_input(x / scale[:, None], cfg.input_bits)  # bits, n, rows
        bits, n = slices.shape[:2]
        partial = np.zeros((len(self.tiles), bits, n, self.cols))
        active = np.zeros((len(self.tiles), bits, n), dtype=bool)
        for t, rs in enumerate(self.tiles):
            for k in range(bits):
                s = slices[k][:, rs]
                on = s.any(axis=1)
                if on.any():
                    partial[t, k, on] = self._tile_vmm(t, s[on].astype(float))
                    active[t, k] = on
        if cfg.adc_bits is not None:
            sample = partial[active]
            if self._calibrate or self.quantizer is None:
                if sample.size:
                    if cfg.calibrate:
                        self.quantizer = calibrate_or_uniform(sample, cfg.adc_bits, cfg.input_bits)
                    else:
                        lo, hi = float(sample.min()), float(sample.max())
                        self.quantizer = uniform_quantizer(lo, hi if hi > lo else lo + 1.0,
                                                           cfg.adc_bits, cfg.input_bits)
                    self.calibration_sample = sample.ravel().copy()
                    self._calibrate = False
            if self.quantizer is not None:
                partial[active] = adc_read(sample, self.quantizer)
        w = twos_complement_weights(bits)
        acc = sum(shift_accumulate(partial[t], w) for t in range(len(self.tiles)))
        return acc / 2.0 ** (bits - 1) * scale[:, None]


class FloatEngine(Engine):
    """Software weights; the nonideal path models only the periphery."""

    def __init__(self, w, w_max=None, periphery=None, tiles=None):
        w = np.asarray(w, dtype=float)
        super().__init__(*w.shape, w_max if w_max is not None else max(np.abs(w).max(), 1.0),
                         periphery, tiles)
        self.w = np.clip(w, -self.w_max, self.w_max)

    def effective(self):
        return self.w

    def _tile_vmm(self, t, bits):
        return bits @ self.w[self.tiles[t]]

    def update(self, dw):
        self.w = np.clip(self.w + dw, -self.w_max, self.w_max)

    def state(self):
        return self.w.copy()

    def restore(self, state):
        self.w = state.copy()


class CrossbarEngine(Engine):
    """Weights stored in balanced differential device pairs.

    The matrix is cut into row tiles (``tiles``) and column groups of
    ``array_size // 2`` weights, so every physical array is at most
    ``array_size x array_size`` devices with the pair on adjacent columns.

    Updates follow the pulse rule: ``n = round((dw + residual) / step)`` with
    ``step = (w_max - w_min) / p_max``, applied as ``+n`` pulses on the
    positive device and ``-n`` on the negative one; the sub-step remainder is
    carried in ``residual``.
    """

    def __init__(self, w, params: DeviceParams, rng: np.random.Generator, w_max: float = 1.0,
                 r_line: float = 0.0, v_read: float = 0.2, access: str = "passive",
                 periphery=None, tiles=None):
        w = np.asarray(w, dtype=float)
        super().__init__(*w.shape, w_max, periphery, tiles)
        self.params = params
        self.rng = rng
        self.mapping = crossbar.WeightMapping(-self.w_max, self.w_max, params.x_max, params.x_min)
        width = max(1, self.periphery.array_size // 2)
        self.col_tiles = [slice(c, min(c + width, self.cols)) for c in range(0, self.cols, width)]
        w = np.clip(w, -self.w_max, self.w_max)
        self.arrays = [[crossbar.map_weights(w[rs, cs], self.mapping, params, rng, r_line=r_line,
                                             v_read=v_read, access=access, scheme="balanced")
                        for cs in self.col_tiles] for rs in self.tiles]
        self.residual = np.zeros_like(w)
        self._eff = None
        self._unit = self.w_max / (v_read * (self.mapping.s_on - self.mapping.s_off))

    @property
    def step(self) -> float:
        return (self.mapping.w_max - self.mapping.w_min) / self.params.p_max

    def _blocks(self):
        for t, rs in enumerate(self.tiles):
            for c, cs in enumerate(self.col_tiles):
                yield self.arrays[t][c], rs, cs

    def effective(self):
        if self._eff is None:
            eff = np.empty((self.rows, self.cols))
            for a, rs, cs in self._blocks():
                eff[rs, cs] = crossbar.read_effective_weights(a)
            self._eff = eff
        return self._eff

    def _tile_vmm(self, t, bits):
        parts = [crossbar.parasitic_vmm(a, bits * a.v_read) for a in self.arrays[t]]
        return np.concatenate(parts, axis=1) * self._unit

    def pulses_for(self, dw):
        total = dw + self.residual
        n = np.clip(np.rint(total / self.step), -self.params.p_max, self.params.p_max).astype(np.int64)
        residual = np.clip(total - n * self.step, -self.step / 2, self.step / 2)
        return n, residual

    def update(self, dw):
        n, self.residual = self.pulses_for(np.asarray(dw, dtype=float))
        for a, rs, cs in self._blocks():
            nt = n[rs, cs]
            if not nt.any():
                continue
            a.pos = devices.apply_pulses(a.pos, nt, self.params, self.rng)
            a.neg = devices.apply_pulses(a.neg, -nt, self.params, self.rng)
            a.invalidate()
        self._eff = None

    def state(self):
        return ([(a.pos.copy(), a.neg.copy()) for a, _, _ in self._blocks()], self.residual.copy())

    def restore(self, state):
        planes, residual = state
        for (a, _, _), (p, q) in zip(self._blocks(), planes):
            a.pos, a.neg = p.copy(), q.copy()
            a.invalidate()
        self.residual = residual.copy()
        self._eff = None


class MeminductorEngine(Engine):
    """Meminductor VMM arrays: weights set element values between ``s_off`` and ``s_on``.

    Element values are set directly rather than pulsed, so the stored weights
    are the clipped master weights.  Each slice drives ``0`` or ``v_high`` for
    ``t_read`` and the sensed output is ``Y = R * I``.
    """

    def __init__(self, w, readout: meminductor.MeminductorReadout | None = None,
                 r_sense: float = 1.5e3, on_off: float = 10.0, w_max: float = 1.0,
                 periphery=None, tiles=None):
        w = np.asarray(w, dtype=float)
        super().__init__(*w.shape, w_max, periphery, tiles)
        self.readout = readout or meminductor.MeminductorReadout()
        self.r_sense = float(r_sense)
        self.mapping = meminductor.meminductor_mapping(self.readout, on_off, self.w_max)
        self.w = np.clip(w, -self.w_max, self.w_max)
        unit = self.r_sense * float(self.readout.gain(self.readout.v_high))
        self._to_weight = self.w_max / (unit * (self.mapping.s_on - self.mapping.s_off))

    def effective(self):
        return self.w

    def _tile_vmm(self, t, bits):
        y = meminductor.meminductor_vmm_forward(self.w[self.tiles[t]], bits * self.readout.v_high,
                                                self.r_sense, self.mapping, self.readout,
                                                differential=True)
        return y * self._to_weight

    def update(self, dw):
        self.w = np.clip(self.w + dw, -self.w_max, self.w_max)

    def state(self):
        return self.w.copy()

    def restore(self, state):
        self.w = state.copy()
