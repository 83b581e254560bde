"""Behavioral model of the three-OTA, two-MOS-capacitor meminductor emulator.

State variables are the flux ``phi = int v_in dt`` and its integral
``rho = int phi dt``.  The input current is::

    i_in = K * gm1 / C1 * (V_b0 -/+ gm1 * gm3 * rho / (C1 * C2)) * phi

with ``-`` in decremental and ``+`` in incremental mode.  ``V_b0`` is
``V_ss + V_t`` taken literally, or its magnitude under the default
``sign="positive"`` convention (which keeps the emulated inductance positive so
the element can sit in passive circuits).
"""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .crossbar import WeightMapping, target_state
from .errors import DomainError, IntegrationError, ParameterError, ShapeError, SteadyStateError


class Mode(str, enum.Enum):
    DECREMENTAL = "decremental"
    INCREMENTAL = "incremental"


@dataclass(frozen=True)
class OtaParams:
    k: float
    v_b: float
    v_ss: float
    v_t: float


def ota_gm(p: OtaParams) -> float:
    """OTA transconductance ``K / sqrt(2) * (V_b - V_ss - 2 V_t)``; warns below cutoff."""
    vals = (p.k, p.v_b, p.v_ss, p.v_t)
    if not all(np.isfinite(v) for v in vals):
        raise DomainError("OTA parameters must be finite")
    gm = p.k / math.sqrt(2.0) * (p.v_b - p.v_ss - 2.0 * p.v_t)
    if gm < 0:
        warnings.warn(f"OTA biased below cutoff (gm = {gm:.3e} S)", RuntimeWarning, stacklevel=2)
    return gm


def implied_threshold(gm: float, k: float, v_b: float, v_ss: float) -> float:
    """Threshold voltage for which :func:`ota_gm` returns ``gm``."""
    return 0.5 * (v_b - v_ss - gm * math.sqrt(2.0) / k)


@dataclass(frozen=True)
class MeminductorParams:
    k: float
    gm1: float
    gm3: float
    c1: float
    c2: float
    v_ss: float = -0.9
    v_t: float = 0.4
    mode: Mode = Mode.DECREMENTAL
    sign: str = "positive"

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.sign not in ("positive", "literal"):
            raise ParameterError("sign must be 'positive' or 'literal'")
        if not (self.c1 > 0 and self.c2 > 0):
            raise ParameterError("capacitances must be > 0")
        if self.gm1 <= 0 or self.gm3 < 0:
            raise ParameterError("need gm1 > 0 and gm3 >= 0")
        if not all(np.isfinite(v) for v in (self.k, self.gm1, self.gm3, self.c1, self.c2,
                                             self.v_ss, self.v_t)):
            raise ParameterError("meminductor parameters must be finite")

    def with_(self, **changes) -> "MeminductorParams":
        return replace(self, **changes)

    @property
    def v_base(self) -> float:
        v = self.v_ss + self.v_t
        return abs(v) if self.sign == "positive" else v

    @property
    def baseline(self) -> float:
        """Inverse meminductance at rho = 0 (1/H)."""
        return self.k * self.gm1 / self.c1 * self.v_base

    @property
    def rho_gain(self) -> float:
        """Signed d(m_inv)/d(rho)."""
        s = -1.0 if self.mode is Mode.DECREMENTAL else 1.0
        return s * self.k * self.gm1 ** 2 * self.gm3 / (self.c1 ** 2 * self.c2)


def time_constant(params: MeminductorParams, v_m: float) -> float:
    """``2 pi C1 C2 / (K gm1 gm3 V_m)``; the optimum lobe sits at ``f = 1 / lambda``."""
    return 2 * math.pi * params.c1 * params.c2 / (params.k * params.gm1 * params.gm3 * v_m)


def modulation_amplitude_estimate(params: MeminductorParams, v_m: float, f: float) -> float:
    """Small-signal estimate ``K gm1 gm3 V_m / (omega C1 C2)`` of the m_inv swing."""
    return params.k * params.gm1 * params.gm3 * v_m / (2 * math.pi * f * params.c1 * params.c2)


def lobe_area_estimate(params: MeminductorParams, v_m: float, f: float) -> float:
    """Exact lobe area for the DC-free sinusoidal orbit: ``(2/3) |dm/drho| V_m^3 / omega^4``."""
    w = 2 * math.pi * f
    return 2.0 / 3.0 * abs(params.rho_gain) * v_m ** 3 / w ** 4


def tuned_preset(f: float = 3e6, v_m: float = 0.5, k: float = 4.02e-4, gm: float = 967e-6,
                 **kw) -> MeminductorParams:
    """Capacitances chosen so that ``lambda = 1/f`` and ``gm1 = omega * C1`` at ``f``.

    The second condition makes the full rho-term swing of ``m_inv`` coincide
    with the small-signal estimate at the design frequency.
    """
    w = 2 * math.pi * f
    c1 = gm / w
    c2 = k * gm * gm * v_m / (c1 * w)
    return MeminductorParams(k=k, gm1=gm, gm3=gm, c1=c1, c2=c2, **kw)


PRESETS: dict[str, MeminductorParams] = {
    "tiox-meminductor": tuned_preset(),
    "ca3080-experimental": MeminductorParams(k=4.02e-4, gm1=967e-6, gm3=967e-6, c1=1e-12, c2=300e-12),
}


def preset(name: str, **overrides) -> MeminductorParams:
    try:
        base = PRESETS[name]
    except KeyError:
        raise ParameterError(f"unknown meminductor preset {name!r}; known: {sorted(PRESETS)}") from None
    return replace(base, **overrides) if overrides else base


@dataclass(frozen=True)
class MeminductorState:
    phi: float = 0.0
    rho: float = 0.0
    t: float = 0.0


def inverse_meminductance(rho, params: MeminductorParams):
    return params.baseline + params.rho_gain * np.asarray(rho)


def input_current(phi, rho, params: MeminductorParams):
    return inverse_meminductance(rho, params) * np.asarray(phi)


def _rk4(f, t, y, dt):
    k1 = f(t, y)
    k2 = f(t + dt / 2, y + dt / 2 * k1)
    k3 = f(t + dt / 2, y + dt / 2 * k2)
    k4 = f(t + dt, y + dt * k3)
    return y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def step(state: MeminductorState, v_in, dt: float, params: MeminductorParams):
    """Advance one RK4 step; ``v_in`` is a constant voltage or a function of time.

    Returns ``(new_state, i_in, m_inv)`` evaluated at the end of the step.
    """
    if not dt > 0:
        raise ParameterError("dt must be > 0")
    v = v_in if callable(v_in) else (lambda t, _v=float(v_in): _v)
    y = _rk4(lambda t, y: np.array([v(t), y[0]]), state.t, np.array([state.phi, state.rho]), dt)
    new = MeminductorState(phi=float(y[0]), rho=float(y[1]), t=state.t + dt)
    m_inv = float(inverse_meminductance(new.rho, params))
    return new, m_inv * new.phi, m_inv


@dataclass
class Trace:
    t: np.ndarray
    v_in: np.ndarray
    phi: np.ndarray
    rho: np.ndarray
    i_in: np.ndarray
    m_inv: np.ndarray
    lobe_area: float = float("nan")
    pinch_residual: float = float("nan")
    m_inv_amplitude: float = float("nan")
    extra: dict = field(default_factory=dict)

    COLUMNS = ("t", "v_in", "phi", "rho", "i_in", "m_inv")

    def rows(self):
        return zip(*(getattr(self, c) for c in self.COLUMNS))


def lobe_area(phi, i) -> float:
    """Shoelace area of the positive-flux lobe of one closed (phi, i) cycle."""
    phi = np.asarray(phi, dtype=float)
    i = np.asarray(i, dtype=float)
    pts = []
    n = len(phi)
    for k in range(n):
        a, b = phi[k], phi[(k + 1) % n]
        if a >= 0:
            pts.append((a, i[k]))
        if (a >= 0) != (b >= 0):
            s = a / (a - b)
            pts.append((0.0, i[k] + s * (i[(k + 1) % n] - i[k])))
    if len(pts) < 3:
        return 0.0
    x, y = np.array(pts).T
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def pinch_residual(phi, i) -> float:
    """Largest |i| at an interpolated zero crossing of phi, relative to max |i|."""
    phi = np.asarray(phi, dtype=float)
    i = np.asarray(i, dtype=float)
    sign_change = np.nonzero(np.signbit(phi[:-1]) != np.signbit(phi[1:]))[0]
    peak = np.max(np.abs(i))
    if peak == 0:
        return 0.0
    worst = 0.0
    for k in sign_change:
        s = phi[k] / (phi[k] - phi[k + 1])
        worst = max(worst, abs(i[k] + s * (i[k + 1] - i[k])))
    return worst / peak


def _sine(v_m, f):
    w = 2 * math.pi * f
    return lambda t: v_m * np.sin(w * t)


def _integrate(deriv, y0, t_grid):
    ys = np.empty((len(t_grid), len(y0)))
    ys[0] = y0
    dt = t_grid[1] - t_grid[0]
    for k in range(len(t_grid) - 1):
        ys[k + 1] = _rk4(deriv, t_grid[k], ys[k], dt)
    return ys


def _summarise(trace: Trace, spc: int, check: bool = True) -> Trace:
    last = slice(-spc - 1, None)
    prev = slice(-2 * spc - 1, -spc)
    a_last = lobe_area(trace.phi[last][:-1], trace.i_in[last][:-1])
    a_prev = lobe_area(trace.phi[prev][:-1], trace.i_in[prev][:-1])
    if check and a_last > 0 and abs(a_last - a_prev) > 0.01 * a_last:
        raise SteadyStateError(f"lobe area not settled: {a_prev:.4e} -> {a_last:.4e}")
    trace.lobe_area = a_last
    trace.pinch_residual = pinch_residual(trace.phi[last], trace.i_in[last])
    m = trace.m_inv[last]
    trace.m_inv_amplitude = 0.5 * float(m.max() - m.min())
    return trace


def hysteresis_trace(params: MeminductorParams, v_m: float, f: float, cycles: int = 6,
                     steps_per_cycle: int = 2000) -> Trace:
    """Sinusoidal drive ``v_m sin(2 pi f t)`` and the resulting (phi, i_in) orbit.

    The flux starts at ``-v_m / omega`` so that it oscillates without DC
    offset and ``rho`` stays bounded; summary metrics use the final cycle.
    """
    if cycles < 4:
        raise ParameterError("need at least 4 cycles")
    if steps_per_cycle < 1000:
        raise ParameterError("need at least 1000 steps per cycle")
    w = 2 * math.pi * f
    v = _sine(v_m, f)
    t = np.arange(cycles * steps_per_cycle + 1) / (f * steps_per_cycle)
    ys = _integrate(lambda tt, y: np.array([v(tt), y[0]]), np.array([-v_m / w, 0.0]), t)
    phi, rho = ys[:, 0], ys[:, 1]
    phi_dc = phi[-steps_per_cycle - 1:-1].mean()
    rho_dc = rho[-steps_per_cycle - 1:-1].mean()
    m = inverse_meminductance(rho, params)
    trace = Trace(t=t, v_in=v(t), phi=phi, rho=rho, i_in=m * phi, m_inv=m,
                  extra={"phi_dc": phi_dc, "rho_dc": rho_dc})
    return _summarise(trace, steps_per_cycle)


def compose(elements: Sequence[MeminductorParams], topology: str, v_m: float, f: float,
            cycles: int = 6, steps_per_cycle: int = 2000) -> Trace:
    """Two-terminal trace of several emulators in series or in parallel.

    Parallel elements share the terminal flux; their currents add.  Series
    elements carry one current; the terminal flux splits as
    ``phi_k = i / m_k``, which is the exact equal-current split because each
    element's current is linear in its own flux at fixed rho.
    """
    elements = list(elements)
    if not elements:
        raise ParameterError("need at least one element")
    if len(elements) == 1:
        return hysteresis_trace(elements[0], v_m, f, cycles, steps_per_cycle)
    if topology not in ("series", "parallel"):
        raise ParameterError("topology must be 'series' or 'parallel'")
    w = 2 * math.pi * f
    v = _sine(v_m, f)
    t = np.arange(cycles * steps_per_cycle + 1) / (f * steps_per_cycle)
    n = len(elements)

    if topology == "parallel":
        ys = _integrate(lambda tt, y: np.array([v(tt), y[0]]), np.array([-v_m / w, 0.0]), t)
        phi, rho = ys[:, 0], ys[:, 1]
        ms = np.array([inverse_meminductance(rho, p) for p in elements])
        i = (ms * phi).sum(axis=0)
        trace = Trace(t=t, v_in=v(t), phi=phi, rho=rho, i_in=i, m_inv=ms.sum(axis=0))
        return _summarise(trace, steps_per_cycle)

    def split(y):
        phi, rhos = y[0], y[1:]
        ms = np.array([inverse_meminductance(r, p) for r, p in zip(rhos, elements)])
        if np.any(ms == 0):
            raise IntegrationError("element with zero inverse meminductance in series")
        i = phi / np.sum(1.0 / ms)
        return i / ms, i, ms

    def deriv(tt, y):
        parts, _, _ = split(y)
        return np.concatenate([[v(tt)], parts])

    ys = _integrate(deriv, np.concatenate([[-v_m / w], np.zeros(n)]), t)
    i = np.empty(len(t))
    m_total = np.empty(len(t))
    for k, y in enumerate(ys):
        _, i[k], ms = split(y)
        m_total[k] = 1.0 / np.sum(1.0 / ms)
    trace = Trace(t=t, v_in=v(t), phi=ys[:, 0], rho=ys[:, 1:].mean(axis=1), i_in=i, m_inv=m_total,
                  extra={"rho_elements": ys[:, 1:]})
    return _summarise(trace, steps_per_cycle)


@dataclass
class AmoebaTrace:
    t: np.ndarray
    v_in: np.ndarray
    v_out: np.ndarray
    i: np.ndarray
    m_inv: np.ndarray

    COLUMNS = ("t", "v_in", "v_out", "i", "m_inv")

    def rows(self):
        return zip(*(getattr(self, c) for c in self.COLUMNS))


def simulate_amoeba(params: MeminductorParams, r: float, c: float, v_in, dt: float,
                    blowup: float = 1e3) -> AmoebaTrace:
    """Series R-meminductor-C loop driven by ``v_in`` (sampled every ``dt``).

    The output is the capacitor voltage.  Input samples are linearly
    interpolated inside each RK4 step.
    """
    v_in = np.asarray(v_in, dtype=float)
    if v_in.ndim != 1 or len(v_in) < 2:
        raise ShapeError("input waveform must be a 1-D sample sequence")
    if r < 0 or c <= 0 or dt <= 0:
        raise ParameterError("need r >= 0, c > 0, dt > 0")
    t = np.arange(len(v_in)) * dt

    def vin(tt):
        return np.interp(tt, t, v_in)

    def deriv(tt, y):
        phi, rho, vc = y
        i = (params.baseline + params.rho_gain * rho) * phi
        return np.array([vin(tt) - r * i - vc, phi, i / c])

    scale = blowup * max(1.0, float(np.max(np.abs(v_in))))
    ys = np.empty((len(t), 3))
    ys[0] = 0.0
    for k in range(len(t) - 1):
        ys[k + 1] = _rk4(deriv, t[k], ys[k], dt)
        if not np.all(np.isfinite(ys[k + 1])) or abs(ys[k + 1, 2]) > scale:
            raise IntegrationError(
                f"state blew up at t={t[k + 1]:.3e} s; reduce dt (now {dt:.3e} s)")
    m = params.baseline + params.rho_gain * ys[:, 1]
    return AmoebaTrace(t=t, v_in=v_in, v_out=ys[:, 2], i=m * ys[:, 0], m_inv=m)


def rlc_step_response(l: float, r: float, c: float, v0: float, t) -> np.ndarray:
    """Capacitor voltage of an underdamped series RLC after a step ``v0`` at t = 0."""
    alpha = r / (2 * l)
    w0 = 1 / math.sqrt(l * c)
    if alpha >= w0:
        raise ParameterError("circuit is not underdamped")
    wd = math.sqrt(w0 ** 2 - alpha ** 2)
    t = np.asarray(t, dtype=float)
    return v0 * (1 - np.exp(-alpha * t) * (np.cos(wd * t) + alpha / wd * np.sin(wd * t)))


# --------------------------------------------------------------------------
# meminductor crossbar readout

@dataclass(frozen=True)
class MeminductorReadout:
    """Read operating point of a meminductor VMM array.

    Each input drives 0 V or ``v_high`` for ``t_read`` seconds, so a driven
    element sees ``phi = v t_read`` and ``rho = v t_read^2 / 2``.  The
    programmed value ``S`` (1/H) plays the role of the baseline inverse
    meminductance and the rho-term scales with it in the same proportion as
    in the emulator.
    """

    element: MeminductorParams = field(default_factory=lambda: PRESETS["tiox-meminductor"])
    t_read: float = 0.2e-6
    v_high: float = 3.3
    include_rho: bool = True

    def gain(self, v):
        """Per-unit-S current factor ``i / S`` for drive voltage ``v``."""
        v = np.asarray(v, dtype=float)
        phi = v * self.t_read
        if not self.include_rho:
            return phi
        rho = v * self.t_read ** 2 / 2
        p = self.element
        rel = p.rho_gain / p.baseline
        return phi * (1.0 + rel * rho)


def meminductor_mapping(readout: MeminductorReadout | None = None, on_off: float = 10.0,
                        w_max: float = 1.0, w_min: float | None = None) -> WeightMapping:
    readout = readout or MeminductorReadout()
    s_on = readout.element.baseline
    return WeightMapping(w_min=-w_max if w_min is None else w_min, w_max=w_max,
                         s_on=s_on, s_off=s_on / on_off)


def element_current(s, v, readout: MeminductorReadout):
    return np.asarray(s) * readout.gain(v)


def meminductor_vmm_forward(weights, v_in, r_sense: float, mapping: WeightMapping,
                            readout: MeminductorReadout | None = None, differential: bool = False):
    """Output voltages ``Y_j = R * I_j`` of a meminductor array programmed with ``weights``.

    ``weights`` map linearly to element values ``S`` (1/H) between ``s_off``
    and ``s_on``.  With ``differential=True`` a second column per output holds
    the negative magnitude (see :func:`crossbar.differential_targets`).
    """
    from .crossbar import _check_range, differential_targets

    readout = readout or MeminductorReadout()
    w = _check_range(weights, mapping)
    v = np.asarray(v_in, dtype=float)
    if v.shape[-1] != w.shape[0]:
        raise ShapeError(f"input of length {v.shape[-1]} does not match {w.shape[0]} rows")
    gain = readout.gain(v)
    if differential:
        pos, neg = differential_targets(w, mapping)
        return r_sense * (gain @ (pos - neg))
    return r_sense * (gain @ target_state(w, mapping))
