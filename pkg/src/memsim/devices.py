"""Programmable analog devices: nonlinear LTP/LTD curves and stochastic non-idealities.

Analog state ``x`` is a conductance (siemens) for memristors and a capacitance
(farads) for memcapacitors.  Pulse positions are measured in pulses from the
``x_min`` end for potentiation and from the ``x_max`` end for depression, so
both curves start at ``p = 0`` and saturate at ``p = p_max``.

All functions are vectorised over numpy arrays; a "population" is simply a
:class:`DeviceState` whose fields are matrices.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DomainError, ParameterError


class Direction(str, enum.Enum):
    LTP = "ltp"
    LTD = "ltd"


class DeviceKind(str, enum.Enum):
    MEMRISTOR = "memristor"
    MEMCAPACITOR = "memcapacitor"


@dataclass(frozen=True)
class DeviceParams:
    x_min: float
    x_max: float
    p_max: int
    a_ltp: float
    a_ltd: float | None = None
    sigma_d2d: float = 0.0
    sigma_c2c: float = 0.0
    stuck_prob: float = 0.0
    kind: DeviceKind = DeviceKind.MEMRISTOR

    def __post_init__(self):
        if self.a_ltd is None:
            object.__setattr__(self, "a_ltd", self.a_ltp)
        object.__setattr__(self, "kind", DeviceKind(self.kind))
        vals = (self.x_min, self.x_max, self.a_ltp, self.a_ltd,
                self.sigma_d2d, self.sigma_c2c, self.stuck_prob)
        if not all(np.isfinite(v) for v in vals):
            raise ParameterError("device parameters must be finite")
        if not self.x_max > self.x_min > 0:
            raise ParameterError(f"need x_max > x_min > 0, got {self.x_min}, {self.x_max}")
        if int(self.p_max) != self.p_max or self.p_max < 1:
            raise ParameterError(f"p_max must be a positive integer, got {self.p_max}")
        if self.a_ltp <= 0 or self.a_ltd <= 0:
            raise ParameterError("nonlinearity factors must be > 0")
        if self.sigma_d2d < 0 or self.sigma_c2c < 0:
            raise ParameterError("variation sigmas must be >= 0")
        if not 0.0 <= self.stuck_prob <= 1.0:
            raise ParameterError("stuck_prob must lie in [0, 1]")

    @property
    def x_range(self) -> float:
        return self.x_max - self.x_min

    def with_(self, **changes) -> "DeviceParams":
        return replace(self, **changes)


# Endpoints from the TiOx / Si device data: R_off = 25 MOhm, R_on = 10 kOhm,
# C_off = 30 pF, C_on = 2 pF.  32 conductance states -> 31 pulses end to end.
# The nonlinearity factors are not published; a = p_max gives a moderately
# saturating curve (about 63% of the range in the first half of the pulses).
PRESETS: dict[str, DeviceParams] = {
    "tiox-memristor": DeviceParams(
        x_min=1.0 / 25e6, x_max=1.0 / 1e4, p_max=31, a_ltp=31.0,
        kind=DeviceKind.MEMRISTOR),
    "si-memcapacitor": DeviceParams(
        x_min=2e-12, x_max=30e-12, p_max=31, a_ltp=31.0,
        kind=DeviceKind.MEMCAPACITOR),
}


def preset(name: str, **overrides) -> DeviceParams:
    try:
        base = PRESETS[name]
    except KeyError:
        raise ParameterError(f"unknown device preset {name!r}; known: {sorted(PRESETS)}") from None
    return replace(base, **overrides) if overrides else base


@dataclass
class DeviceState:
    """Analog state of one device or, with array fields, of a whole population.

    ``a`` is the device's own potentiation nonlinearity factor; its depression
    factor is ``a * params.a_ltd / params.a_ltp``.
    """

    x: np.ndarray
    a: np.ndarray
    stuck: np.ndarray
    stuck_value: np.ndarray = field(default=None)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.a = np.broadcast_to(np.asarray(self.a, dtype=float), self.x.shape).copy()
        self.stuck = np.broadcast_to(np.asarray(self.stuck, dtype=bool), self.x.shape).copy()
        if self.stuck_value is None:
            self.stuck_value = self.x.copy()
        self.stuck_value = np.broadcast_to(
            np.asarray(self.stuck_value, dtype=float), self.x.shape).copy()

    @property
    def shape(self):
        return self.x.shape

    def copy(self) -> "DeviceState":
        return DeviceState(self.x.copy(), self.a.copy(), self.stuck.copy(), self.stuck_value.copy())

    def __getitem__(self, idx) -> "DeviceState":
        return DeviceState(self.x[idx], self.a[idx], self.stuck[idx], self.stuck_value[idx])


def _factor(direction: Direction, params: DeviceParams, a):
    if a is None:
        return params.a_ltp if direction is Direction.LTP else params.a_ltd
    return a


def _check_a(a):
    a = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(a)):
        raise DomainError("nonlinearity factor must be finite")
    if np.any(a <= 0):
        raise ParameterError("nonlinearity factor must be > 0")
    return a


def _saturation(p, a, p_max):
    # (1 - e^{-p/a}) / (1 - e^{-p_max/a}), written with expm1 so a -> inf stays exact
    return np.expm1(-p / a) / np.expm1(-p_max / a)


def weight_update_curve(p, direction, params: DeviceParams, a=None):
    """Analog state reached after ``p`` pulses along the LTP or LTD curve.

    LTP rises from ``x_min`` and LTD falls from ``x_max``::

        X_LTP = B (1 - exp(-p/a)) + x_min
        X_LTD = x_max - B (1 - exp(-p/a))
        B = (x_max - x_min) / (1 - exp(-p_max/a))

    ``a`` defaults to the direction's nominal factor from ``params``.
    """
    direction = Direction(direction)
    p = np.asarray(p, dtype=float)
    if not np.all(np.isfinite(p)):
        raise DomainError("pulse index must be finite")
    a = _check_a(_factor(direction, params, a))
    if np.any(p < 0) or np.any(p > params.p_max):
        raise DomainError(f"pulse index outside [0, {params.p_max}]")
    delta = params.x_range * _saturation(p, a, params.p_max)
    x = params.x_min + delta if direction is Direction.LTP else params.x_max - delta
    x = np.clip(x, params.x_min, params.x_max)
    return x if x.ndim else float(x)


def invert_curve(x, direction, params: DeviceParams, a=None):
    """Real-valued pulse position at which the curve passes through ``x``."""
    direction = Direction(direction)
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise DomainError("state must be finite")
    if np.any(x < params.x_min) or np.any(x > params.x_max):
        raise DomainError(f"state outside [{params.x_min}, {params.x_max}]")
    a = _check_a(_factor(direction, params, a))
    if direction is Direction.LTP:
        frac = (x - params.x_min) / params.x_range
    else:
        frac = (params.x_max - x) / params.x_range
    p = -a * np.log1p(frac * np.expm1(-params.p_max / a))
    p = np.clip(p, 0.0, params.p_max)
    return p if p.ndim else float(p)


def _ltd_factor(state_a, params: DeviceParams):
    return state_a * (params.a_ltd / params.a_ltp)


def apply_pulses(state: DeviceState, n, params: DeviceParams, rng: np.random.Generator) -> DeviceState:
    """Return a new state after ``n`` programming pulses (positive = LTP, negative = LTD).

    ``n`` broadcasts against the state's shape.  Each pulse adds an independent
    Gaussian increment of std ``sigma_c2c * (x_max - x_min)``; stuck devices
    never move.
    """
    n = np.broadcast_to(np.asarray(n), state.shape)
    if not np.issubdtype(n.dtype, np.integer):
        if np.any(n != np.round(n)):
            raise ParameterError("pulse counts must be integers")
        n = n.astype(np.int64)
    if np.any(np.abs(n) > params.p_max):
        raise ParameterError(f"|n| must not exceed p_max={params.p_max}")

    out = state.copy()
    x = out.x
    up = (n > 0) & ~state.stuck
    down = (n < 0) & ~state.stuck
    if np.any(up):
        a = state.a[up]
        p = invert_curve(x[up], Direction.LTP, params, a) + n[up]
        x[up] = weight_update_curve(np.minimum(p, params.p_max), Direction.LTP, params, a)
    if np.any(down):
        a = _ltd_factor(state.a[down], params)
        p = invert_curve(x[down], Direction.LTD, params, a) - n[down]
        x[down] = weight_update_curve(np.minimum(p, params.p_max), Direction.LTD, params, a)
    if params.sigma_c2c > 0:
        active = up | down
        noise = rng.standard_normal(state.shape)
        std = params.sigma_c2c * params.x_range * np.sqrt(np.abs(n))
        x[active] += noise[active] * std[active]
        np.clip(x, params.x_min, params.x_max, out=x)
    x[state.stuck] = state.stuck_value[state.stuck]
    return out


def pulses_toward(state: DeviceState, target, params: DeviceParams) -> np.ndarray:
    """Signed integer pulse counts that move each device closest to ``target``.

    Uses the LTP curve when the target lies above the present state and the LTD
    curve otherwise.  Counts are rounded to the nearest pulse.
    """
    target = np.clip(np.broadcast_to(np.asarray(target, dtype=float), state.shape),
                     params.x_min, params.x_max)
    x = state.x
    n = np.zeros(state.shape, dtype=np.int64)
    up = target > x
    down = target < x
    if np.any(up):
        a = state.a[up]
        dp = (invert_curve(target[up], Direction.LTP, params, a)
              - invert_curve(x[up], Direction.LTP, params, a))
        n[up] = np.rint(dp).astype(np.int64)
    if np.any(down):
        a = _ltd_factor(state.a[down], params)
        dp = (invert_curve(target[down], Direction.LTD, params, a)
              - invert_curve(x[down], Direction.LTD, params, a))
        n[down] = -np.rint(dp).astype(np.int64)
    n[state.stuck] = 0
    return n


def sample_population(params: DeviceParams, rows: int, cols: int, rng: np.random.Generator) -> DeviceState:
    """Fresh ``rows x cols`` array of devices at ``x_min`` with D2D spread and stuck cells."""
    if rows < 1 or cols < 1:
        raise ParameterError("population dimensions must be >= 1")
    shape = (rows, cols)
    mu, sd = params.a_ltp, params.sigma_d2d * params.a_ltp
    a = rng.normal(mu, sd, size=shape) if sd > 0 else np.full(shape, mu)
    bad = a <= 0
    while np.any(bad):  # truncate the normal at zero by resampling
        a[bad] = rng.normal(mu, sd, size=int(bad.sum()))
        bad = a <= 0
    stuck = rng.random(shape) < params.stuck_prob if params.stuck_prob > 0 else np.zeros(shape, bool)
    x = np.full(shape, params.x_min)
    return DeviceState(x=x, a=a, stuck=stuck, stuck_value=x.copy())
