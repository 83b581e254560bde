"""Weight mapping onto device arrays and analog vector-matrix products.

Signed weights use a differential pair of devices per crosspoint.  Each
polarity's magnitude is mapped linearly onto the device state range::

    S = |w| / W * (s_on - s_off) + s_off,      W = max(|w_min|, |w_max|)

which for unsigned ranges (``w_min = 0``) is exactly the usual
``(w - w_min) / (w_max - w_min)`` map.

The parasitic solver treats every crosspoint as a conductance between a
row-wire node and a column-wire node.  Rows are driven from the left edge,
columns are sensed into a virtual ground at the bottom edge, and every wire
segment (including the first one from the driver and the last one into the
sense amplifier) has resistance ``r_line``.
"""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import devices
from .devices import DeviceKind, DeviceParams, DeviceState
from .errors import DomainError, NumericError, ParameterError, ShapeError

# direct factorisation up to 256 x 256 crosspoints (two nodes per crosspoint)
DIRECT_SOLVE_MAX_NODES = 2 * 256 * 256


class Access(str, enum.Enum):
    PASSIVE = "passive"
    ONE_T_ONE_R = "1t1r"


@dataclass(frozen=True)
class WeightMapping:
    w_min: float
    w_max: float
    s_on: float
    s_off: float

    def __post_init__(self):
        if not self.w_max > self.w_min:
            raise ParameterError("need w_max > w_min")
        if self.s_on == self.s_off:
            raise ParameterError("s_on and s_off must differ")

    @property
    def w_span(self) -> float:
        return max(abs(self.w_min), abs(self.w_max))

    @classmethod
    def for_device(cls, params: DeviceParams, w_max: float = 1.0, w_min: float | None = None):
        return cls(w_min=-w_max if w_min is None else w_min, w_max=w_max,
                   s_on=params.x_max, s_off=params.x_min)


def target_state(w, mapping: WeightMapping):
    """Linear weight-to-state map: w_min -> s_off, w_max -> s_on."""
    w = np.asarray(w, dtype=float)
    s = (w - mapping.w_min) / (mapping.w_max - mapping.w_min) * (mapping.s_on - mapping.s_off) + mapping.s_off
    return s if s.ndim else float(s)


def differential_targets(w, mapping: WeightMapping, scheme: str = "sign-magnitude"):
    """Target states of the (pos, neg) planes.

    ``sign-magnitude`` puts |w| on one plane and leaves the other at
    ``s_off``.  ``balanced`` maps ``w`` and ``-w`` through the linear map over
    ``[-W, W]``, so both planes sit mid-range at zero weight and a
    complementary pulse pair moves the weight by two pulse quanta.
    """
    w = np.asarray(w, dtype=float)
    if scheme == "balanced":
        full = WeightMapping(-mapping.w_span, mapping.w_span, mapping.s_on, mapping.s_off)
        return target_state(w, full), target_state(-w, full)
    if scheme != "sign-magnitude":
        raise ParameterError(f"unknown differential scheme {scheme!r}")
    scale = (mapping.s_on - mapping.s_off) / mapping.w_span
    pos = mapping.s_off + np.maximum(w, 0.0) * scale
    neg = mapping.s_off + np.maximum(-w, 0.0) * scale
    return pos, neg


@dataclass
class CrossbarArray:
    params: DeviceParams
    mapping: WeightMapping
    pos: DeviceState
    neg: DeviceState
    r_line: float = 0.0
    v_read: float = 0.2
    access: Access = Access.PASSIVE
    attenuation: float = 1.0  # memcapacitive readout only
    scheme: str = "sign-magnitude"
    _transfer: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.access = Access(self.access)
        if self.pos.shape != self.neg.shape or len(self.pos.shape) != 2:
            raise ShapeError("device planes must be matching matrices")
        if self.r_line < 0 or not np.isfinite(self.r_line):
            raise ParameterError("r_line must be finite and >= 0")
        if self.v_read <= 0:
            raise ParameterError("v_read must be > 0")

    @property
    def rows(self) -> int:
        return self.pos.shape[0]

    @property
    def cols(self) -> int:
        return self.pos.shape[1]

    @property
    def kind(self) -> DeviceKind:
        return self.params.kind

    def invalidate(self):
        self._transfer = None


def _check_range(w, mapping: WeightMapping):
    w = np.asarray(w, dtype=float)
    if w.ndim != 2:
        raise ShapeError("weight matrix must be 2-D")
    if not np.all(np.isfinite(w)):
        raise DomainError("weights must be finite")
    tol = 1e-12 * (mapping.w_max - mapping.w_min)
    if np.any(w < mapping.w_min - tol) or np.any(w > mapping.w_max + tol):
        raise DomainError(f"weights outside declared range [{mapping.w_min}, {mapping.w_max}]")
    return w


def map_weights(w, mapping: WeightMapping, params: DeviceParams, rng: np.random.Generator,
                *, r_line: float = 0.0, v_read: float = 0.2, access="passive",
                attenuation: float = 1.0, scheme: str = "sign-magnitude") -> CrossbarArray:
    """Program a fresh differential array so that it represents ``w``.

    Programming goes through :func:`devices.apply_pulses`, so the stored values
    are quantised to pulse levels and carry cycle-to-cycle noise.
    """
    w = _check_range(w, mapping)
    for s in (mapping.s_on, mapping.s_off):
        if not params.x_min <= s <= params.x_max:
            raise ParameterError("mapping states must lie inside the device range")
    rows, cols = w.shape
    pos = devices.sample_population(params, rows, cols, rng)
    neg = devices.sample_population(params, rows, cols, rng)
    array = CrossbarArray(params, mapping, pos, neg, r_line=r_line, v_read=v_read,
                          access=access, attenuation=attenuation, scheme=scheme)
    program_weights(array, w, rng)
    return array


def program_weights(array: CrossbarArray, w, rng: np.random.Generator) -> None:
    """Pulse an existing array toward new weight targets (in place)."""
    w = _check_range(w, array.mapping)
    if w.shape != array.pos.shape:
        raise ShapeError(f"weights {w.shape} do not match array {array.pos.shape}")
    t_pos, t_neg = differential_targets(w, array.mapping, array.scheme)
    for plane, target in (("pos", t_pos), ("neg", t_neg)):
        state = getattr(array, plane)
        n = devices.pulses_toward(state, target, array.params)
        setattr(array, plane, devices.apply_pulses(state, n, array.params, rng))
    array.invalidate()


def read_effective_weights(array: CrossbarArray) -> np.ndarray:
    m = array.mapping
    return (array.pos.x - array.neg.x) / (m.s_on - m.s_off) * m.w_span


def _as_batch(v, rows):
    v = np.asarray(v, dtype=float)
    single = v.ndim == 1
    v2 = np.atleast_2d(v)
    if v2.ndim != 2 or v2.shape[1] != rows:
        raise ShapeError(f"input of length {v2.shape[-1]} does not match {rows} rows")
    return v2, single


def ideal_vmm(array: CrossbarArray, v):
    """Column currents (memristive) or charges (memcapacitive) of an ideal array."""
    vb, single = _as_batch(v, array.rows)
    out = vb @ (array.pos.x - array.neg.x)
    if array.kind is DeviceKind.MEMCAPACITOR:
        out = out * array.attenuation
    return out[0] if single else out


# --------------------------------------------------------------------------
# nodal analysis of the resistive grid

def _grid_matrix(g: np.ndarray, r_line: float):
    """Sparse nodal conductance matrix of the grid with drivers and sense nodes eliminated."""
    R, C = g.shape
    gw = 1.0 / r_line
    n = R * C
    idx = np.arange(n).reshape(R, C)
    row_node = idx
    col_node = idx + n

    diag = np.zeros(2 * n)
    rr, cc, vv = [], [], []

    def couple(a, b, cond):
        cond = np.broadcast_to(cond, a.shape).ravel()
        a = a.ravel()
        b = b.ravel()
        rr.extend((a, b)); cc.extend((b, a)); vv.extend((-cond, -cond))
        np.add.at(diag, a, cond)
        np.add.at(diag, b, cond)

    couple(row_node, col_node, g)
    couple(row_node[:, :-1], row_node[:, 1:], gw)
    couple(col_node[:-1, :], col_node[1:, :], gw)
    diag[row_node[:, 0]] += gw   # segment from the driver
    diag[col_node[-1, :]] += gw  # segment into the virtual ground
    rr.append(np.arange(2 * n)); cc.append(np.arange(2 * n)); vv.append(diag)
    Y = sp.csc_matrix((np.concatenate(vv), (np.concatenate(rr), np.concatenate(cc))),
                      shape=(2 * n, 2 * n))
    return Y, row_node[:, 0], col_node[-1, :]


def _solve(Y, B):
    if Y.shape[0] <= DIRECT_SOLVE_MAX_NODES:
        try:
            lu = spla.splu(Y)
        except RuntimeError as exc:
            raise NumericError(f"singular nodal matrix: {exc}") from exc
        X = lu.solve(B)
    else:
        inv_diag = 1.0 / Y.diagonal()
        M = spla.LinearOperator(Y.shape, matvec=lambda x: inv_diag * x)
        X = np.empty_like(B)
        for k in range(B.shape[1]):
            X[:, k], info = spla.cg(Y, B[:, k], M=M, rtol=1e-13, atol=0.0, maxiter=20 * Y.shape[0])
            if info != 0:
                raise NumericError(f"iterative nodal solve did not converge (info={info})")
    if not np.all(np.isfinite(X)):
        raise NumericError("nodal solve produced non-finite voltages; check for floating nodes")
    return X


def solve_grid(g, v, r_line: float, return_voltages: bool = False):
    """Column currents of a crossbar with conductances ``g`` and wire resistance ``r_line``.

    ``v`` is a row-voltage vector or a ``(batch, rows)`` matrix.  With
    ``return_voltages`` the row- and column-node voltage grids are returned too.
    """
    g = np.asarray(g, dtype=float)
    if g.ndim != 2:
        raise ShapeError("conductance matrix must be 2-D")
    if np.any(g < 0) or not np.all(np.isfinite(g)):
        raise DomainError("conductances must be finite and >= 0")
    vb, single = _as_batch(v, g.shape[0])
    if r_line == 0:
        if return_voltages:
            raise ParameterError("node voltages are undefined for r_line = 0")
        out = vb @ g
        return out[0] if single else out
    if not np.isfinite(r_line):
        raise NumericError("infinite line resistance leaves every node floating")
    Y, drive_nodes, sense_nodes = _grid_matrix(g, r_line)
    B = np.zeros((Y.shape[0], vb.shape[0]))
    B[drive_nodes, :] = vb.T / r_line
    X = _solve(Y, B)
    out = (X[sense_nodes, :] / r_line).T
    if return_voltages:
        R, C = g.shape
        volts = X.T.reshape(vb.shape[0], 2, R, C)
        res = (out, volts[:, 0], volts[:, 1])
        return tuple(r[0] for r in res) if single else res
    return out[0] if single else out


def transfer_matrix(g, r_line: float) -> np.ndarray:
    """Linear map ``T`` with ``I = v @ T`` for a passive grid (one factorisation, unit drives)."""
    g = np.asarray(g, dtype=float)
    R, C = g.shape
    if r_line == 0 or R <= C:
        return solve_grid(g, np.eye(R), r_line)
    # Y is symmetric, so T_ij = gw^2 (Y^-1)[drive_i, sense_j]: inject at the
    # sense nodes instead when there are fewer columns than rows
    if np.any(g < 0) or not np.all(np.isfinite(g)):
        raise DomainError("conductances must be finite and >= 0")
    Y, drive, sense = _grid_matrix(g, r_line)
    B = np.zeros((Y.shape[0], C))
    B[sense, np.arange(C)] = 1.0
    X = _solve(Y, B)
    return X[drive, :] / r_line ** 2


def _interleave(pos, neg):
    R, C = pos.shape
    g = np.empty((R, 2 * C))
    g[:, 0::2] = pos
    g[:, 1::2] = neg
    return g


def parasitic_vmm(array: CrossbarArray, v):
    """Column currents including wire resistance and sneak conduction.

    The positive and negative planes sit on interleaved physical columns of one
    grid.  With 1T1R access, cells on rows driven at 0 V are switched off.
    Memcapacitive arrays fall back to :func:`ideal_vmm` (no capacitive
    parasitic model).
    """
    if array.kind is DeviceKind.MEMCAPACITOR:
        return ideal_vmm(array, v)
    vb, single = _as_batch(v, array.rows)
    if array.r_line == 0:
        return ideal_vmm(array, v)
    g = _interleave(array.pos.x, array.neg.x)
    if array.access is Access.PASSIVE:
        if array._transfer is None:
            array._transfer = transfer_matrix(g, array.r_line)
        I = vb @ array._transfer
    else:
        I = np.empty((vb.shape[0], g.shape[1]))
        for k, vk in enumerate(vb):
            on = (vk != 0)[:, None]
            I[k] = solve_grid(np.where(on, g, 0.0), vk, array.r_line)
    out = I[:, 0::2] - I[:, 1::2]
    return out[0] if single else out


def kcl_residual(g, v, r_line: float) -> float:
    """Largest net current imbalance over all internal nodes of a solved grid."""
    g = np.asarray(g, dtype=float)
    v = np.asarray(v, dtype=float)
    _, vr, vc = solve_grid(g, v, r_line, return_voltages=True)
    gw = 1.0 / r_line
    dev = g * (vr - vc)
    left = np.concatenate([v[:, None], vr[:, :-1]], axis=1)
    right = np.concatenate([vr[:, 1:], vr[:, -1:]], axis=1)
    row_in = gw * (left - vr) + gw * (right - vr) - dev
    up = np.concatenate([vc[:1, :], vc[:-1, :]], axis=0)
    down = np.concatenate([vc[1:, :], np.zeros((1, vc.shape[1]))], axis=0)
    col_in = gw * (up - vc) + gw * (down - vc) + dev
    return float(max(np.abs(row_in).max(), np.abs(col_in).max()))


# --------------------------------------------------------------------------
# snapshots

SNAPSHOT_FIELDS = ("plane", "row", "col", "x", "a", "stuck", "stuck_value")


def save_snapshot(array: CrossbarArray, path) -> None:
    """Write the array as CSV: ``#``-prefixed ``key=value`` header, then one row per device."""
    path = Path(path)
    p, m = array.params, array.mapping
    header = {
        "kind": p.kind.value, "x_min": p.x_min, "x_max": p.x_max, "p_max": p.p_max,
        "a_ltp": p.a_ltp, "a_ltd": p.a_ltd, "sigma_d2d": p.sigma_d2d,
        "sigma_c2c": p.sigma_c2c, "stuck_prob": p.stuck_prob,
        "w_min": m.w_min, "w_max": m.w_max, "s_on": m.s_on, "s_off": m.s_off,
        "r_line": array.r_line, "v_read": array.v_read, "access": array.access.value,
        "attenuation": array.attenuation, "scheme": array.scheme, "rows": array.rows, "cols": array.cols,
    }
    with path.open("w", newline="") as fh:
        for k, v in header.items():
            fh.write(f"# {k}={v!r}\n" if isinstance(v, float) else f"# {k}={v}\n")
        w = csv.writer(fh)
        w.writerow(SNAPSHOT_FIELDS)
        for plane in ("pos", "neg"):
            st = getattr(array, plane)
            for (i, j), x in np.ndenumerate(st.x):
                w.writerow([plane, i, j, repr(float(x)), repr(float(st.a[i, j])),
                            int(st.stuck[i, j]), repr(float(st.stuck_value[i, j]))])


def load_snapshot(path) -> CrossbarArray:
    path = Path(path)
    header, body = {}, []
    with path.open() as fh:
        for line in fh:
            if line.startswith("#"):
                k, v = line[1:].strip().split("=", 1)
                header[k] = v
            else:
                body.append(line)
    rows, cols = int(header["rows"]), int(header["cols"])
    params = DeviceParams(
        x_min=float(header["x_min"]), x_max=float(header["x_max"]), p_max=int(header["p_max"]),
        a_ltp=float(header["a_ltp"]), a_ltd=float(header["a_ltd"]),
        sigma_d2d=float(header["sigma_d2d"]), sigma_c2c=float(header["sigma_c2c"]),
        stuck_prob=float(header["stuck_prob"]), kind=header["kind"])
    mapping = WeightMapping(float(header["w_min"]), float(header["w_max"]),
                            float(header["s_on"]), float(header["s_off"]))
    planes = {p: {f: np.zeros((rows, cols)) for f in ("x", "a", "stuck", "stuck_value")}
              for p in ("pos", "neg")}
    for rec in csv.DictReader(body):
        d = planes[rec["plane"]]
        i, j = int(rec["row"]), int(rec["col"])
        for f in ("x", "a", "stuck", "stuck_value"):
            d[f][i, j] = float(rec[f])
    states = {p: DeviceState(d["x"], d["a"], d["stuck"].astype(bool), d["stuck_value"])
              for p, d in planes.items()}
    return CrossbarArray(params, mapping, states["pos"], states["neg"],
                         r_line=float(header["r_line"]), v_read=float(header["v_read"]),
                         access=header["access"], attenuation=float(header["attenuation"]),
                         scheme=header.get("scheme", "sign-magnitude"))
