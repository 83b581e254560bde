import math

import numpy as np
import pytest

from memsim import meminductor as mi
from memsim.crossbar import target_state
from memsim.errors import IntegrationError, ParameterError, SteadyStateError

P = mi.preset("tiox-meminductor")
F = 3e6


def dip_lag(v_in, v_out, dt, max_lag):
    """Lag (s) at the peak of the cross-correlation of two mean-removed signals."""
    x = v_in - v_in.mean()
    y = v_out - v_out.mean()
    lags = np.arange(-max_lag, max_lag + 1)
    cc = [np.dot(x[max(0, -l):len(x) - max(0, l)], y[max(0, l):len(y) - max(0, -l)]) for l in lags]
    return lags[int(np.argmax(cc))] * dt


def test_ota_gm_examples():
    k = 4.02e-4
    assert mi.ota_gm(mi.OtaParams(k=k, v_b=-0.1, v_ss=-0.9, v_t=0.4)) == pytest.approx(0.0, abs=1e-18)
    a = mi.ota_gm(mi.OtaParams(k=k, v_b=1.0, v_ss=-0.9, v_t=0.4))
    b = mi.ota_gm(mi.OtaParams(k=k, v_b=1.25, v_ss=-0.9, v_t=0.4))
    assert b - a == pytest.approx(k * 0.25 / math.sqrt(2), rel=1e-12)
    with pytest.warns(RuntimeWarning, match="cutoff"):
        assert mi.ota_gm(mi.OtaParams(k=k, v_b=-1.0, v_ss=-0.9, v_t=0.4)) < 0


def test_operating_point_threshold():
    # gm = 967 uS with K = 402 uA/V^2 needs a bias the formula pins down exactly
    vt = mi.implied_threshold(967e-6, 4.02e-4, v_b=1.8, v_ss=-0.9)
    gm = mi.ota_gm(mi.OtaParams(k=4.02e-4, v_b=1.8, v_ss=-0.9, v_t=vt))
    assert gm == pytest.approx(967e-6, rel=1e-12)
    # gm/K is larger than the supply span allows for a typical 0.4 V threshold
    assert vt < 0


def test_zero_input_stays_zero():
    s = mi.MeminductorState()
    for _ in range(100):
        s, i, m = mi.step(s, 0.0, 1e-9, P)
        assert s.phi == 0 and s.rho == 0 and i == 0
    assert m == pytest.approx(P.baseline)


def test_pinch_regardless_of_rho():
    for rho in (-1e-12, 0.0, 3e-12):
        assert mi.input_current(0.0, rho, P) == 0


def test_pinched_two_lobe_orbit():
    tr = mi.hysteresis_trace(P, 0.5, F)
    assert tr.pinch_residual <= 1e-3
    last = slice(-2001, None)
    phi, i = tr.phi[last], tr.i_in[last]
    assert phi.min() < 0 < phi.max()
    assert tr.lobe_area > 0
    # orbit passes through both quadrants of sign(phi) == sign(i)
    assert np.all(np.sign(i[np.abs(phi) > 1e-3 * np.abs(phi).max()]) ==
                  np.sign(phi[np.abs(phi) > 1e-3 * np.abs(phi).max()]))


def test_modes_differ_only_in_rho_sign():
    lit = P.with_(sign="literal")
    inc, dec = lit.with_(mode="incremental"), lit.with_(mode="decremental")
    rho = np.linspace(-2e-13, 2e-13, 9)
    total = mi.inverse_meminductance(rho, inc) + mi.inverse_meminductance(rho, dec)
    want = 2 * P.k * P.gm1 * (P.v_ss + P.v_t) / P.c1
    np.testing.assert_allclose(total, want, rtol=1e-12)


def test_rk4_halving_dt():
    a = mi.hysteresis_trace(P, 0.5, F, steps_per_cycle=1000).lobe_area
    b = mi.hysteresis_trace(P, 0.5, F, steps_per_cycle=2000).lobe_area
    assert abs(a - b) / b < 1e-3


@pytest.mark.parametrize("mode", ["decremental", "incremental"])
def test_lobe_shrinks_with_frequency(mode):
    p = P.with_(mode=mode)
    areas = [mi.hysteresis_trace(p, 0.5, f).lobe_area for f in (1e6, 3e6, 10e6, 30e6)]
    assert all(x > y for x, y in zip(areas, areas[1:]))
    hi = mi.hysteresis_trace(p, 0.5, 100 * F).lobe_area
    assert hi < 0.05 * areas[1]


def test_lower_gm_smaller_lobe():
    areas = [mi.hysteresis_trace(P.with_(gm1=g, gm3=g), 0.5, F).lobe_area for g in (967e-6, 700e-6, 500e-6)]
    assert areas[0] > areas[1] > areas[2]


def test_lobe_area_matches_closed_form():
    tr = mi.hysteresis_trace(P, 0.5, F)
    assert tr.lobe_area == pytest.approx(mi.lobe_area_estimate(P, 0.5, F), rel=1e-3)


def test_modulation_amplitude_matches_estimate():
    tr = mi.hysteresis_trace(P, 0.5, F)
    assert tr.m_inv_amplitude == pytest.approx(mi.modulation_amplitude_estimate(P, 0.5, F), rel=0.05)


def test_lobe_area_shoelace():
    # unit circle in the right half plane -> half disc
    th = np.linspace(0, 2 * np.pi, 4001)[:-1]
    assert mi.lobe_area(np.cos(th), np.sin(th)) == pytest.approx(np.pi / 2, rel=1e-5)


def test_unsettled_orbit_raises():
    # the sinusoidal orbit settles by construction, so feed the check a growing spiral
    spc = 1000
    t = np.arange(4 * spc + 1) / spc
    grow = 1 + 0.1 * t
    phi = grow * np.cos(2 * np.pi * t)
    tr = mi.Trace(t=t, v_in=t, phi=phi, rho=t, i_in=grow * np.sin(2 * np.pi * t), m_inv=t)
    with pytest.raises(SteadyStateError, match="not settled"):
        mi._summarise(tr, spc)


def test_trace_preconditions():
    with pytest.raises(ParameterError):
        mi.hysteresis_trace(P, 0.5, F, cycles=3)
    with pytest.raises(ParameterError):
        mi.hysteresis_trace(P, 0.5, F, steps_per_cycle=500)


def test_compose_single_is_identity():
    a = mi.compose([P], "series", 0.5, F)
    b = mi.hysteresis_trace(P, 0.5, F)
    assert np.array_equal(a.i_in, b.i_in) and a.lobe_area == b.lobe_area


def test_compose_ordering():
    single = mi.hysteresis_trace(P, 0.5, F)
    par = mi.compose([P, P], "parallel", 0.5, F)
    ser = mi.compose([P, P], "series", 0.5, F)
    last = slice(-2001, None)
    mask = np.abs(single.phi[last]) > 1e-2 * np.abs(single.phi).max()
    for tr, op in ((par, np.greater), (ser, np.less)):
        np.testing.assert_allclose(tr.phi[last], single.phi[last], rtol=1e-12)
        assert np.all(op(np.abs(tr.i_in[last][mask]), np.abs(single.i_in[last][mask])))
    np.testing.assert_allclose(par.i_in, 2 * single.i_in, rtol=1e-12)
    # each series element sees half the flux, i.e. a single element at half drive
    half = mi.hysteresis_trace(P, 0.25, F)
    np.testing.assert_allclose(ser.i_in, half.i_in, rtol=1e-9, atol=1e-12 * np.abs(half.i_in).max())


def test_series_equal_current():
    other = P.with_(gm3=P.gm3 / 2)
    tr = mi.compose([P, other], "series", 0.5, F)
    rho = tr.extra["rho_elements"][-1]
    phi_parts = np.array([tr.i_in[-1] / mi.inverse_meminductance(r, p) for r, p in zip(rho, (P, other))])
    assert phi_parts.sum() == pytest.approx(tr.phi[-1], rel=1e-12)


def test_amoeba_zero_input():
    tr = mi.simulate_amoeba(P, 1e3, 10e-12, np.zeros(1000), 1e-9)
    assert not tr.v_out.any()


def test_amoeba_frozen_matches_rlc():
    frozen = P.with_(gm3=0.0)
    dt = 1e-9
    t = np.arange(20000) * dt
    tr = mi.simulate_amoeba(frozen, 1e3, 10e-12, np.ones(len(t)), dt)
    ref = mi.rlc_step_response(1 / frozen.baseline, 1e3, 10e-12, 1.0, t)
    assert np.sqrt(np.mean((tr.v_out - ref) ** 2)) <= 0.01 * np.sqrt(np.mean(ref ** 2))


def test_amoeba_dips_lag():
    dt, period = 2e-8, 4e-5
    t = np.arange(10001) * dt
    phase = np.mod(t, period)
    v = np.where((phase >= period / 2) & (phase < period / 2 + 8e-6), 0.5, 1.0)
    tr = mi.simulate_amoeba(P, 1e3, 10e-12, v, dt)
    assert dip_lag(v, tr.v_out, dt, int(period / 2 / dt)) > 0


def test_amoeba_blowup():
    with pytest.raises(IntegrationError, match="reduce dt"):
        mi.simulate_amoeba(P, 1e3, 10e-12, np.ones(200), 5e-7)


# ---------------------------------------------------------------- VMM mapping

def test_vmm_wmin_is_soff():
    m = mi.meminductor_mapping()
    assert np.all(target_state(np.full((3, 3), m.w_min), m) == m.s_off)


def test_vmm_zero_input():
    m = mi.meminductor_mapping()
    y = mi.meminductor_vmm_forward(np.full((4, 3), 0.3), np.zeros(4), 1.5e3, m)
    assert not y.any()


def test_vmm_one_hot_selects_element(rng):
    readout = mi.MeminductorReadout()
    m = mi.meminductor_mapping(readout)
    w = rng.uniform(-1, 1, (3, 3))
    s = target_state(w, m)
    for k in range(3):
        v = np.zeros(3)
        v[k] = readout.v_high
        y = mi.meminductor_vmm_forward(w, v, 1.5e3, m, readout)
        # single element: i = S * (phi + rho-term) with phi = V t, rho = V t^2 / 2
        phi = readout.v_high * readout.t_read
        rho = readout.v_high * readout.t_read ** 2 / 2
        i = s[k] * phi * (1 + P.rho_gain / P.baseline * rho)
        np.testing.assert_allclose(y, 1.5e3 * i, rtol=1e-12)


def test_vmm_differential_sign(rng):
    m = mi.meminductor_mapping()
    w = rng.uniform(-1, 1, (5, 2))
    v = np.full(5, 3.3)
    y = mi.meminductor_vmm_forward(w, v, 1.5e3, m, differential=True)
    y_neg = mi.meminductor_vmm_forward(-w, v, 1.5e3, m, differential=True)
    np.testing.assert_allclose(y, -y_neg, rtol=1e-12)
