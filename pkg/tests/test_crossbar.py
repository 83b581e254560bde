import numpy as np
import pytest

from memsim import crossbar, devices
from memsim.crossbar import CrossbarArray, WeightMapping
from memsim.devices import DeviceState
from memsim.errors import DomainError, NumericError, ShapeError
from oracles import dense_grid_currents

P = devices.preset("tiox-memristor")


def array_from(gpos, gneg=None, r_line=0.0, params=P, **kw):
    gpos = np.atleast_2d(np.asarray(gpos, float))
    gneg = np.zeros_like(gpos) if gneg is None else np.asarray(gneg, float)
    m = WeightMapping.for_device(params)
    return CrossbarArray(params, m, DeviceState(gpos, params.a_ltp, False),
                         DeviceState(gneg, params.a_ltp, False), r_line=r_line, **kw)


def test_target_state_endpoints():
    m = WeightMapping(-1.0, 1.0, s_on=1e-4, s_off=4e-8)
    assert crossbar.target_state(-1.0, m) == m.s_off
    assert crossbar.target_state(1.0, m) == m.s_on
    assert crossbar.target_state(0.0, m) == pytest.approx((m.s_on + m.s_off) / 2)


def test_map_weights_rejects_out_of_range(rng):
    m = WeightMapping.for_device(P)
    with pytest.raises(DomainError):
        crossbar.map_weights(np.array([[1.5]]), m, P, rng)


def test_differential_schemes_read_back(rng):
    w = rng.uniform(-1, 1, (6, 5))
    fine = P.with_(p_max=100000, a_ltp=1e9)
    m = WeightMapping.for_device(fine)
    for scheme in ("sign-magnitude", "balanced"):
        a = crossbar.map_weights(w, m, fine, rng, scheme=scheme)
        back = crossbar.read_effective_weights(a)
        assert np.max(np.abs(back - w)) <= (m.w_max - m.w_min) / fine.p_max


def test_fresh_array_reads_zero(rng):
    m = WeightMapping.for_device(P)
    pos = devices.sample_population(P, 3, 3, rng)
    neg = devices.sample_population(P, 3, 3, rng)
    a = CrossbarArray(P, m, pos, neg)
    assert np.all(crossbar.read_effective_weights(a) == 0)


def test_stuck_weight_constant(rng):
    params = P.with_(stuck_prob=0.5)
    m = WeightMapping.for_device(params)
    a = crossbar.map_weights(rng.uniform(-1, 1, (8, 8)), m, params, rng)
    stuck = a.pos.stuck & a.neg.stuck
    assert stuck.any()
    before = crossbar.read_effective_weights(a)[stuck]
    crossbar.program_weights(a, rng.uniform(-1, 1, (8, 8)), rng)
    assert np.array_equal(crossbar.read_effective_weights(a)[stuck], before)


def test_ideal_vmm_examples():
    assert crossbar.ideal_vmm(array_from([[1e-4]]), [0.5])[0] == pytest.approx(5e-5)
    a = array_from(np.array([[1, 2], [3, 4]]) * 1e-5)
    np.testing.assert_allclose(crossbar.ideal_vmm(a, [1, -1]), [-2e-5, -2e-5])
    assert np.all(crossbar.ideal_vmm(a, [0, 0]) == 0)
    with pytest.raises(ShapeError):
        crossbar.ideal_vmm(a, [1, 2, 3])


def test_ideal_vmm_linear(rng):
    a = array_from(rng.uniform(0, 1e-4, (5, 4)), rng.uniform(0, 1e-4, (5, 4)))
    u, v = rng.normal(size=5), rng.normal(size=5)
    lhs = crossbar.ideal_vmm(a, 2.5 * u - 0.7 * v)
    rhs = 2.5 * crossbar.ideal_vmm(a, u) - 0.7 * crossbar.ideal_vmm(a, v)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12 * np.abs(rhs).max())


def test_memcapacitor_charge_readout(rng):
    mc = devices.preset("si-memcapacitor")
    c = rng.uniform(mc.x_min, mc.x_max, (4, 3))
    a = array_from(c, params=mc, r_line=1.0, attenuation=0.9)
    v = rng.uniform(0, 1, 4)
    np.testing.assert_allclose(crossbar.parasitic_vmm(a, v), 0.9 * v @ c)


def test_one_by_one_closed_form():
    rd, r, v = 1e4, 3.0, 0.5
    i = crossbar.solve_grid(np.array([[1 / rd]]), [v], r)
    assert i[0] == pytest.approx(v / (rd + 2 * r), rel=1e-12)


def test_parasitic_matches_dense_oracle(rng):
    g = rng.uniform(P.x_min, P.x_max, (8, 8))
    v = rng.uniform(-0.2, 0.2, 8)
    got = crossbar.solve_grid(g, v, 0.5)
    want = dense_grid_currents(g, v, 0.5)
    np.testing.assert_allclose(got, want, rtol=1e-9)


def test_zero_line_resistance_is_ideal(rng):
    a = array_from(rng.uniform(P.x_min, P.x_max, (6, 5)), rng.uniform(P.x_min, P.x_max, (6, 5)))
    v = rng.uniform(0, 0.2, 6)
    np.testing.assert_allclose(crossbar.parasitic_vmm(a, v), crossbar.ideal_vmm(a, v), rtol=1e-9)
    a.r_line = 1e-6
    a.invalidate()
    ideal = crossbar.ideal_vmm(a, v)
    np.testing.assert_allclose(crossbar.parasitic_vmm(a, v), ideal, rtol=1e-6)


def test_parasitic_degrades_nonnegative(rng):
    g = rng.uniform(P.x_min, P.x_max, (16, 12))
    v = rng.uniform(0.01, 0.2, 16)
    ideal = v @ g
    par = crossbar.solve_grid(g, v, 0.5)
    assert np.all(par < ideal) and np.all(par > 0)


def test_kcl(rng):
    g = rng.uniform(P.x_min, P.x_max, (10, 7))
    v = rng.uniform(0, 0.2, 10)
    total = np.sum(crossbar.solve_grid(g, v, 1.0))
    assert crossbar.kcl_residual(g, v, 1.0) <= 1e-9 * total


def test_transfer_matrix_both_orientations(rng):
    for shape in ((12, 5), (5, 12)):
        g = rng.uniform(P.x_min, P.x_max, shape)
        T = crossbar.transfer_matrix(g, 2.0)
        direct = crossbar.solve_grid(g, np.eye(shape[0]), 2.0)
        np.testing.assert_allclose(T, direct, rtol=1e-10, atol=1e-14 * np.abs(direct).max())


def test_floating_grid_is_numeric_error():
    with pytest.raises(NumericError):
        crossbar.solve_grid(np.zeros((2, 2)), [1, 1], np.inf)


def test_one_t_one_r_all_rows_driven_equals_passive(rng):
    g = rng.uniform(P.x_min, P.x_max, (6, 4))
    v = rng.uniform(0.05, 0.2, 6)
    a = array_from(g, r_line=1.0)
    b = array_from(g, r_line=1.0, access="1t1r")
    np.testing.assert_allclose(crossbar.parasitic_vmm(b, v), crossbar.parasitic_vmm(a, v), rtol=1e-10)
    v[2] = 0.0
    # the idle row's cells are switched off: same as a passive grid without them
    g_off = g.copy()
    g_off[2] = 0.0
    want = crossbar.parasitic_vmm(array_from(g_off, r_line=1.0), v)
    np.testing.assert_allclose(crossbar.parasitic_vmm(b, v), want, rtol=1e-10)
    assert not np.allclose(crossbar.parasitic_vmm(a, v), want, rtol=1e-6, atol=0)


def test_snapshot_round_trip(tmp_path, rng):
    params = P.with_(stuck_prob=0.2, sigma_d2d=0.1)
    m = WeightMapping.for_device(params)
    a = crossbar.map_weights(rng.uniform(-1, 1, (3, 4)), m, params, rng, r_line=0.5, scheme="balanced")
    crossbar.save_snapshot(a, tmp_path / "a.csv")
    b = crossbar.load_snapshot(tmp_path / "a.csv")
    for plane in ("pos", "neg"):
        for f in ("x", "a", "stuck", "stuck_value"):
            assert np.array_equal(getattr(getattr(a, plane), f), getattr(getattr(b, plane), f))
    assert (b.params, b.mapping, b.r_line, b.scheme) == (a.params, a.mapping, a.r_line, a.scheme)


def test_iterative_solver_matches_direct(rng, monkeypatch):
    g = rng.uniform(P.x_min, P.x_max, (16, 12))
    v = rng.uniform(0, 0.2, (3, 16))
    direct = crossbar.solve_grid(g, v, 1.0)
    monkeypatch.setattr(crossbar, "DIRECT_SOLVE_MAX_NODES", 0)
    np.testing.assert_allclose(crossbar.solve_grid(g, v, 1.0), direct, rtol=1e-9)
