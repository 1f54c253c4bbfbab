import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from semsim import kernels
from semsim.plant import (
    DerParams, DerState, LineNetwork, PlantError, check_state, default_network,
    droop_references, electrical_powers, step_plant,
)

P = DerParams()


def test_droop_references_rated_power():
    s = DerState(p_filt=32000.0, q_filt=10000.0)
    w, (vd, vq) = droop_references(P, s)
    assert w == pytest.approx(314.15 - 9.4e-5 * 32000, abs=1e-9)
    assert w == pytest.approx(311.142, abs=1e-9)
    assert vd == pytest.approx(220 * math.sqrt(2) - 13.0, abs=1e-9)
    assert vq == 0.0


def test_droop_references_with_corrections():
    s = DerState(p_filt=0.0, q_filt=0.0)
    w, (vd, _) = droop_references(P, s, d_omega_c=0.5, d_vc=-1.0)
    assert w == pytest.approx(314.65)
    assert vd == pytest.approx(P.v_nom - 1.0)


def test_two_bus_powers():
    net = LineNetwork([[0, 1], [1, 0]], [0, 0], [0, 0], s_base=32000.0)
    a = DerState(delta=0.01, v_d=311.0)
    b = DerState(delta=0.0, v_d=310.0)
    p, q = electrical_powers(net, [a, b])
    assert p[0] == pytest.approx(32000 * math.sin(0.01), rel=1e-12)
    assert p[0] == pytest.approx(319.9947, abs=1e-4)
    assert p[1] == pytest.approx(-p[0])
    assert q[0] == pytest.approx(net.q_coef * 1.0)
    assert q[1] == pytest.approx(-net.q_coef)


def test_loads_are_added():
    net = LineNetwork(np.zeros((2, 2)), [1e3, 2e3], [5.0, 6.0])
    p, q = electrical_powers(net, [DerState(), DerState()])
    assert list(p) == [1e3, 2e3] and list(q) == [5.0, 6.0]


def test_euler_step_values():
    s = DerState(delta=0.0, omega=314.15, v_d=0.0, p_filt=0.0, q_filt=0.0)
    refs = droop_references(P, s)
    nxt = step_plant(P, s, refs, (32000.0, 0.0), 1e-4)
    assert nxt.v_d == pytest.approx(P.v_nom / 0.01 * 1e-4, rel=1e-12)
    assert nxt.v_d == pytest.approx(3.111270, abs=1e-6)
    assert nxt.p_filt == pytest.approx(31.41 * 32000 * 1e-4, rel=1e-12)
    assert nxt.omega == refs[0]
    assert nxt.e_dvc == pytest.approx(refs[1][0] - nxt.v_d)


def test_fixed_point_is_stationary():
    s = DerState(p_filt=1000.0, q_filt=200.0)
    w, (vd, _) = droop_references(P, s)
    s.v_d = vd
    nxt = step_plant(P, s, (w, (vd, 0.0)), (1000.0, 200.0), 1e-4)
    assert nxt.p_filt == s.p_filt and nxt.q_filt == s.q_filt
    assert nxt.v_d == pytest.approx(vd, abs=1e-12)
    assert nxt.delta == pytest.approx((w - P.omega_nom) * 1e-4)


def test_bad_dt_and_state():
    s = DerState()
    with pytest.raises(ValueError):
        step_plant(P, s, droop_references(P, s), (0, 0), 2e-3)
    with pytest.raises(PlantError):
        check_state(P, DerState(omega=math.nan))
    with pytest.raises(PlantError):
        check_state(P, DerState(omega=700.0))


def test_param_validation():
    with pytest.raises(ValueError):
        DerParams(m_p=0.0)


@given(st.floats(-5e4, 5e4), st.floats(1e-3, 0.5))
def test_filter_tracks_closed_form(p_const, horizon):
    # first-order filter under a constant input against exp(-w t)
    dt = 1e-5
    s = DerState()
    steps = int(round(horizon / dt))
    x = 0.0
    for _ in range(steps):
        x = x + P.omega_f * (p_const - x) * dt
    exact = p_const * (1 - math.exp(-P.omega_f * steps * dt))
    assert x == pytest.approx(exact, rel=1e-3, abs=1e-6 * abs(p_const) + 1e-9)


def _simulate(dt, horizon, net):
    n = net.n
    state = np.zeros((8, n))
    state[1] = P.omega_nom
    state[2] = P.v_nom
    params = np.tile(np.array([[P.m_p], [P.n_q], [P.omega_nom], [P.v_nom], [P.omega_f], [P.t_v]]), (1, n))
    powers = np.zeros((2, n))
    ring = np.zeros((2, n, 1))
    ds = np.zeros((2, n))
    counters = np.zeros(2, dtype=np.int64)
    steps = int(round(horizon / dt))
    kernels.plant_advance(state, params, np.zeros(n), np.zeros(n), net.susceptances, net.s_base, net.q_coef,
                          net.load_p, net.load_q, dt, steps, powers, ring, np.ones(1), 10, ds, counters)
    return state


def test_dt_halving_converges():
    net = default_network(7)
    ref = _simulate(2.5e-5, 0.2, net)
    e1 = np.abs(_simulate(1e-4, 0.2, net)[4] - ref[4]).max()
    e2 = np.abs(_simulate(5e-5, 0.2, net)[4] - ref[4]).max()
    assert e2 < e1
    assert e2 / max(abs(ref[4]).max(), 1) < 1e-2


def test_kernel_matches_scalar_step():
    net = default_network(3)
    n = 3
    states = [DerState.initial(P) for _ in range(n)]
    for k in range(50):
        p, q = electrical_powers(net, states)
        states = [step_plant(P, s, droop_references(P, s), (p[j], q[j]), 1e-4) for j, s in enumerate(states)]
    arr = _simulate(1e-4, 50e-4, net)
    assert np.allclose(arr[4], [s.p_filt for s in states], rtol=1e-10)
    assert np.allclose(arr[2], [s.v_d for s in states], rtol=1e-12)
    assert np.allclose(arr[0], [s.delta for s in states], atol=1e-12)


def test_default_network_shapes():
    assert default_network(7).n == 7
    net = default_network(4)
    assert net.n == 4 and net.load_q == pytest.approx(net.load_p / 3)
