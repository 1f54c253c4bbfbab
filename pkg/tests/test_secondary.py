import numpy as np
import pytest
from hypothesis import given, strategies as st

from semsim.graph import CyberGraph
from semsim.secondary import (
    SecondaryGains, SecondaryState, SigmaPayload, consensus_input, consensus_input_batch,
    correction_step, correction_step_batch,
)

G2 = CyberGraph([[0, 1], [1, 0]])
GAINS = SecondaryGains()


def test_consensus_two_agents():
    own = SigmaPayload(314.0, 0.2, 0.5)
    nb = SigmaPayload(314.2, 0.6, 0.3)
    u_p, u_q = consensus_input(G2, GAINS, 0, own, {1: nb})
    assert u_p == pytest.approx(0.6)
    assert u_q == pytest.approx(-0.2)


def test_consensus_ignores_missing_and_non_neighbours():
    g = CyberGraph([[0, 1, 0], [1, 0, 1], [0, 1, 0]])
    own = SigmaPayload(314.15, 0.0, 0.0)
    u = consensus_input(g, GAINS, 0, own, {1: None, 2: SigmaPayload(315, 1, 1)})
    assert u == (0.0, 0.0)
    u = consensus_input(g, SecondaryGains(g=2.0), 1, own, {0: SigmaPayload(314.15, 0.1, 0.0)})
    assert u == pytest.approx((0.2, 0.0))


def test_pi_single_step():
    gains = SecondaryGains(kp_w=1.0, ki_w=42.0)
    nxt = correction_step(gains, SecondaryState(), gains.omega_nom - 0.1, (0.0, 0.0), 1e-3)
    assert nxt.int_w == pytest.approx(0.0042)
    assert nxt.d_omega_c == pytest.approx(0.1042)
    assert nxt.d_vc == 0.0


def test_pi_ramp_one_second():
    gains = SecondaryGains(kp_w=0.0, ki_w=8.0)
    st_ = SecondaryState()
    for _ in range(1000):
        st_ = correction_step(gains, st_, gains.omega_nom - 0.1, (0.0, 0.0), 1e-3)
    assert st_.int_w == pytest.approx(0.80, rel=1e-9)


def test_voltage_branch_and_clamp():
    gains = SecondaryGains(kp_v=0.5, ki_v=2.0, clamp_v=0.01)
    nxt = correction_step(gains, SecondaryState(), gains.omega_nom, (0.0, 1.0), 1e-3)
    assert nxt.int_v == pytest.approx(0.002)
    assert nxt.d_vc == pytest.approx(0.502)
    for _ in range(20):
        nxt = correction_step(gains, nxt, gains.omega_nom, (0.0, 1.0), 1e-3)
    assert nxt.int_v == 0.01


def test_gain_validation():
    with pytest.raises(ValueError):
        SecondaryGains(g=0)
    with pytest.raises(ValueError):
        SecondaryGains(ki_w=0)
    assert SecondaryGains(kp_w=0.1, ki_w=42).t_w == pytest.approx(0.1 / 42)


def _rand_setup(n, seed):
    r = np.random.default_rng(seed)
    w = r.uniform(0, 2, (n, n))
    w = np.triu(w, 1)
    w = w + w.T
    own = r.normal(0, 1, (n, 3))
    held = np.broadcast_to(own[None, :, :], (n, n, 3)).copy()
    return w, own, held


@given(st.integers(2, 6), st.integers(0, 2**32 - 1))
def test_batch_matches_scalar(n, seed):
    w, own, held = _rand_setup(n, seed)
    g = CyberGraph(w)
    valid = w > 0
    bp, bq = consensus_input_batch(w, 1.3, own, held, valid)
    gains = SecondaryGains(g=1.3)
    for j in range(n):
        rec = {m: SigmaPayload(*held[j, m]) for m in range(n) if m != j}
        up, uq = consensus_input(g, gains, j, SigmaPayload(*own[j]), rec)
        assert up == pytest.approx(bp[j], abs=1e-9)
        assert uq == pytest.approx(bq[j], abs=1e-9)


@given(st.integers(2, 6), st.integers(0, 2**32 - 1), st.floats(-3, 3))
def test_consensus_linear_and_sums_to_zero(n, seed, c):
    w, own, held = _rand_setup(n, seed)
    valid = w > 0
    up, uq = consensus_input_batch(w, 1.0, own, held, valid)
    up2, uq2 = consensus_input_batch(w, 1.0, c * own, c * held, valid)
    assert np.allclose(up2, c * up, atol=1e-9)
    assert np.allclose(uq2, c * uq, atol=1e-9)
    # undirected graph with perfect information: inputs sum to zero
    assert abs(up.sum()) < 1e-9 and abs(uq.sum()) < 1e-9


@given(st.integers(2, 6), st.integers(0, 2**32 - 1))
def test_consensus_permutation_equivariant(n, seed):
    w, own, held = _rand_setup(n, seed)
    perm = np.random.default_rng(seed).permutation(n)
    up, uq = consensus_input_batch(w, 1.0, own, held, w > 0)
    wp = w[np.ix_(perm, perm)]
    ownp = own[perm]
    heldp = held[np.ix_(perm, perm)]
    up2, uq2 = consensus_input_batch(wp, 1.0, ownp, heldp, wp > 0)
    assert np.allclose(up2, up[perm], atol=1e-9)
    assert np.allclose(uq2, uq[perm], atol=1e-9)


@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-0.5, 0.5), st.floats(-0.5, 0.5))
def test_batch_correction_matches_scalar_explicit(dw, u_pf, u_qf, i0):
    st_ = SecondaryState(int_w=i0, int_v=-i0, d_omega_c=i0)
    nxt = correction_step(GAINS, st_, GAINS.omega_nom + dw, (u_pf, u_qf), 1e-3)
    iw, iv, dwc, dvc = correction_step_batch(
        GAINS, np.array([i0]), np.array([-i0]), np.array([i0]), np.array([GAINS.omega_nom + dw]),
        np.array([u_pf]), np.array([u_qf]), 1e-3, 0.0)
    assert iw[0] == pytest.approx(nxt.int_w, abs=1e-12)
    assert iv[0] == pytest.approx(nxt.int_v, abs=1e-12)
    assert dwc[0] == pytest.approx(nxt.d_omega_c, abs=1e-12)
    assert dvc[0] == pytest.approx(nxt.d_vc, abs=1e-12)


def test_implicit_form_reduces_error_step():
    # with coupling, the proportional reaction is damped by 1 + c (kp + ki dt)
    st_ = SecondaryState()
    a = correction_step(GAINS, st_, GAINS.omega_nom - 0.1, (0, 0), 1e-3)
    b = correction_step(GAINS, st_, GAINS.omega_nom - 0.1, (0, 0), 1e-3, self_coupling=3.0)
    scale = 1 + 3.0 * (GAINS.kp_w + GAINS.ki_w * 1e-3)
    assert b.d_omega_c == pytest.approx(a.d_omega_c / scale)
