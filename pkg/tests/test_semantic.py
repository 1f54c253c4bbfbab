import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from semsim import kernels
from semsim.semantic import (
    SamplerConfig, SamplerState, downsample, feedback, final_input, prediction_error,
    reset_envelope, trigger_check, trigger_threshold, update_semantics,
)


def test_downsample_constant_input_window_two():
    cfg = SamplerConfig(window_w=2, downsample_d=10, fir=(1.0, 1.0))
    st_ = SamplerState.for_config(cfg, 1)
    outs = []
    for _ in range(21):
        r = downsample(cfg, st_, np.array([1.0]), np.array([0.5]))
        if r is not None:
            outs.append((r[0][0], r[1][0]))
    # first emission only sees one sample
    assert outs == [(1.0, 0.5), (2.0, 1.0), (2.0, 1.0)]


def test_downsample_impulse():
    cfg = SamplerConfig(window_w=2, downsample_d=10, fir=(0.25, 0.75))
    st_ = SamplerState.for_config(cfg, 1)
    got = []
    for k in range(21):
        x = 1.0 if k == 9 else 0.0
        r = downsample(cfg, st_, np.array([x]), np.array([0.0]))
        if r is not None:
            got.append(r[0][0])
    assert got == [0.0, 0.75, 0.0]


def test_downsample_matches_kernel_ring():
    cfg = SamplerConfig(window_w=3, downsample_d=4, fir=(0.5, 0.3, 0.2))
    st_ = SamplerState.for_config(cfg, 2)
    r = np.random.default_rng(0)
    xs = r.normal(size=(40, 2, 2))
    ref = []
    for x in xs:
        o = downsample(cfg, st_, x[0], x[1])
        if o is not None:
            ref.append(np.array(o))
    # the plant kernel pushes the same samples through its own ring
    ring = np.zeros((2, 2, 3))
    counters = np.zeros(2, dtype=np.int64)
    ds = np.zeros((2, 2))
    got = []
    for x in xs:
        idx = counters[0]
        ring[:, :, idx % 3] = x
        counters[0] += 1
        if idx % 4 == 0:
            lags = np.arange(min(3, idx + 1))
            ds[:] = ring[:, :, (idx - lags) % 3] @ cfg.fir_array[: lags.size]
            got.append(ds.copy())
    assert np.allclose(np.array(ref), np.array(got))


def test_config_validation():
    with pytest.raises(ValueError):
        SamplerConfig(window_w=2, fir=(1.0,))
    with pytest.raises(ValueError):
        SamplerConfig(downsample_d=0)
    with pytest.raises(ValueError):
        SamplerConfig(alpha=0)
    assert SamplerConfig(window_w=3).fir == (1.0, 0.0, 0.0)


def test_prediction_error():
    st_ = SamplerState(2, 1)
    st_.e_ds[:] = [[1.0, 2.0], [0.5, -0.5]]
    e = prediction_error(st_, np.array([0.25, 1.0]), np.array([0.0, 0.5]))
    assert np.allclose(e, [[0.75, 0.5], [1.0, -1.0]])


def test_threshold_closed_form():
    cfg = SamplerConfig(alpha=0.3, t_const_w=0.1 / 42, t_const_v=0.1 / 1.5)
    t = 1e-3
    thr = trigger_threshold(cfg, 0.01, 0.02, t)
    exact = 0.3 * math.hypot(0.01 * math.exp(-t * 420), 0.02 * math.exp(-t * 15))
    assert float(thr) == pytest.approx(exact, rel=1e-12)
    assert float(trigger_threshold(cfg, 0.01, 0.02, 0.0)) == pytest.approx(0.3 * math.hypot(0.01, 0.02))


def test_trigger_samples_and_holds():
    cfg = SamplerConfig(alpha=1.0, relevance_tol=0.0)
    st_ = SamplerState(2, 1)
    e_pred = np.array([[1.0, 0.0], [0.01, 0.0]])
    fire = trigger_check(cfg, st_, e_pred, np.array([0.1, 0.1]), np.array([0.0, 0.0]), 0.0)
    assert list(fire) == [True, False]
    assert np.array_equal(st_.e_recon[0], [1.0, 0.0])
    assert st_.trigger_count.tolist() == [1, 0]
    fb = feedback(cfg, st_)
    assert fb[0].tolist() == [0.9, 0.0] and fb[1].tolist() == [-0.0, 0.0]
    fired_agent = st_.e_recon[0].copy()
    trigger_check(cfg, st_, np.array([[0.0, 0.0], [0.0, 0.0]]), np.array([1.0, 1.0]), np.zeros(2), 0.001)
    assert np.array_equal(st_.e_recon[0], fired_agent)


def test_relevance_gate_skips_repeat_samples():
    cfg = SamplerConfig(alpha=1e-3, relevance_tol=1e-6)
    st_ = SamplerState(1, 1)
    e = np.array([[0.5, 0.5]])
    assert trigger_check(cfg, st_, e, np.ones(1), np.ones(1), 0.0)[0]
    assert not trigger_check(cfg, st_, e, np.ones(1), np.ones(1), 1e-3)[0]
    assert trigger_check(cfg, st_, e + 1e-3, np.ones(1), np.ones(1), 2e-3)[0]


def test_feedback_and_final_input():
    cfg = SamplerConfig(k1=2.0, k2=-0.5)
    st_ = SamplerState(1, 1)
    st_.e_recon[:] = [[0.1, 0.4]]
    st_.has_recon[:] = True
    fb = feedback(cfg, st_)
    assert fb[0][0] == pytest.approx(0.2) and fb[1][0] == pytest.approx(-0.2)
    u = final_input((np.array([1.0]), np.array([1.0])), fb)
    assert u[0][0] == pytest.approx(1.2) and u[1][0] == pytest.approx(0.8)


def test_relevance_zero_right_after_trigger():
    cfg = SamplerConfig(alpha=0.1)
    st_ = SamplerState(3, 1)
    st_.e_pred[:] = [[1.0, 0.0], [0.0, 0.0], [0.5, 0.5]]
    trigger_check(cfg, st_, st_.e_pred, np.ones(3), np.ones(3), 0.0)
    _, r = update_semantics(st_, 0.0, np.array([0.0, 1.0, np.inf]))
    assert np.all(r == 0.0)
    assert st_.fresh_f.tolist() == [0.0, 1.0, np.inf]


def test_envelope_anchor():
    cfg = SamplerConfig(alpha=1.0, t_const_w=0.01, t_const_v=0.01)
    st_ = SamplerState(1, 1)
    e = np.array([[0.05, 0.0]])
    # far from the anchor the envelope has decayed, so a small error fires
    assert trigger_check(cfg, st_, e, np.ones(1), np.zeros(1), 1.0)[0]
    st2 = SamplerState(1, 1)
    reset_envelope(st2, 1.0)
    assert not trigger_check(cfg, st2, e, np.ones(1), np.zeros(1), 1.0)[0]


@given(st.floats(0.01, 5), st.floats(0.01, 5), st.integers(0, 2**32 - 1))
def test_larger_alpha_fires_subset(a1, a2, seed):
    lo, hi = sorted((a1, a2))
    r = np.random.default_rng(seed)
    e_pred = r.normal(size=(8, 2))
    ed, eq = r.normal(size=8), r.normal(size=8)
    f_lo = trigger_check(SamplerConfig(alpha=lo), SamplerState(8, 1), e_pred, ed, eq, 0.01)
    f_hi = trigger_check(SamplerConfig(alpha=hi), SamplerState(8, 1), e_pred, ed, eq, 0.01)
    assert not np.any(f_hi & ~f_lo)


@given(st.lists(st.floats(-1, 1), min_size=5, max_size=40), st.integers(0, 2**32 - 1))
def test_held_reconstruction_changes_only_on_trigger(vals, seed):
    cfg = SamplerConfig(alpha=0.5)
    st_ = SamplerState(1, 1)
    r = np.random.default_rng(seed)
    prev = st_.e_recon.copy()
    for k, v in enumerate(vals):
        e = np.array([[v, r.normal()]])
        fire = trigger_check(cfg, st_, e, np.ones(1), np.ones(1), k * 1e-3)
        if fire[0]:
            assert np.array_equal(st_.e_recon, e)
        else:
            assert np.array_equal(st_.e_recon, prev)
        prev = st_.e_recon.copy()
