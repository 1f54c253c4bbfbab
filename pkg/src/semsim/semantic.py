"""Delay-aware semantic sampler.

All state is array-shaped over agents so a whole microgrid is handled in one
call; a single agent is just ``n = 1``.  Axis 0 of the two-column arrays is the
active-power (d) channel and axis 1 the reactive-power (q) channel.
"""
import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class SamplerConfig:
    window_w: int = 1
    downsample_d: int = 10
    fir: tuple = None
    alpha: float = 0.3
    t_const_w: float = 0.1 / 42.0
    t_const_v: float = 0.1 / 1.5
    k1: float = 0.9
    k2: float = -1.0
    # a new sample is taken only when the prediction error has moved by more
    # than this since the held one (zero disables the guard)
    relevance_tol: float = 1e-6

    def __post_init__(self):
        if int(self.window_w) != self.window_w or self.window_w < 1:
            raise ValueError("window_w must be an integer >= 1")
        if int(self.downsample_d) != self.downsample_d or self.downsample_d < 1:
            raise ValueError("downsample_d must be an integer >= 1")
        fir = self.fir
        if fir is None:
            fir = (1.0,) + (0.0,) * (self.window_w - 1)
        fir = tuple(float(x) for x in fir)
        if len(fir) != self.window_w:
            raise ValueError(f"fir needs exactly {self.window_w} taps, got {len(fir)}")
        object.__setattr__(self, "fir", fir)
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not (self.t_const_w > 0 and self.t_const_v > 0):
            raise ValueError("time constants must be positive")
        if self.relevance_tol < 0:
            raise ValueError("relevance_tol must be >= 0")

    @property
    def fir_array(self):
        return np.array(self.fir, dtype=np.float64)


@dataclass
class SamplerState:
    n: int
    window_w: int
    ring: np.ndarray = field(init=False)
    sample_idx: np.ndarray = field(init=False)
    e_ds: np.ndarray = field(init=False)
    have_ds: bool = False
    e_pred: np.ndarray = field(init=False)
    e_recon: np.ndarray = field(init=False)
    has_recon: np.ndarray = field(init=False)
    last_trigger_s: np.ndarray = field(init=False)
    fresh_f: np.ndarray = field(init=False)
    relevance_r: np.ndarray = field(init=False)
    trigger_count: np.ndarray = field(init=False)
    anchor_s: float = 0.0

    def __post_init__(self):
        n, w = self.n, self.window_w
        self.ring = np.zeros((2, n, w))
        # [raw sample index, emissions in the last plant block]; int64 for the kernel
        self.sample_idx = np.zeros(2, dtype=np.int64)
        self.e_ds = np.zeros((2, n))
        self.e_pred = np.zeros((n, 2))
        self.e_recon = np.zeros((n, 2))
        self.has_recon = np.zeros(n, dtype=bool)
        self.last_trigger_s = np.full(n, math.nan)
        self.fresh_f = np.full(n, math.inf)
        self.relevance_r = np.zeros((n, 2))
        self.trigger_count = np.zeros(n, dtype=np.int64)

    @classmethod
    def for_config(cls, cfg, n):
        return cls(n, cfg.window_w)


def downsample(cfg, st, e_dvc, e_qvc):
    """Push one raw sample per agent; return ``(e_dd, e_qd)`` on emission, else None."""
    idx = int(st.sample_idx[0])
    w_len = cfg.window_w
    st.ring[0, :, idx % w_len] = e_dvc
    st.ring[1, :, idx % w_len] = e_qvc
    st.sample_idx[0] = idx + 1
    if idx % cfg.downsample_d:
        return None
    lags = np.arange(min(w_len, idx + 1))
    st.e_ds[:] = st.ring[:, :, (idx - lags) % w_len] @ cfg.fir_array[: lags.size]
    st.have_ds = True
    return st.e_ds[0].copy(), st.e_ds[1].copy()


def prediction_error(st, u_p, u_q):
    st.e_pred[:, 0] = st.e_ds[0] - u_p
    st.e_pred[:, 1] = st.e_ds[1] - u_q
    return st.e_pred


def trigger_threshold(cfg, e_dvc, e_qvc, elapsed_s):
    env_d = math.exp(-elapsed_s / cfg.t_const_w)
    env_q = math.exp(-elapsed_s / cfg.t_const_v)
    return cfg.alpha * np.hypot(env_d * np.asarray(e_dvc), env_q * np.asarray(e_qvc))


def trigger_check(cfg, st, e_pred, e_dvc, e_qvc, now_s):
    """Evaluate the prediction policy; sample-and-hold ``e_pred`` where it fires."""
    e_pred = np.asarray(e_pred, dtype=np.float64).reshape(st.n, 2)
    thr = trigger_threshold(cfg, e_dvc, e_qvc, now_s - st.anchor_s)
    fire = np.hypot(e_pred[:, 0], e_pred[:, 1]) > thr
    if cfg.relevance_tol > 0:
        moved = e_pred - st.e_recon
        fire &= ~st.has_recon | (np.hypot(moved[:, 0], moved[:, 1]) > cfg.relevance_tol)
    if fire.any():
        st.e_recon[fire] = e_pred[fire]
        st.has_recon |= fire
        st.last_trigger_s[fire] = now_s
        st.trigger_count += fire
    return fire


def feedback(cfg, st):
    """``(k1 * held_p, k2 * held_q)``; zero for agents that never triggered."""
    e_p_phi = np.where(st.has_recon, cfg.k1 * st.e_recon[:, 0], 0.0)
    e_q_phi = np.where(st.has_recon, cfg.k2 * st.e_recon[:, 1], 0.0)
    return e_p_phi, e_q_phi


def final_input(u_pq, fb):
    return u_pq[0] + fb[0], u_pq[1] + fb[1]


def update_semantics(st, now_s, channel_f):
    """Mirror stream freshness and recompute relevance ``e_pred - e_recon``."""
    st.fresh_f[:] = channel_f
    st.relevance_r[:] = np.where(st.has_recon[:, None], st.e_pred - st.e_recon, 0.0)
    return st.fresh_f, st.relevance_r


def reset_envelope(st, now_s):
    """Restart the trigger envelope clock at a scenario event."""
    st.anchor_s = now_s
