"""Reduced-order droop DER model and electrical coupling network.

Droop is algebraic, power measurements pass through first-order low-pass
filters and the inner voltage loop is a first-order lag whose tracking error
is the ``e_dvc``/``e_qvc`` signal consumed by the semantic sampler.
"""
import math
from dataclasses import dataclass, replace

import numpy as np

OMEGA_NOM = 314.15
V_NOM = 220.0 * math.sqrt(2.0)
M_P = 9.4e-5
N_Q = 1.3e-3
P_RATING = 32_000.0
OMEGA_F = 31.41
T_V = 0.01


class PlantError(ArithmeticError):
    pass


@dataclass(frozen=True)
class DerParams:
    m_p: float = M_P
    n_q: float = N_Q
    omega_nom: float = OMEGA_NOM
    v_nom: float = V_NOM
    p_rating: float = P_RATING
    omega_f: float = OMEGA_F
    t_v: float = T_V

    def __post_init__(self):
        for name in ("m_p", "n_q", "omega_nom", "v_nom", "p_rating", "omega_f", "t_v"):
            val = getattr(self, name)
            if not (math.isfinite(val) and val > 0):
                raise ValueError(f"DerParams.{name} must be positive, got {val}")


@dataclass
class DerState:
    delta: float = 0.0
    omega: float = OMEGA_NOM
    v_d: float = V_NOM
    v_q: float = 0.0
    p_filt: float = 0.0
    q_filt: float = 0.0
    e_dvc: float = 0.0
    e_qvc: float = 0.0

    @classmethod
    def initial(cls, params):
        return cls(omega=params.omega_nom, v_d=params.v_nom)


@dataclass
class LineNetwork:
    """Per-unit susceptances on ``s_base`` plus per-bus constant-power loads."""

    susceptances: np.ndarray
    load_p: np.ndarray
    load_q: np.ndarray
    s_base: float = P_RATING
    v_base: float = V_NOM

    def __post_init__(self):
        b = np.array(self.susceptances, dtype=np.float64)
        if b.ndim != 2 or b.shape[0] != b.shape[1]:
            raise ValueError("susceptance matrix must be square")
        if not np.array_equal(b, b.T) or np.any(np.diag(b) != 0) or np.any(b < 0):
            raise ValueError("susceptances must be symmetric, zero-diagonal and non-negative")
        self.susceptances = b
        self.load_p = np.array(self.load_p, dtype=np.float64).reshape(b.shape[0])
        self.load_q = np.array(self.load_q, dtype=np.float64).reshape(b.shape[0])

    @property
    def n(self):
        return self.susceptances.shape[0]

    @property
    def q_coef(self):
        return self.s_base / self.v_base

    def scaled_loads(self, factor):
        return replace(self, load_p=self.load_p * factor, load_q=self.load_q * factor)


# 7-bus equivalent: a feeder chain with one lateral tie, one DER per bus.
_SEVEN_BUS_LINES = ((0, 1, 1.0), (1, 2, 0.8), (2, 3, 1.2), (3, 4, 0.7), (4, 5, 1.0), (5, 6, 0.9), (1, 5, 0.6))
_SEVEN_BUS_LOAD_P = (18e3, 25e3, 12e3, 30e3, 15e3, 22e3, 20e3)
_SEVEN_BUS_LOAD_Q = (6e3, 10e3, 4e3, 12e3, 5e3, 9e3, 7e3)


def default_network(n=7, b_scale=10.0, load_scale=0.8):
    """The bundled feeder surrogate.  ``n != 7`` yields a uniform chain."""
    b = np.zeros((n, n))
    if n == 7:
        for a, c, w in _SEVEN_BUS_LINES:
            b[a, c] = b[c, a] = w * b_scale
        lp = np.array(_SEVEN_BUS_LOAD_P)
        lq = np.array(_SEVEN_BUS_LOAD_Q)
    else:
        for a in range(n - 1):
            b[a, a + 1] = b[a + 1, a] = b_scale
        lp = np.linspace(15e3, 25e3, n) if n > 1 else np.array([20e3])
        lq = lp / 3.0
    return LineNetwork(b, lp * load_scale, lq * load_scale)


def droop_references(params, state, d_omega_c=0.0, d_vc=0.0):
    omega_star = params.omega_nom - params.m_p * state.p_filt + d_omega_c
    v_d_star = params.v_nom - params.n_q * state.q_filt + d_vc
    return omega_star, (v_d_star, 0.0)


def electrical_powers(net, states):
    """Instantaneous ``(P, Q)`` arrays for all buses."""
    delta = np.array([s.delta for s in states])
    v_d = np.array([s.v_d for s in states])
    b = net.susceptances
    p = net.s_base * (b * np.sin(delta[:, None] - delta[None, :])).sum(axis=1) + net.load_p
    q = net.q_coef * (b * (v_d[:, None] - v_d[None, :])).sum(axis=1) + net.load_q
    return p, q


def step_plant(params, state, refs, powers, dt):
    if not 0 < dt <= 1e-3:
        raise ValueError(f"dt must lie in (0, 1e-3], got {dt}")
    omega_star, (v_d_star, v_q_star) = refs
    p, q = powers
    nxt = DerState(
        delta=state.delta + (omega_star - params.omega_nom) * dt,
        omega=omega_star,
        v_d=state.v_d + (v_d_star - state.v_d) / params.t_v * dt,
        v_q=state.v_q + (v_q_star - state.v_q) / params.t_v * dt,
        p_filt=state.p_filt + params.omega_f * (p - state.p_filt) * dt,
        q_filt=state.q_filt + params.omega_f * (q - state.q_filt) * dt,
    )
    nxt.e_dvc = v_d_star - nxt.v_d
    nxt.e_qvc = v_q_star - nxt.v_q
    check_state(params, nxt)
    return nxt


def check_state(params, state):
    vals = (state.delta, state.omega, state.v_d, state.v_q, state.p_filt, state.q_filt)
    if not all(math.isfinite(v) for v in vals):
        raise PlantError(f"non-finite DER state: {state}")
    if abs(state.omega - params.omega_nom) >= params.omega_nom:
        raise PlantError(f"frequency left the sanity envelope: omega={state.omega}")
