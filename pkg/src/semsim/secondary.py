"""Distributed secondary control: consensus input and PI corrections."""
import math
from dataclasses import dataclass

import numpy as np

from .plant import M_P, N_Q, OMEGA_NOM, P_RATING


class ControllerError(ArithmeticError):
    pass


@dataclass(frozen=True)
class SecondaryGains:
    g: float = 1.0
    kp_w: float = 0.1
    ki_w: float = 42.0
    kp_v: float = 0.1
    ki_v: float = 1.5
    omega_nom: float = OMEGA_NOM
    # anti-windup limits; default to 10x rated droop deflection
    clamp_w: float = 10.0 * M_P * P_RATING
    clamp_v: float = 10.0 * N_Q * P_RATING

    def __post_init__(self):
        if not self.g > 0:
            raise ValueError("g must be positive")
        if not (self.ki_w > 0 and self.ki_v > 0):
            raise ValueError("integral gains must be positive")
        if self.kp_w < 0 or self.kp_v < 0:
            raise ValueError("proportional gains must be non-negative")

    @property
    def t_w(self):
        return self.kp_w / self.ki_w

    @property
    def t_v(self):
        return self.kp_v / self.ki_v


@dataclass
class SecondaryState:
    int_w: float = 0.0
    int_v: float = 0.0
    u_p: float = 0.0
    u_q: float = 0.0
    d_omega_c: float = 0.0
    d_vc: float = 0.0


@dataclass(frozen=True)
class SigmaPayload:
    omega: float
    mp_p: float
    nq_q: float

    def as_tuple(self):
        return (self.omega, self.mp_p, self.nq_q)


def consensus_input(g, gains, j, sigma_j, received):
    """``(u_p, u_q)`` for agent ``j`` from whatever neighbour payloads it holds."""
    u_p = 0.0
    u_q = 0.0
    row = g.weights[j]
    for m, sig in received.items():
        a = row[m]
        if a <= 0.0 or sig is None:
            continue
        u_p += a * ((sig.omega - sigma_j.omega) + (sig.mp_p - sigma_j.mp_p))
        u_q += a * (sig.nq_q - sigma_j.nq_q)
    return gains.g * u_p, gains.g * u_q


def consensus_input_batch(weights, g, own, held, valid):
    """Vectorised form for all agents.

    ``own``: (n, 3) local payloads, ``held``: (n, n, 3) where ``held[j, m]`` is
    what ``j`` currently holds from ``m``, ``valid``: (n, n) bool.
    """
    a = np.where(valid, weights, 0.0)
    diff = held - own[:, None, :]
    u_p = g * (a * (diff[:, :, 0] + diff[:, :, 1])).sum(axis=1)
    u_q = g * (a * diff[:, :, 2]).sum(axis=1)
    return u_p, u_q


def correction_step(gains, st, omega_j, u_final, dt, self_coupling=0.0):
    """One discrete PI update of both correction branches.

    ``self_coupling = 0`` is the plain forward-Euler PI.  A positive value
    ``c`` solves the same update implicitly against the local algebraic path
    (the correction moves ``omega_j`` one-for-one within the step and ``c``
    counts how strongly that move feeds back into the error), which keeps the
    proportional path stable when neighbour information arrives late.
    """
    u_pf, u_qf = u_final
    x_w = (gains.omega_nom - omega_j) + u_pf
    if self_coupling:
        c = self_coupling
        x_w = (x_w + c * (st.d_omega_c - st.int_w)) / (1.0 + c * (gains.kp_w + gains.ki_w * dt))
    int_w = _clamp(st.int_w + gains.ki_w * x_w * dt, gains.clamp_w)
    x_v = u_qf
    int_v = _clamp(st.int_v + gains.ki_v * x_v * dt, gains.clamp_v)
    nxt = SecondaryState(
        int_w=int_w,
        int_v=int_v,
        u_p=st.u_p,
        u_q=st.u_q,
        d_omega_c=gains.kp_w * x_w + int_w,
        d_vc=gains.kp_v * x_v + int_v,
    )
    if not all(math.isfinite(v) for v in (nxt.int_w, nxt.int_v, nxt.d_omega_c, nxt.d_vc)):
        raise ControllerError(f"non-finite secondary correction: {nxt}")
    return nxt


def correction_step_batch(gains, int_w, int_v, d_omega_c, omega, u_pf, u_qf, dt, self_coupling):
    """Array form of :func:`correction_step`; returns new (int_w, int_v, dwc, dvc)."""
    x_w = (gains.omega_nom - omega) + u_pf
    c = self_coupling
    x_w = (x_w + c * (d_omega_c - int_w)) / (1.0 + c * (gains.kp_w + gains.ki_w * dt))
    int_w = np.clip(int_w + gains.ki_w * x_w * dt, -gains.clamp_w, gains.clamp_w)
    int_v = np.clip(int_v + gains.ki_v * u_qf * dt, -gains.clamp_v, gains.clamp_v)
    dwc = gains.kp_w * x_w + int_w
    dvc = gains.kp_v * u_qf + int_v
    return int_w, int_v, dwc, dvc


def _clamp(x, lim):
    return min(max(x, -lim), lim)
