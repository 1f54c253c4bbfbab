"""Hot numeric kernels.

Every kernel exists twice: a loop form compiled with numba when available and
a vectorised numpy form.  ``SEMSIM_DISABLE_NUMBA=1`` selects the numpy forms;
both must agree to rounding (see ``tests/test_kernels.py``).
"""
import math

import numpy as np

from ._accel import USING_NUMBA, backend_name, njit

# ---------------------------------------------------------------------------
# Symmetric eigenvalues (cyclic Jacobi)
# ---------------------------------------------------------------------------


def _jacobi_eigvals_loop(a, tol, max_sweeps):
    n = a.shape[0]
    a = a.copy()
    for _ in range(max_sweeps):
        off = 0.0
        scale = 0.0
        for i in range(n):
            scale += a[i, i] * a[i, i]
            for j in range(i + 1, n):
                off += a[i, j] * a[i, j]
        if off <= tol * tol * max(scale, 1e-300):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if theta >= 0.0:
                    t = 1.0 / (theta + math.sqrt(theta * theta + 1.0))
                else:
                    t = -1.0 / (-theta + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                for k in range(n):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = c * akp - s * akq
                    a[k, q] = s * akp + c * akq
                for k in range(n):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk - s * aqk
                    a[q, k] = s * apk + c * aqk
    out = np.empty(n)
    for i in range(n):
        out[i] = a[i, i]
    return out


_jacobi_compiled = njit(_jacobi_eigvals_loop)


def jacobi_eigvals(a, tol=1e-14, max_sweeps=100):
    """Eigenvalues of a real symmetric matrix, ascending."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("square matrix required")
    vals = _jacobi_compiled(a, tol, max_sweeps)
    return np.sort(vals)


def power_iteration_max(m, iters=5000, tol=1e-13, seed=0):
    """Dominant eigenvalue of a symmetric positive semidefinite matrix."""
    m = np.asarray(m, dtype=np.float64)
    n = m.shape[0]
    x = np.random.default_rng(seed).standard_normal(n)
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(iters):
        y = m @ x
        norm = np.linalg.norm(y)
        if norm == 0.0:
            return 0.0
        y /= norm
        lam_new = float(y @ m @ y)
        if abs(lam_new - lam) <= tol * max(abs(lam_new), 1.0):
            return lam_new
        lam = lam_new
        x = y
    return lam


# ---------------------------------------------------------------------------
# Plant integration with in-loop downsampling
# ---------------------------------------------------------------------------
#
# state rows (float64, shape (8, n)):
#   0 delta, 1 omega, 2 v_d, 3 v_q, 4 p_filt, 5 q_filt, 6 e_dvc, 7 e_qvc
# param rows (float64, shape (6, n)):
#   0 m_p, 1 n_q, 2 omega_nom, 3 v_nom, 4 omega_f, 5 t_v
# powers (float64, shape (2, n)): last instantaneous P, Q
# ring (float64, shape (2, n, W)); ds (float64, shape (2, n)) last emitted
# counters (int64, shape (2,)): [raw sample index, emissions this call]

STATE_ROWS = ("delta", "omega", "v_d", "v_q", "p_filt", "q_filt", "e_dvc", "e_qvc")
PARAM_ROWS = ("m_p", "n_q", "omega_nom", "v_nom", "omega_f", "t_v")


def _plant_advance_loop(state, params, dwc, dvc, bmat, s_base, q_coef, load_p, load_q,
                        dt, nsteps, powers, ring, fir, d_factor, ds, counters):
    n = state.shape[1]
    w_len = fir.shape[0]
    counters[1] = 0
    for _ in range(nsteps):
        for j in range(n):
            pj = 0.0
            qj = 0.0
            for k in range(n):
                b = bmat[j, k]
                if b != 0.0:
                    pj += b * math.sin(state[0, j] - state[0, k])
                    qj += b * (state[2, j] - state[2, k])
            powers[0, j] = s_base * pj + load_p[j]
            powers[1, j] = q_coef * qj + load_q[j]
        for j in range(n):
            omega_star = params[2, j] - params[0, j] * state[4, j] + dwc[j]
            vd_star = params[3, j] - params[1, j] * state[5, j] + dvc[j]
            state[1, j] = omega_star
            state[0, j] += (omega_star - params[2, j]) * dt
            state[4, j] += params[4, j] * (powers[0, j] - state[4, j]) * dt
            state[5, j] += params[4, j] * (powers[1, j] - state[5, j]) * dt
            state[2, j] += (vd_star - state[2, j]) / params[5, j] * dt
            state[3, j] += (0.0 - state[3, j]) / params[5, j] * dt
            state[6, j] = vd_star - state[2, j]
            state[7, j] = 0.0 - state[3, j]
        idx = counters[0]
        pos = idx % w_len
        for j in range(n):
            ring[0, j, pos] = state[6, j]
            ring[1, j, pos] = state[7, j]
        if idx % d_factor == 0:
            for j in range(n):
                acc_d = 0.0
                acc_q = 0.0
                for w in range(w_len):
                    if idx - w < 0:
                        break
                    p = (idx - w) % w_len
                    acc_d += ring[0, j, p] * fir[w]
                    acc_q += ring[1, j, p] * fir[w]
                ds[0, j] = acc_d
                ds[1, j] = acc_q
            counters[1] += 1
        counters[0] = idx + 1


def _plant_advance_numpy(state, params, dwc, dvc, bmat, s_base, q_coef, load_p, load_q,
                         dt, nsteps, powers, ring, fir, d_factor, ds, counters):
    w_len = fir.shape[0]
    m_p, n_q, omega_nom, v_nom, omega_f, t_v = params
    counters[1] = 0
    for _ in range(nsteps):
        delta = state[0]
        v_d = state[2]
        powers[0] = s_base * (bmat * np.sin(delta[:, None] - delta[None, :])).sum(axis=1) + load_p
        powers[1] = q_coef * (bmat * (v_d[:, None] - v_d[None, :])).sum(axis=1) + load_q
        omega_star = omega_nom - m_p * state[4] + dwc
        vd_star = v_nom - n_q * state[5] + dvc
        state[1] = omega_star
        state[0] += (omega_star - omega_nom) * dt
        state[4] += omega_f * (powers[0] - state[4]) * dt
        state[5] += omega_f * (powers[1] - state[5]) * dt
        state[2] += (vd_star - state[2]) / t_v * dt
        state[3] += (0.0 - state[3]) / t_v * dt
        state[6] = vd_star - state[2]
        state[7] = 0.0 - state[3]
        idx = int(counters[0])
        ring[:, :, idx % w_len] = state[6:8]
        if idx % d_factor == 0:
            lags = np.arange(min(w_len, idx + 1))
            taps = ring[:, :, (idx - lags) % w_len]
            ds[:] = taps @ fir[: lags.size]
            counters[1] += 1
        counters[0] = idx + 1


_plant_advance_compiled = njit(_plant_advance_loop)


def plant_advance(state, params, dwc, dvc, bmat, s_base, q_coef, load_p, load_q,
                  dt, nsteps, powers, ring, fir, d_factor, ds, counters):
    """Advance all DERs ``nsteps`` explicit-Euler steps, in place.

    Each raw inner-loop error sample is pushed into ``ring``; on raw indices
    divisible by ``d_factor`` the FIR-weighted window sum is written to ``ds``.
    ``counters[1]`` returns the number of downsampled emissions.
    """
    impl = _plant_advance_compiled if USING_NUMBA else _plant_advance_numpy
    impl(state, params, dwc, dvc, bmat, float(s_base), float(q_coef), load_p, load_q,
         float(dt), int(nsteps), powers, ring, fir, int(d_factor), ds, counters)


def plant_advance_reference(*args):
    """Numpy path regardless of the backend flag (benchmarks and parity tests)."""
    _plant_advance_numpy(*args)


def plant_advance_loop(*args):
    """Loop path (compiled when numba is active)."""
    _plant_advance_compiled(*args)
