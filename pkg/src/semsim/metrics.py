"""Post-hoc evaluation of traces."""
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

NOT_CONVERGED = math.inf
SENTINEL_TEXT = "did not converge"


class TraceTooShort(ValueError):
    pass


@dataclass(frozen=True)
class ObjectiveBands:
    band_frac: float = 0.02
    # absolute floor so that a trace sitting at numerical noise counts as settled
    abs_floor: float = 1e-9
    tail_frac: float = 0.1

    def __post_init__(self):
        if not 0 < self.band_frac < 0.5:
            raise ValueError("band_frac must lie in (0, 0.5)")


@dataclass
class MetricReport:
    tc_o1_s: float
    tc_o2_s: float
    sse_o1: float
    sse_o2: float
    sse_o1_freq: float
    sse_o1_share: float
    trigger_rate: float
    triggers: int
    lyapunov_violations: int
    aoi_mean: float
    aoi_max: float
    from_event_s: float

    def to_dict(self):
        out = {}
        for k, v in asdict(self).items():
            if isinstance(v, float) and math.isinf(v) and k.startswith("tc_"):
                out[k] = SENTINEL_TEXT
            elif isinstance(v, float) and not math.isfinite(v):
                out[k] = None
            else:
                out[k] = v
        return out

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _omega_nom(trace):
    return float(trace.meta.get("omega_nom", 314.15))


def spread(x):
    return x.max(axis=1) - x.min(axis=1)


def _rel_spread(x):
    mean = np.abs(x.mean(axis=1))
    return spread(x) / np.where(mean > 1e-12, mean, 1.0)


def objective_signals(trace):
    """``(o1, o2)``: column stacks of the signals each objective drives to rest."""
    o1 = np.column_stack([np.abs(trace["omega"] - _omega_nom(trace)), spread(trace["mp_p"])])
    o2 = spread(trace["nq_q"])[:, None]
    return o1, o2


def default_event(trace):
    times = trace.event_times
    return times[-1] if times else 0.0


def _settle(t, sig, sel, tail, bands):
    if not sel.any():
        return 0.0
    ss = sig[tail].mean(axis=0)
    dev = np.abs(sig - ss)
    scale = dev[sel].max(axis=0)
    band = np.maximum(bands.band_frac * scale, bands.abs_floor)
    bad = ((dev > band) & sel[:, None]).any(axis=1)
    if bad[tail].any():
        return NOT_CONVERGED
    idx = np.flatnonzero(bad)
    if idx.size == 0:
        return 0.0
    return float(t[idx[-1] + 1] - t[sel][0])


def convergence_time(trace, bands=ObjectiveBands(), from_event_s=None):
    """Settling time of O1 and O2 after ``from_event_s``.

    The band is ``band_frac`` of each signal's largest excursion from its
    final-window mean after the event.  A run that aborted, or whose final
    window is still outside the band, gets the ``NOT_CONVERGED`` sentinel.
    """
    if from_event_s is None:
        from_event_s = default_event(trace)
    t = trace.t
    if getattr(trace, "aborted", False):
        return NOT_CONVERGED, NOT_CONVERGED
    if t.size == 0 or t[-1] < from_event_s + 1.0 - 1e-9:
        raise TraceTooShort(f"trace must extend >= 1 s past t={from_event_s}")
    sel = t >= from_event_s - 1e-9
    span = t[-1] - from_event_s
    tail = t >= t[-1] - bands.tail_frac * span - 1e-9
    o1, o2 = objective_signals(trace)
    return _settle(t, o1, sel, tail, bands), _settle(t, o2, sel, tail, bands)


def steady_state_error(trace, bands=ObjectiveBands()):
    """``(sse_o1, sse_o2, freq part, sharing part)`` averaged over the final window."""
    t = trace.t
    if t.size < 10:
        raise TraceTooShort("need at least 10 rows for a final window")
    tail = t >= t[-1] - bands.tail_frac * (t[-1] - t[0]) - 1e-9
    freq = np.abs(trace["omega"] - _omega_nom(trace)).max(axis=1)
    share = _rel_spread(trace["mp_p"])
    o2 = _rel_spread(trace["nq_q"])
    f = float(freq[tail].mean())
    s = float(share[tail].mean())
    return f + s, float(o2[tail].mean()), f, s


def trigger_stats(trace, t0=None, t1=None):
    """``(rate, histogram)``: triggers per agent per SC update and inter-trigger gap counts."""
    t = trace.t
    sel = np.ones(t.size, dtype=bool)
    if t0 is not None:
        sel &= t >= t0 - 1e-9
    if t1 is not None:
        sel &= t <= t1 + 1e-9
    trig = trace["trigger"][sel] > 0.5
    if trig.size == 0:
        return 0.0, {}
    rate = float(trig.mean())
    gaps = []
    for j in range(trig.shape[1]):
        idx = np.flatnonzero(trig[:, j])
        gaps.extend(np.diff(idx).tolist())
    vals, counts = np.unique(np.array(gaps, dtype=np.int64), return_counts=True)
    return rate, {int(v): int(c) for v, c in zip(vals, counts)}


def aoi_stats(trace):
    f = trace["fresh_f"]
    f = f[np.isfinite(f)]
    if f.size == 0:
        return math.nan, math.nan
    return float(f.mean()), float(f.max())


def _graph_schedule(trace):
    graphs = trace.meta.get("graphs")
    if not graphs:
        return None
    return [(float(t), np.array(w)) for t, w in graphs]


def disagreement(trace, weights_at=None):
    """V(k) = sum_j sum_{m in N_j} |Y_m - Y_j|^2 with Y = (d_omega_c, d_vc)."""
    ys = np.stack([trace["d_omega_c"], trace["d_vc"]], axis=2)
    sched = weights_at or _graph_schedule(trace)
    n = ys.shape[1]
    if sched is None:
        sched = [(0.0, np.ones((n, n)) - np.eye(n))]
    out = np.empty(trace.t.size)
    for i, (t0, w) in enumerate(sched):
        t1 = sched[i + 1][0] if i + 1 < len(sched) else math.inf
        sel = (trace.t >= t0 - 1e-9) & (trace.t < t1 - 1e-9)
        if not sel.any():
            continue
        y = ys[sel]
        diff = y[:, None, :, :] - y[:, :, None, :]
        out[sel] = ((w > 0)[None, :, :] * (diff ** 2).sum(axis=3)).sum(axis=(1, 2))
    return out


def lyapunov_monitor(trace, tol=1e-9, transient_s=0.1, weights_at=None):
    """Count strict increases of V above ``tol`` outside post-event windows."""
    for col in ("d_omega_c", "d_vc"):
        try:
            trace[col]
        except KeyError:
            raise ValueError(f"trace lacks the {col} column") from None
    v = disagreement(trace, weights_at)
    t = trace.t
    inc = np.diff(v) > tol
    quiet = np.ones(t.size - 1, dtype=bool)
    for e in trace.event_times:
        quiet &= ~((t[1:] >= e - 1e-9) & (t[1:] < e + transient_s - 1e-9))
    return int((inc & quiet).sum())


def lyapunov_from_series(v, tol=1e-9):
    """Violation count for a bare V(k) series (no event masking)."""
    v = np.asarray(v, dtype=np.float64)
    return int((np.diff(v) > tol).sum())


def report(trace, bands=ObjectiveBands(), from_event_s=None):
    if from_event_s is None:
        from_event_s = default_event(trace)
    try:
        tc1, tc2 = convergence_time(trace, bands, from_event_s)
    except TraceTooShort:
        tc1 = tc2 = NOT_CONVERGED
    if len(trace.t) >= 10:
        sse1, sse2, f, s = steady_state_error(trace, bands)
    else:
        sse1 = sse2 = f = s = math.nan
    rate, _ = trigger_stats(trace)
    aoi_mean, aoi_max = aoi_stats(trace)
    return MetricReport(
        tc_o1_s=tc1, tc_o2_s=tc2, sse_o1=sse1, sse_o2=sse2, sse_o1_freq=f, sse_o1_share=s,
        trigger_rate=rate, triggers=int((trace["trigger"] > 0.5).sum()),
        lyapunov_violations=lyapunov_monitor(trace), aoi_mean=aoi_mean, aoi_max=aoi_max,
        from_event_s=float(from_event_s),
    )
