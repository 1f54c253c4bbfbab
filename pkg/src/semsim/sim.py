"""Fixed-step scenario runner.

Per secondary-control boundary: apply due events, publish sigma payloads,
run the channel, assemble consensus inputs, run the sampler (when enabled),
update the PI corrections and emit a trace row; then integrate the plant up
to the next boundary.
"""
import hashlib
import io
import json
import math
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import kernels, semantic
from .channel import LinkBank, combine_attacks
from .secondary import consensus_input_batch, correction_step_batch
from .wire import quantize

DIVERGENCE_LIMIT = 1e6

SIGNALS = (
    "omega", "mp_p", "nq_q", "v_d", "u_p", "u_q", "u_pf", "u_qf",
    "e_dvc", "e_qvc", "e_dd", "e_qd", "e_pphi", "e_qphi",
    "d_omega_c", "d_vc", "fresh_f", "r_p", "r_q", "trigger",
)
WATCH = ("watch_stamp", "watch_omega", "watch_mp_p", "watch_nq_q")


class Divergence(RuntimeError):
    pass


@dataclass
class Trace:
    t: np.ndarray
    data: dict
    n: int
    events: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    watch: dict = None
    aborted: bool = False
    diagnostic: str = ""

    def __getitem__(self, name):
        if name in self.data:
            return self.data[name]
        if self.watch is not None and name in self.watch:
            return self.watch[name]
        raise KeyError(name)

    def __len__(self):
        return self.t.size

    @property
    def event_times(self):
        return sorted({e["t"] for e in self.events if e.get("kind") in ("load", "graph", "attack_on")})

    def header(self):
        cols = ["t"]
        for s in SIGNALS:
            cols += [f"{s}_{j}" for j in range(self.n)]
        if self.watch is not None:
            cols += list(WATCH)
        return cols

    def matrix(self):
        parts = [self.t[:, None]] + [self.data[s] for s in SIGNALS]
        if self.watch is not None:
            parts += [self.watch[w][:, None] for w in WATCH]
        return np.hstack(parts)

    def to_csv(self, path_or_buf):
        buf = io.StringIO()
        buf.write(",".join(self.header()) + "\n")
        np.savetxt(buf, self.matrix(), fmt="%.17g", delimiter=",")
        text = buf.getvalue()
        if hasattr(path_or_buf, "write"):
            path_or_buf.write(text)
        else:
            Path(path_or_buf).write_text(text)
        return text

    def events_jsonl(self):
        return "".join(json.dumps(e, sort_keys=True) + "\n" for e in self.events)

    def write(self, csv_path):
        """Trace CSV plus ``<stem>.events.jsonl`` next to it."""
        csv_path = Path(csv_path)
        self.to_csv(csv_path)
        ev = csv_path.with_suffix(".events.jsonl")
        ev.write_text(self.events_jsonl())
        return csv_path, ev

    def digest(self):
        return hashlib.sha256(self.matrix().tobytes()).hexdigest()

    @classmethod
    def from_csv(cls, path):
        path = Path(path)
        with open(path) as fh:
            header = fh.readline().strip().split(",")
        if not header or header[0] != "t":
            raise ValueError(f"{path}: not a trace file")
        body = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if body.shape[0] == 0:
            raise ValueError(f"{path}: empty trace")
        n = sum(1 for h in header if h.startswith("omega_"))
        cols = {h: i for i, h in enumerate(header)}
        data = {s: body[:, [cols[f"{s}_{j}"] for j in range(n)]] for s in SIGNALS if f"{s}_0" in cols}
        watch = None
        if "watch_stamp" in cols:
            watch = {w: body[:, cols[w]] for w in WATCH}
        events = []
        ev = path.with_suffix(".events.jsonl")
        if ev.exists():
            events = [json.loads(line) for line in ev.read_text().splitlines() if line.strip()]
        meta = next((e for e in events if e.get("kind") == "meta"), {})
        aborted = any(e.get("kind") == "divergence" for e in events)
        return cls(body[:, 0], data, n, events, meta, watch, aborted)


def _link_keys(scn):
    n = scn.n
    union = np.zeros((n, n), dtype=bool)
    for _, g in scn.graphs:
        union |= g.weights > 0
    return [(src, dst) for dst in range(n) for src in range(n) if union[dst, src]]


class _AttackTable:
    """Per-link effective attack arrays, cached per set of active attacks."""

    def __init__(self, scn, keys):
        self.specs = scn.attacks
        self.keys = keys
        self.per_link = []
        for key in keys:
            self.per_link.append([i for i, a in enumerate(scn.attacks) if a.links == "all" or key in a.links])
        self._cache = {}
        size = len(keys)
        self.idle = (np.zeros(size), np.zeros(size), np.zeros(size))

    def at(self, t):
        if not self.specs:
            return self.idle
        flags = tuple(a.attack.active(t) for a in self.specs)
        got = self._cache.get(flags)
        if got is None:
            size = len(self.keys)
            lat, drop, shift = np.zeros(size), np.zeros(size), np.zeros(size)
            for li, ids in enumerate(self.per_link):
                eff = combine_attacks([self.specs[i].attack for i in ids], t)
                if eff is not None:
                    lat[li] = eff.latency_s
                    drop[li] = eff.dropout_p
                    shift[li] = eff.tsa_shift_s
            got = self._cache[flags] = (lat, drop, shift)
        return got


@dataclass
class World:
    """Scenario-level quantities that events change."""

    load_p: np.ndarray
    load_q: np.ndarray
    weights: np.ndarray
    sampler: object
    graph_idx: int = 0
    load_scale: float = 1.0
    log: list = field(default_factory=list)


def apply_event(scn, world, event, now_s):
    """Apply one ``(time, order, kind, arg)`` event at boundary ``now_s``."""
    et, _, kind, arg = event
    entry = {"kind": kind, "t": float(et), "applied_t": float(now_s)}
    if kind == "load":
        world.load_scale = arg
        world.load_p = scn.network.load_p * arg
        world.load_q = scn.network.load_q * arg
        entry["scale"] = float(arg)
    elif kind == "graph":
        world.graph_idx = arg
        world.weights = scn.graphs[arg][1].weights
        entry["index"] = int(arg)
    elif kind in ("attack_on", "attack_off"):
        entry["attack"] = int(arg)
    else:
        raise ValueError(f"unknown event kind {kind!r}")
    if kind != "attack_off":
        semantic.reset_envelope(world.sampler, now_s)
    world.log.append(entry)
    return world


def schedule(scn):
    events = []
    for t, scale in scn.load_events:
        events.append((t, 0, "load", scale))
    for i, (t, _) in enumerate(scn.graphs[1:], start=1):
        events.append((t, 1, "graph", i))
    for i, a in enumerate(scn.attacks):
        start, end = a.attack.active_window
        if start > 0:
            events.append((start, 2, "attack_on", i))
        if math.isfinite(end):
            events.append((end, 3, "attack_off", i))
    events.sort(key=lambda e: (e[0], e[1], e[3]))
    return events


def run(scn, seed=None, compensation=None):
    """Simulate ``scn`` and return its :class:`Trace` (partial if it diverged)."""
    if seed is not None or compensation is not None:
        scn = replace(scn,
                      seed=scn.seed if seed is None else int(seed),
                      compensation_enabled=scn.compensation_enabled if compensation is None else bool(compensation))
    scn.validate()
    n = scn.n
    rows = scn.rows
    sc = scn.sc_period_s
    nsub = scn.substeps
    integrator = scn.mode == "integrator"
    cfg = scn.sampler
    gains = scn.gains
    comp = scn.compensation_enabled
    net = scn.network

    params = np.array([[getattr(p, f) for p in scn.der_params] for f in kernels.PARAM_ROWS])
    m_p, n_q, omega_nom = params[0], params[1], params[2]
    state = np.zeros((8, n))
    state[1] = omega_nom
    state[2] = params[3]
    powers = np.zeros((2, n))
    bmat = np.ascontiguousarray(net.susceptances)
    ups = np.zeros((2, n))
    if integrator:
        ups[:] = scn.integrator_init

    st = semantic.SamplerState.for_config(cfg, n)
    fir = cfg.fir_array
    counters = st.sample_idx
    int_w = np.zeros(n)
    int_v = np.zeros(n)
    dwc = np.zeros(n)
    dvc = np.zeros(n)
    e_pphi = np.zeros(n)
    e_qphi = np.zeros(n)
    fresh_ds = False
    trig_total = 0

    t_arr = np.arange(rows) * sc
    keys = _link_keys(scn)
    bank = LinkBank(keys, scn.seed, t_arr)
    attacks = _AttackTable(scn, keys)
    l_src, l_dst = bank.src, bank.dst
    held = np.zeros((n, n, 3))
    valid = np.zeros((n, n), dtype=bool)
    stamp = np.full((n, n), -math.inf)

    local = [(a.attack, a.local_latency_s) for a in scn.attacks if a.local_latency_s > 0]
    own_hist = deque(maxlen=max([int(round(lat / sc)) for _, lat in local], default=0) + 1)

    world = World(net.load_p.copy(), net.load_q.copy(), scn.graphs[0][1].weights, st)
    world.log.append({"kind": "meta", "t": 0.0, "scenario": scn.name, "seed": int(scn.seed), "n": n,
                      "compensation": bool(comp), "mode": scn.mode, "backend": kernels.backend_name(),
                      "omega_nom": float(omega_nom[0]),
                      "graphs": [[float(gt), g.weights.tolist()] for gt, g in scn.graphs]})
    events = schedule(scn)
    ev_pos = 0

    data = {s: np.zeros((rows, n)) for s in SIGNALS}
    watch = {w: np.full(rows, math.nan) for w in WATCH} if scn.watch_link is not None else None
    done = rows

    for k in range(rows):
        t = t_arr[k]
        while ev_pos < len(events) and events[ev_pos][0] <= t + 1e-9:
            apply_event(scn, world, events[ev_pos], t)
            ev_pos += 1
        weights = world.weights
        if scn.implicit_pi and not integrator:
            coupling = 1.0 + gains.g * weights.sum(axis=1)
        else:
            coupling = 0.0

        # publish sigma = [omega, m_p P, n_q Q]
        if integrator:
            omega = omega_nom
            sigma = np.stack([omega_nom, ups[0], ups[1]], axis=1)
        else:
            omega = omega_nom - m_p * state[4] + dwc
            state[1] = omega
            sigma = np.stack([omega, m_p * state[4], n_q * state[5]], axis=1)
        if scn.codec:
            sigma = _quantize(sigma)

        # channel
        got = bank.step(k, sigma, *attacks.at(t))
        if got.size:
            src, dst = l_src[got], l_dst[got]
            held[dst, src] = bank.last_payload[got]
            valid[dst, src] = True
            stamp[dst, src] = bank.last_stamp[got]

        own_hist.append(sigma)
        own = sigma
        if local:
            d = int(round(sum(lat for a, lat in local if a.active(t)) / sc))
            own = own_hist[-1 - min(d, len(own_hist) - 1)]

        u_p, u_q = consensus_input_batch(weights, gains.g, own, held, valid)
        u_pf, u_qf = u_p, u_q

        fire = None
        if comp:
            if fresh_ds:
                e_pred = semantic.prediction_error(st, u_p, u_q)
                fire = semantic.trigger_check(cfg, st, e_pred, state[6], state[7], t)
                trig_total += int(fire.sum())
                fresh_ds = False
            e_pphi, e_qphi = semantic.feedback(cfg, st)
            u_pf, u_qf = semantic.final_input((u_p, u_q), (e_pphi, e_qphi))
            live = (weights > 0) & valid
            ages = np.where(live, t - stamp, -math.inf).max(axis=1)
            semantic.update_semantics(st, t, np.where(live.any(axis=1), ages, math.inf))

        if integrator:
            ups[0] += sc * u_pf
            ups[1] += sc * u_qf
            dwc, dvc = ups[0].copy(), ups[1].copy()
        elif scn.secondary_enabled:
            int_w, int_v, dwc, dvc = correction_step_batch(
                gains, int_w, int_v, dwc, omega, u_pf, u_qf, sc, coupling)

        row = (omega, sigma[:, 1], sigma[:, 2], state[2], u_p, u_q, u_pf, u_qf,
               state[6], state[7], st.e_ds[0], st.e_ds[1], e_pphi, e_qphi,
               dwc, dvc, st.fresh_f, st.relevance_r[:, 0], st.relevance_r[:, 1])
        for name, val in zip(SIGNALS, row):
            data[name][k] = val
        if fire is not None:
            data["trigger"][k] = fire
        if watch is not None:
            w_src, w_dst = scn.watch_link
            if valid[w_dst, w_src]:
                watch["watch_stamp"][k] = stamp[w_dst, w_src]
                watch["watch_omega"][k], watch["watch_mp_p"][k], watch["watch_nq_q"][k] = held[w_dst, w_src]

        bad = _divergence(state, omega, omega_nom, sigma, dwc, dvc)
        if bad:
            done = k + 1
            world.log.append({"kind": "divergence", "t": float(t), "detail": bad})
            break

        if k + 1 < rows and not integrator:
            kernels.plant_advance(state, params, dwc, dvc, bmat, net.s_base, net.q_coef,
                                  world.load_p, world.load_q, scn.dt_s, nsub, powers,
                                  st.ring, fir, cfg.downsample_d, st.e_ds, counters)
            if counters[1] > 0:
                fresh_ds = True
                st.have_ds = True

    aborted = done < rows
    world.log.append({
        "kind": "summary", "t": float(t_arr[done - 1]), "rows": int(done),
        "sent": int(bank.sent), "dropped": int(bank.dropped), "delivered": int(bank.delivered),
        "lost_in_flight": int(bank.pending), "triggers": int(trig_total),
        "replay_underruns": int(bank.replay_underruns),
        "negative_freshness": int(bank.negative_freshness),
    })
    if aborted:
        data = {s: v[:done] for s, v in data.items()}
        t_arr = t_arr[:done]
        if watch is not None:
            watch = {w: v[:done] for w, v in watch.items()}
    diag = world.log[-2]["detail"] if aborted else ""
    return Trace(t_arr, data, n, world.log, world.log[0], watch, aborted, diag)


def _quantize(sigma):
    return np.vectorize(quantize, otypes=[float])(sigma)


def _divergence(state, omega, omega_nom, sigma, dwc, dvc):
    dev = np.abs(omega - omega_nom)
    peak = np.abs(np.concatenate((state.ravel(), sigma[:, 1:].ravel(), dwc, dvc))).max()
    if not (np.isfinite(peak) and np.isfinite(dev).all()):
        return "non-finite state"
    if (dev >= omega_nom).any():
        return f"frequency left the sanity envelope (deviation {dev.max():.6g} rad/s)"
    peak = max(peak if peak <= DIVERGENCE_LIMIT else _natural_peak(state, sigma, dwc, dvc), dev.max())
    if peak > DIVERGENCE_LIMIT:
        return f"state magnitude {peak:.6g} exceeded {DIVERGENCE_LIMIT:g}"
    return ""


def _natural_peak(state, sigma, dwc, dvc):
    # filtered powers are in W/VAr and may legitimately be large; judge them
    # through their droop-scaled counterparts in sigma instead
    keep = np.delete(state, (4, 5), axis=0)
    return np.abs(np.concatenate((keep.ravel(), sigma[:, 1:].ravel(), dwc, dvc))).max()
