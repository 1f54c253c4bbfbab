"""Cyber links between agents: latency, dropout, time-sync offsets, hold-last-sample."""
import heapq
import math
from collections import deque
from dataclasses import dataclass

import numpy as np

REPLAY_DEPTH = 1 << 16
_RNG_BLOCK = 1024


@dataclass(frozen=True)
class LinkAttack:
    latency_s: float = 0.0
    dropout_p: float = 0.0
    tsa_offset_samples: int = 0
    sample_period_s: float = 1e-4
    active_window: tuple = (0.0, math.inf)

    def __post_init__(self):
        if not (self.latency_s >= 0 and math.isfinite(self.latency_s)):
            raise ValueError(f"latency_s must be finite and >= 0, got {self.latency_s}")
        if not 0.0 <= self.dropout_p <= 1.0:
            raise ValueError(f"dropout_p must lie in [0, 1], got {self.dropout_p}")
        if not self.sample_period_s > 0:
            raise ValueError("sample_period_s must be positive")
        start, end = self.active_window
        if not end > start:
            raise ValueError(f"empty attack window {self.active_window}")

    def active(self, now_s):
        # window edges snap to the nearest picosecond so grid times such as
        # k * 1e-3 land on the intended side
        start, end = self.active_window
        return start - 1e-12 <= now_s < end - 1e-12

    @property
    def tsa_shift_s(self):
        return self.tsa_offset_samples * self.sample_period_s


def combine_attacks(attacks, now_s):
    """Fold the attacks active at ``now_s`` into one effective attack (or None).

    Latencies add, dropout probabilities compose as independent losses and the
    last active time-sync offset wins.
    """
    live = [a for a in attacks if a.active(now_s)]
    if not live:
        return None
    if len(live) == 1:
        return live[0]
    keep = 1.0
    tsa = None
    for a in live:
        keep *= 1.0 - a.dropout_p
        if a.tsa_offset_samples:
            tsa = a
    return LinkAttack(
        latency_s=sum(a.latency_s for a in live),
        dropout_p=1.0 - keep,
        tsa_offset_samples=tsa.tsa_offset_samples if tsa else 0,
        sample_period_s=tsa.sample_period_s if tsa else 1e-4,
    )


class Packet:
    __slots__ = ("src", "dst", "seq", "stamp_s", "payload", "sent_s")

    def __init__(self, src, dst, seq, stamp_s, payload, sent_s=None):
        self.src = src
        self.dst = dst
        self.seq = seq
        self.stamp_s = stamp_s
        self.payload = payload
        self.sent_s = stamp_s if sent_s is None else sent_s

    def __repr__(self):
        return f"Packet({self.src}->{self.dst} seq={self.seq} stamp={self.stamp_s!r} {self.payload!r})"

    def __eq__(self, other):
        if not isinstance(other, Packet):
            return NotImplemented
        return (self.src, self.dst, self.seq, self.stamp_s, self.payload) == (
            other.src, other.dst, other.seq, other.stamp_s, other.payload)


@dataclass
class ReceiverSlot:
    last_payload: object = None
    last_stamp_s: float = math.nan
    fresh_f: float = math.inf
    received: int = 0


def link_rng(seed, src, dst):
    ss = np.random.SeedSequence(entropy=int(seed) & ((1 << 64) - 1), spawn_key=(int(src), int(dst)))
    return np.random.Generator(np.random.Philox(ss))


class Link:
    """One directed stream ``src -> dst`` with its own queue, RNG and receiver slot."""

    def __init__(self, src, dst, seed=0, replay_depth=REPLAY_DEPTH):
        self.src = src
        self.dst = dst
        self.rng = link_rng(seed, src, dst)
        self._draws = np.empty(0)
        self._draw_pos = 0
        self._queue = []
        self._history = deque(maxlen=replay_depth)
        self.slot = ReceiverSlot()
        self.last_seq = -1
        self.sent = 0
        self.dropped = 0
        self.delivered = 0
        self.replay_underruns = 0
        self.negative_freshness = 0

    def _uniform(self):
        if self._draw_pos >= self._draws.size:
            self._draws = self.rng.random(_RNG_BLOCK)
            self._draw_pos = 0
        x = self._draws[self._draw_pos]
        self._draw_pos += 1
        return x

    def send(self, pkt, now_s, attack=None):
        if pkt.seq <= self.last_seq:
            raise ValueError(f"sequence number {pkt.seq} not above {self.last_seq} on {self.src}->{self.dst}")
        self.last_seq = pkt.seq
        self.sent += 1
        self._history.append((pkt.stamp_s, pkt.payload))
        draw = self._uniform()
        latency = 0.0
        if attack is not None and attack.active(now_s):
            if draw < attack.dropout_p:
                self.dropped += 1
                return False
            latency = attack.latency_s
            if attack.tsa_offset_samples:
                pkt = self._time_shift(pkt, attack.tsa_shift_s)
        heapq.heappush(self._queue, (now_s + latency, pkt.seq, pkt))
        return True

    def _time_shift(self, pkt, shift_s):
        # stamps move back by shift_s; the payload is the recorded sample
        # closest to the forged stamp (older sample on ties, never the future)
        target = pkt.stamp_s - shift_s
        hist = self._history
        best = None
        for stamp, payload in reversed(hist):
            if stamp > target:
                best = (stamp, payload)
                continue
            if best is None or target - stamp <= best[0] - target:
                best = (stamp, payload)
            break
        else:
            if shift_s > 0:
                self.replay_underruns += 1
        return Packet(pkt.src, pkt.dst, pkt.seq, target, best[1], pkt.sent_s)

    def deliver_due(self, now_s):
        out = []
        q = self._queue
        while q and q[0][0] <= now_s:
            _, _, pkt = heapq.heappop(q)
            out.append(pkt)
            slot = self.slot
            slot.last_payload = pkt.payload
            slot.last_stamp_s = pkt.stamp_s
            slot.fresh_f = now_s - pkt.stamp_s
            slot.received += 1
            if slot.fresh_f < 0:
                self.negative_freshness += 1
        self.delivered += len(out)
        return out

    @property
    def pending(self):
        return len(self._queue)


def freshness(slot, now_s):
    """Age of the newest delivered stamp; ``inf`` before the first delivery."""
    if slot.received == 0:
        return math.inf
    return now_s - slot.last_stamp_s


class LinkBank:
    """All links of a run advanced together.

    Every link sends once per boundary of the time grid ``times``, which lets
    queues, RNG draws and replay lookups run as array operations.  For the
    same seed and attack schedule it yields exactly what a set of independent
    :class:`Link` objects driven at those instants would.
    """

    def __init__(self, keys, seed, times, replay_depth=REPLAY_DEPTH):
        self.keys = list(keys)
        self.src = np.array([s for s, _ in self.keys], dtype=np.int64)
        self.dst = np.array([d for _, d in self.keys], dtype=np.int64)
        self.times = np.asarray(times, dtype=np.float64)
        size = len(self.keys)
        self._rngs = [link_rng(seed, s, d) for s, d in self.keys]
        self._draws = np.empty((size, 0))
        self._draw_pos = 0
        self._buckets = {}
        self._hist_sigma = deque(maxlen=replay_depth)
        self.last_payload = np.zeros((size, 3))
        self.last_stamp = np.full(size, math.nan)
        self.received = np.zeros(size, dtype=np.int64)
        self.sent = 0
        self.dropped = 0
        self.delivered = 0
        self.replay_underruns = 0
        self.negative_freshness = 0
        self._undeliverable = 0
        self._next_k = 0

    def __len__(self):
        return len(self.keys)

    def _uniform(self):
        if self._draw_pos >= self._draws.shape[1]:
            self._draws = np.stack([r.random(_RNG_BLOCK) for r in self._rngs])
            self._draw_pos = 0
        col = self._draws[:, self._draw_pos]
        self._draw_pos += 1
        return col

    def step(self, k, sigma, latency, dropout, shift):
        """Send ``sigma[src]`` on every link at boundary ``k`` and deliver what is due.

        ``latency``, ``dropout`` and ``shift`` are per-link arrays for the
        attacks active now (zeros when idle).  Returns the link indices that
        received something.
        """
        if k != self._next_k:
            raise ValueError(f"LinkBank must be stepped on consecutive boundaries (expected {self._next_k}, got {k})")
        self._next_k = k + 1
        now = self.times[k]
        size = len(self.keys)
        self.sent += size
        self._hist_sigma.append(sigma)
        draw = self._uniform()
        keep = ~(draw < dropout)
        self.dropped += size - int(keep.sum())
        if keep.any():
            idx = np.flatnonzero(keep)
            stamp = np.full(idx.size, now)
            payload = sigma[self.src[idx]]
            tsa = shift[idx] != 0
            if tsa.any():
                stamp, payload = self._replay(k, idx, tsa, stamp, payload, shift[idx])
            due_t = now + latency[idx]
            due_k = np.searchsorted(self.times, due_t, side="left")
            for kk in np.unique(due_k):
                if kk >= self.times.size:
                    continue
                sel = due_k == kk
                self._buckets.setdefault(int(kk), []).append(
                    (due_t[sel], np.full(int(sel.sum()), k), idx[sel], stamp[sel], payload[sel]))
            self._undeliverable += int((due_k >= self.times.size).sum())
        return self._deliver(k, now)

    def _replay(self, k, idx, tsa, stamp, payload, shifts):
        hist_t = self.times[k + 1 - len(self._hist_sigma): k + 1]
        stamp = stamp.copy()
        payload = payload.copy()
        for i in np.flatnonzero(tsa):
            target = stamp[i] - shifts[i]
            pos = int(np.searchsorted(hist_t, target, side="right")) - 1
            if pos < 0:
                if shifts[i] > 0:
                    self.replay_underruns += 1
                pos = 0
            elif pos + 1 < hist_t.size and hist_t[pos + 1] - target < target - hist_t[pos]:
                pos += 1
            stamp[i] = target
            payload[i] = self._hist_sigma[pos][self.src[idx[i]]]
        return stamp, payload

    def _deliver(self, k, now):
        parts = self._buckets.pop(k, None)
        if not parts:
            return np.empty(0, dtype=np.int64)
        if len(parts) == 1:
            # one send step: at most one packet per link
            _, _, idx, stamp, payload = parts[0]
            self.last_payload[idx] = payload
            self.last_stamp[idx] = stamp
            self.received[idx] += 1
            self.delivered += idx.size
            self.negative_freshness += int((stamp > now).sum())
            return idx
        due_t, seq, idx, stamp, payload = (np.concatenate(x) for x in zip(*parts))
        order = np.lexsort((seq, due_t))
        idx = idx[order]
        # last delivery per link wins the receiver slot
        rev = idx[::-1]
        links, first = np.unique(rev, return_index=True)
        pick = order[::-1][first]
        self.last_payload[links] = payload[pick]
        self.last_stamp[links] = stamp[pick]
        np.add.at(self.received, idx, 1)
        self.delivered += idx.size
        self.negative_freshness += int((stamp > now).sum())
        return links

    @property
    def pending(self):
        return sum(p[2].size for parts in self._buckets.values() for p in parts) + self._undeliverable
