"""Broadcast CSMA/CA medium with aggregate-power sensing and SINR capture.

One Channel instance holds the whole per-replication radio state: frames on
air, per-node sensed power, and the MAC deferral machinery.  Everything is
event-driven and vectorized over nodes: state changes only at frame starts,
frame ends, and backoff completions, and each such event updates plain numpy
arrays.  Sensing uses mean (non-faded) powers; fading applies at reception,
one unit-mean Gamma draw per (frame, receiver) pair, derived from a counter
hash so the draw never depends on evaluation order.

MAC rules (broadcast: no ACK, no RTS/CTS, no retransmission):
  - a fresh frame on an idle channel transmits after aifs_us of continued
    idle, with no backoff;
  - a fresh frame on a busy channel draws a uniform backoff in [0, cw_min]
    slots, which decrements only while the channel is idle after AIFS;
  - partial slots are discarded when the channel turns busy mid-countdown;
  - each node holds at most one frame in access plus one waiting: a newer
    packet replaces an older waiting one (a queued warning is never
    displaced by a beacon).
"""

from __future__ import annotations

import math
from bisect import bisect_left
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaincinv

from .radio import RadioParams, airtime_us, dbm_to_mw, pair_uniform, pair_uniform_grid
from .security import Kind, PacketMeta, PayloadClass

_EPS = 1e-12
# registry retention past a frame's end; covers AIFS lookback, a full
# backoff window, and the longest overlap any future frame can have
_RETENTION_S = 0.004
_FADE_GRID = 8192


@dataclass
class FrameOnAir:
    seq: int
    node: int
    tx_ring_x: float
    heading: int
    start_s: float
    end_s: float
    meta: PacketMeta
    pvec_mw: np.ndarray = field(repr=False)


class _IntBuffer:
    """Bulk-drawn uniform integers, consumed one at a time in event order."""

    def __init__(self, rng: np.random.Generator, high_inclusive: int, block: int = 4096):
        self._rng = rng
        self._high = high_inclusive + 1
        self._block = block
        self._buf: np.ndarray = rng.integers(0, self._high, size=block, dtype=np.int64)
        self._i = 0

    def take(self, n: int) -> np.ndarray:
        out = np.empty(n, dtype=np.int64)
        got = 0
        while got < n:
            avail = len(self._buf) - self._i
            if avail == 0:
                self._buf = self._rng.integers(0, self._high, size=self._block, dtype=np.int64)
                self._i = 0
                avail = self._block
            take = min(avail, n - got)
            out[got : got + take] = self._buf[self._i : self._i + take]
            self._i += take
            got += take
        return out


class Channel:
    """Radio medium plus per-node MAC state for one replication."""

    def __init__(
        self,
        params: RadioParams,
        tx_power_dbm: float,
        n_nodes: int,
        n_platoon: int,
        ring_length_m: float,
        mac_rng: np.random.Generator,
        fade_salt: int,
    ) -> None:
        self.params = params
        self.n_nodes = n_nodes
        self.n_platoon = n_platoon
        self.ring_length = ring_length_m
        self.fade_salt = fade_salt

        self._c0_mw = dbm_to_mw(tx_power_dbm - params.reference_loss_db)
        self._exp = params.path_loss_exponent
        self._cs_mw = dbm_to_mw(params.carrier_sense_dbm)
        self._noise_mw = dbm_to_mw(params.noise_floor_dbm)
        self._thr_lin = dbm_to_mw(params.sinr_threshold_db)  # 10^(dB/10), unitless here
        self._aifs_s = params.aifs_us * 1e-6
        self._slot_s = params.slot_time_us * 1e-6
        self._backoff = _IntBuffer(mac_rng, params.cw_min)

        self.ring_x = np.zeros(n_nodes)
        self.headings = np.ones(n_nodes, dtype=np.int8)

        # channel + MAC state, one row per node
        self.sensed_mw = np.zeros(n_nodes)
        self.txing = np.zeros(n_nodes, dtype=bool)
        self.busy = np.zeros(n_nodes, dtype=bool)
        self.pending = np.zeros(n_nodes, dtype=bool)
        self.remaining = np.full(n_nodes, -1, dtype=np.int64)
        self.anchor = np.zeros(n_nodes)
        self.completion = np.full(n_nodes, math.inf)
        self._pend_meta: list[PacketMeta | None] = [None] * n_nodes
        self._waiting: list[PacketMeta | None] = [None] * n_nodes
        # last two transmissions per node, for half-duplex checks
        self.tx_start_cur = np.full(n_nodes, -1.0)
        self.tx_end_cur = np.full(n_nodes, -1.0)
        self.tx_start_prev = np.full(n_nodes, -1.0)
        self.tx_end_prev = np.full(n_nodes, -1.0)

        # frame registry ordered by start time
        self._frames: list[FrameOnAir] = []
        self._starts: list[float] = []
        self._head = 0
        self._max_dur = 0.0

        self._fade_tables = self._build_fade_tables(params)

        self.frames_sent = 0
        self.frames_replaced = 0

    # ---------- fading ----------

    @staticmethod
    def _build_fade_tables(params: RadioParams) -> dict[float, tuple[np.ndarray, np.ndarray]]:
        tables = {}
        for m in {params.nakagami_m_near, params.nakagami_m_mid, params.nakagami_m_far}:
            if m == 1.0:
                continue  # exponential tier is analytic
            u = np.linspace(0.0, 1.0, _FADE_GRID + 1)[1:-1]
            tables[m] = (u, gammaincinv(m, u) / m)
        return tables

    def _fade_quantile(self, u: np.ndarray, dist_m: np.ndarray) -> np.ndarray:
        p = self.params
        out = np.empty_like(u)
        tiers = (
            (dist_m < p.nakagami_near_cutoff_m, p.nakagami_m_near),
            (
                (dist_m >= p.nakagami_near_cutoff_m) & (dist_m < p.nakagami_mid_cutoff_m),
                p.nakagami_m_mid,
            ),
            (dist_m >= p.nakagami_mid_cutoff_m, p.nakagami_m_far),
        )
        for mask, m in tiers:
            if not mask.any():
                continue
            if m == 1.0:
                out[mask] = -np.log1p(-u[mask])
            else:
                grid_u, grid_q = self._fade_tables[m]
                out[mask] = np.interp(u[mask], grid_u, grid_q)
        return out

    def pair_fade(self, frame_seq: int, rx_ids: np.ndarray, dist_m: np.ndarray) -> np.ndarray:
        u = pair_uniform(self.fade_salt, frame_seq, rx_ids)
        return self._fade_quantile(u, dist_m)

    # ---------- geometry / power ----------

    def set_positions(self, ring_x: np.ndarray, headings: np.ndarray) -> None:
        self.ring_x = ring_x
        self.headings = headings

    def _ring_dist(self, x: float, xs: np.ndarray) -> np.ndarray:
        d = np.abs(xs - x) % self.ring_length
        d = np.minimum(d, self.ring_length - d)
        return np.maximum(d, 1.0)

    def _pvec(self, tx_x: float) -> np.ndarray:
        d = self._ring_dist(tx_x, self.ring_x)
        if self._exp == 2.0:
            return self._c0_mw / (d * d)
        return self._c0_mw * d ** (-self._exp)

    # ---------- MAC ----------

    def min_completion(self) -> float:
        return float(self.completion.min()) if self.n_nodes else math.inf

    def _recompute_busy(self, now: float) -> None:
        # only contenders carry countdown state, so restrict the busy-edge
        # bookkeeping to them; rows for other nodes go stale and are
        # refreshed on their next _start_attempt
        idx = np.nonzero(self.pending)[0]
        if idx.size == 0:
            return
        new_busy = (self.sensed_mw[idx] >= self._cs_mw) | self.txing[idx]
        old_busy = self.busy[idx]
        to_busy = idx[new_busy & ~old_busy]
        if to_busy.size:
            past_aifs = to_busy[now > self.anchor[to_busy] + self._aifs_s + _EPS]
            if past_aifs.size:
                consumed = np.floor(
                    (now - self.anchor[past_aifs] - self._aifs_s) / self._slot_s + 1e-9
                ).astype(np.int64)
                consumed = np.clip(consumed, 0, np.maximum(self.remaining[past_aifs], 0))
                self.remaining[past_aifs] -= consumed
            need = to_busy[self.remaining[to_busy] < 0]
            if need.size:
                self.remaining[need] = self._backoff.take(need.size)
            self.completion[to_busy] = math.inf
        to_idle = idx[~new_busy & old_busy]
        if to_idle.size:
            self.anchor[to_idle] = now
            self.completion[to_idle] = (
                now + self._aifs_s + np.maximum(self.remaining[to_idle], 0) * self._slot_s
            )
        self.busy[idx] = new_busy

    @staticmethod
    def _prefer(incumbent: PacketMeta, incoming: PacketMeta) -> PacketMeta:
        # a queued warning outranks a fresh beacon; otherwise newest wins
        if (
            incumbent.payload_class is PayloadClass.WARNING
            and incoming.payload_class is PayloadClass.BEACON
        ):
            return incumbent
        return incoming

    def try_send(self, node: int, meta: PacketMeta, now: float) -> list[FrameOnAir]:
        """Submit one frame; returns any transmissions that begin right now."""
        if self.txing[node]:
            old = self._waiting[node]
            self._waiting[node] = meta if old is None else self._prefer(old, meta)
            if old is not None:
                self.frames_replaced += 1
            return []
        if self.pending[node]:
            old = self._pend_meta[node]
            self._pend_meta[node] = self._prefer(old, meta)
            self.frames_replaced += 1
            return []
        return self._start_attempt(node, meta, now)

    def _start_attempt(self, node: int, meta: PacketMeta, now: float) -> list[FrameOnAir]:
        self.pending[node] = True
        self._pend_meta[node] = meta
        self.remaining[node] = -1
        self.anchor[node] = now
        # the stored row may be stale for a node that was not pending
        self.busy[node] = bool(self.txing[node]) or (
            float(self.sensed_mw[node]) >= self._cs_mw
        )
        if self.busy[node]:
            self.remaining[node] = int(self._backoff.take(1)[0])
            self.completion[node] = math.inf
            return []
        self.completion[node] = now + self._aifs_s
        return []

    def on_mac_event(self, now: float) -> list[FrameOnAir]:
        """Fire due backoff completions; returns the frames that start now."""
        ready = self.pending & ~self.busy & (self.completion <= now + _EPS)
        nodes = np.nonzero(ready)[0]
        started = []
        for node in nodes:
            meta = self._pend_meta[node]
            self.pending[node] = False
            self._pend_meta[node] = None
            self.completion[node] = math.inf
            started.append(self._begin_frame(int(node), meta, now))
        return started

    def _begin_frame(self, node: int, meta: PacketMeta, now: float) -> FrameOnAir:
        dur = airtime_us(meta.size_bytes, self.params) * 1e-6
        frame = FrameOnAir(
            seq=meta.seq,
            node=node,
            tx_ring_x=float(self.ring_x[node]),
            heading=int(self.headings[node]),
            start_s=now,
            end_s=now + dur,
            meta=meta,
            pvec_mw=self._pvec(float(self.ring_x[node])),
        )
        self._frames.append(frame)
        self._starts.append(now)
        self._max_dur = max(self._max_dur, dur)
        self.sensed_mw += frame.pvec_mw
        self.txing[node] = True
        self.tx_start_prev[node] = self.tx_start_cur[node]
        self.tx_end_prev[node] = self.tx_end_cur[node]
        self.tx_start_cur[node] = now
        self.tx_end_cur[node] = frame.end_s
        self._recompute_busy(now)
        self.frames_sent += 1
        return frame

    def on_frame_end(self, frame: FrameOnAir, now: float) -> list[FrameOnAir]:
        """Remove a frame from the air; returns follow-up transmissions."""
        self.sensed_mw -= frame.pvec_mw
        node = frame.node
        self.txing[node] = False
        self._recompute_busy(now)
        started = []
        waiting = self._waiting[node]
        if waiting is not None:
            self._waiting[node] = None
            started.extend(self._start_attempt(node, waiting, now))
        self._prune(now)
        return started

    def _prune(self, now: float) -> None:
        horizon = now - _RETENTION_S
        while self._head < len(self._frames) and self._frames[self._head].end_s < horizon:
            self._head += 1
        if self._head > 4096:
            del self._frames[: self._head]
            del self._starts[: self._head]
            self._head = 0

    def frames_overlapping(self, t0: float, t1: float) -> list[FrameOnAir]:
        lo = bisect_left(self._starts, t0 - self._max_dur - _EPS, lo=self._head)
        hi = bisect_left(self._starts, t1, lo=self._head)
        return [
            f
            for f in self._frames[lo:hi]
            if f.end_s > t0 + _EPS and f.start_s < t1 - _EPS
        ]

    # ---------- reception ----------

    def evaluate_reception(
        self, frame: FrameOnAir, rx_ids: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        """Channel outcome of one frame at the given receivers.

        Returns (distances, success mask).  Success requires the faded
        signal to clear the noise floor and to hold the SINR threshold over
        every overlap segment against the faded sum of interferers, with
        half-duplex receivers failing outright.
        """
        dist = self._ring_dist(frame.tx_ring_x, self.ring_x[rx_ids])
        sig = frame.pvec_mw[rx_ids] * self.pair_fade(frame.seq, rx_ids, dist)

        interferers = [
            g
            for g in self.frames_overlapping(frame.start_s, frame.end_s)
            if g is not frame
        ]
        worst_interf = np.zeros(len(rx_ids))
        if interferers:
            tx_x = np.array([g.tx_ring_x for g in interferers])
            g_dist = np.abs(self.ring_x[rx_ids][None, :] - tx_x[:, None]) % self.ring_length
            g_dist = np.minimum(g_dist, self.ring_length - g_dist)
            g_dist = np.maximum(g_dist, 1.0)
            u = pair_uniform_grid(self.fade_salt, [g.seq for g in interferers], rx_ids)
            power = np.stack([g.pvec_mw[rx_ids] for g in interferers])
            power *= self._fade_quantile(u, g_dist)
            cuts = {frame.start_s, frame.end_s}
            for g in interferers:
                if frame.start_s < g.start_s < frame.end_s:
                    cuts.add(g.start_s)
                if frame.start_s < g.end_s < frame.end_s:
                    cuts.add(g.end_s)
            edges = sorted(cuts)
            for s, e in zip(edges, edges[1:]):
                mid = 0.5 * (s + e)
                active = [
                    i
                    for i, g in enumerate(interferers)
                    if g.start_s < mid < g.end_s
                ]
                if active:
                    seg = power[active].sum(axis=0)
                    np.maximum(worst_interf, seg, out=worst_interf)

        ok = sig >= self._thr_lin * (self._noise_mw + worst_interf)
        ok &= sig >= self._noise_mw
        # half-duplex: a node transmitting at any point during the frame
        # cannot receive it
        for start, end in (
            (self.tx_start_cur, self.tx_end_cur),
            (self.tx_start_prev, self.tx_end_prev),
        ):
            overlap = (start[rx_ids] < frame.end_s - _EPS) & (
                end[rx_ids] > frame.start_s + _EPS
            )
            ok &= ~overlap
        ok &= rx_ids != frame.node
        return dist, ok

    def reception_decision(self, frame: FrameOnAir, rx_id: int) -> bool:
        """Single-receiver convenience wrapper over evaluate_reception."""
        _, ok = self.evaluate_reception(frame, np.array([rx_id], dtype=np.intp))
        return bool(ok[0])
