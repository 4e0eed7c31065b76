"""Event-driven replication engine.

One Simulation owns one replication: scenario, channel, security state,
mobility, and the event heap.  Events carry (time, seq, code) so ties break
deterministically by insertion order, and every random stream is keyed by
(replication seed, subsystem), which keeps results identical regardless of
how replications are distributed over workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from heapq import heappop, heappush

import numpy as np

from .channel import Channel, FrameOnAir
from .config import ExperimentConfig
from .metrics import CrashReport, ProcessingLedger, ReceptionRecord, SlotStats
from .mobility import (
    DriverState,
    Mode,
    VehicleState,
    detect_crashes,
    driver_update,
    step_kinematics,
    visual_warning_check,
)
from .radio import calibrate_tx_power
from .safety import (
    AppState,
    beacon_tick,
    emergency_trigger,
    on_app_receive,
    warning_tick,
)
from .scenario import Scenario, build_scenario
from .security import (
    DELIVERING_DECISIONS,
    Kind,
    PayloadClass,
    SenderSecurity,
    ValidationCache,
    commit_decision,
    decide_packet,
    slot_duration_ms,
)

_SUB_SCENARIO = 1
_SUB_PHASES = 2
_SUB_REACTIONS = 3
_SUB_MAC = 4

_EV_MOBILITY = 1
_EV_BEACON = 2
_EV_WARN = 3
_EV_FRAME_END = 4
_EV_MAC = 5
_EV_TRIGGER = 6
_EV_END = 7

_MOBILITY_DT_S = 0.01


def subsystem_rng(rep_seed: int, subsystem: int) -> np.random.Generator:
    """Independent Philox stream for one (replication, subsystem) pair."""
    return np.random.Generator(np.random.Philox(key=rep_seed + (subsystem << 64)))


@dataclass
class RepResult:
    rep_seed: int
    end_time_s: float
    complete: bool
    tx_power_dbm: float
    attempts: np.ndarray
    successes: np.ndarray
    stats_by_kind: dict[str, SlotStats] | None
    crash: CrashReport
    trigger_time_s: float | None
    warned_times: dict[int, float]
    counters: dict[str, int] = field(default_factory=dict)


class Simulation:
    """One replication.  Construct, then call run() exactly once."""

    def __init__(
        self,
        config: ExperimentConfig,
        rep_seed: int,
        scenario: Scenario | None = None,
        drop_hook=None,
        validation_gate: bool = True,
    ) -> None:
        self.cfg = config
        self.rep_seed = rep_seed
        self.drop_hook = drop_hook
        # validation_gate=False delivers warnings the security layer would
        # drop as unvalidated (budget drops still drop).  Earlier warnings
        # make receivers relay and brake earlier, so the two worlds diverge
        # after the first such delivery; raw_warning_times records the
        # fixed-trace counterfactual instead.
        self.validation_gate = validation_gate

        if scenario is None:
            scenario = build_scenario(config, subsystem_rng(rep_seed, _SUB_SCENARIO))
        self.scenario = scenario

        specs = scenario.vehicles
        self.n_nodes = len(specs)
        platoon_specs = scenario.platoon()
        self.n_platoon = len(platoon_specs)
        self.stats_rx = (
            config.stats_receiver_index
            if config.stats_receiver_index is not None
            else self.n_platoon // 2
        )

        self.pos0 = np.array([s.position_m for s in specs])
        self.speed0 = np.array([s.speed_mps for s in specs])
        self.headings = np.array([s.heading for s in specs], dtype=np.int8)
        self.is_platoon = np.array([s.is_platoon_member for s in specs], dtype=bool)
        self.platoon_ids = np.nonzero(self.is_platoon)[0].astype(np.intp)

        self.vstates = [
            VehicleState(
                id=s.id,
                lane=s.lane,
                heading=s.heading,
                position_m=s.position_m,
                speed_mps=s.speed_mps,
                length_m=config.vehicle_length_m,
            )
            for s in platoon_specs
        ]
        reactions = subsystem_rng(rep_seed, _SUB_REACTIONS).uniform(
            config.reaction_min_s, config.reaction_max_s, size=self.n_platoon
        )
        self.drivers = [DriverState(reaction_delay_s=float(r)) for r in reactions]

        phase_rng = subsystem_rng(rep_seed, _SUB_PHASES)
        slot_s = slot_duration_ms(config.gamma_hz) / 1000.0
        self.slot_s = slot_s
        self.beacon_phase = phase_rng.uniform(0.0, slot_s, size=self.n_nodes)
        self.warn_phase = (self.beacon_phase + slot_s / 2.0) % slot_s
        change_phase = phase_rng.uniform(0.0, config.tau_s, size=self.n_nodes)
        cycle_offset = phase_rng.integers(0, config.alpha, size=self.n_nodes)

        self.senders = [
            SenderSecurity(
                vehicle_id=i,
                scheme=config.scheme,
                alpha=config.alpha,
                beta=config.beta,
                tau_s=config.tau_s,
                change_phase_s=float(change_phase[i]),
                payload_bytes=config.payload_bytes,
                costs=config.costs,
                cycle_offset=int(cycle_offset[i]),
            )
            for i in range(self.n_nodes)
        ]
        self.apps = [AppState(self.beacon_phase[i], self.warn_phase[i]) for i in range(self.n_platoon)]
        self.caches = [ValidationCache() for _ in range(self.n_platoon)]

        self.tx_power_dbm = calibrate_tx_power(config.radio, config.nominal_range_m)
        self.channel: Channel | None = None
        if config.messaging_enabled:
            self.channel = Channel(
                params=config.radio,
                tx_power_dbm=self.tx_power_dbm,
                n_nodes=self.n_nodes,
                n_platoon=self.n_platoon,
                ring_length_m=scenario.ring_length_m,
                mac_rng=subsystem_rng(rep_seed, _SUB_MAC),
                fade_salt=rep_seed,
            )

        self.w0, self.w1 = config.window()
        self.n_slots = int(round((self.w1 - self.w0) / slot_s))
        self.ledger = ProcessingLedger(
            n_slots=self.n_slots,
            slot_ms=slot_duration_ms(config.gamma_hz),
            budget_ms=config.processing_budget_ms_per_slot,
        )
        self.reception = ReceptionRecord(config.radio.eval_range_m)
        self._budget = config.processing_budget_ms_per_slot
        self._budget_finite = math.isfinite(self._budget)
        self._rx_slot = np.full(self.n_platoon, -1, dtype=np.int64)
        self._rx_busy_ms = np.zeros(self.n_platoon)

        self.trigger_time = config.trigger_time_s()
        self.triggered = False
        self.crash_times: dict[int, float] = {}
        self.warned_times: dict[int, float] = {}
        # first accepted warning per receiver, before the validation gate:
        # what an ungated app would have heard on this exact trace
        self.raw_warning_times: dict[int, float] = {}
        self._warn_scheduled = [False] * self.n_platoon
        self._warn_k = [0] * self.n_platoon
        self._beacon_k = [0] * self.n_nodes

        self._heap: list[tuple[float, int, int, object]] = []
        self._seq = 0
        self._pkt_seq = 0
        self._mac_at = math.inf
        self._ring_x = np.zeros(self.n_nodes)
        self._end_time: float | None = None
        self._done = False

    # ---------- event plumbing ----------

    def _push(self, t: float, code: int, payload: object = None) -> None:
        self._seq += 1
        heappush(self._heap, (t, self._seq, code, payload))

    def _sync_mac(self) -> None:
        ct = self.channel.min_completion()
        if ct < self._mac_at - 1e-12:
            self._push(ct, _EV_MAC)
            self._mac_at = ct

    def _next_pkt_seq(self) -> int:
        self._pkt_seq += 1
        return self._pkt_seq

    # ---------- positions ----------

    def _position_of(self, node: int, now: float) -> float:
        if self.is_platoon[node]:
            return self.vstates[node].position_m
        return float(self.pos0[node] + self.speed0[node] * now)

    def _refresh_positions(self, now: float) -> None:
        x = (self.pos0 + self.speed0 * now) * self.headings
        for i, v in enumerate(self.vstates):
            x[i] = v.position_m * v.heading
        np.mod(x, self.scenario.ring_length_m, out=x)
        self._ring_x = x
        if self.channel is not None:
            self.channel.set_positions(x, self.headings)

    # ---------- run ----------

    def run(self) -> RepResult:
        cfg = self.cfg
        self._refresh_positions(0.0)
        self._push(_MOBILITY_DT_S, _EV_MOBILITY, 1)
        if self.channel is not None:
            for node in range(self.n_nodes):
                self._push(self.beacon_phase[node], _EV_BEACON, node)
        if self.trigger_time is not None:
            self._push(self.trigger_time, _EV_TRIGGER)
        else:
            self._push(self.w1, _EV_END)
        self._push(cfg.max_sim_s, _EV_END)

        while self._heap and not self._done:
            t, _, code, payload = heappop(self._heap)
            if code == _EV_FRAME_END:
                self._on_frame_end(payload, t)
            elif code == _EV_MAC:
                self._mac_at = math.inf
                started = self.channel.on_mac_event(t)
                for f in started:
                    self._push(f.end_s, _EV_FRAME_END, f)
                self._sync_mac()
            elif code == _EV_BEACON:
                self._on_beacon(payload, t)
            elif code == _EV_WARN:
                self._on_warn(payload, t)
            elif code == _EV_MOBILITY:
                self._on_mobility(payload, t)
            elif code == _EV_TRIGGER:
                self._on_trigger(t)
            elif code == _EV_END:
                self._finish(t)
        if self._end_time is None:
            self._finish(0.0)
        return self._result()

    # ---------- handlers ----------

    def _on_beacon(self, node: int, now: float) -> None:
        if self.is_platoon[node]:
            pkt = beacon_tick(self.senders[node], self.vstates[node], now, self._next_pkt_seq())
        else:
            pkt = self.senders[node].build_packet(
                now,
                self._next_pkt_seq(),
                PayloadClass.BEACON,
                self._position_of(node, now),
                int(self.headings[node]),
            )
        for f in self.channel.try_send(node, pkt, now):
            self._push(f.end_s, _EV_FRAME_END, f)
        self._beacon_k[node] += 1
        self._push(self.beacon_phase[node] + self._beacon_k[node] * self.slot_s, _EV_BEACON, node)
        self._sync_mac()

    def _on_warn(self, node: int, now: float) -> None:
        self._warn_scheduled[node] = False
        app = self.apps[node]
        v = self.vstates[node]
        pkt = warning_tick(app, self.senders[node], v, now, self._next_pkt_seq())
        if pkt is not None:
            for f in self.channel.try_send(node, pkt, now):
                self._push(f.end_s, _EV_FRAME_END, f)
            self._sync_mac()
        if app.warning_active and not app.suppressed and v.mode is not Mode.CRASHED:
            self._schedule_warn(node, now)

    def _schedule_warn(self, node: int, now: float) -> None:
        if self._warn_scheduled[node] or self.channel is None:
            return
        k = int(math.floor((now - self.warn_phase[node]) / self.slot_s)) + 1
        k = max(k, self._warn_k[node])
        self._warn_k[node] = k + 1
        self._warn_scheduled[node] = True
        self._push(self.warn_phase[node] + k * self.slot_s, _EV_WARN, node)

    def _on_trigger(self, now: float) -> None:
        self.triggered = True
        emergency_trigger(self.vstates[0], self.apps[0], now, self.cfg.warmup_s)
        self.warned_times[0] = now
        self._schedule_warn(0, now)

    def _on_mobility(self, k: int, now: float) -> None:
        dt = _MOBILITY_DT_S
        if not self.triggered:
            for v in self.vstates:
                v.position_m += v.speed_mps * dt
        else:
            for v, d in zip(self.vstates, self.drivers):
                driver_update(v, d, now)
                if v.mode is not Mode.CRASHED:
                    step_kinematics(v, dt, self.cfg.decel_mps2)
            for ev in detect_crashes(self.vstates):
                for vid in (ev.follower_id, ev.leader_id):
                    self.crash_times.setdefault(vid, now)
            for leader, follower, driver in zip(self.vstates, self.vstates[1:], self.drivers[1:]):
                gap = leader.rear_m() - follower.position_m
                if visual_warning_check(follower, leader, gap, self.cfg.brake_light_visibility_m):
                    if driver.warn(now):
                        self.warned_times.setdefault(follower.id, now)
        self._refresh_positions(now)
        if self.triggered and all(
            v.mode in (Mode.STOPPED, Mode.CRASHED) for v in self.vstates
        ):
            self._finish(now)
            return
        self._push((k + 1) * dt, _EV_MOBILITY, k + 1)

    def _on_frame_end(self, frame: FrameOnAir, now: float) -> None:
        if frame.heading == 1:
            self._receive(frame, now)
        for f in self.channel.on_frame_end(frame, now):
            self._push(f.end_s, _EV_FRAME_END, f)
        self._sync_mac()

    def _receive(self, frame: FrameOnAir, now: float) -> None:
        ch = self.channel
        plat = self.platoon_ids
        d_plat = np.abs(ch.ring_x[plat] - frame.tx_ring_x) % ch.ring_length
        d_plat = np.minimum(d_plat, ch.ring_length - d_plat)
        cand = (d_plat <= self.cfg.radio.eval_range_m) & (plat != frame.node)
        if not cand.any():
            return
        rx_ids = plat[cand]
        dist, ok = ch.evaluate_reception(frame, rx_ids)
        if self.drop_hook is not None:
            for i, rx in enumerate(rx_ids):
                if ok[i] and self.drop_hook(frame.meta, int(rx)):
                    ok[i] = False
        in_window = self.w0 <= now < self.w1
        if in_window:
            self.reception.record(dist, ok)
        deliver = ok & (dist <= self.cfg.nominal_range_m)
        if not deliver.any():
            return
        meta = frame.meta
        scheme, costs = self.cfg.scheme, self.cfg.costs
        if meta.payload_class is PayloadClass.BEACON and not self._budget_finite:
            # with an unlimited budget a beacon's only side effects are the
            # stats receiver's ledger row and first-time LONG validations;
            # skipping the generic per-receiver loop for this (dominant)
            # case changes no observable state
            on_stats = deliver & (rx_ids == self.stats_rx)
            if on_stats.any():
                decision, cost = decide_packet(
                    meta, self.caches[self.stats_rx], scheme, costs
                )
                slot_rel = int((now - self.w0) / self.slot_s) if in_window else -1
                if 0 <= slot_rel < self.n_slots:
                    self.ledger.commit(slot_rel, decision, cost)
                commit_decision(meta, self.caches[self.stats_rx], decision)
            if meta.kind is Kind.LONG:
                pid, snd = meta.pseudonym_id, meta.sender
                for rx in rx_ids[deliver]:
                    self.caches[int(rx)].add(pid, snd)
            return
        for i in np.nonzero(deliver)[0]:
            rx = int(rx_ids[i])
            decision, cost = decide_packet(meta, self.caches[rx], scheme, costs)
            slot_rel = int((now - self.w0) / self.slot_s) if in_window else -1
            if rx == self.stats_rx and 0 <= slot_rel < self.n_slots:
                accepted = self.ledger.commit(slot_rel, decision, cost)
            elif self._budget_finite:
                slot_abs = int(now / self.slot_s)
                if self._rx_slot[rx] != slot_abs:
                    self._rx_slot[rx] = slot_abs
                    self._rx_busy_ms[rx] = 0.0
                if cost > 0.0 and self._rx_busy_ms[rx] + cost > self._budget:
                    accepted = False
                else:
                    self._rx_busy_ms[rx] += cost
                    accepted = True
            else:
                accepted = True
            delivered = accepted and decision in DELIVERING_DECISIONS
            if accepted:
                commit_decision(meta, self.caches[rx], decision)
                if meta.payload_class is PayloadClass.WARNING:
                    self.raw_warning_times.setdefault(rx, now)
                    if not self.validation_gate:
                        delivered = True
            if delivered and meta.payload_class is PayloadClass.WARNING:
                app, driver, v = self.apps[rx], self.drivers[rx], self.vstates[rx]
                was_warned = app.warned
                on_app_receive(app, driver, v, meta, now)
                if not was_warned and app.warned:
                    self.warned_times.setdefault(rx, now)
                if app.warning_active and not app.suppressed and v.mode is not Mode.CRASHED:
                    self._schedule_warn(rx, now)

    def _finish(self, now: float) -> None:
        self._done = True
        self._end_time = now

    # ---------- results ----------

    def _result(self) -> RepResult:
        cfg = self.cfg
        complete = True
        if self.trigger_time is not None:
            complete = self.triggered and all(
                v.mode in (Mode.STOPPED, Mode.CRASHED) for v in self.vstates
            )
        stats = None
        if self.n_slots > 0:
            self.ledger.check_conservation()
            stats = {
                kind: SlotStats.from_series(*self.ledger.series(kind))
                for kind in ("long", "short", "plain")
            }
        crashed = sorted(v.id for v in self.vstates if v.mode is Mode.CRASHED)
        crash = CrashReport(
            platoon_size=self.n_platoon,
            crashed_ids=crashed,
            crash_times=dict(self.crash_times),
            warned_times=dict(self.warned_times),
            complete=complete,
        )
        counters = {"packets_built": self._pkt_seq}
        if self.channel is not None:
            counters["frames_sent"] = self.channel.frames_sent
            counters["frames_replaced"] = self.channel.frames_replaced
        return RepResult(
            rep_seed=self.rep_seed,
            end_time_s=self._end_time if self._end_time is not None else 0.0,
            complete=complete,
            tx_power_dbm=self.tx_power_dbm,
            attempts=self.reception.attempts.copy(),
            successes=self.reception.successes.copy(),
            stats_by_kind=stats,
            crash=crash,
            trigger_time_s=self.trigger_time,
            warned_times=dict(self.warned_times),
            counters=counters,
        )


def run_replication(config: ExperimentConfig, rep_index: int) -> RepResult:
    """Run one replication; the stream seed is config.seed + rep_index."""
    return Simulation(config, config.seed + rep_index).run()
