"""Pseudonym lifecycle, LONG/SHORT scheduling, and receiver-side validation.

Cryptography is cost-modeled, never computed: verification always succeeds
and a pseudonym is an opaque unique token.  What is modeled exactly is the
scheduling (one LONG every alpha messages, beta consecutive LONGs after a
pseudonym change), the per-receiver validation cache (a sender's certificate
is validated once, on the first LONG seen), and the per-message processing
cost and byte overhead.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field


class Scheme(enum.Enum):
    NO_SECURITY = "NoSecurity"
    BP = "BP"
    HYBRID = "Hybrid"


class Kind(enum.Enum):
    LONG = "long"
    SHORT = "short"
    PLAIN = "plain"


class PayloadClass(enum.Enum):
    BEACON = "beacon"
    WARNING = "warning"


class Decision(enum.Enum):
    VALIDATE_LONG_AND_PROCESS = "ValidateLongAndProcess"
    SKIP_CACHED_LONG = "SkipCachedLong"
    PROCESS_SHORT = "ProcessShort"
    DROP_UNVALIDATED_SHORT = "DropUnvalidatedShort"
    PROCESS_PLAIN = "ProcessPlain"


# decisions that hand the payload to the application
DELIVERING_DECISIONS = frozenset(
    {
        Decision.VALIDATE_LONG_AND_PROCESS,
        Decision.SKIP_CACHED_LONG,
        Decision.PROCESS_SHORT,
        Decision.PROCESS_PLAIN,
    }
)


@dataclass(frozen=True)
class MessageCost:
    sign_ms: float
    verify_ms: float
    overhead_bytes: int

    def __post_init__(self):
        if self.sign_ms < 0 or self.verify_ms < 0 or self.overhead_bytes < 0:
            raise ValueError("message costs must be non-negative")


@dataclass(frozen=True)
class CostTable:
    """Per-(scheme, kind) signing/verification times and byte overheads.

    SHORT costs are shared by BP and Hybrid.  When
    long_includes_short_verify is true, first-time validation of a LONG is
    costed as certificate verification plus one message-signature (SHORT)
    verification; when false, the LONG verify figure is taken as all-in.
    """

    bp_long: MessageCost = MessageCost(1.3, 7.2, 141)
    hybrid_long: MessageCost = MessageCost(54.2, 52.3, 302)
    short: MessageCost = MessageCost(0.5, 3.0, 48)
    plain: MessageCost = MessageCost(0.0, 0.0, 0)
    long_includes_short_verify: bool = True

    def lookup(self, scheme: Scheme, kind: Kind) -> MessageCost:
        if scheme is Scheme.NO_SECURITY or kind is Kind.PLAIN:
            return self.plain
        if kind is Kind.SHORT:
            return self.short
        return self.bp_long if scheme is Scheme.BP else self.hybrid_long

    def validate_long_cost_ms(self, scheme: Scheme) -> float:
        cost = self.lookup(scheme, Kind.LONG).verify_ms
        if self.long_includes_short_verify:
            cost += self.short.verify_ms
        return cost


@dataclass(frozen=True)
class Pseudonym:
    pseudonym_id: int
    owner: int
    activated_at: float
    lifetime: float

    def active_until(self) -> float:
        return self.activated_at + self.lifetime


@dataclass
class SenderSchedule:
    """Counters driving the LONG/SHORT decision; reset on pseudonym change.

    messages_since_last_long is None right after a change: no LONG has been
    sent under the current pseudonym yet, so one is due as soon as the beta
    push (if any) is exhausted.
    """

    messages_since_pseudonym_change: int = 0
    messages_since_last_long: int | None = None

    def reset(self) -> None:
        self.messages_since_pseudonym_change = 0
        self.messages_since_last_long = None


def next_kind(s: SenderSchedule, alpha: int, beta: int) -> Kind:
    """Pick LONG or SHORT for the next emission and advance the counters."""
    if alpha < 1:
        raise ValueError(f"alpha must be >= 1, got {alpha}")
    if beta < 0:
        raise ValueError(f"beta must be >= 0, got {beta}")
    if s.messages_since_pseudonym_change < beta:
        kind = Kind.LONG
    elif s.messages_since_last_long is None or s.messages_since_last_long >= alpha - 1:
        kind = Kind.LONG
    else:
        kind = Kind.SHORT
    s.messages_since_pseudonym_change += 1
    if kind is Kind.LONG:
        s.messages_since_last_long = 0
    else:
        s.messages_since_last_long += 1
    return kind


def avg_packet_size(
    scheme: Scheme, alpha: int, payload_bytes: int = 200, costs: CostTable | None = None
) -> int:
    """Steady-state average packet size in whole bytes (beta pushes excluded)."""
    if alpha < 1:
        raise ValueError(f"alpha must be >= 1, got {alpha}")
    if scheme is Scheme.NO_SECURITY:
        return payload_bytes
    costs = costs or CostTable()
    oh_long = costs.lookup(scheme, Kind.LONG).overhead_bytes
    oh_short = costs.lookup(scheme, Kind.SHORT).overhead_bytes
    avg = payload_bytes + (oh_long + (alpha - 1) * oh_short) / alpha
    return int(math.floor(avg + 0.5))


@dataclass(frozen=True)
class PacketMeta:
    sender: int
    pseudonym_id: int
    kind: Kind
    size_bytes: int
    seq: int
    payload_class: PayloadClass
    sender_position_m: float
    sender_heading: int
    timestamp: float


class ValidationCache:
    """Per-receiver record of validated pseudonyms, keyed to the owner."""

    def __init__(self) -> None:
        self._validated: dict[int, int] = {}

    def __contains__(self, pseudonym_id: int) -> bool:
        return pseudonym_id in self._validated

    def __len__(self) -> int:
        return len(self._validated)

    def add(self, pseudonym_id: int, sender: int) -> bool:
        """Record a validation; False if the pseudonym was already present."""
        if pseudonym_id in self._validated:
            return False
        self._validated[pseudonym_id] = sender
        return True

    def owner(self, pseudonym_id: int) -> int | None:
        return self._validated.get(pseudonym_id)


def decide_packet(
    p: PacketMeta, cache: ValidationCache, scheme: Scheme, costs: CostTable
) -> tuple[Decision, float]:
    """Classify a received packet without touching the cache."""
    if p.kind is Kind.PLAIN:
        return Decision.PROCESS_PLAIN, 0.0
    if p.kind is Kind.LONG:
        if p.pseudonym_id in cache:
            return Decision.SKIP_CACHED_LONG, costs.short.verify_ms
        return Decision.VALIDATE_LONG_AND_PROCESS, costs.validate_long_cost_ms(scheme)
    if p.pseudonym_id in cache:
        return Decision.PROCESS_SHORT, costs.short.verify_ms
    return Decision.DROP_UNVALIDATED_SHORT, 0.0


def commit_decision(p: PacketMeta, cache: ValidationCache, decision: Decision) -> None:
    """Apply a decision's cache side effect."""
    if decision is Decision.VALIDATE_LONG_AND_PROCESS:
        cache.add(p.pseudonym_id, p.sender)


def receiver_decide(
    p: PacketMeta, cache: ValidationCache, scheme: Scheme, costs: CostTable
) -> tuple[Decision, float]:
    """Decide-and-commit: classify the packet and record any validation."""
    decision, cost_ms = decide_packet(p, cache, scheme, costs)
    commit_decision(p, cache, decision)
    return decision, cost_ms


def slot_duration_ms(gamma_hz: float) -> float:
    return 1000.0 / gamma_hz


def slot_feasibility(costs_ms, gamma_hz: float) -> bool:
    """True iff the slot's total processing time fits within the slot."""
    return sum(costs_ms) < slot_duration_ms(gamma_hz)


def max_packets_per_slot(scheme: Scheme, kind: Kind, costs: CostTable, gamma_hz: float) -> float:
    """How many packets of one kind a slot's worth of CPU can verify."""
    verify = costs.lookup(scheme, kind).verify_ms
    if verify == 0.0:
        return math.inf
    return slot_duration_ms(gamma_hz) / verify


class SenderSecurity:
    """Sender-side pseudonym rotation and packet stamping for one vehicle.

    Rotation is lazy: the pseudonym flips to the one scheduled for `now` the
    next time a packet is built, which is the only time a pseudonym is
    observable.  change_phase_s staggers fleets so changes never burst.
    """

    def __init__(
        self,
        vehicle_id: int,
        scheme: Scheme,
        alpha: int,
        beta: int,
        tau_s: float,
        change_phase_s: float,
        payload_bytes: int,
        costs: CostTable,
        cycle_offset: int = 0,
    ) -> None:
        if not 0.0 <= change_phase_s < tau_s:
            raise ValueError("change_phase_s must lie in [0, tau_s)")
        if not 0 <= cycle_offset < alpha:
            raise ValueError("cycle_offset must lie in [0, alpha)")
        self.vehicle_id = vehicle_id
        self.scheme = scheme
        self.alpha = alpha
        self.beta = beta
        self.tau_s = tau_s
        self.payload_bytes = payload_bytes
        self.costs = costs
        self.schedule = SenderSchedule()
        self._change_index = 0
        self.pseudonym = self._make_pseudonym(activated_at=0.0)
        self._next_change_at = change_phase_s if change_phase_s > 0.0 else tau_s
        if cycle_offset:
            # the first pseudonym is already mid-life at t=0 (it rotates at
            # the change phase, not a full lifetime later), so the message
            # cycle starts mid-stride too; offsetting it per vehicle keeps
            # fleets from sending their periodic Longs in the same slot
            self.schedule.messages_since_pseudonym_change = beta + cycle_offset
            self.schedule.messages_since_last_long = cycle_offset

    def _make_pseudonym(self, activated_at: float) -> Pseudonym:
        self._change_index += 1
        pid = self.vehicle_id * 1_000_000 + self._change_index
        return Pseudonym(pid, self.vehicle_id, activated_at, self.tau_s)

    def rotate_pseudonym(self, now: float) -> Pseudonym:
        """Discard the current pseudonym and reset the schedule counters."""
        self.pseudonym = self._make_pseudonym(activated_at=now)
        self.schedule.reset()
        return self.pseudonym

    def _rotate_if_due(self, now: float) -> None:
        while now >= self._next_change_at:
            self.rotate_pseudonym(self._next_change_at)
            self._next_change_at += self.tau_s

    def build_packet(
        self,
        now: float,
        seq: int,
        payload_class: PayloadClass,
        position_m: float,
        heading: int,
    ) -> PacketMeta:
        self._rotate_if_due(now)
        if self.scheme is Scheme.NO_SECURITY:
            kind = Kind.PLAIN
        else:
            kind = next_kind(self.schedule, self.alpha, self.beta)
        size = self.payload_bytes + self.costs.lookup(self.scheme, kind).overhead_bytes
        return PacketMeta(
            sender=self.vehicle_id,
            pseudonym_id=self.pseudonym.pseudonym_id,
            kind=kind,
            size_bytes=size,
            seq=seq,
            payload_class=payload_class,
            sender_position_m=position_m,
            sender_heading=heading,
            timestamp=now,
        )
