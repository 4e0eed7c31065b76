"""Vehicle kinematics, driver reaction, brake lights, and crash detection.

Positions are longitudinal meters increasing along the vehicle's heading.
Braking uses the closed-form constant-deceleration solution within each
step, so stopping distance is exact regardless of the step size.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass


class Mode(enum.Enum):
    CRUISING = "Cruising"
    BRAKING = "Braking"
    STOPPED = "Stopped"
    CRASHED = "Crashed"


@dataclass
class VehicleState:
    id: int
    lane: int
    heading: int
    position_m: float
    speed_mps: float
    mode: Mode = Mode.CRUISING
    brake_light: bool = False
    length_m: float = 4.0

    def rear_m(self) -> float:
        return self.position_m - self.length_m


@dataclass
class DriverState:
    reaction_delay_s: float
    warned_at: float | None = None
    braking_from: float | None = None

    def warn(self, now: float) -> bool:
        """Record the first warning; later warnings are ignored."""
        if self.warned_at is not None:
            return False
        self.warned_at = now
        self.braking_from = now + self.reaction_delay_s
        return True


def step_kinematics(v: VehicleState, dt: float, decel_mps2: float) -> VehicleState:
    """Advance one vehicle by dt seconds in place; returns the same object."""
    if dt <= 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    if v.mode is Mode.CRASHED:
        raise ValueError(f"vehicle {v.id} is crashed and cannot be stepped")
    if v.mode is Mode.CRUISING:
        v.position_m += v.speed_mps * dt
        return v
    if v.mode is Mode.STOPPED:
        return v
    # Braking
    t_stop = v.speed_mps / decel_mps2
    if t_stop <= dt:
        v.position_m += v.speed_mps * v.speed_mps / (2.0 * decel_mps2)
        v.speed_mps = 0.0
        v.mode = Mode.STOPPED
    else:
        v.position_m += v.speed_mps * dt - 0.5 * decel_mps2 * dt * dt
        v.speed_mps -= decel_mps2 * dt
    return v


def begin_braking(v: VehicleState) -> None:
    if v.mode is Mode.CRUISING:
        v.mode = Mode.BRAKING
        v.brake_light = True


def driver_update(v: VehicleState, d: DriverState, now: float) -> tuple[VehicleState, DriverState]:
    """Move a warned driver into Braking once the reaction delay has elapsed."""
    if d.braking_from is not None and now >= d.braking_from:
        begin_braking(v)
    return v, d


def visual_warning_check(follower: VehicleState, leader: VehicleState, gap_m: float,
                         visibility_m: float) -> bool:
    """True iff the immediate leader's brake light is visible to the follower."""
    return leader.brake_light and gap_m <= visibility_m


@dataclass(frozen=True)
class CrashEvent:
    follower_id: int
    leader_id: int
    position_m: float


def detect_crashes(ordered: list[VehicleState]) -> list[CrashEvent]:
    """Detect and pin rear-end contacts on one lane.

    `ordered` is front-to-back (descending position).  Both vehicles of an
    overlapping pair become Crashed with the follower repositioned to exact
    contact; the scan runs front-to-back so chain contacts resolve against
    the pinned position.
    """
    events: list[CrashEvent] = []
    for leader, follower in zip(ordered, ordered[1:]):
        if follower.mode is Mode.CRASHED:
            continue  # already pinned at contact; nothing left to detect
        if follower.position_m >= leader.rear_m():
            contact = leader.rear_m()
            follower.position_m = contact
            for v in (leader, follower):
                v.mode = Mode.CRASHED
                v.speed_mps = 0.0
                v.brake_light = True
            events.append(CrashEvent(follower.id, leader.id, contact))
    return events
