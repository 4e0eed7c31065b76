"""Safety application: beaconing, emergency warnings, and the suppression rule.

A braking platoon vehicle relays warnings until it hears a warning from a
vehicle behind it, at which point that vehicle is the better relay and this
one goes quiet (beacons continue).  Positions are heading-aligned, so
"behind" is simply a smaller position.
"""

from __future__ import annotations

from dataclasses import dataclass

from .mobility import DriverState, Mode, VehicleState, begin_braking
from .security import PacketMeta, PayloadClass, SenderSecurity


@dataclass
class AppState:
    beacon_phase_s: float
    warning_phase_s: float
    warning_active: bool = False
    suppressed: bool = False
    warned: bool = False


def beacon_tick(sec: SenderSecurity, v: VehicleState, now: float, seq: int) -> PacketMeta:
    """One beacon per slot per vehicle, in any mode (wrecks keep beaconing)."""
    return sec.build_packet(now, seq, PayloadClass.BEACON, v.position_m, v.heading)


def warning_tick(
    app: AppState, sec: SenderSecurity, v: VehicleState, now: float, seq: int
) -> PacketMeta | None:
    """One warning per slot while active and unsuppressed; None otherwise."""
    if not app.warning_active or app.suppressed:
        return None
    if v.mode is Mode.CRASHED:
        return None
    return sec.build_packet(now, seq, PayloadClass.WARNING, v.position_m, v.heading)


def emergency_trigger(v1: VehicleState, app: AppState, t0: float, warmup_s: float) -> None:
    """The platoon head brakes with no reaction delay and starts warning."""
    if t0 < warmup_s:
        raise ValueError(f"emergency at t={t0:g}s precedes end of warm-up ({warmup_s:g}s)")
    begin_braking(v1)
    app.warned = True
    app.warning_active = True


def on_app_receive(
    app: AppState,
    driver: DriverState,
    receiver: VehicleState,
    packet: PacketMeta,
    now: float,
) -> None:
    """Deliver a validated packet to the application layer.

    Only warnings change state: the receiver's driver is warned (once) and
    the receiver starts relaying; a warning heard from behind additionally
    suppresses this receiver's own warning transmissions.
    """
    if packet.payload_class is not PayloadClass.WARNING:
        return
    if not app.warned:
        app.warned = True
        app.warning_active = True
        driver.warn(now)
    if packet.sender_position_m < receiver.position_m:
        app.suppressed = True
