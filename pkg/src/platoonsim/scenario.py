"""Initial vehicle placement on a multi-lane ring road.

The road is a ring: the platoon occupies one lane, every other lane is
filled with background traffic around the full circumference, so each
platoon vehicle sees a representative radio neighborhood with no boundary
effects.  Positions are heading-aligned longitudinal meters; the ring
coordinate of a vehicle is (heading * position) mod ring length.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ExperimentConfig

# extra ring margin past the nominal radio range on both sides of the platoon
RING_MARGIN_M = 100.0
SPEED_SIGMA_MPS = 2.0
SPEED_TRUNC_SIGMAS = 3.0
# gaps are clamped so vehicles never start overlapping
MIN_CLEARANCE_M = 1.0


@dataclass(frozen=True)
class VehicleSpec:
    id: int
    lane: int
    heading: int
    position_m: float
    speed_mps: float
    is_platoon_member: bool
    platoon_index: int | None


@dataclass(frozen=True)
class Scenario:
    vehicles: list[VehicleSpec]
    ring_length_m: float
    platoon_lane: int = 0

    def platoon(self) -> list[VehicleSpec]:
        return [v for v in self.vehicles if v.is_platoon_member]


def _truncated_normal_speed(rng: np.random.Generator, mean: float) -> float:
    lo = mean - SPEED_TRUNC_SIGMAS * SPEED_SIGMA_MPS
    hi = mean + SPEED_TRUNC_SIGMAS * SPEED_SIGMA_MPS
    while True:
        s = rng.normal(mean, SPEED_SIGMA_MPS)
        if lo <= s <= hi:
            return max(s, 0.1)


def _draw_spacing(rng: np.random.Generator, mean_spacing: float, min_spacing: float) -> float:
    return max(rng.exponential(mean_spacing), min_spacing)


def build_scenario(config: ExperimentConfig, rng: np.random.Generator) -> Scenario:
    """Deterministic placement for one replication given its RNG stream."""
    min_spacing = config.vehicle_length_m + MIN_CLEARANCE_M
    n = config.platoon_size

    # platoon column, V_1 (index 1) at the head = largest position
    spacings = [
        _draw_spacing(rng, config.mean_spacing_m, min_spacing) for _ in range(n - 1)
    ]
    extent = sum(spacings)
    ring_length = extent + 2.0 * (config.nominal_range_m + RING_MARGIN_M)

    vehicles: list[VehicleSpec] = []
    pos = extent
    for i in range(n):
        vehicles.append(
            VehicleSpec(
                id=i,
                lane=0,
                heading=1,
                position_m=pos,
                speed_mps=config.mean_speed_mps,
                is_platoon_member=True,
                platoon_index=i + 1,
            )
        )
        if i < n - 1:
            pos -= spacings[i]

    # background lanes: first half of the lanes share the platoon's heading
    next_id = n
    for lane in range(1, config.lanes):
        heading = 1 if lane < config.lanes // 2 else -1
        x = _draw_spacing(rng, config.mean_spacing_m, min_spacing)
        while x < ring_length - min_spacing:
            speed = _truncated_normal_speed(rng, config.mean_speed_mps)
            # position increases along heading; ring coordinate is
            # (heading * position) mod ring_length, so seed it at ring x
            position = x if heading == 1 else -x
            vehicles.append(
                VehicleSpec(
                    id=next_id,
                    lane=lane,
                    heading=heading,
                    position_m=position,
                    speed_mps=speed,
                    is_platoon_member=False,
                    platoon_index=None,
                )
            )
            next_id += 1
            x += _draw_spacing(rng, config.mean_spacing_m, min_spacing)

    return Scenario(vehicles=vehicles, ring_length_m=ring_length, platoon_lane=0)


def ring_distance(x1: float, x2: float, ring_length: float) -> float:
    d = abs(x1 - x2) % ring_length
    return min(d, ring_length - d)
