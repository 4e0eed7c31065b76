"""Experiment configuration: flat key=value documents with strict validation.

Later assignments win, which is how CLI --override and --sweep are applied
(appended lines).  Unknown keys are rejected so typos cannot silently fall
back to defaults.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

from .radio import RadioParams
from .security import CostTable, MessageCost, Scheme


class ConfigError(ValueError):
    """Base class for configuration rejections (CLI exit code 2)."""


class MalformedKey(ConfigError):
    pass


class OutOfRange(ConfigError):
    pass


class InconsistentPair(ConfigError):
    pass


class MissingRequiredKey(ConfigError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    lanes: int
    mean_spacing_m: float = 20.0
    mean_speed_mps: float = 22.22
    scheme: Scheme = Scheme.NO_SECURITY
    alpha: int = 1
    beta: int = 0
    tau_s: float = 60.0
    gamma_hz: float = 10.0
    payload_bytes: int = 200
    nominal_range_m: float = 200.0
    warmup_s: float = 60.0
    decel_mps2: float = 4.0
    reaction_min_s: float = 0.75
    reaction_max_s: float = 1.5
    brake_light_visibility_m: float = 20.0
    vehicle_length_m: float = 4.0
    platoon_size: int = 100
    seed: int = 1
    replications: int = 1
    processing_budget_ms_per_slot: float = math.inf
    # experiment-mode knobs: the emergency fires at warmup_s + steady_window_s
    # when enabled; reception/processing statistics are collected over
    # [warmup_s, warmup_s + steady_window_s) either way
    messaging_enabled: bool = True
    emergency_enabled: bool = True
    steady_window_s: float = 0.0
    max_sim_s: float = 600.0
    stats_receiver_index: int | None = None
    radio: RadioParams = field(default_factory=RadioParams)
    costs: CostTable = field(default_factory=CostTable)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.lanes not in (4, 8):
            raise OutOfRange(f"lanes must be 4 or 8, got {self.lanes}")
        if self.alpha < 1:
            raise OutOfRange(f"alpha must be >= 1, got {self.alpha}")
        if self.beta < 0:
            raise OutOfRange(f"beta must be >= 0, got {self.beta}")
        positive = [
            ("mean_spacing_m", self.mean_spacing_m),
            ("mean_speed_mps", self.mean_speed_mps),
            ("tau_s", self.tau_s),
            ("gamma_hz", self.gamma_hz),
            ("payload_bytes", self.payload_bytes),
            ("nominal_range_m", self.nominal_range_m),
            ("warmup_s", self.warmup_s),
            ("decel_mps2", self.decel_mps2),
            ("reaction_min_s", self.reaction_min_s),
            ("brake_light_visibility_m", self.brake_light_visibility_m),
            ("vehicle_length_m", self.vehicle_length_m),
            ("max_sim_s", self.max_sim_s),
            ("processing_budget_ms_per_slot", self.processing_budget_ms_per_slot),
        ]
        for name, value in positive:
            if not value > 0:
                raise OutOfRange(f"{name} must be > 0, got {value}")
        if self.steady_window_s < 0:
            raise OutOfRange(f"steady_window_s must be >= 0, got {self.steady_window_s}")
        if self.platoon_size < 1:
            raise OutOfRange(f"platoon_size must be >= 1, got {self.platoon_size}")
        if self.seed < 0:
            raise OutOfRange(f"seed must be >= 0, got {self.seed}")
        if self.replications < 1:
            raise OutOfRange(f"replications must be >= 1, got {self.replications}")
        if self.tau_s * self.gamma_hz < self.alpha:
            raise InconsistentPair(
                f"tau_s*gamma_hz = {self.tau_s * self.gamma_hz:g} < alpha = {self.alpha}; "
                "a pseudonym lifetime must span at least one full certificate period"
            )
        if self.reaction_min_s > self.reaction_max_s:
            raise InconsistentPair(
                f"reaction_min_s = {self.reaction_min_s} > reaction_max_s = {self.reaction_max_s}"
            )
        if self.stats_receiver_index is not None and not (
            0 <= self.stats_receiver_index < self.platoon_size
        ):
            raise OutOfRange(
                f"stats_receiver_index must be in [0, {self.platoon_size}), "
                f"got {self.stats_receiver_index}"
            )
        r = self.radio
        radio_positive = [
            ("radio.bitrate_mbps", r.bitrate_mbps),
            ("radio.slot_time_us", r.slot_time_us),
            ("radio.path_loss_exponent", r.path_loss_exponent),
            ("radio.nakagami_m_near", r.nakagami_m_near),
            ("radio.nakagami_m_mid", r.nakagami_m_mid),
            ("radio.nakagami_m_far", r.nakagami_m_far),
            ("radio.eval_range_m", r.eval_range_m),
        ]
        for name, value in radio_positive:
            if not value > 0:
                raise OutOfRange(f"{name} must be > 0, got {value}")
        if r.preamble_us < 0 or r.aifs_us < 0 or r.cw_min < 0 or r.mac_header_bytes < 0:
            raise OutOfRange("radio timing/header fields must be >= 0")
        if not r.nakagami_near_cutoff_m < r.nakagami_mid_cutoff_m:
            raise InconsistentPair(
                f"radio.nakagami_near_cutoff_m = {r.nakagami_near_cutoff_m} must be < "
                f"radio.nakagami_mid_cutoff_m = {r.nakagami_mid_cutoff_m}"
            )

    def stats_receiver(self) -> int:
        """Platoon index (0-based) of the measurement receiver."""
        if self.stats_receiver_index is not None:
            return self.stats_receiver_index
        return self.platoon_size // 2

    def trigger_time_s(self) -> float | None:
        if not self.emergency_enabled:
            return None
        return self.warmup_s + self.steady_window_s

    def window(self) -> tuple[float, float]:
        """Measurement window [start, end) for reception/processing stats."""
        return self.warmup_s, self.warmup_s + self.steady_window_s


def _cast_bool(value: str) -> bool:
    v = value.lower()
    if v in ("true", "yes", "on", "1"):
        return True
    if v in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def _cast_scheme(value: str) -> Scheme:
    for s in Scheme:
        if value.lower() == s.value.lower():
            return s
    names = ", ".join(s.value for s in Scheme)
    raise ValueError(f"scheme must be one of {names}, got {value!r}")


def _cast_budget(value: str) -> float:
    if value.lower() == "unlimited":
        return math.inf
    return float(value)


# key -> (caster, default); None default means "required"
_TOP_SCHEMA: dict[str, tuple] = {
    "lanes": (int, None),
    "mean_spacing_m": (float, 20.0),
    "mean_speed_mps": (float, 22.22),
    "scheme": (_cast_scheme, Scheme.NO_SECURITY),
    "alpha": (int, 1),
    "beta": (int, 0),
    "tau_s": (float, 60.0),
    "gamma_hz": (float, 10.0),
    "payload_bytes": (int, 200),
    "nominal_range_m": (float, 200.0),
    "warmup_s": (float, 60.0),
    "decel_mps2": (float, 4.0),
    "reaction_min_s": (float, 0.75),
    "reaction_max_s": (float, 1.5),
    "brake_light_visibility_m": (float, 20.0),
    "vehicle_length_m": (float, 4.0),
    "platoon_size": (int, 100),
    "seed": (int, 1),
    "replications": (int, 1),
    "processing_budget_ms_per_slot": (_cast_budget, math.inf),
    "messaging_enabled": (_cast_bool, True),
    "emergency_enabled": (_cast_bool, True),
    "steady_window_s": (float, 0.0),
    "max_sim_s": (float, 600.0),
    "stats_receiver_index": (int, None),
}

_RADIO_CASTS = {
    "bitrate_mbps": float,
    "preamble_us": float,
    "slot_time_us": float,
    "aifs_us": float,
    "cw_min": int,
    "mac_header_bytes": int,
    "tx_power_dbm": float,
    "path_loss_exponent": float,
    "reference_loss_db": float,
    "noise_floor_dbm": float,
    "sinr_threshold_db": float,
    "carrier_sense_dbm": float,
    "nakagami_m_near": float,
    "nakagami_m_mid": float,
    "nakagami_m_far": float,
    "nakagami_near_cutoff_m": float,
    "nakagami_mid_cutoff_m": float,
    "eval_range_m": float,
}

_COST_GROUPS = ("bp_long", "hybrid_long", "short", "plain")
_COST_FIELDS = {"sign_ms": float, "verify_ms": float, "overhead_bytes": int}


def _parse_lines(text: str) -> dict[str, str]:
    assignments: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise MalformedKey(f"line {lineno}: expected key = value, got {raw.strip()!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key or not value:
            raise MalformedKey(f"line {lineno}: expected key = value, got {raw.strip()!r}")
        assignments[key] = value  # later assignment wins
    return assignments


def _known_key(key: str) -> bool:
    if key in _TOP_SCHEMA:
        return True
    if key.startswith("radio."):
        return key[len("radio.") :] in _RADIO_CASTS
    if key == "cost.long_includes_short_verify":
        return True
    if key.startswith("cost."):
        parts = key.split(".")
        return len(parts) == 3 and parts[1] in _COST_GROUPS and parts[2] in _COST_FIELDS
    return False


def parse_config_ex(text: str) -> tuple[ExperimentConfig, dict[str, str]]:
    """Parse a config document; returns (config, provenance per key)."""
    assignments = _parse_lines(text)
    for key in assignments:
        if not _known_key(key):
            raise MalformedKey(f"unknown key {key!r}")

    values: dict[str, object] = {}
    provenance: dict[str, str] = {}
    for key, (caster, default) in _TOP_SCHEMA.items():
        if key in assignments:
            try:
                values[key] = caster(assignments[key])
            except ValueError as exc:
                raise MalformedKey(f"key {key!r}: {exc}") from None
            provenance[key] = "user"
        else:
            if default is None and key == "lanes":
                raise MissingRequiredKey("lanes is required (4 or 8)")
            values[key] = default
            provenance[key] = "default"

    radio_kwargs: dict[str, object] = {}
    for field_name, caster in _RADIO_CASTS.items():
        key = f"radio.{field_name}"
        if key in assignments:
            try:
                radio_kwargs[field_name] = caster(assignments[key])
            except ValueError as exc:
                raise MalformedKey(f"key {key!r}: {exc}") from None
            provenance[key] = "user"
        else:
            provenance[key] = "default"

    cost_kwargs: dict[str, object] = {}
    base = CostTable()
    for group in _COST_GROUPS:
        overrides = {}
        for field_name, caster in _COST_FIELDS.items():
            key = f"cost.{group}.{field_name}"
            if key in assignments:
                try:
                    overrides[field_name] = caster(assignments[key])
                except ValueError as exc:
                    raise MalformedKey(f"key {key!r}: {exc}") from None
                provenance[key] = "user"
            else:
                provenance[key] = "default"
        if overrides:
            try:
                cost_kwargs[group] = dataclasses.replace(getattr(base, group), **overrides)
            except ValueError as exc:
                raise OutOfRange(f"cost.{group}: {exc}") from None
    key = "cost.long_includes_short_verify"
    if key in assignments:
        try:
            cost_kwargs["long_includes_short_verify"] = _cast_bool(assignments[key])
        except ValueError as exc:
            raise MalformedKey(f"key {key!r}: {exc}") from None
        provenance[key] = "user"
    else:
        provenance[key] = "default"

    values["radio"] = RadioParams(**radio_kwargs)
    values["costs"] = CostTable(**cost_kwargs) if cost_kwargs else base
    config = ExperimentConfig(**values)
    return config, provenance


def parse_config(text: str) -> ExperimentConfig:
    config, _ = parse_config_ex(text)
    return config


def _format_value(value: object) -> str:
    if isinstance(value, Scheme):
        return value.value
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "auto"
    if isinstance(value, float):
        if math.isinf(value):
            return "unlimited"
        return f"{value:g}"
    return str(value)


def resolved_items(config: ExperimentConfig) -> list[tuple[str, str]]:
    """All config keys with their effective values, in schema order."""
    items = [(key, _format_value(getattr(config, key))) for key in _TOP_SCHEMA]
    for field_name in _RADIO_CASTS:
        items.append((f"radio.{field_name}", _format_value(getattr(config.radio, field_name))))
    for group in _COST_GROUPS:
        cost: MessageCost = getattr(config.costs, group)
        for field_name in _COST_FIELDS:
            items.append((f"cost.{group}.{field_name}", _format_value(getattr(cost, field_name))))
    items.append(
        (
            "cost.long_includes_short_verify",
            _format_value(config.costs.long_includes_short_verify),
        )
    )
    return items
