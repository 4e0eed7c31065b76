"""Radio layer: log-distance path loss, Nakagami-m fading, and frame airtime.

Power bookkeeping is done in dBm at the interface and in linear milliwatts
inside the reception math.  Fading is modeled as a unit-mean Gamma power
multiplier whose shape depends on the sender-receiver distance (strong
line-of-sight close in, Rayleigh-like far out).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaincinv


class DegenerateDistance(ValueError):
    """Sender and receiver coincide; no finite path loss exists."""


@dataclass(frozen=True)
class RadioParams:
    bitrate_mbps: float = 6.0
    preamble_us: float = 40.0
    slot_time_us: float = 13.0
    aifs_us: float = 58.0
    cw_min: int = 15
    mac_header_bytes: int = 36
    # tx_power_dbm=None means "calibrate from the nominal range" (see
    # calibrate_tx_power); a configured value overrides the calibration.
    tx_power_dbm: float | None = None
    path_loss_exponent: float = 2.0
    reference_loss_db: float = 47.86  # 1 m free-space loss at 5.9 GHz
    noise_floor_dbm: float = -99.0
    sinr_threshold_db: float = 10.0
    carrier_sense_dbm: float = -96.0
    # distance-dependent fading shape: m_near below near_cutoff_m,
    # m_mid up to mid_cutoff_m, m_far beyond
    nakagami_m_near: float = 3.0
    nakagami_m_mid: float = 1.5
    nakagami_m_far: float = 1.0
    nakagami_near_cutoff_m: float = 50.0
    nakagami_mid_cutoff_m: float = 150.0
    # radius within which receptions are evaluated and binned; beyond it the
    # success probability is negligible at the calibrated power
    eval_range_m: float = 450.0


def dbm_to_mw(dbm):
    return 10.0 ** (np.asarray(dbm, dtype=float) / 10.0)


def mw_to_dbm(mw):
    return 10.0 * np.log10(mw)


def airtime_us(size_bytes: int, params: RadioParams) -> float:
    """On-air duration of one broadcast frame, preamble included."""
    if size_bytes <= 0:
        raise ValueError(f"size_bytes must be positive, got {size_bytes}")
    return params.preamble_us + 8.0 * (size_bytes + params.mac_header_bytes) / params.bitrate_mbps


def mean_rx_power_dbm(tx_power_dbm: float, distance_m, params: RadioParams):
    """Mean received power under log-distance path loss.

    Distances below the 1 m reference are clamped to 1 m (near-field);
    a zero distance is degenerate and raised to the caller.
    """
    d = np.asarray(distance_m, dtype=float)
    if np.any(d <= 0.0):
        raise DegenerateDistance("distance must be > 0 m")
    d = np.maximum(d, 1.0)
    out = tx_power_dbm - params.reference_loss_db - 10.0 * params.path_loss_exponent * np.log10(d)
    return float(out) if np.isscalar(distance_m) else out


def nakagami_shape(distance_m, params: RadioParams):
    """Fading shape m for a given sender-receiver distance."""
    d = np.asarray(distance_m, dtype=float)
    out = np.where(
        d < params.nakagami_near_cutoff_m,
        params.nakagami_m_near,
        np.where(d < params.nakagami_mid_cutoff_m, params.nakagami_m_mid, params.nakagami_m_far),
    )
    return float(out) if np.isscalar(distance_m) else out


def fading_sample(distance_m, rng: np.random.Generator, params: RadioParams):
    """Unit-mean Gamma power multiplier with distance-dependent shape."""
    m = nakagami_shape(distance_m, params)
    return rng.gamma(shape=m, scale=1.0 / m)


def calibrate_tx_power(params: RadioParams, nominal_range_m: float) -> float:
    """Transmit power placing the 50% reception point at the nominal range.

    Solves P(fade * mean_snr >= threshold) = 1/2 for an isolated pair at
    nominal_range_m: the median fading multiplier at that distance must hit
    the SINR threshold exactly.
    """
    if params.tx_power_dbm is not None:
        return params.tx_power_dbm
    m = nakagami_shape(nominal_range_m, params)
    median_fade = gammaincinv(m, 0.5) / m
    path_loss = params.reference_loss_db + 10.0 * params.path_loss_exponent * math.log10(nominal_range_m)
    return (
        params.noise_floor_dbm
        + params.sinr_threshold_db
        - 10.0 * math.log10(median_fade)
        + path_loss
    )


# splitmix64 constants, used to derive one independent uniform per
# (frame, receiver) pair so the fading draw does not depend on the order in
# which pairs are evaluated
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    x = (x + _GOLDEN).astype(np.uint64)
    x ^= x >> np.uint64(30)
    x *= _MIX1
    x ^= x >> np.uint64(27)
    x *= _MIX2
    x ^= x >> np.uint64(31)
    return x


def pair_uniform(salt: int, frame_seq: int, rx_ids) -> np.ndarray:
    """One uniform in (0, 1) per (frame, receiver) pair, order-independent."""
    ids = np.asarray(rx_ids, dtype=np.uint64)
    with np.errstate(over="ignore"):
        h = _splitmix64(np.uint64(salt & 0xFFFFFFFFFFFFFFFF) ^ (np.uint64(frame_seq) * _GOLDEN))
        h = _splitmix64(h ^ (ids * _MIX1))
    return ((h >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def pair_uniform_grid(salt: int, frame_seqs, rx_ids) -> np.ndarray:
    """pair_uniform for many frames at once; row i equals pair_uniform(salt,
    frame_seqs[i], rx_ids) bit for bit."""
    seqs = np.asarray(frame_seqs, dtype=np.uint64)
    ids = np.asarray(rx_ids, dtype=np.uint64)
    with np.errstate(over="ignore"):
        h = _splitmix64(np.uint64(salt & 0xFFFFFFFFFFFFFFFF) ^ (seqs * _GOLDEN))
        h = _splitmix64(h[:, None] ^ (ids * _MIX1)[None, :])
    return ((h >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def pair_fading(salt: int, frame_seq: int, rx_ids, distances_m, params: RadioParams) -> np.ndarray:
    """Unit-mean Gamma fading per (frame, receiver) pair via inverse CDF."""
    u = pair_uniform(salt, frame_seq, rx_ids)
    m = nakagami_shape(distances_m, params)
    return gammaincinv(m, u) / m
