"""Reception, processing, and crash statistics, and their CSV serialization.

Per-replication collectors live here together with the merge logic the
aggregator uses; merging is associative and order-independent so results
never depend on worker scheduling.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .security import Decision

BIN_WIDTH_M = 10.0


class IncompleteRun(RuntimeError):
    """A replication ended with platoon vehicles still moving."""


class IoFailure(RuntimeError):
    """An output file could not be written; carries the offending path."""


class InvariantViolation(RuntimeError):
    """An internal accounting invariant was broken (names the invariant)."""


class ReceptionRecord:
    """Distance-binned attempt/success counts for PDR curves."""

    def __init__(self, max_range_m: float) -> None:
        self.n_bins = int(math.ceil(max_range_m / BIN_WIDTH_M))
        self.attempts = np.zeros(self.n_bins, dtype=np.int64)
        self.successes = np.zeros(self.n_bins, dtype=np.int64)

    def record(self, distances_m: np.ndarray, ok: np.ndarray) -> None:
        bins = np.minimum(
            (distances_m / BIN_WIDTH_M).astype(np.intp), self.n_bins - 1
        )
        np.add.at(self.attempts, bins, 1)
        np.add.at(self.successes, bins, ok.astype(np.int64))

    def merge(self, other: "ReceptionRecord") -> None:
        if other.n_bins != self.n_bins:
            raise ValueError("cannot merge reception records with different ranges")
        self.attempts += other.attempts
        self.successes += other.successes


def pdr_curve(record: ReceptionRecord) -> list[tuple[float, float]]:
    """(bin center, success probability) for every bin with attempts."""
    out = []
    for i in range(record.n_bins):
        a = int(record.attempts[i])
        if a == 0:
            continue
        out.append(((i + 0.5) * BIN_WIDTH_M, int(record.successes[i]) / a))
    return out


_KINDS = ("long", "short", "plain")


class ProcessingLedger:
    """Per-slot receive/process/drop counts and CPU time for one receiver.

    processed_long counts first-time validations only; cached LONGs are
    ledgered as skipped_cached (their payload is still delivered).  With a
    finite budget, messages that would push the slot's busy time past the
    budget are dropped in arrival order and counted per kind.
    """

    def __init__(self, n_slots: int, slot_ms: float, budget_ms: float = math.inf) -> None:
        self.n_slots = n_slots
        self.slot_ms = slot_ms
        self.budget_ms = budget_ms
        z = lambda: np.zeros(n_slots, dtype=np.int64)
        self.received_long = z()
        self.received_short = z()
        self.received_plain = z()
        self.processed_long = z()
        self.skipped_cached = z()
        self.processed_short = z()
        self.processed_plain = z()
        self.dropped_unvalidated = z()
        self.dropped_budget_long = z()
        self.dropped_budget_short = z()
        self.busy_ms = np.zeros(n_slots, dtype=np.float64)

    def commit(self, slot: int, decision: Decision, cost_ms: float) -> bool:
        """Account one arrival; False means the budget dropped it."""
        if not 0 <= slot < self.n_slots:
            raise ValueError(f"slot {slot} outside ledger range")
        is_long = decision in (Decision.VALIDATE_LONG_AND_PROCESS, Decision.SKIP_CACHED_LONG)
        if is_long:
            self.received_long[slot] += 1
        elif decision is Decision.PROCESS_PLAIN:
            self.received_plain[slot] += 1
        else:
            self.received_short[slot] += 1

        if cost_ms > 0 and self.busy_ms[slot] + cost_ms > self.budget_ms:
            if is_long:
                self.dropped_budget_long[slot] += 1
            else:
                self.dropped_budget_short[slot] += 1
            return False

        self.busy_ms[slot] += cost_ms
        if decision is Decision.VALIDATE_LONG_AND_PROCESS:
            self.processed_long[slot] += 1
        elif decision is Decision.SKIP_CACHED_LONG:
            self.skipped_cached[slot] += 1
        elif decision is Decision.PROCESS_SHORT:
            self.processed_short[slot] += 1
        elif decision is Decision.PROCESS_PLAIN:
            self.processed_plain[slot] += 1
        else:
            self.dropped_unvalidated[slot] += 1
        return True

    def check_conservation(self) -> None:
        lhs = (
            self.processed_long
            + self.skipped_cached
            + self.processed_short
            + self.dropped_unvalidated
            + self.dropped_budget_long
            + self.dropped_budget_short
        )
        rhs = self.received_long + self.received_short
        if not np.array_equal(lhs, rhs):
            slot = int(np.nonzero(lhs != rhs)[0][0])
            raise InvariantViolation(
                "ledger conservation: processed + skipped + dropped != received "
                f"in slot {slot}"
            )
        if np.isfinite(self.budget_ms) and np.any(self.busy_ms > self.budget_ms + 1e-9):
            slot = int(np.nonzero(self.busy_ms > self.budget_ms + 1e-9)[0][0])
            raise InvariantViolation(f"ledger busy_ms exceeds budget in slot {slot}")

    def series(self, kind: str) -> tuple[np.ndarray, np.ndarray]:
        """(received, processed) per-slot series for one kind."""
        if kind == "long":
            return self.received_long, self.processed_long
        if kind == "short":
            return self.received_short, self.processed_short
        if kind == "plain":
            return self.received_plain, self.processed_plain
        raise ValueError(f"unknown kind {kind!r}")


@dataclass
class SlotStats:
    """Pooled per-slot moments for one message kind; merge is additive."""

    n_slots: int = 0
    sum_r: float = 0.0
    sumsq_r: float = 0.0
    sum_p: float = 0.0
    sumsq_p: float = 0.0

    @classmethod
    def from_series(cls, received: np.ndarray, processed: np.ndarray) -> "SlotStats":
        return cls(
            n_slots=len(received),
            sum_r=float(received.sum()),
            sumsq_r=float((received.astype(np.float64) ** 2).sum()),
            sum_p=float(processed.sum()),
            sumsq_p=float((processed.astype(np.float64) ** 2).sum()),
        )

    def merge(self, other: "SlotStats") -> None:
        self.n_slots += other.n_slots
        self.sum_r += other.sum_r
        self.sumsq_r += other.sumsq_r
        self.sum_p += other.sum_p
        self.sumsq_p += other.sumsq_p

    def summary(self) -> tuple[float, float, float, float]:
        """(mu_r, sigma_r, mu_p, sigma_p), population standard deviation."""
        if self.n_slots == 0:
            return 0.0, 0.0, 0.0, 0.0
        mu_r = self.sum_r / self.n_slots
        mu_p = self.sum_p / self.n_slots
        var_r = max(self.sumsq_r / self.n_slots - mu_r * mu_r, 0.0)
        var_p = max(self.sumsq_p / self.n_slots - mu_p * mu_p, 0.0)
        return mu_r, math.sqrt(var_r), mu_p, math.sqrt(var_p)


def processing_stats(ledger: ProcessingLedger) -> dict[str, tuple[float, float, float, float]]:
    """Per-kind (mu_r, sigma_r, mu_p, sigma_p) over the ledger's slots."""
    out = {}
    for kind in _KINDS:
        received, processed = ledger.series(kind)
        out[kind] = SlotStats.from_series(received, processed).summary()
    return out


@dataclass
class CrashReport:
    platoon_size: int
    crashed_ids: list[int] = field(default_factory=list)
    crash_times: dict[int, float] = field(default_factory=dict)
    warned_times: dict[int, float] = field(default_factory=dict)
    complete: bool = True

    def percentage(self) -> float:
        return 100.0 * len(self.crashed_ids) / self.platoon_size


def crash_fraction(report: CrashReport) -> float:
    if not report.complete:
        raise IncompleteRun(
            "platoon still moving at simulation cap; crash fraction undefined"
        )
    return report.percentage()


def fmt6(value) -> str:
    """CSV numeric formatting: 6 significant digits."""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".6g")


PDR_HEADER = ["scheme", "alpha", "lanes", "bin_m", "attempts", "successes", "pdr"]
PROCESSING_HEADER = [
    "scheme", "alpha", "beta", "lanes", "kind", "mu_r", "sigma_r", "mu_p", "sigma_p",
]
CRASHES_HEADER = ["scheme", "alpha", "beta", "lanes", "seed", "crashed_pct"]


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for row in rows:
                writer.writerow([cell if isinstance(cell, str) else fmt6(cell) for cell in row])
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def emit_csv(
    out_dir: str | Path,
    pdr_rows: list[list],
    processing_rows: list[list],
    crash_rows: list[list],
) -> list[Path]:
    """Write the three experiment CSVs; returns the created paths."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create output directory {out}: {exc}") from exc
    targets = [
        (out / "pdr.csv", PDR_HEADER, pdr_rows),
        (out / "processing.csv", PROCESSING_HEADER, processing_rows),
        (out / "crashes.csv", CRASHES_HEADER, crash_rows),
    ]
    for path, header, rows in targets:
        _write_csv(path, header, rows)
    return [t[0] for t in targets]
