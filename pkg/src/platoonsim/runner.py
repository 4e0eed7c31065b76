"""Sweep expansion, replication scheduling, aggregation, and the manifest.

A run is a Cartesian sweep over config points times N replications.  Each
replication is fully determined by (config point, master seed + index), so
results are identical no matter how many workers execute them; workers only
change wall-clock time.  Aggregation happens after all replications join,
in a fixed order, and the manifest is written exactly once per invocation,
on success and on failure alike.
"""

from __future__ import annotations

import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from itertools import product
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import ConfigError, ExperimentConfig, parse_config, resolved_items
from .engine import RepResult, run_replication
from .metrics import IoFailure, crash_fraction, emit_csv, fmt6

_KIND_ORDER = ("long", "short", "plain")


@dataclass(frozen=True)
class SweepPoint:
    """One resolved config point plus the sweep coordinates that made it."""

    coords: tuple[tuple[str, str], ...]
    config: ExperimentConfig


def parse_sweep_flag(raw: str) -> tuple[str, list[str]]:
    key, sep, values = raw.partition("=")
    if not sep or not key.strip() or not values.strip():
        raise ConfigError(f"malformed --sweep (want key=v1,v2,...): {raw!r}")
    vals = [v.strip() for v in values.split(",") if v.strip()]
    if not vals:
        raise ConfigError(f"--sweep {key} lists no values")
    return key.strip(), vals


def expand_points(
    base_text: str,
    overrides: list[str],
    sweeps: list[tuple[str, list[str]]],
) -> list[SweepPoint]:
    """Cartesian sweep expansion; sweep values win over overrides."""
    points = []
    axes = [[(key, v) for v in vals] for key, vals in sweeps]
    for combo in product(*axes) if axes else [()]:
        lines = [base_text]
        lines.extend(overrides)
        lines.extend(f"{key} = {value}" for key, value in combo)
        config = parse_config("\n".join(lines))
        points.append(SweepPoint(coords=tuple(combo), config=config))
    return points


def _job(args: tuple[ExperimentConfig, int]) -> RepResult:
    config, rep_index = args
    return run_replication(config, rep_index)


def run_points(points: list[SweepPoint], workers: int) -> list[list[RepResult]]:
    """All replications of all points, in deterministic order."""
    jobs = [
        (pi, ri, (point.config, ri))
        for pi, point in enumerate(points)
        for ri in range(point.config.replications)
    ]
    results: list[list[RepResult]] = [
        [None] * point.config.replications for point in points  # type: ignore[list-item]
    ]
    if workers <= 1:
        for pi, ri, arg in jobs:
            results[pi][ri] = _job(arg)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for (pi, ri, _), res in zip(jobs, pool.map(_job, (j[2] for j in jobs))):
                results[pi][ri] = res
    return results


def aggregate(
    points: list[SweepPoint], results: list[list[RepResult]]
) -> tuple[list[list], list[list], list[list]]:
    """Pool replications into the three CSV row sets.

    PDR pools by (scheme, alpha, lanes); processing by (scheme, alpha,
    beta, lanes, kind); crashes keep one row per replication.
    """
    pdr_groups: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}
    proc_groups: dict[tuple, object] = {}
    crash_rows: list[list] = []

    for point, reps in zip(points, results):
        cfg = point.config
        base = (cfg.scheme.value, cfg.alpha, cfg.lanes)
        for rep in reps:
            acc = pdr_groups.get(base)
            if acc is None:
                pdr_groups[base] = (rep.attempts.copy(), rep.successes.copy())
            else:
                acc[0][:] += rep.attempts
                acc[1][:] += rep.successes
            if rep.stats_by_kind is not None:
                for kind in _KIND_ORDER:
                    key = (cfg.scheme.value, cfg.alpha, cfg.beta, cfg.lanes, kind)
                    stat = rep.stats_by_kind[kind]
                    if key in proc_groups:
                        proc_groups[key].merge(stat)
                    else:
                        proc_groups[key] = replace(stat)
            if rep.trigger_time_s is not None:
                crash_rows.append(
                    [
                        cfg.scheme.value,
                        cfg.alpha,
                        cfg.beta,
                        cfg.lanes,
                        rep.rep_seed,
                        fmt6(crash_fraction(rep.crash)),
                    ]
                )

    pdr_rows: list[list] = []
    for key in sorted(pdr_groups):
        attempts, successes = pdr_groups[key]
        for i in range(len(attempts)):
            a = int(attempts[i])
            if a == 0:
                continue
            center = (i + 0.5) * 10.0
            pdr_rows.append(
                list(key) + [fmt6(center), a, int(successes[i]), fmt6(int(successes[i]) / a)]
            )

    proc_rows: list[list] = []
    for key in sorted(proc_groups, key=lambda k: (k[:4], _KIND_ORDER.index(k[4]))):
        mu_r, sg_r, mu_p, sg_p = proc_groups[key].summary()
        proc_rows.append(list(key) + [fmt6(mu_r), fmt6(sg_r), fmt6(mu_p), fmt6(sg_p)])

    return pdr_rows, proc_rows, crash_rows


def write_manifest(out_dir: Path, payload: dict) -> Path:
    path = out_dir / "manifest.json"
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise IoFailure(f"cannot write manifest {path}: {exc}") from exc
    return path


def execute_run(
    base_text: str,
    out_dir: str | Path,
    overrides: list[str],
    sweeps: list[tuple[str, list[str]]],
    workers: int,
) -> None:
    """Run a full sweep and write CSVs plus the manifest.

    The manifest is written exactly once, even when the run fails; errors
    re-raise after it is on disk so the caller can map them to exit codes.
    """
    out = Path(out_dir)
    started = time.time()
    points = expand_points(base_text, overrides, sweeps)
    manifest: dict = {
        "artifact_versions": {
            "platoonsim": __version__,
            "python": sys.version.split()[0],
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "config": dict(resolved_items(points[0].config)),
        "sweep_matrix": {key: vals for key, vals in sweeps},
        "points": [dict(p.coords) for p in points],
        "seeds": [
            points[0].config.seed + i for i in range(points[0].config.replications)
        ],
        "started_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(started)),
    }
    status = "ok"
    error = None
    outputs: list[str] = []
    try:
        results = run_points(points, workers)
        pdr_rows, proc_rows, crash_rows = aggregate(points, results)
        outputs = [str(p) for p in emit_csv(out, pdr_rows, proc_rows, crash_rows)]
    except BaseException as exc:
        status = "error"
        error = f"{type(exc).__name__}: {exc}"
        raise
    finally:
        manifest["status"] = status
        if error is not None:
            manifest["error"] = error
        manifest["outputs"] = outputs
        manifest["ended_at"] = time.strftime(
            "%Y-%m-%dT%H:%M:%SZ", time.gmtime(time.time())
        )
        manifest["wall_clock_s"] = round(time.time() - started, 3)
        if status == "ok":
            write_manifest(out, manifest)
        else:
            try:
                write_manifest(out, manifest)
            except IoFailure:
                pass  # the original failure is the one worth reporting
