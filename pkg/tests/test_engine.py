"""End-to-end engine behavior plus the sweep runner and the CLI contract:
determinism, seeding, window accounting, worker invariance, manifest and
exit codes."""

import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from platoonsim.engine import Simulation, run_replication
from platoonsim.runner import (
    SweepPoint,
    aggregate,
    expand_points,
    parse_sweep_flag,
    run_points,
)

from conftest import make_config, make_config_text


def _messaging_cfg(**kw):
    lines = [f"{k} = {v}" for k, v in kw.items()]
    return make_config(*lines)


def _result_signature(res):
    sig = [
        res.rep_seed,
        res.end_time_s,
        res.complete,
        res.tx_power_dbm,
        res.attempts.tobytes(),
        res.successes.tobytes(),
        tuple(sorted(res.counters.items())),
        tuple(sorted(res.warned_times.items())),
        tuple(sorted(res.crash.crash_times.items())),
        tuple(res.crash.crashed_ids),
    ]
    if res.stats_by_kind is not None:
        for kind in ("long", "short", "plain"):
            s = res.stats_by_kind[kind]
            sig.append((s.n_slots, s.sum_r, s.sumsq_r, s.sum_p, s.sumsq_p))
    return sig


class TestDeterminism:
    def test_same_seed_bit_identical(self, tiny_config):
        a = Simulation(tiny_config, rep_seed=41).run()
        b = Simulation(tiny_config, rep_seed=41).run()
        assert _result_signature(a) == _result_signature(b)

    def test_different_rep_seed_differs(self, tiny_config):
        a = Simulation(tiny_config, rep_seed=41).run()
        b = Simulation(tiny_config, rep_seed=42).run()
        assert a.attempts.tobytes() != b.attempts.tobytes() or (
            a.successes.tobytes() != b.successes.tobytes()
        )

    def test_run_replication_offsets_master_seed(self, tiny_config):
        direct = Simulation(tiny_config, rep_seed=tiny_config.seed + 3).run()
        via_runner = run_replication(tiny_config, 3)
        assert via_runner.rep_seed == tiny_config.seed + 3
        assert _result_signature(direct) == _result_signature(via_runner)


class TestWindowAccounting:
    def test_attempts_only_inside_window(self):
        # with a zero-length window nothing is recorded
        cfg = _messaging_cfg(steady_window_s=0, max_sim_s=2.0)
        res = Simulation(cfg, 1).run()
        assert int(res.attempts.sum()) == 0

    def test_slot_count_matches_window(self, tiny_config):
        res = Simulation(tiny_config, 1).run()
        # 2 s window at 10 Hz = 20 slots per kind
        assert res.stats_by_kind["short"].n_slots == 20

    def test_messaging_disabled_yields_no_reception(self):
        cfg = _messaging_cfg(messaging_enabled="false")
        res = Simulation(cfg, 1).run()
        assert int(res.attempts.sum()) == 0
        assert res.counters.get("frames_sent", 0) == 0


class TestEmergency:
    def _cfg(self, **kw):
        base = dict(
            lanes=4,
            platoon_size=8,
            mean_spacing_m=12,
            warmup_s=1.0,
            steady_window_s=0,
            emergency_enabled="true",
            seed=9,
            max_sim_s=60,
        )
        base.update(kw)
        return _messaging_cfg(**base)

    def test_trigger_fires_at_window_end(self):
        res = Simulation(self._cfg(), 9).run()
        assert res.trigger_time_s == pytest.approx(1.0)
        assert res.complete
        assert res.end_time_s < 60

    def test_head_vehicle_warned_at_trigger(self):
        res = Simulation(self._cfg(), 9).run()
        assert res.warned_times[0] == pytest.approx(1.0)

    def test_emergency_disabled_ends_at_window_close(self):
        cfg = self._cfg(emergency_enabled="false", steady_window_s=2.0)
        res = Simulation(cfg, 9).run()
        assert res.trigger_time_s is None
        assert res.crash.crashed_ids == []
        assert res.end_time_s == pytest.approx(3.0)  # warmup 1 + window 2

    def test_no_messaging_still_propagates_visually(self):
        cfg = self._cfg(messaging_enabled="false")
        res = Simulation(cfg, 9).run()
        assert res.complete
        # brake lights alone warn at least one follower eventually
        assert len(res.warned_times) > 1

    def test_drop_hook_can_blind_receivers(self):
        cfg = self._cfg()
        dropped = []

        def hook(meta, rx):
            dropped.append((meta.seq, rx))
            return True

        res = Simulation(cfg, 9, drop_hook=hook).run()
        assert dropped
        # every radio delivery was suppressed, so only visual warnings remain
        assert res.complete



class TestSweepExpansion:
    BASE = "lanes = 4\nplatoon_size = 6\nmax_sim_s = 2\n"

    def test_parse_sweep_flag(self):
        key, vals = parse_sweep_flag("alpha=1,5,10")
        assert key == "alpha" and vals == ["1", "5", "10"]

    def test_parse_sweep_flag_rejects_garbage(self):
        from platoonsim.config import ConfigError

        with pytest.raises(ConfigError):
            parse_sweep_flag("alpha")
        with pytest.raises(ConfigError):
            parse_sweep_flag("alpha=")

    def test_cartesian_order_and_precedence(self):
        points = expand_points(
            self.BASE + "alpha = 3",
            overrides=["seed = 7"],
            sweeps=[("alpha", ["1", "5"]), ("lanes", ["4", "8"])],
        )
        assert [dict(p.coords) for p in points] == [
            {"alpha": "1", "lanes": "4"},
            {"alpha": "1", "lanes": "8"},
            {"alpha": "5", "lanes": "4"},
            {"alpha": "5", "lanes": "8"},
        ]
        # sweep values override both the base text and --override lines
        assert points[0].config.alpha == 1
        assert points[0].config.seed == 7

    def test_override_beats_base(self):
        (point,) = expand_points(self.BASE, ["platoon_size = 9"], [])
        assert point.config.platoon_size == 9


class TestAggregation:
    def test_workers_do_not_change_rows(self):
        cfg = make_config("replications = 2")
        points = [SweepPoint(coords=(), config=cfg)]
        rows1 = aggregate(points, run_points(points, workers=1))
        rows2 = aggregate(points, run_points(points, workers=2))
        assert rows1 == rows2

    def test_pdr_pools_across_replications(self):
        cfg = make_config("replications = 2")
        points = [SweepPoint(coords=(), config=cfg)]
        results = run_points(points, workers=1)
        pdr_rows, _, _ = aggregate(points, results)
        total = sum(row[4] for row in pdr_rows)
        expected = int(results[0][0].attempts.sum() + results[0][1].attempts.sum())
        assert total == expected

    def test_crash_rows_absent_without_trigger(self):
        points = [SweepPoint(coords=(), config=make_config())]
        _, _, crash_rows = aggregate(points, run_points(points, workers=1))
        assert crash_rows == []


class TestCli:
    def _run(self, tmp_path, *args, config_text=None):
        cfg = tmp_path / "exp.cfg"
        cfg.write_text(config_text if config_text is not None else make_config_text())
        cmd = [sys.executable, "-m", "platoonsim.cli", "--config", str(cfg), *args]
        return subprocess.run(cmd, capture_output=True, text=True, cwd=tmp_path)

    def test_success_writes_csvs_and_manifest(self, tmp_path):
        out = tmp_path / "res"
        proc = self._run(tmp_path, "--out", str(out))
        assert proc.returncode == 0, proc.stderr
        for name in ("pdr.csv", "processing.csv", "crashes.csv", "manifest.json"):
            assert (out / name).exists()
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["status"] == "ok"
        assert manifest["seeds"] == [5]
        assert "platoonsim" in manifest["artifact_versions"]
        assert manifest["config"]["lanes"] == "4"
        with open(out / "pdr.csv") as fh:
            header = next(csv.reader(fh))
        assert header == ["scheme", "alpha", "lanes", "bin_m", "attempts", "successes", "pdr"]

    def test_bad_config_exits_2(self, tmp_path):
        proc = self._run(tmp_path, config_text="lanes = 5\n")
        assert proc.returncode == 2
        assert "config error" in proc.stderr

    def test_missing_config_file_exits_3(self, tmp_path):
        cmd = [
            sys.executable,
            "-m",
            "platoonsim.cli",
            "--config",
            str(tmp_path / "absent.cfg"),
        ]
        proc = subprocess.run(cmd, capture_output=True, text=True, cwd=tmp_path)
        assert proc.returncode == 3

    def test_unwritable_out_exits_3_with_manifest_attempt(self, tmp_path):
        blocker = tmp_path / "blocked"
        blocker.write_text("not a directory")
        proc = self._run(tmp_path, "--out", str(blocker / "sub"))
        assert proc.returncode == 3

    def test_validate_prints_provenance_and_skips_run(self, tmp_path):
        out = tmp_path / "nothing"
        proc = self._run(tmp_path, "--validate", "--out", str(out))
        assert proc.returncode == 0
        assert not out.exists()
        assert "lanes = 4  [user]" in proc.stdout
        assert "gamma_hz = 10  [default]" in proc.stdout
        assert "effective_tx_power_dbm" in proc.stdout

    def test_validate_reports_bad_sweep(self, tmp_path):
        proc = self._run(tmp_path, "--validate", "--sweep", "alpha=0")
        assert proc.returncode == 2

    def test_seed_flag_overrides_config(self, tmp_path):
        out = tmp_path / "res"
        proc = self._run(tmp_path, "--out", str(out), "--seed", "123")
        assert proc.returncode == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["seeds"] == [123]

    def test_sweep_recorded_in_manifest(self, tmp_path):
        out = tmp_path / "res"
        proc = self._run(
            tmp_path, "--out", str(out), "--sweep", "alpha=1,5", "--replications", "1"
        )
        assert proc.returncode == 0, proc.stderr
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["sweep_matrix"] == {"alpha": ["1", "5"]}
        assert manifest["points"] == [{"alpha": "1"}, {"alpha": "5"}]


class TestCsvDeterminismAcrossWorkers:
    def test_emitted_files_bit_identical(self, tmp_path):
        from platoonsim.runner import execute_run

        text = make_config_text("replications = 2")
        outs = []
        for workers in (1, 2):
            out = tmp_path / f"w{workers}"
            execute_run(text, out, [], [], workers)
            outs.append(out)
        for name in ("pdr.csv", "processing.csv", "crashes.csv"):
            assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
