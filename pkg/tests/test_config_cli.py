"""Tests for scenario configuration, the CLI commands, and output determinism."""

import json
from pathlib import Path

import pytest

from twolink import ScenarioConfig, preset
from twolink.cli import (
    UsageError,
    cmd_certify,
    cmd_invariant_set,
    cmd_simulate,
    cmd_sweep_region,
    cmd_throughput_curve,
    main,
)


def tiny_sweep_config(variant="paper-infinite") -> ScenarioConfig:
    cfg = preset(variant)
    cfg.d_lo_grid = [0.2, 0.9]
    cfg.c_bar_grid = [0.3, 0.8]
    cfg.sim = {"horizon": 3000, "window_count": 5}
    cfg.seed = 11
    return cfg


class TestScenarioConfig:
    def test_round_trip_identity(self):
        cfg = preset("paper-finite")
        again = ScenarioConfig.from_json(cfg.to_json())
        assert again == cfg
        assert ScenarioConfig.from_json(again.to_json()) == again

    def test_unknown_fields_rejected(self):
        data = preset("paper-infinite").to_dict()
        data["typo_field"] = 1
        with pytest.raises(ValueError, match="unknown config fields"):
            ScenarioConfig.from_dict(data)

    def test_grids_must_ascend(self):
        data = preset("paper-infinite").to_dict()
        data["d_lo_grid"] = [0.5, 0.2]
        with pytest.raises(ValueError, match="ascending"):
            ScenarioConfig.from_dict(data)

    def test_unknown_cert_option_rejected(self):
        data = preset("paper-infinite").to_dict()
        data["cert"] = {"not_a_knob": 1}
        with pytest.raises(ValueError, match="cert options"):
            ScenarioConfig.from_dict(data)

    def test_presets_build_specs(self):
        inf = preset("paper-infinite").network_spec()
        fin = preset("paper-finite").network_spec()
        assert inf.variant == "infinite_buffer"
        assert fin.variant == "finite_buffer_with_upstream"
        assert fin.links["e1"].jam_density == pytest.approx(2.4)
        with pytest.raises(ValueError):
            preset("nope")

    def test_axis_overrides(self):
        cfg = preset("paper-infinite")
        spec = cfg.network_spec(d_lo=0.4, c_bar=0.9)
        assert spec.demand.lo == 0.4
        assert spec.compliance.c_bar == 0.9


class TestCertifyCommand:
    def test_thm1_stable_report(self, tmp_path):
        cfg = preset("paper-infinite")  # alpha = 0.7, c_bar = 0.79
        cert = cmd_certify(cfg, "thm1", tmp_path)
        assert cert.verdict == "stable"
        doc = json.loads((tmp_path / "certificate_thm1.json").read_text())
        assert doc["verdict"] == "stable"
        assert doc["theta"] is not None and doc["gamma"] > 0

    def test_variant_mode_mismatch(self, tmp_path):
        with pytest.raises(UsageError):
            cmd_certify(preset("paper-finite"), "thm1", tmp_path)
        with pytest.raises(UsageError):
            cmd_certify(preset("paper-infinite"), "thm2", tmp_path)

    def test_thm2_on_finite_preset(self, tmp_path):
        cert = cmd_certify(preset("paper-finite"), "thm2", tmp_path)
        assert cert.verdict == "stable"  # alpha = 0.7 on the invariant domain


class TestSweepRegion:
    def test_rows_and_alpha_consistency(self, tmp_path):
        cfg = tiny_sweep_config()
        rows = cmd_sweep_region(cfg, tmp_path)
        assert len(rows) == 4
        for row in rows:
            assert row["alpha"] == 0.5 * (row["d_lo"] + cfg.demand_hi)  # exact identity
            assert row["error"] == ""
            assert row["verdict_cert"] in ("stable", "unstable", "inconclusive")
            assert row["verdict_sim"] in ("stable", "unstable", "inconclusive")
        text = (tmp_path / "sweep_region.csv").read_text()
        assert text.splitlines()[0].startswith("d_lo,c_bar,alpha")

    def test_byte_identical_across_runs_and_workers(self, tmp_path):
        cfg = tiny_sweep_config()
        cmd_sweep_region(cfg, tmp_path / "a", workers=1)
        cmd_sweep_region(cfg, tmp_path / "b", workers=1)
        cmd_sweep_region(cfg, tmp_path / "c", workers=2)
        a = (tmp_path / "a" / "sweep_region.csv").read_bytes()
        assert a == (tmp_path / "b" / "sweep_region.csv").read_bytes()
        assert a == (tmp_path / "c" / "sweep_region.csv").read_bytes()
        sa = (tmp_path / "a" / "sweep_region.config.json").read_bytes()
        assert sa == (tmp_path / "c" / "sweep_region.config.json").read_bytes()

    def test_empty_grid_is_usage_error(self, tmp_path):
        cfg = tiny_sweep_config()
        cfg.d_lo_grid = []
        with pytest.raises(UsageError):
            cmd_sweep_region(cfg, tmp_path)

    def test_finite_variant_rows(self, tmp_path):
        cfg = tiny_sweep_config("paper-finite")
        cfg.d_lo_grid = [0.2]
        cfg.c_bar_grid = [0.8]
        rows = cmd_sweep_region(cfg, tmp_path)
        assert rows[0]["verdict_cert"] == "stable"
        assert rows[0]["time_avg_x_e0"] > 0

    def test_point_failure_recorded_in_row(self, tmp_path):
        # c_bar = 1.5 is outside the compliance support: that point errors
        # in-row while the rest of the sweep completes
        cfg = tiny_sweep_config()
        cfg.d_lo_grid = [0.2]
        cfg.c_bar_grid = [0.3, 1.5]
        rows = cmd_sweep_region(cfg, tmp_path)
        assert len(rows) == 2
        assert rows[0]["error"] == ""
        assert rows[1]["verdict_cert"] == "error"
        assert "compliance" in rows[1]["error"]
        csv_text = (tmp_path / "sweep_region.csv").read_text()
        assert "error" in csv_text.splitlines()[2]

    def test_rows_carry_runtimes_but_files_do_not(self, tmp_path):
        cfg = tiny_sweep_config()
        result = cmd_sweep_region(cfg, tmp_path)
        assert all(r["runtime_ms"] > 0 for r in result)
        assert result.metadata["tool"] == "twolink"
        assert "runtime" not in (tmp_path / "sweep_region.csv").read_text()


class TestThroughputCurve:
    def test_infinite_curve(self, tmp_path):
        cfg = preset("paper-infinite")
        cfg.c_bar_grid = [0.0, 0.79]
        rows = cmd_throughput_curve(cfg, tmp_path)
        assert [r["c_bar"] for r in rows] == [0.0, 0.79]
        for row in rows:
            assert row["expected_compliance"] == pytest.approx(row["c_bar"] / 2)
            assert row["throughput_lo"] == row["throughput_hi"]
        assert rows[0]["throughput_lo"] == pytest.approx(0.6, abs=1e-3)
        header = (tmp_path / "throughput_curve.csv").read_text().splitlines()[0]
        assert header == "c_bar,expected_compliance,throughput_lo,throughput_hi"

    def test_finite_bounds_ordered(self, tmp_path):
        cfg = preset("paper-finite")
        cfg.c_bar_grid = [0.4]
        rows = cmd_throughput_curve(cfg, tmp_path)
        assert rows[0]["throughput_lo"] <= rows[0]["throughput_hi"]

    def test_empty_grid_rejected(self, tmp_path):
        cfg = preset("paper-infinite")
        cfg.c_bar_grid = []
        with pytest.raises(UsageError):
            cmd_throughput_curve(cfg, tmp_path)


class TestInvariantSetCommand:
    def test_report_and_compare(self, tmp_path, capsys):
        report = cmd_invariant_set(preset("paper-finite"), tmp_path, compare=True)
        assert set(report) == {"mass_balance", "literal"}
        assert report["mass_balance"]["x_e1_hi"] == pytest.approx(1.2, abs=1e-9)
        out = capsys.readouterr().out
        assert "mass_balance" in out and "literal" in out

    def test_containment_check(self, tmp_path):
        report = cmd_invariant_set(preset("paper-finite"), tmp_path, check=True)
        result = report["mass_balance"]["containment"]
        assert result["stayed_inside"] == result["trajectories"]

    def test_wrong_variant(self, tmp_path):
        with pytest.raises(UsageError):
            cmd_invariant_set(preset("paper-infinite"), tmp_path)


class TestSimulateCommand:
    def test_stats_and_dump(self, tmp_path):
        cfg = preset("paper-infinite")
        cfg.sim = {"horizon": 2000, "window_count": 4}
        doc = cmd_simulate(cfg, tmp_path, dump_every=500)
        assert doc["steps_executed"] == 2000
        stats = json.loads((tmp_path / "trajectory_stats.json").read_text())
        assert stats["verdict_sim"] in ("stable", "unstable", "inconclusive")
        dump = (tmp_path / "trajectory_dump.csv").read_text().splitlines()
        assert dump[0] == "step,x_e1,x_e2"
        assert len(dump) == 1 + 4  # header + one row per 500 steps


class TestMainEntry:
    def test_exit_codes(self, tmp_path):
        out = str(tmp_path / "o")
        assert main(["invariant-set", "--preset", "paper-finite", "--out", out]) == 0
        assert main(["invariant-set", "--preset", "paper-infinite", "--out", out]) == 2
        assert main(["certify", "--preset", "paper-finite", "--mode", "thm1", "--out", out]) == 2
        assert main(["certify", "--preset", "bogus", "--mode", "thm1", "--out", out]) == 2
        assert main(["simulate", "--out", out]) == 2  # neither config nor preset

    def test_config_file_and_seed_override(self, tmp_path):
        cfg = tiny_sweep_config()
        cfg.sim = {"horizon": 1500, "window_count": 3}
        cfg.d_lo_grid = [0.2]
        cfg.c_bar_grid = [0.5]
        path = tmp_path / "scenario.json"
        path.write_text(cfg.to_json())
        out = tmp_path / "run"
        code = main(["sweep-region", "--config", str(path), "--seed", "123", "--out", str(out)])
        assert code == 0
        sidecar = json.loads((out / "sweep_region.config.json").read_text())
        assert sidecar["seed"] == 123
        assert sidecar["tool"] == "twolink"

    def test_eq22a_mode_flag(self, tmp_path):
        out = str(tmp_path / "inv")
        code = main(["invariant-set", "--preset", "paper-finite",
                     "--eq22a-mode", "literal", "--out", out])
        assert code == 0
        report = json.loads((Path(out) / "invariant_set.json").read_text())
        assert "literal" in report
