"""Benchmark harness and command-line interface."""

import csv
import json

import numpy as np
import pytest

from tokcluster.bench import (
    CSV_COLUMNS,
    BenchReport,
    ConfigError,
    apply_sweep_value,
    cmd_flops,
    cmd_run,
    cmd_sweep,
    load_run_config,
    run_config_from_json_dict,
)
from tokcluster.cli import EXIT_CONFIG, EXIT_OK, main
from tokcluster.container import load_container


def base_config(**overrides):
    cfg = {
        "seed": 0,
        "arch": {
            "layers": 3,
            "channels": 16,
            "heads": 4,
            "mlp_ratio": 2.0,
            "grid": [8, 8],
        },
        "pipeline": {
            "alpha": 1,
            "beta": 1,
            "gamma": 1,
            "mode": "clustered",
            "clustering": {
                "target_h": 4,
                "target_w": 4,
                "lambda_h": 3,
                "lambda_w": 3,
                "kappa": 2,
                "tau": 5.0,
            },
            "reconstruction": {"k": 4, "tau": 5.0, "candidate_mode": "knn_global"},
        },
        "synth": {"octaves": 3},
        "timing": {"repeats": 1, "warmup": 0},
    }
    cfg.update(overrides)
    return cfg


def identity_config():
    cfg = base_config()
    cfg["pipeline"]["alpha"] = 2
    cfg["pipeline"]["beta"] = 0
    cfg["pipeline"]["gamma"] = 1
    cfg["pipeline"]["clustering"].update(
        {"target_h": 8, "target_w": 8, "kappa": 0}
    )
    cfg["pipeline"]["reconstruction"].update({"k": 1})
    return cfg


def write_config(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


class TestConfigLoading:
    def test_valid_config(self, tmp_path):
        cfg = load_run_config(write_config(tmp_path, base_config()))
        assert cfg.seed == 0
        assert cfg.arch.n_tokens == 64
        assert cfg.synth.height == 8 and cfg.synth.channels == 16

    def test_unknown_top_level_key_rejected(self):
        with pytest.raises(ConfigError):
            run_config_from_json_dict(base_config(extra_field=1))

    def test_layer_split_mismatch_rejected(self):
        bad = base_config()
        bad["pipeline"]["gamma"] = 5
        with pytest.raises(ConfigError):
            run_config_from_json_dict(bad)

    def test_synth_grid_mismatch_rejected(self):
        bad = base_config()
        bad["synth"] = {"grid": [4, 4], "octaves": 3}
        with pytest.raises(ConfigError):
            run_config_from_json_dict(bad)

    def test_invalid_json_file(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError):
            load_run_config(path)

    def test_dump_features_requires_path(self):
        bad = base_config()
        bad["outputs"] = {"dump_features": True}
        with pytest.raises(ConfigError):
            run_config_from_json_dict(bad)


class TestRun:
    def test_identity_config_gives_unit_fidelity(self, tmp_path):
        cfg = load_run_config(write_config(tmp_path, identity_config()))
        report = cmd_run(cfg, time_it=False)
        row = report.rows[0]
        assert row.cos_mean_z_alpha_beta == pytest.approx(1.0, abs=1e-5)
        assert row.cos_mean_z_final == pytest.approx(1.0, abs=1e-5)
        assert row.flops_ratio > 1.0  # same-size clusters only add overhead

    def test_deterministic_given_seed(self, tmp_path):
        cfg = load_run_config(write_config(tmp_path, base_config()))
        r1 = cmd_run(cfg, time_it=False).rows[0]
        r2 = cmd_run(cfg, time_it=False).rows[0]
        assert r1.cos_mean_z_alpha_beta == r2.cos_mean_z_alpha_beta
        assert r1.cos_mean_z_final == r2.cos_mean_z_final
        assert r1.flops_total == r2.flops_total

    def test_report_files_written(self, tmp_path):
        raw = base_config()
        raw["outputs"] = {
            "report_json": str(tmp_path / "r.json"),
            "report_csv": str(tmp_path / "r.csv"),
        }
        cfg = load_run_config(write_config(tmp_path, raw))
        report = cmd_run(cfg, time_it=False)
        loaded = json.loads((tmp_path / "r.json").read_text())
        assert BenchReport.from_json_dict(loaded) == report
        with open(tmp_path / "r.csv", newline="") as f:
            rows = list(csv.reader(f))
        assert rows[0] == CSV_COLUMNS
        assert len(rows) == 2

    def test_feature_dump(self, tmp_path):
        raw = base_config()
        raw["outputs"] = {
            "dump_features": True,
            "features_path": str(tmp_path / "features.ntc"),
        }
        cfg = load_run_config(write_config(tmp_path, raw))
        cmd_run(cfg, time_it=False)
        dumped = load_container(tmp_path / "features.ntc")
        assert "plain.z_final" in dumped
        assert "clustered.s_alpha" in dumped
        assert dumped["clustered.s_alpha"].shape == (4, 4, 16)

    def test_wall_clock_fields_populated(self, tmp_path):
        cfg = load_run_config(write_config(tmp_path, base_config()))
        row = cmd_run(cfg, time_it=True).rows[0]
        assert row.wall_ms_plain > 0.0
        assert row.wall_ms_clustered > 0.0


class TestSweep:
    def test_single_value_sweep_matches_run(self, tmp_path):
        cfg = load_run_config(write_config(tmp_path, base_config()))
        sweep = cmd_sweep(cfg, "kappa", [2], time_it=False)
        run = cmd_run(cfg, time_it=False)
        assert len(sweep.rows) == 1
        s, r = sweep.rows[0], run.rows[0]
        assert s.config_id == "kappa=2"
        assert s.flops_total == r.flops_total
        assert s.cos_mean_z_final == r.cos_mean_z_final

    def test_kappa_sweep_flops_strictly_increasing(self, tmp_path):
        cfg = load_run_config(write_config(tmp_path, base_config()))
        report = cmd_sweep(cfg, "kappa", [0, 1, 2, 3], time_it=False)
        totals = [row.flops_total for row in report.rows]
        assert all(b > a for a, b in zip(totals, totals[1:]))

    def test_rows_keep_given_order(self, tmp_path):
        cfg = load_run_config(write_config(tmp_path, base_config()))
        report = cmd_sweep(cfg, "cluster_size", [4, 2, 3], time_it=False)
        assert [r.config_id for r in report.rows] == [
            "cluster_size=4",
            "cluster_size=2",
            "cluster_size=3",
        ]

    def test_alpha_sweep_preserves_layer_total(self, tmp_path):
        cfg = load_run_config(write_config(tmp_path, base_config()))
        moved = apply_sweep_value(cfg, "alpha", 2)
        assert moved.pipeline.alpha == 2
        assert moved.pipeline.total_layers == cfg.arch.layers
        with pytest.raises(ConfigError):
            apply_sweep_value(cfg, "alpha", 9)

    def test_tau_sweep_sets_both_temperatures(self, tmp_path):
        cfg = load_run_config(write_config(tmp_path, base_config()))
        moved = apply_sweep_value(cfg, "tau", 2.5)
        assert moved.pipeline.clustering.tau == 2.5
        assert moved.pipeline.reconstruction.tau == 2.5

    def test_unknown_axis_rejected(self, tmp_path):
        cfg = load_run_config(write_config(tmp_path, base_config()))
        with pytest.raises(ConfigError):
            cmd_sweep(cfg, "temperature", [1.0], time_it=False)


class TestFlopsCommand:
    def test_pure_analytic_report(self, tmp_path):
        cfg = load_run_config(write_config(tmp_path, base_config()))
        report = cmd_flops(cfg)
        assert report.total == sum(p.flops for p in report.parts)
        assert 0.0 < report.ratio


class TestBenchReportSerialization:
    def test_json_round_trip_value_identical(self, tmp_path):
        cfg = load_run_config(write_config(tmp_path, base_config()))
        report = cmd_run(cfg, time_it=False)
        round_tripped = BenchReport.from_json_dict(
            json.loads(json.dumps(report.to_json_dict()))
        )
        assert round_tripped == report


class TestCli:
    def test_run_exit_zero(self, tmp_path, capsys):
        path = write_config(tmp_path, identity_config())
        code = main(["run", "--config", str(path), "--out", str(tmp_path / "out")])
        assert code == EXIT_OK
        captured = capsys.readouterr()
        assert "ratio=" in captured.out
        assert (tmp_path / "out" / "report.json").exists()
        assert (tmp_path / "out" / "report.csv").exists()

    def test_malformed_config_exit_two(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{oops")
        assert main(["run", "--config", str(path)]) == EXIT_CONFIG

    def test_schema_violation_exit_two(self, tmp_path):
        path = write_config(tmp_path, base_config(bogus=True))
        assert main(["run", "--config", str(path)]) == EXIT_CONFIG

    def test_missing_file_exit_two(self, tmp_path):
        assert main(["run", "--config", str(tmp_path / "absent.json")]) == EXIT_CONFIG

    def test_flops_subcommand(self, tmp_path, capsys):
        path = write_config(tmp_path, base_config())
        assert main(["flops", "--config", str(path)]) == EXIT_OK
        out = capsys.readouterr().out
        assert "flops conventions" in out
        assert "ratio=" in out

    def test_sweep_subcommand_with_pair_values(self, tmp_path, capsys):
        path = write_config(tmp_path, base_config())
        code = main(
            ["sweep", "--config", str(path), "--axis", "cluster_size", "--values", "2x3,4"]
        )
        assert code == EXIT_OK
        out = capsys.readouterr().out
        assert "cluster_size=(2, 3)" in out
        assert "cluster_size=4" in out

    def test_seed_override(self, tmp_path, capsys):
        path = write_config(tmp_path, base_config())
        assert main(["run", "--config", str(path), "--seed", "9"]) == EXIT_OK

    def test_invalid_sweep_value_exit_two(self, tmp_path):
        path = write_config(tmp_path, base_config())
        code = main(["sweep", "--config", str(path), "--axis", "alpha", "--values", "99"])
        assert code == EXIT_CONFIG
