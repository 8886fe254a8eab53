import json

import pytest

from rfslam.cli import main
from rfslam.experiment import read_csv

SMALL = {
    "filter": {"n_particles": 6},
    "sim": {"n_steps": 4},
    "run": {"n_mc_runs": 2, "base_seed": 5},
    "scenario": {
        "landmarks": [
            {"position": [200.0, 0.0, 40.0], "kind": "VA"},
            {"position": [0.0, 99.0, 10.0], "kind": "SP"},
        ]
    },
}


@pytest.fixture
def cfg_file(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(SMALL))
    return path


class TestSimulate:
    def test_exports_measurements_and_trajectory(self, cfg_file, tmp_path, capsys):
        out = tmp_path / "sim"
        rc = main(["simulate", "--config", str(cfg_file), "--out", str(out)])
        assert rc == 0
        md, header, rows = read_csv(out / "measurements.csv")
        assert header == ["step", "toa", "aoa_az", "aoa_el", "aod_az", "aod_el", "origin"]
        assert all(1 <= r[0] <= 4 for r in rows)
        _, theader, trows = read_csv(out / "trajectory.csv")
        assert theader == ["step", "x", "y", "heading", "clock_bias"]
        assert len(trows) == 4

    def test_seed_override_changes_data(self, cfg_file, tmp_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        main(["simulate", "--config", str(cfg_file), "--out", str(out_a)])
        main(["simulate", "--config", str(cfg_file), "--out", str(out_b), "--seed", "99"])
        rows_a = read_csv(out_a / "measurements.csv")[2]
        rows_b = read_csv(out_b / "measurements.csv")[2]
        assert rows_a != rows_b


class TestRun:
    def test_single_run_writes_files(self, cfg_file, tmp_path, capsys):
        out = tmp_path / "res"
        rc = main(["run", "--config", str(cfg_file), "--filter", "pmbm", "--out", str(out)])
        assert rc == 0
        assert (out / "pmbm_slam_run000.csv").exists()
        assert "pmbm" in capsys.readouterr().out

    def test_known_pose_flag(self, cfg_file, tmp_path):
        out = tmp_path / "res"
        main(["run", "--config", str(cfg_file), "--known-pose", "--out", str(out)])
        assert (out / "phd_mapping_run000.csv").exists()


class TestMc:
    def test_batch_and_plot_data(self, cfg_file, tmp_path, capsys):
        out = tmp_path / "mc"
        rc = main(["mc", "--config", str(cfg_file), "--out", str(out), "--runs", "2"])
        assert rc == 0
        assert (out / "phd_slam_run001.csv").exists()
        rc = main(["plot-data", "--config", str(cfg_file), "--out", str(out)])
        assert rc == 0
        assert (out / "fig_gospa_sp.csv").exists()


class TestErrors:
    def test_bad_config_returns_error_code(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"filter": {"name": "nope"}}))
        rc = main(["run", "--config", str(path)])
        assert rc == 2
        assert "filter.name" in capsys.readouterr().err
