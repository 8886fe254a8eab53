import json
import math

import numpy as np
import pytest

from rfslam.config import ConfigError, default_config, load_config, validate_config
from rfslam.geometry import SPEED_OF_LIGHT as C, LandmarkKind


class TestDefaults:
    def test_empty_document_gives_paper_defaults(self):
        cfg = validate_config({})
        assert cfg.filter_name == "phd"
        assert cfg.n_particles == 2000
        assert cfg.n_mc_runs == 10
        assert cfg.n_steps == 40
        assert cfg.scenario.p_detect == 0.9
        assert cfg.scenario.fov_radius_sp == 50.0
        assert cfg.scenario.clutter_mean == 1.0
        assert cfg.control.speed == 22.22
        assert cfg.control.turn_rate == pytest.approx(math.pi / 10)
        assert cfg.motion_noise.sampling_interval == 0.5
        np.testing.assert_allclose(
            np.diag(cfg.motion_noise.covariance),
            [0.2**2, 0.2**2, 0.0035**2, (0.2 / C) ** 2],
        )
        np.testing.assert_allclose(
            np.diag(cfg.initial_cov), [0.3**2, 0.3**2, 0.0052**2, (0.3 / C) ** 2]
        )
        assert cfg.initial_state.x == pytest.approx(22.22 / (math.pi / 10))
        assert cfg.initial_state.clock_bias == pytest.approx(300.0 / C)
        assert cfg.phd_params.prune_threshold == 1e-4
        assert cfg.phd_params.merge_threshold == 50.0
        assert cfg.phd_params.birth_weight == 1.5e-5
        assert cfg.pmbm_params.gamma == 10
        assert cfg.gospa_params.cutoff == 20.0

    def test_default_scenario_shape(self):
        cfg = validate_config({})
        kinds = [lm.kind for lm in cfg.scenario.landmarks]
        assert kinds.count(LandmarkKind.VA) == 4
        assert kinds.count(LandmarkKind.SP) == 4

    def test_none_behaves_like_empty(self):
        assert validate_config(None).config_hash == validate_config({}).config_hash


class TestValidation:
    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="typo_key"):
            validate_config({"typo_key": 1})

    def test_nested_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="scenario.p_detekt"):
            validate_config({"scenario": {"p_detekt": 0.5}})

    def test_negative_particle_count_names_field(self):
        with pytest.raises(ConfigError, match="filter.n_particles"):
            validate_config({"filter": {"n_particles": -5}})

    def test_bad_filter_name(self):
        with pytest.raises(ConfigError, match="filter.name"):
            validate_config({"filter": {"name": "ekf"}})

    def test_bad_landmark_kind(self):
        with pytest.raises(ConfigError, match=r"scenario.landmarks\[0\].kind"):
            validate_config(
                {"scenario": {"landmarks": [{"position": [1, 2, 3], "kind": "BS"}]}}
            )

    def test_probability_range(self):
        with pytest.raises(ConfigError, match="scenario.p_detect"):
            validate_config({"scenario": {"p_detect": 1.5}})

    def test_non_numeric_rejected(self):
        with pytest.raises(ConfigError, match="motion.speed"):
            validate_config({"motion": {"speed": "fast"}})

    def test_overrides_apply(self):
        cfg = validate_config({"filter": {"name": "pmbm", "gamma": 3}, "sim": {"n_steps": 7}})
        assert cfg.filter_name == "pmbm"
        assert cfg.pmbm_params.gamma == 3
        assert cfg.n_steps == 7

    def test_hash_tracks_content(self):
        a = validate_config({})
        b = validate_config({"run": {"base_seed": 2}})
        assert a.config_hash != b.config_hash
        assert a.config_hash == validate_config({}).config_hash


class TestLoad:
    def test_load_file(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"filter": {"name": "bp"}}))
        assert load_config(path).filter_name == "bp"

    def test_empty_file_is_default(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text("")
        assert load_config(path).config_hash == validate_config({}).config_hash

    def test_default_config_is_json_serializable(self):
        json.dumps(default_config())
