import json
import re
from pathlib import Path

import pytest

from config import config_hash, load_config, parse_config, resolved, validate_parameters, with_overrides
from errors import ConfigError

THREE_LEVEL = dict(Delta=20.0, Omega=1.0, GammaP=0.01, GammaS=2.0)


def raw(**over):
    base = {
        "name": "tl",
        "model": "three_level",
        "parameters": dict(THREE_LEVEL),
        "task": "evolve",
        "time": {"t_final": 20.0, "n_points": 21},
    }
    base.update(over)
    return base


class TestParse:
    def test_defaults_resolved(self):
        cfg = parse_config(raw())
        assert cfg.parameters["nu"] == 0.0
        assert cfg.integrator.method == "rk45"
        assert cfg.trajectories.n_traj == 1000
        assert resolved(cfg)["time"]["t_start"] == 0.0

    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigError, match="bogus"):
            parse_config(raw(bogus=1))

    def test_parameter_paths(self):
        with pytest.raises(ConfigError, match=r"parameters\.GammaS"):
            parse_config(raw(parameters={**THREE_LEVEL, "GammaS": -1.0}))
        with pytest.raises(ConfigError, match=r"parameters\.Delta"):
            parse_config(raw(parameters={"Omega": 1.0, "GammaP": 0.01, "GammaS": 2.0}))

    def test_unknown_parameter(self):
        with pytest.raises(ConfigError, match=r"parameters\.J"):
            parse_config(raw(parameters={**THREE_LEVEL, "J": 1.0}))

    def test_unknown_model(self):
        with pytest.raises(ConfigError, match="unknown model"):
            parse_config(raw(model="transmon"))
        with pytest.raises(ConfigError, match="unknown model"):
            validate_parameters("transmon", {})

    def test_rates_only_model(self):
        params = dict(kappa=0.4, chi=0.2, nbar=3.0, OmegaR=1.5, Delta_c=0.0, T2=20.0)
        with pytest.raises(ConfigError, match="only supports"):
            parse_config(raw(model="dispersive", parameters=params))
        cfg = parse_config(raw(model="dispersive", parameters=params, task="rates", time=None))
        assert cfg.parameters["T2"] == 20.0

    def test_time_needed(self):
        with pytest.raises(ConfigError, match="time grid"):
            parse_config(raw(time=None))

    def test_time_ordering(self):
        with pytest.raises(ConfigError, match="t_start"):
            parse_config(raw(time={"t_final": 5.0, "t_start": 5.0}))

    def test_bad_method(self):
        with pytest.raises(ConfigError, match="integrator.method"):
            parse_config(raw(integrator={"method": "euler"}))


class TestSweepSection:
    def test_missing(self):
        with pytest.raises(ConfigError, match="sweep section"):
            parse_config(raw(task="sweep"))

    def test_empty_values(self):
        with pytest.raises(ConfigError, match="must not be empty"):
            parse_config(raw(task="sweep", sweep={"parameter": "Omega", "values": []}))

    def test_t_final_length(self):
        with pytest.raises(ConfigError, match="t_final entries"):
            parse_config(raw(task="sweep", sweep={"parameter": "Omega", "values": [0.5, 1.0], "t_final": [10.0]}))

    def test_parameter_must_belong_to_model(self):
        with pytest.raises(ConfigError, match="not a three_level parameter"):
            parse_config(raw(task="sweep", sweep={"parameter": "J", "values": [1.0]}))


class TestNoiseSection:
    def test_exactly_one_strength(self):
        for noise in ({}, {"amplitude": 0.1, "target_T2R": 20.0}):
            with pytest.raises(ConfigError, match="exactly one"):
                parse_config(raw(task="trajectories", noise=noise))

    def test_band_order(self):
        with pytest.raises(ConfigError, match="f_min < f_max"):
            parse_config(raw(task="trajectories", noise={"amplitude": 0.1, "f_min": 10.0, "f_max": 1.0}))

    def test_only_for_ensembles(self):
        with pytest.raises(ConfigError, match="noise applies"):
            parse_config(raw(noise={"amplitude": 0.1}))

    def test_accepted(self):
        cfg = parse_config(raw(task="trajectories", noise={"target_T2R": 20.0}))
        assert cfg.noise.n_realizations == 400 and cfg.noise.alpha == 1.0


class TestLoad:
    def test_json_position(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{\n  "name": "x",\n}\n', encoding="utf-8")
        with pytest.raises(ConfigError, match=re.escape(f"{path}:3:1")):
            load_config(path)

    def test_not_an_object(self, tmp_path):
        path = tmp_path / "list.json"
        path.write_text("[1, 2]", encoding="utf-8")
        with pytest.raises(ConfigError, match="JSON object"):
            load_config(path)

    def test_error_names_file(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(raw(bogus=True)), encoding="utf-8")
        with pytest.raises(ConfigError, match="cfg.json"):
            load_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_config(tmp_path / "nope.json")


class TestOverridesAndHash:
    def test_overrides(self):
        cfg = parse_config(raw())
        assert with_overrides(cfg) is cfg
        moved = with_overrides(cfg, seed=5, threads=2, out="elsewhere")
        assert (moved.seed, moved.threads, moved.out) == (5, 2, "elsewhere")
        assert cfg.seed == 0

    def test_hash_ignores_output_settings(self):
        cfg = parse_config(raw())
        assert config_hash(cfg) == config_hash(with_overrides(cfg, threads=4, out="x"))
        assert config_hash(cfg) != config_hash(with_overrides(cfg, seed=1))

    def test_hash_sees_resolved_defaults(self):
        explicit = parse_config(raw(parameters={**THREE_LEVEL, "nu": 0.0}))
        assert config_hash(explicit) == config_hash(parse_config(raw()))
        assert len(config_hash(explicit)) == 16


CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


@pytest.mark.parametrize("path", sorted(CONFIG_DIR.glob("*.json")), ids=lambda p: p.stem)
def test_example_configs_load(path):
    cfg = load_config(path)
    assert cfg.name == path.stem
