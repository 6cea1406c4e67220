import json

import pytest

from flowpalm.config import (
    ConfigError,
    PipelineConfig,
    apply_override,
    dump_config,
    from_dict,
    load_config,
    to_dict,
)


def test_defaults_validate_and_round_trip(tmp_path):
    cfg = PipelineConfig().validate()
    assert cfg.thresholds.tau_d == 0.01 and cfg.sampler.T == 250
    dump_config(cfg, tmp_path / "c.json")
    back = load_config(tmp_path / "c.json")
    assert to_dict(back) == to_dict(cfg)


def test_partial_config_fills_defaults():
    cfg = from_dict({"seed": 7, "sampler": {"step_stride": 5}})
    assert cfg.seed == 7 and cfg.sampler.step_stride == 5 and cfg.sampler.T == 250


@pytest.mark.parametrize("data", [
    {"bogus": 1},
    {"sampler": {"bogus": 1}},
    {"resolution": 128},
    {"thresholds": {"tau_d": 0}},
    {"sampler": {"tau_u": 0.7}},
    {"estimator": {"regularization_weight": -1}},
    {"denoiser": {"kind": "external"}},
    {"corpus": []},
])
def test_invalid_configs_rejected(data):
    with pytest.raises(ConfigError):
        from_dict(data)


def test_env_variable_and_missing_file(tmp_path, monkeypatch):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"seed": 42}))
    monkeypatch.setenv("FLOWPALM_CONFIG", str(path))
    assert load_config().seed == 42
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.json")
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.json")


def test_overrides():
    cfg = apply_override(PipelineConfig(), "sampler.T=100")
    assert cfg.sampler.T == 100
    cfg = apply_override(cfg, "library.flow_source=truth")
    assert cfg.library.flow_source == "truth"
    for bad in ("sampler.nope=1", "nope.T=1", "seed"):
        with pytest.raises(ConfigError):
            apply_override(cfg, bad)
