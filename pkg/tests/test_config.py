import json

import pytest

from latentforge.config import PipelineConfig, load_config
from latentforge.errors import ConfigError


def test_defaults():
    cfg = PipelineConfig()
    assert cfg.schedule.T == 50 and cfg.cfg_source == 1 and cfg.cfg_edit == 7.5
    assert cfg.refine.filter_sigma == 0.3 and cfg.tr_range == (30, 50)
    assert PipelineConfig(edit_kind="rigid-object").tr_range == (10, 30)


@pytest.mark.parametrize(
    "data",
    [
        {"cfg_source": 7.5},
        {"cfg_edit": 0.5},
        {"edit_kind": "rotate"},
        {"mask": {"source": "lasso"}},
        {"mask": {"source": "rect"}},
        {"mask": {"source": "file"}},
        {"t_R": 60},
        {"t_R_range": [40, 20]},
        {"bogus": 1},
        {"schedule": {"steps": 10}},
        {"refine": {"alpha": 3}},
        {"schedule": 5},
        {"p_src": ""},
    ],
)
def test_invalid_configs(data):
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict(data, env={})


def test_seed_env_override():
    cfg = PipelineConfig.from_dict({"seed": 3}, env={"LATENTFORGE_SEED": "11"})
    assert cfg.seed == 11 and cfg.refine.seed == 11
    pinned = PipelineConfig.from_dict({"seed": 3, "refine": {"seed": 5}}, env={})
    assert pinned.seed == 3 and pinned.refine.seed == 5


def test_load_config_round_trip(tmp_path):
    cfg = PipelineConfig.from_dict(
        {"p_tar": "a jumping dog", "mask": {"source": "rect", "rect": [0, 0, 32, 32]}, "schedule": {"T": 20}, "t_R_range": [5, 15]},
        env={},
    )
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_dict()))
    again = load_config(path)
    assert again.to_dict() == cfg.to_dict()
    assert again.mask.rect == (0, 0, 32, 32)


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(bad)
    bad.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_published_schema_is_current():
    from pathlib import Path

    from latentforge.config import config_schema

    committed = json.loads((Path(__file__).parents[1] / "configs" / "schema.json").read_text())
    assert committed == config_schema()
    assert set(committed["properties"]) == set(PipelineConfig().to_dict())
    assert committed["properties"]["mask"]["properties"]["rect"]["type"] == ["array", "null"]
