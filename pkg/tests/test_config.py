import pytest

from seatrans.config import (
    ABLATION_ROWS,
    BACKBONE_PRESETS,
    RunConfig,
    SeATransConfig,
    TrainConfig,
    backbone_preset,
    load_run_config,
    model_config_from_dict,
)
from seatrans.errors import ConfigError, InvalidAblationError


def test_default_stage_rates():
    bb = backbone_preset("default")
    assert [bb.stage_rate(s) for s in (1, 2, 3)] == [4, 8, 16]


@pytest.mark.parametrize("name", sorted(BACKBONE_PRESETS))
def test_model_config_round_trip(name):
    cfg = SeATransConfig(backbone=backbone_preset(name), interaction_layers=(3, 2, 3))
    assert cfg.interaction_layers == (2, 3)
    assert model_config_from_dict(cfg.to_dict()) == cfg


def test_rows_are_the_only_valid_flags():
    assert len(ABLATION_ROWS) == 4
    with pytest.raises(InvalidAblationError):
        SeATransConfig(multi_scale=False, asymmetric=True)


@pytest.mark.parametrize(
    "kw", [{"kind": "resnet"}, {"interaction_layers": (4,)}, {"roi_margin": -1.0}]
)
def test_invalid_model_config(kw):
    with pytest.raises(ConfigError):
        SeATransConfig(**kw)


@pytest.mark.parametrize("kw", [{"learning_rate": -1}, {"batch_size": 0}, {"epochs": 0}])
def test_invalid_train_config(kw):
    with pytest.raises(ConfigError):
        TrainConfig(**kw)


def test_unknown_preset():
    with pytest.raises(ConfigError):
        backbone_preset("vgg")


def test_yaml_with_overrides(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("seed: 3\nmodel: {preset: miniature, backbone: {seg_base_width: 4}}\ntrain: {epochs: 7}\n")
    run = load_run_config(path, {"train.learning_rate": 0.01, "data.n_train": 10})
    assert run.seed == 3
    assert run.model.backbone.seg_base_width == 4
    assert run.model.backbone.stage_widths == (8, 16, 32)
    assert (run.train.epochs, run.train.learning_rate) == (7, 0.01)
    assert run.data.n_train == 10
    assert RunConfig.from_dict(run.to_dict()) == run


def test_yaml_rejects_unknown_keys(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("training: {epochs: 1}\n")
    with pytest.raises(ConfigError):
        load_run_config(path)
