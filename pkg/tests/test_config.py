# imports
import pytest

from skeattn_utils.config import KEYS, PRESETS, load_config, to_flat, write_config
from skeattn_utils.errors import ConfigError, InvalidConfigError


def test_presets():
    desk = load_config(preset="desk")
    assert desk.topology == "desk9"
    assert desk.encoder.channels == [16, 32, 64]
    assert (desk.synth.class_count, desk.synth.frames) == (4, 16)
    assert desk.augment.temporal_padding_ratio == 6
    assert (desk.augment.spatial_l, desk.augment.spatial_u) == (3, 4)
    assert (desk.mhsam.heads, desk.mhsam.lam, desk.loss.mu) == (8, 2.0, 0.5)

    full = load_config(preset="full")
    assert full.topology == "ntu25"
    assert full.train.queue_size == 32768
    assert full.probe.linear_lr == 3
    assert set(PRESETS) == {"desk", "full"}


def test_overrides_and_aliases():
    cfg = load_config(
        overrides={"lambda": "4", "spacial_u": "3", "temperal_padding_ratio": 2, "channels": "8,16", "strides": "1 2"}
    )
    assert cfg.mhsam.lam == 4.0
    assert cfg.augment.spatial_u == 3
    assert cfg.augment.temporal_padding_ratio == 2
    assert cfg.encoder.channels == [8, 16]
    assert cfg.encoder.strides == [1, 2]
    assert load_config(overrides={"stream": "m"}).train.stream == "motion"


def test_config_file_with_preset(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("preset = full  # start from the full-scale constants\n\nepochs = 3\nlr_drop_epoch = 1\n")
    cfg = load_config(path, preset="desk")
    assert cfg.topology == "ntu25"
    assert cfg.train.epochs == 3


@pytest.mark.parametrize(
    "overrides",
    [
        {"heads": "5"},
        {"mu": "1.0"},
        {"temperature": "0"},
        {"spacial_u": "6"},
        {"lr_drop_epoch": "50"},
        {"batch_size": "1"},
        {"key_mask": "separate"},
        {"stream": "velocity"},
        {"temporal_kernel": "4"},
        {"knn_interval": "0"},
        {"finetune_momentum": "1.0"},
        {"channels": "8, 16", "strides": "1"},
    ],
)
def test_invalid_values(overrides):
    with pytest.raises(InvalidConfigError):
        load_config(overrides=overrides)


def test_malformed_input(tmp_path):
    with pytest.raises(ConfigError):
        load_config(overrides={"learning_rate": "0.1"})
    with pytest.raises(ConfigError):
        load_config(overrides={"epochs": "ten"})
    with pytest.raises(ConfigError):
        load_config(overrides={"nesterov": "maybe"})
    with pytest.raises(ConfigError):
        load_config(preset="huge")

    path = tmp_path / "bad.cfg"
    path.write_text("epochs 10\n")
    with pytest.raises(ConfigError, match="bad.cfg:1"):
        load_config(path)


def test_write_and_reload(tmp_path, small_cfg):
    path = tmp_path / "config.cfg"
    write_config(small_cfg, path)
    assert load_config(path) == small_cfg
    assert set(to_flat(small_cfg)) <= set(KEYS)


def test_replace(small_cfg):
    cfg = small_cfg.replace(disable_local=True, mu=0.25)
    assert cfg.train.disable_local and cfg.loss.mu == 0.25
    assert not small_cfg.train.disable_local
    with pytest.raises(ConfigError):
        small_cfg.replace(unknown=1)
