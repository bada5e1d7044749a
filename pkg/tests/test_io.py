import struct

import numpy as np
import pytest

from compodiff import checkpoint
from compodiff.config import ConfigError, ExperimentConfig, dump_config, load_config, parse_config


# -- checkpoints ----------------------------------------------------------------

def _tensors():
    rng = np.random.default_rng(0)
    return {"w": rng.standard_normal((3, 4, 2)), "b": rng.standard_normal(5), "s": np.array(2.5)}


def test_round_trip_is_exact(tmp_path):
    path = tmp_path / "m.ckpt"
    checkpoint.save(path, _tensors(), {"a": [1, 2], "b": {"c": "x"}})
    meta, loaded = checkpoint.load(path)
    assert meta == {"a": [1, 2], "b": {"c": "x"}}
    assert list(loaded) == ["w", "b", "s"]
    for key, value in _tensors().items():
        assert loaded[key].shape == value.shape and np.array_equal(loaded[key], value)


def test_serialisation_is_deterministic():
    assert checkpoint.dumps(_tensors(), {"z": 1, "a": 2}) == checkpoint.dumps(_tensors(), {"a": 2, "z": 1})


def test_header_layout():
    blob = checkpoint.dumps({"x": np.ones(2)}, {})
    assert blob[:8] == b"CMPDIFF\0"
    assert struct.unpack("<I", blob[8:12])[0] == checkpoint.VERSION


def test_corruption_detected():
    blob = bytearray(checkpoint.dumps(_tensors()))
    blob[40] ^= 0xFF
    with pytest.raises(checkpoint.CheckpointError, match="checksum"):
        checkpoint.loads(bytes(blob))


def test_bad_magic_and_truncation():
    blob = checkpoint.dumps(_tensors())
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.loads(b"NOTMAGIC" + blob[8:])
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.loads(blob[:20])


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        checkpoint.load(tmp_path / "absent.ckpt")


def test_model_state_round_trip(tmp_path):
    from compodiff.compose import ModelConfig, build_model, parameter_checksum
    cfg = ModelConfig(data_channels=2, length=16, latent_dim=4, channels=8, groups=4)
    model = build_model(cfg, seed=1)
    checkpoint.save(tmp_path / "m.ckpt", model.state_dict())
    other = build_model(cfg, seed=2)
    other.load_state_dict(checkpoint.load(tmp_path / "m.ckpt")[1])
    assert parameter_checksum(other) == parameter_checksum(model)


# -- config ---------------------------------------------------------------------

def test_defaults():
    cfg = ExperimentConfig()
    assert (cfg.data.train_size, cfg.data.test_size, cfg.training.epochs, cfg.sampling.steps) == (2000, 256, 50, 100)
    assert cfg.prior.p_mask == 0.8 and cfg.model.operator == "mean"


def test_parse_overrides_and_comments():
    cfg = parse_config("""
# experiment
[model]
operator = max
attention = true
[training]
lr = 3e-4
""")
    assert cfg.model.operator == "max" and cfg.model.attention is True and cfg.training.lr == 3e-4


def test_dump_parse_round_trip():
    cfg = parse_config("[data]\nlength = 64\nshared_tempo = false\n[evaluation]\noperators = sum,max\n")
    assert parse_config(dump_config(cfg)) == cfg


@pytest.mark.parametrize("text,message", [
    ("[nope]\n", "2|1.*unknown section"),
    ("[data]\nwidth = 3\n", "2.*unknown key 'width'"),
    ("[data]\nlength = long\n", "expected int"),
    ("[model]\nattention = maybe\n", "expected a boolean"),
    ("length = 3\n", "outside of any section"),
    ("[data]\njunk\n", "key = value"),
])
def test_config_errors_name_the_line(text, message):
    with pytest.raises(ConfigError, match=message):
        parse_config(text, "exp.cfg")


def test_error_carries_source_and_line(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text("[data]\n\nseed = x\n")
    with pytest.raises(ConfigError, match="exp.cfg:3"):
        load_config(path)


def test_with_seed_replaces_all_seeds():
    cfg = ExperimentConfig().with_seed(9)
    assert {cfg.data.seed, cfg.model.seed, cfg.training.seed, cfg.prior.seed, cfg.evaluation.seed} == {9}
    assert ExperimentConfig().data.seed == 0


def test_dict_round_trip():
    cfg = ExperimentConfig().with_seed(3)
    assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg
