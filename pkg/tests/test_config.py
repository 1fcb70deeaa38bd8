from pathlib import Path

import pytest
from hypothesis import given
from hypothesis import strategies as st

from chsnet.config import RunConfig, format_config, load_config, parse_config
from chsnet.errors import ConfigurationError
from chsnet.network import NetworkConfig
from chsnet.train import TrainConfig


def test_parse_sections_types_and_comments():
    cfg = parse_config(
        """
        # tiny run
        net.stages = 3
        net.input_size = 64,64,1
        net.use_ssd = false
        train.learning_rate = 5e-4   # slower
        train.kfold = none
        run.model = raiu
        """
    )
    assert cfg.net.stages == 3 and cfg.net.input_size == (64, 64, 1) and not cfg.net.use_ssd
    assert cfg.train.learning_rate == 5e-4 and cfg.train.kfold is None
    assert cfg.model == "raiu"


@pytest.mark.parametrize(
    "text",
    ["net.stages", "stages = 3", "net.nope = 1", "net.stages = three", "net.use_ssd = maybe",
     "run.model = unet", "net.stages = 1", "train.epochs = 0"],
)
def test_bad_configs(text):
    with pytest.raises(ConfigurationError):
        parse_config(text)


@given(
    stages=st.integers(2, 4), base=st.integers(1, 64), growth=st.floats(0.5, 3, allow_nan=False),
    lr=st.floats(0, 1), kfold=st.one_of(st.none(), st.integers(2, 10)), model=st.sampled_from(["chs", "raiu"]),
    rib=st.booleans(),
)
def test_format_parse_round_trip(stages, base, growth, lr, kfold, model, rib):
    cfg = RunConfig(
        NetworkConfig(stages=stages, base_filters=base, depth_growth=growth, input_size=(64, 64, 1), use_rib=rib),
        TrainConfig(learning_rate=lr, kfold=kfold),
        model=model,
    )
    assert parse_config(format_config(cfg)) == cfg


def test_load_config_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "missing.cfg")
    (tmp_path / "a.cfg").write_text("train.epochs = 2\n")
    assert load_config(tmp_path / "a.cfg").train.epochs == 2


@pytest.mark.parametrize("name", ["synth64.cfg", "tiny.cfg"])
def test_shipped_configs_parse(name):
    path = Path(__file__).resolve().parents[1] / "configs" / name
    cfg = load_config(path)
    assert cfg.model == "chs"
    assert cfg.net.input_size[0] % 2 ** (cfg.net.stages - 1) == 0
