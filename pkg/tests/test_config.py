from pathlib import Path

import numpy as np
import pytest

from lmpgan.config import EXAMPLE_CONFIG, ConfigError, load_config, parse_config, with_seed


def test_example_config_parses(tmp_path):
    cfg = parse_config(EXAMPLE_CONFIG, tmp_path)
    assert cfg.data == (tmp_path / "data.csv").resolve()
    assert cfg.layout.zone_order == tuple(f"Z{i}" for i in range(1, 10))
    assert cfg.features == ("rtlmp", "dalmp", "demand")
    assert cfg.train_end == np.datetime64("2017-04-01T00", "h")
    assert (cfg.gan.n, cfg.gan.max_iterations, cfg.gan.eval_every) == (4, 2000, 250)
    assert cfg.calibration.window == 168 and cfg.evaluation.eps_den == 0.01
    assert cfg.checkpoint_path == cfg.workdir / "model.ckpt"


def test_defaults_from_empty_file():
    cfg = parse_config("")
    assert cfg.train_end is None and cfg.gan.width == 1.0 and cfg.seed == 0


def test_overrides():
    cfg = parse_config(EXAMPLE_CONFIG, overrides=["gan.width=0.25", "run.seed=7", "grid.rows=1",
                                                   "grid.cols=2", "grid.zones=A,B"])
    assert cfg.gan.width == 0.25 and cfg.seed == 7 and cfg.gan.seed == 7
    assert cfg.layout.zone_order == ("A", "B")
    # an explicit gan seed is not replaced by the run seed
    assert parse_config("[gan]\nseed = 3\n[run]\nseed = 1\n").gan.seed == 3


@pytest.mark.parametrize("text, overrides", [
    ("[nope]\nx = 1\n", ()),
    ("[gan]\nwidht = 1\n", ()),
    ("[gan]\nwidth = wide\n", ()),
    ("[gan]\nextra_channels = 3\n", ()),
    ("[data]\nfeatures = dalmp,rtlmp\n", ()),
    ("[data]\ntrain_end = yesterday\n", ()),
    ("[paths]\nout = x\n", ()),
    ("[grid]\nrows = 2\ncols = 2\nzones = A,B\n", ()),
    ("not ini", ()),
    ("", ["gan.width"]),
    ("", ["width=1"]),
])
def test_bad_config(text, overrides):
    with pytest.raises(ConfigError):
        parse_config(text, overrides=overrides)


def test_load_config(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.ini")
    (tmp_path / "a.ini").write_text("[paths]\nworkdir = out\n")
    assert load_config(tmp_path / "a.ini").workdir == (tmp_path / "out").resolve()


def test_with_seed():
    cfg = with_seed(parse_config(EXAMPLE_CONFIG, Path(".")), 11)
    assert cfg.seed == cfg.gan.seed == 11
