import dataclasses

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from idan import config
from idan.config import ConfigError, RunConfig


def test_empty_text_gives_defaults():
    assert config.parse("") == RunConfig()


def test_default_round_trip():
    cfg = RunConfig()
    assert config.parse(config.serialize(cfg)) == cfg


def test_partial_file():
    cfg = config.parse("[model]\nbase_channels = 16\n\n[train]\nepochs = 3\nlearning_rate = 0.01\n")
    assert cfg.model.base_channels == 16
    assert cfg.train.epochs == 3 and cfg.train.learning_rate == 0.01
    assert cfg.diffmap == RunConfig().diffmap


@pytest.mark.parametrize("text,match", [
    ("[model]\nwidth = 3\n", "unknown key"),
    ("[optimizer]\nkind = sgd\n", "unknown section"),
    ("[train]\nepochs = many\n", "not a valid int"),
    ("[model]\nuse_fda = perhaps\n", "not a valid bool"),
    ("[train]\nepochs = 0\n", "epochs"),
    ("[diffmap]\nedge = laplace\n", "edge"),
    ("[diffmap]\nextractor = random:1:6\n", "multiple of 4"),
    ("[diffmap]\nextractor = vgg16\n", "random or file"),
    ("[diffmap]\ncanny_low = 0.3\n", "canny_low"),
    ("[model]\nhead_channels = 3\n", "even"),
    ("[augment]\ncrop_scale_min = 2.0\n", "crop_scale_range"),
    ("no section header\n", "malformed"),
])
def test_rejections(text, match):
    with pytest.raises(ConfigError, match=match):
        config.parse(text)


def test_overrides():
    cfg = config.with_overrides(RunConfig(), ["train.epochs=7", "model.use_ec=false", "diffmap.edge=sobel"])
    assert cfg.train.epochs == 7 and not cfg.model.use_ec
    assert cfg.diffmap.edge_params() == {"threshold": 0.8}
    for bad in ["train.epochs", "nosuch.key=1", "train.nosuch=1", "epochs=3"]:
        with pytest.raises(ConfigError):
            config.with_overrides(RunConfig(), [bad])


def test_component_views():
    cfg = RunConfig()
    assert cfg.model.unet().head_channels == cfg.model.base_channels
    assert cfg.tile.tile_spec().window == 512
    assert cfg.augment.augment_config().crop_side_range() == (358, 666)
    assert cfg.train.train_config("x.ckpt").checkpoint == "x.ckpt"
    assert cfg.diffmap.make_extractor().output_channels == 16


@settings(max_examples=50, deadline=None)
@given(
    base=st.integers(1, 32).map(lambda n: 2 * n),
    depth=st.integers(1, 5),
    lr=st.floats(1e-6, 1.0, allow_nan=False),
    thr=st.floats(0.01, 0.99),
    fda=st.booleans(),
    edge=st.sampled_from(["canny", "sobel", "prewitt"]),
    seed=st.integers(0, 2**63 - 1),
    path=st.text(alphabet="abcdefghij/_.-", max_size=20),
)
def test_round_trip_property(base, depth, lr, thr, fda, edge, seed, path):
    cfg = RunConfig(
        model=dataclasses.replace(RunConfig().model, base_channels=base, depth=depth, use_fda=fda),
        train=dataclasses.replace(RunConfig().train, learning_rate=lr, threshold=thr, seed=seed),
        diffmap=dataclasses.replace(RunConfig().diffmap, edge=edge, extractor=f"random:{seed}:8"),
        paths=config.PathsSection(data=path.strip(), checkpoint="ck.bin"),
    )
    again = config.parse(config.serialize(cfg))
    assert again == cfg
    assert config.serialize(again) == config.serialize(cfg)


def test_save_load(tmp_path):
    cfg = config.with_overrides(RunConfig(), ["tile.window=256"])
    config.save(tmp_path / "run.cfg", cfg)
    assert config.load(tmp_path / "run.cfg") == cfg
    with pytest.raises(ConfigError):
        config.load(tmp_path / "missing.cfg")
