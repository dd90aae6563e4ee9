import pytest

from deepcat.config import (
    ExperimentConfig,
    config_from_flat,
    parse_config,
    parse_config_text,
)
from deepcat.errors import ConfigurationError
from deepcat.eval import ModelSpec
from deepcat.optim import TrainConfig


def test_defaults_from_single_line():
    cfg = parse_config_text("model.head = prototype\n")
    assert cfg.model == ModelSpec(head="prototype")
    assert cfg.train == TrainConfig()
    assert cfg.data.source == "blobs" and cfg.data.train_fraction == 0.8
    assert cfg.output.dir == "runs"


def test_learning_rate_parses_exactly():
    assert parse_config_text("train.learning_rate = 0.01").train.learning_rate == 0.01


def test_comments_and_blank_lines():
    cfg = parse_config_text("# header\n\nmodel.head = mixture  # trailing\nmodel.k = 3\n")
    assert cfg.model.k == 3


@pytest.mark.parametrize(
    "text, line",
    [
        ("model.head = prototype\nmodel.k = 5\n", 2),
        ("data.source = blobs\ntrain.nope = 1\n", 2),
        ("train.epochs = many\n", 1),
        ("train.momentum = 1.5\n", 1),
        ("model.head = tree\n", 1),
        ("model.frozen_centers = maybe\n", 1),
        ("just text\n", 1),
        ("train.epochs = 3\ntrain.epochs = 4\n", 2),
        ("data.source = blobs\ndata.images = x.idx\n", 2),
        ("data.source = idx\ndata.images = x.idx\n", 1),
        ("data.train_fraction = 1.0\n", 1),
    ],
)
def test_errors_cite_line(text, line):
    with pytest.raises(ConfigurationError, match=f"^line {line}:"):
        parse_config_text(text)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigurationError):
        parse_config(tmp_path / "absent.cfg")


def test_flat_round_trip_including_defaults():
    cfg = parse_config_text(
        "data.source = multimodal\ndata.modes = 3\nmodel.head = mixture\nmodel.k = 4\n"
        "model.log_prior = 0.1, -0.1\neval.sweep = 1, 2, 4\ntrain.clip_norm = none\n"
    )
    assert config_from_flat(cfg.to_flat()) == cfg
    assert parse_config_text(cfg.to_text()) == cfg


def test_snapshot_lists_only_keys_of_the_chosen_source():
    flat = parse_config_text("data.source = idx\ndata.images = a\ndata.labels = b\n").to_flat()
    assert "data.per_class" not in flat and flat["data.images"] == "a"


def test_with_seed():
    assert ExperimentConfig().with_seed(9).train.seed == 9
