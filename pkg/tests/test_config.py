import json

import pytest

from gaeor.config import RunConfig, echo_config, load_config, parse_config
from gaeor.exceptions import ConfigurationError
from gaeor.model import Components
from gaeor.trainer import TrainConfig


def test_empty_document_gives_defaults():
    cfg = parse_config({})
    assert cfg == RunConfig()
    tc = cfg.train_config()
    assert tc.components == Components()
    assert tc.weights.alpha == 0.3 and tc.weights.beta == 0.5 and tc.weights.gamma == 0.5
    assert tc.lr == TrainConfig().lr
    assert tc.augment == TrainConfig().augment


def test_sections_map_onto_training_config():
    cfg = parse_config(
        {
            "sda": {"enabled": False, "sigma": 0.5},
            "gae": {"masked": False},
            "gat": {"bidirectional": True, "warmup_epochs": 3},
            "trainer": {"lr": 0.01, "alpha": 0.1, "augment": {"flip": True}},
            "data": {"image_size": 48},
        }
    )
    tc = cfg.train_config()
    assert tc.components.sda is False and tc.components.masked is False
    assert tc.components.gat_bidirectional is True
    assert tc.gat_warmup_epochs == 3
    assert tc.sigma == 0.5 and tc.lr == 0.01 and tc.weights.alpha == 0.1
    assert tc.augment.flip is True
    assert tc.backbone.image_size == 48


@pytest.mark.parametrize(
    "doc, where",
    [
        ({"sda": {"sigmaa": 1.0}}, "sda.sigmaa"),
        ({"bogus": {}}, "bogus"),
        ({"trainer": {"augment": {"rotate": True}}}, "trainer.augment.rotate"),
        ({"ablation": {"sweep": {"deltas": [1.0]}}}, "ablation.sweep.deltas"),
    ],
)
def test_unknown_keys_are_named(doc, where):
    with pytest.raises(ConfigurationError, match=f"'{where}'"):
        parse_config(doc)


@pytest.mark.parametrize(
    "doc, where",
    [
        ({"trainer": {"epochs": "ten"}}, "trainer.epochs"),
        ({"trainer": {"deterministic": 1}}, "trainer.deterministic"),
        ({"backbone": {"stage_channels": 32}}, "backbone.stage_channels"),
        ({"data": []}, "data"),
    ],
)
def test_wrong_types_are_named(doc, where):
    with pytest.raises(ConfigurationError, match=where):
        parse_config(doc)


@pytest.mark.parametrize(
    "doc",
    [
        {"trainer": {"lr": -1.0}},
        {"trainer": {"gamma": -0.5}},
        {"sda": {"sigma": 0.0}},
        {"data": {"num_classes": 1}},
        {"data": {"image_size": 40}},
    ],
)
def test_semantic_errors(doc):
    with pytest.raises(ConfigurationError):
        parse_config(doc)


def test_yaml_round_trip(tmp_path):
    p = tmp_path / "run.yaml"
    p.write_text("data:\n  num_classes: 10\nablation:\n  seeds: [0, 1]\n  sweep: {}\n")
    cfg = load_config(p)
    assert cfg.data.num_classes == 10
    assert cfg.ablation.seeds == [0, 1]
    assert cfg.ablation.sweep.alphas == [0.1, 0.3, 0.5]
    echoed = json.loads(echo_config(cfg, tmp_path).read_text())
    assert parse_config(echoed) == cfg


def test_unparseable_yaml(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("data: [unclosed\n")
    with pytest.raises(ConfigurationError, match="cannot parse"):
        load_config(p)
    with pytest.raises(ConfigurationError, match="cannot read"):
        load_config(tmp_path / "missing.yaml")
