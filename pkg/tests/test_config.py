import json

import pytest

from texthawk_kit.config import ConfigError, RunConfig
from texthawk_kit.resampler import ROUTING_TABLES


def test_defaults():
    cfg = RunConfig()
    assert cfg.routing.stages == ROUTING_TABLES["R5"]
    assert (cfg.crop.k, cfg.crop.n, cfg.crop.l) == (9, 36, 12)
    assert (cfg.losses.alpha, cfg.losses.lam) == (0.25, 1.0)
    assert cfg.resampler.queries_per_subimage == 64 and cfg.resampler.depth == 8
    assert cfg.encoder.tap_layers == (2, 4, 6, 8)


def test_round_trip_materialises_defaults(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"seed": 7, "routing": "R2", "resampler": {"use_qpn": False}}))
    cfg = RunConfig.load(path)
    assert cfg.seed == 7 and cfg.routing.stages == ROUTING_TABLES["R2"] and not cfg.resampler.use_qpn
    cfg.save(tmp_path / "full.json")
    full = json.loads((tmp_path / "full.json").read_text())
    assert full["crop"]["k"] == 9 and full["routing"] == list(ROUTING_TABLES["R2"])
    assert RunConfig.load(tmp_path / "full.json") == cfg


@pytest.mark.parametrize("raw, msg", [
    ({"encoder": {"dim": 32, "heads": 4}}, "encoder.dim"),
    ({"routing": [3, 3, 3]}, "routing has 3"),
    ({"llm": {"dim": 64}}, "llm.dim"),
    ({"crop": {"p": 16}}, "crop.p"),
    ({"resampler": {"queries_per_subimage": 32}}, "queries"),
    ({"bogus": {}}, "unknown config sections"),
    ({"crop": {"q": 1}}, "unknown keys in crop"),
    ({"routing": "R7"}, "unknown routing"),
    ({"routing": [3, 3, 3, 9, 3, 3, 3, 3]}, "routing entries"),
    ({"seed": -1}, "seed"),
    ({"losses": {"alpha": 0}}, "alpha"),
])
def test_inconsistent_configs_rejected(raw, msg):
    with pytest.raises(ConfigError, match=msg):
        RunConfig.from_dict(raw)


def test_malformed_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        RunConfig.load(p)


def test_toy_keeps_structure():
    cfg = RunConfig().with_routing("R3")
    toy = cfg.toy()
    assert toy.routing == cfg.routing
    assert toy.resampler.depth == cfg.resampler.depth
    assert toy.resampler.use_qpn == cfg.resampler.use_qpn
    assert toy.losses == cfg.losses
    assert toy.crop.patches_per_subimage == 64
