import pytest

from rqeslr.config import build_encoding, load_run_config, parse_run_config
from rqeslr.errors import ConfigError


def test_sections_and_overrides(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("seed: 3\nencoding:\n  mode: rqe-sf\n  levels: [4, 4, 2]\ntrain:\n  lr: 0.01\n")
    cfg = load_run_config(path)
    assert cfg.seed == 3
    assert cfg.section("train", {"lr": None, "batch_size": 8}) == {"lr": 0.01, "batch_size": 8}
    enc = build_encoding(cfg.encoding)
    assert enc.mode == "rqe_sf" and enc.levels == (4, 4, 2)


@pytest.mark.parametrize("doc", [
    {"bogus": 1},
    {"model": {"width": 3}},
    {"train": []},
    [1, 2],
])
def test_rejects_bad_documents(doc):
    with pytest.raises(ConfigError):
        parse_run_config(doc)


def test_bad_yaml_and_values(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("encoding: [unclosed\n")
    with pytest.raises(ConfigError):
        load_run_config(path)
    with pytest.raises(ConfigError):
        build_encoding({"mode": "rqe", "clamp_range": -1})
    assert parse_run_config(None).seed == 0
