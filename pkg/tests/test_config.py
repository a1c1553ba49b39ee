import json

import pytest

from hypertenet.config import UsageError, config_from_dict, parse_config


def test_empty_file_gives_defaults(tmp_path):
    p = tmp_path / "run.json"
    p.write_text("")
    cfg = parse_config(p)
    assert (cfg.train.dim, cfg.knn.k, cfg.train.max_len, cfg.train.patience) == (64, 50, 300, 20)
    assert (cfg.train.graph_batch, cfg.train.ssn_batch, cfg.train.epochs) == (2048, 256, 300)


def test_flag_overrides_file(tmp_path):
    p = tmp_path / "run.json"
    p.write_text(json.dumps({"knn": {"k": 50}}))
    assert parse_config(p, ["--knn.k=25"]).knn.k == 25
    assert parse_config(p, {"knn.k": 30}).knn.k == 30


@pytest.mark.parametrize(
    "overrides",
    [["--train.lr=-0.1"], ["--train.bogus=1"], ["--nope.k=1"], ["--train.dropout=1.0"], ["--train.heads=3"],
     ["--train.disable_uhgnn=maybe"], ["--knn.k=abc"], ["--data.min_list_len=2"], ["train.lr"]],
)
def test_bad_values_are_usage_errors(overrides):
    with pytest.raises(UsageError):
        parse_config(None, overrides)


def test_unknown_key_names_the_offender():
    with pytest.raises(UsageError, match="train.colour"):
        config_from_dict({"train": {"colour": "red"}})


def test_ssn_only_implies_other_flags():
    cfg = parse_config(None, ["--train.ssn_only=true"])
    assert cfg.train.disable_uhgnn and cfg.train.disable_mgnn_feed


def test_fingerprint_tracks_content():
    a = parse_config(None, [])
    b = parse_config(None, ["--train.seed=1"])
    assert a.fingerprint() == parse_config(None, []).fingerprint()
    assert a.fingerprint() != b.fingerprint()


def test_invalid_json(tmp_path):
    p = tmp_path / "run.json"
    p.write_text("{nope")
    with pytest.raises(UsageError, match="invalid JSON"):
        parse_config(p)
