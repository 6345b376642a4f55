import json

import pytest

from sparsebench.config import ConfigError, RunConfig


def test_validation_enumerates_every_problem(tmp_path):
    cfg = RunConfig({"name": "", "model": {"kind": "cnn"}, "train": {"batch_size": 0},
                     "prune": {"s_f": 1.5}, "bench": {"latency_fraction": 0}})
    with pytest.raises(ConfigError) as err:
        cfg.validate()
    fields = " ".join(err.value.problems)
    for f in ("seed", "name", "model.kind", "train.batch_size", "prune.s_i/s_f", "bench.latency_fraction",
              "data"):
        assert f in fields
    assert len(err.value.problems) >= 7


def test_missing_input_files_reported(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"seed": 1, "data": {"train_csv": ["a.csv"], "label_mapping": {"x": "DoS"}}}))
    with pytest.raises(ConfigError, match="a.csv"):
        RunConfig.load(path).validate()


def test_overrides_and_fast():
    cfg = RunConfig({"data": {"synth": {}}}).override(seed=4, fast=True, label_col="Label").validate()
    assert cfg.seed == 4 and cfg["data"]["label_col"] == "Label"
    assert cfg.effective("shap")["background_count"] == 20
    assert cfg.effective("train")["max_epochs"] == 10
    assert cfg["data"]["synth"]["feature_count"] == 49


def test_digest_tracks_content():
    a = RunConfig({"seed": 1, "data": {"synth": {}}})
    b = RunConfig({"seed": 1, "data": {"synth": {}}})
    assert a.digest() == b.digest()
    assert a.digest() != b.override(seed=2).digest()


def test_invalid_json(tmp_path):
    path = tmp_path / "c.json"
    path.write_text("{nope")
    with pytest.raises(ConfigError):
        RunConfig.load(path)
