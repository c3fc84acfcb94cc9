"""
测试文件格式：示教、语料、模型、观测/预测流、候选基函数
"""

import numpy as np
import orjson
import pytest

from core.basis import BasisFamily
from core.data_model import Observation
from core.errors import ConfigurationError, DataError, LayoutMismatchError
from core.simulator import ScenarioSpec, generate_stream, toy_throw_layout
from utils.io_formats import (
    iter_observations,
    read_candidates,
    read_corpus,
    read_demonstration,
    read_demonstration_set,
    read_model,
    read_observations,
    read_predictions,
    read_scenario,
    write_corpus,
    write_demonstration,
    write_demonstration_set,
    write_json,
    write_model,
    write_observations,
    write_predictions,
)


def test_demonstration_file_is_exact(tmp_path, toy_demos):
    path = write_demonstration(tmp_path / "one.demo", toy_demos[0])
    restored = read_demonstration(path)
    np.testing.assert_array_equal(restored.samples, toy_demos[0].samples)
    assert restored.layout == toy_demos[0].layout
    header = orjson.loads(path.read_text(encoding="utf-8").splitlines()[0])
    assert header["T"] == toy_demos[0].duration


def test_demonstration_set(tmp_path, toy_demos):
    write_demonstration_set(tmp_path / "set", toy_demos[:3], toy_throw_layout(), ScenarioSpec())
    layout, demos = read_demonstration_set(tmp_path / "set")
    assert layout == toy_throw_layout()
    assert len(demos) == 3


def test_empty_demonstration_set(tmp_path):
    write_demonstration_set(tmp_path / "empty", [], toy_throw_layout())
    layout, demos = read_demonstration_set(tmp_path / "empty")
    assert demos == []
    assert layout.total_dofs == 12


def test_missing_manifest(tmp_path):
    with pytest.raises(DataError):
        read_demonstration_set(tmp_path)


def test_model_and_corpus_files(tmp_path, toy_model, toy_training):
    corpus, noise = toy_training
    write_model(tmp_path / "model.json", toy_model, noise, 1e-8)
    write_corpus(tmp_path, corpus)

    model, noise_diag, ridge = read_model(tmp_path / "model.json")
    assert model == toy_model
    np.testing.assert_array_equal(noise_diag, np.diag(noise))
    assert ridge == 1e-8

    restored = read_corpus(tmp_path)
    np.testing.assert_array_equal(restored.weights, corpus.weights)
    np.testing.assert_array_equal(restored.reciprocal_lengths, corpus.reciprocal_lengths)


def test_model_noise_dimension_checked(tmp_path, toy_model):
    write_model(tmp_path / "model.json", toy_model, np.ones(3), 0.0)
    with pytest.raises(DataError):
        read_model(tmp_path / "model.json")


def test_observation_stream_nulls(tmp_path, scenario):
    stream, _ = generate_stream(scenario, seed=0, observed_fraction=0.1)
    path = write_observations(tmp_path / "obs.ndjson", stream)
    first = orjson.loads(path.read_bytes().splitlines()[0])
    assert first["values"][5] is None
    assert first["mask"][5] is False

    restored = read_observations(path, dimension=12)
    assert [o.tick for o in restored] == [o.tick for o in stream]
    np.testing.assert_array_equal(restored[3].mask, stream[3].mask)


def test_observation_dimension_mismatch(tmp_path):
    write_observations(tmp_path / "obs.ndjson", [Observation([1.0, 2.0], [True, True], 0)])
    with pytest.raises(LayoutMismatchError) as info:
        list(iter_observations(tmp_path / "obs.ndjson", dimension=12))
    assert info.value.tick == 0


def test_malformed_observation_line(tmp_path):
    path = tmp_path / "bad.ndjson"
    path.write_text('{"tick": 0, "values": [1.0], "mask": [true]}\n{"tick": 1, "values": \n', encoding="utf-8")
    with pytest.raises(DataError):
        read_observations(path)


def test_predictions(tmp_path):
    records = [{"tick": 0, "phase_mean": 0.0, "phase_var": 0.0, "y_hat": [1.0, 2.0]}]
    write_predictions(tmp_path / "pred.ndjson", records)
    assert read_predictions(tmp_path / "pred.ndjson") == records


def test_candidates_per_modality(tmp_path):
    write_json(tmp_path / "candidates.json", {
        "default": [{"kind": "polynomial", "degree": 3}],
        "modalities": {"ball": [{"kind": "sigmoid", "count": 6}]},
    })
    candidates = read_candidates(tmp_path / "candidates.json", toy_throw_layout())
    assert len(candidates) == 12
    assert candidates[0] == [BasisFamily.polynomial(3)]
    assert candidates[5] == [BasisFamily.sigmoid(6)]


def test_candidates_unknown_modality(tmp_path):
    write_json(tmp_path / "candidates.json", {"modalities": {"lidar": [{"kind": "polynomial", "degree": 1}]}})
    with pytest.raises(LayoutMismatchError):
        read_candidates(tmp_path / "candidates.json", toy_throw_layout())


def test_scenario_file(tmp_path):
    write_json(tmp_path / "scenario.json", {"duration_range": [40, 50]})
    assert read_scenario(tmp_path / "scenario.json").duration_range == (40, 50)
    assert read_scenario(None) == ScenarioSpec()
    write_json(tmp_path / "bad.json", {"release_phase": 2.0})
    with pytest.raises(ConfigurationError):
        read_scenario(tmp_path / "bad.json")


def test_json_accepts_array_views(tmp_path):
    matrix = np.arange(6.0).reshape(2, 3)
    path = write_json(tmp_path / "views.json", {"t": matrix.T, "diag": np.diag(np.diag([1.0, 2.0])), "col": matrix[:, 1]})
    data = orjson.loads(path.read_bytes())
    assert data["t"] == [[0.0, 3.0], [1.0, 4.0], [2.0, 5.0]]
    assert data["col"] == [1.0, 4.0]


def test_model_noise_from_strided_vector(tmp_path, toy_model):
    noise = np.arange(1.0, 25.0).reshape(12, 2)[:, 0]
    write_model(tmp_path / "model.json", toy_model, noise, 0.0)
    _, noise_diag, _ = read_model(tmp_path / "model.json")
    np.testing.assert_array_equal(noise_diag, noise)


def test_manifest_without_layout(tmp_path):
    write_demonstration_set(tmp_path / "set", [], toy_throw_layout())
    write_json(tmp_path / "set" / "manifest.json", {"count": 0, "files": []})
    with pytest.raises(DataError):
        read_demonstration_set(tmp_path / "set")


def test_model_without_noise(tmp_path, toy_model):
    path = write_model(tmp_path / "model.json", toy_model, np.ones(12), 0.0)
    data = orjson.loads(path.read_bytes())
    del data["measurement_noise"]
    write_json(path, data)
    with pytest.raises(DataError):
        read_model(path)


def test_demonstration_header_without_duration(tmp_path, toy_demos):
    path = write_demonstration(tmp_path / "one.demo", toy_demos[0])
    header, _, body = path.read_text(encoding="utf-8").partition("\n")
    data = orjson.loads(header)
    del data["T"]
    path.write_text(orjson.dumps(data).decode("utf-8") + "\n" + body, encoding="utf-8")
    with pytest.raises(DataError):
        read_demonstration(path)
