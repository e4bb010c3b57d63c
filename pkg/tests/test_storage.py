"""
Tests for artifact persistence and the run manifest.
"""
import hashlib
import json

import pandas as pd
import pytest

from attestation_forecast.errors import MissingInputError, ParseError
from attestation_forecast.models import ModelSpec, RunConfig, TransformSpec
from attestation_forecast.storage import (
    MANIFEST_NAME,
    ArtifactStore,
    compute_sha256,
    config_hash,
    load_json_artifact,
    write_json_artifact,
)


def test_json_artifact_is_wrapped_and_reloads(tmp_path):
    path = write_json_artifact(tmp_path / "spec.json", "model_spec", ModelSpec(K=3, ci_level=0.9))
    document = json.loads(path.read_text())

    assert document["schema_version"] == "1.0"
    assert document["kind"] == "model_spec"
    assert document["data"]["K"] == 3
    assert path.read_text().endswith("}\n")
    assert load_json_artifact(path, ModelSpec, kind="model_spec") == ModelSpec(K=3, ci_level=0.9)


def test_load_json_artifact_rejects_bad_documents(tmp_path):
    path = write_json_artifact(tmp_path / "spec.json", "model_spec", ModelSpec(K=1))
    with pytest.raises(ParseError):
        load_json_artifact(path, ModelSpec, kind="granger")
    invalid = write_json_artifact(tmp_path / "invalid.json", "transform_spec", {"ma_window": 0})
    with pytest.raises(ParseError, match="TransformSpec"):
        load_json_artifact(invalid, TransformSpec)

    document = json.loads(path.read_text())
    document["schema_version"] = "2.0"
    path.write_text(json.dumps(document))
    with pytest.raises(ParseError, match="schema_version"):
        load_json_artifact(path, ModelSpec)

    path.write_text("{not json")
    with pytest.raises(ParseError):
        load_json_artifact(path, ModelSpec)
    with pytest.raises(MissingInputError):
        load_json_artifact(tmp_path / "absent.json", ModelSpec)


def test_compute_sha256(tmp_path):
    path = tmp_path / "blob.bin"
    path.write_bytes(b"x" * 20000)
    assert compute_sha256(path, chunk_size=64) == hashlib.sha256(b"x" * 20000).hexdigest()


def test_config_hash_is_canonical():
    assert config_hash(RunConfig(k_max=10)) == config_hash(RunConfig(k_max=10))
    assert config_hash(RunConfig(k_max=10)) != config_hash(RunConfig(k_max=11))


def test_manifest_lists_artifacts_and_inputs(tmp_path):
    source = tmp_path / "census.csv"
    source.write_text("date,unit_id,census\n")
    store = ArtifactStore(str(tmp_path / "run"))
    store.save_csv("table.csv", pd.DataFrame({"a": [1.0, 2.5]}))
    store.save_text("note.txt", "hello")
    store.save_json("spec.json", "model_spec", ModelSpec(K=2))

    path = store.write_manifest(RunConfig(), {"census": str(source), "zipmap": None})
    manifest = json.loads(path.read_text())["data"]

    assert path.name == MANIFEST_NAME
    assert [a["name"] for a in manifest["artifacts"]] == ["note.txt", "spec.json", "table.csv"]
    for artifact in manifest["artifacts"]:
        assert artifact["sha256"] == compute_sha256(store.path(artifact["name"]))
    assert set(manifest["inputs"]) == {"census"}
    assert manifest["inputs"]["census"]["sha256"] == compute_sha256(source)
    assert manifest["config_hash"] == config_hash(RunConfig())
    assert "generated_at" not in manifest
    assert store.path("note.txt").read_text() == "hello\n"


def test_manifest_timestamp_only_on_request(tmp_path):
    store = ArtifactStore(str(tmp_path), timestamps=True)
    store.save_text("a.txt", "a")
    manifest = json.loads(store.write_manifest(RunConfig()).read_text())["data"]
    assert "generated_at" in manifest


def test_adopt_requires_existing_file(tmp_path):
    store = ArtifactStore(str(tmp_path))
    with pytest.raises(MissingInputError):
        store.adopt("missing.csv", "input")
    (tmp_path / "present.csv").write_text("x\n")
    store.adopt("present.csv", "input")
    assert store.artifacts == ["present.csv"]
