"""
Artifact storage module - Persist and load pipeline artifacts.

JSON artifacts are wrapped with a schema version and a kind so they can be
reloaded and validated later. Every run directory gets a manifest with the
SHA-256 of each artifact, of the run configuration and of the input files.
"""
import hashlib
import json
import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Type, TypeVar, Union

import pandas as pd
from pydantic import BaseModel, ValidationError

from attestation_forecast.errors import MissingInputError, ParseError
from attestation_forecast.models import SCHEMA_VERSION

logger = logging.getLogger(__name__)

ModelT = TypeVar("ModelT", bound=BaseModel)
Payload = Union[BaseModel, List[BaseModel], dict, list]

MANIFEST_NAME = "manifest.json"


def compute_sha256(file_path: Path, chunk_size: int = 8192) -> str:
    """
    Compute SHA-256 hash of file.

    Args:
        file_path: Path to file
        chunk_size: Size of chunks to read

    Returns:
        SHA-256 hash as hex string
    """
    sha256 = hashlib.sha256()
    with open(file_path, 'rb') as f:
        while chunk := f.read(chunk_size):
            sha256.update(chunk)
    return sha256.hexdigest()


def config_hash(config: BaseModel) -> str:
    """SHA-256 of the canonical (sorted, compact) JSON form of a config."""
    canonical = json.dumps(config.model_dump(mode='json'), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _to_jsonable(payload: Payload):
    if isinstance(payload, BaseModel):
        return payload.model_dump(mode='json')
    if isinstance(payload, list):
        return [_to_jsonable(item) for item in payload]
    return payload


def write_json_artifact(path: Path, kind: str, payload: Payload) -> Path:
    """Write ``payload`` wrapped as {schema_version, kind, data}."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    document = {"schema_version": SCHEMA_VERSION, "kind": kind, "data": _to_jsonable(payload)}
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        json.dump(document, f, indent=2, ensure_ascii=False)
        f.write("\n")
    return path


def load_json_artifact(path: Path, model: Type[ModelT], kind: Optional[str] = None) -> ModelT:
    """
    Load a wrapped JSON artifact and validate its payload.

    Args:
        path: Artifact file
        model: Pydantic model of the payload
        kind: Expected kind; checked when given

    Returns:
        Validated model instance

    Raises:
        MissingInputError: If the file does not exist
        ParseError: On unknown schema version, kind mismatch or invalid payload
    """
    path = Path(path)
    if not path.exists():
        raise MissingInputError(path)

    with open(path, 'r', encoding='utf-8') as f:
        try:
            document = json.load(f)
        except json.JSONDecodeError as e:
            raise ParseError(f"{path}: invalid JSON ({e})") from e

    version = document.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ParseError(f"{path}: unsupported schema_version {version!r}")
    if kind is not None and document.get("kind") != kind:
        raise ParseError(f"{path}: expected kind {kind!r}, found {document.get('kind')!r}")
    try:
        return model.model_validate(document["data"])
    except (KeyError, ValidationError) as e:
        raise ParseError(f"{path}: invalid {model.__name__} payload ({e})") from e


class ArtifactStore:
    """Writes a run's artifacts into one directory and keeps its manifest."""

    def __init__(self, output_dir: str, timestamps: bool = False):
        """
        Initialize storage.

        Args:
            output_dir: Directory for artifacts (created on first write)
            timestamps: Record generation time in the manifest
        """
        self.output_dir = Path(output_dir)
        self.timestamps = timestamps
        self._artifacts: Dict[str, str] = {}

    def path(self, name: str) -> Path:
        return self.output_dir / name

    @property
    def artifacts(self) -> List[str]:
        return sorted(self._artifacts)

    def _record(self, name: str, kind: str) -> Path:
        self._artifacts[name] = kind
        logger.info(f"Wrote {kind} artifact {self.path(name)}")
        return self.path(name)

    def save_json(self, name: str, kind: str, payload: Payload) -> Path:
        write_json_artifact(self.path(name), kind, payload)
        return self._record(name, kind)

    def save_csv(self, name: str, frame: pd.DataFrame, kind: str = "table") -> Path:
        self.output_dir.mkdir(parents=True, exist_ok=True)
        frame.to_csv(self.path(name), index=False, lineterminator="\n", float_format="%.10g")
        return self._record(name, kind)

    def save_text(self, name: str, text: str, kind: str = "report") -> Path:
        self.output_dir.mkdir(parents=True, exist_ok=True)
        with open(self.path(name), 'w', encoding='utf-8', newline='\n') as f:
            f.write(text if text.endswith("\n") else text + "\n")
        return self._record(name, kind)

    def adopt(self, name: str, kind: str) -> Path:
        """Register a file written by another component."""
        if not self.path(name).exists():
            raise MissingInputError(self.path(name))
        return self._record(name, kind)

    def write_manifest(self, config: BaseModel, inputs: Optional[Dict[str, Optional[str]]] = None) -> Path:
        """
        Write manifest.json for everything saved so far.

        Args:
            config: Effective run configuration
            inputs: Named input files to hash (None entries are skipped)

        Returns:
            Path of the manifest
        """
        input_hashes = {}
        for name, location in sorted((inputs or {}).items()):
            if location is None:
                continue
            input_hashes[name] = {"path": str(location), "sha256": compute_sha256(Path(location))}

        manifest = {
            "config_hash": config_hash(config),
            "inputs": input_hashes,
            "artifacts": [
                {"name": name, "kind": self._artifacts[name], "sha256": compute_sha256(self.path(name))}
                for name in self.artifacts
            ],
        }
        if self.timestamps:
            manifest["generated_at"] = datetime.now(timezone.utc).isoformat(timespec="seconds")
        path = write_json_artifact(self.path(MANIFEST_NAME), "manifest", manifest)
        logger.info(f"Manifest lists {len(self._artifacts)} artifacts")
        return path
