"""
Run Manifest

Records what a run consumed and produced: configuration and input hashes,
per-stage status, counts and drop ledgers, and the hash of every output file.
The manifest is the only output that carries timestamps.

Copyright (C) 2025 Dynamic Devices Ltd
License: GPL-3.0-or-later
"""

import hashlib
import json
import time
from contextlib import contextmanager
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Union

from blitz_eval.exceptions import BlitzEvalError, StageError
from blitz_eval.utils.logger import get_logger, log_stage_result, log_stage_start
from blitz_eval.version import __version__

logger = get_logger()

MANIFEST_FILE = "manifest.json"
HASH_CHUNK = 1 << 20


def sha256_file(path: Union[str, Path]) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(HASH_CHUNK), b""):
            digest.update(chunk)
    return digest.hexdigest()


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def write_json(path: Union[str, Path], data: Dict[str, Any]) -> Path:
    """Deterministic JSON: sorted keys, two-space indent, trailing newline"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


class RunManifest:
    """Tracks the stages and outputs of one run"""

    def __init__(
        self,
        output_dir: Union[str, Path],
        config_json: str,
        inputs: Optional[Dict[str, Union[str, Path, None]]] = None,
        command: str = "pipeline",
        filename: str = MANIFEST_FILE,
    ):
        self.output_dir = Path(output_dir)
        self.command = command
        self.filename = filename
        self.config_hash = sha256_text(config_json)
        self.input_hashes: Dict[str, Optional[str]] = {}
        for name, path in sorted((inputs or {}).items()):
            if path is not None and Path(path).is_file():
                self.input_hashes[name] = sha256_file(path)
            else:
                self.input_hashes[name] = None
        self.run_hash = sha256_text(
            json.dumps({"config": self.config_hash, "inputs": self.input_hashes}, sort_keys=True)
        )
        self.started_at = _now()
        self.finished_at: Optional[str] = None
        self.stages: List[Dict[str, Any]] = []
        self.outputs: Dict[str, str] = {}
        self.failed_stage: Optional[str] = None

    @contextmanager
    def stage(self, name: str, **context: Any) -> Iterator[Dict[str, Any]]:
        """
        Run a stage: yields a record whose ``counts`` and ``drops`` the stage fills.

        A failing stage is recorded, the manifest saved, and the error
        re-raised as StageError.
        """
        record: Dict[str, Any] = {"name": name, "status": "running", "started_at": _now(), "counts": {}}
        self.stages.append(record)
        log_stage_start(name, **context)
        t0 = time.time()
        try:
            yield record
        except Exception as e:
            record["status"] = "failed"
            record["error"] = e.to_dict() if isinstance(e, BlitzEvalError) else {
                "error": str(e),
                "error_type": type(e).__name__,
            }
            record["finished_at"] = _now()
            record["duration_s"] = round(time.time() - t0, 3)
            self.failed_stage = self.failed_stage or name
            log_stage_result(name, False, error=str(e))
            logger.error(f"Stage {name} failed", exc_info=True)
            self.save()
            if isinstance(e, StageError):
                raise
            raise StageError(f"Stage {name!r} failed: {e}", stage=name, details={"cause": type(e).__name__}) from e
        record["status"] = "ok"
        record["finished_at"] = _now()
        record["duration_s"] = round(time.time() - t0, 3)
        log_stage_result(name, True, counts=record["counts"])

    def record_output(self, path: Union[str, Path]) -> Path:
        """Hash a written file and register it (path relative to the output dir)"""
        path = Path(path)
        try:
            key = path.resolve().relative_to(self.output_dir.resolve()).as_posix()
        except ValueError:
            key = str(path)
        self.outputs[key] = sha256_file(path)
        return path

    def record_outputs(self, paths) -> None:
        for path in paths:
            self.record_output(path)

    @property
    def succeeded(self) -> bool:
        return self.failed_stage is None and all(s["status"] == "ok" for s in self.stages)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "artifact_version": __version__,
            "command": self.command,
            "run_hash": self.run_hash,
            "config_hash": self.config_hash,
            "input_hashes": dict(self.input_hashes),
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "status": "ok" if self.succeeded else "failed",
            "failed_stage": self.failed_stage,
            "stages": self.stages,
            "outputs": dict(sorted(self.outputs.items())),
        }

    def save(self) -> Path:
        self.finished_at = _now()
        path = write_json(self.output_dir / self.filename, self.to_dict())
        logger.debug(f"Manifest written: {path}")
        return path

    def get_summary(self) -> Dict[str, Any]:
        return {
            "run_hash": self.run_hash,
            "status": "ok" if self.succeeded else "failed",
            "failed_stage": self.failed_stage,
            "stages": {s["name"]: s["status"] for s in self.stages},
            "n_outputs": len(self.outputs),
            "manifest": str(self.output_dir / self.filename),
        }
