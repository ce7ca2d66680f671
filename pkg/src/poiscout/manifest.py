"""Run provenance: digests of config and inputs, tool version, wall-clock span."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

from . import __version__


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return "sha256:" + h.hexdigest()


def config_digest(config: dict[str, Any]) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return "sha256:" + hashlib.sha256(blob.encode("utf-8")).hexdigest()


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds").replace("+00:00", "Z")


@dataclass
class RunManifest:
    command: str
    config: dict[str, Any]
    inputs: list[str | Path] = field(default_factory=list)
    started_at: str = field(default_factory=utc_now)
    finished_at: str | None = None
    diagnostics: dict[str, Any] = field(default_factory=dict)
    outputs: list[str] = field(default_factory=list)

    def finish(self) -> dict[str, Any]:
        self.finished_at = utc_now()
        return {
            "command": self.command,
            "tool_version": __version__,
            "config_digest": config_digest(self.config),
            "config": self.config,
            "input_digests": [[str(p), file_digest(p)] for p in self.inputs],
            "outputs": self.outputs,
            "diagnostics": self.diagnostics,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
        }

    def write(self, path: str | Path) -> dict[str, Any]:
        doc = self.finish()
        Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return doc

