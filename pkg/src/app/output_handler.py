"""Writes command outputs and their run manifest to an output directory.

The manifest is always written before any other output. JSON is written with
sorted keys and no wall-clock fields, so identical runs produce identical
bytes.
"""

import json
import math
from collections.abc import Sequence
from importlib import metadata
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from app import __version__
from app.tags import TagStream, write_tag_file
from app.utils.redactor import redact_dict
from app.utils.safe_logger import safe_info
from app.utils.setup_logger import setup_logger
from app.utils.types import RunManifest

logger = setup_logger(__name__)

MANIFEST_NAME = "manifest.json"
VERSIONED_PACKAGES = ("numpy", "scipy", "pandas", "allantools")


def package_versions() -> dict[str, str]:
    """Versions of pairsync and its numerical stack."""
    versions = {"pairsync": __version__}
    for name in VERSIONED_PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "unknown"
    return versions


def to_jsonable(obj: Any) -> Any:
    """Convert numpy scalars/arrays to plain types and non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return to_jsonable(obj.item())
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def dumps(data: Any) -> str:
    """Deterministic JSON text."""
    return json.dumps(to_jsonable(data), sort_keys=True, indent=2, allow_nan=False) + "\n"


class ArtifactWriter:
    """Output directory of one command run."""

    def __init__(
        self,
        out_dir: str | Path,
        command: str,
        argv: Sequence[str],
        config_path: str | None = None,
        seed: int | None = None,
        settings: dict[str, Any] | None = None,
    ) -> None:
        """Prepare (and create) the output directory.

        Args:
            out_dir (str | Path): Target directory.
            command (str): Subcommand name.
            argv (Sequence[str]): Full argument vector of the run.
            config_path (Optional[str]): Experiment file, if any.
            seed (Optional[int]): Effective seed, if any.
            settings (Optional[dict]): Resolved settings; sensitive keys are redacted.

        """
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.command = command
        self.argv = list(argv)
        self.config_path = config_path
        self.seed = seed
        self.settings = redact_dict(dict(settings or {}))
        self.planned: list[str] = []
        self.written: list[str] = []

    def path(self, name: str) -> Path:
        return self.out_dir / name

    def write_manifest(self, outputs: Sequence[str]) -> Path:
        """Write manifest.json naming the outputs that will follow."""
        self.planned = sorted(outputs)
        manifest = RunManifest(
            command=self.command,
            argv=self.argv,
            config_path=self.config_path,
            seed=self.seed,
            outputs=self.planned,
            versions=package_versions(),
            settings=self.settings,
        )
        target = self.path(MANIFEST_NAME)
        target.write_text(dumps(manifest), encoding="utf-8")
        safe_info("🧾 Run manifest written", {"command": self.command, **self.settings})
        return target

    def _check(self, name: str) -> Path:
        if name not in self.planned:
            raise ValueError(f"output {name!r} is not listed in the manifest")
        self.written.append(name)
        return self.path(name)

    def write_json(self, name: str, data: Any) -> Path:
        target = self._check(name)
        target.write_text(dumps(data), encoding="utf-8")
        logger.info("📝 Wrote %s", target)
        return target

    def write_csv(self, name: str, frame: pd.DataFrame) -> Path:
        target = self._check(name)
        frame.to_csv(target, index=False, lineterminator="\n")
        logger.info("📝 Wrote %s (%d rows)", target, len(frame))
        return target

    def write_text(self, name: str, text: str) -> Path:
        target = self._check(name)
        target.write_text(text, encoding="utf-8")
        logger.info("📝 Wrote %s", target)
        return target

    def write_tags(self, name: str, stream: TagStream) -> Path:
        target = self._check(name)
        size = write_tag_file(target, stream)
        logger.info("📝 Wrote %s (%d tags, %d bytes)", target, len(stream), size)
        return target


__all__ = ["ArtifactWriter", "dumps", "package_versions", "to_jsonable", "MANIFEST_NAME"]
