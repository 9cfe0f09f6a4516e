"""Extraction manifest: what to run over which images."""
from __future__ import annotations

import json
from dataclasses import dataclass, fields

from .errors import ManifestError


@dataclass(frozen=True)
class ExtractionManifest:
    """One pre-test job.

    ``image_root`` holds one subdirectory per graph node id;
    ``sdag_version`` optionally pins the graph version the job expects
    (extraction fails if the referenced graph file disagrees).
    ``device`` is a hint: an unavailable device falls back to CPU with
    a warning.
    """

    model: str
    image_root: str
    sdag: str
    sdag_version: int | None = None
    batch_size: int = 8
    device: str = "cpu"

    def __post_init__(self) -> None:
        if not self.model:
            raise ManifestError("manifest needs a model reference")
        if not self.image_root or not self.sdag:
            raise ManifestError("manifest needs image_root and sdag paths")
        if self.batch_size < 1:
            raise ManifestError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.sdag_version is not None and self.sdag_version < 1:
            raise ManifestError(f"invalid sdag_version {self.sdag_version}")


def load_manifest(path: str) -> ExtractionManifest:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            doc = json.load(handle)
    except OSError as exc:
        raise ManifestError(f"cannot read manifest: {exc}") from exc
    except (json.JSONDecodeError, UnicodeDecodeError, ValueError) as exc:
        raise ManifestError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ManifestError(f"{path}: manifest must be a JSON object")
    known = {f.name for f in fields(ExtractionManifest)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ManifestError(f"{path}: unknown manifest fields {unknown}")
    missing = sorted(
        name for name in ("model", "image_root", "sdag") if name not in doc
    )
    if missing:
        raise ManifestError(f"{path}: missing manifest fields {missing}")
    try:
        return ExtractionManifest(**doc)
    except TypeError as exc:
        raise ManifestError(f"{path}: bad manifest: {exc}") from exc
