"""Pre-test a model over node-organized images into a trace file."""
from __future__ import annotations

import json
import os
import tempfile
import warnings
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError

from . import CREATOR
from .backends import InferenceBackend, load_backend
from .errors import EmptyTrace, ExtractorError, ImageDecodeFailure, ManifestError
from .graphfile import read_graph
from .manifest import ExtractionManifest

TRACE_FORMAT_VERSION = 1

# conventional channel statistics for pretrained image classifiers
_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)


@dataclass(frozen=True)
class ExtractionReport:
    model_ref: str
    head_count: int
    records: int
    skipped: int
    nodes: tuple[str, ...]
    out_path: str


def _decode_image(path: str, size: int) -> np.ndarray:
    """One image file to a normalized (3, size, size) float32 array."""
    try:
        with Image.open(path) as img:
            rgb = img.convert("RGB").resize((size, size), Image.BILINEAR)
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise ImageDecodeFailure(f"{path}: {exc}") from exc
    arr = np.asarray(rgb, dtype=np.float32) / 255.0
    arr = (arr - _MEAN) / _STD
    return arr.transpose(2, 0, 1)


def _node_logits(
    backend: InferenceBackend, files: list[str], batch_size: int
) -> tuple[list[np.ndarray], int]:
    rows: list[np.ndarray] = []
    skipped = 0
    batch: list[np.ndarray] = []

    def flush() -> None:
        if batch:
            rows.extend(backend.logits(np.stack(batch)))
            batch.clear()

    for path in files:
        try:
            batch.append(_decode_image(path, backend.input_size))
        except ImageDecodeFailure as exc:
            warnings.warn(f"skipping undecodable image: {exc}")
            skipped += 1
            continue
        if len(batch) == batch_size:
            flush()
    flush()
    return rows, skipped


def _dump_line(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, allow_nan=False,
                      separators=(",", ":"))


def _atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".extract-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def extract_trace(manifest: ExtractionManifest, out_path: str) -> ExtractionReport:
    """Run the model over every node folder and write the trace stream.

    Each image contributes one logit row to its node's block; images
    that fail to decode are skipped with a warning and counted in the
    report. Raises EmptyTrace when nothing at all was decodable and
    ManifestError when a folder name is not a node id of the referenced
    graph (or the graph version disagrees with the manifest's pin).
    """
    version, node_ids = read_graph(manifest.sdag)
    if manifest.sdag_version is not None and manifest.sdag_version != version:
        raise ManifestError(
            f"manifest pins graph version {manifest.sdag_version}, "
            f"file has {version}"
        )
    if not os.path.isdir(manifest.image_root):
        raise ManifestError(f"no such image root: {manifest.image_root}")
    subdirs = sorted(
        name
        for name in os.listdir(manifest.image_root)
        if os.path.isdir(os.path.join(manifest.image_root, name))
    )
    unknown = [name for name in subdirs if name not in node_ids]
    if unknown:
        raise ManifestError(
            f"image folders are not node ids of {manifest.sdag}: {unknown}"
        )

    backend = load_backend(manifest.model, manifest.device)
    blocks: dict[str, list[np.ndarray]] = {}
    skipped = 0
    for node_id in subdirs:
        folder = os.path.join(manifest.image_root, node_id)
        files = sorted(
            os.path.join(folder, name)
            for name in os.listdir(folder)
            if os.path.isfile(os.path.join(folder, name))
        )
        rows, node_skipped = _node_logits(backend, files, manifest.batch_size)
        skipped += node_skipped
        if rows:
            blocks[node_id] = rows
    if not blocks:
        raise EmptyTrace(f"no decodable images under {manifest.image_root}")

    header = {
        "format": "trace",
        "format_version": TRACE_FORMAT_VERSION,
        "creator": CREATOR,
        "model_id": manifest.model,
        "head_count": backend.head_count,
        "sdag_version": version,
        "node_count": len(blocks),
    }
    lines = [_dump_line(header)]
    records = 0
    for node_id in sorted(blocks):
        rows = blocks[node_id]
        for i, row in enumerate(rows):
            if not np.all(np.isfinite(row)):
                raise ExtractorError(
                    f"model produced non-finite logits for node {node_id!r}, "
                    f"image {i}"
                )
        records += len(rows)
        lines.append(
            _dump_line({"node": node_id, "logits": [list(map(float, row)) for row in rows]})
        )
    _atomic_write(out_path, "\n".join(lines) + "\n")
    return ExtractionReport(
        model_ref=manifest.model,
        head_count=backend.head_count,
        records=records,
        skipped=skipped,
        nodes=tuple(sorted(blocks)),
        out_path=out_path,
    )
