"""Artifact persistence: every on-disk format the pipeline reads or writes.

All formats are UTF-8 structured text (JSON documents, or line-delimited
JSON for streams).  Floats are serialised with full round-trip
precision, writers refuse non-finite values and write atomically
(temp file + rename), and nothing here embeds timestamps, so equal
inputs give byte-identical files.

Loaders are strict: a missing or ill-typed field raises SchemaViolation
naming the field, a file that ends mid-record raises TruncatedFile, and
a format version newer than this code raises FormatVersionUnsupported.
Unknown top-level or header fields are ignored with a warning; unknown
fields inside records are ignored silently, so older code can read
files from newer writers that only added record fields.
"""

from __future__ import annotations

import csv
import json
import math
import os
import tempfile
import warnings
from dataclasses import dataclass
from typing import Any

import numpy as np

from . import labelling, reuse, sdag, selection, synth
from .errors import (
    FormatVersionUnsupported,
    SchemaViolation,
    TruncatedFile,
)

CREATOR = "mlhub/0.1.0"

FORMAT_VERSIONS = {
    "sdag": 1,
    "trace": 1,
    "label": 1,
    "selection": 1,
    "predictions": 1,
    "benchmark": 1,
    "outputs": 1,
}


@dataclass(frozen=True)
class FileHeader:
    """Identity block of an artifact file."""

    format_name: str
    format_version: int
    creator: str
    sdag_version: int | None = None


# --- low-level reading and writing ---


def _atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp_path = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


def _reject_constant(text: str) -> float:
    raise ValueError(f"non-finite literal {text!r}")


def _parse_json(text: str, where: str) -> Any:
    try:
        return json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        if exc.pos >= len(text.rstrip()):
            raise TruncatedFile(f"{where}: input ends mid-record") from exc
        raise SchemaViolation(f"{where}: invalid JSON at char {exc.pos}") from exc
    except ValueError as exc:
        raise SchemaViolation(f"{where}: {exc}") from exc


def _read_text(path: str) -> str:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            return handle.read()
    except UnicodeDecodeError as exc:
        raise SchemaViolation(f"{path}: not valid UTF-8") from exc


def _dump_doc(doc: Any) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _dump_line(doc: Any) -> str:
    return json.dumps(doc, sort_keys=True, allow_nan=False, separators=(",", ":"))


# --- field validation helpers ---


def _require_mapping(value: Any, where: str) -> dict:
    if not isinstance(value, dict):
        raise SchemaViolation(f"{where}: expected an object")
    return value


def _get(obj: dict, key: str, where: str) -> Any:
    if key not in obj:
        raise SchemaViolation(f"{where}: missing field {key!r}")
    return obj[key]


def _get_str(obj: dict, key: str, where: str, allow_empty: bool = False) -> str:
    value = _get(obj, key, where)
    if not isinstance(value, str):
        raise SchemaViolation(f"{where}: field {key!r} must be a string")
    if not value and not allow_empty:
        raise SchemaViolation(f"{where}: field {key!r} must be non-empty")
    return value


def _get_int(obj: dict, key: str, where: str, minimum: int | None = None) -> int:
    value = _get(obj, key, where)
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaViolation(f"{where}: field {key!r} must be an integer")
    if minimum is not None and value < minimum:
        raise SchemaViolation(f"{where}: field {key!r} must be >= {minimum}")
    return value


def _as_float(value: Any, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaViolation(f"{where}: expected a number")
    value = float(value)
    if not math.isfinite(value):
        raise SchemaViolation(f"{where}: number must be finite")
    return value


def _get_float(obj: dict, key: str, where: str) -> float:
    return _as_float(_get(obj, key, where), f"{where}: field {key!r}")


def _get_list(obj: dict, key: str, where: str) -> list:
    value = _get(obj, key, where)
    if not isinstance(value, list):
        raise SchemaViolation(f"{where}: field {key!r} must be an array")
    return value


def _float_vector(value: Any, where: str) -> np.ndarray:
    if not isinstance(value, list) or not value:
        raise SchemaViolation(f"{where}: expected a non-empty number array")
    return np.asarray(
        [_as_float(entry, f"{where}[{i}]") for i, entry in enumerate(value)],
        dtype=np.float64,
    )


def _warn_unknown(obj: dict, known: set[str], where: str) -> None:
    unknown = sorted(set(obj) - known)
    if unknown:
        warnings.warn(f"{where}: ignoring unknown fields {unknown}", stacklevel=3)


def _check_header(
    obj: dict, expected_format: str, where: str
) -> tuple[int, str]:
    name = _get_str(obj, "format", where)
    if name != expected_format:
        raise SchemaViolation(
            f"{where}: file holds format {name!r}, expected {expected_format!r}"
        )
    version = _get_int(obj, "format_version", where, minimum=1)
    if version > FORMAT_VERSIONS[expected_format]:
        raise FormatVersionUnsupported(
            f"{where}: format {name!r} version {version} is newer than "
            f"supported version {FORMAT_VERSIONS[expected_format]}"
        )
    creator = _get_str(obj, "creator", where, allow_empty=True)
    return version, creator


def _finite_sequence(values: Any, where: str) -> list[float]:
    arr = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise SchemaViolation(f"{where}: refusing to write non-finite values")
    return [float(v) for v in arr.ravel()]


def _split_lines(text: str, where: str) -> list[str]:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise TruncatedFile(f"{where}: file is empty")
    for i, line in enumerate(lines):
        if not line.strip():
            raise SchemaViolation(f"{where}: line {i + 1} is blank")
    return lines


def read_header(path: str) -> FileHeader:
    """Identify any artifact file without fully parsing it."""
    text = _read_text(path)
    first_line = text.split("\n", 1)[0]
    if first_line.strip().startswith("{") and not first_line.strip().endswith("{"):
        obj = _parse_json(first_line, path)
    else:
        obj = _parse_json(text, path)
    obj = _require_mapping(obj, path)
    if "format" in obj:
        name = _get_str(obj, "format", path)
        return FileHeader(
            format_name=name,
            format_version=_get_int(obj, "format_version", path, minimum=1),
            creator=_get_str(obj, "creator", path, allow_empty=True),
            sdag_version=obj.get("sdag_version")
            if isinstance(obj.get("sdag_version"), int)
            else None,
        )
    if "nodes" in obj and "version" in obj:
        return FileHeader(
            format_name="sdag",
            format_version=1,
            creator="",
            sdag_version=_get_int(obj, "version", path, minimum=1),
        )
    raise SchemaViolation(f"{path}: not a recognised artifact file")


# --- semantic DAG ---

_SDAG_TOP_FIELDS = {"version", "nodes"}
_SDAG_NODE_FIELDS = {"id", "name", "description", "successors", "samples"}


def save_sdag(g: sdag.SDag, path: str) -> None:
    """Write the pinned graph document: top-level version and nodes."""
    doc = {
        "version": g.version,
        "nodes": [
            {
                "id": node.node_id,
                "name": node.name,
                "description": node.description,
                "successors": list(node.successor_ids),
                "samples": list(node.sample_refs),
            }
            for node in (g.nodes[nid] for nid in sorted(g.nodes))
        ],
    }
    _atomic_write(path, _dump_doc(doc))


def load_sdag(path: str) -> sdag.SDag:
    """Read and re-validate a graph document.

    Structural problems raise the graph module's own errors
    (DuplicateNodeId, DanglingSuccessor, CycleDetected); everything else
    raises SchemaViolation.
    """
    obj = _require_mapping(_parse_json(_read_text(path), path), path)
    _warn_unknown(obj, _SDAG_TOP_FIELDS, path)
    version = _get_int(obj, "version", path, minimum=1)
    raw_nodes = _get_list(obj, "nodes", path)
    defs: list[sdag.SemanticNode] = []
    for i, raw in enumerate(raw_nodes):
        where = f"{path}: nodes[{i}]"
        raw = _require_mapping(raw, where)
        successors = _get_list(raw, "successors", where)
        samples = _get_list(raw, "samples", where)
        for j, succ in enumerate(successors):
            if not isinstance(succ, str) or not succ:
                raise SchemaViolation(
                    f"{where}: successors[{j}] must be a non-empty string"
                )
        for j, ref in enumerate(samples):
            if not isinstance(ref, str):
                raise SchemaViolation(f"{where}: samples[{j}] must be a string")
        defs.append(
            sdag.SemanticNode(
                node_id=_get_str(raw, "id", where),
                name=_get_str(raw, "name", where, allow_empty=True),
                description=_get_str(raw, "description", where, allow_empty=True),
                successor_ids=tuple(successors),
                sample_refs=tuple(samples),
            )
        )
    return sdag.build_sdag(defs, version=version)


# --- logit traces ---


def save_trace(trace: labelling.LogitTrace, path: str) -> None:
    """Write a trace stream: header line, then one record per node."""
    node_ids = sorted(trace.node_logits)
    header = {
        "format": "trace",
        "format_version": FORMAT_VERSIONS["trace"],
        "creator": CREATOR,
        "model_id": trace.model_id,
        "head_count": trace.head_count,
        "sdag_version": trace.sdag_version,
        "node_count": len(node_ids),
    }
    lines = [_dump_line(header)]
    for node_id in node_ids:
        block = np.asarray(trace.node_logits[node_id], dtype=np.float64)
        flat = _finite_sequence(block, f"{path}: node {node_id!r}")
        rows = [
            flat[i * trace.head_count : (i + 1) * trace.head_count]
            for i in range(block.shape[0])
        ]
        lines.append(_dump_line({"node": node_id, "logits": rows}))
    _atomic_write(path, "\n".join(lines) + "\n")


_TRACE_HEADER_FIELDS = {
    "format",
    "format_version",
    "creator",
    "model_id",
    "head_count",
    "sdag_version",
    "node_count",
}


def load_trace(path: str) -> labelling.LogitTrace:
    """Read a trace stream back; multiple records for one node append."""
    lines = _split_lines(_read_text(path), path)
    header = _require_mapping(_parse_json(lines[0], f"{path}: header"), f"{path}: header")
    _check_header(header, "trace", f"{path}: header")
    _warn_unknown(header, _TRACE_HEADER_FIELDS, f"{path}: header")
    model_id = _get_str(header, "model_id", f"{path}: header")
    head_count = _get_int(header, "head_count", f"{path}: header", minimum=1)
    sdag_version = _get_int(header, "sdag_version", f"{path}: header", minimum=1)
    node_count = _get_int(header, "node_count", f"{path}: header", minimum=0)

    blocks: dict[str, list[np.ndarray]] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        where = f"{path}: line {lineno}"
        try:
            raw = json.loads(line, parse_constant=_reject_constant)
        except json.JSONDecodeError as exc:
            if lineno == len(lines):
                raise TruncatedFile(f"{where}: input ends mid-record") from exc
            raise SchemaViolation(f"{where}: invalid JSON") from exc
        except ValueError as exc:
            raise SchemaViolation(f"{where}: {exc}") from exc
        raw = _require_mapping(raw, where)
        node_id = _get_str(raw, "node", where)
        rows = _get_list(raw, "logits", where)
        if not rows:
            raise SchemaViolation(f"{where}: empty logits batch")
        parsed = []
        for i, row in enumerate(rows):
            vec = _float_vector(row, f"{where}: logits[{i}]")
            if vec.size != head_count:
                raise SchemaViolation(
                    f"{where}: logits[{i}] has {vec.size} entries, "
                    f"expected {head_count}"
                )
            parsed.append(vec)
        blocks.setdefault(node_id, []).extend(parsed)
    if len(blocks) != node_count:
        raise TruncatedFile(
            f"{path}: header declares {node_count} nodes, found {len(blocks)}"
        )
    return labelling.LogitTrace(
        model_id=model_id,
        head_count=head_count,
        node_logits={nid: np.stack(rows) for nid, rows in blocks.items()},
        sdag_version=sdag_version,
    )


# --- model labels ---

_LABEL_FIELDS = {
    "format",
    "format_version",
    "creator",
    "model_id",
    "head_count",
    "sdag_version",
    "discount",
    "aggregation_mode",
    "scores",
    "node_means",
}


def save_label(label: labelling.ModelLabel, path: str) -> None:
    doc = {
        "format": "label",
        "format_version": FORMAT_VERSIONS["label"],
        "creator": CREATOR,
        "model_id": label.model_id,
        "head_count": label.head_count,
        "sdag_version": label.sdag_version,
        "discount": float(label.discount),
        "aggregation_mode": label.aggregation_mode,
        "scores": {
            nid: _finite_sequence(vec, f"{path}: score {nid!r}")
            for nid, vec in sorted(label.scores.items())
        },
        "node_means": {
            nid: _finite_sequence(vec, f"{path}: mean {nid!r}")
            for nid, vec in sorted(label.node_means.items())
        },
    }
    _atomic_write(path, _dump_doc(doc))


def _load_vector_map(
    obj: dict, key: str, head_count: int, where: str
) -> dict[str, np.ndarray]:
    raw = _get(obj, key, where)
    raw = _require_mapping(raw, f"{where}: field {key!r}")
    out: dict[str, np.ndarray] = {}
    for node_id, vec in raw.items():
        if not node_id:
            raise SchemaViolation(f"{where}: {key} has an empty node id")
        parsed = _float_vector(vec, f"{where}: {key}[{node_id!r}]")
        if parsed.size != head_count:
            raise SchemaViolation(
                f"{where}: {key}[{node_id!r}] has {parsed.size} entries, "
                f"expected {head_count}"
            )
        out[node_id] = parsed
    return out


def load_label(path: str) -> labelling.ModelLabel:
    obj = _require_mapping(_parse_json(_read_text(path), path), path)
    _check_header(obj, "label", path)
    _warn_unknown(obj, _LABEL_FIELDS, path)
    head_count = _get_int(obj, "head_count", path, minimum=1)
    discount = _get_float(obj, "discount", path)
    if not 0.0 <= discount <= 1.0:
        raise SchemaViolation(f"{path}: discount must lie in [0, 1]")
    mode = _get_str(obj, "aggregation_mode", path)
    if mode not in labelling.AGGREGATION_MODES:
        raise SchemaViolation(f"{path}: unknown aggregation_mode {mode!r}")
    scores = _load_vector_map(obj, "scores", head_count, path)
    if not scores:
        raise SchemaViolation(f"{path}: scores must not be empty")
    return labelling.ModelLabel(
        model_id=_get_str(obj, "model_id", path),
        head_count=head_count,
        scores=scores,
        node_means=_load_vector_map(obj, "node_means", head_count, path),
        sdag_version=_get_int(obj, "sdag_version", path, minimum=1),
        discount=discount,
        aggregation_mode=mode,
    )


# --- selection reports ---

_SELECTION_FIELDS = {
    "format",
    "format_version",
    "creator",
    "task_id",
    "class_texts",
    "sdag_version",
    "coverage",
    "models_used",
    "uncovered_classes",
    "ensembles",
}


def save_selection_report(report: selection.SelectionReport, path: str) -> None:
    if not math.isfinite(report.coverage):
        raise SchemaViolation(f"{path}: coverage must be finite")
    ensembles = {}
    for class_idx in sorted(report.ensembles):
        spec = report.ensembles[class_idx]
        for member in spec.members:
            if not math.isfinite(member.reuse_score):
                raise SchemaViolation(f"{path}: member score must be finite")
        ensembles[str(class_idx)] = {
            "class_node": spec.class_node,
            "members": [
                {
                    "model_id": member.model_id,
                    "score": float(member.reuse_score),
                    "column": _finite_sequence(
                        member.combination_column,
                        f"{path}: ensemble {class_idx} member {member.model_id!r}",
                    ),
                }
                for member in spec.members
            ],
        }
    doc = {
        "format": "selection",
        "format_version": FORMAT_VERSIONS["selection"],
        "creator": CREATOR,
        "task_id": report.task_id,
        "class_texts": list(report.class_texts),
        "sdag_version": report.sdag_version,
        "coverage": float(report.coverage),
        "models_used": report.models_used,
        "uncovered_classes": list(report.uncovered_classes),
        "ensembles": ensembles,
    }
    _atomic_write(path, _dump_doc(doc))


def load_selection_report(path: str) -> selection.SelectionReport:
    obj = _require_mapping(_parse_json(_read_text(path), path), path)
    _check_header(obj, "selection", path)
    _warn_unknown(obj, _SELECTION_FIELDS, path)
    class_texts = _get_list(obj, "class_texts", path)
    for i, text in enumerate(class_texts):
        if not isinstance(text, str) or not text:
            raise SchemaViolation(f"{path}: class_texts[{i}] must be non-empty")
    num_classes = len(class_texts)
    if num_classes == 0:
        raise SchemaViolation(f"{path}: class_texts must not be empty")

    raw_ensembles = _require_mapping(_get(obj, "ensembles", path), f"{path}: ensembles")
    ensembles: dict[int, selection.EnsembleSpec] = {}
    used_models: set[str] = set()
    for key, raw_spec in raw_ensembles.items():
        where = f"{path}: ensembles[{key!r}]"
        try:
            class_idx = int(key)
        except ValueError as exc:
            raise SchemaViolation(f"{where}: key must be a class index") from exc
        if not 0 <= class_idx < num_classes:
            raise SchemaViolation(f"{where}: class index out of range")
        raw_spec = _require_mapping(raw_spec, where)
        class_node = _get_str(raw_spec, "class_node", where)
        members = []
        for i, raw_member in enumerate(_get_list(raw_spec, "members", where)):
            member_where = f"{where}: members[{i}]"
            raw_member = _require_mapping(raw_member, member_where)
            members.append(
                selection.ExpertPredictor(
                    model_id=_get_str(raw_member, "model_id", member_where),
                    class_node=class_node,
                    combination_column=_float_vector(
                        _get(raw_member, "column", member_where), member_where
                    ),
                    reuse_score=_get_float(raw_member, "score", member_where),
                )
            )
        if not members:
            raise SchemaViolation(f"{where}: ensemble has no members")
        keys = [(m.reuse_score, m.model_id) for m in members]
        if keys != sorted(keys):
            raise SchemaViolation(
                f"{where}: members must be sorted by (score, model_id)"
            )
        ensembles[class_idx] = selection.EnsembleSpec(
            class_node=class_node, members=tuple(members)
        )
        used_models.update(m.model_id for m in members)

    uncovered = []
    for i, value in enumerate(_get_list(obj, "uncovered_classes", path)):
        if isinstance(value, bool) or not isinstance(value, int):
            raise SchemaViolation(f"{path}: uncovered_classes[{i}] must be an int")
        if not 0 <= value < num_classes:
            raise SchemaViolation(f"{path}: uncovered_classes[{i}] out of range")
        uncovered.append(value)
    if set(uncovered) & set(ensembles):
        raise SchemaViolation(f"{path}: a class is both covered and uncovered")
    if set(uncovered) | set(ensembles) != set(range(num_classes)):
        raise SchemaViolation(f"{path}: classes unaccounted for")

    coverage = _get_float(obj, "coverage", path)
    expected_coverage = len(ensembles) / num_classes
    if abs(coverage - expected_coverage) > 1e-9:
        raise SchemaViolation(f"{path}: coverage disagrees with ensembles")
    models_used = _get_int(obj, "models_used", path, minimum=0)
    if models_used != len(used_models):
        raise SchemaViolation(f"{path}: models_used disagrees with members")

    return selection.SelectionReport(
        task_id=_get_str(obj, "task_id", path),
        class_texts=tuple(class_texts),
        sdag_version=_get_int(obj, "sdag_version", path, minimum=1),
        ensembles=ensembles,
        uncovered_classes=tuple(sorted(uncovered)),
        coverage=coverage,
        models_used=models_used,
    )


# --- prediction streams ---

_PREDICTIONS_HEADER_FIELDS = {
    "format",
    "format_version",
    "creator",
    "task_id",
    "class_texts",
    "sample_count",
}


def save_predictions(
    rows: list[tuple[str, reuse.Prediction]],
    task_id: str,
    class_texts: tuple[str, ...],
    path: str,
) -> None:
    """Write a prediction stream; uncovered-class scores (-inf) are
    serialised as nulls so every stored number is finite."""
    header = {
        "format": "predictions",
        "format_version": FORMAT_VERSIONS["predictions"],
        "creator": CREATOR,
        "task_id": task_id,
        "class_texts": list(class_texts),
        "sample_count": len(rows),
    }
    lines = [_dump_line(header)]
    for sample_id, prediction in rows:
        if prediction.class_text != class_texts[prediction.class_index]:
            raise SchemaViolation(
                f"{path}: sample {sample_id!r} names class "
                f"{prediction.class_text!r}, index says "
                f"{class_texts[prediction.class_index]!r}"
            )
        scores: list[float | None] = []
        for value in np.asarray(prediction.per_class_scores, dtype=np.float64):
            if value == reuse.UNCOVERED_SCORE:
                scores.append(None)
            elif math.isfinite(value):
                scores.append(float(value))
            else:
                raise SchemaViolation(
                    f"{path}: sample {sample_id!r} has a non-finite score"
                )
        if not math.isfinite(prediction.confidence):
            raise SchemaViolation(
                f"{path}: sample {sample_id!r} has a non-finite confidence"
            )
        lines.append(
            _dump_line(
                {
                    "sample_id": sample_id,
                    "predicted_class": prediction.class_text,
                    "confidence": float(prediction.confidence),
                    "route": prediction.route,
                    "scores": scores,
                }
            )
        )
    _atomic_write(path, "\n".join(lines) + "\n")


def load_predictions(
    path: str,
) -> tuple[str, tuple[str, ...], list[tuple[str, reuse.Prediction]]]:
    """Read a prediction stream: (task_id, class_texts, rows)."""
    lines = _split_lines(_read_text(path), path)
    where = f"{path}: header"
    header = _require_mapping(_parse_json(lines[0], where), where)
    _check_header(header, "predictions", where)
    _warn_unknown(header, _PREDICTIONS_HEADER_FIELDS, where)
    task_id = _get_str(header, "task_id", where)
    class_texts = _get_list(header, "class_texts", where)
    for i, text in enumerate(class_texts):
        if not isinstance(text, str) or not text:
            raise SchemaViolation(f"{where}: class_texts[{i}] must be non-empty")
    sample_count = _get_int(header, "sample_count", where, minimum=0)

    rows: list[tuple[str, reuse.Prediction]] = []
    for lineno, line in enumerate(lines[1:], start=2):
        line_where = f"{path}: line {lineno}"
        try:
            raw = json.loads(line, parse_constant=_reject_constant)
        except json.JSONDecodeError as exc:
            if lineno == len(lines):
                raise TruncatedFile(f"{line_where}: input ends mid-record") from exc
            raise SchemaViolation(f"{line_where}: invalid JSON") from exc
        except ValueError as exc:
            raise SchemaViolation(f"{line_where}: {exc}") from exc
        raw = _require_mapping(raw, line_where)
        sample_id = _get_str(raw, "sample_id", line_where)
        predicted = _get_str(raw, "predicted_class", line_where)
        confidence = _get_float(raw, "confidence", line_where)
        route = _get_str(raw, "route", line_where)
        if route not in ("experts", "generalist"):
            raise SchemaViolation(f"{line_where}: unknown route {route!r}")
        raw_scores = _get_list(raw, "scores", line_where)
        if len(raw_scores) != len(class_texts):
            raise SchemaViolation(
                f"{line_where}: scores length {len(raw_scores)} does not "
                f"match {len(class_texts)} classes"
            )
        scores = np.empty(len(raw_scores), dtype=np.float64)
        for i, value in enumerate(raw_scores):
            if value is None:
                scores[i] = reuse.UNCOVERED_SCORE
            else:
                scores[i] = _as_float(value, f"{line_where}: scores[{i}]")
        class_index = int(np.argmax(scores))
        if class_texts[class_index] != predicted:
            raise SchemaViolation(
                f"{line_where}: predicted_class {predicted!r} disagrees "
                f"with the score argmax {class_texts[class_index]!r}"
            )
        if scores[class_index] != confidence:
            raise SchemaViolation(
                f"{line_where}: confidence does not equal the winning score"
            )
        rows.append(
            (
                sample_id,
                reuse.Prediction(
                    class_index=class_index,
                    class_text=predicted,
                    confidence=confidence,
                    per_class_scores=scores,
                    route=route,
                ),
            )
        )
    if len(rows) != sample_count:
        raise TruncatedFile(
            f"{path}: header declares {sample_count} samples, found {len(rows)}"
        )
    return task_id, tuple(class_texts), rows


# --- benchmark results ---

_BENCHMARK_FIELDS = {
    "format",
    "format_version",
    "creator",
    "scenario",
    "seeds",
    "records",
    "extras",
}


def save_benchmark(result: synth.BenchmarkResult, path: str) -> None:
    records = []
    for record in result.records:
        per_seed = {}
        for metric, series in sorted(record.per_seed.items()):
            row: list[float | None] = []
            for value in series:
                if value is None:
                    row.append(None)
                else:
                    value = float(value)
                    if not math.isfinite(value):
                        raise SchemaViolation(
                            f"{path}: {record.key} {metric} has a "
                            "non-finite value"
                        )
                    row.append(value)
            per_seed[metric] = row
        for name, value in (
            ("accuracy_all", record.accuracy_all),
            ("coverage", record.coverage),
            ("models_used", record.models_used),
        ):
            if not math.isfinite(value):
                raise SchemaViolation(f"{path}: {record.key} {name} non-finite")
        if record.accuracy_covered is not None and not math.isfinite(
            record.accuracy_covered
        ):
            raise SchemaViolation(
                f"{path}: {record.key} accuracy_covered non-finite"
            )
        records.append(
            {
                "key": record.key,
                "accuracy_all": float(record.accuracy_all),
                "accuracy_covered": None
                if record.accuracy_covered is None
                else float(record.accuracy_covered),
                "coverage": float(record.coverage),
                "models_used": float(record.models_used),
                "per_seed": per_seed,
            }
        )
    for name, value in result.extras.items():
        if not math.isfinite(value):
            raise SchemaViolation(f"{path}: extra {name!r} non-finite")
    doc = {
        "format": "benchmark",
        "format_version": FORMAT_VERSIONS["benchmark"],
        "creator": CREATOR,
        "scenario": result.scenario,
        "seeds": list(result.seeds),
        "records": records,
        "extras": {k: float(v) for k, v in sorted(result.extras.items())},
    }
    _atomic_write(path, _dump_doc(doc))


def load_benchmark(path: str) -> synth.BenchmarkResult:
    obj = _require_mapping(_parse_json(_read_text(path), path), path)
    _check_header(obj, "benchmark", path)
    _warn_unknown(obj, _BENCHMARK_FIELDS, path)
    seeds = []
    for i, value in enumerate(_get_list(obj, "seeds", path)):
        if isinstance(value, bool) or not isinstance(value, int):
            raise SchemaViolation(f"{path}: seeds[{i}] must be an int")
        seeds.append(value)
    records = []
    for i, raw in enumerate(_get_list(obj, "records", path)):
        where = f"{path}: records[{i}]"
        raw = _require_mapping(raw, where)
        raw_covered = _get(raw, "accuracy_covered", where)
        covered = (
            None if raw_covered is None else _as_float(raw_covered, where)
        )
        per_seed: dict[str, tuple[float | None, ...]] = {}
        for metric, series in _require_mapping(
            _get(raw, "per_seed", where), f"{where}: per_seed"
        ).items():
            if not isinstance(series, list):
                raise SchemaViolation(f"{where}: per_seed[{metric!r}] not a list")
            parsed: list[float | None] = []
            for j, value in enumerate(series):
                if value is None:
                    parsed.append(None)
                else:
                    parsed.append(
                        _as_float(value, f"{where}: per_seed[{metric!r}][{j}]")
                    )
            per_seed[metric] = tuple(parsed)
        records.append(
            synth.BenchmarkRecord(
                key=_get_str(raw, "key", where),
                accuracy_all=_get_float(raw, "accuracy_all", where),
                accuracy_covered=covered,
                coverage=_get_float(raw, "coverage", where),
                models_used=_get_float(raw, "models_used", where),
                per_seed=per_seed,
            )
        )
    extras = {}
    for key, value in _require_mapping(_get(obj, "extras", path), path).items():
        extras[key] = _as_float(value, f"{path}: extras[{key!r}]")
    return synth.BenchmarkResult(
        scenario=_get_str(obj, "scenario", path),
        seeds=tuple(seeds),
        records=tuple(records),
        extras=extras,
    )


def save_benchmark_table(result: synth.BenchmarkResult, path: str) -> None:
    """Flat columnar summary of a benchmark: one row per record."""
    fd, tmp_path = tempfile.mkstemp(
        dir=os.path.dirname(os.path.abspath(path)), suffix=".tmp"
    )
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(
                [
                    "scenario",
                    "key",
                    "accuracy_all",
                    "accuracy_covered",
                    "coverage",
                    "models_used",
                ]
            )
            for record in result.records:
                writer.writerow(
                    [
                        result.scenario,
                        record.key,
                        repr(record.accuracy_all),
                        ""
                        if record.accuracy_covered is None
                        else repr(record.accuracy_covered),
                        repr(record.coverage),
                        repr(record.models_used),
                    ]
                )
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


# --- model output streams (pipeline interchange for prediction runs) ---

_OUTPUTS_HEADER_FIELDS = {
    "format",
    "format_version",
    "creator",
    "task_id",
    "sample_count",
}


@dataclass(frozen=True)
class OutputsRecord:
    """One sample's raw material for prediction: per-model head
    probability vectors, optionally a generalist distribution over the
    task classes and the true class index."""

    sample_id: str
    outputs: dict[str, np.ndarray]
    generalist: np.ndarray | None = None
    true_class: int | None = None


def save_outputs(
    records: list[OutputsRecord], task_id: str, path: str
) -> None:
    header = {
        "format": "outputs",
        "format_version": FORMAT_VERSIONS["outputs"],
        "creator": CREATOR,
        "task_id": task_id,
        "sample_count": len(records),
    }
    lines = [_dump_line(header)]
    for record in records:
        doc: dict[str, Any] = {
            "sample_id": record.sample_id,
            "outputs": {
                mid: _finite_sequence(vec, f"{path}: {record.sample_id!r} {mid!r}")
                for mid, vec in sorted(record.outputs.items())
            },
        }
        if record.generalist is not None:
            doc["generalist"] = _finite_sequence(
                record.generalist, f"{path}: {record.sample_id!r} generalist"
            )
        if record.true_class is not None:
            doc["true_class"] = int(record.true_class)
        lines.append(_dump_line(doc))
    _atomic_write(path, "\n".join(lines) + "\n")


def load_outputs(path: str) -> tuple[str, list[OutputsRecord]]:
    lines = _split_lines(_read_text(path), path)
    where = f"{path}: header"
    header = _require_mapping(_parse_json(lines[0], where), where)
    _check_header(header, "outputs", where)
    _warn_unknown(header, _OUTPUTS_HEADER_FIELDS, where)
    task_id = _get_str(header, "task_id", where)
    sample_count = _get_int(header, "sample_count", where, minimum=0)
    records: list[OutputsRecord] = []
    for lineno, line in enumerate(lines[1:], start=2):
        line_where = f"{path}: line {lineno}"
        try:
            raw = json.loads(line, parse_constant=_reject_constant)
        except json.JSONDecodeError as exc:
            if lineno == len(lines):
                raise TruncatedFile(f"{line_where}: input ends mid-record") from exc
            raise SchemaViolation(f"{line_where}: invalid JSON") from exc
        except ValueError as exc:
            raise SchemaViolation(f"{line_where}: {exc}") from exc
        raw = _require_mapping(raw, line_where)
        outputs_raw = _require_mapping(
            _get(raw, "outputs", line_where), f"{line_where}: outputs"
        )
        outputs = {}
        for mid, vec in outputs_raw.items():
            if not mid:
                raise SchemaViolation(f"{line_where}: empty model id")
            outputs[mid] = _float_vector(vec, f"{line_where}: outputs[{mid!r}]")
        generalist = None
        if raw.get("generalist") is not None:
            generalist = _float_vector(
                raw["generalist"], f"{line_where}: generalist"
            )
        true_class = None
        if raw.get("true_class") is not None:
            value = raw["true_class"]
            if isinstance(value, bool) or not isinstance(value, int):
                raise SchemaViolation(f"{line_where}: true_class must be an int")
            true_class = value
        records.append(
            OutputsRecord(
                sample_id=_get_str(raw, "sample_id", line_where),
                outputs=outputs,
                generalist=generalist,
                true_class=true_class,
            )
        )
    if len(records) != sample_count:
        raise TruncatedFile(
            f"{path}: header declares {sample_count} samples, "
            f"found {len(records)}"
        )
    return task_id, records


# --- task specs (tiny helper format used by the command line) ---


def save_task(task: sdag.TaskSpec, path: str) -> None:
    doc = {
        "format": "task",
        "format_version": 1,
        "creator": CREATOR,
        "task_id": task.task_id,
        "class_texts": list(task.class_texts),
    }
    _atomic_write(path, _dump_doc(doc))


def load_task(path: str) -> sdag.TaskSpec:
    obj = _require_mapping(_parse_json(_read_text(path), path), path)
    name = _get_str(obj, "format", path)
    if name != "task":
        raise SchemaViolation(f"{path}: file holds format {name!r}, expected 'task'")
    texts = _get_list(obj, "class_texts", path)
    for i, text in enumerate(texts):
        if not isinstance(text, str) or not text:
            raise SchemaViolation(f"{path}: class_texts[{i}] must be non-empty")
    try:
        return sdag.TaskSpec(
            task_id=_get_str(obj, "task_id", path), class_texts=tuple(texts)
        )
    except ValueError as exc:
        raise SchemaViolation(f"{path}: {exc}") from exc
