"""Minimal reader for the hub's graph file.

The extractor only needs the node-id set (to validate image folder
names) and the graph version (to stamp traces), so it reads the
published JSON layout directly instead of depending on the hub package.
"""
from __future__ import annotations

import json

from .errors import ManifestError


def read_graph(path: str) -> tuple[int, frozenset[str]]:
    """Return (version, node_ids) from a graph file."""
    try:
        with open(path, "r", encoding="utf-8") as handle:
            text = handle.read()
    except OSError as exc:
        raise ManifestError(f"cannot read graph file: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise ManifestError(f"{path}: not valid UTF-8") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ManifestError(f"{path}: expected a JSON object")
    version = doc.get("version")
    nodes = doc.get("nodes")
    if not isinstance(version, int) or isinstance(version, bool) or version < 1:
        raise ManifestError(f"{path}: missing or invalid 'version'")
    if not isinstance(nodes, list) or not nodes:
        raise ManifestError(f"{path}: missing or empty 'nodes'")
    ids = []
    for i, raw in enumerate(nodes):
        if not isinstance(raw, dict) or not isinstance(raw.get("id"), str):
            raise ManifestError(f"{path}: nodes[{i}] lacks a string 'id'")
        ids.append(raw["id"])
    if len(set(ids)) != len(ids):
        raise ManifestError(f"{path}: duplicate node ids")
    return version, frozenset(ids)
