"""Text embedding files: fetch from a provider, serve to the matcher.

The provider is called in batches through a transport callable with
exponential-backoff retries; after the last retry the job aborts with
ProviderFailure. The written file round-trips through
EmbeddingFileProvider, whose ``embed`` method satisfies the hub's
matching-provider protocol.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import CREATOR
from .errors import ProviderFailure
from .extract import _atomic_write, _dump_line

EMBEDDINGS_FORMAT_VERSION = 1

Transport = Callable[[list[str]], Sequence[Sequence[float]]]


@dataclass(frozen=True)
class ProviderConfig:
    name: str
    url: str | None = None
    api_key: str | None = None
    batch_size: int = 16
    max_retries: int = 3
    backoff_seconds: float = 0.5

    def __post_init__(self) -> None:
        if not self.name:
            raise ValueError("provider needs a name")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_retries < 0 or self.backoff_seconds < 0:
            raise ValueError("retry settings must be non-negative")


@dataclass(frozen=True)
class EmbeddingReport:
    provider: str
    dimension: int
    texts: int
    out_path: str


def _http_transport(cfg: ProviderConfig) -> Transport:
    if not cfg.url:
        raise ProviderFailure(f"provider {cfg.name!r} needs a URL")
    import requests

    headers = {"content-type": "application/json"}
    if cfg.api_key:
        headers["authorization"] = f"Bearer {cfg.api_key}"

    def call(batch: list[str]) -> Sequence[Sequence[float]]:
        response = requests.post(
            cfg.url, json={"model": cfg.name, "input": batch},
            headers=headers, timeout=60,
        )
        response.raise_for_status()
        payload = response.json()
        return [entry["embedding"] for entry in payload["data"]]

    return call


def _call_with_retries(
    transport: Transport,
    batch: list[str],
    cfg: ProviderConfig,
    sleep: Callable[[float], None],
) -> Sequence[Sequence[float]]:
    last: Exception | None = None
    for attempt in range(cfg.max_retries + 1):
        try:
            return transport(batch)
        except Exception as exc:
            last = exc
            if attempt < cfg.max_retries:
                sleep(cfg.backoff_seconds * 2**attempt)
    raise ProviderFailure(
        f"provider {cfg.name!r} failed after {cfg.max_retries + 1} attempts: "
        f"{last}"
    ) from last


def extract_embeddings(
    texts: Sequence[str],
    cfg: ProviderConfig,
    out_path: str,
    transport: Transport | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> EmbeddingReport:
    """Embed every distinct text and write one embedding file."""
    distinct = list(dict.fromkeys(texts))
    if not distinct:
        raise ValueError("no texts to embed")
    if any(not text.strip() for text in distinct):
        raise ValueError("texts must be non-blank")
    if transport is None:
        transport = _http_transport(cfg)

    vectors: list[np.ndarray] = []
    dimension: int | None = None
    for start in range(0, len(distinct), cfg.batch_size):
        batch = distinct[start : start + cfg.batch_size]
        got = _call_with_retries(transport, batch, cfg, sleep)
        if len(got) != len(batch):
            raise ProviderFailure(
                f"provider {cfg.name!r} returned {len(got)} vectors "
                f"for {len(batch)} texts"
            )
        for text, raw in zip(batch, got):
            vec = np.asarray(raw, dtype=np.float64)
            if vec.ndim != 1 or vec.size == 0:
                raise ProviderFailure(
                    f"embedding for {text!r} has shape {vec.shape}"
                )
            if not np.all(np.isfinite(vec)):
                raise ProviderFailure(f"embedding for {text!r} is non-finite")
            if not np.any(vec):
                raise ProviderFailure(f"embedding for {text!r} is all zero")
            if dimension is None:
                dimension = vec.size
            elif vec.size != dimension:
                raise ProviderFailure(
                    f"embedding for {text!r} has dimension {vec.size}, "
                    f"expected {dimension}"
                )
            vectors.append(vec)

    doc = {
        "format": "embeddings",
        "format_version": EMBEDDINGS_FORMAT_VERSION,
        "creator": CREATOR,
        "provider": cfg.name,
        "dimension": dimension,
        "vectors": [
            {"text": text, "vector": [float(v) for v in vec]}
            for text, vec in zip(distinct, vectors)
        ],
    }
    _atomic_write(out_path, _dump_line(doc) + "\n")
    return EmbeddingReport(
        provider=cfg.name,
        dimension=int(dimension or 0),
        texts=len(distinct),
        out_path=out_path,
    )


class EmbeddingFileProvider:
    """Serve stored embeddings; any miss or mismatch raises
    ProviderFailure, never a silent wrong vector."""

    def __init__(self, path: str) -> None:
        try:
            with open(path, "r", encoding="utf-8") as handle:
                doc = json.load(handle)
        except OSError as exc:
            raise ProviderFailure(f"cannot read embeddings: {exc}") from exc
        except (json.JSONDecodeError, UnicodeDecodeError, ValueError) as exc:
            raise ProviderFailure(f"{path}: invalid JSON: {exc}") from exc
        if not isinstance(doc, dict) or doc.get("format") != "embeddings":
            raise ProviderFailure(f"{path}: not an embeddings file")
        if doc.get("format_version") != EMBEDDINGS_FORMAT_VERSION:
            raise ProviderFailure(
                f"{path}: unsupported format_version "
                f"{doc.get('format_version')!r}"
            )
        dimension = doc.get("dimension")
        entries = doc.get("vectors")
        if not isinstance(dimension, int) or not isinstance(entries, list):
            raise ProviderFailure(f"{path}: malformed embeddings file")
        self.dimension = dimension
        self._vectors: dict[str, np.ndarray] = {}
        for i, entry in enumerate(entries):
            if (
                not isinstance(entry, dict)
                or not isinstance(entry.get("text"), str)
                or not isinstance(entry.get("vector"), list)
            ):
                raise ProviderFailure(f"{path}: malformed vectors[{i}]")
            vec = np.asarray(entry["vector"], dtype=np.float64)
            if vec.size != dimension or not np.all(np.isfinite(vec)):
                raise ProviderFailure(f"{path}: bad vector in vectors[{i}]")
            self._vectors[entry["text"]] = vec

    def embed(self, text: str) -> np.ndarray:
        vec = self._vectors.get(text)
        if vec is None:
            raise ProviderFailure(f"no stored embedding for {text!r}")
        return vec.copy()
