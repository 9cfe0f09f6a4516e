"""Semantic DAG: node structure, validation, and class-to-node matching.

The graph holds functionality concepts (nodes) connected by directed
"broader than" edges from general to specific.  Edges point at
successors, so leaves are the most specific concepts.  Matching embeds
task class texts and node texts with a pluggable provider and pairs each
class with a node via mutual argmax over cosine similarity.
"""

from __future__ import annotations

import hashlib
import heapq
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .errors import CycleDetected, DanglingSuccessor, DuplicateNodeId, ProviderFailure

_EMBED_DIM = 256
_EMPTY_TOKEN = "∅"


@dataclass(frozen=True)
class SemanticNode:
    """One concept in the graph."""

    node_id: str
    name: str
    description: str
    successor_ids: tuple[str, ...] = ()
    sample_refs: tuple[str, ...] = ()


@dataclass(frozen=True)
class SDag:
    """Validated semantic DAG.

    Instances are immutable; :func:`insert_node` returns a new graph with
    the version bumped.  ``topological_order`` is computed once at build
    time and reused.
    """

    nodes: dict[str, SemanticNode]
    version: int
    topological_order: tuple[str, ...] = field(compare=False)

    def successors(self, node_id: str) -> tuple[str, ...]:
        return self.nodes[node_id].successor_ids

    def is_leaf(self, node_id: str) -> bool:
        return not self.nodes[node_id].successor_ids

    def leaf_ids(self) -> tuple[str, ...]:
        return tuple(n for n in self.topological_order if self.is_leaf(n))


def _toposort(nodes: dict[str, SemanticNode]) -> tuple[str, ...]:
    """Kahn's algorithm with a heap so equal-priority nodes come out in
    lexicographic node_id order (deterministic across runs).

    Raises CycleDetected naming one concrete cycle path.
    """
    indegree = {nid: 0 for nid in nodes}
    for node in nodes.values():
        for succ in node.successor_ids:
            indegree[succ] += 1
    ready = [nid for nid, deg in indegree.items() if deg == 0]
    heapq.heapify(ready)
    order: list[str] = []
    while ready:
        nid = heapq.heappop(ready)
        order.append(nid)
        for succ in nodes[nid].successor_ids:
            indegree[succ] -= 1
            if indegree[succ] == 0:
                heapq.heappush(ready, succ)
    if len(order) < len(nodes):
        remaining = {nid for nid, deg in indegree.items() if deg > 0}
        cycle = _find_cycle(nodes, remaining)
        raise CycleDetected("cycle: " + " -> ".join(cycle))
    return tuple(order)


def _find_cycle(nodes: dict[str, SemanticNode], remaining: set[str]) -> list[str]:
    """Walk successors inside the unresolved set until a node repeats."""
    start = min(remaining)
    seen: dict[str, int] = {}
    path: list[str] = []
    cur = start
    while cur not in seen:
        seen[cur] = len(path)
        path.append(cur)
        cur = next(s for s in nodes[cur].successor_ids if s in remaining)
    return path[seen[cur] :] + [cur]


def build_sdag(node_defs: list[SemanticNode], version: int = 1) -> SDag:
    """Validate node definitions and assemble a graph.

    Raises DuplicateNodeId, DanglingSuccessor, or CycleDetected.  A
    self-loop is reported as a cycle of length one.
    """
    nodes: dict[str, SemanticNode] = {}
    for node in node_defs:
        if node.node_id in nodes:
            raise DuplicateNodeId(f"duplicate node id {node.node_id!r}")
        nodes[node.node_id] = node
    for node in nodes.values():
        for succ in node.successor_ids:
            if succ not in nodes:
                raise DanglingSuccessor(
                    f"node {node.node_id!r} lists unknown successor {succ!r}"
                )
    order = _toposort(nodes)
    return SDag(nodes=nodes, version=version, topological_order=order)


def insert_node(
    g: SDag, node: SemanticNode, predecessor_ids: tuple[str, ...] = ()
) -> SDag:
    """Return a new graph with ``node`` added and edges from each listed
    predecessor to it.  Version is bumped by one.
    """
    if node.node_id in g.nodes:
        raise DuplicateNodeId(f"duplicate node id {node.node_id!r}")
    for pred in predecessor_ids:
        if pred not in g.nodes:
            raise DanglingSuccessor(
                f"unknown predecessor {pred!r} for new node {node.node_id!r}"
            )
    nodes = dict(g.nodes)
    nodes[node.node_id] = node
    for pred in predecessor_ids:
        old = nodes[pred]
        nodes[pred] = SemanticNode(
            node_id=old.node_id,
            name=old.name,
            description=old.description,
            successor_ids=old.successor_ids + (node.node_id,),
            sample_refs=old.sample_refs,
        )
    for succ in node.successor_ids:
        if succ not in nodes:
            raise DanglingSuccessor(
                f"node {node.node_id!r} lists unknown successor {succ!r}"
            )
    order = _toposort(nodes)
    return SDag(nodes=nodes, version=g.version + 1, topological_order=order)


def node_text(node: SemanticNode) -> str:
    """Text used to embed a node: name plus description."""
    return f"Name: {node.name}\nDescription: {node.description}"


class EmbeddingProvider(Protocol):
    """Anything that turns text into a fixed-dimension vector."""

    def embed(self, text: str) -> np.ndarray: ...


class HashedTrigramProvider:
    """Deterministic fallback embedder: hashed character trigram counts.

    Each overlapping three-character window is hashed (keyed blake2s, so
    the mapping is stable across processes) into one of ``dim`` buckets;
    the count vector is L2-normalised.  Texts shorter than three
    characters fall back to embedding the single token "∅", which
    guarantees a nonzero vector for every input.
    """

    def __init__(self, dim: int = _EMBED_DIM) -> None:
        self.dim = dim
        self._bucket_cache: dict[str, int] = {}

    def _bucket(self, gram: str) -> int:
        got = self._bucket_cache.get(gram)
        if got is None:
            digest = hashlib.blake2s(gram.encode("utf-8"), digest_size=8).digest()
            got = int.from_bytes(digest, "little") % self.dim
            self._bucket_cache[gram] = got
        return got

    def embed(self, text: str) -> np.ndarray:
        grams = [text[i : i + 3] for i in range(len(text) - 2)]
        if not grams:
            grams = [_EMPTY_TOKEN]
        vec = np.zeros(self.dim, dtype=np.float64)
        for gram in grams:
            vec[self._bucket(gram)] += 1.0
        return vec / np.linalg.norm(vec)


def embed_text(provider: EmbeddingProvider, text: str) -> np.ndarray:
    """Run the provider and validate its output.

    Raises ProviderFailure if the provider raises, or returns a vector
    that is empty, non-finite, or all-zero.
    """
    if not text:
        raise ProviderFailure("refusing to embed empty text")
    try:
        vec = np.asarray(provider.embed(text), dtype=np.float64)
    except Exception as exc:
        raise ProviderFailure(f"embedding provider failed: {exc}") from exc
    if vec.ndim != 1 or vec.size == 0:
        raise ProviderFailure(f"provider returned shape {vec.shape}")
    if not np.all(np.isfinite(vec)):
        raise ProviderFailure("provider returned non-finite entries")
    if not np.any(vec):
        raise ProviderFailure("provider returned a zero vector")
    return vec


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))


def _normalize_ws(text: str) -> str:
    return " ".join(text.split())


@dataclass(frozen=True)
class TaskSpec:
    """A zero-shot classification task: an id plus one text per class.

    Class index is the position in ``class_texts``.  Texts must be
    non-empty and distinct after whitespace normalisation.
    """

    task_id: str
    class_texts: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.class_texts:
            raise ValueError("task has no classes")
        normalized = [_normalize_ws(t) for t in self.class_texts]
        if any(not t for t in normalized):
            raise ValueError("task contains an empty class text")
        if len(set(normalized)) != len(normalized):
            raise ValueError("task contains duplicate class texts")


@dataclass(frozen=True)
class MatchResult:
    """Outcome of matching a task against a graph.

    matched maps class index -> node_id; unmatched lists the class
    indices that found no node; similarities holds every (class index,
    node_id) cosine score; sdag_version pins the graph the match was
    made against.
    """

    matched: dict[int, str]
    unmatched: tuple[int, ...]
    similarities: dict[tuple[int, str], float]
    sdag_version: int


def match_classes(
    task: TaskSpec,
    g: SDag,
    provider: EmbeddingProvider,
    min_similarity: float = 0.5,
) -> MatchResult:
    """Pair task classes with graph nodes by mutual argmax.

    A class c is matched to node n when n is c's most similar node, c
    attains n's maximum similarity over all classes (non-strict, so an
    exact tie can match two classes to one node), and the similarity
    clears ``min_similarity``.  Argmax ties on the class side break
    toward the lexicographically smallest node_id.
    """
    node_ids = sorted(g.nodes)
    node_vecs = [embed_text(provider, node_text(g.nodes[n])) for n in node_ids]
    class_vecs = [embed_text(provider, t) for t in task.class_texts]

    sims: dict[tuple[int, str], float] = {}
    for ci, cvec in enumerate(class_vecs):
        for nid, nvec in zip(node_ids, node_vecs):
            sims[(ci, nid)] = cosine_similarity(cvec, nvec)

    node_best: dict[str, float] = {
        nid: max(sims[(ci, nid)] for ci in range(len(class_vecs)))
        for nid in node_ids
    }

    matched: dict[int, str] = {}
    unmatched: list[int] = []
    for ci in range(len(class_vecs)):
        best_node = max(node_ids, key=lambda nid: (sims[(ci, nid)], nid))
        # lexicographic tie-break: smallest node_id among the argmax set
        best_sim = sims[(ci, best_node)]
        best_node = min(n for n in node_ids if sims[(ci, n)] == best_sim)
        if best_sim >= min_similarity and sims[(ci, best_node)] == node_best[best_node]:
            matched[ci] = best_node
        else:
            unmatched.append(ci)
    return MatchResult(
        matched=matched,
        unmatched=tuple(unmatched),
        similarities=sims,
        sdag_version=g.version,
    )
