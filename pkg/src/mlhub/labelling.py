"""Model labelling: turn pre-test logit traces into functionality labels.

A trace holds raw per-sample logit vectors for every graph node a model
was tested on.  Labelling reduces each node to its mean logit vector and
then aggregates down the graph: a node's score blends its own mean with
its successors' values, discounted by ``discount`` (written delta in the
docstrings below).  The label stores one score vector per covered node.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyTrace, MissingMeans, NonFiniteLogit, VersionRegression
from .sdag import SDag

AGGREGATION_MODES = ("one_hop", "recursive")


@dataclass(frozen=True)
class LogitTrace:
    """Raw pre-test record for one model.

    node_logits maps node_id -> array of shape (num_samples, head_count);
    sdag_version pins the graph the trace was collected against.
    """

    model_id: str
    head_count: int
    node_logits: dict[str, np.ndarray]
    sdag_version: int


@dataclass(frozen=True)
class ModelLabel:
    """Aggregated functionality label for one model.

    scores maps node_id -> vector of length head_count (one entry per
    model head).  node_means keeps the per-node mean logits the scores
    were aggregated from, so later graph growth can be folded in without
    the original traces.
    """

    model_id: str
    head_count: int
    scores: dict[str, np.ndarray]
    node_means: dict[str, np.ndarray]
    sdag_version: int
    discount: float
    aggregation_mode: str


@dataclass(frozen=True)
class HubRecord:
    """One hub entry: a labelled model plus free-form provenance."""

    model_id: str
    head_count: int
    label: ModelLabel
    provenance: str = ""


def mean_logits(trace: LogitTrace) -> dict[str, np.ndarray]:
    """Arithmetic mean of the sample logit vectors, per node.

    Raises EmptyTrace when the trace lists no nodes or a listed node has
    zero samples, and NonFiniteLogit (naming node and sample index) when
    any entry is NaN or infinite.
    """
    if not trace.node_logits:
        raise EmptyTrace(f"trace for {trace.model_id!r} covers no nodes")
    means: dict[str, np.ndarray] = {}
    for node_id in sorted(trace.node_logits):
        block = np.asarray(trace.node_logits[node_id], dtype=np.float64)
        if block.ndim != 2 or block.shape[1] != trace.head_count:
            raise EmptyTrace(
                f"node {node_id!r}: expected shape (n, {trace.head_count}), "
                f"got {block.shape}"
            )
        if block.shape[0] == 0:
            raise EmptyTrace(f"node {node_id!r} has no samples")
        bad = ~np.isfinite(block)
        if bad.any():
            sample_idx, head_idx = np.argwhere(bad)[0]
            raise NonFiniteLogit(
                f"node {node_id!r}, sample {sample_idx}, head {head_idx} "
                "is not finite"
            )
        means[node_id] = block.mean(axis=0)
    return means


def _combine(
    own: np.ndarray | None, succ_values: list[np.ndarray], discount: float
) -> np.ndarray | None:
    """Blend a node's own mean with its successor values.

    Leaf nodes (and nodes whose successors carry no values) keep their
    own mean untouched; nodes without an own mean average their covered
    successors; otherwise the two parts mix as
    discount * own + (1 - discount) * successor mean.  Returns None when
    neither part exists.
    """
    if not succ_values:
        return None if own is None else own.copy()
    succ_mean = np.mean(np.stack(succ_values), axis=0)
    if own is None:
        return succ_mean
    return discount * own + (1.0 - discount) * succ_mean


def aggregate_label(
    g: SDag,
    model_id: str,
    head_count: int,
    means: dict[str, np.ndarray],
    discount: float = 0.7,
    aggregation_mode: str = "recursive",
) -> ModelLabel:
    """Aggregate per-node means into a label over the graph.

    In "one_hop" mode the successor part of a node's score averages the
    successors' raw means; in "recursive" mode it averages their already
    aggregated scores, letting evidence flow upward any number of hops.
    The successor average runs over covered successors only; nodes with
    no own mean and no covered successor are simply absent from the
    label.  Raises MissingMeans when nothing is covered at all.
    """
    if not 0.0 <= discount <= 1.0:
        raise ValueError(f"discount must lie in [0, 1], got {discount}")
    if aggregation_mode not in AGGREGATION_MODES:
        raise ValueError(f"unknown aggregation mode {aggregation_mode!r}")
    clean: dict[str, np.ndarray] = {}
    for node_id, vec in means.items():
        if node_id not in g.nodes:
            raise MissingMeans(f"means reference unknown node {node_id!r}")
        arr = np.asarray(vec, dtype=np.float64)
        if arr.shape != (head_count,):
            raise MissingMeans(
                f"node {node_id!r}: mean has shape {arr.shape}, "
                f"expected ({head_count},)"
            )
        clean[node_id] = arr
    if not clean:
        raise MissingMeans(f"no mean logits to aggregate for {model_id!r}")

    scores: dict[str, np.ndarray] = {}
    for node_id in reversed(g.topological_order):
        node = g.nodes[node_id]
        if aggregation_mode == "recursive":
            succ_values = [scores[s] for s in node.successor_ids if s in scores]
        else:
            succ_values = [clean[s] for s in node.successor_ids if s in clean]
        value = _combine(clean.get(node_id), succ_values, discount)
        if value is not None:
            scores[node_id] = value
    return ModelLabel(
        model_id=model_id,
        head_count=head_count,
        scores=scores,
        node_means={k: v.copy() for k, v in clean.items()},
        sdag_version=g.version,
        discount=discount,
        aggregation_mode=aggregation_mode,
    )


def update_label(
    label: ModelLabel, g: SDag, incremental_means: dict[str, np.ndarray]
) -> ModelLabel:
    """Fold new per-node means into an existing label without a full
    recompute.

    Only nodes whose score can change are revisited: the newly covered
    nodes, nodes absent from the old label, and their ancestors.  All
    other score vectors are carried over untouched, so the result equals
    a from-scratch aggregation over the merged means.  Raises
    VersionRegression when ``g`` is older than the label's graph.
    """
    if g.version < label.sdag_version:
        raise VersionRegression(
            f"label was built against version {label.sdag_version}, "
            f"got graph version {g.version}"
        )
    merged = {k: v.copy() for k, v in label.node_means.items()}
    for node_id, vec in incremental_means.items():
        if node_id not in g.nodes:
            raise MissingMeans(f"means reference unknown node {node_id!r}")
        arr = np.asarray(vec, dtype=np.float64)
        if arr.shape != (label.head_count,):
            raise MissingMeans(
                f"node {node_id!r}: mean has shape {arr.shape}, "
                f"expected ({label.head_count},)"
            )
        merged[node_id] = arr

    predecessors: dict[str, list[str]] = {nid: [] for nid in g.nodes}
    for node in g.nodes.values():
        for succ in node.successor_ids:
            predecessors[succ].append(node.node_id)

    affected = set(incremental_means)
    affected.update(nid for nid in g.nodes if nid not in label.scores)
    frontier = list(affected)
    while frontier:
        node_id = frontier.pop()
        for pred in predecessors[node_id]:
            if pred not in affected:
                affected.add(pred)
                frontier.append(pred)

    scores: dict[str, np.ndarray] = {
        k: v.copy() for k, v in label.scores.items() if k not in affected
    }
    for node_id in reversed(g.topological_order):
        if node_id not in affected:
            continue
        node = g.nodes[node_id]
        if label.aggregation_mode == "recursive":
            succ_values = [scores[s] for s in node.successor_ids if s in scores]
        else:
            succ_values = [merged[s] for s in node.successor_ids if s in merged]
        value = _combine(merged.get(node_id), succ_values, label.discount)
        if value is not None:
            scores[node_id] = value
        else:
            scores.pop(node_id, None)
    if not scores:
        raise MissingMeans(f"no mean logits to aggregate for {label.model_id!r}")
    return ModelLabel(
        model_id=label.model_id,
        head_count=label.head_count,
        scores=scores,
        node_means=merged,
        sdag_version=g.version,
        discount=label.discount,
        aggregation_mode=label.aggregation_mode,
    )
