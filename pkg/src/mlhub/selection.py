"""Model selection: score every hub model for a task, keep the best.

Scoring runs the head-combination optimiser per model over the task's
matched target nodes; the optimised per-class loss becomes the model's
reuse score for that class (lower is better).  Selection then keeps, per
class, the at most ``budget_k`` cheapest members whose score clears the
threshold, yielding one ensemble per covered class.
"""

from __future__ import annotations

import hashlib
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import chco
from .errors import LabelVersionMismatch, MlhubError
from .labelling import HubRecord
from .sdag import MatchResult

SCORING_METHODS = ("chco", "heu", "random")


@dataclass(frozen=True)
class ExpertPredictor:
    """One ensemble member: a model plus its combination column for a
    single class."""

    model_id: str
    class_node: str
    combination_column: np.ndarray
    reuse_score: float


@dataclass(frozen=True)
class EnsembleSpec:
    """Members for one covered class, ascending by (score, model_id)."""

    class_node: str
    members: tuple[ExpertPredictor, ...]


@dataclass
class SelectionConfig:
    """Selection knobs: per-class member budget and score threshold.

    A None threshold means "use default_threshold for the task size".
    """

    budget_k: int = 2
    score_threshold: float | None = None

    def __post_init__(self) -> None:
        if self.budget_k < 1:
            raise ValueError(f"budget_k must be >= 1, got {self.budget_k}")
        if self.score_threshold is not None and self.score_threshold < 0.0:
            raise ValueError(
                f"score_threshold must be >= 0, got {self.score_threshold}"
            )


@dataclass(frozen=True)
class SelectionReport:
    """Selection outcome for one task.

    ensembles maps class index -> EnsembleSpec; uncovered_classes lists
    class indices with no usable member (including unmatched classes);
    coverage is the covered fraction of all task classes.
    """

    task_id: str
    class_texts: tuple[str, ...]
    sdag_version: int
    ensembles: dict[int, EnsembleSpec]
    uncovered_classes: tuple[int, ...]
    coverage: float
    models_used: int


def default_threshold(num_classes: int) -> float:
    """Loss of a barely informative predictor on a task with
    ``num_classes`` classes: log n + log(n / (n - 1)).

    A uniform predictor (q on-class = q off-class = 1/n) has exactly
    this per-class loss, so members must beat uniform to be kept.
    """
    if num_classes < 2:
        raise ValueError(f"need at least two classes, got {num_classes}")
    n = float(num_classes)
    return math.log(n) + math.log(n / (n - 1.0))


def _target_items(match: MatchResult) -> list[tuple[int, str]]:
    """Matched (class index, node_id) pairs in class-index order; this
    fixes the column order used by scoring and selection alike."""
    return sorted(match.matched.items())


def _random_result(
    record: HubRecord, targets: tuple[str, ...], seed: int
) -> chco.ChcoResult:
    """Scoring baseline: per-class scores uniform in [0, 1) and one-hot
    random head picks, seeded per (seed, model_id) so the outcome does
    not depend on hub order."""
    material = f"{seed}:{record.model_id}".encode("utf-8")
    digest = hashlib.blake2s(material, digest_size=8).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "little"))
    num_classes = len(targets)
    num_heads = record.head_count
    scores = rng.random(num_classes)
    picks = rng.integers(0, num_heads, size=num_classes)
    x = np.zeros((num_heads, num_classes))
    x[picks, np.arange(num_classes)] = 1.0
    return chco.ChcoResult(
        x=chco.CombinationMatrix(x=x),
        class_losses=scores,
        total_loss=float(scores.sum()),
        sweeps_used=0,
        converged=True,
    )


def _score_one(
    record: HubRecord,
    targets: tuple[str, ...],
    cfg: chco.ChcoConfig,
    method: str,
    seed: int,
) -> chco.ChcoResult:
    if method == "chco":
        return chco.solve(record.label, targets, cfg)
    if method == "heu":
        return chco.heuristic_single_head(record.label, targets)
    return _random_result(record, targets, seed)


def score_hub(
    hub: list[HubRecord],
    match: MatchResult,
    cfg: chco.ChcoConfig | None = None,
    method: str = "chco",
    seed: int = 0,
    jobs: int = 1,
    allow_version_mismatch: bool = False,
) -> dict[str, chco.ChcoResult]:
    """Score every hub model against the matched task classes.

    Returns model_id -> result.  A model whose scoring fails (missing
    node, degenerate label, too few classes) is excluded with a warning
    rather than aborting the run.  Labels built against a different
    graph version than the match raise LabelVersionMismatch unless
    explicitly overridden.  jobs > 1 scores models in parallel; results
    are identical either way.
    """
    if method not in SCORING_METHODS:
        raise ValueError(f"unknown scoring method {method!r}")
    cfg = cfg or chco.ChcoConfig()
    targets = tuple(node_id for _, node_id in _target_items(match))
    if not hub or not targets:
        return {}
    for record in hub:
        if record.label.sdag_version != match.sdag_version and not allow_version_mismatch:
            raise LabelVersionMismatch(
                f"label for {record.model_id!r} was built against graph "
                f"version {record.label.sdag_version}, match used "
                f"{match.sdag_version}"
            )

    results: dict[str, chco.ChcoResult] = {}
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {
                record.model_id: pool.submit(
                    _score_one, record, targets, cfg, method, seed
                )
                for record in hub
            }
            for model_id, future in futures.items():
                try:
                    results[model_id] = future.result()
                except MlhubError as exc:
                    warnings.warn(
                        f"excluding model {model_id!r}: {exc}", stacklevel=2
                    )
    else:
        for record in hub:
            try:
                results[record.model_id] = _score_one(
                    record, targets, cfg, method, seed
                )
            except MlhubError as exc:
                warnings.warn(
                    f"excluding model {record.model_id!r}: {exc}", stacklevel=2
                )
    return {model_id: results[model_id] for model_id in sorted(results)}


def select_ensembles(
    scores: dict[str, chco.ChcoResult],
    match: MatchResult,
    task_id: str,
    class_texts: tuple[str, ...],
    sel: SelectionConfig | None = None,
) -> SelectionReport:
    """Assemble per-class ensembles from scored models.

    Per class, candidates with reuse score at most the threshold are
    sorted ascending by (score, model_id) and the first budget_k kept.
    Classes with no member left (and unmatched classes) are reported
    uncovered.
    """
    sel = sel or SelectionConfig()
    items = _target_items(match)
    num_classes = len(match.matched) + len(match.unmatched)
    threshold = sel.score_threshold
    if threshold is None:
        threshold = default_threshold(max(num_classes, 2))

    ensembles: dict[int, EnsembleSpec] = {}
    uncovered = set(match.unmatched)
    used_models: set[str] = set()
    for pos, (class_idx, node_id) in enumerate(items):
        candidates: list[ExpertPredictor] = []
        for model_id, result in scores.items():
            score = float(result.class_losses[pos])
            if score <= threshold:
                candidates.append(
                    ExpertPredictor(
                        model_id=model_id,
                        class_node=node_id,
                        combination_column=result.x.x[:, pos].copy(),
                        reuse_score=score,
                    )
                )
        candidates.sort(key=lambda m: (m.reuse_score, m.model_id))
        members = tuple(candidates[: sel.budget_k])
        if members:
            ensembles[class_idx] = EnsembleSpec(class_node=node_id, members=members)
            used_models.update(m.model_id for m in members)
        else:
            uncovered.add(class_idx)

    coverage = len(ensembles) / num_classes if num_classes else 0.0
    return SelectionReport(
        task_id=task_id,
        class_texts=class_texts,
        sdag_version=match.sdag_version,
        ensembles=ensembles,
        uncovered_classes=tuple(sorted(uncovered)),
        coverage=coverage,
        models_used=len(used_models),
    )
