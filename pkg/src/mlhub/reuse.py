"""Model reuse: run selected ensembles on samples and predict.

For one sample, each ensemble member contributes its output weighted by
the model's combination column for the class; members are mixed with
entropy weights, so confident (low-entropy) outputs count for more.
Classes the selection left uncovered can be patched with a generalist
model: the generalist keeps its own probability on generalist-side
classes and hands its expert-side mass to the ensembles to split.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    MissingModelOutput,
    NoCoveredClasses,
    PartitionMismatch,
)
from .selection import EnsembleSpec, SelectionReport

CONFIDENCE_MODES = ("prob", "logit")

UNCOVERED_SCORE = float("-inf")


@dataclass(frozen=True)
class ModelOutput:
    """One model's output on one sample.

    probabilities must be a distribution over the model's heads; logits
    are optional raw head scores used when combining in "logit" mode
    (entropy weights always come from the probabilities).
    """

    model_id: str
    probabilities: np.ndarray
    logits: np.ndarray | None = None

    def __post_init__(self) -> None:
        probs = np.asarray(self.probabilities, dtype=np.float64)
        if probs.ndim != 1 or probs.size == 0:
            raise ValueError(f"probabilities must be a non-empty vector")
        if probs.min() < 0.0 or abs(probs.sum() - 1.0) > 1e-9:
            raise ValueError(
                f"output of {self.model_id!r} is not a distribution"
            )


@dataclass(frozen=True)
class GeneralistOutput:
    """A generalist model's distribution over all task classes, in class
    index order."""

    probabilities: np.ndarray


@dataclass(frozen=True)
class PatchPartition:
    """Disjoint split of task class indices into expert-side and
    generalist-side."""

    expert_classes: tuple[int, ...]
    generalist_classes: tuple[int, ...]


@dataclass(frozen=True)
class Prediction:
    """One sample's verdict: winning class, its confidence, the full
    per-class score vector (uncovered classes score -inf), and which
    route produced the winner."""

    class_index: int
    class_text: str
    confidence: float
    per_class_scores: np.ndarray
    route: str


def entropy_weight_numerator(output: ModelOutput) -> float:
    """Unnormalised entropy weight: 1 - H(p) / log(num_heads), clipped
    into [0, 1].

    A single-head model has zero entropy by construction and gets
    numerator 1.0 (its output carries no ranking information, but it is
    maximally "certain"); log(1) never enters a division.
    """
    probs = np.asarray(output.probabilities, dtype=np.float64)
    if probs.size == 1:
        return 1.0
    positive = probs[probs > 0.0]
    entropy = float(-(positive * np.log(positive)).sum())
    return min(1.0, max(0.0, 1.0 - entropy / math.log(probs.size)))


def _member_values(
    output: ModelOutput, mode: str
) -> np.ndarray:
    if mode == "logit" and output.logits is not None:
        return np.asarray(output.logits, dtype=np.float64)
    return np.asarray(output.probabilities, dtype=np.float64)


def ensemble_confidence(
    outputs: dict[str, ModelOutput],
    ensemble: EnsembleSpec,
    confidence_mode: str = "prob",
) -> float:
    """Entropy-weighted confidence of one class ensemble on one sample.

    Each member contributes (output . combination column); the mix uses
    normalised entropy numerators, falling back to uniform weights when
    every numerator is zero.  Raises MissingModelOutput when a member
    has no output for the sample.
    """
    if confidence_mode not in CONFIDENCE_MODES:
        raise ValueError(f"unknown confidence mode {confidence_mode!r}")
    numerators: list[float] = []
    contributions: list[float] = []
    for member in ensemble.members:
        output = outputs.get(member.model_id)
        if output is None:
            raise MissingModelOutput(
                f"no output for ensemble member {member.model_id!r}"
            )
        values = _member_values(output, confidence_mode)
        if values.shape != member.combination_column.shape:
            raise MissingModelOutput(
                f"output of {member.model_id!r} has {values.size} heads, "
                f"column expects {member.combination_column.size}"
            )
        numerators.append(entropy_weight_numerator(output))
        contributions.append(float(values @ member.combination_column))
    total = sum(numerators)
    if total <= 0.0:
        weights = [1.0 / len(numerators)] * len(numerators)
    else:
        weights = [n / total for n in numerators]
    return float(sum(w * c for w, c in zip(weights, contributions)))


def predict(
    outputs: dict[str, ModelOutput],
    report: SelectionReport,
    confidence_mode: str = "prob",
) -> Prediction:
    """Predict with the covered classes only.

    Scores uncovered classes -inf so the argmax (ties break toward the
    lowest class index) always lands on a covered class.  Raises
    NoCoveredClasses when the report covers nothing.
    """
    if not report.ensembles:
        raise NoCoveredClasses(f"selection for {report.task_id!r} covers no class")
    num_classes = len(report.class_texts)
    scores = np.full(num_classes, UNCOVERED_SCORE)
    for class_idx, ensemble in report.ensembles.items():
        scores[class_idx] = ensemble_confidence(outputs, ensemble, confidence_mode)
    winner = int(np.argmax(scores))
    return Prediction(
        class_index=winner,
        class_text=report.class_texts[winner],
        confidence=float(scores[winner]),
        per_class_scores=scores,
        route="experts",
    )


def predict_with_patch(
    outputs: dict[str, ModelOutput],
    report: SelectionReport,
    generalist: GeneralistOutput,
    partition: PatchPartition,
    confidence_mode: str = "prob",
) -> Prediction:
    """Predict with ensembles on expert-side classes and a generalist on
    the rest.

    Generalist-side classes keep the generalist's own probability.  The
    generalist's total mass on expert-side classes is redistributed over
    them in proportion to the ensembles' confidences (uniformly when all
    confidences are zero).  With an empty generalist side this reduces
    exactly to predict(); with an empty expert side it is the
    generalist's argmax.  Raises PartitionMismatch when the partition
    disagrees with the report's coverage or the class count.
    """
    covered = set(report.ensembles)
    expert = set(partition.expert_classes)
    generalist_side = set(partition.generalist_classes)
    num_classes = len(report.class_texts)
    if expert & generalist_side:
        raise PartitionMismatch("expert and generalist classes overlap")
    if expert | generalist_side != set(range(num_classes)):
        raise PartitionMismatch("partition does not cover all task classes")
    if expert != covered:
        raise PartitionMismatch(
            "expert-side classes must be exactly the covered classes"
        )
    probs = np.asarray(generalist.probabilities, dtype=np.float64)
    if probs.shape != (num_classes,):
        raise PartitionMismatch(
            f"generalist output has shape {probs.shape}, "
            f"expected ({num_classes},)"
        )

    if not generalist_side:
        return predict(outputs, report, confidence_mode)
    if not expert:
        scores = probs.copy()
        winner = int(np.argmax(scores))
        return Prediction(
            class_index=winner,
            class_text=report.class_texts[winner],
            confidence=float(scores[winner]),
            per_class_scores=scores,
            route="generalist",
        )

    expert_order = sorted(expert)
    confidences = np.array(
        [
            ensemble_confidence(outputs, report.ensembles[c], confidence_mode)
            for c in expert_order
        ]
    )
    confidences = np.maximum(confidences, 0.0)
    total = confidences.sum()
    if total <= 0.0:
        shares = np.full(len(expert_order), 1.0 / len(expert_order))
    else:
        shares = confidences / total
    expert_mass = float(probs[expert_order].sum())

    scores = probs.copy()
    scores[expert_order] = expert_mass * shares
    winner = int(np.argmax(scores))
    return Prediction(
        class_index=winner,
        class_text=report.class_texts[winner],
        confidence=float(scores[winner]),
        per_class_scores=scores,
        route="experts" if winner in expert else "generalist",
    )
