"""Constrained convex optimisation over head-class combination weights.

Given a model's label restricted to the target nodes of a task, the
head-class matrix ``p`` holds, per class column, a softmax distribution
over the model's heads.  The combination matrix ``x`` assigns each head
a weight per class, subject to per-head (row) constraints: entries in
[0, 1] and each row summing to at most one.  The discriminative loss
rewards columns that put mass on heads indicative of their own class and
penalises mass on heads that fire for other classes:

    loss_c = -log q[c][c]
             - (1 / (C - 1)) * sum_{c' != c} log(1 - q[c][c'])

with q[c][c'] = sum_h p[h][c'] * x[h][c].  Each column's loss is a
convex function of that column (negative logs of affine maps), and the
feasible set is a product of per-row simplices, so block coordinate
descent over rows with exact Euclidean projection converges to the
global minimum.

All probabilities entering a logarithm are clamped to
[CLAMP_EPS, 1 - CLAMP_EPS]; the gradient uses the same clamped
denominators so it stays finite near the boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateLabel,
    MissingNodeScore,
    ShapeMismatch,
    SingleClassTask,
)
from .labelling import ModelLabel

CLAMP_EPS = 1e-12


@dataclass(frozen=True)
class HeadClassMatrix:
    """Per-class head distributions: p has shape (num_heads, num_classes)
    and every column sums to one."""

    p: np.ndarray
    class_nodes: tuple[str, ...]

    @property
    def num_heads(self) -> int:
        return int(self.p.shape[0])

    @property
    def num_classes(self) -> int:
        return int(self.p.shape[1])


@dataclass(frozen=True)
class CombinationMatrix:
    """Head weights per class: x has shape (num_heads, num_classes),
    entries in [0, 1], every row summing to at most one."""

    x: np.ndarray


@dataclass
class ChcoConfig:
    """Solver knobs.

    init selects the starting point: "uniform" spreads 1/num_classes
    over every entry; "proportional" copies p and rescales infeasible
    rows.  keep_history records per-sweep loss and feasibility snapshots
    for debugging.
    """

    learning_rate: float = 0.1
    max_sweeps: int = 200
    rel_tolerance: float = 1e-8
    backtrack_factor: float = 0.5
    max_backtracks: int = 20
    init: str = "uniform"
    keep_history: bool = False


@dataclass(frozen=True)
class SweepRecord:
    """Loss and constraint snapshot after one full sweep over rows."""

    sweep: int
    total_loss: float
    max_row_violation: float


@dataclass
class ChcoResult:
    """Solver output: the combination matrix, per-class and total loss,
    and convergence bookkeeping."""

    x: CombinationMatrix
    class_losses: np.ndarray
    total_loss: float
    sweeps_used: int
    converged: bool
    history: list[SweepRecord] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)


def head_class_probabilities(
    label: ModelLabel, target_nodes: tuple[str, ...]
) -> HeadClassMatrix:
    """Column-wise softmax of the label's scores at the target nodes.

    Column c is softmax over heads of the score vector at target node c,
    computed with max subtraction for stability.  Raises MissingNodeScore
    when the label lacks a target node and DegenerateLabel on non-finite
    scores.
    """
    if not target_nodes:
        raise ShapeMismatch("no target nodes")
    cols: list[np.ndarray] = []
    for node_id in target_nodes:
        vec = label.scores.get(node_id)
        if vec is None:
            raise MissingNodeScore(
                f"label for {label.model_id!r} has no score at node {node_id!r}"
            )
        if not np.all(np.isfinite(vec)):
            raise DegenerateLabel(
                f"label for {label.model_id!r} has non-finite scores "
                f"at node {node_id!r}"
            )
        shifted = vec - vec.max()
        expd = np.exp(shifted)
        cols.append(expd / expd.sum())
    return HeadClassMatrix(p=np.column_stack(cols), class_nodes=tuple(target_nodes))


def predictor_probabilities(p: np.ndarray, x: np.ndarray) -> np.ndarray:
    """q = x^T p, so q[c][c'] is the mass class c's predictor puts on
    heads that fire for class c'.  Entries lie in [0, 1] whenever x is
    feasible."""
    if p.shape != x.shape:
        raise ShapeMismatch(f"p has shape {p.shape}, x has shape {x.shape}")
    return x.T @ p


def _clamp(values: np.ndarray) -> np.ndarray:
    return np.clip(values, CLAMP_EPS, 1.0 - CLAMP_EPS)


def discriminative_loss(
    p: np.ndarray, x: np.ndarray
) -> tuple[np.ndarray, float]:
    """Per-class losses and their sum for a combination matrix.

    Raises SingleClassTask when there are fewer than two classes: the
    off-class term divides by (num_classes - 1).
    """
    num_classes = p.shape[1]
    if num_classes < 2:
        raise SingleClassTask("discriminative loss needs at least two classes")
    q = predictor_probabilities(p, x)
    diag = np.diag(q)
    off = 1.0 - q
    log_off = np.log(_clamp(off))
    np.fill_diagonal(log_off, 0.0)
    class_losses = -np.log(_clamp(diag)) - log_off.sum(axis=1) / (num_classes - 1)
    return class_losses, float(class_losses.sum())


def loss_gradient_row(p: np.ndarray, x: np.ndarray, head: int) -> np.ndarray:
    """Gradient of the total loss with respect to row ``head`` of x.

    d loss / d x[h][c] =
        (1 / (C - 1)) * sum_{c' != c} p[h][c'] / (1 - q[c][c'])
        - p[h][c] / q[c][c]

    Denominators are clamped like the loss, so the gradient stays finite
    (magnitude at most p / CLAMP_EPS) even when q sits on the boundary.
    """
    num_classes = p.shape[1]
    if num_classes < 2:
        raise SingleClassTask("discriminative loss needs at least two classes")
    q = predictor_probabilities(p, x)
    inv_off = 1.0 / _clamp(1.0 - q)
    np.fill_diagonal(inv_off, 0.0)
    off_part = inv_off @ p[head] / (num_classes - 1)
    own_part = p[head] / _clamp(np.diag(q))
    return off_part - own_part


def project_row_to_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto {u : u >= 0, sum(u) <= 1}.

    Clipping negatives to zero is optimal when the clipped point already
    satisfies the sum constraint; otherwise the projection lands on the
    boundary sum(u) = 1 and reduces to the classic sorted-threshold
    projection onto the probability simplex.
    """
    v = np.asarray(v, dtype=np.float64)
    clipped = np.maximum(v, 0.0)
    if clipped.sum() <= 1.0:
        return clipped
    sorted_desc = np.sort(v)[::-1]
    cumulative = np.cumsum(sorted_desc) - 1.0
    ranks = np.arange(1, v.size + 1)
    rho = np.nonzero(sorted_desc * ranks > cumulative)[0][-1]
    theta = cumulative[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def _initial_x(p: np.ndarray, init: str) -> np.ndarray:
    num_heads, num_classes = p.shape
    if init == "uniform":
        x = np.full((num_heads, num_classes), 1.0 / num_classes)
    elif init == "proportional":
        x = p.copy()
        row_sums = x.sum(axis=1, keepdims=True)
        np.divide(x, row_sums, out=x, where=row_sums > 1.0)
    else:
        raise ValueError(f"unknown init {init!r}")
    return x


def _max_row_violation(x: np.ndarray) -> float:
    over = max(0.0, float(x.sum(axis=1).max()) - 1.0)
    below = max(0.0, float(-x.min()))
    return max(over, below)


def _single_head_x(p: np.ndarray) -> np.ndarray:
    """One-hot matrix of per-class best single heads (ties to the lowest
    head index), the assignment heuristic_single_head reports."""
    own = -np.log(_clamp(p))
    log_off = np.log(_clamp(1.0 - p))
    off = -(log_off.sum(axis=1, keepdims=True) - log_off) / (p.shape[1] - 1)
    picks = (own + off).argmin(axis=0)
    x = np.zeros_like(p)
    x[picks, np.arange(p.shape[1])] = 1.0
    return x


def solve(
    label: ModelLabel,
    target_nodes: tuple[str, ...],
    cfg: ChcoConfig | None = None,
) -> ChcoResult:
    """Minimise the discriminative loss by block coordinate descent.

    Rows are swept cyclically; each row takes a projected gradient step
    sized by a two-sided line search from the base learning rate: when
    the base-rate candidate improves the loss, the step doubles while
    improvement continues (flat gradients otherwise crawl); when it
    does not, the step halves until a candidate improves, giving up
    after max_backtracks halvings and leaving the row unchanged.  The
    run stops when the relative loss change over a full sweep drops
    below rel_tolerance, and reports converged accordingly.
    """
    cfg = cfg or ChcoConfig()
    pm = head_class_probabilities(label, target_nodes)
    p = pm.p
    num_heads = p.shape[0]
    if p.shape[1] < 2:
        raise SingleClassTask("discriminative loss needs at least two classes")

    x = _initial_x(p, cfg.init)
    _, loss = discriminative_loss(p, x)
    # when the best single-head assignment is feasible (no head shared
    # between classes) and beats the configured start, descend from it
    # instead: the result then never trails the single-head baseline
    candidate = _single_head_x(p)
    if float(candidate.sum(axis=1).max()) <= 1.0:
        _, candidate_loss = discriminative_loss(p, candidate)
        if candidate_loss < loss:
            x, loss = candidate, candidate_loss
    history: list[SweepRecord] = []
    step_losses: list[float] = [loss] if cfg.keep_history else []
    converged = False
    sweeps_used = 0

    for sweep in range(1, cfg.max_sweeps + 1):
        sweeps_used = sweep
        prev_loss = loss
        for head in range(num_heads):
            grad = loss_gradient_row(p, x, head)
            step = cfg.learning_rate
            old_row = x[head].copy()
            x[head] = project_row_to_simplex(old_row - step * grad)
            _, trial_loss = discriminative_loss(p, x)
            if trial_loss < loss:
                # forward-track: with a flat gradient the base-rate step
                # barely moves, so keep doubling while the loss improves
                # (projection keeps every candidate feasible)
                best_loss, best_row = trial_loss, x[head].copy()
                for _ in range(cfg.max_backtracks):
                    step /= cfg.backtrack_factor
                    x[head] = project_row_to_simplex(old_row - step * grad)
                    _, trial_loss = discriminative_loss(p, x)
                    if trial_loss < best_loss:
                        best_loss, best_row = trial_loss, x[head].copy()
                    else:
                        break
                x[head] = best_row
                loss = best_loss
                if cfg.keep_history:
                    step_losses.append(loss)
            else:
                for _ in range(cfg.max_backtracks):
                    step *= cfg.backtrack_factor
                    x[head] = project_row_to_simplex(old_row - step * grad)
                    _, trial_loss = discriminative_loss(p, x)
                    if trial_loss < loss:
                        loss = trial_loss
                        if cfg.keep_history:
                            step_losses.append(loss)
                        break
                else:
                    x[head] = old_row
        if cfg.keep_history:
            history.append(
                SweepRecord(
                    sweep=sweep,
                    total_loss=loss,
                    max_row_violation=_max_row_violation(x),
                )
            )
        rel_change = abs(prev_loss - loss) / max(abs(prev_loss), CLAMP_EPS)
        if rel_change < cfg.rel_tolerance:
            converged = True
            break

    class_losses, total = discriminative_loss(p, x)
    return ChcoResult(
        x=CombinationMatrix(x=x),
        class_losses=class_losses,
        total_loss=total,
        sweeps_used=sweeps_used,
        converged=converged,
        history=history,
        step_losses=step_losses,
    )


def heuristic_single_head(
    label: ModelLabel, target_nodes: tuple[str, ...]
) -> ChcoResult:
    """Single best head per class: for each class, pick the head whose
    one-hot column minimises that class's loss (ties break toward the
    lowest head index).  Rows may end up infeasible when several classes
    pick the same head; that is the point of comparison against the
    optimiser, which cannot.
    """
    pm = head_class_probabilities(label, target_nodes)
    p = pm.p
    if p.shape[1] < 2:
        raise SingleClassTask("discriminative loss needs at least two classes")
    # one-hot x for head h gives q[c][c'] = p[h][c']
    x = _single_head_x(p)
    class_losses, total = discriminative_loss(p, x)
    return ChcoResult(
        x=CombinationMatrix(x=x),
        class_losses=class_losses,
        total_loss=total,
        sweeps_used=0,
        converged=True,
    )
