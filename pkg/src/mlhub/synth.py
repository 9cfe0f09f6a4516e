"""Synthetic worlds: Gaussian class clouds on a generated semantic DAG.

A world fixes class mean vectors (one per leaf), an isotropic noise
level, and a bottom-up grouped hierarchy over the leaves.  Every
derived quantity (samples, expert weights, names) is keyed off the world
seed plus a role string, so regenerating any piece is reproducible and
independent of generation order: two experts built with identical
parameters produce identical traces.

Experts are linear heads over leaves: head h scores
(mean_h + corruption * eps_h) . x - 0.5 * ||mean_h + corruption * eps_h||^2,
which at corruption zero is the Bayes-optimal discriminant for equal
priors and shared isotropic covariance.

The module also carries the measurement harness: a Monte-Carlo Bayes
oracle, an exhaustive grid oracle for the head-combination optimiser on
tiny instances, a hub-scaling benchmark, and a
discriminability-vs-coverage ablation comparing the optimiser against
the single-best-head heuristic.
"""

from __future__ import annotations

import hashlib
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import chco, labelling, reuse, sdag, selection
from .errors import InstanceTooLarge, UnknownClass

GRID_MAX_EVALS = 50_000_000

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"


def seeded_rng(*parts: object) -> np.random.Generator:
    """Generator keyed by a tuple of values, stable across processes."""
    material = "|".join(repr(p) for p in parts).encode("utf-8")
    digest = hashlib.blake2s(material, digest_size=16).digest()
    return np.random.default_rng(int.from_bytes(digest, "little"))


def _pseudoword(rng: np.random.Generator, syllables: int = 3) -> str:
    chars = []
    for _ in range(syllables):
        chars.append(_CONSONANTS[int(rng.integers(len(_CONSONANTS)))])
        chars.append(_VOWELS[int(rng.integers(len(_VOWELS)))])
    return "".join(chars)


def _unique_names(rng: np.random.Generator, count: int, words: int) -> list[str]:
    names: list[str] = []
    seen: set[str] = set()
    while len(names) < count:
        name = " ".join(_pseudoword(rng) for _ in range(words))
        if name not in seen:
            seen.add(name)
            names.append(name)
    return names


@dataclass(frozen=True)
class SyntheticWorld:
    """Ground truth for a generated world.

    class_means maps leaf node_id -> mean vector; samples for internal
    nodes mix their descendant leaves uniformly.
    """

    seed: int
    feature_dim: int
    noise_sigma: float
    graph: sdag.SDag
    class_means: dict[str, np.ndarray]
    leaf_ids: tuple[str, ...]

    def descendant_leaves(self, node_id: str) -> tuple[str, ...]:
        if node_id not in self.graph.nodes:
            raise UnknownClass(f"unknown node {node_id!r}")
        if node_id in self.class_means:
            return (node_id,)
        leaves: list[str] = []
        stack = [node_id]
        seen: set[str] = set()
        while stack:
            cur = stack.pop()
            for succ in self.graph.successors(cur):
                if succ in seen:
                    continue
                seen.add(succ)
                if succ in self.class_means:
                    leaves.append(succ)
                else:
                    stack.append(succ)
        return tuple(sorted(leaves))


def gen_world(
    seed: int,
    num_leaf_classes: int,
    feature_dim: int = 16,
    noise_sigma: float = 1.0,
    fanout: int = 4,
    center_scale: float = 3.0,
    offset_scale: float = 2.0,
) -> SyntheticWorld:
    """Generate a world: named leaves, grouped hierarchy, Gaussian means.

    Leaves are grouped bottom-up in runs of ``fanout`` until a single
    root remains.  Leaf means are hierarchical: one center per level-one
    group (scale ``center_scale``) plus a per-leaf offset (scale
    ``offset_scale``), so siblings are closer to each other than to
    other groups.
    """
    if num_leaf_classes < 1:
        raise ValueError("need at least one leaf class")
    if fanout < 2:
        raise ValueError("fanout must be at least 2")
    name_rng = seeded_rng(seed, "names")
    leaf_names = _unique_names(name_rng, num_leaf_classes, words=2)

    nodes: list[sdag.SemanticNode] = []
    leaf_ids = tuple(f"leaf-{i:03d}" for i in range(num_leaf_classes))
    for node_id, name in zip(leaf_ids, leaf_names):
        nodes.append(
            sdag.SemanticNode(
                node_id=node_id,
                name=name,
                description=f"samples of {name}",
            )
        )

    level = 1
    current: list[str] = list(leaf_ids)
    group_of_leaf: dict[str, int] = {}
    while len(current) > 1:
        groups = [current[i : i + fanout] for i in range(0, len(current), fanout)]
        if len(groups) == 1:
            parent_ids = ["root"]
            parent_names = ["everything"]
        else:
            parent_ids = [f"grp-{level}-{j:02d}" for j in range(len(groups))]
            parent_names = _unique_names(name_rng, len(groups), words=2)
        for j, group in enumerate(groups):
            name = parent_names[j]
            description = (
                "all concepts"
                if parent_ids[j] == "root"
                else f"varieties of {name}"
            )
            nodes.append(
                sdag.SemanticNode(
                    node_id=parent_ids[j],
                    name=name,
                    description=description,
                    successor_ids=tuple(group),
                )
            )
            if level == 1:
                for leaf in group:
                    group_of_leaf[leaf] = j
        current = parent_ids
        level += 1
    if num_leaf_classes == 1:
        group_of_leaf[leaf_ids[0]] = 0

    graph = sdag.build_sdag(nodes, version=1)

    mean_rng = seeded_rng(seed, "means")
    num_groups = max(group_of_leaf.values()) + 1
    centers = mean_rng.normal(0.0, center_scale, size=(num_groups, feature_dim))
    offsets = mean_rng.normal(
        0.0, offset_scale, size=(num_leaf_classes, feature_dim)
    )
    class_means = {
        leaf: centers[group_of_leaf[leaf]] + offsets[i]
        for i, leaf in enumerate(leaf_ids)
    }
    return SyntheticWorld(
        seed=seed,
        feature_dim=feature_dim,
        noise_sigma=noise_sigma,
        graph=graph,
        class_means=class_means,
        leaf_ids=leaf_ids,
    )


def sample_node(
    world: SyntheticWorld, node_id: str, count: int, salt: str = ""
) -> np.ndarray:
    """Draw samples for one node, keyed by (world seed, node, count,
    salt): every caller asking for the same draw gets the same samples.

    Leaves sample their Gaussian; internal nodes sample a uniform
    mixture over descendant leaves.
    """
    rng = seeded_rng(world.seed, "samples", node_id, count, salt)
    if node_id in world.class_means:
        mean = world.class_means[node_id]
        return mean + rng.normal(0.0, world.noise_sigma, size=(count, world.feature_dim))
    leaves = world.descendant_leaves(node_id)
    if not leaves:
        raise UnknownClass(f"node {node_id!r} has no descendant leaves")
    picks = rng.integers(0, len(leaves), size=count)
    means = np.stack([world.class_means[leaves[p]] for p in picks])
    return means + rng.normal(0.0, world.noise_sigma, size=(count, world.feature_dim))


def sample_task_set(
    world: SyntheticWorld,
    task_leaves: tuple[str, ...],
    count: int,
    salt: str = "test",
) -> tuple[np.ndarray, np.ndarray]:
    """Labelled evaluation draw: uniform class, Gaussian sample.

    Returns (samples, labels) where labels index into task_leaves.
    """
    for leaf in task_leaves:
        if leaf not in world.class_means:
            raise UnknownClass(f"unknown leaf {leaf!r}")
    rng = seeded_rng(world.seed, "taskset", task_leaves, count, salt)
    labels = rng.integers(0, len(task_leaves), size=count)
    means = np.stack([world.class_means[task_leaves[y]] for y in labels])
    xs = means + rng.normal(0.0, world.noise_sigma, size=(count, world.feature_dim))
    return xs, labels


@dataclass(frozen=True)
class SyntheticExpert:
    """A linear multi-head classifier over a set of leaves."""

    model_id: str
    head_nodes: tuple[str, ...]
    weights: np.ndarray
    biases: np.ndarray
    corruption: float

    @property
    def head_count(self) -> int:
        return len(self.head_nodes)


def gen_expert(
    world: SyntheticWorld,
    class_node_ids: tuple[str, ...],
    corruption: float = 0.0,
    tag: str = "",
) -> SyntheticExpert:
    """Build an expert whose heads are the given leaves.

    Head weights are the leaf means plus corruption-scaled Gaussian
    noise; biases make the zero-corruption expert Bayes-optimal.  The
    model id is a content hash of the generating parameters, so equal
    parameters give equal ids (and equal traces).
    """
    for node_id in class_node_ids:
        if node_id not in world.class_means:
            raise UnknownClass(f"expert heads must be leaves, got {node_id!r}")
    if corruption < 0.0:
        raise ValueError("corruption must be non-negative")
    rng = seeded_rng(world.seed, "expert", class_node_ids, corruption, tag)
    means = np.stack([world.class_means[n] for n in class_node_ids])
    noise = rng.normal(0.0, 1.0, size=means.shape)
    weights = means + corruption * noise
    biases = -0.5 * (weights**2).sum(axis=1)
    material = "|".join(
        (str(world.seed), repr(class_node_ids), repr(corruption), tag)
    ).encode("utf-8")
    model_id = "m" + hashlib.blake2s(material, digest_size=6).hexdigest()
    return SyntheticExpert(
        model_id=model_id,
        head_nodes=tuple(class_node_ids),
        weights=weights,
        biases=biases,
        corruption=corruption,
    )


def expert_logits(expert: SyntheticExpert, xs: np.ndarray) -> np.ndarray:
    """Raw head scores, shape (num_samples, head_count)."""
    return xs @ expert.weights.T + expert.biases


def expert_probabilities(expert: SyntheticExpert, xs: np.ndarray) -> np.ndarray:
    """Row-wise softmax of the head scores."""
    logits = expert_logits(expert, xs)
    shifted = logits - logits.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    return expd / expd.sum(axis=1, keepdims=True)


def gen_trace(
    expert: SyntheticExpert,
    world: SyntheticWorld,
    samples_per_node: int = 50,
    node_ids: tuple[str, ...] | None = None,
) -> labelling.LogitTrace:
    """Pre-test the expert: run it on samples of every graph node (or
    the given subset) and record the raw logits."""
    if samples_per_node < 1:
        raise ValueError("need at least one sample per node")
    targets = node_ids if node_ids is not None else world.graph.topological_order
    node_logits: dict[str, np.ndarray] = {}
    for node_id in targets:
        xs = sample_node(world, node_id, samples_per_node)
        node_logits[node_id] = expert_logits(expert, xs)
    return labelling.LogitTrace(
        model_id=expert.model_id,
        head_count=expert.head_count,
        node_logits=node_logits,
        sdag_version=world.graph.version,
    )


@dataclass(frozen=True)
class BayesEstimate:
    """Monte-Carlo estimate of the Bayes accuracy on a task."""

    accuracy: float
    std_error: float
    num_samples: int


def bayes_rule_predict(
    world: SyntheticWorld, task_leaves: tuple[str, ...], xs: np.ndarray
) -> np.ndarray:
    """Bayes rule for equal priors and shared isotropic covariance:
    nearest class mean.  Returns indices into task_leaves."""
    means = np.stack([world.class_means[leaf] for leaf in task_leaves])
    d2 = ((xs[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
    return d2.argmin(axis=1)


def bayes_accuracy(
    world: SyntheticWorld,
    task_leaves: tuple[str, ...],
    num_samples: int = 20_000,
    salt: str = "bayes",
) -> BayesEstimate:
    """Monte-Carlo Bayes accuracy with its binomial standard error."""
    xs, labels = sample_task_set(world, task_leaves, num_samples, salt=salt)
    accuracy = float((bayes_rule_predict(world, task_leaves, xs) == labels).mean())
    std_error = math.sqrt(accuracy * (1.0 - accuracy) / num_samples)
    return BayesEstimate(
        accuracy=accuracy, std_error=std_error, num_samples=num_samples
    )


def _grid_rows(num_classes: int, step: float) -> np.ndarray:
    """All grid points of one feasible row: entries are multiples of
    step, non-negative, summing to at most one."""
    ticks = round(1.0 / step)
    if abs(ticks * step - 1.0) > 1e-9:
        raise ValueError(f"step {step} must divide 1 evenly")
    rows = [
        combo
        for combo in itertools.product(range(ticks + 1), repeat=num_classes)
        if sum(combo) <= ticks
    ]
    return np.asarray(rows, dtype=np.float64) * step


def _batch_loss(p: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Total discriminative loss for a batch of combination matrices,
    same clamping as the solver."""
    num_classes = p.shape[1]
    q = np.einsum("bhc,hd->bcd", xs, p)
    clamped = np.clip(q, chco.CLAMP_EPS, 1.0 - chco.CLAMP_EPS)
    idx = np.arange(num_classes)
    diag = clamped[:, idx, idx]
    log_off = np.log(np.clip(1.0 - q, chco.CLAMP_EPS, 1.0 - chco.CLAMP_EPS))
    log_off[:, idx, idx] = 0.0
    per_class = -np.log(diag) - log_off.sum(axis=2) / (num_classes - 1)
    return per_class.sum(axis=1)


def grid_oracle_chco(
    p: np.ndarray, step: float = 0.05, max_evals: int = GRID_MAX_EVALS
) -> tuple[np.ndarray, float]:
    """Exhaustive minimiser of the discriminative loss over the grid of
    feasible combination matrices with the given step.

    Enumerates every matrix whose rows are grid points of the row
    constraint set, evaluates the loss in vectorised chunks, and returns
    (best matrix, best loss); ties go to the first matrix in enumeration
    order.  Raises InstanceTooLarge when the grid would exceed
    ``max_evals`` points.
    """
    num_heads, num_classes = p.shape
    if num_classes < 2:
        raise ValueError("need at least two classes")
    rows = _grid_rows(num_classes, step)
    num_rows = rows.shape[0]
    total = num_rows**num_heads
    if total > max_evals:
        raise InstanceTooLarge(
            f"{num_heads} rows x {num_rows} grid points each = {total} "
            f"matrices, limit {max_evals}"
        )
    best_loss = math.inf
    best_idx = -1
    chunk = 1_000_000
    for start in range(0, total, chunk):
        stop = min(start + chunk, total)
        flat = np.arange(start, stop)
        row_indices = np.empty((stop - start, num_heads), dtype=np.int64)
        rest = flat
        for h in range(num_heads - 1, -1, -1):
            row_indices[:, h] = rest % num_rows
            rest = rest // num_rows
        xs = rows[row_indices]
        losses = _batch_loss(p, xs)
        arg = int(losses.argmin())
        if losses[arg] < best_loss:
            best_loss = float(losses[arg])
            best_idx = start + arg
    indices = []
    rest = best_idx
    for _ in range(num_heads):
        indices.append(rest % num_rows)
        rest //= num_rows
    indices.reverse()
    return rows[np.asarray(indices, dtype=np.int64)], best_loss


@dataclass
class ScalingConfig:
    """Hub-scaling benchmark: grow the hub, measure task accuracy.

    Experts cover subsets of the task classes; a generalist covers them
    all at its own corruption level.  Samples, worlds, and experts are
    all keyed off ``seed`` plus the repetition index.

    coverage_mode picks the hub shape: "random" draws each expert's
    class subset independently, "partition" tiles the task with
    disjoint blocks, and "broad" puts one whole-task expert first and
    tiles the rest with disjoint specialist blocks.
    """

    seed: int = 0
    num_seeds: int = 20
    hub_sizes: tuple[int, ...] = (0, 2, 4, 6, 8, 10, 12, 14, 16, 18)
    num_leaf_classes: int = 24
    task_classes: int = 20
    feature_dim: int = 16
    noise_sigma: float = 1.0
    fanout: int = 4
    center_scale: float = 0.9
    offset_scale: float = 0.9
    classes_per_expert: int = 4
    expert_corruption: float = 0.0
    generalist_corruption: float = 1.5
    samples_per_node: int = 50
    test_samples: int = 500
    budget_k: int = 2
    score_threshold: float | None = None
    method: str = "chco"
    discount: float = 0.7
    aggregation_mode: str = "recursive"
    coverage_mode: str = "random"
    record_bayes: bool = False

    def __post_init__(self) -> None:
        if tuple(sorted(set(self.hub_sizes))) != tuple(self.hub_sizes):
            raise ValueError("hub_sizes must be strictly increasing")
        if self.task_classes > self.num_leaf_classes:
            raise ValueError("task cannot have more classes than the world")
        if self.coverage_mode not in ("random", "partition", "broad"):
            raise ValueError(f"unknown coverage_mode {self.coverage_mode!r}")


@dataclass(frozen=True)
class BenchmarkRecord:
    """One measured configuration (a hub size, or an ablation arm).

    Scalar fields are means over seeds; per_seed holds the raw series.
    accuracy_covered is None when no seed had any covered test sample.
    """

    key: str
    accuracy_all: float
    accuracy_covered: float | None
    coverage: float
    models_used: float
    per_seed: dict[str, tuple[float | None, ...]] = field(default_factory=dict)


@dataclass(frozen=True)
class BenchmarkResult:
    """A benchmark run: scenario name, per-arm records, and extras
    (scenario-level scalars such as the Bayes mean)."""

    scenario: str
    seeds: tuple[int, ...]
    records: tuple[BenchmarkRecord, ...]
    extras: dict[str, float] = field(default_factory=dict)


def _mean_or_none(values: list[float | None]) -> float | None:
    usable = [v for v in values if v is not None]
    if not usable:
        return None
    return float(np.mean(usable))


def _predict_samples(
    hub_outputs: dict[str, np.ndarray],
    report: selection.SelectionReport,
    generalist_probs: np.ndarray,
) -> np.ndarray:
    """Patched predictions for a whole evaluation set, one class index
    per sample."""
    num_samples = generalist_probs.shape[0]
    covered = tuple(sorted(report.ensembles))
    uncovered = tuple(
        c for c in range(len(report.class_texts)) if c not in report.ensembles
    )
    partition = reuse.PatchPartition(
        expert_classes=covered, generalist_classes=uncovered
    )
    predictions = np.empty(num_samples, dtype=np.int64)
    for i in range(num_samples):
        outputs = {
            model_id: reuse.ModelOutput(
                model_id=model_id, probabilities=probs[i]
            )
            for model_id, probs in hub_outputs.items()
        }
        verdict = reuse.predict_with_patch(
            outputs,
            report,
            reuse.GeneralistOutput(probabilities=generalist_probs[i]),
            partition,
        )
        predictions[i] = verdict.class_index
    return predictions


def _label_expert(
    expert: SyntheticExpert,
    world: SyntheticWorld,
    cfg_samples: int,
    discount: float,
    aggregation_mode: str,
) -> labelling.HubRecord:
    trace = gen_trace(expert, world, samples_per_node=cfg_samples)
    label = labelling.aggregate_label(
        world.graph,
        expert.model_id,
        expert.head_count,
        labelling.mean_logits(trace),
        discount=discount,
        aggregation_mode=aggregation_mode,
    )
    return labelling.HubRecord(
        model_id=expert.model_id,
        head_count=expert.head_count,
        label=label,
        provenance="synthetic",
    )


def run_scaling_benchmark(cfg: ScalingConfig) -> BenchmarkResult:
    """Measure task accuracy as the hub grows.

    Per repetition: build a world and task, generate the full expert
    pool and one generalist, pre-test and label every expert once, then
    sweep hub prefixes.  Head-combination results are cached per model
    (they do not depend on hub size), so the sweep only redoes selection
    and prediction.  Accuracy at hub size zero is exactly the
    generalist's accuracy: with nothing covered, patched prediction
    reduces to the generalist argmax.
    """
    max_hub = max(cfg.hub_sizes)
    seeds = tuple(cfg.seed + i for i in range(cfg.num_seeds))
    provider = sdag.HashedTrigramProvider()

    acc_all: dict[int, list[float | None]] = {n: [] for n in cfg.hub_sizes}
    acc_cov: dict[int, list[float | None]] = {n: [] for n in cfg.hub_sizes}
    coverage: dict[int, list[float | None]] = {n: [] for n in cfg.hub_sizes}
    used: dict[int, list[float | None]] = {n: [] for n in cfg.hub_sizes}
    bayes_per_seed: list[float] = []

    for rep_seed in seeds:
        world = gen_world(
            seed=rep_seed,
            num_leaf_classes=cfg.num_leaf_classes,
            feature_dim=cfg.feature_dim,
            noise_sigma=cfg.noise_sigma,
            fanout=cfg.fanout,
            center_scale=cfg.center_scale,
            offset_scale=cfg.offset_scale,
        )
        pick_rng = seeded_rng(rep_seed, "task-pick")
        chosen = pick_rng.choice(
            len(world.leaf_ids), size=cfg.task_classes, replace=False
        )
        task_leaves = tuple(world.leaf_ids[i] for i in sorted(chosen))
        task = sdag.TaskSpec(
            task_id=f"scaling-{rep_seed}",
            class_texts=tuple(
                world.graph.nodes[leaf].name for leaf in task_leaves
            ),
        )
        match = sdag.match_classes(task, world.graph, provider)

        experts = []
        if cfg.coverage_mode in ("partition", "broad"):
            # consecutive blocks of a seeded shuffle: the first
            # task_classes / classes_per_expert experts tile the task
            shuffled = seeded_rng(rep_seed, "expert-blocks").permutation(
                len(task_leaves)
            )
            num_blocks = math.ceil(len(task_leaves) / cfg.classes_per_expert)
            blocks = [
                shuffled[b * cfg.classes_per_expert : (b + 1) * cfg.classes_per_expert]
                for b in range(num_blocks)
            ]
            specialists = list(range(max_hub))
            if cfg.coverage_mode == "broad" and max_hub > 0:
                experts.append(
                    gen_expert(
                        world, task_leaves, cfg.expert_corruption, tag="e0"
                    )
                )
                specialists = list(range(1, max_hub))
            for j in specialists:
                block = blocks[j % num_blocks]
                subset = tuple(task_leaves[i] for i in sorted(block))
                experts.append(
                    gen_expert(world, subset, cfg.expert_corruption, tag=f"e{j}")
                )
        else:
            for j in range(max_hub):
                subset_idx = seeded_rng(rep_seed, "expert-pick", j).choice(
                    len(task_leaves), size=cfg.classes_per_expert, replace=False
                )
                subset = tuple(task_leaves[i] for i in sorted(subset_idx))
                experts.append(
                    gen_expert(world, subset, cfg.expert_corruption, tag=f"e{j}")
                )
        hub = [
            _label_expert(
                e, world, cfg.samples_per_node, cfg.discount, cfg.aggregation_mode
            )
            for e in experts
        ]
        scores_full = selection.score_hub(hub, match, method=cfg.method)

        xs, labels = sample_task_set(world, task_leaves, cfg.test_samples)
        generalist = gen_expert(
            world, task_leaves, cfg.generalist_corruption, tag="generalist"
        )
        generalist_probs = expert_probabilities(generalist, xs)
        hub_outputs = {
            e.model_id: expert_probabilities(e, xs) for e in experts
        }
        if cfg.record_bayes:
            bayes_hits = bayes_rule_predict(world, task_leaves, xs) == labels
            bayes_per_seed.append(float(bayes_hits.mean()))

        for hub_size in cfg.hub_sizes:
            subset_ids = {e.model_id for e in experts[:hub_size]}
            scores = {
                mid: res for mid, res in scores_full.items() if mid in subset_ids
            }
            report = selection.select_ensembles(
                scores,
                match,
                task_id=task.task_id,
                class_texts=task.class_texts,
                sel=selection.SelectionConfig(
                    budget_k=cfg.budget_k,
                    score_threshold=cfg.score_threshold,
                ),
            )
            predictions = _predict_samples(hub_outputs, report, generalist_probs)
            hits = predictions == labels
            acc_all[hub_size].append(float(hits.mean()))
            covered_mask = np.isin(labels, sorted(report.ensembles))
            acc_cov[hub_size].append(
                float(hits[covered_mask].mean()) if covered_mask.any() else None
            )
            coverage[hub_size].append(report.coverage)
            used[hub_size].append(float(report.models_used))

    records = tuple(
        BenchmarkRecord(
            key=f"hub={hub_size}",
            accuracy_all=float(np.mean([v for v in acc_all[hub_size]])),
            accuracy_covered=_mean_or_none(acc_cov[hub_size]),
            coverage=float(np.mean([v for v in coverage[hub_size]])),
            models_used=float(np.mean([v for v in used[hub_size]])),
            per_seed={
                "accuracy_all": tuple(acc_all[hub_size]),
                "accuracy_covered": tuple(acc_cov[hub_size]),
                "coverage": tuple(coverage[hub_size]),
                "models_used": tuple(used[hub_size]),
            },
        )
        for hub_size in cfg.hub_sizes
    )
    extras: dict[str, float] = {}
    if cfg.record_bayes:
        # Bayes rule evaluated on the very same test draws, so pipeline
        # accuracies pair with it sample for sample.
        records = records + (
            BenchmarkRecord(
                key="bayes",
                accuracy_all=float(np.mean(bayes_per_seed)),
                accuracy_covered=float(np.mean(bayes_per_seed)),
                coverage=1.0,
                models_used=0.0,
                per_seed={"accuracy_all": tuple(bayes_per_seed)},
            ),
        )
        extras["bayes_accuracy_mean"] = float(np.mean(bayes_per_seed))
        extras["mc_std_error"] = math.sqrt(
            0.25 / (cfg.test_samples * cfg.num_seeds)
        )
    return BenchmarkResult(
        scenario="scaling", seeds=seeds, records=records, extras=extras
    )


@dataclass
class DvcConfig:
    """Discriminability-vs-coverage ablation: one fine-grained expert,
    task classes are the superclass nodes.

    The single-best-head heuristic must pick one leaf head per
    superclass; the optimiser may spread weight over all member leaves.
    """

    seed: int = 0
    num_seeds: int = 20
    num_superclasses: int = 2
    leaves_per_superclass: int = 10
    feature_dim: int = 16
    noise_sigma: float = 1.0
    center_scale: float = 0.9
    offset_scale: float = 0.9
    expert_corruption: float = 0.0
    samples_per_node: int = 50
    test_samples: int = 400
    discount: float = 0.7
    aggregation_mode: str = "recursive"


def _superclass_sample_set(
    world: SyntheticWorld,
    super_nodes: tuple[str, ...],
    count: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Evaluation draw over superclasses: uniform superclass, uniform
    member leaf, Gaussian sample."""
    rng = seeded_rng(world.seed, "superset", super_nodes, count)
    labels = rng.integers(0, len(super_nodes), size=count)
    xs = np.empty((count, world.feature_dim))
    for i, y in enumerate(labels):
        leaves = world.descendant_leaves(super_nodes[y])
        leaf = leaves[int(rng.integers(0, len(leaves)))]
        xs[i] = world.class_means[leaf] + rng.normal(
            0.0, world.noise_sigma, size=world.feature_dim
        )
    return xs, labels


def run_dvc_ablation(cfg: DvcConfig) -> BenchmarkResult:
    """Compare optimised head combinations against the single-best-head
    heuristic on superclass tasks.

    One expert with a head per leaf; task classes are the superclass
    names, so per-class columns must aggregate leaf heads to do well.
    Records one arm per scoring method with accuracy and the mean count
    of nonzero head weights per class column.
    """
    seeds = tuple(cfg.seed + i for i in range(cfg.num_seeds))
    provider = sdag.HashedTrigramProvider()
    methods = ("chco", "heu")
    acc: dict[str, list[float | None]] = {m: [] for m in methods}
    nonzero: dict[str, list[float | None]] = {m: [] for m in methods}

    for rep_seed in seeds:
        world = gen_world(
            seed=rep_seed,
            num_leaf_classes=cfg.num_superclasses * cfg.leaves_per_superclass,
            feature_dim=cfg.feature_dim,
            noise_sigma=cfg.noise_sigma,
            fanout=cfg.leaves_per_superclass,
            center_scale=cfg.center_scale,
            offset_scale=cfg.offset_scale,
        )
        super_nodes = tuple(
            nid
            for nid in sorted(world.graph.nodes)
            if nid.startswith("grp-1-")
        )
        expert = gen_expert(world, world.leaf_ids, cfg.expert_corruption, tag="fine")
        hub = [
            _label_expert(
                expert, world, cfg.samples_per_node, cfg.discount, cfg.aggregation_mode
            )
        ]
        task = sdag.TaskSpec(
            task_id=f"dvc-{rep_seed}",
            class_texts=tuple(world.graph.nodes[n].name for n in super_nodes),
        )
        match = sdag.match_classes(task, world.graph, provider)
        xs, labels = _superclass_sample_set(world, super_nodes, cfg.test_samples)
        probs = expert_probabilities(expert, xs)

        for method in methods:
            scores = selection.score_hub(hub, match, method=method)
            report = selection.select_ensembles(
                scores,
                match,
                task_id=task.task_id,
                class_texts=task.class_texts,
                sel=selection.SelectionConfig(
                    budget_k=1, score_threshold=math.inf
                ),
            )
            predictions = np.empty(len(labels), dtype=np.int64)
            for i in range(len(labels)):
                outputs = {
                    expert.model_id: reuse.ModelOutput(
                        model_id=expert.model_id, probabilities=probs[i]
                    )
                }
                predictions[i] = reuse.predict(outputs, report).class_index
            acc[method].append(float((predictions == labels).mean()))
            result = scores[expert.model_id]
            nonzero[method].append(
                float((np.abs(result.x.x) > 1e-9).sum(axis=0).mean())
            )

    records = tuple(
        BenchmarkRecord(
            key=f"method={method}",
            accuracy_all=float(np.mean([v for v in acc[method]])),
            accuracy_covered=float(np.mean([v for v in acc[method]])),
            coverage=1.0,
            models_used=1.0,
            per_seed={
                "accuracy_all": tuple(acc[method]),
                "nonzero_heads": tuple(nonzero[method]),
            },
        )
        for method in methods
    )
    extras = {
        "chco_minus_heu": float(
            np.mean([v for v in acc["chco"]]) - np.mean([v for v in acc["heu"]])
        ),
        "chco_nonzero_heads_mean": float(np.mean([v for v in nonzero["chco"]])),
        "heu_nonzero_heads_mean": float(np.mean([v for v in nonzero["heu"]])),
    }
    return BenchmarkResult(
        scenario="dvc_ablation", seeds=seeds, records=records, extras=extras
    )
