"""Command-line entry points for the pipeline at desk scale.

Exit codes: 0 success, 1 usage error, 2 data or schema error (including
missing input files), 3 pipeline error.  Output files carry no
timestamps and iteration orders are fixed, so reruns with equal inputs
produce byte-identical artifacts regardless of --jobs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import chco, labelling, reuse, sdag, selection, store, synth
from .errors import MlhubError, StoreError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_PIPELINE = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad flags; the contract here wants 1."""

    def error(self, message: str) -> None:  # type: ignore[override]
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="mlhub", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("sdag-build", help="validate node definitions into a graph file")
    p.add_argument("--nodes", required=True, help="JSON node definitions")
    p.add_argument("--out", required=True, help="graph file to write")

    p = sub.add_parser("label", help="aggregate a pre-test trace into a label")
    p.add_argument("--trace", required=True, help="logit trace stream")
    p.add_argument("--sdag", required=True, help="graph file")
    p.add_argument("--out", required=True, help="label file to write")
    p.add_argument("--discount", type=float, default=0.7)
    p.add_argument(
        "--agg-mode",
        choices=("one-hop", "recursive"),
        default="recursive",
    )

    p = sub.add_parser("select", help="score labelled models and build ensembles")
    p.add_argument("--labels", required=True, help="directory of label files")
    p.add_argument("--sdag", required=True, help="graph file")
    p.add_argument("--task", required=True, help="task file")
    p.add_argument("--out", required=True, help="selection report to write")
    p.add_argument("--budget-k", type=int, default=2)
    p.add_argument("--beta", type=float, default=None, help="score threshold")
    p.add_argument("--method", choices=selection.SCORING_METHODS, default="chco")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--max-sweeps", type=int, default=200)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--min-similarity", type=float, default=0.5)
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    p.add_argument("--allow-version-mismatch", action="store_true")
    p.add_argument(
        "--debug-chco",
        metavar="DIR",
        default=None,
        help="write per-model sweep records into DIR",
    )

    p = sub.add_parser("predict", help="run selected ensembles over an output stream")
    p.add_argument("--report", required=True, help="selection report")
    p.add_argument("--outputs", required=True, help="model output stream")
    p.add_argument("--out", required=True, help="prediction stream to write")
    p.add_argument(
        "--confidence-mode", choices=reuse.CONFIDENCE_MODES, default="prob"
    )

    p = sub.add_parser("synth-gen", help="generate a synthetic pipeline fixture")
    p.add_argument("--config", required=True, help="generator config JSON")
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("bench", help="run a benchmark scenario")
    p.add_argument("--config", required=True, help="benchmark config JSON")
    p.add_argument("--out", required=True, help="benchmark result to write")
    p.add_argument("--table", default=None, help="also write a flat CSV table")

    p = sub.add_parser("chco-debug", help="dump solver sweeps for one label")
    p.add_argument("--label", required=True, help="label file")
    p.add_argument("--sdag", required=True, help="graph file")
    p.add_argument("--task", required=True, help="task file")
    p.add_argument("--out", required=True, help="sweep record stream to write")
    p.add_argument("--min-similarity", type=float, default=0.5)
    return parser


def _require_file(path: str) -> str:
    if not os.path.isfile(path):
        raise StoreError(f"no such file: {path}")
    return path


def _read_config(path: str) -> dict:
    with open(_require_file(path), "r", encoding="utf-8") as handle:
        try:
            obj = json.load(handle)
        except json.JSONDecodeError as exc:
            raise StoreError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise StoreError(f"{path}: config must be a JSON object")
    return obj


def cmd_sdag_build(args: argparse.Namespace) -> int:
    with open(_require_file(args.nodes), "r", encoding="utf-8") as handle:
        try:
            obj = json.load(handle)
        except json.JSONDecodeError as exc:
            raise StoreError(f"{args.nodes}: invalid JSON: {exc}") from exc
    if isinstance(obj, list):
        obj = {"version": 1, "nodes": obj}
    if not isinstance(obj, dict) or "nodes" not in obj:
        raise StoreError(f"{args.nodes}: expected a node list")
    defs = []
    for i, raw in enumerate(obj["nodes"]):
        if not isinstance(raw, dict) or "id" not in raw:
            raise StoreError(f"{args.nodes}: nodes[{i}] needs an 'id'")
        defs.append(
            sdag.SemanticNode(
                node_id=str(raw["id"]),
                name=str(raw.get("name", "")),
                description=str(raw.get("description", "")),
                successor_ids=tuple(str(s) for s in raw.get("successors", [])),
                sample_refs=tuple(str(s) for s in raw.get("samples", [])),
            )
        )
    g = sdag.build_sdag(defs, version=int(obj.get("version", 1)))
    store.save_sdag(g, args.out)
    print(f"wrote {args.out}: {len(g.nodes)} nodes, version {g.version}")
    return EXIT_OK


def cmd_label(args: argparse.Namespace) -> int:
    g = store.load_sdag(_require_file(args.sdag))
    trace = store.load_trace(_require_file(args.trace))
    label = labelling.aggregate_label(
        g,
        trace.model_id,
        trace.head_count,
        labelling.mean_logits(trace),
        discount=args.discount,
        aggregation_mode=args.agg_mode.replace("-", "_"),
    )
    store.save_label(label, args.out)
    print(f"wrote {args.out}: {len(label.scores)} node scores")
    return EXIT_OK


def _load_hub(labels_dir: str) -> list[labelling.HubRecord]:
    if not os.path.isdir(labels_dir):
        raise StoreError(f"no such directory: {labels_dir}")
    paths = sorted(
        os.path.join(labels_dir, name)
        for name in os.listdir(labels_dir)
        if name.endswith(".json")
    )
    hub = []
    for path in paths:
        label = store.load_label(path)
        hub.append(
            labelling.HubRecord(
                model_id=label.model_id,
                head_count=label.head_count,
                label=label,
                provenance=path,
            )
        )
    if not hub:
        raise StoreError(f"no labels found in {labels_dir}")
    return hub


def _write_sweep_records(result: chco.ChcoResult, path: str) -> None:
    lines = []
    for record in result.history:
        lines.append(
            json.dumps(
                {
                    "sweep": record.sweep,
                    "total_loss": record.total_loss,
                    "max_row_violation": record.max_row_violation,
                },
                sort_keys=True,
                allow_nan=False,
            )
        )
    lines.append(
        json.dumps(
            {
                "final": True,
                "total_loss": result.total_loss,
                "sweeps_used": result.sweeps_used,
                "converged": result.converged,
            },
            sort_keys=True,
            allow_nan=False,
        )
    )
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("\n".join(lines) + "\n")


def cmd_select(args: argparse.Namespace) -> int:
    g = store.load_sdag(_require_file(args.sdag))
    task = store.load_task(_require_file(args.task))
    hub = _load_hub(args.labels)
    match = sdag.match_classes(
        task, g, sdag.HashedTrigramProvider(), min_similarity=args.min_similarity
    )
    cfg = chco.ChcoConfig(
        learning_rate=args.lr,
        max_sweeps=args.max_sweeps,
        rel_tolerance=args.tol,
        keep_history=args.debug_chco is not None,
    )
    jobs = args.jobs if args.debug_chco is None else 1
    scores = selection.score_hub(
        hub,
        match,
        cfg=cfg,
        method=args.method,
        seed=args.seed,
        jobs=jobs,
        allow_version_mismatch=args.allow_version_mismatch,
    )
    if args.debug_chco is not None:
        os.makedirs(args.debug_chco, exist_ok=True)
        for model_id in sorted(scores):
            _write_sweep_records(
                scores[model_id],
                os.path.join(args.debug_chco, f"sweeps-{model_id}.jsonl"),
            )
    report = selection.select_ensembles(
        scores,
        match,
        task_id=task.task_id,
        class_texts=task.class_texts,
        sel=selection.SelectionConfig(
            budget_k=args.budget_k, score_threshold=args.beta
        ),
    )
    store.save_selection_report(report, args.out)
    print(
        f"wrote {args.out}: coverage {report.coverage:.3f}, "
        f"{report.models_used} models used"
    )
    return EXIT_OK


def cmd_predict(args: argparse.Namespace) -> int:
    report = store.load_selection_report(_require_file(args.report))
    _, records = store.load_outputs(_require_file(args.outputs))
    covered = tuple(sorted(report.ensembles))
    uncovered = tuple(
        c for c in range(len(report.class_texts)) if c not in report.ensembles
    )
    partition = reuse.PatchPartition(
        expert_classes=covered, generalist_classes=uncovered
    )
    rows = []
    for record in records:
        outputs = {
            mid: reuse.ModelOutput(model_id=mid, probabilities=vec)
            for mid, vec in record.outputs.items()
        }
        if record.generalist is not None:
            prediction = reuse.predict_with_patch(
                outputs,
                report,
                reuse.GeneralistOutput(probabilities=record.generalist),
                partition,
                confidence_mode=args.confidence_mode,
            )
        else:
            prediction = reuse.predict(
                outputs, report, confidence_mode=args.confidence_mode
            )
        rows.append((record.sample_id, prediction))
    store.save_predictions(rows, report.task_id, report.class_texts, args.out)
    print(f"wrote {args.out}: {len(rows)} predictions")
    return EXIT_OK


def cmd_synth_gen(args: argparse.Namespace) -> int:
    cfg = _read_config(args.config)
    seed = int(cfg.get("seed", 0))
    world = synth.gen_world(
        seed=seed,
        num_leaf_classes=int(cfg.get("num_leaf_classes", 12)),
        feature_dim=int(cfg.get("feature_dim", 16)),
        noise_sigma=float(cfg.get("noise_sigma", 1.0)),
        fanout=int(cfg.get("fanout", 4)),
        center_scale=float(cfg.get("center_scale", 3.0)),
        offset_scale=float(cfg.get("offset_scale", 2.0)),
    )
    task_classes = int(cfg.get("task_classes", min(8, len(world.leaf_ids))))
    pick = synth.seeded_rng(seed, "cli-task").choice(
        len(world.leaf_ids), size=task_classes, replace=False
    )
    task_leaves = tuple(world.leaf_ids[i] for i in sorted(pick))
    task = sdag.TaskSpec(
        task_id=cfg.get("task_id", f"synth-{seed}"),
        class_texts=tuple(world.graph.nodes[leaf].name for leaf in task_leaves),
    )

    experts = []
    specs = cfg.get(
        "experts", [{"count": 6, "classes_per_expert": 4, "corruption": 0.0}]
    )
    for group_idx, spec in enumerate(specs):
        count = int(spec.get("count", 1))
        per = int(spec.get("classes_per_expert", 4))
        corruption = float(spec.get("corruption", 0.0))
        for j in range(count):
            subset_idx = synth.seeded_rng(seed, "cli-expert", group_idx, j).choice(
                len(task_leaves), size=min(per, len(task_leaves)), replace=False
            )
            subset = tuple(task_leaves[i] for i in sorted(subset_idx))
            experts.append(
                synth.gen_expert(
                    world, subset, corruption, tag=f"g{group_idx}e{j}"
                )
            )

    os.makedirs(args.out_dir, exist_ok=True)
    traces_dir = os.path.join(args.out_dir, "traces")
    os.makedirs(traces_dir, exist_ok=True)
    store.save_sdag(world.graph, os.path.join(args.out_dir, "sdag.json"))
    store.save_task(task, os.path.join(args.out_dir, "task.json"))
    samples_per_node = int(cfg.get("samples_per_node", 50))
    for expert in experts:
        trace = synth.gen_trace(expert, world, samples_per_node=samples_per_node)
        store.save_trace(
            trace, os.path.join(traces_dir, f"trace-{expert.model_id}.jsonl")
        )

    test_samples = int(cfg.get("test_samples", 200))
    xs, labels = synth.sample_task_set(world, task_leaves, test_samples)
    generalist = synth.gen_expert(
        world,
        task_leaves,
        float(cfg.get("generalist_corruption", 1.5)),
        tag="generalist",
    )
    generalist_probs = synth.expert_probabilities(generalist, xs)
    per_expert = {e.model_id: synth.expert_probabilities(e, xs) for e in experts}
    records = [
        store.OutputsRecord(
            sample_id=f"s{i:05d}",
            outputs={mid: probs[i] for mid, probs in per_expert.items()},
            generalist=generalist_probs[i],
            true_class=int(labels[i]),
        )
        for i in range(test_samples)
    ]
    store.save_outputs(records, task.task_id, os.path.join(args.out_dir, "outputs.jsonl"))
    print(
        f"wrote {args.out_dir}: {len(world.graph.nodes)} nodes, "
        f"{len(experts)} traces, {test_samples} test samples"
    )
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    cfg = _read_config(args.config)
    scenario = cfg.pop("scenario", "scaling")
    try:
        if scenario == "scaling":
            if "hub_sizes" in cfg:
                cfg["hub_sizes"] = tuple(cfg["hub_sizes"])
            result = synth.run_scaling_benchmark(synth.ScalingConfig(**cfg))
        elif scenario == "dvc_ablation":
            result = synth.run_dvc_ablation(synth.DvcConfig(**cfg))
        else:
            raise StoreError(f"unknown scenario {scenario!r}")
    except TypeError as exc:
        raise StoreError(f"bad benchmark config: {exc}") from exc
    store.save_benchmark(result, args.out)
    if args.table is not None:
        store.save_benchmark_table(result, args.table)
    print(f"wrote {args.out}: {len(result.records)} records")
    return EXIT_OK


def cmd_chco_debug(args: argparse.Namespace) -> int:
    g = store.load_sdag(_require_file(args.sdag))
    task = store.load_task(_require_file(args.task))
    label = store.load_label(_require_file(args.label))
    match = sdag.match_classes(
        task, g, sdag.HashedTrigramProvider(), min_similarity=args.min_similarity
    )
    targets = tuple(node_id for _, node_id in sorted(match.matched.items()))
    result = chco.solve(label, targets, chco.ChcoConfig(keep_history=True))
    _write_sweep_records(result, args.out)
    print(
        f"wrote {args.out}: {result.sweeps_used} sweeps, "
        f"final loss {result.total_loss:.6f}"
    )
    return EXIT_OK


_COMMANDS = {
    "sdag-build": cmd_sdag_build,
    "label": cmd_label,
    "select": cmd_select,
    "predict": cmd_predict,
    "synth-gen": cmd_synth_gen,
    "bench": cmd_bench,
    "chco-debug": cmd_chco_debug,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    try:
        return _COMMANDS[args.command](args)
    except StoreError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except MlhubError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PIPELINE


if __name__ == "__main__":
    sys.exit(main())
