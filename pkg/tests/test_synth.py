"""Synthetic-world tests: worlds, experts, oracles, benchmarks."""
from __future__ import annotations

import math

import numpy as np
import pytest

from mlhub import labelling, sdag
from mlhub.errors import InstanceTooLarge, UnknownClass
from mlhub.synth import (
    DvcConfig,
    ScalingConfig,
    SyntheticWorld,
    bayes_accuracy,
    bayes_rule_predict,
    expert_logits,
    expert_probabilities,
    gen_expert,
    gen_trace,
    gen_world,
    grid_oracle_chco,
    run_dvc_ablation,
    run_scaling_benchmark,
    sample_node,
    sample_task_set,
    seeded_rng,
    _grid_rows,
)


def _two_leaf_world(distance: float, sigma: float,
                    feature_dim: int = 2) -> SyntheticWorld:
    nodes = [
        sdag.SemanticNode("leaf-a", "alpha", "samples of alpha"),
        sdag.SemanticNode("leaf-b", "beta", "samples of beta"),
        sdag.SemanticNode("root", "everything", "all concepts",
                          successor_ids=("leaf-a", "leaf-b")),
    ]
    graph = sdag.build_sdag(nodes, version=1)
    means = {"leaf-a": np.zeros(feature_dim),
             "leaf-b": np.zeros(feature_dim)}
    means["leaf-b"] = means["leaf-b"].copy()
    means["leaf-b"][0] = distance
    return SyntheticWorld(seed=0, feature_dim=feature_dim, noise_sigma=sigma,
                          graph=graph, class_means=means,
                          leaf_ids=("leaf-a", "leaf-b"))


class TestSeededRng:
    def test_deterministic(self):
        a = seeded_rng(3, "x").random(5)
        b = seeded_rng(3, "x").random(5)
        np.testing.assert_array_equal(a, b)

    def test_distinct_keys_distinct_streams(self):
        a = seeded_rng(3, "x").random(5)
        b = seeded_rng(3, "y").random(5)
        c = seeded_rng(4, "x").random(5)
        assert not np.array_equal(a, b)
        assert not np.array_equal(a, c)


class TestGenWorld:
    def test_fanout_two_four_leaves_structure(self):
        world = gen_world(seed=1, num_leaf_classes=4, fanout=2)
        g = world.graph
        assert set(world.leaf_ids) == {"leaf-000", "leaf-001", "leaf-002",
                                       "leaf-003"}
        assert len(g.nodes) == 7  # 4 leaves + 2 groups + root
        assert set(g.successors("grp-1-00")) == {"leaf-000", "leaf-001"}
        assert set(g.successors("grp-1-01")) == {"leaf-002", "leaf-003"}
        assert set(g.successors("root")) == {"grp-1-00", "grp-1-01"}

    def test_deterministic_and_seed_sensitive(self):
        a = gen_world(seed=2, num_leaf_classes=6)
        b = gen_world(seed=2, num_leaf_classes=6)
        c = gen_world(seed=3, num_leaf_classes=6)
        for leaf in a.leaf_ids:
            np.testing.assert_array_equal(a.class_means[leaf],
                                          b.class_means[leaf])
        assert any(not np.array_equal(a.class_means[l], c.class_means[l])
                   for l in a.leaf_ids)

    def test_descendant_leaves(self):
        world = gen_world(seed=1, num_leaf_classes=4, fanout=2)
        assert world.descendant_leaves("leaf-002") == ("leaf-002",)
        assert world.descendant_leaves("grp-1-00") == ("leaf-000", "leaf-001")
        assert world.descendant_leaves("root") == tuple(world.leaf_ids)
        with pytest.raises(UnknownClass):
            world.descendant_leaves("ghost")

    def test_validation(self):
        with pytest.raises(ValueError):
            gen_world(seed=0, num_leaf_classes=0)
        with pytest.raises(ValueError):
            gen_world(seed=0, num_leaf_classes=4, fanout=1)

    def test_siblings_closer_than_strangers(self):
        world = gen_world(seed=4, num_leaf_classes=16, fanout=4,
                          center_scale=3.0, offset_scale=0.5)
        m = world.class_means
        within = np.linalg.norm(m["leaf-000"] - m["leaf-001"])
        across = np.linalg.norm(m["leaf-000"] - m["leaf-015"])
        assert within < across


class TestSampling:
    def test_sample_node_deterministic(self):
        world = gen_world(seed=5, num_leaf_classes=4)
        a = sample_node(world, "leaf-000", 10)
        b = sample_node(world, "leaf-000", 10)
        np.testing.assert_array_equal(a, b)
        c = sample_node(world, "leaf-000", 10, salt="other")
        assert not np.array_equal(a, c)

    def test_leaf_sample_mean_converges(self):
        world = gen_world(seed=5, num_leaf_classes=4, noise_sigma=0.5)
        xs = sample_node(world, "leaf-001", 20_000)
        err = np.linalg.norm(xs.mean(axis=0) - world.class_means["leaf-001"])
        assert err < 0.05

    def test_internal_node_mixes_descendants(self):
        world = gen_world(seed=6, num_leaf_classes=4, fanout=2,
                          noise_sigma=0.3, center_scale=1.0, offset_scale=1.0)
        xs = sample_node(world, "grp-1-00", 40_000)
        target = 0.5 * (world.class_means["leaf-000"]
                        + world.class_means["leaf-001"])
        assert np.linalg.norm(xs.mean(axis=0) - target) < 0.05

    def test_unknown_node(self):
        world = gen_world(seed=5, num_leaf_classes=4)
        with pytest.raises(UnknownClass):
            sample_node(world, "ghost", 5)
        with pytest.raises(UnknownClass):
            sample_task_set(world, ("leaf-000", "ghost"), 5)

    def test_task_set_labels_match_means(self):
        world = gen_world(seed=7, num_leaf_classes=6, noise_sigma=1e-6)
        leaves = ("leaf-000", "leaf-003")
        xs, labels = sample_task_set(world, leaves, 50)
        for x, y in zip(xs, labels):
            np.testing.assert_allclose(x, world.class_means[leaves[y]],
                                       atol=1e-4)


class TestBayes:
    def test_sigma_to_zero_is_perfect(self):
        world = gen_world(seed=8, num_leaf_classes=6, noise_sigma=1e-9)
        est = bayes_accuracy(world, world.leaf_ids[:4], num_samples=2000)
        assert est.accuracy == 1.0

    def test_two_gaussians_hit_phi_one(self):
        # separation 2 sigma: accuracy = Phi(1) = 0.841345
        world = _two_leaf_world(distance=2.0, sigma=1.0)
        est = bayes_accuracy(world, world.leaf_ids, num_samples=100_000)
        assert est.accuracy == pytest.approx(0.8413447, abs=0.005)

    def test_identical_means_is_chance(self):
        world = _two_leaf_world(distance=0.0, sigma=1.0)
        est = bayes_accuracy(world, world.leaf_ids, num_samples=50_000)
        assert est.accuracy == pytest.approx(0.5, abs=0.01)

    def test_std_error_formula(self):
        world = _two_leaf_world(distance=2.0, sigma=1.0)
        est = bayes_accuracy(world, world.leaf_ids, num_samples=4000)
        want = math.sqrt(est.accuracy * (1 - est.accuracy) / 4000)
        assert est.std_error == pytest.approx(want, rel=1e-12)


class TestExperts:
    def test_bias_completes_discriminant(self):
        world = gen_world(seed=9, num_leaf_classes=6)
        expert = gen_expert(world, world.leaf_ids[:3])
        np.testing.assert_allclose(
            expert.biases, -0.5 * (expert.weights ** 2).sum(axis=1),
            rtol=1e-12)

    def test_zero_corruption_is_bayes_on_own_classes(self):
        world = gen_world(seed=10, num_leaf_classes=8, noise_sigma=0.8)
        leaves = world.leaf_ids[:4]
        expert = gen_expert(world, leaves, corruption=0.0)
        xs, labels = sample_task_set(world, leaves, 500)
        expert_pred = expert_logits(expert, xs).argmax(axis=1)
        bayes_pred = bayes_rule_predict(world, leaves, xs)
        np.testing.assert_array_equal(expert_pred, bayes_pred)

    def test_corruption_degrades_accuracy(self):
        world = gen_world(seed=11, num_leaf_classes=8, noise_sigma=0.8)
        leaves = world.leaf_ids[:4]
        xs, labels = sample_task_set(world, leaves, 600)
        clean = gen_expert(world, leaves, corruption=0.0)
        dirty = gen_expert(world, leaves, corruption=25.0)
        acc_clean = (expert_logits(clean, xs).argmax(axis=1) == labels).mean()
        acc_dirty = (expert_logits(dirty, xs).argmax(axis=1) == labels).mean()
        assert acc_clean > 0.8
        assert acc_dirty < acc_clean - 0.2

    def test_model_id_content_addressed(self):
        world = gen_world(seed=12, num_leaf_classes=4)
        a = gen_expert(world, world.leaf_ids[:2], tag="t")
        b = gen_expert(world, world.leaf_ids[:2], tag="t")
        c = gen_expert(world, world.leaf_ids[:2], tag="other")
        assert a.model_id == b.model_id
        assert a.model_id != c.model_id
        np.testing.assert_array_equal(a.weights, b.weights)

    def test_probabilities_are_distributions(self):
        world = gen_world(seed=13, num_leaf_classes=4)
        expert = gen_expert(world, world.leaf_ids[:3])
        xs = sample_node(world, "leaf-000", 20)
        probs = expert_probabilities(expert, xs)
        assert probs.shape == (20, 3)
        np.testing.assert_allclose(probs.sum(axis=1), np.ones(20), atol=1e-9)

    def test_rejects_internal_nodes_and_bad_corruption(self):
        world = gen_world(seed=13, num_leaf_classes=4, fanout=2)
        with pytest.raises(UnknownClass):
            gen_expert(world, ("grp-1-00",))
        with pytest.raises(ValueError):
            gen_expert(world, world.leaf_ids[:2], corruption=-1.0)


class TestTraces:
    def test_shapes_and_coverage(self):
        world = gen_world(seed=14, num_leaf_classes=4, fanout=2)
        expert = gen_expert(world, world.leaf_ids[:2])
        trace = gen_trace(expert, world, samples_per_node=7)
        assert set(trace.node_logits) == set(world.graph.nodes)
        for arr in trace.node_logits.values():
            assert arr.shape == (7, 2)
        assert trace.sdag_version == world.graph.version

    def test_node_subset(self):
        world = gen_world(seed=14, num_leaf_classes=4, fanout=2)
        expert = gen_expert(world, world.leaf_ids[:2])
        trace = gen_trace(expert, world, samples_per_node=5,
                          node_ids=("leaf-000",))
        assert set(trace.node_logits) == {"leaf-000"}

    def test_mean_logits_recomputable(self):
        # the trace is built from the keyed sampler, so its node means
        # are reproducible from public pieces
        world = gen_world(seed=15, num_leaf_classes=4, fanout=2)
        expert = gen_expert(world, world.leaf_ids[:2])
        trace = gen_trace(expert, world, samples_per_node=9)
        means = labelling.mean_logits(trace)
        xs = sample_node(world, "leaf-001", 9)
        np.testing.assert_allclose(
            means["leaf-001"], expert_logits(expert, xs).mean(axis=0),
            rtol=1e-12)

    def test_rejects_zero_samples(self):
        world = gen_world(seed=15, num_leaf_classes=4)
        expert = gen_expert(world, world.leaf_ids[:2])
        with pytest.raises(ValueError):
            gen_trace(expert, world, samples_per_node=0)


class TestGridOracle:
    def test_row_enumeration_count(self):
        # C=2, step 0.25: pairs (i, j) with i + j <= 4 -> 15 rows
        rows = _grid_rows(2, 0.25)
        assert rows.shape == (15, 2)
        assert np.all(rows.sum(axis=1) <= 1.0 + 1e-12)
        # C=3, step 0.5: triples summing to <= 2 -> C(5, 3) = 10 rows
        assert _grid_rows(3, 0.5).shape == (10, 3)

    def test_step_must_divide_one(self):
        with pytest.raises(ValueError):
            _grid_rows(2, 0.3)

    def test_instance_too_large(self):
        with pytest.raises(InstanceTooLarge):
            grid_oracle_chco(np.full((8, 3), 1.0 / 8), step=0.05)

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            grid_oracle_chco(np.ones((2, 1)))

    def test_best_point_feasible_and_stable(self):
        rng = np.random.default_rng(16)
        raw = rng.normal(size=(2, 2))
        p = np.exp(raw) / np.exp(raw).sum(axis=0)
        x1, l1 = grid_oracle_chco(p, step=0.25)
        x2, l2 = grid_oracle_chco(p, step=0.25)
        np.testing.assert_array_equal(x1, x2)
        assert l1 == l2
        assert np.all(x1.sum(axis=1) <= 1.0 + 1e-12)


class TestScalingConfig:
    def test_hub_sizes_must_increase(self):
        with pytest.raises(ValueError):
            ScalingConfig(hub_sizes=(4, 2))
        with pytest.raises(ValueError):
            ScalingConfig(hub_sizes=(2, 2, 4))

    def test_task_larger_than_world_rejected(self):
        with pytest.raises(ValueError):
            ScalingConfig(num_leaf_classes=8, task_classes=9)

    def test_unknown_coverage_mode(self):
        with pytest.raises(ValueError):
            ScalingConfig(coverage_mode="bogus")


_SMALL = dict(
    num_seeds=2, num_leaf_classes=8, task_classes=6, feature_dim=8,
    noise_sigma=0.6, fanout=4, center_scale=0.9, offset_scale=0.9,
    classes_per_expert=3, samples_per_node=20, test_samples=120,
)


class TestScalingBenchmark:
    def test_hub_zero_equals_generalist(self):
        # replicate the hub-0 arm from public pieces for one seed
        cfg = ScalingConfig(seed=5, hub_sizes=(0,), **_SMALL)
        cfg.num_seeds = 1
        rep = run_scaling_benchmark(cfg)
        world = gen_world(seed=5, num_leaf_classes=cfg.num_leaf_classes,
                          feature_dim=cfg.feature_dim,
                          noise_sigma=cfg.noise_sigma, fanout=cfg.fanout,
                          center_scale=cfg.center_scale,
                          offset_scale=cfg.offset_scale)
        chosen = seeded_rng(5, "task-pick").choice(
            len(world.leaf_ids), size=cfg.task_classes, replace=False)
        task_leaves = tuple(world.leaf_ids[i] for i in sorted(chosen))
        xs, labels = sample_task_set(world, task_leaves, cfg.test_samples)
        generalist = gen_expert(world, task_leaves,
                                cfg.generalist_corruption, tag="generalist")
        probs = expert_probabilities(generalist, xs)
        want = float((probs.argmax(axis=1) == labels).mean())
        assert rep.records[0].accuracy_all == want
        assert rep.records[0].coverage == 0.0

    def test_deterministic(self):
        cfg = ScalingConfig(seed=1, hub_sizes=(0, 2), **_SMALL)
        a = run_scaling_benchmark(cfg)
        b = run_scaling_benchmark(ScalingConfig(seed=1, hub_sizes=(0, 2),
                                                **_SMALL))
        for ra, rb in zip(a.records, b.records):
            assert ra == rb

    def test_sandwich_chance_to_bayes(self):
        cfg = ScalingConfig(seed=2, hub_sizes=(0, 2, 4), record_bayes=True,
                            **_SMALL)
        rep = run_scaling_benchmark(cfg)
        bayes = rep.extras["bayes_accuracy_mean"]
        slack = 3 * rep.extras["mc_std_error"]
        chance = 1.0 / cfg.task_classes
        for rec in rep.records:
            if rec.key == "bayes":
                continue
            assert rec.accuracy_all >= chance - 0.05
            assert rec.accuracy_all <= bayes + slack

    def test_anonymity_no_head_nodes_on_hub_surface(self):
        # the pipeline sees traces, labels, and records; none of them
        # carries the expert's class list
        world = gen_world(seed=3, num_leaf_classes=4, fanout=2)
        expert = gen_expert(world, world.leaf_ids[:2])
        trace = gen_trace(expert, world, samples_per_node=5)
        label = labelling.aggregate_label(
            world.graph, expert.model_id, expert.head_count,
            labelling.mean_logits(trace))
        record = labelling.HubRecord(expert.model_id, expert.head_count,
                                     label)
        for obj in (trace, label, record):
            assert not hasattr(obj, "head_nodes")

    def test_broad_mode_tracks_bayes(self):
        cfg = ScalingConfig(seed=0, num_seeds=3, hub_sizes=(3,),
                            num_leaf_classes=12, task_classes=10,
                            feature_dim=16, noise_sigma=0.53, fanout=5,
                            center_scale=0.6, offset_scale=0.6,
                            classes_per_expert=5, expert_corruption=0.0,
                            generalist_corruption=1.5, samples_per_node=30,
                            test_samples=200, budget_k=2,
                            coverage_mode="broad", record_bayes=True)
        rep = run_scaling_benchmark(cfg)
        rec = next(r for r in rep.records if r.key == "hub=3")
        bayes = rep.extras["bayes_accuracy_mean"]
        assert rec.accuracy_all >= bayes - 0.04
        assert rec.coverage == 1.0


class TestDvcAblation:
    def test_optimised_beats_single_head(self):
        cfg = DvcConfig(num_seeds=4)
        rep = run_dvc_ablation(cfg)
        by_key = {r.key: r for r in rep.records}
        assert by_key["method=chco"].accuracy_all > \
            by_key["method=heu"].accuracy_all
        assert rep.extras["heu_nonzero_heads_mean"] == 1.0
        assert rep.extras["chco_nonzero_heads_mean"] > 2.0
        assert rep.extras["chco_minus_heu"] == pytest.approx(
            by_key["method=chco"].accuracy_all
            - by_key["method=heu"].accuracy_all, abs=1e-12)
