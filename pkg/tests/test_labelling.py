"""Trace reduction and discounted label aggregation tests."""
from __future__ import annotations

import numpy as np
import pytest

from mlhub.errors import (
    EmptyTrace,
    MissingMeans,
    NonFiniteLogit,
    VersionRegression,
)
from mlhub.labelling import (
    LogitTrace,
    ModelLabel,
    aggregate_label,
    mean_logits,
    update_label,
)
from mlhub.sdag import SemanticNode, build_sdag, insert_node


def _node(nid: str, succ: tuple[str, ...] = ()) -> SemanticNode:
    return SemanticNode(nid, f"name {nid}", f"desc {nid}", succ)


def _trace(node_logits: dict[str, np.ndarray], heads: int = 2) -> LogitTrace:
    return LogitTrace(
        model_id="m0", head_count=heads, node_logits=node_logits, sdag_version=1
    )


class TestMeanLogits:
    def test_matches_numpy_mean(self):
        rng = np.random.default_rng(3)
        logits = {f"n{i}": rng.normal(size=(17, 4)) for i in range(5)}
        got = mean_logits(_trace(logits, heads=4))
        for nid, arr in logits.items():
            np.testing.assert_allclose(got[nid], arr.mean(axis=0), rtol=1e-15)

    def test_empty_trace(self):
        with pytest.raises(EmptyTrace):
            mean_logits(_trace({}))
        with pytest.raises(EmptyTrace):
            mean_logits(_trace({"n0": np.zeros((0, 2))}))

    def test_non_finite_logit_located(self):
        bad = np.zeros((3, 2))
        bad[1, 0] = np.nan
        with pytest.raises(NonFiniteLogit) as exc:
            mean_logits(_trace({"n0": bad}))
        assert "n0" in str(exc.value)

    def test_single_sample(self):
        got = mean_logits(_trace({"n0": np.array([[1.5, -2.5]])}))
        np.testing.assert_array_equal(got["n0"], [1.5, -2.5])


class TestAggregateLabel:
    def _depth1(self):
        return build_sdag([_node("r", ("a", "b")), _node("a"), _node("b")])

    def _depth2(self):
        return build_sdag(
            [
                _node("r", ("g", "c")),
                _node("g", ("a", "b")),
                _node("a"),
                _node("b"),
                _node("c"),
            ]
        )

    _MEANS = {
        "r": np.array([1.0, 2.0]),
        "g": np.array([0.0, 0.0]),
        "c": np.array([7.0, 8.0]),
        "a": np.array([3.0, 4.0]),
        "b": np.array([5.0, 6.0]),
    }

    def test_leaf_rule_scores_equal_means(self):
        g = self._depth1()
        means = {k: self._MEANS[k] for k in ("r", "a", "b")}
        label = aggregate_label(g, "m0", 2, means)
        np.testing.assert_array_equal(label.scores["a"], means["a"])
        np.testing.assert_array_equal(label.scores["b"], means["b"])

    def test_depth1_hand_oracle(self):
        # s_r = 0.7*m_r + 0.3 * mean(m_a, m_b), computed by hand
        g = self._depth1()
        means = {k: self._MEANS[k] for k in ("r", "a", "b")}
        label = aggregate_label(g, "m0", 2, means, discount=0.7)
        np.testing.assert_allclose(label.scores["r"], [1.9, 2.9], rtol=1e-15)

    def test_one_hop_equals_recursive_on_depth1(self):
        g = self._depth1()
        means = {k: self._MEANS[k] for k in ("r", "a", "b")}
        rec = aggregate_label(g, "m0", 2, means, aggregation_mode="recursive")
        hop = aggregate_label(g, "m0", 2, means, aggregation_mode="one_hop")
        for nid in rec.scores:
            np.testing.assert_array_equal(rec.scores[nid], hop.scores[nid])

    def test_depth2_hand_oracle_modes_differ(self):
        g = self._depth2()
        rec = aggregate_label(g, "m0", 2, dict(self._MEANS), aggregation_mode="recursive")
        hop = aggregate_label(g, "m0", 2, dict(self._MEANS), aggregation_mode="one_hop")
        # hand-computed: s_g = 0.3*mean(m_a, m_b) = [1.2, 1.5]
        np.testing.assert_allclose(rec.scores["g"], [1.2, 1.5], rtol=1e-14)
        # recursive root mixes aggregated scores, one_hop mixes raw means
        np.testing.assert_allclose(rec.scores["r"], [1.93, 2.825], rtol=1e-14)
        np.testing.assert_allclose(hop.scores["r"], [1.75, 2.6], rtol=1e-14)

    def test_uncovered_node_with_covered_successors_averages_them(self):
        g = self._depth1()
        means = {"a": self._MEANS["a"], "b": self._MEANS["b"]}
        label = aggregate_label(g, "m0", 2, means)
        np.testing.assert_allclose(label.scores["r"], [4.0, 5.0], rtol=1e-15)

    def test_covered_node_with_no_covered_successors_keeps_own_mean(self):
        g = self._depth1()
        label = aggregate_label(g, "m0", 2, {"r": self._MEANS["r"]})
        np.testing.assert_array_equal(label.scores["r"], self._MEANS["r"])
        assert "a" not in label.scores

    def test_nothing_covered(self):
        with pytest.raises(MissingMeans):
            aggregate_label(self._depth1(), "m0", 2, {})

    def test_unknown_node_rejected(self):
        with pytest.raises(MissingMeans):
            aggregate_label(self._depth1(), "m0", 2, {"ghost": np.zeros(2)})

    def test_wrong_head_count_rejected(self):
        with pytest.raises(MissingMeans):
            aggregate_label(self._depth1(), "m0", 2, {"a": np.zeros(3)})

    def test_discount_validated(self):
        g = self._depth1()
        with pytest.raises(ValueError):
            aggregate_label(g, "m0", 2, {"a": np.zeros(2)}, discount=1.5)
        with pytest.raises(ValueError):
            aggregate_label(g, "m0", 2, {"a": np.zeros(2)}, aggregation_mode="bogus")


class TestUpdateLabel:
    def _world(self, rng: np.random.Generator):
        defs = [
            _node("r", ("g0", "g1")),
            _node("g0", ("a", "b")),
            _node("g1", ("c", "d")),
            _node("a"),
            _node("b"),
            _node("c"),
            _node("d"),
        ]
        g = build_sdag(defs)
        means = {n.node_id: rng.normal(size=3) for n in defs}
        return g, means

    def test_incremental_equals_full_recompute(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            g, means = self._world(rng)
            keys = list(means)
            rng.shuffle(keys)
            cut = int(rng.integers(1, len(keys)))
            first = {k: means[k] for k in keys[:cut]}
            rest = {k: means[k] for k in keys[cut:]}
            base = aggregate_label(g, "m0", 3, first)
            updated = update_label(base, g, rest)
            full = aggregate_label(g, "m0", 3, means)
            assert set(updated.scores) == set(full.scores)
            for nid in full.scores:
                np.testing.assert_allclose(
                    updated.scores[nid], full.scores[nid], atol=1e-12, rtol=0
                )

    def test_update_after_graph_growth(self):
        rng = np.random.default_rng(5)
        g, means = self._world(rng)
        base = aggregate_label(g, "m0", 3, means)
        g2 = insert_node(g, _node("e"), predecessor_ids=("g1",))
        new_mean = {"e": rng.normal(size=3)}
        updated = update_label(base, g2, new_mean)
        full = aggregate_label(g2, "m0", 3, {**means, **new_mean})
        for nid in full.scores:
            np.testing.assert_allclose(
                updated.scores[nid], full.scores[nid], atol=1e-12, rtol=0
            )
        assert updated.sdag_version == g2.version

    def test_untouched_scores_identical_objects_values(self):
        rng = np.random.default_rng(9)
        g, means = self._world(rng)
        sub = {k: v for k, v in means.items() if k not in ("c", "g1", "r")}
        base = aggregate_label(g, "m0", 3, sub)
        updated = update_label(base, g, {"c": means["c"]})
        # the g0 branch cannot be affected by covering c
        np.testing.assert_array_equal(updated.scores["g0"], base.scores["g0"])
        np.testing.assert_array_equal(updated.scores["a"], base.scores["a"])

    def test_version_regression(self):
        rng = np.random.default_rng(2)
        g, means = self._world(rng)
        g2 = insert_node(g, _node("e"), predecessor_ids=("g1",))
        label = aggregate_label(g2, "m0", 3, {"e": np.zeros(3)})
        with pytest.raises(VersionRegression):
            update_label(label, g, {"a": np.zeros(3)})


class TestDeterminism:
    def test_same_trace_same_label(self):
        rng = np.random.default_rng(21)
        g = build_sdag([_node("r", ("a",)), _node("a")])
        logits = {"r": rng.normal(size=(10, 2)), "a": rng.normal(size=(10, 2))}
        l1 = aggregate_label(g, "m0", 2, mean_logits(_trace(logits)))
        l2 = aggregate_label(g, "m0", 2, mean_logits(_trace(logits)))
        for nid in l1.scores:
            np.testing.assert_array_equal(l1.scores[nid], l2.scores[nid])
