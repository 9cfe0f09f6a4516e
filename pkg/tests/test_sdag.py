"""Graph construction, embedding, and class-node matching tests."""
from __future__ import annotations

import hashlib

import networkx as nx
import numpy as np
import pytest

from mlhub.errors import (
    CycleDetected,
    DanglingSuccessor,
    DuplicateNodeId,
    ProviderFailure,
)
from mlhub.sdag import (
    HashedTrigramProvider,
    SDag,
    SemanticNode,
    TaskSpec,
    build_sdag,
    cosine_similarity,
    embed_text,
    insert_node,
    match_classes,
    node_text,
)


def _node(nid: str, succ: tuple[str, ...] = ()) -> SemanticNode:
    return SemanticNode(
        node_id=nid, name=f"name {nid}", description=f"desc {nid}", successor_ids=succ
    )


def _random_dag(rng: np.random.Generator, n: int) -> list[SemanticNode]:
    """Random DAG on n nodes: edges only from lower to higher index."""
    nodes = []
    for i in range(n):
        succ = tuple(
            f"n{j}" for j in range(i + 1, n) if rng.random() < 0.3
        )
        nodes.append(_node(f"n{i}", succ))
    return nodes


class TestToposort:
    def test_matches_networkx_on_random_dags(self):
        rng = np.random.default_rng(7)
        for _ in range(25):
            defs = _random_dag(rng, int(rng.integers(2, 15)))
            g = build_sdag(defs)
            nxg = nx.DiGraph()
            nxg.add_nodes_from(n.node_id for n in defs)
            for n in defs:
                nxg.add_edges_from((n.node_id, s) for s in n.successor_ids)
            assert nx.is_directed_acyclic_graph(nxg)
            pos = {nid: i for i, nid in enumerate(g.topological_order)}
            assert sorted(pos) == sorted(nxg.nodes)
            for u, v in nxg.edges:
                assert pos[u] < pos[v]

    def test_lexicographic_among_ready_nodes(self):
        defs = [_node("b"), _node("a"), _node("c", ("a", "b"))]
        g = build_sdag(defs)
        assert g.topological_order == ("c", "a", "b")

    def test_deterministic(self):
        defs = [_node("x", ("y",)), _node("y"), _node("z", ("y",))]
        assert build_sdag(defs).topological_order == build_sdag(defs).topological_order


class TestBuildErrors:
    def test_duplicate_node_id(self):
        with pytest.raises(DuplicateNodeId):
            build_sdag([_node("a"), _node("a")])

    def test_dangling_successor(self):
        with pytest.raises(DanglingSuccessor):
            build_sdag([_node("a", ("ghost",))])

    def test_cycle_detected_names_a_real_cycle(self):
        defs = [_node("a", ("b",)), _node("b", ("c",)), _node("c", ("a",)), _node("d")]
        with pytest.raises(CycleDetected) as exc:
            build_sdag(defs)
        msg = str(exc.value)
        assert "a" in msg and "b" in msg and "c" in msg

    def test_self_loop_is_a_cycle(self):
        with pytest.raises(CycleDetected):
            build_sdag([_node("a", ("a",))])


class TestGraphShape:
    def test_leaves_and_successors(self):
        g = build_sdag([_node("r", ("a", "b")), _node("a"), _node("b")])
        assert g.is_leaf("a") and g.is_leaf("b") and not g.is_leaf("r")
        assert g.leaf_ids() == ("a", "b")
        assert g.successors("r") == ("a", "b")

    def test_insert_node_bumps_version(self):
        g = build_sdag([_node("r", ("a",)), _node("a")])
        assert g.version == 1
        g2 = insert_node(g, _node("b"), predecessor_ids=("r",))
        assert g2.version == 2
        assert g2.successors("r") == ("a", "b")
        # original untouched
        assert g.successors("r") == ("a",)

    def test_insert_rejects_duplicate(self):
        g = build_sdag([_node("r", ("a",)), _node("a")])
        with pytest.raises(DuplicateNodeId):
            insert_node(g, _node("a"), predecessor_ids=("r",))


def _reference_trigram(text: str, dim: int) -> np.ndarray:
    """Independent restatement of the hashed-trigram embedding."""
    counts: dict[int, float] = {}
    grams = [text[i : i + 3] for i in range(max(len(text) - 2, 0))] or ["∅"]
    for gram in grams:
        digest = hashlib.blake2s(gram.encode("utf-8"), digest_size=8).digest()
        bucket = int.from_bytes(digest, "little") % dim
        counts[bucket] = counts.get(bucket, 0.0) + 1.0
    vec = np.zeros(dim)
    for bucket, count in counts.items():
        vec[bucket] = count
    return vec / np.linalg.norm(vec)


class TestProvider:
    def test_matches_reference_on_sample_texts(self):
        provider = HashedTrigramProvider(dim=64)
        for text in ("tabby cat", "a", "", "Name: x\nDescription: y", "ααα βββ"):
            got = provider.embed(text)
            want = _reference_trigram(text, 64)
            np.testing.assert_allclose(got, want, atol=0)

    def test_unit_norm(self):
        provider = HashedTrigramProvider()
        for text in ("feline", "zebra crossing", "xy"):
            assert np.linalg.norm(provider.embed(text)) == pytest.approx(1.0)

    def test_similar_texts_closer_than_dissimilar(self):
        provider = HashedTrigramProvider()
        a = provider.embed("striped tabby cat")
        b = provider.embed("striped tabby cats")
        c = provider.embed("submarine periscope")
        assert cosine_similarity(a, b) > cosine_similarity(a, c)

    def test_embed_text_rejects_bad_providers(self):
        class Raises:
            def embed(self, text):
                raise RuntimeError("boom")

        class Zero:
            def embed(self, text):
                return np.zeros(8)

        class NonFinite:
            def embed(self, text):
                return np.array([1.0, np.nan])

        for provider in (Raises(), Zero(), NonFinite()):
            with pytest.raises(ProviderFailure):
                embed_text(provider, "text")
        with pytest.raises(ProviderFailure):
            embed_text(HashedTrigramProvider(), "")


class TestTaskSpec:
    def test_rejects_empty_and_duplicate_classes(self):
        with pytest.raises(ValueError):
            TaskSpec(task_id="t", class_texts=())
        with pytest.raises(ValueError):
            TaskSpec(task_id="t", class_texts=("cat", " cat "))
        with pytest.raises(ValueError):
            TaskSpec(task_id="t", class_texts=("cat", ""))

    def test_accepts_distinct(self):
        task = TaskSpec(task_id="t", class_texts=("cat", "dog"))
        assert task.class_texts == ("cat", "dog")


class TestMatching:
    def _graph(self) -> SDag:
        return build_sdag(
            [
                SemanticNode("root", "everything", "all concepts", ("cat", "dog")),
                SemanticNode("cat", "tabby cat", "samples of tabby cat", ()),
                SemanticNode("dog", "golden retriever", "samples of golden retriever", ()),
            ]
        )

    def test_planted_correspondence(self):
        g = self._graph()
        task = TaskSpec("t", ("tabby cat", "golden retriever"))
        match = match_classes(task, g, HashedTrigramProvider())
        assert match.matched == {0: "cat", 1: "dog"}
        assert match.unmatched == ()
        assert match.sdag_version == g.version

    def test_min_similarity_gate(self):
        g = self._graph()
        task = TaskSpec("t", ("tabby cat", "qqqq zzzz"))
        match = match_classes(task, g, HashedTrigramProvider(), min_similarity=0.5)
        assert 0 in match.matched
        assert match.unmatched == (1,)

    def test_mutual_argmax_blocks_second_best(self):
        # both classes point at the same node; only the node's argmax class wins
        g = build_sdag(
            [
                SemanticNode("n0", "tabby cat", "samples of tabby cat", ()),
            ]
        )
        task = TaskSpec("t", ("tabby cat", "tabby card"))
        match = match_classes(task, g, HashedTrigramProvider(), min_similarity=0.1)
        assert match.matched == {0: "n0"}
        assert match.unmatched == (1,)

    def test_similarities_recorded_for_all_pairs(self):
        g = self._graph()
        task = TaskSpec("t", ("tabby cat",))
        match = match_classes(task, g, HashedTrigramProvider())
        assert set(match.similarities) == {(0, "cat"), (0, "dog"), (0, "root")}

    def test_node_text_format(self):
        node = SemanticNode("x", "tabby cat", "samples of tabby cat", ())
        assert node_text(node) == "Name: tabby cat\nDescription: samples of tabby cat"
