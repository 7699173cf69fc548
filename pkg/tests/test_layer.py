import math

import numpy as np
import pytest

from slotgnn import tensor as T
from slotgnn.graph import HeteroGraph, NodeType, Relation, Schema
from slotgnn.layer import (
    LayerParams,
    aggregate_messages,
    encode_relations,
    extract_messages,
    layer_forward,
    project_qkv,
    relation_attention,
    update_sequences,
)
from slotgnn.seq import BaseSlot, InputProjection, SeqState, project_features

from . import oracles
from .randgraphs import random_graph


def fig_one_graph(n_target=2, n_a=3, n_b=2, seed=0):
    """One target type fed by two relations; layer-0 slot count is 1."""
    schema = Schema(
        node_types=[NodeType("a", 1, 2), NodeType("b", 1, 2), NodeType("t", 1, 2)],
        relations=[Relation("a", "ra", "t"), Relation("b", "rb", "t")],
        target_type="t",
        num_classes=2,
    )
    rng = np.random.default_rng(seed)
    counts = {"a": n_a, "b": n_b, "t": n_target}
    features = {
        name: rng.normal(size=(n, 1, 2)).astype(np.float32) for name, n in counts.items()
    }
    edges = {
        Relation("a", "ra", "t"): np.array(
            [(i % n_a, i % n_target) for i in range(max(n_a, n_target))], dtype=np.int64
        ),
        Relation("b", "rb", "t"): np.array(
            [(i % n_b, i % n_target) for i in range(max(n_b, n_target))], dtype=np.int64
        ),
    }
    g = HeteroGraph(
        schema, counts, features, edges,
        labels=rng.integers(0, 2, size=n_target),
        labeled_mask=np.ones(n_target, dtype=bool),
        splits={},
    )
    return g


def init_state(graph, dim, seed=0):
    proj = InputProjection.create(graph.schema, dim, np.random.default_rng(seed))
    return project_features(graph, proj)


def make_params(graph, dim, heads, seed=1, index=1):
    return LayerParams.create(graph.schema, dim, heads, np.random.default_rng(seed), index)


class TestProjectQKV:
    def test_identity_weights_pass_slots_through(self):
        g = fig_one_graph()
        state = init_state(g, 4)
        params = make_params(g, 4, 2)
        for name in g.counts:
            w, b = params.query[name]
            w.data = np.eye(4, dtype=w.data.dtype)
            b.data = np.zeros(4, dtype=b.data.dtype)
        queries, _, _ = project_qkv(state, params)
        for name in g.counts:
            assert np.allclose(queries[name].data, state.tensors[name].data, atol=1e-6)

    def test_zero_input_gives_bias(self):
        g = fig_one_graph()
        state = init_state(g, 4)
        zero_state = SeqState(
            {n: T.Tensor(np.zeros_like(t.data)) for n, t in state.tensors.items()},
            state.labels,
            0,
        )
        params = make_params(g, 4, 2)
        w, b = params.key["t"]
        b.data = np.arange(4, dtype=b.data.dtype)
        _, keys, _ = project_qkv(zero_state, params)
        assert np.allclose(keys["t"].data, np.broadcast_to(b.data, keys["t"].shape))

    def test_head_views_tile_the_full_projection(self):
        g = fig_one_graph(seed=3)
        state = init_state(g, 4, seed=3)
        params = make_params(g, 4, 2, seed=4)
        queries, _, _ = project_qkv(state, params)
        q = queries["t"]
        halves = [T.slice_axis(q, 2, 0, 2).data, T.slice_axis(q, 2, 2, 2).data]
        assert np.array_equal(np.concatenate(halves, axis=2), q.data)


class TestRelationAttention:
    def test_single_source_single_slot_weight_one(self):
        g = fig_one_graph(n_target=1, n_a=1, n_b=1)
        rel = g.schema.relations[0]
        g.edges[rel] = np.array([[0, 0]], dtype=np.int64)
        state = init_state(g, 4)
        params = make_params(g, 4, 1)
        q, k, _ = project_qkv(state, params)
        attn = relation_attention(k["a"], q["t"], params.att[rel], g.bipartite(rel), 1)
        assert np.allclose(attn.heads[0], 1.0)

    def test_identical_keys_split_evenly(self):
        g = fig_one_graph(n_target=1, n_a=2, n_b=1)
        rel = g.schema.relations[0]
        g.edges[rel] = np.array([[0, 0], [1, 0]], dtype=np.int64)
        g.features["a"][1] = g.features["a"][0]
        state = init_state(g, 4)
        params = make_params(g, 4, 1)
        q, k, _ = project_qkv(state, params)
        attn = relation_attention(k["a"], q["t"], params.att[rel], g.bipartite(rel), 1)
        assert np.allclose(attn.heads[0], 0.5, atol=1e-6)

    def test_matches_dense_evaluation(self):
        g = fig_one_graph(n_target=1, n_a=2, n_b=1, seed=9)
        rel = g.schema.relations[0]
        g.edges[rel] = np.array([[0, 0], [1, 0]], dtype=np.int64)
        state = init_state(g, 2, seed=9)
        params = make_params(g, 2, 1, seed=10)
        q, k, _ = project_qkv(state, params)
        view = g.bipartite(rel)
        attn = relation_attention(k["a"], q["t"], params.att[rel], view, 1)
        # direct per-edge evaluation: softmax over sources of K W Q^T / sqrt(d)
        w = params.att[rel].data[0]
        logits = np.array(
            [float(k["a"].data[s, 0] @ w @ q["t"].data[0, 0]) for s in view.src]
        ) / math.sqrt(2)
        want = np.exp(logits - logits.max())
        want /= want.sum()
        assert np.allclose(attn.heads[0][:, 0, 0], want, atol=1e-6)

    def test_empty_neighborhood_yields_empty_block(self):
        g = fig_one_graph()
        rel = g.schema.relations[0]
        g.edges[rel] = np.zeros((0, 2), dtype=np.int64)
        state = init_state(g, 4)
        params = make_params(g, 4, 2)
        q, k, _ = project_qkv(state, params)
        attn = relation_attention(k["a"], q["t"], params.att[rel], g.bipartite(rel), g.counts["t"])
        assert attn.heads[0].shape[0] == 0


class TestExtractAggregate:
    def test_identity_transforms_return_state(self):
        g = fig_one_graph()
        rel = g.schema.relations[0]
        state = init_state(g, 4)
        params = make_params(g, 4, 2)
        w, b = params.value["a"]
        w.data = np.eye(4, dtype=w.data.dtype)
        b.data = np.zeros(4, dtype=b.data.dtype)
        params.ext[rel].data = np.eye(4, dtype=w.data.dtype)
        _, _, values = project_qkv(state, params)
        ext = extract_messages(values["a"], params, rel)
        assert np.allclose(ext.data, state.tensors["a"].data, atol=1e-6)

    def test_zero_input_zero_bias_gives_zero(self):
        g = fig_one_graph()
        rel = g.schema.relations[0]
        params = make_params(g, 4, 2)
        zero = T.Tensor(np.zeros((3, 1, 4)))
        w, b = params.value["a"]
        values = T.add(T.matmul(zero, w), b)  # bias is zero-initialized
        ext = extract_messages(values, params, rel)
        assert np.allclose(ext.data, 0.0)

    def test_two_stage_composition(self):
        g = fig_one_graph(seed=5)
        rel = g.schema.relations[0]
        params = make_params(g, 2, 1, seed=6)
        h = np.random.default_rng(7).normal(size=(1, 2, 2)).astype(np.float32)
        w, b = params.value["a"]
        values = T.add(T.matmul(T.Tensor(h), w), b)
        ext = extract_messages(values, params, rel)
        for j in range(2):
            want = (h[0, j] @ w.data + b.data) @ params.ext[rel].data
            assert np.allclose(ext.data[0, j], want, atol=1e-6)

    def test_empty_neighborhood_gets_zero_block(self):
        g = fig_one_graph()
        rel = g.schema.relations[0]
        g.edges[rel] = np.zeros((0, 2), dtype=np.int64)
        state = init_state(g, 4)
        params = make_params(g, 4, 2)
        q, k, values = project_qkv(state, params)
        view = g.bipartite(rel)
        attn = relation_attention(k["a"], q["t"], params.att[rel], view, g.counts["t"])
        msg = aggregate_messages(attn, extract_messages(values["a"], params, rel), g.counts["t"])
        assert msg.shape == (g.counts["t"], 1, 4)
        assert np.all(msg.data == 0)

    def test_uniform_weights_average_source_slots(self):
        # one source with several slots and zero attention logits: every
        # target slot becomes the mean of the source's extracted slots
        g = fig_one_graph(n_target=1, n_a=1, n_b=1, seed=8)
        rel = g.schema.relations[0]
        g.edges[rel] = np.array([[0, 0]], dtype=np.int64)
        params = make_params(g, 4, 1, seed=8)
        for w_att in params.att.values():
            w_att.data = np.zeros_like(w_att.data)
        src_state = T.Tensor(np.random.default_rng(9).normal(size=(1, 3, 4)).astype(np.float32))
        dst_state = T.Tensor(np.random.default_rng(10).normal(size=(1, 2, 4)).astype(np.float32))
        state = SeqState(
            {"a": src_state, "b": T.Tensor(np.zeros((1, 1, 4))), "t": dst_state},
            {"a": [BaseSlot(0)] * 3, "b": [BaseSlot(0)], "t": [BaseSlot(0)] * 2},
            0,
        )
        q, k, values = project_qkv(state, params)
        view = g.bipartite(rel)
        attn = relation_attention(k["a"], q["t"], params.att[rel], view, 1)
        ext = extract_messages(values["a"], params, rel)
        msg = aggregate_messages(attn, ext, 1)
        want = ext.data[0].mean(axis=0)
        for j in range(2):
            assert np.allclose(msg.data[0, j], want, atol=1e-6)

    def test_matches_per_edge_loop(self):
        g = fig_one_graph(n_target=2, n_a=3, n_b=1, seed=11)
        rel = g.schema.relations[0]
        g.edges[rel] = np.array([[0, 0], [1, 0], [2, 1]], dtype=np.int64)
        state = init_state(g, 4, seed=11)
        params = make_params(g, 4, 2, seed=12)
        q, k, values = project_qkv(state, params)
        view = g.bipartite(rel)
        attn = relation_attention(k["a"], q["t"], params.att[rel], view, 2)
        ext = extract_messages(values["a"], params, rel)
        msg = aggregate_messages(attn, ext, 2)
        want = np.zeros((2, 1, 4))
        for m in range(2):
            lo, hi = 2 * m, 2 * m + 2
            for e in range(view.num_edges):
                s, t = view.src[e], view.dst[e]
                want[t, :, lo:hi] += attn.heads[m][e].T @ ext.data[s, :, lo:hi]
        assert np.allclose(msg.data, want, atol=1e-6)


class TestEncodeUpdate:
    def setup_blocks(self, dim=4):
        g = fig_one_graph(seed=13)
        params = make_params(g, dim, 2, seed=14)
        rng = np.random.default_rng(15)
        msgs = {
            rel: T.Tensor(rng.normal(size=(2, 1, dim)).astype(np.float32))
            for rel in g.schema.relations
        }
        return g, params, msgs

    def test_zero_encodings_give_plain_concatenation(self):
        g, params, msgs = self.setup_blocks()
        out = encode_relations(msgs, params, g.schema, "t")
        want = np.concatenate([msgs[r].data for r in g.schema.relations], axis=1)
        assert np.array_equal(out.data, want)

    def test_identical_messages_differ_by_encoding_difference(self):
        g, params, msgs = self.setup_blocks()
        ra, rb = g.schema.relations
        msgs[rb] = T.Tensor(msgs[ra].data.copy())
        params.enc[ra].data = np.arange(4, dtype=np.float32)
        params.enc[rb].data = -np.arange(4, dtype=np.float32)
        out = encode_relations(msgs, params, g.schema, "t")
        diff = out.data[:, 0, :] - out.data[:, 1, :]
        assert np.allclose(diff, params.enc[ra].data - params.enc[rb].data, atol=1e-6)

    def test_slot_index_arithmetic(self):
        g, params, msgs = self.setup_blocks()
        params.enc[g.schema.relations[0]].data = np.random.default_rng(16).normal(size=4).astype(np.float32)
        out = encode_relations(msgs, params, g.schema, "t")
        for bi, rel in enumerate(g.schema.relations):
            assert np.allclose(
                out.data[:, bi, :], msgs[rel].data[:, 0, :] + params.enc[rel].data, atol=1e-6
            )

    def test_missing_relation_block_raises(self):
        g, params, msgs = self.setup_blocks()
        del msgs[g.schema.relations[0]]
        with pytest.raises(KeyError):
            encode_relations(msgs, params, g.schema, "t")

    def test_update_prefix_is_bit_exact(self):
        g, params, _ = self.setup_blocks()
        rng = np.random.default_rng(17)
        prev = T.Tensor(rng.normal(size=(2, 3, 4)).astype(np.float32))
        encoded = T.Tensor(rng.normal(size=(2, 6, 4)).astype(np.float32))
        out = update_sequences(prev, encoded, params.adopt["t"])
        assert out.shape == (2, 9, 4)
        assert np.array_equal(out.data[:, :3, :], prev.data)


class TestLayerForward:
    def test_growth_one_three_nine(self):
        g = fig_one_graph(seed=18)
        state = init_state(g, 4, seed=18)
        p1 = make_params(g, 4, 2, seed=19, index=1)
        p2 = make_params(g, 4, 2, seed=20, index=2)
        s1 = layer_forward(state, g, p1, layer_index=1)
        assert s1.slot_count("t") == 3
        s2 = layer_forward(s1, g, p2, layer_index=2)
        assert s2.slot_count("t") == 9
        # source types have no incoming relations and keep their sequences
        assert s2.slot_count("a") == 1

    def test_type_without_incoming_relations_unchanged(self):
        g = fig_one_graph(seed=21)
        state = init_state(g, 4, seed=21)
        out = layer_forward(state, g, make_params(g, 4, 2, seed=22), layer_index=1)
        assert out.tensors["a"] is state.tensors["a"]

    def test_prefix_preservation(self):
        g = fig_one_graph(seed=23)
        state = init_state(g, 4, seed=23)
        out = layer_forward(state, g, make_params(g, 4, 2, seed=24), layer_index=1)
        assert np.array_equal(out.tensors["t"].data[:, :1, :], state.tensors["t"].data)

    def test_permutation_equivariance(self):
        g = fig_one_graph(n_target=3, n_a=4, n_b=2, seed=25)
        params = make_params(g, 4, 2, seed=26)
        proj = InputProjection.create(g.schema, 4, np.random.default_rng(27))
        perm = {"a": np.array([2, 0, 3, 1]), "b": np.array([1, 0]), "t": np.array([2, 1, 0])}
        g2 = HeteroGraph(
            g.schema,
            dict(g.counts),
            {n: g.features[n][np.argsort(perm[n])] for n in g.counts},
            {
                rel: np.stack(
                    [perm[rel.src][g.edges[rel][:, 0]], perm[rel.dst][g.edges[rel][:, 1]]], axis=1
                )
                for rel in g.schema.relations
            },
            labels=g.labels[np.argsort(perm["t"])],
            labeled_mask=np.ones(3, dtype=bool),
            splits={},
        )
        out1 = layer_forward(project_features(g, proj), g, params, layer_index=1)
        out2 = layer_forward(project_features(g2, proj), g2, params, layer_index=1)
        for name in g.counts:
            assert np.allclose(
                out2.tensors[name].data[perm[name]], out1.tensors[name].data, atol=1e-5
            )

    @pytest.mark.parametrize("seed", [31, 32, 33])
    def test_matches_dense_reference(self, seed):
        rng = np.random.default_rng(seed)
        g = random_graph(rng, max_nodes=4, max_edges=6)
        state = init_state(g, 4, seed=seed)
        params = make_params(g, 4, 2, seed=seed + 1)
        out = layer_forward(state, g, params, layer_index=1)
        want = oracles.dense_layer_reference(
            g, {n: t.data for n, t in state.tensors.items()}, params
        )
        for name in g.counts:
            assert np.allclose(out.tensors[name].data, want[name], rtol=1e-5, atol=1e-6)

    @pytest.mark.parametrize("mode", ["joint", "literal"])
    def test_dense_reference_other_modes(self, mode):
        rng = np.random.default_rng(77)
        g = random_graph(rng, max_nodes=4, max_edges=5)
        state = init_state(g, 4, seed=78)
        params = make_params(g, 4, 2, seed=79)
        out = layer_forward(state, g, params, layer_index=1, attention_norm=mode, scale_outside=True)
        want = oracles.dense_layer_reference(
            g, {n: t.data for n, t in state.tensors.items()}, params,
            mode=mode, scale_outside=True,
        )
        for name in g.counts:
            assert np.allclose(out.tensors[name].data, want[name], rtol=1e-5, atol=1e-6)

    def test_attention_mass_sums_per_mode(self):
        for seed in range(5):
            rng = np.random.default_rng(100 + seed)
            g = random_graph(rng, max_nodes=5, max_edges=8)
            state = init_state(g, 4, seed=seed)
            params = make_params(g, 4, 2, seed=seed)
            for mode, axes in (("joint", (0, 1)), ("literal", (0,))):
                collect = {}
                layer_forward(state, g, params, layer_index=1, attention_norm=mode, collect=collect)
                for rel, attn in collect["attention"].items():
                    dst = attn.view.dst
                    for head in attn.heads:
                        for t in np.unique(dst):
                            sums = head[dst == t].sum(axis=axes)
                            assert np.allclose(sums, 1.0, atol=1e-6)

    def test_message_locality(self):
        g = fig_one_graph(n_target=2, n_a=3, n_b=2, seed=40)
        rel = g.schema.relations[0]
        g.edges[rel] = np.array([[0, 0], [1, 1]], dtype=np.int64)  # source 2 feeds nobody
        params = make_params(g, 4, 2, seed=41)
        proj = InputProjection.create(g.schema, 4, np.random.default_rng(42))
        out1 = layer_forward(project_features(g, proj), g, params, layer_index=1)
        g.features["a"][2] += 5.0  # node outside N(t=0) under both relations
        out2 = layer_forward(project_features(g, proj), g, params, layer_index=1)
        assert np.array_equal(out1.tensors["t"].data[0], out2.tensors["t"].data[0])

    def test_neighbor_storage_order_does_not_matter(self):
        g = fig_one_graph(n_target=2, n_a=3, n_b=2, seed=43)
        params = make_params(g, 4, 2, seed=44)
        proj = InputProjection.create(g.schema, 4, np.random.default_rng(45))
        out1 = layer_forward(project_features(g, proj), g, params, layer_index=1)
        g2 = HeteroGraph(
            g.schema, dict(g.counts), g.features,
            {rel: pairs[::-1].copy() for rel, pairs in g.edges.items()},
            g.labels, g.labeled_mask, {},
        )
        out2 = layer_forward(project_features(g2, proj), g2, params, layer_index=1)
        for name in g.counts:
            assert np.array_equal(out1.tensors[name].data, out2.tensors[name].data)
