"""One message-passing layer over the relational bipartite views.

Per relation, every (source slot, target slot) pair gets its own attention
weight, so the attention between two nodes is a matrix rather than a scalar.
Messages are convex combinations of extracted source slots, one block per
relation; blocks get a learnable per-relation encoding added, are concatenated
in schema order, mapped once per target type, and appended to the previous
sequence, which stays intact as a prefix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .graph import BipartiteView, HeteroGraph, Relation, Schema
from .seq import LayerSlot, SeqState, slot_labels


@dataclass
class LayerParams:
    """Learnable maps for one layer: type-wise Q/K/V/Adopt, relation-wise
    attention/extraction/encoding. Attention weights are one d_h x d_h block
    per head."""

    query: dict[str, tuple[T.Tensor, T.Tensor]]
    key: dict[str, tuple[T.Tensor, T.Tensor]]
    value: dict[str, tuple[T.Tensor, T.Tensor]]
    adopt: dict[str, T.Tensor]
    att: dict[Relation, T.Tensor]  # stacked per-head blocks, (heads, d_h, d_h)
    ext: dict[Relation, T.Tensor]
    enc: dict[Relation, T.Tensor]
    heads: int
    dim: int

    @staticmethod
    def create(schema: Schema, dim: int, heads: int, rng: np.random.Generator, index: int) -> "LayerParams":
        if dim % heads:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        d_h = dim // heads
        query, key, value, adopt = {}, {}, {}, {}
        for nt in schema.node_types:
            prefix = f"layer{index}.{nt.name}"
            for role, store in (("query", query), ("key", key), ("value", value)):
                store[nt.name] = (
                    T.xavier_uniform(rng, dim, dim, name=f"{prefix}.{role}.weight"),
                    T.zero_param((dim,), name=f"{prefix}.{role}.bias"),
                )
            if schema.relations_into(nt.name):
                adopt[nt.name] = T.xavier_uniform(rng, dim, dim, name=f"{prefix}.adopt")
        att, ext, enc = {}, {}, {}
        for rel in schema.relations:
            prefix = f"layer{index}.{rel.key}"
            att[rel] = T.xavier_uniform(rng, d_h, d_h, shape=(heads, d_h, d_h), name=f"{prefix}.att")
            ext[rel] = T.xavier_uniform(rng, dim, dim, name=f"{prefix}.ext")
            # zero encodings make the no-encoding ablation the exact initial state
            enc[rel] = T.zero_param((dim,), name=f"{prefix}.enc")
        return LayerParams(query, key, value, adopt, att, ext, enc, heads, dim)

    def parameters(self) -> list[T.Tensor]:
        out: list[T.Tensor] = []
        for store in (self.query, self.key, self.value):
            for w, b in store.values():
                out.extend([w, b])
        out.extend(self.adopt.values())
        out.extend(self.att.values())
        out.extend(self.ext.values())
        out.extend(self.enc.values())
        return out


@dataclass
class AttentionBlock:
    """Attention weights of one relation, heads folded into the edge axis.

    ``flat`` has shape (E * heads, F_src, F_dst), edge-major; ``dst_heads``
    maps each row to its (target, head) segment.
    """

    flat: T.Tensor
    num_heads: int
    view: BipartiteView
    dst_heads: np.ndarray

    @property
    def heads(self) -> list[np.ndarray]:
        """Per-head (E, F_src, F_dst) weight arrays, for inspection."""
        e = self.view.num_edges
        arr = self.flat.data.reshape(e, self.num_heads, *self.flat.shape[1:])
        return [arr[:, m] for m in range(self.num_heads)]


def _fold_heads(x: T.Tensor, heads: int) -> T.Tensor:
    """(E, F, d) -> (E * heads, F, d/heads), edge-major row order."""
    e, f, d = x.shape
    folded = T.transpose(T.reshape(x, (e, f, heads, d // heads)), (0, 2, 1, 3))
    return T.reshape(folded, (e * heads, f, d // heads))


def project_qkv(
    state: SeqState, params: LayerParams
) -> tuple[dict[str, T.Tensor], dict[str, T.Tensor], dict[str, T.Tensor]]:
    """Apply the per-type shared Q/K/V maps to every slot of every node."""
    queries, keys, values = {}, {}, {}
    for name, tens in state.tensors.items():
        if tens.shape[2] != params.dim:
            raise T.ShapeError(f"state width {tens.shape[2]} != params dim {params.dim}")
        wq, bq = params.query[name]
        wk, bk = params.key[name]
        wv, bv = params.value[name]
        queries[name] = T.add(T.matmul(tens, wq), bq)
        keys[name] = T.add(T.matmul(tens, wk), bk)
        values[name] = T.add(T.matmul(tens, wv), bv)
    return queries, keys, values


def relation_attention(
    src_keys: T.Tensor,
    dst_queries: T.Tensor,
    att_weights: T.Tensor,
    view: BipartiteView,
    num_targets: int,
    mode: str = "joint",
    scale_outside: bool = False,
) -> AttentionBlock:
    """Per-head attention over one relation's edges, all heads in one pass.

    Logits for edge (s, t) are K[s] W Q[t]^T per head; by default they are
    scaled by 1/sqrt(d_h) inside the softmax, with ``scale_outside`` moving a
    1/sqrt(d) factor after normalization instead.
    """
    heads = att_weights.shape[0]
    d = src_keys.shape[2]
    d_h = d // heads
    e = view.num_edges
    k_h = _fold_heads(T.gather(src_keys, view.src), heads)
    q_h = _fold_heads(T.gather(dst_queries, view.dst), heads)
    w_tiled = T.gather(att_weights, np.tile(np.arange(heads), e))
    logits = T.bmm(T.bmm(k_h, w_tiled), T.transpose(q_h, (0, 2, 1)))
    dst_heads = (view.dst[:, None] * heads + np.arange(heads)[None, :]).reshape(-1)
    segments = num_targets * heads
    if scale_outside:
        attn = T.scale(T.edge_softmax(logits, dst_heads, segments, mode), 1.0 / math.sqrt(d))
    else:
        attn = T.edge_softmax(T.scale(logits, 1.0 / math.sqrt(d_h)), dst_heads, segments, mode)
    return AttentionBlock(attn, heads, view, dst_heads)


def extract_messages(src_values: T.Tensor, params: LayerParams, rel: Relation) -> T.Tensor:
    """Relation-specific extraction applied on top of the type's Value slots."""
    return T.matmul(src_values, params.ext[rel])


def aggregate_messages(
    attn: AttentionBlock, ext: T.Tensor, num_targets: int
) -> T.Tensor:
    """Sum attention-mixed source slots into each target: (n_dst, F_dst, d).

    Targets with an empty neighborhood receive a zero block; sources are
    visited in sorted order, so the reduction is bit-stable.
    """
    heads = attn.num_heads
    d = ext.shape[2]
    d_h = d // heads
    f_t = attn.flat.shape[2]
    ext_h = _fold_heads(T.gather(ext, attn.view.src), heads)
    msg = T.bmm(T.transpose(attn.flat, (0, 2, 1)), ext_h)
    summed = T.segment_sum(msg, attn.dst_heads, num_targets * heads)
    unfolded = T.transpose(T.reshape(summed, (num_targets, heads, f_t, d_h)), (0, 2, 1, 3))
    return T.reshape(unfolded, (num_targets, f_t, d))


def encode_relations(
    messages: dict[Relation, T.Tensor],
    params: LayerParams,
    schema: Schema,
    type_name: str,
    relation_encoding: bool = True,
) -> T.Tensor:
    """Add each relation's encoding to its block and concatenate in schema order."""
    blocks = []
    for rel in schema.relations_into(type_name):
        if rel not in messages:
            raise KeyError(f"missing message block for relation {rel}")
        msg = messages[rel]
        if relation_encoding:
            msg = T.add(msg, params.enc[rel])
        blocks.append(msg)
    return blocks[0] if len(blocks) == 1 else T.concat(blocks, axis=1)


def update_sequences(prev: T.Tensor, encoded: T.Tensor, adopt: T.Tensor) -> T.Tensor:
    """Append the adopted message blocks after the unchanged previous slots."""
    return T.concat([prev, T.matmul(encoded, adopt)], axis=1)


def layer_forward(
    state: SeqState,
    graph: HeteroGraph,
    params: LayerParams,
    layer_index: int,
    tables: dict[str, list] | None = None,
    attention_norm: str = "joint",
    scale_outside: bool = False,
    relation_encoding: bool = True,
    sequence_update: bool = True,
    collect: dict | None = None,
) -> SeqState:
    """Full layer: project, attend, extract, aggregate, encode, update.

    With ``sequence_update`` off (the no-sequence ablation) the relation
    blocks are averaged into a single slot instead of being appended.
    """
    schema = graph.schema
    queries, keys, values = project_qkv(state, params)
    messages: dict[Relation, T.Tensor] = {}
    for rel in schema.relations:
        view = graph.bipartite(rel)
        n_dst = graph.counts[rel.dst]
        attn = relation_attention(
            keys[rel.src], queries[rel.dst], params.att[rel], view, n_dst,
            mode=attention_norm, scale_outside=scale_outside,
        )
        ext = extract_messages(values[rel.src], params, rel)
        messages[rel] = aggregate_messages(attn, ext, n_dst)
        if collect is not None:
            collect.setdefault("attention", {})[rel] = attn

    if tables is None:
        tables = slot_labels(schema, layer_index)
    tensors: dict[str, T.Tensor] = {}
    labels: dict[str, list] = {}
    for nt in schema.node_types:
        name = nt.name
        incoming = schema.relations_into(name)
        if not incoming:
            tensors[name] = state.tensors[name]
            labels[name] = state.labels[name]
            continue
        encoded = encode_relations(messages, params, schema, name, relation_encoding)
        if sequence_update:
            tensors[name] = update_sequences(state.tensors[name], encoded, params.adopt[name])
            labels[name] = tables[name][layer_index]
        else:
            merged = encoded
            if len(incoming) > 1:
                n = graph.counts[name]
                stacked = T.reshape(merged, (n, len(incoming), state.slot_count(name), params.dim))
                merged = T.reduce_mean(stacked, axis=1)
            tensors[name] = T.matmul(merged, params.adopt[name])
            labels[name] = [LayerSlot(layer_index)] * tensors[name].shape[1]
    return SeqState(tensors, labels, layer_index)
