"""Multi-slot node representations: input projection, slot provenance, dropout.

A node's representation is an ordered sequence of d-vectors ("slots"). At
layer 0 there is one slot per raw feature; each layer appends one message
block per incoming relation, so the slot count per type grows by the factor
(#incoming relations + 1) per layer. Every slot carries a provenance label
that decodes back to either a base feature or a relation-derived message.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from . import tensor as T
from .graph import HeteroGraph, Relation, Schema


@dataclass(frozen=True)
class BaseSlot:
    """Slot holding the projection of one raw feature."""

    feature: int


@dataclass(frozen=True)
class MsgSlot:
    """Slot holding a layer-``layer`` message over ``relation``.

    ``parent`` indexes the target's own slot table one layer below: message
    blocks are shaped like the target's previous sequence, so each new slot
    extends one existing provenance chain by one hop.
    """

    relation: Relation
    parent: int
    layer: int


@dataclass(frozen=True)
class LayerSlot:
    """Per-layer summary slot used by the no-sequence ablation."""

    layer: int


SlotLabel = Union[BaseSlot, MsgSlot, LayerSlot]


@dataclass
class SeqState:
    """Per-type sequence tensors (nodes x slots x d) at one layer."""

    tensors: dict[str, T.Tensor]
    labels: dict[str, list[SlotLabel]]
    layer: int

    def slot_count(self, type_name: str) -> int:
        return self.tensors[type_name].shape[1]


def sequence_length(schema: Schema, type_name: str, layer: int) -> int:
    """Closed form of the slot-count recurrence F_l = F_{l-1} * (len(R)+1)."""
    growth = len(schema.relations_into(type_name)) + 1
    return schema.base_slots(type_name) * growth ** layer


def slot_labels(schema: Schema, num_layers: int) -> dict[str, list[list[SlotLabel]]]:
    """Provenance tables for layers 0..num_layers, per node type.

    Each layer's table extends the previous one: the old labels stay as a
    prefix, then one block of message labels per incoming relation in schema
    declaration order.
    """
    if num_layers < 0:
        raise ValueError("num_layers must be non-negative")
    tables: dict[str, list[list[SlotLabel]]] = {}
    for nt in schema.node_types:
        per_layer: list[list[SlotLabel]] = [
            [BaseSlot(f) for f in range(schema.base_slots(nt.name))]
        ]
        incoming = schema.relations_into(nt.name)
        for layer in range(1, num_layers + 1):
            prev = per_layer[-1]
            table = list(prev)
            for rel in incoming:
                table.extend(MsgSlot(rel, j, layer) for j in range(len(prev)))
            per_layer.append(table)
        tables[nt.name] = per_layer
    return tables


@dataclass
class InputProjection:
    """Per (type, feature) affine maps into the shared d-dimensional space.

    Weights are stored input_dim x d and applied as ``x @ W + b``. Featureless
    types get a single trainable embedding shared by all their nodes.
    """

    weights: dict[tuple[str, int], tuple[T.Tensor, T.Tensor]]
    embeddings: dict[str, T.Tensor]
    dim: int

    @staticmethod
    def create(schema: Schema, dim: int, rng: np.random.Generator) -> "InputProjection":
        weights = {}
        embeddings = {}
        for nt in schema.node_types:
            if nt.num_features == 0:
                embeddings[nt.name] = T.xavier_uniform(
                    rng, 1, dim, shape=(1, dim), name=f"proj.{nt.name}.embedding"
                )
                continue
            for f in range(nt.num_features):
                weights[(nt.name, f)] = (
                    T.xavier_uniform(rng, nt.feature_dim, dim, name=f"proj.{nt.name}.f{f}.weight"),
                    T.zero_param((dim,), name=f"proj.{nt.name}.f{f}.bias"),
                )
        return InputProjection(weights, embeddings, dim)

    def parameters(self) -> list[T.Tensor]:
        out = []
        for w, b in self.weights.values():
            out.extend([w, b])
        out.extend(self.embeddings.values())
        return out


def project_features(graph: HeteroGraph, proj: InputProjection) -> SeqState:
    """Layer-0 state: slot f of node i is the affine image of its feature f."""
    tables = slot_labels(graph.schema, 0)
    tensors: dict[str, T.Tensor] = {}
    labels: dict[str, list[SlotLabel]] = {}
    d = proj.dim
    for nt in graph.schema.node_types:
        n = graph.counts[nt.name]
        if nt.num_features == 0:
            ones = T.Tensor(np.ones((n, 1)))
            rows = T.matmul(ones, proj.embeddings[nt.name])
            tensors[nt.name] = T.reshape(rows, (n, 1, d))
        else:
            feats = graph.features[nt.name]
            if feats.shape[1] != nt.num_features or feats.shape[2] != nt.feature_dim:
                raise T.ShapeError(
                    f"features of {nt.name!r} have shape {feats.shape[1:]}, "
                    f"schema declares ({nt.num_features}, {nt.feature_dim})"
                )
            slots = []
            for f in range(nt.num_features):
                w, b = proj.weights[(nt.name, f)]
                slot = T.add(T.matmul(T.Tensor(feats[:, f, :]), w), b)
                slots.append(T.reshape(slot, (n, 1, d)))
            tensors[nt.name] = slots[0] if len(slots) == 1 else T.concat(slots, axis=1)
        labels[nt.name] = tables[nt.name][0]
    return SeqState(tensors, labels, layer=0)


def slot_dropout(
    state: SeqState,
    p: float,
    training: bool,
    seed: int,
    graph: HeteroGraph | None = None,
) -> SeqState:
    """Zero whole slots with probability p, scaling survivors by 1/(1-p).

    Masks are drawn per original node id at the parent graph's size, so a
    node keeps the same mask whether it is visited in a full-graph pass or
    inside a sampled subgraph, and results do not depend on evaluation order.
    Identity outside training or at p = 0.
    """
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return state
    tensors: dict[str, T.Tensor] = {}
    for ti, (name, tens) in enumerate(state.tensors.items()):
        n, f, d = tens.shape
        rng = np.random.default_rng(np.random.SeedSequence([seed, ti]))
        if graph is not None:
            full = rng.random((graph.parent_counts[name], f))
            keep = full[graph.orig_ids[name]] >= p
        else:
            keep = rng.random((n, f)) >= p
        mask = np.broadcast_to((keep / (1.0 - p))[:, :, None], (n, f, d))
        tensors[name] = T.mul(tens, T.Tensor(np.ascontiguousarray(mask)))
    return SeqState(tensors, state.labels, state.layer)
