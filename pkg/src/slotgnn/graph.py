"""Heterogeneous graph schema, storage, dataset IO, synthetic data, sampling.

Node ids are dense and 0-based per type (the row index of the node file).
Relations are directed; messages flow source -> target. Duplicate edges are
kept (multigraph semantics) and only warned about. Every per-relation view
stores its edges sorted by (target, source) so downstream reductions run in
a canonical order.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)


class DatasetError(Exception):
    """Raised when a dataset directory fails validation."""

    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = errors


@dataclass(frozen=True)
class NodeType:
    name: str
    num_features: int
    feature_dim: int


@dataclass(frozen=True)
class Relation:
    src: str
    name: str
    dst: str

    @property
    def key(self) -> str:
        return f"{self.src}__{self.name}__{self.dst}"

    def __str__(self) -> str:
        return f"{self.src}-{self.name}->{self.dst}"


@dataclass
class Schema:
    node_types: list[NodeType]
    relations: list[Relation]
    target_type: str
    num_classes: int
    multilabel: bool = False

    def node_type(self, name: str) -> NodeType:
        for nt in self.node_types:
            if nt.name == name:
                return nt
        raise KeyError(name)

    def type_names(self) -> list[str]:
        return [nt.name for nt in self.node_types]

    def relations_into(self, type_name: str) -> list[Relation]:
        """Relations whose target type is ``type_name``, in declaration order."""
        return [r for r in self.relations if r.dst == type_name]

    def base_slots(self, type_name: str) -> int:
        """Slot count at layer 0; featureless types get one embedding slot."""
        return max(1, self.node_type(type_name).num_features)

    def to_json(self) -> dict:
        return {
            "node_types": [
                {"name": nt.name, "num_features": nt.num_features, "feature_dim": nt.feature_dim}
                for nt in self.node_types
            ],
            "relations": [{"src": r.src, "name": r.name, "dst": r.dst} for r in self.relations],
            "target_type": self.target_type,
            "num_classes": self.num_classes,
        }

    @staticmethod
    def from_json(obj: dict) -> "Schema":
        return Schema(
            node_types=[
                NodeType(t["name"], int(t["num_features"]), int(t["feature_dim"]))
                for t in obj["node_types"]
            ],
            relations=[Relation(r["src"], r["name"], r["dst"]) for r in obj["relations"]],
            target_type=obj["target_type"],
            num_classes=int(obj["num_classes"]),
        )


@dataclass
class BipartiteView:
    """CSR adjacency of one relation indexed by target node.

    ``src[indptr[t]:indptr[t+1]]`` enumerates the sources of target t in
    ascending source order; ``dst`` is the matching sorted target column.
    """

    relation: Relation
    indptr: np.ndarray
    src: np.ndarray
    dst: np.ndarray

    @property
    def num_edges(self) -> int:
        return int(self.src.shape[0])

    def neighbors(self, t: int) -> np.ndarray:
        return self.src[self.indptr[t]: self.indptr[t + 1]]


class HeteroGraph:
    """Immutable typed graph with per-type features, labels and splits."""

    def __init__(
        self,
        schema: Schema,
        counts: dict[str, int],
        features: dict[str, np.ndarray],
        edges: dict[Relation, np.ndarray],
        labels: np.ndarray,
        labeled_mask: np.ndarray,
        splits: dict[str, np.ndarray],
        orig_ids: dict[str, np.ndarray] | None = None,
        parent_counts: dict[str, int] | None = None,
    ):
        self.schema = schema
        self.counts = counts
        self.features = features
        self.edges = edges
        self.labels = labels
        self.labeled_mask = labeled_mask
        self.splits = {k: np.sort(np.asarray(v, dtype=np.int64)) for k, v in splits.items()}
        # identity of each node in the graph this one was induced from
        self.orig_ids = orig_ids or {
            name: np.arange(n, dtype=np.int64) for name, n in counts.items()
        }
        self.parent_counts = parent_counts or dict(counts)
        self._views: dict[Relation, BipartiteView] = {}

    def num_nodes(self, type_name: str) -> int:
        return self.counts[type_name]

    def bipartite(self, relation: Relation) -> BipartiteView:
        """CSR view over targets; built once, edges sorted by (target, source)."""
        if relation not in self.edges:
            raise KeyError(f"unknown relation {relation}")
        view = self._views.get(relation)
        if view is None:
            pairs = self.edges[relation]
            n_dst = self.counts[relation.dst]
            if pairs.size:
                order = np.lexsort((pairs[:, 0], pairs[:, 1]))
                src = pairs[order, 0].copy()
                dst = pairs[order, 1].copy()
            else:
                src = np.zeros(0, dtype=np.int64)
                dst = np.zeros(0, dtype=np.int64)
            indptr = np.zeros(n_dst + 1, dtype=np.int64)
            np.add.at(indptr, dst + 1, 1)
            np.cumsum(indptr, out=indptr)
            view = BipartiteView(relation, indptr, src, dst)
            self._views[relation] = view
        return view


@dataclass
class Subgraph:
    """An induced subgraph plus the identity of its nodes in the parent."""

    graph: HeteroGraph
    node_ids: dict[str, np.ndarray]
    batch_local: np.ndarray
    batch_original: np.ndarray


# ---------------------------------------------------------------------------
# dataset directory IO


@dataclass
class RawDataset:
    """Parsed but unvalidated contents of a dataset directory."""

    schema: Schema | None = None
    node_ids: dict[str, np.ndarray] = field(default_factory=dict)
    node_features: dict[str, np.ndarray] = field(default_factory=dict)
    edges: dict[Relation, np.ndarray] = field(default_factory=dict)
    label_rows: list[list[int]] = field(default_factory=list)
    multilabel: bool = False
    splits: dict[str, list[int]] = field(default_factory=dict)
    errors: list[str] = field(default_factory=list)


def _read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        return [], []
    return rows[0], rows[1:]


def read_raw(directory: str | Path) -> RawDataset:
    raw = RawDataset()
    directory = Path(directory)
    schema_path = directory / "schema.json"
    if not schema_path.exists():
        raw.errors.append("missing file schema.json")
        return raw
    try:
        raw.schema = Schema.from_json(json.loads(schema_path.read_text()))
    except (KeyError, ValueError, TypeError) as exc:
        raw.errors.append(f"schema.json unreadable: {exc}")
        return raw
    schema = raw.schema

    for nt in schema.node_types:
        path = directory / f"nodes_{nt.name}.csv"
        if not path.exists():
            raw.errors.append(f"missing file {path.name}")
            continue
        header, rows = _read_csv(path)
        expected = ["id"] + [
            f"f{f}_{k}" for f in range(nt.num_features) for k in range(nt.feature_dim)
        ]
        if header != expected:
            raw.errors.append(f"{path.name}: header mismatch, expected {','.join(expected)}")
            continue
        ids = np.array([int(r[0]) for r in rows], dtype=np.int64)
        feats = np.array(
            [[float(v) for v in r[1:]] for r in rows], dtype=np.float32
        ).reshape(len(rows), nt.num_features, nt.feature_dim)
        raw.node_ids[nt.name] = ids
        raw.node_features[nt.name] = feats

    for rel in schema.relations:
        path = directory / f"edges_{rel.key}.csv"
        if not path.exists():
            raw.errors.append(f"missing file {path.name}")
            continue
        header, rows = _read_csv(path)
        if header != ["src_id", "dst_id"]:
            raw.errors.append(f"{path.name}: header mismatch, expected src_id,dst_id")
            continue
        raw.edges[rel] = (
            np.array([[int(r[0]), int(r[1])] for r in rows], dtype=np.int64)
            if rows
            else np.zeros((0, 2), dtype=np.int64)
        )

    labels_path = directory / "labels.csv"
    if not labels_path.exists():
        raw.errors.append("missing file labels.csv")
    else:
        header, rows = _read_csv(labels_path)
        if header[:1] != ["id"] or len(header) < 2:
            raw.errors.append("labels.csv: header mismatch, expected id,label[...]")
        else:
            raw.multilabel = header != ["id", "label"]
            if raw.multilabel and header != ["id"] + [f"label{c}" for c in range(len(header) - 1)]:
                raw.errors.append("labels.csv: header mismatch for multi-label file")
            raw.label_rows = [[int(v) for v in r] for r in rows]

    splits_path = directory / "splits.json"
    if not splits_path.exists():
        raw.errors.append("missing file splits.json")
    else:
        try:
            obj = json.loads(splits_path.read_text())
            raw.splits = {k: [int(i) for i in obj[k]] for k in ("train", "valid", "test")}
        except (KeyError, ValueError, TypeError) as exc:
            raw.errors.append(f"splits.json unreadable: {exc}")
    return raw


def validate_schema(schema: Schema, raw: RawDataset) -> list[str]:
    """Exhaustively check referential and arity constraints; returns all errors."""
    errors: list[str] = []
    names = [nt.name for nt in schema.node_types]
    for name in set(names):
        if names.count(name) > 1:
            errors.append(f"duplicate node type {name!r}")
    seen_rel: set[tuple[str, str, str]] = set()
    for rel in schema.relations:
        triple = (rel.src, rel.name, rel.dst)
        if triple in seen_rel:
            errors.append(f"duplicate relation {rel}")
        seen_rel.add(triple)
        for endpoint in (rel.src, rel.dst):
            if endpoint not in names:
                errors.append(f"relation {rel}: unknown type {endpoint!r}")
    if len(schema.node_types) + len(schema.relations) <= 2:
        errors.append("graph is not heterogeneous: need |node types| + |relations| > 2")
    if schema.target_type not in names:
        errors.append(f"unknown target type {schema.target_type!r}")
    if schema.num_classes < 2:
        errors.append("num_classes must be at least 2")

    counts: dict[str, int] = {}
    for nt in schema.node_types:
        ids = raw.node_ids.get(nt.name)
        if ids is None:
            continue
        counts[nt.name] = len(ids)
        if not np.array_equal(ids, np.arange(len(ids))):
            errors.append(f"nodes_{nt.name}.csv: id column must equal the row index")

    for rel, pairs in raw.edges.items():
        if rel.src not in counts or rel.dst not in counts:
            continue
        if pairs.size:
            if pairs[:, 0].min() < 0 or pairs[:, 0].max() >= counts[rel.src]:
                errors.append(f"edges_{rel.key}.csv: source id out of range")
            if pairs[:, 1].min() < 0 or pairs[:, 1].max() >= counts[rel.dst]:
                errors.append(f"edges_{rel.key}.csv: target id out of range")
            uniq = len({(int(s), int(t)) for s, t in pairs})
            if uniq < len(pairs):
                log.warning("relation %s has %d duplicate edges (kept)", rel, len(pairs) - uniq)

    n_target = counts.get(schema.target_type)
    if n_target is not None and raw.label_rows:
        width = 1 if not raw.multilabel else schema.num_classes
        for row in raw.label_rows:
            if len(row) != width + 1:
                errors.append("labels.csv: row arity mismatch")
                break
        ids = [row[0] for row in raw.label_rows]
        if ids and (min(ids) < 0 or max(ids) >= n_target):
            errors.append("labels.csv: id out of range")
        if not raw.multilabel:
            classes = [row[1] for row in raw.label_rows]
            if classes and (min(classes) < 0 or max(classes) >= schema.num_classes):
                errors.append("labels.csv: class out of range")

    if raw.splits and n_target is not None:
        labeled = {row[0] for row in raw.label_rows}
        seen: set[int] = set()
        for part in ("train", "valid", "test"):
            part_ids = raw.splits.get(part, [])
            for i in part_ids:
                if i < 0 or i >= n_target:
                    errors.append(f"splits.json: {part} id {i} out of range")
                elif i not in labeled:
                    errors.append(f"splits.json: {part} id {i} has no label")
            overlap = seen.intersection(part_ids)
            if overlap:
                errors.append(f"splits.json: splits not disjoint (id {sorted(overlap)[0]})")
            seen.update(part_ids)
    return errors


def build_graph(raw: RawDataset) -> HeteroGraph:
    schema = raw.schema
    assert schema is not None
    schema.multilabel = raw.multilabel
    counts = {nt.name: len(raw.node_ids[nt.name]) for nt in schema.node_types}
    n_target = counts[schema.target_type]
    labeled = np.zeros(n_target, dtype=bool)
    if raw.multilabel:
        labels = np.zeros((n_target, schema.num_classes), dtype=np.float32)
        for row in raw.label_rows:
            labels[row[0]] = row[1:]
            labeled[row[0]] = True
    else:
        labels = np.full(n_target, -1, dtype=np.int64)
        for row in raw.label_rows:
            labels[row[0]] = row[1]
            labeled[row[0]] = True
    return HeteroGraph(
        schema=schema,
        counts=counts,
        features=dict(raw.node_features),
        edges=dict(raw.edges),
        labels=labels,
        labeled_mask=labeled,
        splits={k: np.array(v, dtype=np.int64) for k, v in raw.splits.items()},
    )


def load_dataset(directory: str | Path) -> HeteroGraph:
    """Load and validate a dataset directory; raises DatasetError on problems."""
    raw = read_raw(directory)
    errors = list(raw.errors)
    if raw.schema is not None:
        errors.extend(validate_schema(raw.schema, raw))
    if errors:
        raise DatasetError(errors)
    return build_graph(raw)


def _fmt(value: np.floating) -> str:
    return repr(float(np.float32(value)))


def save_dataset(graph: HeteroGraph, directory: str | Path) -> None:
    """Write a graph in the dataset directory layout (LF endings, UTF-8)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "schema.json").write_text(json.dumps(graph.schema.to_json(), indent=1) + "\n")
    for nt in graph.schema.node_types:
        feats = graph.features[nt.name]
        with open(directory / f"nodes_{nt.name}.csv", "w", newline="\n") as fh:
            header = ["id"] + [
                f"f{f}_{k}" for f in range(nt.num_features) for k in range(nt.feature_dim)
            ]
            fh.write(",".join(header) + "\n")
            for i in range(graph.counts[nt.name]):
                row = [str(i)] + [_fmt(v) for v in feats[i].reshape(-1)]
                fh.write(",".join(row) + "\n")
    for rel in graph.schema.relations:
        with open(directory / f"edges_{rel.key}.csv", "w", newline="\n") as fh:
            fh.write("src_id,dst_id\n")
            for s, t in graph.edges[rel]:
                fh.write(f"{s},{t}\n")
    with open(directory / "labels.csv", "w", newline="\n") as fh:
        if graph.schema.multilabel:
            fh.write("id," + ",".join(f"label{c}" for c in range(graph.schema.num_classes)) + "\n")
            for i in np.flatnonzero(graph.labeled_mask):
                flags = ",".join(str(int(v)) for v in graph.labels[i])
                fh.write(f"{i},{flags}\n")
        else:
            fh.write("id,label\n")
            for i in np.flatnonzero(graph.labeled_mask):
                fh.write(f"{i},{int(graph.labels[i])}\n")
    splits = {k: [int(i) for i in graph.splits.get(k, [])] for k in ("train", "valid", "test")}
    (directory / "splits.json").write_text(json.dumps(splits) + "\n")


# ---------------------------------------------------------------------------
# synthetic graphs


@dataclass
class SyntheticSpec:
    """Desk-scale generator config: one label-generating 2-hop path + noise.

    Labels of ``item`` nodes are the majority class over all 2-hop paths
    item <- mid <- attr (counted with multiplicity, ties to the lowest class).
    The attr class is visible in the attr node features; every other feature
    and the junk relations are label-independent noise. Attr and mid classes
    are assigned round-robin, and wiring is class-coherent with probability
    ``coherence``, which keeps the majority signal strong and the label
    histogram roughly balanced. Junk features are random one-hots in the same
    class space as attr features: independent of the labels, but corrosive to
    any aggregation that blends relation blocks together.
    """

    num_targets: int = 600
    num_classes: int = 4
    num_mid: int = 200
    num_attr: int = 40
    num_junk: int = 80
    mids_per_target: int = 3
    attrs_per_mid: int = 3
    junk_per_target: int = 2
    junk_per_mid: int = 1
    feature_dim: int = 8
    attr_noise: float = 0.1
    coherence: float = 0.9
    planted: bool = True
    split_fractions: tuple[float, float, float] = (0.6, 0.2, 0.2)

    TARGET = "item"
    MID = "mid"
    ATTR = "attr"
    JUNK = "junk"
    PLANTED_FIRST_HOP = Relation("attr", "tags", "mid")
    PLANTED_SECOND_HOP = Relation("mid", "of", "item")


def synthetic_generate(spec: SyntheticSpec, seed: int) -> HeteroGraph:
    if spec.num_targets <= 0:
        raise ValueError("synthetic spec must declare at least one target node")
    rng = np.random.default_rng(seed)
    c = spec.num_classes

    node_types = [
        NodeType(spec.TARGET, 1, spec.feature_dim),
        NodeType(spec.MID, 1, spec.feature_dim),
        NodeType(spec.JUNK, 1, c),
    ]
    relations = []
    if spec.planted:
        node_types.insert(2, NodeType(spec.ATTR, 1, c))
        relations.extend([spec.PLANTED_FIRST_HOP, spec.PLANTED_SECOND_HOP])
    relations.extend([Relation("junk", "noise", "item"), Relation("junk", "chatter", "mid")])
    schema = Schema(node_types, relations, spec.TARGET, c)

    counts = {spec.TARGET: spec.num_targets, spec.MID: spec.num_mid, spec.JUNK: spec.num_junk}
    features = {
        name: rng.normal(size=(n, 1, spec.feature_dim)).astype(np.float32)
        for name, n in ((spec.TARGET, spec.num_targets), (spec.MID, spec.num_mid))
    }
    junk_fake = np.eye(c, dtype=np.float32)[rng.integers(0, c, size=spec.num_junk)]
    junk_noise = rng.normal(scale=spec.attr_noise, size=(spec.num_junk, c)).astype(np.float32)
    features[spec.JUNK] = (junk_fake + junk_noise).reshape(spec.num_junk, 1, c)
    edges: dict[Relation, np.ndarray] = {}

    if spec.planted:
        counts[spec.ATTR] = spec.num_attr
        attr_classes = np.arange(spec.num_attr, dtype=np.int64) % c
        mid_classes = np.arange(spec.num_mid, dtype=np.int64) % c
        item_classes = rng.integers(0, c, size=spec.num_targets)
        one_hot = np.eye(c, dtype=np.float32)[attr_classes]
        noise = rng.normal(scale=spec.attr_noise, size=(spec.num_attr, c)).astype(np.float32)
        features[spec.ATTR] = (one_hot + noise).reshape(spec.num_attr, 1, c)

        def coherent_pick(pool_classes: np.ndarray, want_class: int, count: int) -> list[int]:
            own = np.flatnonzero(pool_classes == want_class)
            picks = []
            for _ in range(count):
                if rng.random() < spec.coherence:
                    picks.append(int(rng.choice(own)))
                else:
                    picks.append(int(rng.integers(0, len(pool_classes))))
            return picks

        tags = np.array(
            [
                (a, m)
                for m in range(spec.num_mid)
                for a in coherent_pick(attr_classes, int(mid_classes[m]), spec.attrs_per_mid)
            ],
            dtype=np.int64,
        )
        of = np.array(
            [
                (m, t)
                for t in range(spec.num_targets)
                for m in coherent_pick(mid_classes, int(item_classes[t]), spec.mids_per_target)
            ],
            dtype=np.int64,
        )
        edges[spec.PLANTED_FIRST_HOP] = tags
        edges[spec.PLANTED_SECOND_HOP] = of

        attrs_of_mid: dict[int, list[int]] = {}
        for a, m in tags:
            attrs_of_mid.setdefault(int(m), []).append(int(a))
        labels = np.zeros(spec.num_targets, dtype=np.int64)
        for t in range(spec.num_targets):
            hist = np.zeros(c, dtype=np.int64)
            for m, tt in of[of[:, 1] == t]:
                for a in attrs_of_mid.get(int(m), []):
                    hist[attr_classes[a]] += 1
            labels[t] = int(np.argmax(hist))
    else:
        labels = rng.integers(0, c, size=spec.num_targets)

    edges[Relation("junk", "noise", "item")] = np.array(
        [
            (j, t)
            for t in range(spec.num_targets)
            for j in rng.choice(spec.num_junk, size=spec.junk_per_target, replace=False)
        ],
        dtype=np.int64,
    )
    edges[Relation("junk", "chatter", "mid")] = np.array(
        [
            (j, m)
            for m in range(spec.num_mid)
            for j in rng.choice(spec.num_junk, size=spec.junk_per_mid, replace=False)
        ],
        dtype=np.int64,
    )

    perm = rng.permutation(spec.num_targets)
    n_train = int(spec.split_fractions[0] * spec.num_targets)
    n_valid = int(spec.split_fractions[1] * spec.num_targets)
    splits = {
        "train": perm[:n_train],
        "valid": perm[n_train: n_train + n_valid],
        "test": perm[n_train + n_valid:],
    }
    return HeteroGraph(
        schema=schema,
        counts=counts,
        features=features,
        edges=edges,
        labels=labels,
        labeled_mask=np.ones(spec.num_targets, dtype=bool),
        splits=splits,
    )


# ---------------------------------------------------------------------------
# budgeted subgraph sampling


def sample_subgraph(
    graph: HeteroGraph,
    batch_targets: np.ndarray,
    depth: int,
    budget: int,
    seed: int,
) -> Subgraph:
    """Importance-style budgeted frontier expansion around a target batch.

    For ``depth`` rounds, each relation's sources feeding the current frontier
    become candidates; per node type at most ``budget`` new nodes are kept per
    round, sampled with probability proportional to their edge count into the
    frontier. The returned subgraph is induced on everything selected.
    """
    if depth < 1 or budget < 1:
        raise ValueError("depth and budget must be at least 1")
    schema = graph.schema
    batch = np.unique(np.asarray(batch_targets, dtype=np.int64))
    n_target = graph.counts[schema.target_type]
    if batch.size == 0 or batch.min() < 0 or batch.max() >= n_target:
        raise ValueError(f"batch targets must be ids of type {schema.target_type!r}")
    rng = np.random.default_rng(seed)

    selected = {name: np.zeros(n, dtype=bool) for name, n in graph.counts.items()}
    selected[schema.target_type][batch] = True
    frontier: dict[str, np.ndarray] = {schema.target_type: batch}

    for _ in range(depth):
        weights: dict[str, np.ndarray] = {}
        for rel in schema.relations:
            targets = frontier.get(rel.dst)
            if targets is None or targets.size == 0:
                continue
            view = graph.bipartite(rel)
            chunks = [view.src[view.indptr[t]: view.indptr[t + 1]] for t in targets]
            sources = np.concatenate(chunks) if chunks else np.zeros(0, dtype=np.int64)
            if sources.size == 0:
                continue
            w = weights.setdefault(rel.src, np.zeros(graph.counts[rel.src], dtype=np.float64))
            np.add.at(w, sources, 1.0)
        next_frontier: dict[str, np.ndarray] = {}
        for name in schema.type_names():
            w = weights.get(name)
            if w is None:
                continue
            w[selected[name]] = 0.0
            candidates = np.flatnonzero(w)
            if candidates.size == 0:
                continue
            if candidates.size > budget:
                p = w[candidates] / w[candidates].sum()
                candidates = np.sort(rng.choice(candidates, size=budget, replace=False, p=p))
            selected[name][candidates] = True
            next_frontier[name] = candidates
        frontier = next_frontier
        if not frontier:
            break

    node_ids = {name: np.flatnonzero(mask) for name, mask in selected.items()}
    counts = {name: int(ids.size) for name, ids in node_ids.items()}
    features = {name: graph.features[name][ids] for name, ids in node_ids.items()}
    edges: dict[Relation, np.ndarray] = {}
    for rel in schema.relations:
        pairs = graph.edges[rel]
        if pairs.size == 0:
            edges[rel] = np.zeros((0, 2), dtype=np.int64)
            continue
        keep = selected[rel.src][pairs[:, 0]] & selected[rel.dst][pairs[:, 1]]
        kept = pairs[keep]
        local = np.empty_like(kept)
        local[:, 0] = np.searchsorted(node_ids[rel.src], kept[:, 0])
        local[:, 1] = np.searchsorted(node_ids[rel.dst], kept[:, 1])
        edges[rel] = local

    target_ids = node_ids[schema.target_type]
    sub = HeteroGraph(
        schema=schema,
        counts=counts,
        features=features,
        edges=edges,
        labels=graph.labels[target_ids],
        labeled_mask=graph.labeled_mask[target_ids],
        splits={},
        orig_ids={name: graph.orig_ids[name][ids] for name, ids in node_ids.items()},
        parent_counts=dict(graph.parent_counts),
    )
    batch_local = np.searchsorted(target_ids, batch)
    return Subgraph(graph=sub, node_ids=node_ids, batch_local=batch_local, batch_original=batch)
