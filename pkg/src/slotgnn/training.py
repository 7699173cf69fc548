"""Optimization, training/evaluation loops, model-level gradient checking."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .config import TrainConfig
from .fusion import f1_metrics, loss as head_loss, predict
from .graph import HeteroGraph, sample_subgraph
from .model import SlotModel


class OptimizerError(Exception):
    pass


def _stream_key(name: str) -> int:
    return int.from_bytes(hashlib.sha256(name.encode()).digest()[:8], "big")


@dataclass
class RngStreams:
    """Named random streams derived from one seed as (seed, sha256(name))."""

    seed: int

    def generator(self, name: str) -> np.random.Generator:
        return np.random.default_rng([self.seed, _stream_key(name)])

    @property
    def dropout_root(self) -> tuple[int, int]:
        return (self.seed, _stream_key("dropout"))


def set_seed(seed: int) -> RngStreams:
    return RngStreams(int(seed))


def init_model(graph: HeteroGraph, config: TrainConfig) -> SlotModel:
    """Build a model whose parameters come from the seed's init stream."""
    streams = set_seed(config.seed)
    with T.precision(config.precision):
        return SlotModel(graph.schema, config, streams.generator("init"))


class AdamW:
    """Adam with decoupled weight decay applied before the moment update."""

    def __init__(
        self,
        named_params: list[tuple[str, T.Tensor]],
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 0.01,
    ):
        self.params = list(named_params)
        self.beta1, self.beta2, self.eps, self.weight_decay = beta1, beta2, eps, weight_decay
        self.m = [np.zeros_like(p.data) for _, p in self.params]
        self.v = [np.zeros_like(p.data) for _, p in self.params]
        self.t = 0

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for i, (name, p) in enumerate(self.params):
            g = p.grad
            if g is not None and not np.all(np.isfinite(g)):
                raise OptimizerError(f"non-finite gradient in parameter {name!r}")
            if self.weight_decay:
                p.data = p.data * (1.0 - lr * self.weight_decay)
            if g is None:
                g = np.zeros_like(p.data)
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g
            m_hat = self.m[i] / c1
            v_hat = self.v[i] / c2
            p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + self.eps)


def onecycle_lr(
    step: int,
    total_steps: int,
    max_lr: float,
    start_fraction: float = 0.3,
    div: float = 25.0,
    final_div: float = 1e4,
) -> float:
    """Cosine warmup from max_lr/div to max_lr, then cosine anneal to
    max_lr/final_div."""
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    warmup = start_fraction * total_steps
    initial = max_lr / div
    final = max_lr / final_div
    if warmup > 0 and step <= warmup:
        t = step / warmup
        return initial + (max_lr - initial) * (1.0 - math.cos(math.pi * t)) / 2.0
    if warmup >= total_steps:
        return max_lr
    t = (step - warmup) / (total_steps - warmup)
    return final + (max_lr - final) * (1.0 + math.cos(math.pi * t)) / 2.0


@dataclass
class TrainResult:
    log: list[dict] = field(default_factory=list)
    seed: int = 0
    diverged: bool = False
    stopped_early: bool = False


def _split_ids(graph: HeteroGraph, split) -> np.ndarray:
    if isinstance(split, str):
        ids = graph.splits.get(split)
        if ids is None:
            raise KeyError(f"graph has no split {split!r}")
    else:
        ids = np.sort(np.asarray(split, dtype=np.int64))
    if ids.size == 0:
        raise ValueError("empty split")
    return ids


def evaluate(model: SlotModel, graph: HeteroGraph, split) -> dict[str, float]:
    """Deterministic metrics on one split: micro/macro F1, accuracy, mean loss."""
    ids = _split_ids(graph, split)
    multilabel = graph.schema.multilabel
    with T.precision(model.config.precision):
        out = model.forward(graph, training=False)
        rows = T.gather(out.logits, ids)
        mean_loss = head_loss(rows, graph.labels[ids], multilabel).item()
    preds = predict(rows.data, multilabel)
    metrics = f1_metrics(preds, graph.labels[ids], graph.schema.num_classes, multilabel)
    result = metrics.to_dict()
    result["loss"] = mean_loss
    return result


def _train_step(model, graph, local_ids, labels, lr, opt, dropout_seed, multilabel) -> float:
    opt.zero_grad()
    with T.Tape() as tape:
        out = model.forward(graph, training=True, dropout_seed=dropout_seed)
        batch_loss = head_loss(T.gather(out.logits, local_ids), labels, multilabel)
        tape.backward(batch_loss)
    opt.step(lr)
    return batch_loss.item()


def train(model: SlotModel, graph: HeteroGraph, config: TrainConfig) -> TrainResult:
    """Run the configured loop; deterministic for a fixed seed.

    On divergence (non-finite loss or gradient) the parameters are restored
    to the start of the failing epoch and the result is marked diverged.
    """
    config.validate()
    streams = set_seed(config.seed)
    sampler_rng = streams.generator("sampler")
    droot = streams.dropout_root
    opt = AdamW(
        model.named_parameters(),
        beta1=config.beta1,
        beta2=config.beta2,
        eps=config.eps,
        weight_decay=config.weight_decay,
    )
    train_ids = _split_ids(graph, "train")
    multilabel = graph.schema.multilabel
    full = config.batch_mode == "full"
    steps_per_epoch = 1 if full else config.batches_per_epoch
    total_steps = config.epochs * steps_per_epoch

    result = TrainResult(seed=config.seed)
    best_val = -math.inf
    stall = 0
    step = 0
    with T.precision(config.precision):
        for epoch in range(1, config.epochs + 1):
            snapshot = [p.data.copy() for _, p in opt.params]
            losses = []
            try:
                if full:
                    lr = onecycle_lr(
                        step, total_steps, config.max_lr,
                        config.start_fraction, config.lr_div, config.lr_final_div,
                    )
                    losses.append(
                        _train_step(
                            model, graph, train_ids, graph.labels[train_ids],
                            lr, opt, (*droot, step), multilabel,
                        )
                    )
                    step += 1
                else:
                    for _ in range(config.batches_per_epoch):
                        size = min(config.batch_size, train_ids.size)
                        batch = sampler_rng.choice(train_ids, size=size, replace=False)
                        sub_seed = int(sampler_rng.integers(0, 2 ** 62))
                        sub = sample_subgraph(
                            graph, batch, config.sample_depth, config.sample_budget, sub_seed
                        )
                        lr = onecycle_lr(
                            step, total_steps, config.max_lr,
                            config.start_fraction, config.lr_div, config.lr_final_div,
                        )
                        losses.append(
                            _train_step(
                                model, sub.graph, sub.batch_local,
                                sub.graph.labels[sub.batch_local],
                                lr, opt, (*droot, step), multilabel,
                            )
                        )
                        step += 1
                entry = {"epoch": epoch, "loss": float(np.mean(losses)), "lr": lr}
                try:
                    val = evaluate(model, graph, "valid")
                    entry["val_micro_f1"] = val["micro_f1"]
                    entry["val_macro_f1"] = val["macro_f1"]
                except (KeyError, ValueError):
                    entry["val_micro_f1"] = math.nan
                    entry["val_macro_f1"] = math.nan
            except (T.NonFiniteError, OptimizerError):
                for (_, p), saved in zip(opt.params, snapshot):
                    p.data = saved
                result.diverged = True
                break
            result.log.append(entry)

            if config.early_stop_patience > 0 and not math.isnan(entry["val_micro_f1"]):
                if entry["val_micro_f1"] > best_val:
                    best_val = entry["val_micro_f1"]
                    stall = 0
                else:
                    stall += 1
                    if stall >= config.early_stop_patience:
                        result.stopped_early = True
                        break
    return result


def grad_check_model(model: SlotModel, graph: HeteroGraph, h: float = 1e-5) -> dict[str, float]:
    """Finite-difference check of every parameter group on a small graph.

    Requires a model built in float64 with dropout effectively off (the loss
    is evaluated in inference mode). Returns the worst relative error per
    named parameter.
    """
    if model.config.precision != "float64":
        raise ValueError("grad_check_model requires a float64 model")
    ids = _split_ids(graph, "train")
    multilabel = graph.schema.multilabel

    def f() -> T.Tensor:
        with T.precision("float64"):
            out = model.forward(graph, training=False)
            return head_loss(T.gather(out.logits, ids), graph.labels[ids], multilabel)

    report: dict[str, float] = {}
    for name, p in model.named_parameters():
        report[name] = T.finite_diff_check(f, [p], h=h)
    return report
