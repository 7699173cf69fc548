import math

import numpy as np
import pytest

from slotgnn import tensor as T
from slotgnn.config import TrainConfig
from slotgnn.fixtures import GRADCHECK_SEED, gradcheck_graph
from slotgnn.fusion import FusionParams, classify, f1_metrics, loss as head_loss, predict
from slotgnn.graph import SyntheticSpec, synthetic_generate
from slotgnn.training import (
    AdamW,
    OptimizerError,
    evaluate,
    grad_check_model,
    init_model,
    onecycle_lr,
    set_seed,
    train,
)


def small_planted(seed=0):
    return synthetic_generate(
        SyntheticSpec(num_targets=120, num_mid=60, num_attr=20, num_junk=20), seed=seed
    )


def quick_cfg(**kw):
    base = dict(dim=16, heads=4, layers=2, dropout=0.2, epochs=8, max_lr=0.005, seed=0)
    base.update(kw)
    return TrainConfig(**base)


class TestAdamW:
    def make_param(self, value=1.0):
        with T.precision("float64"):
            return T.Tensor(np.array([[value]]), requires_grad=True, name="w")

    def test_zero_gradient_no_decay_is_identity(self):
        p = self.make_param(3.0)
        opt = AdamW([("w", p)], weight_decay=0.0)
        p.grad = np.zeros_like(p.data)
        opt.step(lr=0.1)
        assert p.data[0, 0] == 3.0

    def test_zero_gradient_decay_only(self):
        p = self.make_param(2.0)
        opt = AdamW([("w", p)], weight_decay=0.5)
        p.grad = np.zeros_like(p.data)
        opt.step(lr=0.1)
        assert abs(p.data[0, 0] - 2.0 * (1 - 0.1 * 0.5)) < 1e-15

    def test_single_step_closed_form(self):
        p = self.make_param(1.0)
        opt = AdamW([("w", p)], beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0)
        p.grad = np.ones_like(p.data)
        opt.step(lr=0.1)
        m_hat = (0.1 * 1.0) / (1 - 0.9)
        v_hat = (0.001 * 1.0) / (1 - 0.999)
        want = 1.0 - 0.1 * m_hat / (math.sqrt(v_hat) + 1e-8)
        assert abs(p.data[0, 0] - want) < 1e-12

    def test_lr_zero_is_identity(self):
        p = self.make_param(1.5)
        opt = AdamW([("w", p)], weight_decay=0.01)
        p.grad = np.full_like(p.data, 2.0)
        opt.step(lr=0.0)
        assert p.data[0, 0] == 1.5

    def test_nan_gradient_names_parameter(self):
        p = self.make_param()
        opt = AdamW([("w", p)])
        p.grad = np.array([[np.nan]])
        with pytest.raises(OptimizerError, match="'w'"):
            opt.step(lr=0.1)


class TestOneCycle:
    def test_peak_is_max_lr(self):
        total = 100
        peak = max(onecycle_lr(s, total, 0.0005) for s in range(total + 1))
        assert abs(peak - 0.0005) < 1e-12

    def test_step_zero_is_max_over_div(self):
        assert abs(onecycle_lr(0, 100, 0.0005) - 0.0005 / 25) < 1e-15

    def test_final_step_is_max_over_final_div(self):
        assert abs(onecycle_lr(100, 100, 0.0005) - 0.0005 / 1e4) < 1e-15

    def test_warmup_midpoint_matches_closed_form(self):
        total, max_lr, frac, div = 200, 0.0005, 0.3, 25.0
        mid = frac * total / 2
        got = onecycle_lr(int(mid), total, max_lr, frac, div)
        initial = max_lr / div
        t = int(mid) / (frac * total)
        want = initial + (max_lr - initial) * (1 - math.cos(math.pi * t)) / 2
        assert abs(got - want) < 1e-15

    def test_zero_total_steps_rejected(self):
        with pytest.raises(ValueError):
            onecycle_lr(0, 0, 0.001)


class TestSetSeed:
    def test_same_seed_same_init(self):
        a = set_seed(7).generator("init").normal(size=10)
        b = set_seed(7).generator("init").normal(size=10)
        assert np.array_equal(a, b)

    def test_named_streams_decorrelated(self):
        streams = set_seed(7)
        a = streams.generator("init").integers(0, 2 ** 32, size=64)
        b = streams.generator("sampler").integers(0, 2 ** 32, size=64)
        assert not np.array_equal(a, b)

    def test_seed_recorded_in_result(self):
        g = gradcheck_graph()
        cfg = quick_cfg(dim=8, heads=2, epochs=1, seed=123, dropout=0.0)
        model = init_model(g, cfg)
        result = train(model, g, cfg)
        assert result.seed == 123


class TestTrain:
    def test_initial_loss_near_log_c(self):
        g = small_planted()
        cfg = quick_cfg(epochs=1, dropout=0.0, max_lr=1e-9)
        model = init_model(g, cfg)
        result = train(model, g, cfg)
        assert abs(result.log[0]["loss"] - math.log(4)) / math.log(4) < 0.05

    def test_bit_identical_reruns(self):
        g = small_planted()
        cfg = quick_cfg(epochs=4)
        runs = []
        for _ in range(2):
            model = init_model(g, cfg)
            result = train(model, g, cfg)
            metrics = evaluate(model, g, "test")
            runs.append((result.log, metrics))
        assert runs[0] == runs[1]

    def test_loss_window_minima_do_not_increase(self):
        # dropout off: the full-batch loop is then noise-free and the
        # windowed minima must be monotone, ruling out divergence
        g = small_planted()
        cfg = quick_cfg(epochs=60, dropout=0.0)
        model = init_model(g, cfg)
        result = train(model, g, cfg)
        losses = [e["loss"] for e in result.log]
        minima = [min(losses[i: i + 20]) for i in range(0, 60, 20)]
        for earlier, later in zip(minima, minima[1:]):
            assert later <= earlier + 1e-9
        assert losses[-1] < 0.5 * losses[0]

    def test_divergence_aborts_and_restores_finite_state(self):
        g = small_planted()
        cfg = quick_cfg(epochs=6, max_lr=1e12, lr_div=1.0, dropout=0.0)
        model = init_model(g, cfg)
        result = train(model, g, cfg)
        assert result.diverged
        for _, p in model.named_parameters():
            assert np.all(np.isfinite(p.data))

    def test_early_stopping(self):
        g = small_planted()
        cfg = quick_cfg(epochs=40, early_stop_patience=3, max_lr=1e-9, dropout=0.0)
        model = init_model(g, cfg)
        result = train(model, g, cfg)
        assert result.stopped_early
        assert len(result.log) < 40

    def test_sampled_full_coverage_equals_full_batch(self):
        g = small_planted()
        n_train = g.splits["train"].size
        full_cfg = quick_cfg(epochs=3, dropout=0.3)
        model_full = init_model(g, full_cfg)
        res_full = train(model_full, g, full_cfg)
        total_nodes = sum(g.counts.values())
        sampled_cfg = full_cfg.replace(
            batch_mode="sampled",
            batch_size=n_train,
            batches_per_epoch=1,
            sample_budget=total_nodes,
            sample_depth=4,
        )
        model_sampled = init_model(g, sampled_cfg)
        res_sampled = train(model_sampled, g, sampled_cfg)
        assert [e["loss"] for e in res_full.log] == [e["loss"] for e in res_sampled.log]
        m_full = evaluate(model_full, g, "test")
        m_sampled = evaluate(model_sampled, g, "test")
        assert m_full == m_sampled

    def test_sampled_mode_runs_with_budget(self):
        g = small_planted()
        cfg = quick_cfg(
            epochs=2, batch_mode="sampled", batch_size=16, batches_per_epoch=3, sample_budget=30
        )
        model = init_model(g, cfg)
        result = train(model, g, cfg)
        assert len(result.log) == 2


class TestEvaluate:
    def test_deterministic(self):
        g = small_planted()
        cfg = quick_cfg(epochs=2)
        model = init_model(g, cfg)
        train(model, g, cfg)
        assert evaluate(model, g, "test") == evaluate(model, g, "test")

    def test_single_node_split(self):
        g = small_planted()
        cfg = quick_cfg(epochs=1)
        model = init_model(g, cfg)
        metrics = evaluate(model, g, g.splits["test"][:1])
        for key in ("micro_f1", "macro_f1", "accuracy"):
            assert metrics[key] in (0.0, 1.0) or 0 <= metrics[key] <= 1

    def test_empty_split_rejected(self):
        g = small_planted()
        model = init_model(g, quick_cfg())
        with pytest.raises(ValueError):
            evaluate(model, g, np.array([], dtype=np.int64))

    def test_matches_f1_metrics_on_dumped_predictions(self):
        g = small_planted()
        cfg = quick_cfg(epochs=3)
        model = init_model(g, cfg)
        train(model, g, cfg)
        ids = g.splits["valid"]
        metrics = evaluate(model, g, "valid")
        with T.precision(cfg.precision):
            out = model.forward(g, training=False)
        preds = predict(out.logits.data[ids])
        direct = f1_metrics(preds, g.labels[ids], g.schema.num_classes)
        assert metrics["micro_f1"] == direct.micro_f1
        assert metrics["macro_f1"] == direct.macro_f1
        assert metrics["accuracy"] == direct.accuracy


class TestGradCheckModel:
    @pytest.fixture(scope="class")
    def fixture_model(self):
        g = gradcheck_graph()
        cfg = TrainConfig(
            dim=8, heads=2, layers=2, dropout=0.0, epochs=1,
            precision="float64", seed=GRADCHECK_SEED,
        )
        return g, init_model(g, cfg)

    def test_all_groups_pass(self, fixture_model):
        g, model = fixture_model
        report = grad_check_model(model, g)
        assert max(report.values()) < 1e-4

    def test_requires_float64(self):
        g = gradcheck_graph()
        model = init_model(g, quick_cfg(dim=8, heads=2, precision="float32"))
        with pytest.raises(ValueError, match="float64"):
            grad_check_model(model, g)

    def test_classifier_only_is_tightly_convex(self):
        with T.precision("float64"):
            rng = np.random.default_rng(0)
            params = FusionParams.create(8, 2, 2, rng)
            fused = T.Tensor(rng.normal(size=(6, 8)))
            labels = rng.integers(0, 2, size=6)

            def f():
                return head_loss(classify(fused, params), labels)

            for p in (params.classifier_weight, params.classifier_bias):
                assert T.finite_diff_check(f, [p]) < 1e-8

    def test_corrupted_backward_rule_is_detected(self, monkeypatch):
        import slotgnn.tensor as tensor_mod

        true_matmul = tensor_mod.matmul

        def corrupted(a, b):
            if b.ndim != 2 or a.ndim not in (2, 3):
                return true_matmul(a, b)
            k, n = b.shape

            def back(g):
                ga = g @ b.data.T * 1.05  # deliberately wrong scale
                gb = a.data.reshape(-1, k).T @ g.reshape(-1, n)
                return ga, gb

            return tensor_mod._make(a.data @ b.data, (a, b), back)

        g = gradcheck_graph()
        cfg = TrainConfig(
            dim=8, heads=2, layers=1, dropout=0.0, epochs=1,
            precision="float64", seed=GRADCHECK_SEED,
        )
        model = init_model(g, cfg)
        monkeypatch.setattr(tensor_mod, "matmul", corrupted)
        report = grad_check_model(model, g)
        assert max(report.values()) > 1e-2
