import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from motifsnn.autodiff import Tensor, backward, finite_difference_gradient, mul, total
from motifsnn.data import generate_split, rate_encode
from motifsnn.models import build_model, model_to_dict
from motifsnn.train import (
    Adam,
    AdamState,
    ArmResult,
    EpochRecord,
    History,
    SweepFailed,
    TrainConfig,
    TrainingDiverged,
    adam_step,
    select_arm,
    spike_count_loss,
    sweep_and_select,
    train_model,
)


def tiny_splits():
    return {"training": generate_split(60, 1), "validation": generate_split(30, 2, name="validation")}


def tiny_cfg(**kw):
    base = dict(epochs=2, batch_size=20, steps=10, micro_batch=8, eval_batch_size=16)
    base.update(kw)
    return TrainConfig(**base)


def counts_as_output(counts, steps=1):
    """A (T*B, C) readout whose time sum equals ``counts``."""
    counts = np.atleast_2d(np.asarray(counts, dtype=float))
    return Tensor(np.concatenate([counts / steps] * steps), requires_grad=True)


class TestLoss:
    def test_symmetric_counts(self):
        for label in range(3):
            assert spike_count_loss(counts_as_output([10, 10, 10]), [label], 1).item() == pytest.approx(math.log(3))

    def test_saturated_limit(self):
        assert spike_count_loss(counts_as_output([60, 0, 0]), [0], 1).item() < 1e-20

    def test_counts_sum_over_time(self):
        out = counts_as_output([[4.0, 2.0, 0.0]], steps=4)
        direct = spike_count_loss(counts_as_output([4.0, 2.0, 0.0]), [1], 1).item()
        assert spike_count_loss(out, [1], 4).item() == pytest.approx(direct)

    def test_bad_label(self):
        with pytest.raises(ValueError):
            spike_count_loss(counts_as_output([1, 2, 3]), [3], 1)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        labels = rng.integers(0, 3, size=5)
        x0 = rng.normal(size=(5 * 4, 3))

        def f(t):
            return spike_count_loss(t, labels, 4)

        x = Tensor(x0, requires_grad=True)
        backward(f(x))
        fd = finite_difference_gradient(f, Tensor(x0)).values
        np.testing.assert_allclose(x.grad, fd, rtol=1e-5, atol=1e-9)

    @given(st.permutations([0, 1, 2]), st.integers(0, 2**31 - 1))
    def test_class_relabeling(self, perm, seed):
        rng = np.random.default_rng(seed)
        counts = rng.integers(0, 30, size=(6, 3)).astype(float)
        labels = rng.integers(0, 3, size=6)
        perm = np.asarray(perm)
        inverse = np.argsort(perm)
        a = spike_count_loss(counts_as_output(counts), labels, 1).item()
        b = spike_count_loss(counts_as_output(counts[:, inverse]), perm[labels], 1).item()
        assert a == pytest.approx(b, rel=1e-12)

    def test_membrane_variant(self):
        out = Tensor(np.zeros((2 * 3, 3)))
        assert spike_count_loss(out, [0, 1, 2], 2, loss="membrane").item() == pytest.approx(math.log(3))


class TestAdam:
    def test_first_step_by_hand(self):
        (p,), state = adam_step([np.array([1.0])], [np.array([1.0])], AdamState.zeros_like([np.zeros(1)]), 0.003)
        assert p[0] == pytest.approx(1.0 - 0.003 / (1 + 1e-8), abs=1e-15)
        assert state.step == 1

    def test_zero_gradient_leaves_params(self):
        p0 = np.array([[0.5, -2.0]])
        (p,), _ = adam_step([p0], [np.zeros_like(p0)], AdamState.zeros_like([p0]), 0.1)
        np.testing.assert_array_equal(p, p0)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            adam_step([np.zeros(2)], [np.zeros(3)], AdamState.zeros_like([np.zeros(2)]), 0.1)

    @settings(max_examples=30)
    @given(st.integers(0, 2**31 - 1))
    def test_odd_symmetry(self, seed):
        rng = np.random.default_rng(seed)
        grads = [rng.normal(size=(3, 2)) for _ in range(4)]
        p_pos, p_neg = [np.zeros((3, 2))], [np.zeros((3, 2))]
        s_pos = AdamState.zeros_like(p_pos)
        s_neg = AdamState.zeros_like(p_neg)
        for g in grads:
            p_pos, s_pos = adam_step(p_pos, [g], s_pos, 0.01)
            p_neg, s_neg = adam_step(p_neg, [-g], s_neg, 0.01)
        np.testing.assert_allclose(p_pos[0], -p_neg[0], rtol=0, atol=0)

    def test_minimizes_quadratic(self):
        x = Tensor(np.array([[3.0, -2.0]]), requires_grad=True)
        opt = Adam([x], 0.1)
        for _ in range(300):
            opt.zero_grad()
            backward(total(mul(x, x)))
            opt.step()
        assert np.abs(x.values).max() < 0.05


class TestTrainModel:
    def test_zero_epochs(self):
        m = build_model("mlp", (4, 8, 3), np.random.default_rng(0))
        before = model_to_dict(m)
        _, hist = train_model(m, tiny_splits(), tiny_cfg(epochs=0), 0.01, seed=0)
        assert len(hist) == 0
        assert model_to_dict(m) == before

    @pytest.mark.parametrize("family", ["mlp", "mlp-hw-aware", "cm"])
    def test_bit_reproducible(self, family):
        runs = []
        for _ in range(2):
            m = build_model(family, (4, 8, 3), np.random.default_rng(3), genes=3)
            _, hist = train_model(m, tiny_splits(), tiny_cfg(), 0.01, seed=5, val_seed=6)
            runs.append((hist.to_list(), model_to_dict(m)))
        assert runs[0] == runs[1]

    def test_history_fields(self):
        m = build_model("mlp", (4, 8, 3), np.random.default_rng(0))
        _, hist = train_model(m, tiny_splits(), tiny_cfg(epochs=3), 0.01, seed=0)
        assert [r.epoch for r in hist.records] == [1, 2, 3]
        assert all(0 <= r.val_acc <= 1 for r in hist.records)
        assert hist.to_csv().splitlines()[0] == "epoch,train_loss,val_loss,val_acc"
        assert History.from_list(hist.to_list()) == hist

    def test_micro_batching_leaves_gradient_unchanged(self):
        # one batch trained with different chunkings must land on the same weights
        finals = []
        for micro in (4, 20):
            m = build_model("mlp", (4, 8, 3), np.random.default_rng(1))
            train_model(m, tiny_splits(), tiny_cfg(epochs=1, micro_batch=micro, batch_size=60), 0.01, seed=2)
            finals.append([w.values for w in m.weights()])
        for a, b in zip(*finals):
            np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-13)

    def test_cm_updates_only_genome(self):
        m = build_model("cm", (4, 8, 3), np.random.default_rng(0), genes=3)
        params = m.parameters()
        assert {p.shape for p in params} == {(4, 3), (8, 3), (3, 3)}
        assert all(p.requires_grad for p in params)
        assert not any(w.requires_grad and w.op == "leaf" for w in m.weights())

    def test_divergence_is_reported(self):
        m = build_model("mlp", (4, 8, 3), np.random.default_rng(0))
        m.parameters()[0].values[:] = np.nan
        with pytest.raises(TrainingDiverged, match="epoch 1"):
            train_model(m, tiny_splits(), tiny_cfg(), 0.01, seed=0)

    def test_loss_decreases_on_frozen_batch(self):
        rng = np.random.default_rng(0)
        split = generate_split(64, 3)
        x = rate_encode(split.features, 20, rng)
        from motifsnn.snn import forward

        decreased = []
        for lr in TrainConfig().learning_rates:
            m = build_model("mlp", (4, 32, 3), np.random.default_rng(1))
            opt = Adam(m.parameters(), lr)
            losses = []
            for _ in range(10):
                opt.zero_grad()
                loss = spike_count_loss(forward(m, x), split.labels, 20)
                losses.append(loss.item())
                backward(loss)
                opt.step()
            decreased.append(losses[-1] < losses[0])
        assert any(decreased)


class TestSelection:
    def _arm(self, lr, loss):
        return ArmResult(lr, object(), History([EpochRecord(1, 0.0, loss, 0.0)]))

    def test_argmin(self):
        arms = [self._arm(0.03, 0.4), self._arm(0.003, 0.2), self._arm(0.0003, 0.9)]
        assert select_arm(arms).lr == 0.003

    def test_tie_goes_to_smaller_lr(self):
        arms = [self._arm(0.03, 0.2), self._arm(0.003, 0.2), self._arm(0.0003, 0.2)]
        assert select_arm(arms).lr == 0.0003

    def test_failed_arms_skipped(self):
        arms = [ArmResult(0.03, None, None, "diverged"), self._arm(0.003, 0.5)]
        assert select_arm(arms).lr == 0.003

    def test_all_failed(self):
        with pytest.raises(SweepFailed, match="lr=0.03: diverged"):
            select_arm([ArmResult(0.03, None, None, "diverged")])

    def test_single_lr_sweep(self):
        factory = lambda: build_model("mlp", (4, 8, 3), np.random.default_rng(0))
        best, arms = sweep_and_select(factory, tiny_splits(), tiny_cfg(epochs=1), [0.01])
        assert len(arms) == 1 and best is arms[0]

    def test_empty_sweep(self):
        with pytest.raises(ValueError):
            sweep_and_select(lambda: None, tiny_splits(), tiny_cfg(), [])


class TestConfig:
    def test_defaults(self):
        cfg = TrainConfig()
        assert (cfg.epochs, cfg.batch_size, cfg.steps) == (300, 512, 100)
        assert cfg.learning_rates == (0.03, 0.003, 0.0003)
        assert cfg.lif().beta == pytest.approx(0.9)

    def test_round_trip_and_unknown_keys(self):
        cfg = TrainConfig(epochs=7)
        assert TrainConfig.from_dict(cfg.to_dict()) == cfg
        with pytest.raises(ValueError, match="bogus"):
            TrainConfig.from_dict({"bogus": 1})

    def test_bad_loss(self):
        with pytest.raises(ValueError):
            TrainConfig(loss="hinge")
