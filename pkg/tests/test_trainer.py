from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import pytest

from bearing_vit import vit
from bearing_vit.autodiff import Tensor
from bearing_vit.errors import DivergedLoss, EmptyTrainSet, ShapeMismatch
from bearing_vit.evaluator import accuracy
from bearing_vit.trainer import (
    AdamState,
    ImageSet,
    TrainConfig,
    TrainHistory,
    adam_step,
    evaluate_epoch,
    load_training_checkpoint,
    predict_logits,
    save_training_checkpoint,
    train,
)
from bearing_vit.vit import ViT, ViTConfig

from oracles import adam_reference

TINY = ViTConfig(height=8, width=8, patch=4, dim=8, depth=1, heads=2, mlp_dim=16, num_classes=2)


def _toy_set(n: int = 8, seed: int = 0) -> ImageSet:
    """Two linearly separable classes: bright top half versus bright bottom half."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 2
    images = rng.normal(scale=0.1, size=(n, 8, 8, 1))
    images[labels == 0, :4] += 1.0
    images[labels == 1, 4:] += 1.0
    return ImageSet(images, labels)


class TestAdam:
    def test_zero_gradient_is_no_op(self):
        p = {"w": Tensor(np.array([1.0, -2.0]))}
        adam_step(p, {"w": np.zeros(2)}, AdamState(), 0.1)
        assert p["w"].data.tolist() == [1.0, -2.0]

    def test_first_step_closed_form(self):
        g = np.array([0.5, -3.0, 1e-3])
        theta = np.array([1.0, 2.0, 3.0])
        p = {"w": Tensor(theta.copy())}
        lr, eps = 1e-2, 1e-8
        adam_step(p, {"w": g}, AdamState(), lr, 0.9, 0.999, eps)
        expected = theta - lr * g / (np.abs(g) + eps)
        assert np.max(np.abs(p["w"].data - expected)) < 1e-15

    def test_against_scalar_reference(self):
        grads = [0.3, -1.2, 0.7, 2.0, -0.05]
        p = {"w": Tensor(np.array([0.25]))}
        state = AdamState()
        got = []
        for g in grads:
            adam_step(p, {"w": np.array([g])}, state, 0.01, 0.9, 0.999, 1e-8)
            got.append(float(p["w"].data[0]))
        want = adam_reference(0.25, grads, 0.01, 0.9, 0.999, 1e-8)
        assert max(abs(a - b) for a, b in zip(got, want)) < 1e-12
        assert state.t == len(grads)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            adam_step({"w": Tensor(np.zeros(3))}, {"w": np.zeros(2)}, AdamState(), 0.1)

    def test_state_round_trip(self):
        state = AdamState.zeros_like({"a": np.zeros((2, 3)), "b": np.zeros(4)})
        state.m["a"][:] = 1.5
        state.v["b"][:] = 0.25
        state.t = 17
        back, end = AdamState.from_bytes(state.to_bytes())
        assert back.t == 17 and end == len(state.to_bytes())
        assert all(np.array_equal(back.m[k], state.m[k]) and np.array_equal(back.v[k], state.v[k]) for k in "ab")


class TestTrain:
    def test_zero_epochs_leaves_model_unchanged(self):
        model = ViT(TINY)
        before = model.state_dict()
        _, hist = train(model, _toy_set(), None, TrainConfig(epochs=0))
        assert len(hist) == 0
        assert all(before[k].tobytes() == v.tobytes() for k, v in model.state_dict().items())

    def test_overfits_small_set(self):
        model = ViT(TINY)
        data = _toy_set()
        # one batch per epoch, so 300 epochs are 300 Adam steps
        _, hist = train(model, data, None, TrainConfig(epochs=300, batch_size=8, lr=3e-3, early_stop_patience=0))
        steps_to_target = next(i + 1 for i, loss in enumerate(hist.train_loss) if loss < 0.01)
        assert steps_to_target <= 300
        assert hist.train_acc[-1] == 100.0

    def test_deterministic(self):
        def run():
            model = ViT(TINY)
            _, hist = train(model, _toy_set(), _toy_set(seed=1), TrainConfig(epochs=3, batch_size=3, lr=1e-3, seed=4))
            return model.state_dict(), hist

        (s1, h1), (s2, h2) = run(), run()
        assert h1.to_csv() == h2.to_csv()
        assert all(s1[k].tobytes() == s2[k].tobytes() for k in s1)

    def test_dropout_training_is_deterministic(self):
        cfg = ViTConfig(height=8, width=8, patch=4, dim=8, depth=1, heads=2, mlp_dim=16, num_classes=2, dropout=0.2)

        def run():
            model = ViT(cfg)
            train(model, _toy_set(), None, TrainConfig(epochs=2, batch_size=4, lr=1e-3))
            return model.state_dict()

        a, b = run(), run()
        assert all(a[k].tobytes() == b[k].tobytes() for k in a)

    def test_history_columns(self):
        _, hist = train(ViT(TINY), _toy_set(), _toy_set(seed=2), TrainConfig(epochs=2, batch_size=4))
        lines = hist.to_csv().splitlines()
        assert lines[0] == "epoch,train_loss,val_loss,train_acc,val_acc"
        assert len(lines) == 3
        assert TrainHistory.from_csv(hist.to_csv()).to_csv() == hist.to_csv()

    def test_empty_train_set(self):
        with pytest.raises(EmptyTrainSet):
            train(ViT(TINY), ImageSet(np.zeros((0, 8, 8, 1)), np.zeros(0)), None, TrainConfig(epochs=1))

    def test_diverged_loss(self):
        model = ViT(TINY)
        model.params["head.w"].data[:] = np.inf
        with pytest.raises(DivergedLoss):
            train(model, _toy_set(), None, TrainConfig(epochs=1))

    def test_checkpoints_written(self, tmp_path: Path):
        tcfg = TrainConfig(epochs=4, batch_size=4, checkpoint_interval=2)
        train(ViT(TINY), _toy_set(), _toy_set(seed=3), tcfg, checkpoint_dir=tmp_path)
        names = sorted(p.name for p in tmp_path.iterdir())
        assert names == ["best.ckpt", "epoch_0002.ckpt", "epoch_0004.ckpt"]

    def test_early_stop(self):
        # a vanishing learning rate leaves the validation loss flat
        tcfg = TrainConfig(epochs=50, batch_size=8, lr=1e-300, early_stop_patience=2)
        _, hist = train(ViT(TINY), _toy_set(), _toy_set(seed=5), tcfg)
        assert len(hist) == 3


def test_zero_head_loss_is_log_k():
    cfg = ViTConfig(height=8, width=8, patch=4, dim=8, depth=1, heads=2, mlp_dim=16, num_classes=5)
    model = ViT(cfg)
    model.params["head.w"].data[:] = 0
    data = ImageSet(np.random.default_rng(0).normal(size=(7, 8, 8, 1)), np.arange(7) % 5)
    loss, _ = evaluate_epoch(model, data, batch_size=3)
    assert abs(loss - math.log(5)) < 1e-9


def test_evaluate_epoch_agrees_with_evaluator():
    model = ViT(TINY, vit.init_params(TINY, seed=3))
    data = _toy_set(20, seed=7)
    _, acc = evaluate_epoch(model, data, batch_size=6)
    preds = np.argmax(predict_logits(model, data.images), axis=1)
    assert acc == accuracy(preds, data.labels)


def test_resume_from_checkpoint_is_bitwise_identical(tmp_path: Path):
    data = _toy_set(12, seed=8)
    tcfg = TrainConfig(epochs=2, batch_size=4, lr=1e-3, shuffle=False)

    straight = ViT(TINY)
    state = AdamState.zeros_like(straight.params)
    train(straight, data, None, tcfg, state=state)
    train(straight, data, None, tcfg, state=state)

    resumed = ViT(TINY)
    first_state = AdamState.zeros_like(resumed.params)
    train(resumed, data, None, tcfg, state=first_state)
    save_training_checkpoint(tmp_path / "c.ckpt", resumed, first_state)
    model, loaded = load_training_checkpoint(tmp_path / "c.ckpt")
    assert loaded is not None and loaded.t == first_state.t
    train(model, data, None, tcfg, state=loaded)

    assert all(
        straight.params[k].data.tobytes() == model.params[k].data.tobytes() for k in straight.params
    )
    assert all(state.m[k].tobytes() == loaded.m[k].tobytes() for k in state.m)


def test_model_only_checkpoint_has_no_state(tmp_path: Path):
    ViT(TINY).save(tmp_path / "m.ckpt")
    _, state = load_training_checkpoint(tmp_path / "m.ckpt")
    assert state is None
