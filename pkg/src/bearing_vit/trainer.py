"""Mini-batch Adam training with per-epoch train/validation history."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .errors import (
    CheckpointError,
    DivergedLoss,
    EmptyDataset,
    EmptyTrainSet,
    NonFiniteError,
    ShapeMismatch,
    UsageError,
)
from .evaluator import accuracy
from .vit import ViT

HISTORY_HEADER = "epoch,train_loss,val_loss,train_acc,val_acc"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    shuffle: bool = True
    checkpoint_interval: int = 0
    schedule: str = "constant"  # or "cosine"
    early_stop_patience: int = 0  # 0 disables

    def __post_init__(self) -> None:
        if self.epochs < 0 or self.batch_size < 1 or not self.lr > 0:
            raise UsageError("need epochs >= 0, batch_size >= 1, lr > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise UsageError("Adam betas must lie in [0, 1)")
        if self.schedule not in ("constant", "cosine"):
            raise UsageError(f"unknown schedule {self.schedule!r}")


@dataclass
class ImageSet:
    images: np.ndarray  # [n, H, W, C]
    labels: np.ndarray  # [n] class ids

    def __post_init__(self) -> None:
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.intp)
        if self.images.shape[0] != self.labels.shape[0]:
            raise ShapeMismatch("images and labels differ in length")

    def __len__(self) -> int:
        return int(self.labels.shape[0])


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.train_loss)

    def append(self, train_loss: float, val_loss: float, train_acc: float, val_acc: float) -> None:
        self.train_loss.append(train_loss)
        self.val_loss.append(val_loss)
        self.train_acc.append(train_acc)
        self.val_acc.append(val_acc)

    def to_csv(self) -> str:
        rows = [HISTORY_HEADER]
        for i in range(len(self)):
            rows.append(
                f"{i + 1},{self.train_loss[i]!r},{self.val_loss[i]!r},"
                f"{self.train_acc[i]!r},{self.val_acc[i]!r}"
            )
        return "\n".join(rows) + "\n"

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")

    @classmethod
    def from_csv(cls, text: str) -> "TrainHistory":
        lines = text.strip().splitlines()
        if not lines or lines[0] != HISTORY_HEADER:
            raise ValueError("not a history CSV")
        hist = cls()
        for line in lines[1:]:
            _, tl, vl, ta, va = line.split(",")
            hist.append(float(tl), float(vl), float(ta), float(va))
        return hist


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def zeros_like(cls, params: Mapping[str, ad.Tensor | np.ndarray]) -> "AdamState":
        arrays = {k: (p.data if isinstance(p, ad.Tensor) else p) for k, p in params.items()}
        return cls({k: np.zeros_like(a) for k, a in arrays.items()}, {k: np.zeros_like(a) for k, a in arrays.items()})

    def to_bytes(self) -> bytes:
        named = {f"m.{k}": a for k, a in self.m.items()}
        named.update({f"v.{k}": a for k, a in self.v.items()})
        return struct.pack("<Q", self.t) + ad.serialize_tensors(named)

    @classmethod
    def from_bytes(cls, buf: bytes, offset: int = 0) -> tuple["AdamState", int]:
        (t,) = struct.unpack_from("<Q", buf, offset)
        named, end = ad.deserialize_tensors(buf, offset + 8)
        m = {k[2:]: a for k, a in named.items() if k.startswith("m.")}
        v = {k[2:]: a for k, a in named.items() if k.startswith("v.")}
        return cls(m, v, t), end


def adam_step(
    params: Mapping[str, ad.Tensor],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    """One bias-corrected Adam update applied to ``params`` in place."""
    state.t += 1
    bc1 = 1.0 - beta1**state.t
    bc2 = 1.0 - beta2**state.t
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        if g.shape != p.data.shape or m.shape != p.data.shape:
            raise ShapeMismatch(f"{name}: param {p.data.shape}, grad {g.shape}, state {m.shape}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data = p.data - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return state


def save_training_checkpoint(path: str | Path, model: ViT, state: AdamState) -> None:
    Path(path).write_bytes(model.to_bytes() + state.to_bytes())


def load_training_checkpoint(path: str | Path) -> tuple[ViT, AdamState | None]:
    buf = Path(path).read_bytes()
    model, end = ViT.from_bytes(buf)
    if end == len(buf):
        return model, None
    state, end = AdamState.from_bytes(buf, end)
    if end != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - end} trailing bytes")
    return model, state


def predict_logits(model: ViT, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
    chunks = [model(images[i : i + batch_size]).data for i in range(0, images.shape[0], batch_size)]
    return np.concatenate(chunks, axis=0)


def evaluate_epoch(model: ViT, dataset: ImageSet, batch_size: int = 64) -> tuple[float, float]:
    """Mean cross-entropy and accuracy (percent) without touching parameters."""
    if len(dataset) == 0:
        raise EmptyDataset("cannot evaluate an empty dataset")
    total = 0.0
    preds = []
    for i in range(0, len(dataset), batch_size):
        logits = model(dataset.images[i : i + batch_size])
        labels = dataset.labels[i : i + batch_size]
        total += float(ad.cross_entropy(logits, labels).data) * labels.shape[0]
        preds.append(np.argmax(logits.data, axis=1))
    return total / len(dataset), accuracy(np.concatenate(preds), dataset.labels)


def _lr_at(tcfg: TrainConfig, step: int, total_steps: int) -> float:
    if tcfg.schedule == "cosine" and total_steps > 0:
        return tcfg.lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))
    return tcfg.lr


def train(
    model: ViT,
    train_set: ImageSet,
    val_set: ImageSet | None,
    tcfg: TrainConfig,
    *,
    checkpoint_dir: str | Path | None = None,
    state: AdamState | None = None,
    log=None,
) -> tuple[ViT, TrainHistory]:
    """Train ``model`` in place.

    Without a validation set the validation columns repeat the training values.
    With ``checkpoint_dir``, writes ``epoch_XXXX.ckpt`` every
    ``checkpoint_interval`` epochs and ``best.ckpt`` whenever validation loss improves.
    """
    if len(train_set) == 0:
        raise EmptyTrainSet("training set is empty")
    history = TrainHistory()
    state = state if state is not None else AdamState.zeros_like(model.params)
    rng = np.random.default_rng(np.random.SeedSequence([tcfg.seed, 1]))
    dropout_rng = (
        np.random.default_rng(np.random.SeedSequence([tcfg.seed, 2])) if model.config.dropout > 0 else None
    )
    n = len(train_set)
    steps_per_epoch = math.ceil(n / tcfg.batch_size)
    total_steps = steps_per_epoch * tcfg.epochs
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    best_val = math.inf
    stale = 0

    for epoch in range(1, tcfg.epochs + 1):
        order = rng.permutation(n) if tcfg.shuffle else np.arange(n)
        for b in range(steps_per_epoch):
            idx = order[b * tcfg.batch_size : (b + 1) * tcfg.batch_size]
            try:
                with ad.Tape() as tape:
                    logits = model(train_set.images[idx], rng=dropout_rng)
                    loss = ad.cross_entropy(logits, train_set.labels[idx])
            except NonFiniteError as exc:
                raise DivergedLoss(f"epoch {epoch}: {exc}") from exc
            if not math.isfinite(float(loss.data)):
                raise DivergedLoss(f"epoch {epoch}: loss is {float(loss.data)}")
            grads = ad.backward(tape, loss, model.params)
            lr = _lr_at(tcfg, state.t, total_steps)
            adam_step(model.params, grads, state, lr, tcfg.beta1, tcfg.beta2, tcfg.eps)

        train_loss, train_acc = evaluate_epoch(model, train_set)
        if val_set is not None and len(val_set):
            val_loss, val_acc = evaluate_epoch(model, val_set)
        else:
            val_loss, val_acc = train_loss, train_acc
        if not (math.isfinite(train_loss) and math.isfinite(val_loss)):
            raise DivergedLoss(f"epoch {epoch}: non-finite evaluation loss")
        history.append(train_loss, val_loss, train_acc, val_acc)
        if log is not None:
            log(
                f"epoch {epoch:4d} train_loss={train_loss:.4f} val_loss={val_loss:.4f} "
                f"train_acc={train_acc:.2f} val_acc={val_acc:.2f}"
            )

        if ckpt_dir is not None:
            if tcfg.checkpoint_interval and epoch % tcfg.checkpoint_interval == 0:
                save_training_checkpoint(ckpt_dir / f"epoch_{epoch:04d}.ckpt", model, state)
            if val_loss < best_val:
                model.save(ckpt_dir / "best.ckpt")
        if val_loss < best_val:
            best_val, stale = val_loss, 0
        else:
            stale += 1
            if tcfg.early_stop_patience and stale >= tcfg.early_stop_patience:
                break
    return model, history
