"""Layered ``section.key = value`` run configuration."""

from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Iterable

from .errors import ConfigError
from .stft import Window
from .trainer import TrainConfig
from .vit import ViTConfig

# Every recognised key with its default; the default's type fixes the parser.
DEFAULTS: dict[str, object] = {
    "run.seed": 0,
    "signal.sample_rate": 12000.0,
    "signal.segment_len": 2048,
    "signal.stride": 2048,
    "signal.channel": "DriveEnd",
    "split.train": 0.8,
    "split.val": 0.1,
    "split.test": 0.1,
    "synth.classes": 4,
    "synth.segments_per_class": 100,
    "stft.window": "Hann",
    "stft.window_len": 128,
    "stft.hop": 32,
    "stft.nfft": 128,
    "stft.log_eps": 1e-8,
    "stft.height": 56,
    "stft.width": 56,
    "model.patch": 8,
    "model.dim": 64,
    "model.depth": 4,
    "model.heads": 4,
    "model.mlp_dim": 128,
    "model.num_classes": "auto",
    "model.dropout": 0.0,
    "model.ln_eps": 1e-6,
    "train.epochs": 100,
    "train.batch_size": 32,
    "train.lr": 3e-4,
    "train.beta1": 0.9,
    "train.beta2": 0.999,
    "train.eps": 1e-8,
    "train.shuffle": True,
    "train.checkpoint_interval": 0,
    "train.schedule": "constant",
    "train.early_stop_patience": 0,
}


def _parse(key: str, raw: str) -> object:
    default = DEFAULTS[key]
    raw = raw.strip()
    try:
        if key == "model.num_classes":
            return "auto" if raw == "auto" else int(raw)
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None
    return raw


def _format(value: object) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


class RunConfig:
    def __init__(self, values: dict[str, object] | None = None):
        self.values = dict(DEFAULTS)
        if values:
            for key, value in values.items():
                self.set(key, value)

    def __getitem__(self, key: str):
        return self.values[key]

    def set(self, key: str, value: object) -> None:
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        self.values[key] = _parse(key, value) if isinstance(value, str) else value

    def update_text(self, text: str, origin: str = "<config>") -> None:
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigError(f"{origin}:{lineno}: expected 'section.key = value'")
            try:
                self.set(key.strip(), value.strip())
            except ConfigError as exc:
                raise ConfigError(f"{origin}:{lineno}: {exc}") from None

    def apply_overrides(self, overrides: Iterable[str]) -> None:
        for item in overrides:
            key, sep, value = item.partition("=")
            if not sep:
                raise ConfigError(f"override {item!r} must look like section.key=value")
            self.set(key.strip(), value.strip())

    @classmethod
    def load(cls, path: str | Path | None = None, overrides: Iterable[str] = ()) -> "RunConfig":
        cfg = cls()
        if path is not None:
            try:
                text = Path(path).read_text(encoding="utf-8")
            except OSError as exc:
                raise ConfigError(f"{path}: {exc.strerror or exc}") from exc
            cfg.update_text(text, str(path))
        cfg.apply_overrides(overrides)
        return cfg

    def to_text(self) -> str:
        return "".join(f"{k} = {_format(self.values[k])}\n" for k in sorted(self.values))

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()[:16]

    def write(self, directory: str | Path) -> None:
        Path(directory, "resolved_config.txt").write_text(self.to_text(), encoding="utf-8")

    # -- typed views -------------------------------------------------------

    @property
    def seed(self) -> int:
        return int(self["run.seed"])

    def split_ratios(self) -> tuple[float, float, float]:
        return (self["split.train"], self["split.val"], self["split.test"])

    def stft_kwargs(self) -> dict:
        try:
            window = Window(self["stft.window"])
        except ValueError:
            raise ConfigError(f"stft.window must be one of {[w.value for w in Window]}") from None
        return {
            "window": window,
            "window_len": self["stft.window_len"],
            "hop": self["stft.hop"],
            "nfft": self["stft.nfft"],
            "height": self["stft.height"],
            "width": self["stft.width"],
            "log_eps": self["stft.log_eps"],
            "sample_rate": self["signal.sample_rate"],
        }

    def vit_config(self, height: int, width: int, channels: int, class_names: tuple[str, ...]) -> ViTConfig:
        k = self["model.num_classes"]
        if k == "auto":
            k = len(class_names)
        elif k != len(class_names):
            raise ConfigError(f"model.num_classes={k} but the dataset has {len(class_names)} classes")
        return ViTConfig(
            height=height,
            width=width,
            channels=channels,
            patch=self["model.patch"],
            dim=self["model.dim"],
            depth=self["model.depth"],
            heads=self["model.heads"],
            mlp_dim=self["model.mlp_dim"],
            num_classes=int(k),
            dropout=self["model.dropout"],
            ln_eps=self["model.ln_eps"],
            seed=self.seed,
            class_names=tuple(class_names),
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self["train.epochs"],
            batch_size=self["train.batch_size"],
            lr=self["train.lr"],
            beta1=self["train.beta1"],
            beta2=self["train.beta2"],
            eps=self["train.eps"],
            seed=self.seed,
            shuffle=self["train.shuffle"],
            checkpoint_interval=self["train.checkpoint_interval"],
            schedule=self["train.schedule"],
            early_stop_patience=self["train.early_stop_patience"],
        )
