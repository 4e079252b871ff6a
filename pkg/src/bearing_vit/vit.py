"""Vision Transformer over time-frequency images.

Token sequence: a learnable class token followed by the linearly projected
image patches, plus learnable 1-D position embeddings.  Each encoder block
is pre-LayerNorm with residual connections around multi-head self-attention
and a GELU MLP; the class token's final state is layer-normalized and fed to
a single linear head.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import CheckpointError, IndivisibleImage, ShapeMismatch, UsageError

CHECKPOINT_MAGIC = b"BVIT"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ViTConfig:
    height: int = 56
    width: int = 56
    channels: int = 1
    patch: int = 8
    dim: int = 64
    depth: int = 4
    heads: int = 4
    mlp_dim: int = 128
    num_classes: int = 14
    dropout: float = 0.0
    ln_eps: float = 1e-6
    seed: int = 0
    class_names: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.patch < 1 or self.height % self.patch or self.width % self.patch:
            raise IndivisibleImage(
                f"image {self.height}x{self.width} is not divisible by patch size {self.patch}"
            )
        if self.dim < 1 or self.heads < 1 or self.dim % self.heads:
            raise UsageError(f"dim={self.dim} must be a positive multiple of heads={self.heads}")
        if min(self.channels, self.depth + 1, self.mlp_dim, self.num_classes) < 1:
            raise UsageError("channels, mlp_dim and num_classes must be >= 1 and depth >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise UsageError("dropout must lie in [0, 1)")
        if self.class_names and len(self.class_names) != self.num_classes:
            raise UsageError("class_names must list num_classes names")

    @property
    def num_patches(self) -> int:
        return (self.height // self.patch) * (self.width // self.patch)

    @property
    def seq_len(self) -> int:
        return self.num_patches + 1

    @property
    def patch_dim(self) -> int:
        return self.patch * self.patch * self.channels

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if f.name == "class_names":
                value = ",".join(value)
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ViTConfig":
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        kwargs: dict = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            key, sep, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if not sep or key not in types:
                raise CheckpointError(f"bad config line {line!r}")
            if key == "class_names":
                kwargs[key] = tuple(v for v in value.split(",") if v)
            elif types[key] in ("float", float):
                kwargs[key] = float(value)
            else:
                kwargs[key] = int(value)
        return cls(**kwargs)


# ---------------------------------------------------------------------------
# Patches


def patchify(images: np.ndarray, patch: int) -> np.ndarray:
    """``[..., H, W, C]`` -> ``[..., N, P*P*C]`` in row-major patch-grid order."""
    images = np.asarray(images, dtype=np.float64)
    *lead, h, w, c = images.shape
    if h % patch or w % patch:
        raise IndivisibleImage(f"image {h}x{w} is not divisible by patch size {patch}")
    gh, gw = h // patch, w // patch
    x = images.reshape(*lead, gh, patch, gw, patch, c)
    nl = len(lead)
    x = x.transpose(*range(nl), nl, nl + 2, nl + 1, nl + 3, nl + 4)
    return x.reshape(*lead, gh * gw, patch * patch * c)


def unpatchify(patches: np.ndarray, patch: int, height: int, width: int, channels: int) -> np.ndarray:
    patches = np.asarray(patches)
    *lead, _, _ = patches.shape
    gh, gw = height // patch, width // patch
    nl = len(lead)
    x = patches.reshape(*lead, gh, gw, patch, patch, channels)
    x = x.transpose(*range(nl), nl, nl + 2, nl + 1, nl + 3, nl + 4)
    return x.reshape(*lead, height, width, channels)


# ---------------------------------------------------------------------------
# Parameters


def _trunc_normal(rng: np.random.Generator, shape: tuple[int, ...], std: float) -> np.ndarray:
    """Normal(0, std) resampled until every draw lies within 3 std."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 3 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 3 * std
    return out


def param_shapes(cfg: ViTConfig) -> dict[str, tuple[int, ...]]:
    d = cfg.dim
    shapes: dict[str, tuple[int, ...]] = {
        "patch_embed": (cfg.patch_dim, d),
        "pos_embed": (cfg.seq_len, d),
        "cls_token": (1, d),
    }
    for i in range(cfg.depth):
        p = f"blocks.{i}."
        shapes.update(
            {
                p + "ln1.gamma": (d,),
                p + "ln1.beta": (d,),
                p + "attn.wq": (d, d),
                p + "attn.wk": (d, d),
                p + "attn.wv": (d, d),
                p + "attn.wo": (d, d),
                p + "ln2.gamma": (d,),
                p + "ln2.beta": (d,),
                p + "mlp.w1": (d, cfg.mlp_dim),
                p + "mlp.b1": (cfg.mlp_dim,),
                p + "mlp.w2": (cfg.mlp_dim, d),
                p + "mlp.b2": (d,),
            }
        )
    shapes.update(
        {
            "norm.gamma": (d,),
            "norm.beta": (d,),
            "head.w": (d, cfg.num_classes),
            "head.b": (cfg.num_classes,),
        }
    )
    return shapes


def init_params(cfg: ViTConfig, seed: int | None = None) -> dict[str, Tensor]:
    """Truncated normal (std 0.02) for weights and embeddings, ones for gammas, zeros for biases/betas."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".gamma"):
            value = np.ones(shape)
        elif name.endswith((".beta", ".b1", ".b2")) or name == "head.b":
            value = np.zeros(shape)
        else:
            value = _trunc_normal(rng, shape, 0.02)
        params[name] = Tensor(value, requires_grad=True, name=name)
    return params


class Layer:
    """View of one encoder block's parameters."""

    def __init__(self, params: dict[str, Tensor], index: int):
        self._params = params
        self._prefix = f"blocks.{index}."

    def __getitem__(self, key: str) -> Tensor:
        return self._params[self._prefix + key]


# ---------------------------------------------------------------------------
# Forward pass


def embed(patches: Tensor, params: dict[str, Tensor]) -> Tensor:
    """``z0 = [x_class; patches @ E] + E_pos`` with the class token in row 0."""
    patches = ad.as_tensor(patches)
    e = params["patch_embed"]
    if patches.shape[-1] != e.shape[0]:
        raise ShapeMismatch(f"patch length {patches.shape[-1]} != embedding input {e.shape[0]}")
    tokens = patches @ e
    cls = params["cls_token"]
    if tokens.ndim == 3:
        cls = ad.mul(cls, np.ones((tokens.shape[0], 1, 1)))
    return ad.concat([cls, tokens], axis=-2) + params["pos_embed"]


def attention(
    x: Tensor, layer: Layer, heads: int, attn_log: list[np.ndarray] | None = None
) -> Tensor:
    *lead, t, d = x.shape
    dh = d // heads

    def split(w: Tensor) -> Tensor:
        y = (x @ w).reshape(*lead, t, heads, dh)
        return y.transpose(*range(len(lead)), len(lead) + 1, len(lead), len(lead) + 2)

    q, k, v = split(layer["attn.wq"]), split(layer["attn.wk"]), split(layer["attn.wv"])
    nl = len(lead)
    k_t = k.transpose(*range(nl + 1), nl + 2, nl + 1)
    weights = ad.softmax((q @ k_t) * (1.0 / math.sqrt(dh)), axis=-1)
    if attn_log is not None:
        attn_log.append(weights.data)
    ctx = (weights @ v).transpose(*range(nl), nl + 1, nl, nl + 2).reshape(*lead, t, d)
    return ctx @ layer["attn.wo"]


def mlp(x: Tensor, layer: Layer, dropout: float = 0.0, rng: np.random.Generator | None = None) -> Tensor:
    h = ad.gelu(x @ layer["mlp.w1"] + layer["mlp.b1"])
    h = ad.dropout(h, dropout, rng)
    return h @ layer["mlp.w2"] + layer["mlp.b2"]


def encoder_block(
    z: Tensor,
    layer: Layer,
    cfg: ViTConfig,
    *,
    rng: np.random.Generator | None = None,
    attn_log: list[np.ndarray] | None = None,
) -> Tensor:
    h = ad.layer_norm(z, layer["ln1.gamma"], layer["ln1.beta"], cfg.ln_eps)
    z = ad.dropout(attention(h, layer, cfg.heads, attn_log), cfg.dropout, rng) + z
    h = ad.layer_norm(z, layer["ln2.gamma"], layer["ln2.beta"], cfg.ln_eps)
    return ad.dropout(mlp(h, layer, cfg.dropout, rng), cfg.dropout, rng) + z


def forward(
    images,
    params: dict[str, Tensor],
    cfg: ViTConfig,
    *,
    rng: np.random.Generator | None = None,
    attn_log: list[np.ndarray] | None = None,
) -> Tensor:
    """Logits ``[B, K]`` for ``images [B, H, W, C]`` (or ``[K]`` for one ``[H, W, C]`` image).

    Dropout is active only when ``rng`` is given.
    """
    data = images.data if isinstance(images, Tensor) else np.asarray(images, dtype=np.float64)
    single = data.ndim == 3
    if single:
        data = data[None]
    if data.shape[1:] != (cfg.height, cfg.width, cfg.channels):
        raise ShapeMismatch(
            f"image shape {data.shape[1:]} does not match model "
            f"{(cfg.height, cfg.width, cfg.channels)}"
        )
    z = embed(Tensor(patchify(data, cfg.patch)), params)
    z = ad.dropout(z, cfg.dropout, rng)
    for i in range(cfg.depth):
        z = encoder_block(z, Layer(params, i), cfg, rng=rng, attn_log=attn_log)
    y = ad.layer_norm(z[:, 0, :], params["norm.gamma"], params["norm.beta"], cfg.ln_eps)
    logits = y @ params["head.w"] + params["head.b"]
    return logits[0] if single else logits


# ---------------------------------------------------------------------------
# Model wrapper and checkpoints


class ViT:
    def __init__(self, config: ViTConfig, params: dict[str, Tensor] | None = None):
        self.config = config
        self.params = init_params(config) if params is None else params
        expected = param_shapes(config)
        got = {k: v.shape for k, v in self.params.items()}
        if got != expected:
            raise ShapeMismatch("parameter set does not match the configuration")

    def __call__(self, images, *, rng: np.random.Generator | None = None) -> Tensor:
        return forward(images, self.params, self.config, rng=rng)

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self.params.items())

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def predict_proba(self, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
        images = np.asarray(images, dtype=np.float64)
        out = [
            ad.softmax_array(self(images[i : i + batch_size]).data, axis=-1)
            for i in range(0, images.shape[0], batch_size)
        ]
        return np.concatenate(out, axis=0) if out else np.zeros((0, self.config.num_classes))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        if set(state) != set(self.params):
            raise CheckpointError("checkpoint parameter names do not match the model")
        for k, v in state.items():
            if v.shape != self.params[k].shape:
                raise CheckpointError(f"{k}: shape {v.shape} != {self.params[k].shape}")
            self.params[k].data = np.array(v, dtype=np.float64)

    def to_bytes(self) -> bytes:
        text = self.config.to_text().encode("utf-8")
        return (
            CHECKPOINT_MAGIC
            + bytes([CHECKPOINT_VERSION])
            + len(text).to_bytes(4, "little")
            + text
            + ad.serialize_tensors(self.params)
        )

    @classmethod
    def from_bytes(cls, buf: bytes, offset: int = 0) -> tuple["ViT", int]:
        """Parse a model checkpoint; returns the model and the offset just past it."""
        if buf[offset : offset + 4] != CHECKPOINT_MAGIC:
            raise CheckpointError("not a model checkpoint (bad magic)")
        if buf[offset + 4] != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {buf[offset + 4]}")
        n = int.from_bytes(buf[offset + 5 : offset + 9], "little")
        text = bytes(buf[offset + 9 : offset + 9 + n]).decode("utf-8")
        config = ViTConfig.from_text(text)
        state, end = ad.deserialize_tensors(buf, offset + 9 + n)
        model = cls(config)
        model.load_state_dict(state)
        return model, end

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "ViT":
        model, _ = cls.from_bytes(Path(path).read_bytes())
        return model
