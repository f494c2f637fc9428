"""The modified VGG-style fully-convolutional classifier.

Each feature block is [3x3 conv -> ReLU] x k followed by dropout and a 2x2
max pool; the classifier head replaces dense layers with convolutions (the
first head conv consumes the whole remaining spatial map, later ones are 1x1)
and global average pooling collapses the head output to per-class logits.
The final head layer has 2 channels: index 0 = normal, index 1 = glaucoma.

Parameter names follow "block{b}_conv{i}.weight|bias" and
"head_{h}.weight|bias", 1-based. Interior activations are exposed under the
conv's name ("block{b}_conv{i}" = output after that conv's ReLU); the default
saliency target is the last conv of the last feature block.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .autodiff import (
    Tape,
    Tensor,
    conv2d,
    dropout,
    global_avg_pool,
    maxpool2d,
    relu,
)
from .rng import RngState

__all__ = [
    "CLASS_NAMES",
    "ModelConfig",
    "ModelWeights",
    "PRESETS",
    "build_model",
    "forward_logits",
    "get_preset",
    "parameter_shapes",
    "predict_classes",
    "predict_proba",
]

CLASS_NAMES = ("normal", "glaucoma")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture description; all feature convs are 3x3 stride 1 pad 1."""

    blocks: tuple[tuple[int, int], ...]  # (conv_count, channels) per block
    head: tuple[tuple[int, int], ...]    # (kernel, channels) per head conv
    dropout_rate: float = 0.5
    num_classes: int = 2
    input_size: int = 224
    variant_name: str = "custom"

    def __post_init__(self):
        if not self.blocks or not self.head:
            raise ValueError("model needs at least one feature block and one head layer")
        if self.input_size % (2 ** len(self.blocks)) != 0:
            raise ValueError(
                f"input_size {self.input_size} not divisible by 2^{len(self.blocks)} "
                f"({len(self.blocks)} pooling stages)")
        if self.head[-1][1] != self.num_classes:
            raise ValueError(
                f"final head layer has {self.head[-1][1]} channels, expected "
                f"num_classes={self.num_classes}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        spatial = self.input_size // (2 ** len(self.blocks))
        for h, (kernel, _) in enumerate(self.head, start=1):
            spatial = spatial - kernel + 1
            if spatial < 1:
                raise ValueError(
                    f"head layer {h} kernel {kernel} leaves no spatial extent")

    @property
    def feature_layer(self) -> str:
        """Name of the default saliency target: last conv of the last block."""
        return f"block{len(self.blocks)}_conv{self.blocks[-1][0]}"

    def to_json_dict(self) -> dict:
        return {
            "blocks": [list(b) for b in self.blocks],
            "head": [list(h) for h in self.head],
            "dropout_rate": self.dropout_rate,
            "num_classes": self.num_classes,
            "input_size": self.input_size,
            "variant_name": self.variant_name,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            blocks=tuple(tuple(b) for b in d["blocks"]),
            head=tuple(tuple(h) for h in d["head"]),
            dropout_rate=d.get("dropout_rate", 0.5),
            num_classes=d.get("num_classes", 2),
            input_size=d.get("input_size", 224),
            variant_name=d.get("variant_name", "custom"),
        )


PRESETS: dict[str, ModelConfig] = {
    # classic VGG16 feature stack with the dense head converted to convs and
    # the output reduced to 2 channels
    "full": ModelConfig(
        blocks=((2, 64), (2, 128), (3, 256), (3, 512), (3, 512)),
        head=((7, 4096), (1, 4096), (1, 2)),
        input_size=224,
        variant_name="full",
    ),
    # desk-scale variants used by the test and verification suites
    "tiny": ModelConfig(
        blocks=((1, 8), (1, 16), (1, 32)),
        head=((4, 64), (1, 2)),
        input_size=32,
        variant_name="tiny",
    ),
    "tiny64": ModelConfig(
        blocks=((1, 8), (1, 16), (1, 32)),
        head=((4, 64), (1, 2)),
        input_size=64,
        variant_name="tiny64",
    ),
}


def get_preset(name: str) -> ModelConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown model preset {name!r}; choices: {sorted(PRESETS)}") from None


def parameter_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Expected shape of every named parameter, in forward order."""
    shapes: dict[str, tuple[int, ...]] = {}
    in_ch = 3
    for b, (convs, out_ch) in enumerate(config.blocks, start=1):
        for i in range(1, convs + 1):
            shapes[f"block{b}_conv{i}.weight"] = (out_ch, in_ch, 3, 3)
            shapes[f"block{b}_conv{i}.bias"] = (out_ch,)
            in_ch = out_ch
    for h, (kernel, out_ch) in enumerate(config.head, start=1):
        shapes[f"head_{h}.weight"] = (out_ch, in_ch, kernel, kernel)
        shapes[f"head_{h}.bias"] = (out_ch,)
        in_ch = out_ch
    return shapes


class ModelWeights:
    """Named parameter store; immutable-by-convention once handed to inference."""

    def __init__(self, tensors: dict[str, Tensor]):
        self.tensors = tensors

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def names(self) -> list[str]:
        return list(self.tensors)

    def items(self):
        return self.tensors.items()

    def param_count(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def copy(self) -> "ModelWeights":
        return ModelWeights({
            name: Tensor(t.data.copy(), requires_grad=t.requires_grad)
            for name, t in self.tensors.items()
        })

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()

    def validate_against(self, config: ModelConfig) -> None:
        expected = parameter_shapes(config)
        for name, shape in expected.items():
            if name not in self.tensors:
                raise ValueError(f"missing parameter {name!r}")
            if self.tensors[name].shape != shape:
                raise ValueError(
                    f"parameter {name!r} has shape {self.tensors[name].shape}, "
                    f"expected {shape}")
        extra = set(self.tensors) - set(expected)
        if extra:
            raise ValueError(f"unexpected parameters: {sorted(extra)}")


def build_model(config: ModelConfig, init_rng: RngState) -> ModelWeights:
    """Allocate parameters: He fan-in normal weights, zero biases.

    Draws happen in parameter-name order from a single derived stream, so a
    given seed always yields bit-identical weights.
    """
    stream = init_rng.derive("weight-init")
    tensors: dict[str, Tensor] = {}
    for name, shape in parameter_shapes(config).items():
        if name.endswith(".bias"):
            data = np.zeros(shape, dtype=np.float32)
        else:
            fan_in = shape[1] * shape[2] * shape[3]
            std = np.sqrt(2.0 / fan_in)
            data = stream.normal(scale=std, size=shape).astype(np.float32)
        tensors[name] = Tensor(data, requires_grad=True)
    return ModelWeights(tensors)


def forward_logits(config: ModelConfig, weights: ModelWeights, batch: Tensor,
                   mode: str = "eval", rng: RngState | None = None,
                   tape: Tape | None = None,
                   capture: Iterable[str] | None = None,
                   ) -> tuple[Tensor, dict[str, Tensor]]:
    """Run the network; returns (logits N x num_classes, captured activations).

    ``capture`` names the post-ReLU conv activations to retain (defaults to
    the saliency target layer). Dropout is active only in train mode and
    consumes ``rng`` in layer order.
    """
    n, c, h, w = batch.shape
    if c != 3 or h != config.input_size or w != config.input_size:
        raise ValueError(
            f"expected input of shape Nx3x{config.input_size}x{config.input_size}, "
            f"got {batch.shape}")
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if mode == "train" and config.dropout_rate > 0.0 and rng is None:
        raise ValueError("train-mode forward needs an RngState for dropout")

    wanted = {config.feature_layer} if capture is None else set(capture)
    activations: dict[str, Tensor] = {}
    drop_stream = rng.derive("dropout") if rng is not None else None

    def maybe_dropout(t: Tensor) -> Tensor:
        if config.dropout_rate == 0.0:
            return t
        return dropout(t, rate=config.dropout_rate, mode=mode, rng=drop_stream, tape=tape)

    x = batch
    for b, (convs, _) in enumerate(config.blocks, start=1):
        for i in range(1, convs + 1):
            name = f"block{b}_conv{i}"
            x = conv2d(x, weights[f"{name}.weight"], weights[f"{name}.bias"],
                       stride=1, padding=1, tape=tape)
            x = relu(x, tape=tape)
            if name in wanted:
                if tape is not None:
                    tape.watch(x)
                activations[name] = x
        x = maybe_dropout(x)
        x = maxpool2d(x, tape=tape)

    last = len(config.head)
    for h_i in range(1, last + 1):
        x = conv2d(x, weights[f"head_{h_i}.weight"], weights[f"head_{h_i}.bias"],
                   stride=1, padding=0, tape=tape)
        if h_i < last:
            x = relu(x, tape=tape)
            x = maybe_dropout(x)

    logits = global_avg_pool(x, tape=tape)
    return logits, activations


def predict_proba(config: ModelConfig, weights: ModelWeights, batch: Tensor) -> np.ndarray:
    """Eval-mode class probabilities, one (p_normal, p_glaucoma) row per sample."""
    logits, _ = forward_logits(config, weights, batch, mode="eval")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def predict_classes(probs: np.ndarray) -> np.ndarray:
    """Argmax with exact ties resolved toward class 0 (normal), the
    conservative default."""
    return np.argmax(probs, axis=1)
