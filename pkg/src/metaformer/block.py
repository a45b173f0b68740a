"""One MetaFormer block: mixer sub-block plus channel-MLP sub-block.

Forward (all switches on):

    y = x + drop_path(ls1 * mixer(norm1(x)))
    z = y + drop_path(ls2 * mlp(norm2(y)))

LayerScale multiplies the branch before drop-path. ``use_residual=False``
drops both "+ x"/"+ y" terms; ``use_channel_mlp=False`` skips the second
sub-block entirely.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional, Tuple

import numpy as np

from .init import trunc_normal
from .mixers import MixerConfig, make_mixer
from .norms import make_norm
from .tensor import ACTIVATIONS, InvalidArgument, Tensor, conv2d

MLP_RATIO = 4


@dataclass(frozen=True)
class BlockConfig:
    mixer: MixerConfig = field(default_factory=MixerConfig)
    norm: str = "mln"
    activation: str = "gelu"
    use_residual: bool = True
    use_channel_mlp: bool = True
    use_layer_scale: bool = True
    layer_scale_init: float = 1e-5
    drop_path_rate: float = 0.0

    def validate(self, path: str = "block") -> None:
        self.mixer.validate(f"{path}.mixer")
        if self.activation not in ACTIVATIONS:
            raise InvalidArgument(
                f"{path}.activation: unknown activation {self.activation!r}, expected one of {tuple(ACTIVATIONS)}"
            )
        if not 0.0 <= self.drop_path_rate < 1.0:
            raise InvalidArgument(f"{path}.drop_path_rate: must lie in [0, 1), got {self.drop_path_rate}")
        if self.use_layer_scale and self.layer_scale_init <= 0:
            raise InvalidArgument(f"{path}.layer_scale_init: must be > 0 when enabled, got {self.layer_scale_init}")


class ChannelMlp:
    """Two 1x1 convolutions with a nonlinearity between them, hidden width 4C."""

    def __init__(self, channels: int, activation: str, rng: np.random.Generator, dtype="f32"):
        hidden = MLP_RATIO * channels
        self.activation = activation
        self.fc1_weight = Tensor(trunc_normal(rng, (hidden, channels, 1, 1)), requires_grad=True, dtype=dtype)
        self.fc1_bias = Tensor(np.zeros(hidden), requires_grad=True, dtype=dtype)
        self.fc2_weight = Tensor(trunc_normal(rng, (channels, hidden, 1, 1)), requires_grad=True, dtype=dtype)
        self.fc2_bias = Tensor(np.zeros(channels), requires_grad=True, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        act = ACTIVATIONS[self.activation]
        h = act(conv2d(x, self.fc1_weight, self.fc1_bias))
        return conv2d(h, self.fc2_weight, self.fc2_bias)

    def named_parameters(self, prefix: str) -> Iterator[Tuple[str, Tensor]]:
        yield f"{prefix}.fc1.weight", self.fc1_weight
        yield f"{prefix}.fc1.bias", self.fc1_bias
        yield f"{prefix}.fc2.weight", self.fc2_weight
        yield f"{prefix}.fc2.bias", self.fc2_bias


def drop_path(x: Tensor, p: float, mode: str, rng: Optional[np.random.Generator]) -> Tensor:
    """Stochastic depth: zero the branch per sample with probability p.

    Kept samples are scaled by 1/(1-p) so the output matches x in
    expectation. Eval mode and p=0 are exact identities.
    """
    if not 0.0 <= p < 1.0:
        raise InvalidArgument(f"drop_path: rate must lie in [0, 1), got {p}")
    if mode == "eval" or p == 0.0:
        return x
    if rng is None:
        raise InvalidArgument("drop_path: train mode requires an rng")
    B = x.shape[0]
    keep = (rng.random(B) >= p).astype(x.dtype.type)
    mask = (keep / (1.0 - p)).reshape((B,) + (1,) * (x.ndim - 1))
    return x * Tensor(mask)


class MetaFormerBlock:
    def __init__(
        self,
        channels: int,
        config: BlockConfig,
        rng: np.random.Generator,
        n_tokens: int = 0,
        dtype="f32",
    ):
        config.validate()
        self.channels = channels
        self.config = config
        self.norm1 = make_norm(config.norm, channels, dtype=dtype)
        self.mixer = make_mixer(config.mixer, channels, n_tokens, rng, dtype=dtype)
        self.norm2 = make_norm(config.norm, channels, dtype=dtype) if config.use_channel_mlp else None
        self.mlp = ChannelMlp(channels, config.activation, rng, dtype=dtype) if config.use_channel_mlp else None
        if config.use_layer_scale:
            init = config.layer_scale_init
            self.ls1 = Tensor(np.full(channels, init), requires_grad=True, dtype=dtype)
            self.ls2 = Tensor(np.full(channels, init), requires_grad=True, dtype=dtype) if config.use_channel_mlp else None
        else:
            self.ls1 = None
            self.ls2 = None

    def _branch(self, h: Tensor, ls: Optional[Tensor], mode: str, rng) -> Tensor:
        if ls is not None:
            h = h * ls.reshape(1, self.channels, 1, 1)
        return drop_path(h, self.config.drop_path_rate, mode, rng)

    def __call__(self, x: Tensor, mode: str = "eval", rng: Optional[np.random.Generator] = None) -> Tensor:
        cfg = self.config
        branch = self._branch(self.mixer(self.norm1(x, mode)), self.ls1, mode, rng)
        y = x + branch if cfg.use_residual else branch
        if not cfg.use_channel_mlp:
            return y
        branch = self._branch(self.mlp(self.norm2(y, mode)), self.ls2, mode, rng)
        return y + branch if cfg.use_residual else branch

    def named_parameters(self, prefix: str) -> Iterator[Tuple[str, Tensor]]:
        yield from self.norm1.named_parameters(f"{prefix}.norm1")
        yield from self.mixer.named_parameters(f"{prefix}.mixer")
        if self.ls1 is not None:
            yield f"{prefix}.ls1", self.ls1
        if self.mlp is not None:
            yield from self.norm2.named_parameters(f"{prefix}.norm2")
            yield from self.mlp.named_parameters(f"{prefix}.mlp")
            if self.ls2 is not None:
                yield f"{prefix}.ls2", self.ls2

    def frozen_parameters(self, prefix: str) -> Iterator[Tuple[str, Tensor]]:
        yield from self.mixer.frozen_parameters(f"{prefix}.mixer")

    def named_buffers(self, prefix: str) -> Iterator[Tuple[str, np.ndarray]]:
        yield from self.norm1.named_buffers(f"{prefix}.norm1")
        if self.norm2 is not None:
            yield from self.norm2.named_buffers(f"{prefix}.norm2")
