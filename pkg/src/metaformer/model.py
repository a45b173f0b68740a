"""Four-stage hierarchical backbone assembly and the named configurations.

Stage i runs at a (H / 2^{i+1}, W / 2^{i+1}) token grid for input (H, W):
the first patch embedding downsamples 4x (7x7 conv, stride 4, pad 2), each
later stage boundary 2x (3x3 conv, stride 2, pad 1). Small models use
channel dims [64, 128, 320, 512], medium [96, 192, 384, 768]; a model with
L blocks distributes them [L/6, L/6, L/2, L/6] across stages.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .block import BlockConfig, MetaFormerBlock
from .init import child_rng, trunc_normal
from .mixers import HEAD_DIM, MIXER_KINDS, MixerConfig
from .norms import NORM_KINDS, make_norm
from .tensor import ACTIVATIONS, InvalidArgument, Tensor, conv2d, matmul

SMALL_DIMS = (64, 128, 320, 512)
MEDIUM_DIMS = (96, 192, 384, 768)

# (kernel, stride, pad) per stage boundary; paddings chosen so a 224 input
# yields exactly 56/28/14/7 grids.
EMBED_SPECS = ((7, 4, 2), (3, 2, 1), (3, 2, 1), (3, 2, 1))

VARIANTS = ("S12", "S24", "S36", "M36", "M48")
_VARIANT_TABLE = {
    # name: (dims, total blocks, layer_scale_init, peak drop path)
    "S12": (SMALL_DIMS, 12, 1e-5, 0.1),
    "S24": (SMALL_DIMS, 24, 1e-5, 0.1),
    "S36": (SMALL_DIMS, 36, 1e-6, 0.2),
    "M36": (MEDIUM_DIMS, 36, 1e-6, 0.3),
    "M48": (MEDIUM_DIMS, 48, 1e-6, 0.4),
}


class ConfigError(ValueError):
    """A model configuration violates its invariants; message carries the field path."""


def stage_plan(total_blocks: int) -> List[int]:
    """Distribute L blocks as [L/6, L/6, L/2, L/6]."""
    if total_blocks % 6 != 0:
        raise InvalidArgument(f"stage_plan: total blocks must be divisible by 6, got {total_blocks}")
    sixth = total_blocks // 6
    return [sixth, sixth, total_blocks // 2, sixth]


def drop_path_schedule(peak_rate: float, total_blocks: int) -> List[float]:
    """Linear ramp of per-block drop rates from 0 to ``peak_rate`` by global index."""
    if not 0.0 <= peak_rate < 1.0:
        raise InvalidArgument(f"drop_path_schedule: peak rate must lie in [0, 1), got {peak_rate}")
    if total_blocks == 1:
        return [0.0]
    return [peak_rate * i / (total_blocks - 1) for i in range(total_blocks)]


def conv_out_size(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


def stage_grids(input_size: int) -> List[int]:
    """Token-grid side length at each stage for a square input."""
    grids = []
    side = input_size
    for kernel, stride, pad in EMBED_SPECS:
        side = conv_out_size(side, kernel, stride, pad)
        grids.append(side)
    return grids


@dataclass(frozen=True)
class ModelConfig:
    dims: Tuple[int, int, int, int] = SMALL_DIMS
    depths: Tuple[int, int, int, int] = (2, 2, 6, 2)
    mixers: Tuple[MixerConfig, MixerConfig, MixerConfig, MixerConfig] = tuple(
        MixerConfig() for _ in range(4)
    )
    norm: str = "mln"
    activation: str = "gelu"
    use_residual: bool = True
    use_channel_mlp: bool = True
    use_layer_scale: bool = True
    layer_scale_init: float = 1e-5
    drop_path: float = 0.0
    num_classes: int = 1000
    in_channels: int = 3
    input_size: int = 224
    variant: Optional[str] = None

    def validate(self) -> None:
        if len(self.dims) != 4 or any(d < 1 for d in self.dims):
            raise ConfigError(f"dims: need 4 positive channel dims, got {self.dims}")
        if len(self.depths) != 4 or any(d < 1 for d in self.depths):
            raise ConfigError(f"depths: need 4 positive block counts, got {self.depths}")
        if len(self.mixers) != 4:
            raise ConfigError(f"mixers: need one mixer per stage, got {len(self.mixers)}")
        for i, m in enumerate(self.mixers):
            try:
                m.validate(f"mixers[{i}]")
            except InvalidArgument as e:
                raise ConfigError(str(e)) from e
        if self.norm not in NORM_KINDS:
            raise ConfigError(f"norm: unknown kind {self.norm!r}, expected one of {NORM_KINDS}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"activation: unknown {self.activation!r}, expected one of {tuple(ACTIVATIONS)}")
        if not 0.0 <= self.drop_path < 1.0:
            raise ConfigError(f"drop_path: must lie in [0, 1), got {self.drop_path}")
        if self.use_layer_scale and self.layer_scale_init <= 0:
            raise ConfigError(f"layer_scale_init: must be > 0 when layer scale is enabled, got {self.layer_scale_init}")
        if self.num_classes < 1:
            raise ConfigError(f"num_classes: must be >= 1, got {self.num_classes}")
        if self.in_channels < 1:
            raise ConfigError(f"in_channels: must be >= 1, got {self.in_channels}")
        for i, grid in enumerate(stage_grids(self.input_size)):
            if grid < 1:
                raise ConfigError(f"input_size: {self.input_size} collapses to an empty grid at stage {i + 1}")
        for i, h in enumerate(self.heads_per_stage()):
            if self.mixers[i].kind == "attention" and self.dims[i] % h != 0:
                raise ConfigError(f"mixers[{i}].heads: {h} does not divide channel dim {self.dims[i]}")

    def heads_per_stage(self) -> List[int]:
        return [
            m.heads if m.heads is not None else max(1, d // HEAD_DIM)
            for m, d in zip(self.mixers, self.dims)
        ]

    def resolution_bound(self) -> bool:
        return any(m.resolution_bound() for m in self.mixers)

    def total_blocks(self) -> int:
        return sum(self.depths)

    # -------------------------------------------------------------- variants
    @staticmethod
    def variant_named(name: str, num_classes: int = 1000, input_size: int = 224) -> "ModelConfig":
        if name not in _VARIANT_TABLE:
            raise ConfigError(f"variant: unknown name {name!r}, expected one of {VARIANTS}")
        dims, total, ls_init, peak_dp = _VARIANT_TABLE[name]
        return ModelConfig(
            dims=dims,
            depths=tuple(stage_plan(total)),
            mixers=tuple(MixerConfig() for _ in range(4)),
            norm="mln",
            activation="gelu",
            layer_scale_init=ls_init,
            drop_path=peak_dp,
            num_classes=num_classes,
            input_size=input_size,
            variant=name,
        )

    def with_mixers(self, kinds: Sequence[str], norm: Optional[str] = None) -> "ModelConfig":
        """Same architecture with per-stage mixer kinds swapped (ablation helper)."""
        mixers = tuple(MixerConfig(kind=k) for k in kinds)
        return replace(self, mixers=mixers, norm=norm or self.norm, variant=None)

    # ------------------------------------------------------------------ JSON
    def to_json_dict(self) -> dict:
        if self.variant is not None:
            return {"variant": self.variant}
        return {
            "custom": {
                "dims": list(self.dims),
                "depths": list(self.depths),
                "mixers": [m.to_json_dict() for m in self.mixers],
                "norm": self.norm,
                "activation": self.activation,
                "use_residual": self.use_residual,
                "use_channel_mlp": self.use_channel_mlp,
                "use_layer_scale": self.use_layer_scale,
                "layer_scale_init": self.layer_scale_init,
                "drop_path": self.drop_path,
                "num_classes": self.num_classes,
                "in_channels": self.in_channels,
                "input_size": self.input_size,
            }
        }

    @staticmethod
    def from_json_dict(obj: dict) -> "ModelConfig":
        if not isinstance(obj, dict):
            raise ConfigError(f"config: expected an object, got {type(obj).__name__}")
        unknown = set(obj) - {"variant", "custom"}
        if unknown:
            raise ConfigError(f"config: unknown fields {sorted(unknown)}")
        if ("variant" in obj) == ("custom" in obj):
            raise ConfigError("config: exactly one of 'variant' or 'custom' is required")
        if "variant" in obj:
            return ModelConfig.variant_named(obj["variant"])
        custom = obj["custom"]
        if not isinstance(custom, dict):
            raise ConfigError("config.custom: expected an object")
        allowed = {
            "dims", "depths", "mixers", "norm", "activation", "use_residual",
            "use_channel_mlp", "use_layer_scale", "layer_scale_init",
            "drop_path", "num_classes", "in_channels", "input_size",
        }
        unknown = set(custom) - allowed
        if unknown:
            raise ConfigError(f"config.custom: unknown fields {sorted(unknown)}")
        kwargs: dict = {}
        if "dims" in custom:
            kwargs["dims"] = tuple(custom["dims"])
        if "depths" in custom:
            kwargs["depths"] = tuple(custom["depths"])
        if "mixers" in custom:
            kwargs["mixers"] = tuple(_mixer_from_json(m, i) for i, m in enumerate(custom["mixers"]))
        for key in ("norm", "activation", "use_residual", "use_channel_mlp", "use_layer_scale",
                    "layer_scale_init", "drop_path", "num_classes", "in_channels", "input_size"):
            if key in custom:
                kwargs[key] = custom[key]
        cfg = ModelConfig(**kwargs)
        cfg.validate()
        return cfg


def _mixer_from_json(obj: dict, index: int) -> MixerConfig:
    if not isinstance(obj, dict) or "kind" not in obj:
        raise ConfigError(f"config.custom.mixers[{index}]: expected an object with a 'kind' field")
    kind = obj["kind"]
    if kind not in MIXER_KINDS:
        raise ConfigError(f"config.custom.mixers[{index}].kind: unknown mixer {kind!r}")
    allowed = {"kind", "pool_size", "kernel", "heads"}
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"config.custom.mixers[{index}]: unknown fields {sorted(unknown)}")
    return MixerConfig(
        kind=kind,
        pool_size=obj.get("pool_size", 3),
        kernel=obj.get("kernel", 3),
        heads=obj.get("heads"),
    )


class PatchEmbed:
    """Strided convolution downsampling the grid at a stage boundary."""

    def __init__(self, in_channels: int, out_channels: int, kernel: int, stride: int,
                 pad: int, rng: np.random.Generator, dtype="f32"):
        self.kernel, self.stride, self.pad = kernel, stride, pad
        self.weight = Tensor(
            trunc_normal(rng, (out_channels, in_channels, kernel, kernel)), requires_grad=True, dtype=dtype
        )
        self.bias = Tensor(np.zeros(out_channels), requires_grad=True, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, stride=(self.stride, self.stride),
                      padding=(self.pad, self.pad))

    def named_parameters(self, prefix: str) -> Iterator[Tuple[str, Tensor]]:
        yield f"{prefix}.weight", self.weight
        yield f"{prefix}.bias", self.bias


class Model:
    """Built network: 4 embed/stage pairs, final norm, global pool, linear head."""

    def __init__(self, config: ModelConfig, seed: int, dtype="f32"):
        config.validate()
        self.config = config
        self.seed = seed
        rng = child_rng(seed, 0)
        grids = stage_grids(config.input_size)
        heads = config.heads_per_stage()
        rates = drop_path_schedule(config.drop_path, config.total_blocks())
        self.embeds: List[PatchEmbed] = []
        self.stages: List[List[MetaFormerBlock]] = []
        block_index = 0
        in_ch = config.in_channels
        for s in range(4):
            kernel, stride, pad = EMBED_SPECS[s]
            self.embeds.append(PatchEmbed(in_ch, config.dims[s], kernel, stride, pad, rng, dtype=dtype))
            in_ch = config.dims[s]
            blocks = []
            for _ in range(config.depths[s]):
                bcfg = BlockConfig(
                    mixer=replace(config.mixers[s], heads=heads[s]) if config.mixers[s].kind == "attention"
                    else config.mixers[s],
                    norm=config.norm,
                    activation=config.activation,
                    use_residual=config.use_residual,
                    use_channel_mlp=config.use_channel_mlp,
                    use_layer_scale=config.use_layer_scale,
                    layer_scale_init=config.layer_scale_init,
                    drop_path_rate=rates[block_index],
                )
                blocks.append(
                    MetaFormerBlock(config.dims[s], bcfg, rng, n_tokens=grids[s] * grids[s], dtype=dtype)
                )
                block_index += 1
            self.stages.append(blocks)
        self.final_norm = make_norm(config.norm, config.dims[3], dtype=dtype)
        self.head_weight = Tensor(
            trunc_normal(rng, (config.num_classes, config.dims[3])), requires_grad=True, dtype=dtype
        )
        self.head_bias = Tensor(np.zeros(config.num_classes), requires_grad=True, dtype=dtype)

    def forward(self, x: Tensor, mode: str = "eval",
                rng: Optional[np.random.Generator] = None) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.config.in_channels:
            raise InvalidArgument(
                f"forward: expected input [B, {self.config.in_channels}, H, W], got shape {x.shape}"
            )
        _, _, H, W = x.shape
        if H < 32 or W < 32:
            raise InvalidArgument(f"forward: spatial dims must be >= 32, got ({H}, {W})")
        if self.config.resolution_bound() and (H, W) != (self.config.input_size, self.config.input_size):
            raise InvalidArgument(
                f"forward: model is bound to {self.config.input_size}x{self.config.input_size} input "
                f"(resolution-dependent mixers), got {H}x{W}"
            )
        for s in range(4):
            x = self.embeds[s](x)
            if x.shape[2] < 1 or x.shape[3] < 1:
                raise InvalidArgument(f"forward: stage {s + 1} grid is empty for this input size")
            for blk in self.stages[s]:
                x = blk(x, mode, rng)
        x = self.final_norm(x, mode)
        pooled = x.mean(axis=(2, 3))
        return matmul(pooled, self.head_weight.swapaxes(0, 1)) + self.head_bias.reshape(1, -1)

    __call__ = forward

    # -------------------------------------------------------------- registry
    def named_parameters(self) -> Iterator[Tuple[str, Tensor]]:
        """Optimizer-visible parameters in deterministic order."""
        for s in range(4):
            yield from self.embeds[s].named_parameters(f"embed{s + 1}")
            for b, blk in enumerate(self.stages[s]):
                yield from blk.named_parameters(f"stage{s + 1}.block{b}")
        yield from self.final_norm.named_parameters("norm")
        yield "head.weight", self.head_weight
        yield "head.bias", self.head_bias

    def frozen_parameters(self) -> Iterator[Tuple[str, Tensor]]:
        for s in range(4):
            for b, blk in enumerate(self.stages[s]):
                yield from blk.frozen_parameters(f"stage{s + 1}.block{b}")

    def named_buffers(self) -> Iterator[Tuple[str, np.ndarray]]:
        for s in range(4):
            for b, blk in enumerate(self.stages[s]):
                yield from blk.named_buffers(f"stage{s + 1}.block{b}")
        yield from self.final_norm.named_buffers("norm")

    def state_arrays(self) -> Dict[str, Tuple[np.ndarray, bool]]:
        """All persistent arrays by name, with their frozen flag (non-trainable)."""
        out: Dict[str, Tuple[np.ndarray, bool]] = {}
        for name, t in self.named_parameters():
            out[name] = (t.data, False)
        for name, t in self.frozen_parameters():
            out[name] = (t.data, True)
        for name, arr in self.named_buffers():
            out[name] = (arr, True)
        return out


def build(config: ModelConfig, seed: int = 0, dtype="f32") -> Model:
    """Deterministically initialize all parameters of ``config``."""
    return Model(config, seed, dtype=dtype)
