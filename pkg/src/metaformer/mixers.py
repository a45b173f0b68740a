"""Token mixers: the pluggable spatial-communication half of a block.

Every mixer maps [B, C, H, W] -> [B, C, H, W] so the surrounding residual
structure never changes. Six strategies are provided: average pooling minus
identity (parameter-free), plain identity, a frozen row-stochastic random
matrix over tokens, depthwise convolution, multi-head self-attention, and a
single spatial fully connected layer shared across channels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Optional, Tuple

import numpy as np

from .init import trunc_normal
from .tensor import (
    InvalidArgument,
    Tensor,
    avg_pool2d_excl,
    conv2d,
    matmul,
    narrow,
    softmax_lastdim,
)

MIXER_KINDS = ("pooling", "identity", "random_matrix", "depthwise_conv", "attention", "spatial_fc")

# Head count defaults to C/32 (at least 1); complexity is head-count-invariant.
HEAD_DIM = 32


@dataclass(frozen=True)
class MixerConfig:
    """Declarative description of one token-mixing strategy."""

    kind: str = "pooling"
    pool_size: int = 3
    kernel: int = 3
    heads: Optional[int] = None

    def validate(self, path: str = "mixer") -> None:
        if self.kind not in MIXER_KINDS:
            raise InvalidArgument(f"{path}.kind: unknown mixer {self.kind!r}, expected one of {MIXER_KINDS}")
        if self.kind == "pooling" and (self.pool_size < 1 or self.pool_size % 2 == 0):
            raise InvalidArgument(f"{path}.pool_size: must be a positive odd integer, got {self.pool_size}")
        if self.kind == "depthwise_conv" and (self.kernel < 1 or self.kernel % 2 == 0):
            raise InvalidArgument(f"{path}.kernel: must be a positive odd integer, got {self.kernel}")
        if self.kind == "attention" and self.heads is not None and self.heads < 1:
            raise InvalidArgument(f"{path}.heads: must be >= 1, got {self.heads}")

    def resolution_bound(self) -> bool:
        return self.kind in ("random_matrix", "spatial_fc")

    def to_json_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "pooling":
            d["pool_size"] = self.pool_size
        elif self.kind == "depthwise_conv":
            d["kernel"] = self.kernel
        elif self.kind == "attention" and self.heads is not None:
            d["heads"] = self.heads
        return d


def _tokens(x: Tensor) -> Tuple[Tensor, Tuple[int, int, int, int]]:
    """Flatten spatial dims: [B, C, H, W] -> [B, N, C] with N = H*W."""
    B, C, H, W = x.shape
    return x.reshape(B, C, H * W).swapaxes(1, 2), (B, C, H, W)


def _untokens(t: Tensor, dims: Tuple[int, int, int, int]) -> Tensor:
    B, C, H, W = dims
    return t.swapaxes(1, 2).reshape(B, C, H, W)


class PoolingMixer:
    """Average of each token's neighborhood minus the token itself.

    The subtraction cancels the block's own residual connection, so the
    branch contributes pure neighborhood differences. No parameters.
    """

    def __init__(self, pool_size: int = 3):
        if pool_size < 1 or pool_size % 2 == 0:
            raise InvalidArgument(f"pooling mixer: pool size must be a positive odd integer, got {pool_size}")
        self.pool_size = pool_size

    def __call__(self, x: Tensor) -> Tensor:
        return avg_pool2d_excl(x, self.pool_size) - x

    def named_parameters(self, prefix: str) -> Iterator[Tuple[str, Tensor]]:
        return iter(())

    def frozen_parameters(self, prefix: str) -> Iterator[Tuple[str, Tensor]]:
        return iter(())


class IdentityMixer:
    def __call__(self, x: Tensor) -> Tensor:
        return x

    def named_parameters(self, prefix: str) -> Iterator[Tuple[str, Tensor]]:
        return iter(())

    def frozen_parameters(self, prefix: str) -> Iterator[Tuple[str, Tensor]]:
        return iter(())


class RandomMatrixMixer:
    """Frozen row-stochastic N x N matrix applied across tokens.

    The matrix is drawn uniform [0, 1), row-softmaxed, renormalized so each
    row sums to 1 in f64, then frozen: it is excluded from the optimizer but
    persisted in checkpoints.
    """

    def __init__(self, n_tokens: int, rng: np.random.Generator, dtype="f32"):
        if n_tokens < 1:
            raise InvalidArgument(f"random-matrix mixer: token count must be >= 1, got {n_tokens}")
        self.n_tokens = n_tokens
        raw = rng.random((n_tokens, n_tokens), dtype=np.float64)
        e = np.exp(raw - raw.max(axis=1, keepdims=True))
        w = e / e.sum(axis=1, keepdims=True)
        w /= w.sum(axis=1, keepdims=True)
        self.weight = Tensor(w, requires_grad=False, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        B, C, H, W = x.shape
        n = H * W
        if n != self.n_tokens:
            raise InvalidArgument(
                f"random-matrix mixer is bound to {self.n_tokens} tokens, input has {n} ({H}x{W})"
            )
        t, dims = _tokens(x)
        return _untokens(matmul(self.weight, t), dims)

    def named_parameters(self, prefix: str) -> Iterator[Tuple[str, Tensor]]:
        return iter(())

    def frozen_parameters(self, prefix: str) -> Iterator[Tuple[str, Tensor]]:
        yield f"{prefix}.weight", self.weight


class DepthwiseConvMixer:
    """Per-channel k x k convolution, shape preserving."""

    def __init__(self, channels: int, kernel: int, rng: np.random.Generator, dtype="f32"):
        if kernel < 1 or kernel % 2 == 0:
            raise InvalidArgument(f"depthwise mixer: kernel must be a positive odd integer, got {kernel}")
        self.channels = channels
        self.kernel = kernel
        self.weight = Tensor(trunc_normal(rng, (channels, 1, kernel, kernel)), requires_grad=True, dtype=dtype)
        self.bias = Tensor(np.zeros(channels), requires_grad=True, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        p = self.kernel // 2
        return conv2d(x, self.weight, self.bias, stride=(1, 1), padding=(p, p), groups=self.channels)

    def named_parameters(self, prefix: str) -> Iterator[Tuple[str, Tensor]]:
        yield f"{prefix}.weight", self.weight
        yield f"{prefix}.bias", self.bias

    def frozen_parameters(self, prefix: str) -> Iterator[Tuple[str, Tensor]]:
        return iter(())


class AttentionMixer:
    """Multi-head self-attention over the flattened token grid."""

    def __init__(self, channels: int, heads: Optional[int], rng: np.random.Generator, dtype="f32"):
        if heads is None:
            heads = max(1, channels // HEAD_DIM)
        if heads < 1 or channels % heads != 0:
            raise InvalidArgument(f"attention mixer: channels {channels} not divisible by heads {heads}")
        self.channels = channels
        self.heads = heads
        self.head_dim = channels // heads
        c = channels
        self.qkv_weight = Tensor(trunc_normal(rng, (3 * c, c)), requires_grad=True, dtype=dtype)
        self.qkv_bias = Tensor(np.zeros(3 * c), requires_grad=True, dtype=dtype)
        self.proj_weight = Tensor(trunc_normal(rng, (c, c)), requires_grad=True, dtype=dtype)
        self.proj_bias = Tensor(np.zeros(c), requires_grad=True, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        t, dims = _tokens(x)
        B, C, H, W = dims
        n, h, d = H * W, self.heads, self.head_dim
        qkv = matmul(t, self.qkv_weight.swapaxes(0, 1)) + self.qkv_bias.reshape(1, 1, 3 * C)
        q = _split_heads(narrow(qkv, 2, 0, C), B, n, h, d)
        k = _split_heads(narrow(qkv, 2, C, C), B, n, h, d)
        v = _split_heads(narrow(qkv, 2, 2 * C, C), B, n, h, d)
        scores = matmul(q, k.swapaxes(2, 3)) * (1.0 / math.sqrt(d))
        attn = softmax_lastdim(scores)
        mixed = matmul(attn, v).swapaxes(1, 2).reshape(B, n, C)
        out = matmul(mixed, self.proj_weight.swapaxes(0, 1)) + self.proj_bias.reshape(1, 1, C)
        return _untokens(out, dims)

    def named_parameters(self, prefix: str) -> Iterator[Tuple[str, Tensor]]:
        yield f"{prefix}.qkv.weight", self.qkv_weight
        yield f"{prefix}.qkv.bias", self.qkv_bias
        yield f"{prefix}.proj.weight", self.proj_weight
        yield f"{prefix}.proj.bias", self.proj_bias

    def frozen_parameters(self, prefix: str) -> Iterator[Tuple[str, Tensor]]:
        return iter(())


def _split_heads(t: Tensor, B: int, n: int, h: int, d: int) -> Tensor:
    return t.reshape(B, n, h, d).swapaxes(1, 2)


class SpatialFCMixer:
    """One fully connected layer across tokens, shared over channels."""

    def __init__(self, n_tokens: int, rng: np.random.Generator, dtype="f32"):
        if n_tokens < 1:
            raise InvalidArgument(f"spatial-fc mixer: token count must be >= 1, got {n_tokens}")
        self.n_tokens = n_tokens
        self.weight = Tensor(trunc_normal(rng, (n_tokens, n_tokens)), requires_grad=True, dtype=dtype)
        self.bias = Tensor(np.zeros(n_tokens), requires_grad=True, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        B, C, H, W = x.shape
        n = H * W
        if n != self.n_tokens:
            raise InvalidArgument(
                f"spatial-fc mixer is bound to {self.n_tokens} tokens, input has {n} ({H}x{W})"
            )
        flat = x.reshape(B, C, n)
        out = matmul(flat, self.weight.swapaxes(0, 1)) + self.bias.reshape(1, 1, n)
        return out.reshape(B, C, H, W)

    def named_parameters(self, prefix: str) -> Iterator[Tuple[str, Tensor]]:
        yield f"{prefix}.weight", self.weight
        yield f"{prefix}.bias", self.bias

    def frozen_parameters(self, prefix: str) -> Iterator[Tuple[str, Tensor]]:
        return iter(())


def make_mixer(config: MixerConfig, channels: int, n_tokens: int, rng: np.random.Generator, dtype="f32"):
    """Instantiate the runtime mixer for one block.

    ``n_tokens`` binds resolution-dependent mixers (random matrix, spatial FC)
    to the build-time grid; other mixers ignore it.
    """
    config.validate()
    if config.kind == "pooling":
        return PoolingMixer(config.pool_size)
    if config.kind == "identity":
        return IdentityMixer()
    if config.kind == "random_matrix":
        return RandomMatrixMixer(n_tokens, rng, dtype=dtype)
    if config.kind == "depthwise_conv":
        return DepthwiseConvMixer(channels, config.kernel, rng, dtype=dtype)
    if config.kind == "attention":
        return AttentionMixer(channels, config.heads, rng, dtype=dtype)
    if config.kind == "spatial_fc":
        return SpatialFCMixer(n_tokens, rng, dtype=dtype)
    raise InvalidArgument(f"unknown mixer kind {config.kind!r}")
