"""Normalization layers: per-sample, per-position, per-channel-batch, or none.

All variants carry per-channel affine parameters gamma/beta of shape [C] and
use the biased (divide-by-count) variance in the denominator. Inputs are
channel-first [B, C, H, W].
"""

from __future__ import annotations

from typing import Iterator, Tuple

import numpy as np

from .tensor import InvalidArgument, Tensor, sqrt

NORM_KINDS = ("mln", "ln", "bn", "none")


class _AffineNorm:
    def __init__(self, channels: int, eps: float = 1e-5, dtype="f32"):
        if eps <= 0:
            raise InvalidArgument(f"norm eps must be positive, got {eps}")
        self.channels = channels
        self.eps = eps
        self.gamma = Tensor(np.ones(channels), requires_grad=True, dtype=dtype)
        self.beta = Tensor(np.zeros(channels), requires_grad=True, dtype=dtype)

    def named_parameters(self, prefix: str) -> Iterator[Tuple[str, Tensor]]:
        yield f"{prefix}.gamma", self.gamma
        yield f"{prefix}.beta", self.beta

    def named_buffers(self, prefix: str) -> Iterator[Tuple[str, np.ndarray]]:
        return iter(())

    def _affine(self, y: Tensor) -> Tensor:
        c = self.channels
        return y * self.gamma.reshape(1, c, 1, 1) + self.beta.reshape(1, c, 1, 1)


class ModifiedLayerNorm(_AffineNorm):
    """Normalizes each sample over all of (C, H, W), affine per channel."""

    def __call__(self, x: Tensor, mode: str = "eval") -> Tensor:
        mu = x.mean(axis=(1, 2, 3), keepdims=True)
        d = x - mu
        var = (d * d).mean(axis=(1, 2, 3), keepdims=True)
        return self._affine(d / sqrt(var + self.eps))


class ChannelLayerNorm(_AffineNorm):
    """Normalizes each (b, h, w) position over channels only."""

    def __call__(self, x: Tensor, mode: str = "eval") -> Tensor:
        mu = x.mean(axis=1, keepdims=True)
        d = x - mu
        var = (d * d).mean(axis=1, keepdims=True)
        return self._affine(d / sqrt(var + self.eps))


class BatchNorm(_AffineNorm):
    """Per-channel batch normalization with running statistics.

    Train mode normalizes with biased batch statistics and updates the
    running buffers with momentum (the running variance stores the unbiased
    estimate). Eval mode normalizes with the running buffers.
    """

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1, dtype="f32"):
        super().__init__(channels, eps, dtype)
        self.momentum = momentum
        np_dtype = self.gamma.dtype
        self.running_mean = np.zeros(channels, dtype=np_dtype)
        self.running_var = np.ones(channels, dtype=np_dtype)

    def named_buffers(self, prefix: str) -> Iterator[Tuple[str, np.ndarray]]:
        yield f"{prefix}.running_mean", self.running_mean
        yield f"{prefix}.running_var", self.running_var

    def __call__(self, x: Tensor, mode: str = "eval") -> Tensor:
        c = self.channels
        if mode == "train":
            B, _, H, W = x.shape
            count = B * H * W
            if count < 2:
                raise InvalidArgument(
                    f"batch_norm: train mode needs B*H*W >= 2 elements per channel, got {count}"
                )
            mu = x.mean(axis=(0, 2, 3), keepdims=True)
            d = x - mu
            var = (d * d).mean(axis=(0, 2, 3), keepdims=True)
            m = self.momentum
            unbiased = var.data.reshape(c) * (count / (count - 1))
            # In-place so checkpoint buffer references stay valid.
            self.running_mean[:] = (1 - m) * self.running_mean + m * mu.data.reshape(c)
            self.running_var[:] = (1 - m) * self.running_var + m * unbiased
            return self._affine(d / sqrt(var + self.eps))
        mu = Tensor(self.running_mean.reshape(1, c, 1, 1))
        denom = Tensor(np.sqrt(self.running_var + self.eps).reshape(1, c, 1, 1))
        return self._affine((x - mu) / denom)


class NoNorm:
    """Identity stand-in so 'no normalization' stays a selectable variant."""

    def __init__(self, channels: int, dtype="f32"):
        self.channels = channels

    def __call__(self, x: Tensor, mode: str = "eval") -> Tensor:
        return x

    def named_parameters(self, prefix: str) -> Iterator[Tuple[str, Tensor]]:
        return iter(())

    def named_buffers(self, prefix: str) -> Iterator[Tuple[str, np.ndarray]]:
        return iter(())


def make_norm(kind: str, channels: int, dtype="f32"):
    if kind == "mln":
        return ModifiedLayerNorm(channels, dtype=dtype)
    if kind == "ln":
        return ChannelLayerNorm(channels, dtype=dtype)
    if kind == "bn":
        return BatchNorm(channels, dtype=dtype)
    if kind == "none":
        return NoNorm(channels, dtype=dtype)
    raise InvalidArgument(f"unknown norm kind {kind!r}, expected one of {NORM_KINDS}")
