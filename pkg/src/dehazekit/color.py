"""Adaptive colour corrector: chromaticity maps and the L1 colour loss.

A colour map is an (n, 3, h, w) tensor whose three values at each pixel are
non-negative and sum to one.
"""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .nn import ConvStack, Module
from .tensor import EPS, ContractError, Tensor


def chroma(i: Tensor, eps: float = EPS) -> Tensor:
    """Per-pixel channel ratios ``i_k / sum_k i_k``.

    The sum goes through the guarded division, so pixels whose channel sum is
    below ``eps`` are divided by ``eps`` (near-black pixels map close to 0).
    """
    if i.ndim != 4 or i.shape[1] != 3:
        raise ContractError(f"chroma expects (n, 3, h, w), got {i.shape}")
    if np.any(i.data < 0):
        raise ContractError("chroma needs non-negative input")
    return T.div(i, T.reduce_sum(i, axis=1), eps)


class ColorNet(Module):
    """Feature tensor -> colour map through a softmax head over channels."""

    def __init__(self, in_channels: int, rng: np.random.Generator, hidden: int = 16, depth: int = 2):
        self.in_channels = in_channels
        self.phi_color = ConvStack(in_channels, 3, rng, hidden, depth)

    def forward(self, features: Tensor) -> Tensor:
        return predict_color(self, features)


def predict_color(net: ColorNet, features: Tensor) -> Tensor:
    if features.ndim != 4 or features.shape[1] != net.in_channels:
        raise ContractError(f"colour net expects {net.in_channels} channels, got {features.shape}")
    return T.softmax(net.phi_color(features), axis=1)


def loss_color(c_f: Tensor, c_hat: Tensor) -> Tensor:
    """Mean absolute difference between two colour maps."""
    if c_f.shape != c_hat.shape:
        raise ContractError(f"shape mismatch: {c_f.shape} vs {c_hat.shape}")
    return T.reduce_mean(T.abs(c_f - c_hat))
