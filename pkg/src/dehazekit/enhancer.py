"""Dehazing network: stem, residual DWSC blocks, concat fusion, sigmoid head.

The head predicts a correction in logit space on top of the input image, so an
untrained network starts close to the identity map instead of a flat grey.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .dwsc import DwscLayer
from .nn import Conv2d, Module
from .tensor import ContractError, NumericFault, Tensor

SKIP_CLIP = 0.01   # keeps the input logit finite at pure black or white
HEAD_GAIN = 0.1


@dataclass
class EnhancerConfig:
    channels: int = 16
    blocks: int = 3
    levels: int = 2
    k: int = 3
    wavelet: str = "haar"
    subband_mode: str = "broad"
    use_dwsc: bool = True   # False swaps every DWSC for a plain depthwise conv (ablation)


class ResidualBlock(Module):
    """x + relu(pointwise(dwsc(x)))."""

    def __init__(self, c: int, rng, cfg: EnhancerConfig):
        levels = cfg.levels if cfg.use_dwsc else 0
        self.dwsc = DwscLayer(c, rng, levels=levels, k=cfg.k, wavelet=cfg.wavelet,
                              subband_mode=cfg.subband_mode)
        self.mix = Conv2d(c, c, 1, rng)

    def forward(self, x: Tensor) -> Tensor:
        return x + T.relu(self.mix(self.dwsc(x)))


class EnhancerNet(Module):
    def __init__(self, rng: np.random.Generator, cfg: EnhancerConfig | None = None):
        self.cfg = cfg = cfg or EnhancerConfig()
        c = cfg.channels
        self.stem = Conv2d(3, c, 3, rng)
        self.blocks = [ResidualBlock(c, rng, cfg) for _ in range(cfg.blocks)]
        self.fusion = Conv2d(c * cfg.blocks, c, 1, rng)
        self.head = Conv2d(c, 3, 3, rng, gain=HEAD_GAIN)

    def forward(self, i_hazy: Tensor) -> tuple[Tensor, Tensor]:
        return dehaze_forward(self, i_hazy)


def dehaze_forward(net: EnhancerNet, i_hazy: Tensor) -> tuple[Tensor, Tensor]:
    """Return (dehazed image in [0, 1], fused feature tensor)."""
    if i_hazy.ndim != 4 or i_hazy.shape[1] != 3:
        raise ContractError(f"enhancer expects (n, 3, h, w), got {i_hazy.shape}")
    x = T.relu(net.stem(i_hazy))
    outs = []
    for block in net.blocks:
        x = block(x)
        outs.append(x)
    features = T.relu(net.fusion(T.concat(outs, axis=1)))
    j_hat = T.sigmoid(net.head(features) + logit(i_hazy))
    if not (np.all(np.isfinite(features.data)) and np.all(np.isfinite(j_hat.data))):
        raise NumericFault("non-finite activations in enhancer")
    return j_hat, features


def logit(x: Tensor) -> Tensor:
    c = T.clamp(x, SKIP_CLIP, 1.0 - SKIP_CLIP)
    return T.log(c, 0.0) - T.log(1.0 - c, 0.0)
