"""Dynamic wavelet separable convolution.

A multi-level cascade: each level decomposes the previous level's
(unconvolved) low band, runs a depthwise conv over the subbands and a 1x1
conv across them, and the levels are then folded back from the deepest one
upward, each adding its reconstruction into the next-shallower low band
before the inverse transform. A spatial depthwise ``base`` conv runs in
parallel and the sum is scaled per channel.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .nn import Module, kaiming
from .tensor import ContractError, Tensor
from .wavelet import SubbandSet, crop_to, dwt2, idwt2, make_filters, pad_even

SUBBAND_MODES = ("broad", "ll-only")


@dataclass
class CascadeState:
    """Per-level convolved subbands and the pre-padding size of each level's input."""
    bands: list[SubbandSet] = field(default_factory=list)
    sizes: list[tuple[int, int]] = field(default_factory=list)


class DwscLayer(Module):
    def __init__(self, channels: int, rng: np.random.Generator, levels: int = 2, k: int = 3,
                 wavelet: str = "haar", subband_mode: str = "broad", padding_mode: str = "replicate"):
        if levels < 0:
            raise ContractError("levels must be >= 0")
        if subband_mode not in SUBBAND_MODES:
            raise ContractError(f"subband_mode must be one of {SUBBAND_MODES}")
        c = channels
        self.channels, self.levels, self.k = c, levels, k
        self.subband_mode, self.padding_mode = subband_mode, padding_mode
        self.bank = make_filters(wavelet)
        self.base_w = kaiming(rng, (c, 1, k, k), k * k, gain=1.0)
        spatial_c = 4 * c if subband_mode == "broad" else c
        # wavelet-path weights start small so the layer begins close to its base conv
        self.level_w = [kaiming(rng, (spatial_c, 1, k, k), k * k, gain=0.5) for _ in range(levels)]
        self.point_w = [kaiming(rng, (4 * c, 4 * c, 1, 1), 4 * c, gain=0.5) for _ in range(levels)]
        self.scale = Tensor(np.ones(c, np.float32), requires_grad=True)

    def _conv_dw(self, x: Tensor, w: Tensor) -> Tensor:
        return T.conv2d(x, w, padding=self.k // 2, padding_mode=self.padding_mode, groups=x.shape[1])

    def cascade(self, x: Tensor) -> tuple[Tensor, CascadeState]:
        """Wavelet path only; returns the level-1 reconstruction (zeros if levels == 0)."""
        state = CascadeState()
        x_ll = x
        for i in range(self.levels):
            x_ll, size = pad_even(x_ll)
            state.sizes.append(size)
            s = dwt2(x_ll, self.bank)
            if self.subband_mode == "broad":
                y = self._conv_dw(T.concat(list(s), axis=1), self.level_w[i])
            else:
                y = T.concat([self._conv_dw(s.ll, self.level_w[i]), s.lh, s.hl, s.hh], axis=1)
            y = T.conv2d(y, self.point_w[i])
            state.bands.append(SubbandSet(*T.split(y, 4, axis=1)))
            x_ll = s.ll
        q = None
        for i in reversed(range(self.levels)):
            b = state.bands[i]
            ll = b.ll if q is None else b.ll + q
            q = crop_to(idwt2(SubbandSet(ll, b.lh, b.hl, b.hh), self.bank), state.sizes[i])
        if q is None:
            q = Tensor.zeros(x.shape, dtype=x.dtype)
        return q, state

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ContractError(f"DWSC layer expects {self.channels} channels, got shape {x.shape}")
        q, _ = self.cascade(x)
        base = self._conv_dw(x, self.base_w)
        return (q + base) * T.reshape(self.scale, (1, self.channels, 1, 1))

    def receptive_field(self) -> int:
        """Largest 1-d impulse-response support of the layer.

        With filter length ``L`` a level-``i`` coefficient sees
        ``S_i = 1 + (L-1)(2^i - 1)`` input samples and an impulse touches at most
        ``m_i = floor((S_i - 1) / 2^i) + 1`` coefficients. A ``k``-tap conv widens
        that to ``m_i + k - 1`` coefficients, which synthesize back onto
        ``(m_i + k - 2) * 2^i + S_i`` samples. For Haar this is ``k * 2^i``.
        """
        rf = self.k
        L = self.bank.length
        for i in range(1, self.levels + 1):
            s_i = 1 + (L - 1) * (2 ** i - 1)
            m_i = (s_i - 1) // 2 ** i + 1
            rf = max(rf, (m_i + self.k - 2) * 2 ** i + s_i)
        return rf

    def param_count(self) -> int:
        return self.num_parameters()


def dense_equivalent_count(c: int, rf: int) -> int:
    """Weights of a dense c->c convolution with an rf x rf kernel (no bias)."""
    return c * c * rf * rf


def set_identity(layer: DwscLayer) -> DwscLayer:
    """Centre-tap depthwise kernels, identity pointwise mixing, unit scale."""
    def centre(w: Tensor):
        w.data[...] = 0.0
        w.data[:, :, layer.k // 2, layer.k // 2] = 1.0
    centre(layer.base_w)
    for lw, pw in zip(layer.level_w, layer.point_w):
        centre(lw)
        pw.data[...] = np.eye(pw.shape[0], dtype=pw.dtype)[:, :, None, None]
    layer.scale.data[...] = 1.0
    return layer
