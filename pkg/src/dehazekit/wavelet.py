"""Single-level 2-d discrete wavelet transform with periodic extension.

The analysis step along one axis is a stride-2 cross-correlation,
``a[k] = sum_m lo[m] * x[(2k + m) mod N]`` (likewise ``d`` with ``hi``).
Synthesis is implemented as the exact transpose of analysis, so for
orthonormal banks it is also the exact inverse, and each transform's
gradient is simply the other transform.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import sqrt

import numpy as np

from . import tensor as T
from .tensor import ContractError, Tensor


class UnsupportedFamily(ValueError):
    pass


@dataclass(frozen=True)
class WaveletFilterBank:
    family: str
    dec_lo: np.ndarray
    dec_hi: np.ndarray
    rec_lo: np.ndarray
    rec_hi: np.ndarray

    @property
    def length(self) -> int:
        return len(self.dec_lo)


@dataclass
class SubbandSet:
    """Four subbands of one decomposition level. ``lh`` is low-pass along
    height and high-pass along width; ``hl`` the reverse."""
    ll: Tensor
    lh: Tensor
    hl: Tensor
    hh: Tensor

    def __iter__(self):
        return iter((self.ll, self.lh, self.hl, self.hh))

    @property
    def shape(self):
        return self.ll.shape


def _qmf(lo: np.ndarray) -> np.ndarray:
    # hi[k] = (-1)^k lo[L-1-k]
    return lo[::-1] * np.array([(-1) ** k for k in range(len(lo))], dtype=np.float64)


def make_filters(family: str = "haar") -> WaveletFilterBank:
    """Orthonormal analysis/synthesis filters for ``haar`` or ``db2``."""
    if family == "haar":
        lo = np.array([1.0, 1.0]) / sqrt(2.0)
    elif family == "db2":
        s3 = sqrt(3.0)
        lo = np.array([1 + s3, 3 + s3, 3 - s3, 1 - s3]) / (4 * sqrt(2.0))
    else:
        raise UnsupportedFamily(f"unsupported wavelet family {family!r} (expected 'haar' or 'db2')")
    hi = _qmf(lo)
    # synthesis filters are the time-reversed analysis filters
    return WaveletFilterBank(family, lo, hi, lo[::-1].copy(), hi[::-1].copy())


def _analysis(x: np.ndarray, lo, hi, axis: int):
    n = x.shape[axis]
    idx = np.arange(0, n, 2)
    a = 0.0
    d = 0.0
    for m in range(len(lo)):
        xs = np.take(x, (idx + m) % n, axis=axis)
        a = a + lo[m] * xs
        d = d + hi[m] * xs
    return a, d


def _synthesis(a: np.ndarray, d: np.ndarray, lo, hi, axis: int) -> np.ndarray:
    half = a.shape[axis]
    n = 2 * half
    shape = list(a.shape)
    shape[axis] = n
    x = np.zeros(shape, dtype=a.dtype)
    idx = np.arange(0, n, 2)
    for m in range(len(lo)):
        contrib = lo[m] * a + hi[m] * d
        # x[(2k+m) mod n] += contrib[k]; indices are distinct within one m
        sl = [slice(None)] * x.ndim
        sl[axis] = (idx + m) % n
        x[tuple(sl)] += contrib
    return x


def _dwt2_np(x: np.ndarray, bank: WaveletFilterBank):
    lo = bank.dec_lo.astype(x.dtype)
    hi = bank.dec_hi.astype(x.dtype)
    a_w, d_w = _analysis(x, lo, hi, axis=3)
    ll, hl = _analysis(a_w, lo, hi, axis=2)
    lh, hh = _analysis(d_w, lo, hi, axis=2)
    return ll, lh, hl, hh


def _idwt2_np(ll, lh, hl, hh, bank: WaveletFilterBank):
    lo = bank.dec_lo.astype(ll.dtype)
    hi = bank.dec_hi.astype(ll.dtype)
    a_w = _synthesis(ll, hl, lo, hi, axis=2)
    d_w = _synthesis(lh, hh, lo, hi, axis=2)
    return _synthesis(a_w, d_w, lo, hi, axis=3)


def dwt2(x: Tensor, bank: WaveletFilterBank) -> SubbandSet:
    """One decomposition level; spatial dims must be even (see :func:`pad_even`)."""
    if x.ndim != 4:
        raise ContractError(f"dwt2 expects (n, c, h, w), got {x.shape}")
    h, w = x.shape[2:]
    if h % 2 or w % 2:
        raise ContractError(f"dwt2 needs even spatial dims, got {h}x{w}; call pad_even first")
    bands = _dwt2_np(x.data, bank)
    stacked = np.stack(bands, axis=0)

    def back(g):
        return (_idwt2_np(g[0], g[1], g[2], g[3], bank),)
    joint = T.make(stacked, (x,), back)
    return SubbandSet(*(_pick(joint, i) for i in range(4)))


def _pick(joint: Tensor, i: int) -> Tensor:
    shape, dtype = joint.shape, joint.dtype

    def back(g):
        full = np.zeros(shape, dtype=dtype)
        full[i] = g
        return (full,)
    return T.make(joint.data[i], (joint,), back)


def idwt2(s: SubbandSet, bank: WaveletFilterBank) -> Tensor:
    shapes = {b.shape for b in s}
    if len(shapes) != 1:
        raise ContractError(f"subband shapes disagree: {sorted(shapes)}")
    out = _idwt2_np(s.ll.data, s.lh.data, s.hl.data, s.hh.data, bank)

    def back(g):
        return _dwt2_np(g, bank)
    return T.make(out, tuple(s), back)


def pad_even(x: Tensor) -> tuple[Tensor, tuple[int, int]]:
    """Reflect-pad bottom/right by one where h or w is odd."""
    h, w = x.shape[2:]
    ph, pw = h % 2, w % 2
    if not (ph or pw):
        return x, (h, w)
    mode = "reflect" if min(h, w) > 1 else "replicate"
    return T.pad2d(x, (0, ph, 0, pw), mode), (h, w)


def crop_to(x: Tensor, size: tuple[int, int]) -> Tensor:
    h, w = size
    if x.shape[2:] == (h, w):
        return x
    return T.crop(x, h, w)
