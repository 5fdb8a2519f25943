"""Shared prior estimator: projection, Retinex decomposition and their losses.

The hazy image is first projected (``phi_project``) to strip content the
decomposition should not explain, then split into a single-channel
illumination map and an RGB reflectance map. The same estimator applied to
the enhancer output yields the second reflectance used by the consistency loss.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import ConvStack, Module
from .tensor import EPS, ContractError, NumericFault, Tensor


@dataclass
class PriorBundle:
    i_project: Tensor   # (n, 3, h, w)
    l_map: Tensor       # (n, 1, h, w), in [eps, 1]
    r_map: Tensor       # (n, 3, h, w), in [0, 1]
    l_initial: Tensor   # (n, 1, h, w), channel max of the source image


class SpeNets(Module):
    def __init__(self, rng: np.random.Generator, hidden: int = 16, depth: int = 3):
        self.phi_project = ConvStack(3, 3, rng, hidden, depth)
        self.phi_illum = ConvStack(3, 1, rng, hidden, depth)
        self.phi_reflect = ConvStack(3, 3, rng, hidden, depth)
        # the projection starts as the identity map (residual head at zero)
        last = self.phi_project.layers[-1]
        last.weight.data *= 0.0


def _check_rgb(i: Tensor, what: str):
    if i.ndim != 4 or i.shape[1] != 3:
        raise ContractError(f"{what} expects an (n, 3, h, w) image, got {i.shape}")


def initial_illumination(i: Tensor) -> Tensor:
    """Per-pixel max over the RGB channels."""
    _check_rgb(i, "initial_illumination")
    return T.channel_max(i)


def _finite(t: Tensor, name: str) -> Tensor:
    if not np.all(np.isfinite(t.data)):
        raise NumericFault(f"non-finite values in {name}")
    return t


def project(nets: SpeNets, i: Tensor) -> Tensor:
    return _finite(i + nets.phi_project(i), "phi_project output")


def decompose(nets: SpeNets, i_project: Tensor) -> tuple[Tensor, Tensor]:
    l_map = T.maximum(T.sigmoid(nets.phi_illum(i_project)), EPS)
    r_map = T.sigmoid(nets.phi_reflect(i_project))
    return _finite(l_map, "illumination"), _finite(r_map, "reflectance")


def estimate(nets: SpeNets, i_hazy: Tensor) -> PriorBundle:
    _check_rgb(i_hazy, "estimate")
    i_project = project(nets, i_hazy)
    l_map, r_map = decompose(nets, i_project)
    return PriorBundle(i_project, l_map, r_map, initial_illumination(T.detach(i_hazy)))


def mse(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ContractError(f"shape mismatch: {a.shape} vs {b.shape}")
    d = a - b
    return T.reduce_mean(d * d)


def loss_project(i_hazy: Tensor, i_project: Tensor) -> Tensor:
    return mse(i_hazy, i_project)


def loss_reflect(r1: Tensor, r2: Tensor) -> Tensor:
    return mse(r1, r2)


def tv_l1(l: Tensor) -> Tensor:
    """Mean absolute vertical difference plus mean absolute horizontal difference.

    A direction with no valid pairs (size-1 axis) contributes zero.
    """
    h, w = l.shape[2:]
    if h < 2 and w < 2:
        raise ContractError(f"tv_l1 needs at least one spatial dim >= 2, got {h}x{w}")
    total = None
    if h >= 2:
        dy = T.slice_axis(l, 2, 1, h) - T.slice_axis(l, 2, 0, h - 1)
        total = T.reduce_mean(T.abs(dy))
    if w >= 2:
        dx = T.slice_axis(l, 3, 1, w) - T.slice_axis(l, 3, 0, w - 1)
        term = T.reduce_mean(T.abs(dx))
        total = term if total is None else total + term
    return total


def loss_retinex(r: Tensor, l: Tensor, i_project: Tensor, l_initial: Tensor) -> Tensor:
    """Reconstruction + stop-gradient reflectance guide + initialisation pull + TV."""
    try:
        np.broadcast_shapes(l.shape, r.shape)
    except ValueError:
        raise ContractError(f"illumination {l.shape} does not broadcast to {r.shape}") from None
    if l.shape != l_initial.shape:
        raise ContractError(f"l {l.shape} vs l_initial {l_initial.shape}")
    recon = mse(r * l, i_project)
    guide = mse(r, T.div(i_project, T.detach(l)))
    init = mse(l, l_initial)
    return recon + guide + init + tv_l1(l)
