"""Atmospheric-scattering haze synthesis and procedural toy scenes."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ContractError, Tensor

T_MIN = 0.05


@dataclass
class HazeScene:
    clean: Tensor       # (1, 3, h, w) in [0, 1]
    depth: Tensor       # (1, 1, h, w), non-negative
    beta: float
    airlight: float | tuple[float, float, float] = 1.0

    def __post_init__(self):
        if np.any(self.depth.data < 0):
            raise ContractError("depth must be non-negative")
        if self.beta <= 0:
            raise ContractError(f"beta must be positive, got {self.beta}")


def _airlight_array(airlight, dtype=np.float32) -> np.ndarray:
    a = np.asarray(airlight, dtype=dtype)
    if a.ndim == 0:
        return a
    if a.shape != (3,):
        raise ContractError(f"airlight must be scalar or length 3, got shape {a.shape}")
    return a.reshape(1, 3, 1, 1)


def transmission(depth: Tensor, beta: float) -> Tensor:
    """t = exp(-beta * depth)."""
    if beta <= 0:
        raise ContractError(f"beta must be positive, got {beta}")
    if np.any(depth.data < 0):
        raise ContractError("depth must be non-negative")
    return T.exp(depth * (-float(beta)))


def synthesize(scene: HazeScene) -> Tensor:
    """I = J t + A (1 - t), clamped to [0, 1]."""
    t = transmission(scene.depth, scene.beta).data
    a = _airlight_array(scene.airlight)
    hazy = scene.clean.data * t + a * (1.0 - t)
    return Tensor(np.clip(hazy, 0.0, 1.0).astype(np.float32))


def ideal_dehaze(i: Tensor, t: Tensor, airlight, t_min: float = T_MIN) -> Tensor:
    """Invert the scattering model given the true transmission and airlight."""
    a = _airlight_array(airlight, i.dtype)
    tt = np.maximum(t.data, t_min)
    j = (i.data - a * (1.0 - tt)) / tt
    return Tensor(np.clip(j, 0.0, 1.0).astype(i.dtype))


# ---------------------------------------------------------------------------
# procedural scenes
# ---------------------------------------------------------------------------

def _clean_image(rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32) / max(size - 1, 1)
    c0, c1 = rng.uniform(0.05, 0.95, size=(2, 3)).astype(np.float32)
    angle = rng.uniform(0, 2 * np.pi)
    ramp = np.cos(angle) * xx + np.sin(angle) * yy
    ramp = (ramp - ramp.min()) / max(float(np.ptp(ramp)), 1e-6)
    img = c0[:, None, None] * (1 - ramp) + c1[:, None, None] * ramp

    cell = int(rng.choice([4, 6, 8, 12]))
    if rng.random() < 0.5:
        checker = ((yy * (size - 1)) // cell + (xx * (size - 1)) // cell) % 2
        tint = rng.uniform(-0.25, 0.25, size=3).astype(np.float32)
        img = img + checker[None] * tint[:, None, None]

    for _ in range(int(rng.integers(2, 6))):
        h, w = rng.integers(size // 8, size // 2, size=2)
        top, left = rng.integers(0, size - h), rng.integers(0, size - w)
        img[:, top:top + h, left:left + w] = rng.uniform(0.0, 1.0, size=3)[:, None, None]
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def _depth_map(rng: np.random.Generator, size: int) -> tuple[np.ndarray, dict]:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32) / max(size - 1, 1)
    near, far = sorted(rng.uniform(0.2, 2.0, size=2))
    if rng.random() < 0.5:
        angle = float(rng.uniform(0, 2 * np.pi))
        ramp = np.cos(angle) * xx + np.sin(angle) * yy
        ramp = (ramp - ramp.min()) / max(float(np.ptp(ramp)), 1e-6)
        params = {"kind": "ramp", "near": near, "far": far, "angle": angle}
    else:
        cy, cx = rng.uniform(0.2, 0.8, size=2)
        ramp = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
        ramp = ramp / max(float(ramp.max()), 1e-6)
        params = {"kind": "radial", "near": near, "far": far, "cy": float(cy), "cx": float(cx)}
    return (near + (far - near) * ramp).astype(np.float32), params


@dataclass
class ToyDataset:
    scenes: list[HazeScene]
    hazy: list[Tensor]
    depth_params: list[dict]
    paired: list[tuple[Tensor, Tensor]]      # (hazy, clean) for evaluation
    unpaired_hazy: list[Tensor]             # training hazy images
    unpaired_clean: list[Tensor]            # clean images from disjoint scenes


def make_scene(rng: np.random.Generator, size: int, beta_range, airlight_range) -> tuple[HazeScene, dict]:
    clean = _clean_image(rng, size)
    depth, params = _depth_map(rng, size)
    beta = float(rng.uniform(*beta_range))
    airlight = float(rng.uniform(*airlight_range))
    scene = HazeScene(Tensor(clean[None]), Tensor(depth[None, None]), beta, airlight)
    return scene, params


def make_toy_dataset(count: int, size: int, beta_range=(0.3, 1.0), airlight_range=(0.8, 1.0),
                     seed: int = 0, eval_count: int | None = None) -> ToyDataset:
    """Deterministic synthetic scenes split three ways.

    The first ``eval_count`` scenes form the paired evaluation split. The rest
    are divided into two disjoint halves: the hazy images of one half and the
    clean images of the other make up the unpaired training split.
    """
    if count < 1:
        raise ContractError("count must be >= 1")
    if size % 2:
        raise ContractError(f"size must be even, got {size}")
    rng = np.random.default_rng(seed)
    scenes, params, hazy = [], [], []
    for _ in range(count):
        scene, p = make_scene(rng, size, beta_range, airlight_range)
        scenes.append(scene)
        params.append(p)
        hazy.append(synthesize(scene))
    if eval_count is None:
        eval_count = max(1, count // 4) if count > 1 else 1
    eval_count = min(eval_count, count)
    paired = [(hazy[i], scenes[i].clean) for i in range(eval_count)]
    rest = list(range(eval_count, count))
    half = (len(rest) + 1) // 2
    unpaired_hazy = [hazy[i] for i in rest[:half]]
    unpaired_clean = [scenes[i].clean for i in rest[half:]]
    return ToyDataset(scenes, hazy, params, paired, unpaired_hazy, unpaired_clean)
