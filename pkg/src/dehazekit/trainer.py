"""Unpaired training loop, Adam, random cropping and checkpoints."""
from __future__ import annotations

import csv
import io
import json
import logging
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import tensor as T
from .color import ColorNet, chroma, loss_color, predict_color
from .enhancer import EnhancerConfig, EnhancerNet, dehaze_forward
from .nn import Module
from .prior import SpeNets, estimate, loss_project, loss_reflect, loss_retinex
from .tensor import ContractError, NumericFault, Tensor

log = logging.getLogger(__name__)

LOSS_COLUMNS = ["step", "l_project", "l_reflect", "l_retinex", "l_color", "total"]


@dataclass
class TrainConfig:
    lambda_project: float = 50.0
    lambda_reflect: float = 0.1
    lambda_retinex: float = 0.1
    lambda_color: float = 1.0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch: int = 4
    crop: int = 64
    steps: int = 500
    clip_norm: float = 5.0
    seed: int = 0
    lambda_stats: float = 1.0    # weight of the clean-statistics match inside the colour term
    detach_clear: bool = False   # stop SPE gradients from reaching the enhancer through j_hat
    # network shape
    channels: int = 16
    blocks: int = 3
    levels: int = 2
    wavelet: str = "haar"
    subband_mode: str = "broad"
    use_dwsc: bool = True
    spe_hidden: int = 16
    spe_depth: int = 3

    def validate(self):
        lams = (self.lambda_project, self.lambda_reflect, self.lambda_retinex, self.lambda_color,
                self.lambda_stats)
        if any(l < 0 for l in lams):
            raise ContractError("loss weights must be >= 0")
        if self.lr <= 0:
            raise ContractError("lr must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ContractError("Adam betas must lie in [0, 1)")
        if self.crop % 2 or self.crop < 2 ** (self.levels + 1):
            raise ContractError(f"crop must be even and >= {2 ** (self.levels + 1)}, got {self.crop}")
        if self.batch < 1 or self.steps < 0:
            raise ContractError("batch must be >= 1 and steps >= 0")
        return self

    def enhancer_config(self) -> EnhancerConfig:
        return EnhancerConfig(self.channels, self.blocks, self.levels, 3, self.wavelet,
                              self.subband_mode, self.use_dwsc)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name: f.type for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


# ---------------------------------------------------------------------------
# model bundle
# ---------------------------------------------------------------------------

class Model(Module):
    """Enhancer, shared prior estimator and colour net trained together."""

    def __init__(self, cfg: TrainConfig):
        rng = np.random.default_rng(cfg.seed)
        self.enhancer = EnhancerNet(rng, cfg.enhancer_config())
        self.spe = SpeNets(rng, cfg.spe_hidden, cfg.spe_depth)
        self.color = ColorNet(cfg.channels, rng)

    def dehaze(self, hazy: Tensor) -> Tensor:
        with T.no_grad():
            j_hat, _ = dehaze_forward(self.enhancer, hazy)
        return j_hat


# ---------------------------------------------------------------------------
# losses and optimiser
# ---------------------------------------------------------------------------

def total_loss(parts, cfg: TrainConfig):
    """Weighted sum of (project, reflect, retinex, colour) terms; Tensors or floats."""
    parts = list(parts)
    if len(parts) != 4:
        raise ContractError("total_loss needs exactly four parts")
    for p in parts:
        v = p.data if isinstance(p, Tensor) else np.asarray(p)
        if not np.all(np.isfinite(v)):
            raise NumericFault("non-finite loss term")
        if np.any(v < 0):
            raise ContractError("loss terms must be >= 0")
    lams = (cfg.lambda_project, cfg.lambda_reflect, cfg.lambda_retinex, cfg.lambda_color)
    total = None
    for lam, p in zip(lams, parts):
        term = p * lam
        total = term if total is None else total + term
    return total


@dataclass
class AdamState:
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    step: int = 0
    skipped: int = 0


def clip_grads(grads: list[np.ndarray], max_norm: float) -> float:
    norm = float(np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads)))
    if max_norm and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for g in grads:
            g *= scale
    return norm


def adam_step(params: list[Tensor], grads: list[np.ndarray], state: AdamState, cfg: TrainConfig) -> None:
    """In-place bias-corrected Adam update; raises NumericFault on a non-finite gradient."""
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    if any(not np.all(np.isfinite(g)) for g in grads):
        state.skipped += 1
        log.warning("non-finite gradient; step skipped (%d so far)", state.skipped)
        raise NumericFault(f"non-finite gradient at step {state.step}")
    state.step += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= (cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)).astype(p.dtype)


def random_crop(img: Tensor, size: int, rng: np.random.Generator) -> Tensor:
    h, w = img.shape[2:]
    if h < size or w < size:
        raise ContractError(f"image {h}x{w} smaller than crop {size}")
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    return T.crop(img, size, size, top, left)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class CleanStats:
    """Per-channel mean and spread of the clean pool, averaged over images."""
    mean: np.ndarray
    std: np.ndarray


def clean_statistics(clean_set: list[Tensor]) -> CleanStats:
    if not clean_set:
        raise ContractError("clean statistics need at least one clean image")
    per = [(c.data.astype(np.float64).mean(axis=(2, 3)), c.data.astype(np.float64).std(axis=(2, 3)))
           for c in clean_set]
    mean = np.concatenate([m for m, _ in per]).mean(axis=0)
    std = np.concatenate([sd for _, sd in per]).mean(axis=0)
    return CleanStats(mean, std)


def loss_stats(j: Tensor, stats: CleanStats) -> Tensor:
    """Squared gap between each output's channel mean/std and the clean pool's."""
    m = T.reduce_mean(j, axis=(2, 3))
    d = j - m
    sd = T.sqrt(T.reduce_mean(d * d, axis=(2, 3)) + 1e-8)
    mu = Tensor(stats.mean.reshape(1, 3, 1, 1), dtype=j.dtype)
    sig = Tensor(stats.std.reshape(1, 3, 1, 1), dtype=j.dtype)
    return T.reduce_mean((m - mu) ** 2) + T.reduce_mean((sd - sig) ** 2)


def loss_terms(model: Model, hazy: Tensor, cfg: TrainConfig, stats: CleanStats | None = None):
    """Forward pass for one hazy batch; returns the four loss tensors and j_hat.

    The colour slot carries the chromaticity loss plus, when ``stats`` is given,
    ``lambda_stats`` times the clean-statistics match on j_hat.
    """
    prior = estimate(model.spe, hazy)
    l_project = loss_project(hazy, prior.i_project)
    l_retinex = loss_retinex(prior.r_map, prior.l_map, prior.i_project, prior.l_initial)

    j_hat, features = dehaze_forward(model.enhancer, hazy)
    clear = T.detach(j_hat) if cfg.detach_clear else j_hat
    prior_clear = estimate(model.spe, clear)
    l_reflect = loss_reflect(prior.r_map, prior_clear.r_map)

    c_f = chroma(T.detach(hazy))
    c_hat = predict_color(model.color, features)
    l_color = loss_color(c_f, c_hat)
    if stats is not None and cfg.lambda_stats:
        l_color = l_color + loss_stats(j_hat, stats) * cfg.lambda_stats
    return (l_project, l_reflect, l_retinex, l_color), j_hat


@dataclass
class TrainResult:
    model: Model
    history: list[tuple]
    state: AdamState


def train(hazy_set: list[Tensor], clean_set: list[Tensor], cfg: TrainConfig,
          model: Model | None = None, log_every: int = 50) -> TrainResult:
    cfg.validate()
    if not hazy_set:
        raise ContractError("training needs at least one hazy image")
    stats = clean_statistics(clean_set) if cfg.lambda_stats else None
    model = model or Model(cfg)
    params = model.parameters()
    state = AdamState()
    rng = np.random.default_rng(cfg.seed + 1)
    history = []
    for step in range(cfg.steps):
        idx = rng.integers(0, len(hazy_set), size=cfg.batch)
        batch = T.concat([random_crop(hazy_set[i], cfg.crop, rng) for i in idx], axis=0)
        try:
            parts, _ = loss_terms(model, batch, cfg, stats)
            loss = total_loss(parts, cfg)
        except NumericFault as exc:
            raise NumericFault(f"step {step}: {exc}") from exc
        model.zero_grad()
        loss.backward()
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
        clip_grads(grads, cfg.clip_norm)
        try:
            adam_step(params, grads, state, cfg)
        except NumericFault as exc:
            raise NumericFault(f"step {step}: {exc}") from exc
        row = (step,) + tuple(float(p.item()) for p in parts) + (float(loss.item()),)
        history.append(row)
        if log_every and step % log_every == 0:
            log.info("step %d total %.5f", step, row[-1])
    return TrainResult(model, history, state)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

CKPT_MAGIC = b"DHZK"
CKPT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, model: Model, cfg: TrainConfig) -> None:
    """Magic, version, JSON config echo, then (name, tensor) records."""
    header = json.dumps(asdict(cfg), sort_keys=True).encode("utf-8")
    named = list(model.named_parameters())
    out = io.BytesIO()
    out.write(CKPT_MAGIC + struct.pack("<II", CKPT_VERSION, len(header)) + header)
    out.write(struct.pack("<I", len(named)))
    for name, p in named:
        raw = name.encode("utf-8")
        out.write(struct.pack("<H", len(raw)) + raw + T.tensor_to_bytes(p))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(out.getvalue())


def load_checkpoint(path) -> tuple[Model, TrainConfig]:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    if buf[:4] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, hlen = struct.unpack_from("<II", buf, 4)
    if version != CKPT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, expected {CKPT_VERSION}")
    pos = 12
    cfg = TrainConfig.from_dict(json.loads(buf[pos:pos + hlen].decode("utf-8")))
    pos += hlen
    (count,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    model = Model(cfg)
    params = dict(model.named_parameters())
    if count != len(params):
        raise CheckpointError(f"{path}: {count} tensors stored, model has {len(params)}")
    for _ in range(count):
        (n,) = struct.unpack_from("<H", buf, pos)
        name = buf[pos + 2:pos + 2 + n].decode("utf-8")
        try:
            t, pos = T.tensor_from_bytes(buf, pos + 2 + n)
        except ContractError as exc:
            raise CheckpointError(f"{path}: tensor {name}: {exc}") from None
        p = params.get(name)
        if p is None or t.size != p.size:
            raise CheckpointError(f"{path}: unexpected tensor {name} {t.shape}")
        p.data = t.data.reshape(p.shape).astype(p.dtype)
    return model, cfg


def history_to_csv(history: list[tuple]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOSS_COLUMNS)
    for row in history:
        w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
    return buf.getvalue()


def history_from_csv(text: str) -> list[tuple]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != LOSS_COLUMNS:
        raise ContractError("loss CSV header mismatch")
    return [(int(r[0]),) + tuple(float(v) for v in r[1:]) for r in rows[1:]]
