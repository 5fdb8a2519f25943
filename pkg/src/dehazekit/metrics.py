"""Full-reference image quality metrics and per-channel colour analyses.

All functions accept (n, 3, h, w) tensors or arrays with values in [0, 1]
and return plain floats / numpy arrays (no gradient tracking).
"""
from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .tensor import ContractError, Tensor

PSNR_CAP = 100.0


@dataclass
class MetricReport:
    psnr: float
    ssim: float
    ciede2000: float
    diff_r: float
    diff_g: float
    diff_b: float

    @property
    def channel_diff(self) -> tuple[float, float, float]:
        return (self.diff_r, self.diff_g, self.diff_b)


def _arr(x) -> np.ndarray:
    a = x.data if isinstance(x, Tensor) else np.asarray(x)
    return a.astype(np.float64)


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a, b = _arr(a), _arr(b)
    if a.shape != b.shape:
        raise ContractError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    """10 log10(1 / MSE) on the [0, 1] scale, capped at 100 dB."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse <= 10 ** (-PSNR_CAP / 10):
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def luma(x: np.ndarray) -> np.ndarray:
    """ITU-R BT.601 luma of an (n, 3, h, w) array -> (n, h, w)."""
    if x.ndim == 4 and x.shape[1] == 3:
        return 0.299 * x[:, 0] + 0.587 * x[:, 1] + 0.114 * x[:, 2]
    if x.ndim == 4 and x.shape[1] == 1:
        return x[:, 0]
    raise ContractError(f"expected (n, 3|1, h, w), got {x.shape}")


def _gaussian_window(size=11, sigma=1.5) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-r ** 2 / (2 * sigma ** 2))
    return g / g.sum()


def ssim(a, b, window: int = 11, sigma: float = 1.5, k1=0.01, k2=0.03, data_range=1.0) -> float:
    """Mean SSIM over valid window positions of the luma channel."""
    a, b = _pair(a, b)
    ya, yb = luma(a), luma(b)
    if ya.shape[-1] < window or ya.shape[-2] < window:
        raise ContractError(f"image {ya.shape[-2:]} smaller than the {window}x{window} window")
    g = _gaussian_window(window, sigma)

    def filt(img):
        out = correlate1d(img, g, axis=-1, mode="constant")
        out = correlate1d(out, g, axis=-2, mode="constant")
        half = window // 2
        return out[..., half:out.shape[-2] - half, half:out.shape[-1] - half]

    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    mu_a, mu_b = filt(ya), filt(yb)
    saa = filt(ya * ya) - mu_a ** 2
    sbb = filt(yb * yb) - mu_b ** 2
    sab = filt(ya * yb) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (saa + sbb + c2)
    return float(np.mean(num / den))


# ---------------------------------------------------------------------------
# CIEDE2000
# ---------------------------------------------------------------------------

_D65 = np.array([0.95047, 1.0, 1.08883])
_RGB2XYZ = np.array([[0.4124564, 0.3575761, 0.1804375],
                     [0.2126729, 0.7151522, 0.0721750],
                     [0.0193339, 0.1191920, 0.9503041]])


def srgb_to_lab(x: np.ndarray) -> np.ndarray:
    """sRGB in [0, 1], channel axis 1 -> CIELAB (D65, 2 degree observer), channel axis last."""
    rgb = np.moveaxis(np.asarray(x, dtype=np.float64), 1, -1)
    lin = np.where(rgb <= 0.04045, rgb / 12.92, ((rgb + 0.055) / 1.055) ** 2.4)
    xyz = lin @ _RGB2XYZ.T / _D65
    eps, kappa = 216 / 24389, 24389 / 27
    f = np.where(xyz > eps, np.cbrt(xyz), (kappa * xyz + 16) / 116)
    L = 116 * f[..., 1] - 16
    a = 500 * (f[..., 0] - f[..., 1])
    b = 200 * (f[..., 1] - f[..., 2])
    return np.stack([L, a, b], axis=-1)


def delta_e2000(lab1: np.ndarray, lab2: np.ndarray, kL=1.0, kC=1.0, kH=1.0) -> np.ndarray:
    """Per-element CIEDE2000 colour difference between Lab arrays (channel axis last)."""
    L1, a1, b1 = np.moveaxis(np.asarray(lab1, dtype=np.float64), -1, 0)
    L2, a2, b2 = np.moveaxis(np.asarray(lab2, dtype=np.float64), -1, 0)

    C1 = np.hypot(a1, b1)
    C2 = np.hypot(a2, b2)
    Cbar7 = ((C1 + C2) / 2) ** 7
    G = 0.5 * (1 - np.sqrt(Cbar7 / (Cbar7 + 25.0 ** 7)))
    a1p, a2p = (1 + G) * a1, (1 + G) * a2
    C1p, C2p = np.hypot(a1p, b1), np.hypot(a2p, b2)
    h1p = np.degrees(np.arctan2(b1, a1p)) % 360
    h2p = np.degrees(np.arctan2(b2, a2p)) % 360
    h1p = np.where(C1p == 0, 0.0, h1p)
    h2p = np.where(C2p == 0, 0.0, h2p)

    dLp = L2 - L1
    dCp = C2p - C1p
    dh = h2p - h1p
    dh = np.where(dh > 180, dh - 360, dh)
    dh = np.where(dh < -180, dh + 360, dh)
    zero_c = (C1p * C2p) == 0
    dh = np.where(zero_c, 0.0, dh)
    dHp = 2 * np.sqrt(C1p * C2p) * np.sin(np.radians(dh) / 2)

    Lbarp = (L1 + L2) / 2
    Cbarp = (C1p + C2p) / 2
    hsum = h1p + h2p
    hbarp = np.where(np.abs(h1p - h2p) <= 180, hsum / 2,
                     np.where(hsum < 360, (hsum + 360) / 2, (hsum - 360) / 2))
    hbarp = np.where(zero_c, hsum, hbarp)

    Tt = (1 - 0.17 * np.cos(np.radians(hbarp - 30)) + 0.24 * np.cos(np.radians(2 * hbarp))
          + 0.32 * np.cos(np.radians(3 * hbarp + 6)) - 0.20 * np.cos(np.radians(4 * hbarp - 63)))
    dtheta = 30 * np.exp(-(((hbarp - 275) / 25) ** 2))
    Cbarp7 = Cbarp ** 7
    Rc = 2 * np.sqrt(Cbarp7 / (Cbarp7 + 25.0 ** 7))
    Sl = 1 + 0.015 * (Lbarp - 50) ** 2 / np.sqrt(20 + (Lbarp - 50) ** 2)
    Sc = 1 + 0.045 * Cbarp
    Sh = 1 + 0.015 * Cbarp * Tt
    Rt = -np.sin(np.radians(2 * dtheta)) * Rc

    tl = dLp / (kL * Sl)
    tc = dCp / (kC * Sc)
    th = dHp / (kH * Sh)
    return np.sqrt(tl ** 2 + tc ** 2 + th ** 2 + Rt * tc * th)


def ciede2000(a, b) -> float:
    """Mean per-pixel CIEDE2000 between two sRGB images."""
    a, b = _pair(a, b)
    if a.ndim != 4 or a.shape[1] != 3:
        raise ContractError(f"ciede2000 expects (n, 3, h, w), got {a.shape}")
    return float(np.mean(delta_e2000(srgb_to_lab(a), srgb_to_lab(b))))


# ---------------------------------------------------------------------------
# channel analyses
# ---------------------------------------------------------------------------

def channel_diff(a, b) -> tuple[float, float, float]:
    """Mean absolute difference per RGB channel on the 0-255 scale."""
    a, b = _pair(a, b)
    d = np.abs(a - b).mean(axis=tuple(i for i in range(a.ndim) if i != 1)) * 255.0
    return tuple(float(v) for v in d)


def channel_histogram(a, bins: int = 32) -> np.ndarray:
    """(3, bins) counts over [0, 1] with uniform bins."""
    if bins < 2:
        raise ContractError("bins must be >= 2")
    x = _arr(a)
    edges = np.linspace(0.0, 1.0, bins + 1)
    return np.stack([np.histogram(np.clip(x[:, k], 0, 1), bins=edges)[0] for k in range(3)])


def histogram_intersection(h1: np.ndarray, h2: np.ndarray) -> float:
    """Mean over channels of sum(min(p, q)) for the normalised histograms."""
    p = h1 / h1.sum(axis=-1, keepdims=True)
    q = h2 / h2.sum(axis=-1, keepdims=True)
    return float(np.minimum(p, q).sum(axis=-1).mean())


def evaluate(pred, ref) -> MetricReport:
    r, g, b = channel_diff(pred, ref)
    return MetricReport(psnr(pred, ref), ssim(pred, ref), ciede2000(pred, ref), r, g, b)


# ---------------------------------------------------------------------------
# report emission
# ---------------------------------------------------------------------------

CSV_FIELDS = ["file", "psnr", "ssim", "ciede2000", "diff_r", "diff_g", "diff_b"]


def mean_report(reports: list[MetricReport]) -> MetricReport:
    keys = list(asdict(reports[0]))
    return MetricReport(**{k: float(np.mean([getattr(r, k) for r in reports])) for k in keys})


def reports_to_csv(rows: list[tuple[str, MetricReport]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_FIELDS)
    for name, rep in rows:
        writer.writerow([name] + [repr(float(v)) for v in asdict(rep).values()])
    return buf.getvalue()


def reports_from_csv(text: str) -> list[tuple[str, MetricReport]]:
    reader = csv.DictReader(io.StringIO(text))
    return [(row["file"], MetricReport(*(float(row[k]) for k in CSV_FIELDS[1:]))) for row in reader]


def format_table(rows: list[tuple[str, MetricReport]]) -> str:
    """Aligned plain-text table with a trailing mean row."""
    header = f"{'file':<24}{'PSNR':>9}{'SSIM':>8}{'CIEDE2000':>11}{'R':>8}{'G':>8}{'B':>8}"
    lines = [header, "-" * len(header)]
    for name, r in rows:
        lines.append(f"{name:<24}{r.psnr:>9.2f}{r.ssim:>8.3f}{r.ciede2000:>11.3f}"
                     f"{r.diff_r:>8.2f}{r.diff_g:>8.2f}{r.diff_b:>8.2f}")
    if rows:
        m = mean_report([r for _, r in rows])
        lines.append("-" * len(header))
        lines.append(f"{'mean':<24}{m.psnr:>9.2f}{m.ssim:>8.3f}{m.ciede2000:>11.3f}"
                     f"{m.diff_r:>8.2f}{m.diff_g:>8.2f}{m.diff_b:>8.2f}")
    return "\n".join(lines)


DIFF_FIELDS = ["method", "R", "G", "B"]


def channel_diff_csv(rows: list[tuple[str, tuple[float, float, float]]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(DIFF_FIELDS)
    for name, d in rows:
        writer.writerow([name] + [f"{v:.4f}" for v in d])
    return buf.getvalue()


def histogram_csv(hist: np.ndarray) -> str:
    """One row per bin: lower edge, upper edge, then R, G, B counts."""
    bins = hist.shape[1]
    edges = np.linspace(0.0, 1.0, bins + 1)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["lo", "hi", "R", "G", "B"])
    for i in range(bins):
        writer.writerow([f"{edges[i]:.6f}", f"{edges[i + 1]:.6f}"] + [int(c) for c in hist[:, i]])
    return buf.getvalue()
