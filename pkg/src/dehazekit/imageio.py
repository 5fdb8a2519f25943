"""Image files and scene manifests.

Binary PPM (P6, maxval 255) is the canonical bit-exact format; PNG goes
through Pillow. Pixels are read as v/255 and written as round(v*255) clipped
to [0, 255].
"""
from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor import ContractError, Tensor


class ImageFormatError(ValueError):
    pass


class ManifestError(ValueError):
    pass


def to_uint8(x) -> np.ndarray:
    a = x.data if isinstance(x, Tensor) else np.asarray(x)
    return np.clip(np.round(a.astype(np.float64) * 255.0), 0, 255).astype(np.uint8)


def from_uint8(a: np.ndarray) -> np.ndarray:
    return a.astype(np.float32) / np.float32(255.0)


def _hwc(x) -> np.ndarray:
    """(1, c, h, w) / (c, h, w) / (h, w) -> (h, w, c) uint8."""
    a = x.data if isinstance(x, Tensor) else np.asarray(x)
    if a.ndim == 4:
        if a.shape[0] != 1:
            raise ContractError(f"can only write a single image, got batch of {a.shape[0]}")
        a = a[0]
    if a.ndim == 2:
        a = a[None]
    if a.ndim != 3 or a.shape[0] not in (1, 3):
        raise ContractError(f"expected 1 or 3 channels, got shape {a.shape}")
    return to_uint8(np.transpose(a, (1, 2, 0)))


def encode_ppm(x) -> bytes:
    hwc = _hwc(x)
    if hwc.shape[2] == 1:
        hwc = np.repeat(hwc, 3, axis=2)
    h, w = hwc.shape[:2]
    return f"P6\n{w} {h}\n255\n".encode("ascii") + hwc.tobytes()


def _ppm_tokens(buf: bytes, count: int) -> tuple[list[int], int]:
    out, pos = [], 2
    while len(out) < count:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and buf[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise ImageFormatError("truncated or malformed PPM header")
        out.append(int(buf[start:pos]))
    return out, pos + 1   # a single whitespace byte ends the header


def decode_ppm(buf: bytes) -> np.ndarray:
    if buf[:2] != b"P6":
        raise ImageFormatError("not a binary PPM (missing P6 magic)")
    (w, h, maxval), pos = _ppm_tokens(buf, 3)
    if maxval != 255:
        raise ImageFormatError(f"only 8-bit PPM is supported, got maxval {maxval}")
    n = w * h * 3
    if len(buf) - pos < n:
        raise ImageFormatError(f"PPM payload too short: {len(buf) - pos} < {n} bytes")
    return np.frombuffer(buf, np.uint8, n, pos).reshape(h, w, 3)


def read_image(path) -> Tensor:
    """Decode PPM or PNG into a (1, 3, h, w) float32 tensor in [0, 1]."""
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror}") from exc
    if buf[:2] == b"P6":
        hwc = decode_ppm(buf)
    else:
        from PIL import Image, UnidentifiedImageError
        try:
            with Image.open(io.BytesIO(buf)) as im:
                hwc = np.asarray(im.convert("RGB"))
        except (UnidentifiedImageError, OSError) as exc:
            raise ImageFormatError(f"cannot decode {path}: {exc}") from None
    return Tensor(from_uint8(np.transpose(hwc, (2, 0, 1)))[None])


def read_gray(path) -> Tensor:
    """First channel only, as (1, 1, h, w)."""
    return Tensor(read_image(path).data[:, :1])


def write_image(path, x) -> None:
    """Write by extension: .png via Pillow, anything else as binary PPM."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        if path.suffix.lower() == ".png":
            from PIL import Image
            hwc = _hwc(x)
            mode = "L" if hwc.shape[2] == 1 else "RGB"
            Image.fromarray(hwc[..., 0] if mode == "L" else hwc, mode).save(path, format="PNG")
        else:
            path.write_bytes(encode_ppm(x))
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------

@dataclass
class ManifestRow:
    clean: str
    hazy: str
    depth: str
    beta: float
    airlight: float


def format_manifest(rows: list[ManifestRow]) -> str:
    return "".join(f"{r.clean}\t{r.hazy}\t{r.depth}\t{r.beta!r}\t{r.airlight!r}\n" for r in rows)


def parse_manifest(text: str, source: str = "manifest") -> list[ManifestRow]:
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        cols = line.rstrip("\r\n").split("\t")
        if len(cols) != 5:
            raise ManifestError(f"{source}:{lineno}: expected 5 tab-separated fields, got {len(cols)}")
        try:
            beta, airlight = float(cols[3]), float(cols[4])
        except ValueError:
            raise ManifestError(f"{source}:{lineno}: beta and airlight must be numbers") from None
        if not (np.isfinite(beta) and beta > 0):
            raise ManifestError(f"{source}:{lineno}: beta must be positive, got {cols[3]}")
        rows.append(ManifestRow(cols[0], cols[1], cols[2], beta, airlight))
    if not rows:
        raise ManifestError(f"{source}: no scenes listed")
    return rows


def load_manifest(path) -> list[ManifestRow]:
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"{path}: manifest not found")
    return parse_manifest(path.read_text(encoding="utf-8"), str(path))
