"""Synthetic lesion images, binary PGM I/O and the on-disk dataset layout."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np

PathLike = Union[str, Path]

# (center_x, center_y, semi_axis_a, semi_axis_b, angle) in pixel units
Ellipse = Tuple[float, float, float, float, float]


class PGMError(ValueError):
    pass


@dataclass
class SegSample:
    image: np.ndarray  # (1, H, W) in [0, 1]
    mask: np.ndarray  # (1, H, W) in {0, 1}
    id: str
    ellipses: List[Ellipse] = field(default_factory=list)

    def __post_init__(self):
        if self.image.shape != self.mask.shape:
            raise ValueError(f"image {self.image.shape} and mask {self.mask.shape} differ")
        if not np.all((self.mask == 0) | (self.mask == 1)):
            raise ValueError(f"mask of sample {self.id} is not binary")


def ellipse_mask(size: int, ellipse: Ellipse) -> np.ndarray:
    """Pixels whose centers (col + 0.5, row + 0.5) fall inside or on the ellipse."""
    cx, cy, a, b, theta = ellipse
    coords = np.arange(size) + 0.5
    dx = coords[None, :] - cx
    dy = coords[:, None] - cy
    c, s = math.cos(theta), math.sin(theta)
    u = (dx * c + dy * s) / a
    v = (-dx * s + dy * c) / b
    return u * u + v * v <= 1.0


def generate_synthetic_dataset(n: int, size: int, seed: int) -> List[SegSample]:
    """Dark noisy backgrounds with 1-3 brighter elliptical lesions each.

    The mask is the exact union of the ellipse interiors under the pixel
    center rule of :func:`ellipse_mask`.
    """
    if n < 1 or size < 16:
        raise ValueError("need n >= 1 and size >= 16")
    rng = np.random.default_rng(seed)
    samples = []
    rows, cols = np.mgrid[0:size, 0:size] / size
    for i in range(n):
        base = rng.uniform(0.1, 0.3)
        gx, gy = rng.uniform(-0.08, 0.08, size=2)
        image = base + gx * (cols - 0.5) + gy * (rows - 0.5)
        mask = np.zeros((size, size), dtype=bool)
        ellipses = []
        for _ in range(rng.integers(1, 4)):
            ell = (
                rng.uniform(0.15, 0.85) * size,
                rng.uniform(0.15, 0.85) * size,
                rng.uniform(0.05, 0.14) * size,
                rng.uniform(0.05, 0.14) * size,
                rng.uniform(0.0, math.pi),
            )
            inside = ellipse_mask(size, ell)
            image = image + rng.uniform(0.3, 0.55) * inside
            mask |= inside
            ellipses.append(ell)
        image = image + rng.normal(0.0, 0.04, size=(size, size))
        samples.append(
            SegSample(
                image=np.clip(image, 0.0, 1.0)[None],
                mask=mask.astype(np.float64)[None],
                id=f"s{seed}_{i:04d}",
                ellipses=ellipses,
            )
        )
    return samples


# --- PGM ------------------------------------------------------------------


def _read_token(buf: bytes, pos: int) -> Tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        ch = buf[pos : pos + 1]
        if ch == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise PGMError(f"truncated header at byte {pos}")
    return buf[start:pos], pos


def parse_pgm(buf: bytes) -> np.ndarray:
    """Decode a binary (P5) 8-bit PGM into a (H, W) uint8 array."""
    magic, pos = _read_token(buf, 0)
    if magic != b"P5":
        raise PGMError(f"unsupported magic {magic!r} at byte 0 (need binary 'P5')")
    header = []
    for what in ("width", "height", "maxval"):
        tok_start = pos
        tok, pos = _read_token(buf, pos)
        if not tok.isdigit():
            raise PGMError(f"malformed {what} {tok!r} at byte {tok_start}")
        header.append(int(tok))
    width, height, maxval = header
    if width < 1 or height < 1:
        raise PGMError(f"non-positive dimensions {width}x{height} at byte {pos}")
    if maxval != 255:
        raise PGMError(f"maxval {maxval} unsupported (need 255) at byte {pos}")
    if pos >= len(buf) or not buf[pos : pos + 1].isspace():
        raise PGMError(f"missing whitespace before payload at byte {pos}")
    pos += 1
    need = width * height
    payload = buf[pos : pos + need]
    if len(payload) < need:
        raise PGMError(f"truncated payload at byte {pos + len(payload)}: need {need} bytes, got {len(payload)}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width).copy()


def encode_pgm(pixels: np.ndarray) -> bytes:
    pixels = np.asarray(pixels, dtype=np.uint8)
    h, w = pixels.shape
    return b"P5\n%d %d\n255\n" % (w, h) + pixels.tobytes()


def read_pgm(path: PathLike) -> np.ndarray:
    path = Path(path)
    try:
        return parse_pgm(path.read_bytes())
    except PGMError as exc:
        raise PGMError(f"{path}: {exc}") from None


def read_image_pgm(path: PathLike) -> np.ndarray:
    """(1, H, W) float image scaled to [0, 1]."""
    return (read_pgm(path).astype(np.float64) / 255.0)[None]


def read_mask_pgm(path: PathLike) -> np.ndarray:
    """(1, H, W) binary mask; bytes >= 128 are foreground."""
    return (read_pgm(path) >= 128).astype(np.float64)[None]


def image_to_bytes(image: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)


def write_image_pgm(image: np.ndarray, path: PathLike) -> None:
    plane = np.squeeze(image, axis=0) if np.ndim(image) == 3 else image
    Path(path).write_bytes(encode_pgm(image_to_bytes(plane)))


def write_mask_pgm(mask: np.ndarray, path: PathLike) -> None:
    m = np.squeeze(mask, axis=0) if np.ndim(mask) == 3 else np.asarray(mask)
    Path(path).write_bytes(encode_pgm(np.where(m > 0.5, 255, 0)))


# --- dataset directories ----------------------------------------------------


def save_dataset(samples: List[SegSample], out_dir: PathLike) -> None:
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    for s in samples:
        write_image_pgm(s.image, out / "images" / f"{s.id}.pgm")
        write_mask_pgm(s.mask, out / "masks" / f"{s.id}.pgm")


def load_dataset(data_dir: PathLike) -> List[SegSample]:
    """Pair ``images/<id>.pgm`` with ``masks/<id>.pgm`` by filename stem, sorted by id."""
    root = Path(data_dir)
    images = {p.stem: p for p in (root / "images").glob("*.pgm")}
    masks = {p.stem: p for p in (root / "masks").glob("*.pgm")}
    if not images:
        raise FileNotFoundError(f"no images found under {root / 'images'}")
    missing = sorted(set(images) - set(masks))
    if missing:
        raise FileNotFoundError(f"images without masks: {missing[:5]}")
    return [
        SegSample(read_image_pgm(images[k]), read_mask_pgm(masks[k]), k) for k in sorted(images)
    ]


def stack_batch(samples: List[SegSample]) -> Tuple[np.ndarray, np.ndarray]:
    return (
        np.stack([s.image for s in samples]),
        np.stack([s.mask for s in samples]),
    )


def foreground_fraction(samples: List[SegSample]) -> float:
    return float(np.mean([s.mask.mean() for s in samples]))
