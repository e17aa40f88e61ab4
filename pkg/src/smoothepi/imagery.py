"""Image ingestion, smoothing, gradients, and subpixel sampling.

All downstream geometry works on a smoothed scalar intensity field in
[0, 1].  Coordinates are (x, y) with x along columns and y along rows;
``data[y, x]`` is the sample at integer pixel (x, y).
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import FormatError, OutOfBoundsError, ValidationError

MIN_SIDE = 16


@dataclasses.dataclass(frozen=True, eq=False)
class IntensityImage:
    """Smoothed scalar intensity field with recorded smoothing scale."""

    data: np.ndarray  # (height, width), float64 in [0, 1]
    sigma: float

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise ValidationError("intensity grid must be 2-D")
        if data.shape[0] < MIN_SIDE or data.shape[1] < MIN_SIDE:
            raise ValidationError(
                f"image must be at least {MIN_SIDE}x{MIN_SIDE}, got {data.shape}"
            )
        if not np.all(np.isfinite(data)):
            raise ValidationError("intensity grid contains non-finite samples")
        if data.min() < -1e-12 or data.max() > 1 + 1e-12:
            raise ValidationError("intensity samples must lie in [0, 1]")
        if self.sigma < 0:
            raise ValidationError("sigma must be >= 0")
        data = np.clip(data, 0.0, 1.0)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


@dataclasses.dataclass(frozen=True, eq=False)
class GradientField:
    """Per-pixel partial derivatives of the smoothed intensity."""

    gx: np.ndarray
    gy: np.ndarray

    def __post_init__(self):
        gx = np.asarray(self.gx, dtype=np.float64)
        gy = np.asarray(self.gy, dtype=np.float64)
        if gx.shape != gy.shape or gx.ndim != 2:
            raise ValidationError("gradient components must share a 2-D shape")
        gx.setflags(write=False)
        gy.setflags(write=False)
        object.__setattr__(self, "gx", gx)
        object.__setattr__(self, "gy", gy)


def smooth_grid(data: np.ndarray, sigma: float) -> np.ndarray:
    """Gaussian low-pass with a 3-sigma truncated kernel and reflected borders."""
    if sigma <= 0:
        return np.array(data, dtype=np.float64)
    return ndimage.gaussian_filter(
        np.asarray(data, dtype=np.float64), sigma, mode="reflect", truncate=3.0
    )


def from_array(data: np.ndarray, sigma: float = 0.0) -> IntensityImage:
    """Build an IntensityImage from a raw [0, 1] grid, smoothing at scale sigma."""
    smoothed = smooth_grid(data, sigma)
    return IntensityImage(data=np.clip(smoothed, 0.0, 1.0), sigma=float(sigma))


def _read_pgm(path: Path) -> np.ndarray:
    raw = path.read_bytes()
    if not raw.startswith(b"P5"):
        raise FormatError(f"{path}: not a binary PGM (P5) file")
    # Header tokens: magic, width, height, maxval; '#' comments allowed.
    tokens = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated PGM header")
        tokens.append(raw[start:pos])
    pos += 1  # single whitespace after maxval
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise FormatError(f"{path}: bad PGM header") from exc
    if maxval <= 0 or maxval >= 65536:
        raise FormatError(f"{path}: unsupported PGM maxval {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    count = width * height
    if len(raw) - pos < count * dtype.itemsize:
        raise FormatError(f"{path}: truncated PGM pixel data")
    pixels = np.frombuffer(raw, dtype=dtype, count=count, offset=pos)
    return pixels.reshape(height, width).astype(np.float64) / maxval


def _read_png(path: Path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        if im.mode == "I;16":
            arr = np.asarray(im, dtype=np.float64) / 65535.0
        elif im.mode in ("L", "I", "F"):
            arr = np.asarray(im.convert("F"), dtype=np.float64) / 255.0
        else:
            raise FormatError(f"{path}: only grayscale PNG is supported (mode {im.mode})")
    return arr


def load_image(path, sigma: float = 2.0) -> IntensityImage:
    """Load a grayscale raster, normalize by bit depth, and smooth at scale sigma.

    Binary PGM (P5) is the primary format; grayscale PNG is accepted too.
    """
    path = Path(path)
    if not path.exists():
        raise IOError(f"{path}: no such file")
    suffix = path.suffix.lower()
    if suffix == ".png":
        data = _read_png(path)
    else:
        data = _read_pgm(path)
    if data.shape[0] < MIN_SIDE or data.shape[1] < MIN_SIDE:
        raise ValidationError(f"{path}: degenerate dimensions {data.shape}")
    return from_array(data, sigma)


def write_pgm(path, data: np.ndarray) -> None:
    """Write a [0, 1] grid as 8-bit binary PGM."""
    arr = np.clip(np.asarray(data, dtype=np.float64), 0.0, 1.0)
    pixels = np.round(arr * 255).astype(np.uint8)
    header = f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode()
    Path(path).write_bytes(header + pixels.tobytes())


_gradient_cache: "weakref.WeakKeyDictionary[IntensityImage, GradientField]" = None  # type: ignore


def gradient(img: IntensityImage) -> GradientField:
    """Central differences in the interior, one-sided at the borders."""
    global _gradient_cache
    if _gradient_cache is None:
        import weakref

        _gradient_cache = weakref.WeakKeyDictionary()
    cached = _gradient_cache.get(img)
    if cached is not None:
        return cached
    gy, gx = np.gradient(img.data)
    field = GradientField(gx=gx, gy=gy)
    _gradient_cache[img] = field
    return field


def sample_intensity(img: IntensityImage, p) -> float:
    """Bilinear interpolation of the smoothed grid at subpixel point p = (x, y)."""
    return float(sample_intensity_many(img, np.asarray(p, dtype=np.float64)[None, :])[0])


def sample_intensity_many(img: IntensityImage, pts: np.ndarray) -> np.ndarray:
    """Vectorized bilinear sampling at an (N, 2) array of (x, y) points."""
    pts = np.asarray(pts, dtype=np.float64)
    x, y = pts[:, 0], pts[:, 1]
    w, h = img.width, img.height
    if np.any(x < 0) or np.any(y < 0) or np.any(x > w - 1) or np.any(y > h - 1):
        raise OutOfBoundsError("sample point outside image rectangle")
    return _bilinear(img.data, x, y)


def _bilinear(grid: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    h, w = grid.shape
    x0 = np.clip(np.floor(x).astype(int), 0, w - 2)
    y0 = np.clip(np.floor(y).astype(int), 0, h - 2)
    fx = x - x0
    fy = y - y0
    g00 = grid[y0, x0]
    g01 = grid[y0, x0 + 1]
    g10 = grid[y0 + 1, x0]
    g11 = grid[y0 + 1, x0 + 1]
    return (
        g00 * (1 - fx) * (1 - fy)
        + g01 * fx * (1 - fy)
        + g10 * (1 - fx) * fy
        + g11 * fx * fy
    )


def sample_grid_many(grid: np.ndarray, pts: np.ndarray, clamp: bool = True) -> np.ndarray:
    """Bilinear sampling of an arbitrary grid; out-of-range points are clamped."""
    pts = np.asarray(pts, dtype=np.float64)
    h, w = grid.shape
    x = pts[:, 0]
    y = pts[:, 1]
    if clamp:
        x = np.clip(x, 0.0, w - 1.0)
        y = np.clip(y, 0.0, h - 1.0)
    return _bilinear(grid, x, y)
