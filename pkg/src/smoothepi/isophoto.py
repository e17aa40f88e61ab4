"""Closed level curves (isophotos), object outlines, and curvature signatures.

Curves are stored as cyclic polylines: ``points[i]`` for i in [0, M) with an
implicit edge from the last sample back to the first.  Tracing uses
marching squares with linear edge interpolation, followed by Newton
refinement onto the level and uniform arc-length resampling.
"""

from __future__ import annotations

import dataclasses
import weakref

import numpy as np
from skimage import measure

from .errors import DegenerateGradientError, ValidationError
from .imagery import IntensityImage, gradient, sample_grid_many

GRADIENT_FLOOR = 1e-4  # intensity per pixel; below it curvature is degenerate
RESAMPLE_SPACING = 1.0  # px between samples after uniform resampling
SIMPLICITY_TOL = 0.5  # px; closer non-neighbor samples mean self-intersection


@dataclasses.dataclass(frozen=True, eq=False)
class IsophotoCurve:
    """Closed subpixel polyline at constant intensity with curvature profile."""

    points: np.ndarray  # (M, 2) cyclic, (x, y) pixels
    level: float | None
    L: float  # total arc length, px
    s: np.ndarray  # (M,) cumulative arc length from sample 0, px
    k: np.ndarray  # (M,) curvature, 1/px
    k_r: np.ndarray | None = None  # (M,) rescaled curvature k*L, set by rescale

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 3:
            raise ValidationError("curve needs an (M>=3, 2) point array")
        if self.L <= 0:
            raise ValidationError("curve arc length must be positive")
        for name in ("points", "s", "k", "k_r"):
            arr = getattr(self, name)
            if arr is None:
                continue
            arr = np.asarray(arr, dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_samples(self) -> int:
        return self.points.shape[0]

    @property
    def s_frac(self) -> np.ndarray:
        """Fractional arc length in [0, 1)."""
        return self.s / self.L

    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)

    def to_json_dict(self) -> dict:
        return {
            "level": self.level,
            "points": [[float(x), float(y)] for x, y in self.points],
            "L": float(self.L),
        }


@dataclasses.dataclass(frozen=True, eq=False)
class OutlineCurve:
    """Closed polyline along the occluding contour of one smooth body."""

    points: np.ndarray  # (M, 2) cyclic
    body_id: int

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 3:
            raise ValidationError("outline needs an (M>=3, 2) point array")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def area(self) -> float:
        return abs(_signed_area(self.points))

    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)

    def length(self) -> float:
        return float(np.linalg.norm(np.diff(_close(self.points), axis=0), axis=1).sum())

    def contains(self, p) -> bool:
        return _point_in_polygon(np.asarray(p, dtype=np.float64), self.points)


def _close(points: np.ndarray) -> np.ndarray:
    return np.vstack([points, points[:1]])


def _signed_area(points: np.ndarray) -> float:
    x, y = points[:, 0], points[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    return 0.5 * float(np.sum(x * yn - xn * y))


def _point_in_polygon(p: np.ndarray, poly: np.ndarray) -> bool:
    x, y = p
    px, py = poly[:, 0], poly[:, 1]
    qx, qy = np.roll(px, -1), np.roll(py, -1)
    crosses = ((py > y) != (qy > y)) & (
        x < px + (y - py) * (qx - px) / np.where(qy != py, qy - py, np.inf)
    )
    return bool(np.count_nonzero(crosses) % 2)


def arc_lengths(points: np.ndarray) -> tuple[np.ndarray, float]:
    """Cumulative arc length per cyclic sample and total length."""
    seg = np.linalg.norm(np.diff(_close(points), axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg[:-1])])
    return s, float(seg.sum())


def resample_closed(points: np.ndarray, n: int) -> np.ndarray:
    """Resample a cyclic polyline to n samples uniform in arc length."""
    closed = _close(points)
    seg = np.linalg.norm(np.diff(closed, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    targets = np.linspace(0.0, total, n, endpoint=False)
    x = np.interp(targets, cum, closed[:, 0])
    y = np.interp(targets, cum, closed[:, 1])
    return np.column_stack([x, y])


def geometric_curvature(points: np.ndarray) -> np.ndarray:
    """Signed curvature of a cyclic polyline from tangent-angle differences.

    Assumes roughly uniform sample spacing; positive for counter-clockwise
    traversal of a convex curve.
    """
    d = np.roll(points, -1, axis=0) - np.roll(points, 1, axis=0)
    theta = np.arctan2(d[:, 1], d[:, 0])
    dtheta = np.roll(theta, -1) - np.roll(theta, 1)
    dtheta = (dtheta + np.pi) % (2 * np.pi) - np.pi
    ds = 0.5 * (
        np.linalg.norm(np.roll(points, -1, axis=0) - points, axis=1)
        + np.linalg.norm(points - np.roll(points, 1, axis=0), axis=1)
    )
    return dtheta / (2 * ds)


def curve_from_points(points: np.ndarray, level: float | None = None,
                      n_samples: int | None = None) -> IsophotoCurve:
    """Build an IsophotoCurve from a bare cyclic polyline.

    Curvature is computed geometrically; used for synthetic curves and as
    an oracle path independent of the intensity-based curvature.
    """
    pts = np.asarray(points, dtype=np.float64)
    if np.allclose(pts[0], pts[-1]):
        pts = pts[:-1]
    if n_samples is None:
        _, total = arc_lengths(pts)
        n_samples = max(16, int(round(total / RESAMPLE_SPACING)))
    pts = resample_closed(pts, n_samples)
    if _signed_area(pts) < 0:
        pts = pts[::-1].copy()
    s, L = arc_lengths(pts)
    k = geometric_curvature(pts)
    return IsophotoCurve(points=pts, level=level, L=L, s=s, k=k)


_curvature_cache: "weakref.WeakKeyDictionary[IntensityImage, np.ndarray]" = (
    weakref.WeakKeyDictionary()
)


def curvature_grid(img: IntensityImage) -> np.ndarray:
    """Per-pixel isophoto curvature -div(grad phi / |grad phi|)."""
    cached = _curvature_cache.get(img)
    if cached is not None:
        return cached
    g = gradient(img)
    mag = np.hypot(g.gx, g.gy)
    safe = np.maximum(mag, GRADIENT_FLOOR)
    nx = g.gx / safe
    ny = g.gy / safe
    dnx_dx = np.gradient(nx, axis=1)
    dny_dy = np.gradient(ny, axis=0)
    k = -(dnx_dx + dny_dy)
    k.setflags(write=False)
    _curvature_cache[img] = k
    return k


def _gradient_mag_grid(img: IntensityImage) -> np.ndarray:
    g = gradient(img)
    return np.hypot(g.gx, g.gy)


def curvature_at(img: IntensityImage, p, eps_g: float = GRADIENT_FLOOR) -> float:
    """Isophoto curvature at subpixel point p via the normalized-gradient divergence."""
    p = np.asarray(p, dtype=np.float64)
    g = gradient(img)
    gx = sample_grid_many(g.gx, p[None, :])[0]
    gy = sample_grid_many(g.gy, p[None, :])[0]
    if np.hypot(gx, gy) <= eps_g:
        raise DegenerateGradientError(f"gradient magnitude below {eps_g} at {p}")
    return float(sample_grid_many(curvature_grid(img), p[None, :])[0])


def curvature_at_many(img: IntensityImage, pts: np.ndarray) -> np.ndarray:
    return sample_grid_many(curvature_grid(img), np.asarray(pts, dtype=np.float64))


def _newton_to_level(img: IntensityImage, pts: np.ndarray, level: float,
                     steps: int = 2) -> np.ndarray:
    """Slide points along the gradient onto the requested level."""
    g = gradient(img)
    out = np.array(pts, dtype=np.float64)
    h, w = img.height, img.width
    for _ in range(steps):
        phi = sample_grid_many(img.data, out)
        gx = sample_grid_many(g.gx, out)
        gy = sample_grid_many(g.gy, out)
        mag2 = gx * gx + gy * gy
        scale = np.where(mag2 > GRADIENT_FLOOR**2, (level - phi) / np.maximum(mag2, 1e-300), 0.0)
        step = np.column_stack([gx, gy]) * scale[:, None]
        norm = np.linalg.norm(step, axis=1)
        too_far = norm > 1.0  # clamp runaway steps at flat spots
        step[too_far] *= (1.0 / norm[too_far])[:, None]
        out += step
        out[:, 0] = np.clip(out[:, 0], 0.0, w - 1.0)
        out[:, 1] = np.clip(out[:, 1], 0.0, h - 1.0)
    return out


def is_simple(points: np.ndarray, tol: float = SIMPLICITY_TOL) -> bool:
    """Reject curves where distant-in-arc samples come closer than tol."""
    n = points.shape[0]
    if n > 1024:
        idx = np.linspace(0, n - 1, 1024).astype(int)
        points = points[idx]
        n = points.shape[0]
    d = np.linalg.norm(points[:, None, :] - points[None, :, :], axis=2)
    i = np.arange(n)
    ring = np.abs(i[:, None] - i[None, :])
    ring = np.minimum(ring, n - ring)
    mask = ring > 3
    return bool(np.all(d[mask] > tol))


def _orient_and_sign(points: np.ndarray, k: np.ndarray, s: np.ndarray,
                     L: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Normalize traversal to counter-clockwise and the curvature sign to +2pi total."""
    if _signed_area(points) < 0:
        points = points[::-1].copy()
        k = k[::-1].copy()
        seg_rev = np.linalg.norm(np.diff(_close(points), axis=0), axis=1)
        s = np.concatenate([[0.0], np.cumsum(seg_rev[:-1])])
    ds = np.gradient(np.concatenate([s, [L]]))[:-1]
    if float(np.sum(k * ds)) < 0:
        k = -k
    return points, k, s


def extract_isophotos(img: IntensityImage, levels, min_length: float = 8.0,
                      spacing: float = RESAMPLE_SPACING) -> list[IsophotoCurve]:
    """Trace closed level-set components at each level, subpixel and resampled.

    Open components, short components, and self-intersecting traces are
    discarded.  Returns curves with Eq.-style intensity curvature sampled
    along the polyline; k_r is left unset until rescaling.
    """
    levels = np.atleast_1d(np.asarray(levels, dtype=np.float64))
    if np.any(levels <= 0) or np.any(levels >= 1):
        raise ValidationError("levels must lie strictly inside (0, 1)")
    if min_length < 8:
        raise ValidationError("min_length must be >= 8")
    curves: list[IsophotoCurve] = []
    for level in levels:
        for contour in measure.find_contours(img.data, level):
            if not np.allclose(contour[0], contour[-1]):
                continue  # open component
            pts = contour[:-1][:, ::-1].copy()  # (row, col) -> (x, y)
            if pts.shape[0] < 4:
                continue
            _, total = arc_lengths(pts)
            if total < min_length:
                continue
            pts = _newton_to_level(img, pts, level, steps=2)
            n = max(8, int(round(total / spacing)))
            pts = resample_closed(pts, n)
            pts = _newton_to_level(img, pts, level, steps=1)
            if not is_simple(pts):
                continue
            s, L = arc_lengths(pts)
            if L < min_length:
                continue
            k = curvature_at_many(img, pts)
            pts, k, s = _orient_and_sign(pts, k, s, L)
            curves.append(IsophotoCurve(points=pts, level=float(level), L=L, s=s, k=k))
    return curves


def rescale_curvature(curve: IsophotoCurve) -> IsophotoCurve:
    """Populate the similarity-invariant signature k_r = k * L."""
    if curve.L <= 0:
        raise ValidationError("curve has no length")
    return dataclasses.replace(curve, k_r=curve.k * curve.L)


def resample_curve(curve: IsophotoCurve, n: int) -> IsophotoCurve:
    """Resample a curve to n uniform arc-length samples, interpolating k."""
    pts = resample_closed(curve.points, n)
    s, L = arc_lengths(pts)
    # cyclic interpolation of the curvature profile over fractional arc
    src = np.concatenate([curve.s_frac, [1.0]])
    kk = np.concatenate([curve.k, [curve.k[0]]])
    k = np.interp(s / L, src, kk)
    k_r = k * L if curve.k_r is not None else None
    return IsophotoCurve(points=pts, level=curve.level, L=L, s=s, k=k, k_r=k_r)


def extract_outline(img: IntensityImage, background_level: float) -> list[OutlineCurve]:
    """Closed silhouette contour of each connected super-level body."""
    from scipy import ndimage

    mask = img.data > background_level
    labels, n_bodies = ndimage.label(mask)
    outlines: list[OutlineCurve] = []
    best_per_body: dict[int, tuple[float, np.ndarray]] = {}
    for contour in measure.find_contours(img.data, background_level):
        if not np.allclose(contour[0], contour[-1]):
            continue
        pts = contour[:-1][:, ::-1].copy()
        _, total = arc_lengths(pts)
        if total < 8.0:
            continue
        interior = pts.mean(axis=0)
        ix = int(round(np.clip(interior[0], 0, img.width - 1)))
        iy = int(round(np.clip(interior[1], 0, img.height - 1)))
        body = int(labels[iy, ix])
        if body == 0:
            continue
        prev = best_per_body.get(body)
        if prev is None or total > prev[0]:
            best_per_body[body] = (total, pts)
    for body in sorted(best_per_body):
        total, pts = best_per_body[body]
        n = max(16, int(round(total / RESAMPLE_SPACING)))
        pts = resample_closed(pts, n)
        if _signed_area(pts) < 0:
            pts = pts[::-1].copy()
        outlines.append(OutlineCurve(points=pts, body_id=body))
    return outlines
