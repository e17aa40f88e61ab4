"""Point correspondence between closed isophoto mates via signature correlation.

A point at fractional arc u on curve 1 corresponds to the point at
(u + offset) mod 1 on curve 2; the offset is found by maximizing the
normalized cross-correlation of the rescaled-curvature signatures and
confirmed by the centroid-distance signature.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .errors import (
    InsufficientDataError,
    ParallaxDeficientError,
    UninformativeCurveError,
    ValidationError,
)
from .isophoto import IsophotoCurve, rescale_curvature, resample_curve

COMMON_SAMPLES = 256  # common signature length M
SMOOTH_WINDOW = 5  # moving-average window, samples
VARIANCE_FLOOR = 0.05  # min std of smoothed k_r; below it curvature is uninformative
CORRELATION_THRESHOLD = 0.8
CENTROID_THRESHOLD = 0.8
TIE_EPS = 1e-6

VALID_SOURCES = ("ccpm", "exact", "chessboard")


@dataclasses.dataclass(frozen=True, eq=False)
class MatchSet:
    """Paired homogeneous points (x on image 1, x' on image 2)."""

    x: np.ndarray  # (N, 3)
    xp: np.ndarray  # (N, 3)
    source: str

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        xp = np.asarray(self.xp, dtype=np.float64)
        if x.shape != xp.shape or x.ndim != 2 or x.shape[1] != 3:
            raise ValidationError("match set needs matching (N, 3) arrays")
        if self.source not in VALID_SOURCES:
            raise ValidationError(f"unknown source '{self.source}'")
        if np.any(x[:, 2] <= 0) or np.any(xp[:, 2] <= 0):
            raise ValidationError("homogeneous third coordinate must be positive")
        x.setflags(write=False)
        xp.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "xp", xp)

    @property
    def N(self) -> int:
        return self.x.shape[0]

    def euclidean(self) -> tuple[np.ndarray, np.ndarray]:
        """Dehomogenized (N, 2) coordinates on each image."""
        return self.x[:, :2] / self.x[:, 2:3], self.xp[:, :2] / self.xp[:, 2:3]

    def to_json_dict(self) -> dict:
        a, b = self.euclidean()
        return {
            "source": self.source,
            "pairs": [[[float(p[0]), float(p[1])], [float(q[0]), float(q[1])]]
                      for p, q in zip(a, b)],
        }


def from_euclidean(pts1: np.ndarray, pts2: np.ndarray, source: str) -> MatchSet:
    pts1 = np.asarray(pts1, dtype=np.float64)
    pts2 = np.asarray(pts2, dtype=np.float64)
    ones = np.ones((pts1.shape[0], 1))
    return MatchSet(x=np.hstack([pts1, ones]), xp=np.hstack([pts2, ones]), source=source)


def prepare_curve(curve: IsophotoCurve, n: int = COMMON_SAMPLES) -> IsophotoCurve:
    """Resample to the common signature length and populate k_r."""
    return rescale_curvature(resample_curve(curve, n))


def _smooth_cyclic(sig: np.ndarray, window: int) -> np.ndarray:
    if window <= 1:
        return sig
    kernel = np.ones(window) / window
    padded = np.concatenate([sig[-(window // 2):], sig, sig[: window // 2]])
    return np.convolve(padded, kernel, mode="valid")[: sig.size]


def _signature(curve: IsophotoCurve, window: int) -> np.ndarray:
    if curve.k_r is None:
        raise ValidationError("curve is not rescaled; call prepare_curve first")
    return _smooth_cyclic(curve.k_r, window)


def _all_shift_correlations(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """NCC of a against every cyclic shift of b: r[j] = corr(a[u], b[u+j])."""
    m = a.size
    ac = a - a.mean()
    bc = b - b.mean()
    denom = np.linalg.norm(ac) * np.linalg.norm(bc)
    if denom == 0:
        return np.zeros(m)
    idx = (np.arange(m)[None, :] + np.arange(m)[:, None]) % m
    return (bc[idx] @ ac) / denom


def _argmax_smallest(r: np.ndarray) -> int:
    best = r.max()
    return int(np.flatnonzero(r >= best - TIE_EPS)[0])


def _subsample_peak(r: np.ndarray, j: int) -> float:
    """Refine an integer correlation peak by a parabola through its neighbors."""
    m = r.size
    a, b, c = r[(j - 1) % m], r[j % m], r[(j + 1) % m]
    den = a - 2.0 * b + c
    if abs(den) < 1e-12:
        return float(j)
    return j + float(np.clip(0.5 * (a - c) / den, -0.5, 0.5))


def correlate_curves_detailed(c1: IsophotoCurve, c2: IsophotoCurve,
                              smoothing: int = SMOOTH_WINDOW):
    """Full correlation result: (offset, score, reversed_traversal, all_scores)."""
    if c1.n_samples != c2.n_samples:
        raise ValidationError("curves must be resampled to a common sample count")
    m = c1.n_samples
    sig1 = _signature(c1, smoothing)
    sig2 = _signature(c2, smoothing)
    if sig1.std() < VARIANCE_FLOOR or sig2.std() < VARIANCE_FLOOR:
        raise UninformativeCurveError(
            "curvature signature variance below floor; curve is too circular"
        )
    r_fwd = _all_shift_correlations(sig1, sig2)
    r_rev = _all_shift_correlations(sig1, sig2[::-1].copy())
    if r_rev.max() > r_fwd.max() + TIE_EPS:
        j = _argmax_smallest(r_rev)
        return _subsample_peak(r_rev, j) % m / m, float(r_rev[j]), True, r_rev
    j = _argmax_smallest(r_fwd)
    return _subsample_peak(r_fwd, j) % m / m, float(r_fwd[j]), False, r_fwd


def correlate_curves(c1: IsophotoCurve, c2: IsophotoCurve,
                     smoothing: int = SMOOTH_WINDOW) -> tuple[float, float]:
    """Best cyclic arc shift of c2's signature against c1's, with its NCC score."""
    offset, score, _, _ = correlate_curves_detailed(c1, c2, smoothing)
    return offset, score


def point_at_frac(curve: IsophotoCurve, u) -> np.ndarray:
    """Cyclic interpolation of curve position at fractional arc u (scalar or array)."""
    u = np.mod(np.asarray(u, dtype=np.float64), 1.0)
    m = curve.n_samples
    # samples are uniform in arc length, so fractional arc maps to index directly
    t = u * m
    i0 = np.floor(t).astype(int) % m
    i1 = (i0 + 1) % m
    f = (t - np.floor(t))[..., None]
    return curve.points[i0] * (1 - f) + curve.points[i1] * f


def _centroid_signature(curve: IsophotoCurve) -> np.ndarray:
    return np.linalg.norm(curve.points - curve.centroid(), axis=1) / curve.L


def centroid_score_at(c1: IsophotoCurve, c2: IsophotoCurve, offset: float) -> float:
    d1 = _centroid_signature(c1)
    d2 = _centroid_signature(c2)
    m = c1.n_samples
    # evaluate d2 at (u + offset) for each sample u of c1, cyclic interpolation
    t = (np.arange(m) + offset * m) % m
    i0 = np.floor(t).astype(int) % m
    i1 = (i0 + 1) % m
    f = t - np.floor(t)
    d2s = d2[i0] * (1 - f) + d2[i1] * f
    a = d1 - d1.mean()
    b = d2s - d2s.mean()
    denom = np.linalg.norm(a) * np.linalg.norm(b)
    if denom == 0:
        return 0.0
    return float(a @ b / denom)


def verify_by_centroid(c1: IsophotoCurve, c2: IsophotoCurve, offset: float) -> float:
    """Correlation of centroid-distance signatures at the given offset."""
    if c1.n_samples != c2.n_samples:
        raise ValidationError("curves must share a common sample count")
    return centroid_score_at(c1, c2, offset)


def _cluster_bodies(curves: list[IsophotoCurve]) -> list[int]:
    """Greedy clustering of curves into bodies by centroid proximity."""
    n = len(curves)
    cents = np.array([c.centroid() for c in curves])
    diams = np.array([c.L / np.pi for c in curves])  # closed-curve diameter scale
    labels = [-1] * n
    next_label = 0
    for i in range(n):
        if labels[i] != -1:
            continue
        labels[i] = next_label
        for j in range(i + 1, n):
            if labels[j] != -1:
                continue
            if np.linalg.norm(cents[i] - cents[j]) < 0.75 * max(diams[i], diams[j]):
                labels[j] = labels[i]
        next_label += 1
    # transitive merge pass
    changed = True
    while changed:
        changed = False
        for i in range(n):
            for j in range(n):
                if labels[i] != labels[j] and np.linalg.norm(
                    cents[i] - cents[j]
                ) < 0.75 * max(diams[i], diams[j]):
                    old = labels[j]
                    for kk in range(n):
                        if labels[kk] == old:
                            labels[kk] = labels[i]
                    changed = True
    return labels


def build_match_set(pairs_of_curves, samples_per_curve: int = 16,
                    offsets=None, smoothing: int = SMOOTH_WINDOW,
                    corr_threshold: float = CORRELATION_THRESHOLD,
                    centroid_threshold: float = CENTROID_THRESHOLD,
                    require_two_bodies: bool = True) -> MatchSet:
    """Aggregate equal-arc correspondences from verified curve pairs.

    Each pair contributes samples_per_curve correspondences at equal
    fractional arc distances from the anchor found by correlation.  When
    offsets is given (one per pair) the correlation step is skipped and
    the provided anchors are used instead.
    """
    pairs_of_curves = list(pairs_of_curves)
    if not pairs_of_curves:
        raise InsufficientDataError("no curve pairs supplied")
    pts1 = []
    pts2 = []
    for idx, (c1, c2) in enumerate(pairs_of_curves):
        c1p = prepare_curve(c1)
        c2p = prepare_curve(c2)
        if offsets is not None:
            offset = float(offsets[idx])
        else:
            offset, score = correlate_curves(c1p, c2p, smoothing)
            if score < corr_threshold:
                raise ValidationError(
                    f"curve pair {idx}: correlation {score:.3f} below threshold"
                )
            cscore = verify_by_centroid(c1p, c2p, offset)
            if cscore < centroid_threshold:
                raise ValidationError(
                    f"curve pair {idx}: centroid score {cscore:.3f} below threshold"
                )
        u = np.arange(samples_per_curve) / samples_per_curve
        pts1.append(point_at_frac(c1p, u))
        pts2.append(point_at_frac(c2p, u + offset))
    if require_two_bodies:
        labels = _cluster_bodies([c1 for c1, _ in pairs_of_curves])
        if len(set(labels)) < 2:
            raise ParallaxDeficientError(
                "all curves come from one body; need two bodies at distinct depths"
            )
    pts1 = np.vstack(pts1)
    pts2 = np.vstack(pts2)
    if pts1.shape[0] < 8:
        raise InsufficientDataError(f"only {pts1.shape[0]} correspondences; need >= 8")
    return from_euclidean(pts1, pts2, source="ccpm")
