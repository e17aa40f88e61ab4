"""Plane-induced homography between corresponding isophotos.

Estimation is normalized DLT; refinement minimizes the symmetric
nearest-point transfer cost between the two closed curves with a
derivative-free simplex search over the eight free entries (the corner
entry is pinned to one).
"""

from __future__ import annotations

import dataclasses

import numpy as np
from scipy.optimize import minimize
from scipy.spatial.distance import cdist

from .correspond import MatchSet
from .errors import DegenerateConfigurationError, HorizonError, ValidationError
from .isophoto import IsophotoCurve

W_FLOOR = 1e-12
SIMPLEX_XATOL = 1e-6
SIMPLEX_MAXFEV = 2000


@dataclasses.dataclass(frozen=True, eq=False)
class Homography:
    """3x3 plane-induced map with its transfer residual bookkeeping."""

    H: np.ndarray  # (3, 3), H[2, 2] == 1
    S: float | None = None  # current symmetric transfer residual, px
    S_min: float | None = None  # best residual achieved at estimation time
    gauge_flagged: bool = False  # corner entry was near zero and re-gauged
    aborted: bool = False  # refinement hit a non-finite cost and kept the start

    def __post_init__(self):
        H = np.asarray(self.H, dtype=np.float64)
        if H.shape != (3, 3):
            raise ValidationError("homography must be 3x3")
        if abs(H[2, 2] - 1.0) > 1e-12:
            raise ValidationError("homography corner entry must be exactly 1")
        if abs(np.linalg.det(H)) <= 1e-12:
            raise ValidationError("homography is not invertible")
        H.setflags(write=False)
        object.__setattr__(self, "H", H)

    def inverse(self) -> "Homography":
        Hinv = np.linalg.inv(self.H)
        return normalize_h(Hinv)

    def apply(self, pts: np.ndarray) -> np.ndarray:
        """Map (N, 2) euclidean points through H, dehomogenizing."""
        return _map_points(self.H, np.asarray(pts, dtype=np.float64))

    def to_json_list(self) -> list:
        return [float(v) for v in self.H.ravel()]


def normalize_h(H: np.ndarray) -> Homography:
    """Gauge a raw 3x3 matrix so the corner entry is one."""
    H = np.asarray(H, dtype=np.float64)
    flagged = False
    if abs(H[2, 2]) < 1e-9 * np.abs(H).max():
        H = H / np.abs(H).max()  # re-gauge by the largest-magnitude entry
        flagged = True
        if abs(H[2, 2]) < W_FLOOR:
            raise ValidationError("homography corner entry vanishes; cannot gauge")
    return Homography(H=H / H[2, 2], gauge_flagged=flagged)


def _map_points(H: np.ndarray, pts: np.ndarray) -> np.ndarray:
    ph = np.column_stack([pts, np.ones(pts.shape[0])])
    q = ph @ H.T
    w = q[:, 2]
    if np.any(np.abs(w) < W_FLOOR):
        raise HorizonError("homography maps a point to the plane at infinity")
    return q[:, :2] / w[:, None]


def _hartley_normalization(pts: np.ndarray) -> np.ndarray:
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    mean_dist = np.mean(np.linalg.norm(centered, axis=1))
    scale = np.sqrt(2.0) / max(mean_dist, 1e-12)
    return np.array(
        [
            [scale, 0.0, -scale * centroid[0]],
            [0.0, scale, -scale * centroid[1]],
            [0.0, 0.0, 1.0],
        ]
    )


def dlt(matches: MatchSet) -> Homography:
    """Hartley-normalized direct linear transform homography estimate."""
    if matches.N < 4:
        raise ValidationError(f"DLT needs at least 4 correspondences, got {matches.N}")
    p1, p2 = matches.euclidean()
    T1 = _hartley_normalization(p1)
    T2 = _hartley_normalization(p2)
    n1 = _map_points(T1, p1)
    n2 = _map_points(T2, p2)
    rows = []
    for (x, y), (u, v) in zip(n1, n2):
        rows.append([0, 0, 0, -x, -y, -1, v * x, v * y, v])
        rows.append([x, y, 1, 0, 0, 0, -u * x, -u * y, -u])
    A = np.asarray(rows, dtype=np.float64)
    _, sv, Vt = np.linalg.svd(A)
    if sv[7] < 1e-9 * max(sv[0], 1e-300):
        raise DegenerateConfigurationError(
            "design matrix is rank deficient (collinear or repeated points)"
        )
    Hn = Vt[-1].reshape(3, 3)
    H = np.linalg.inv(T2) @ Hn @ T1
    return normalize_h(H)


def cost_S(H: Homography | np.ndarray, c1: IsophotoCurve, c2: IsophotoCurve) -> float:
    """Symmetric mean nearest-point transfer distance between the two curves."""
    Hm = H.H if isinstance(H, Homography) else np.asarray(H, dtype=np.float64)
    fwd = _map_points(Hm, c1.points)
    bwd = _map_points(np.linalg.inv(Hm), c2.points)
    d1 = cdist(fwd, c2.points).min(axis=1)
    d2 = cdist(bwd, c1.points).min(axis=1)
    return float((d1.sum() + d2.sum()) / (c1.n_samples + c2.n_samples))


def _pack(H: np.ndarray) -> np.ndarray:
    return H.ravel()[:8].copy()


def _unpack(params: np.ndarray) -> np.ndarray:
    return np.append(params, 1.0).reshape(3, 3)


def refine(H0: Homography, c1: IsophotoCurve, c2: IsophotoCurve,
           max_evals: int = SIMPLEX_MAXFEV) -> Homography:
    """Simplex minimization of cost_S over the eight free entries of H."""
    s0 = cost_S(H0, c1, c2)
    if not np.isfinite(s0):
        return dataclasses.replace(H0, S=s0, S_min=s0, aborted=True)

    def objective(params):
        H = _unpack(params)
        if abs(np.linalg.det(H)) <= 1e-12:
            return 1e12
        try:
            return cost_S(H, c1, c2)
        except HorizonError:
            return 1e12

    res = minimize(
        objective,
        _pack(H0.H),
        method="Nelder-Mead",
        options={
            "xatol": SIMPLEX_XATOL,
            "fatol": 1e-10,
            "maxfev": max_evals,
            "initial_simplex": None,
        },
    )
    best = float(min(res.fun, s0))
    if res.fun <= s0 and np.isfinite(res.fun) and res.fun < 1e11:
        H = _unpack(res.x)
        out = normalize_h(H)
        return dataclasses.replace(out, S=best, S_min=best)
    return dataclasses.replace(H0, S=s0, S_min=s0, aborted=True)
