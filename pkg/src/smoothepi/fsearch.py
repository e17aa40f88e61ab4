"""Epipole-driven fundamental-matrix search (CCPM stage two).

For every candidate epipole e' the fundamental matrix is composed as
F = [e']x H, H is re-refined against the symmetric epipolar-distance
cost while a barrier keeps its curve-transfer residual within 1.5x the
reference, and the spiral-local minima with Z < 1.34 Z_min are retained.
"""

from __future__ import annotations

import dataclasses

import numpy as np
from scipy.optimize import minimize

from .correspond import MatchSet
from .errors import (
    DegenerateLineError,
    HorizonError,
    InvalidEpipoleError,
    ValidationError,
)
from .homography import Homography, cost_S, normalize_h
from .isophoto import IsophotoCurve, resample_curve

LEASH_FACTOR = 1.5
FILTER_FACTOR = 1.34
LEASH_WEIGHT = 1e3  # px^-1, quadratic barrier weight beyond the leash
SEARCH_MAXFEV = 500  # per-epipole refinement budget
LEASH_CURVE_SAMPLES = 64  # decimated curve length for the in-search leash term


def skew(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


@dataclasses.dataclass(frozen=True, eq=False)
class FundamentalMatrix:
    """Rank-2 matrix with unit Frobenius norm and its second-image epipole."""

    F: np.ndarray  # (3, 3), ||F||_F == 1
    e_prime: np.ndarray  # (3,) homogeneous epipole on image 2, e'^T F == 0
    scores: dict = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        F = np.asarray(self.F, dtype=np.float64)
        e = np.asarray(self.e_prime, dtype=np.float64)
        if F.shape != (3, 3) or e.shape != (3,):
            raise ValidationError("bad fundamental matrix shapes")
        F.setflags(write=False)
        e.setflags(write=False)
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "e_prime", e)

    def with_scores(self, **kwargs) -> "FundamentalMatrix":
        scores = dict(self.scores)
        scores.update(kwargs)
        return dataclasses.replace(self, scores=scores)

    def to_json_dict(self) -> dict:
        return {
            "F": [float(v) for v in self.F.ravel()],
            "e_prime": [float(v) for v in self.e_prime],
            "scores": {k: float(v) for k, v in self.scores.items()},
        }


def from_matrix(F: np.ndarray) -> FundamentalMatrix:
    """Normalize an arbitrary 3x3 to unit norm, enforce rank 2, extract e'."""
    F = np.asarray(F, dtype=np.float64)
    U, s, Vt = np.linalg.svd(F)
    s = s.copy()
    s[2] = 0.0
    F2 = U @ np.diag(s) @ Vt
    norm = np.linalg.norm(F2)
    if norm < 1e-300:
        raise ValidationError("zero fundamental matrix")
    F2 = F2 / norm
    e_prime = U[:, 2]  # left null vector
    return FundamentalMatrix(F=F2, e_prime=e_prime)


def compose_F(e_prime: np.ndarray, H: Homography | np.ndarray) -> FundamentalMatrix:
    """F = [e']x H, normalized to unit Frobenius norm (rank 2 by construction)."""
    e = np.asarray(e_prime, dtype=np.float64)
    if np.linalg.norm(e) < 1e-12:
        raise InvalidEpipoleError("epipole vector is zero")
    Hm = H.H if isinstance(H, Homography) else np.asarray(H, dtype=np.float64)
    F = skew(e) @ Hm
    norm = np.linalg.norm(F)
    if norm < 1e-300:
        raise InvalidEpipoleError("composed matrix vanishes")
    return FundamentalMatrix(F=F / norm, e_prime=e / np.linalg.norm(e))


def point_line_distances(pts: np.ndarray, lines: np.ndarray) -> np.ndarray:
    """d_l for homogeneous points (N, 3) against lines (N, 3)."""
    num = np.abs(np.sum(pts * lines, axis=1))
    den = pts[:, 2] * np.hypot(lines[:, 0], lines[:, 1])
    bad = np.flatnonzero(np.hypot(lines[:, 0], lines[:, 1]) < 1e-300)
    if bad.size:
        raise DegenerateLineError(int(bad[0]))
    return num / den


def cost_Z(F: FundamentalMatrix | np.ndarray, matches: MatchSet) -> float:
    """Mean symmetric point-to-epipolar-line distance over the match set."""
    Fm = F.F if isinstance(F, FundamentalMatrix) else np.asarray(F, dtype=np.float64)
    if matches.N < 1:
        raise ValidationError("empty match set")
    lines2 = matches.x @ Fm.T  # F x_i, lines on image 2
    lines1 = matches.xp @ Fm  # F^T x'_i, lines on image 1
    d2 = point_line_distances(matches.xp, lines2)
    d1 = point_line_distances(matches.x, lines1)
    return float((d2.sum() + d1.sum()) / (2 * matches.N))


def _pack(H: np.ndarray) -> np.ndarray:
    return H.ravel()[:8].copy()


def _unpack(params: np.ndarray) -> np.ndarray:
    return np.append(params, 1.0).reshape(3, 3)


def refine_at_epipole(e_prime: np.ndarray, H0: Homography, matches: MatchSet,
                      S_min: float, curves: tuple[IsophotoCurve, IsophotoCurve],
                      max_evals: int = SEARCH_MAXFEV,
                      leash_weight: float = LEASH_WEIGHT,
                      leash_samples: int | None = LEASH_CURVE_SAMPLES,
                      return_h: bool = False):
    """Minimize Z over H at a fixed epipole, leashed to S(H) <= 1.5 S_min.

    The leash term is zero below the bound and grows quadratically above
    it.  Returns (F, Z) with Z the unpenalized cost; with return_h the
    homography the best F was composed from is appended.
    """
    if max_evals <= 0:
        # scoring pass: keep the reference homography, just compose and score
        F0 = compose_F(e_prime, H0)
        z0 = cost_Z(F0, matches)
        return (F0, z0, H0) if return_h else (F0, z0)
    c1, c2 = curves
    if leash_samples is not None and c1.n_samples > leash_samples:
        c1 = resample_curve(c1, leash_samples)
        c2 = resample_curve(c2, leash_samples)
    bound = LEASH_FACTOR * S_min
    e = np.asarray(e_prime, dtype=np.float64)

    def objective(params):
        H = _unpack(params)
        try:
            F = skew(e) @ H
            norm = np.linalg.norm(F)
            if norm < 1e-300:
                return 1e12
            z = cost_Z(F / norm, matches)
            s = cost_S(H, c1, c2)
        except (DegenerateLineError, HorizonError):
            return 1e12
        if not np.isfinite(z) or not np.isfinite(s):
            return 1e12
        over = max(0.0, s - bound)
        return z + leash_weight * over * over

    x0 = _pack(H0.H)
    z0 = objective(x0)
    if not np.isfinite(z0) or z0 >= 1e12:
        F0 = compose_F(e, H0)
        zz = cost_Z(F0, matches)
        return (F0, zz, H0) if return_h else (F0, zz)
    res = minimize(
        objective,
        x0,
        method="Nelder-Mead",
        options={"xatol": 1e-6, "fatol": 1e-10, "maxfev": max_evals},
    )
    params = res.x if (np.isfinite(res.fun) and res.fun <= z0) else x0
    H_best = _unpack(params)
    if abs(np.linalg.det(H_best)) <= 1e-12:
        H_best = H0.H
    elif cost_S(H_best, c1, c2) > bound + 1e-3:
        # the soft barrier can be overrun when the leash margin is tiny;
        # the bound is a hard postcondition, so fall back to the reference
        H_best = H0.H
    H_out = normalize_h(H_best)
    F = compose_F(e, H_out)
    z = cost_Z(F, matches)
    return (F, z, H_out) if return_h else (F, z)


@dataclasses.dataclass(frozen=True, eq=False)
class CandidateEntry:
    spiral_index: int
    epipole: np.ndarray  # (3,) homogeneous, pixel coordinates
    F: FundamentalMatrix
    Z: float


@dataclasses.dataclass(frozen=True, eq=False)
class CandidateSet:
    """Per-spiral-index scores with the retained local-minimum candidates."""

    entries: list  # list[CandidateEntry], in spiral order
    Z_min: float
    filtered: list  # spiral indices of retained local minima

    def retained(self) -> list:
        by_index = {e.spiral_index: e for e in self.entries}
        return [by_index[i] for i in self.filtered]

    def to_json_dict(self) -> dict:
        return {
            "Z_min": float(self.Z_min),
            "filtered": [int(i) for i in self.filtered],
            "entries": [
                {
                    "spiral_index": int(e.spiral_index),
                    "epipole": [float(v) for v in e.epipole],
                    "F": [float(v) for v in e.F.F.ravel()],
                    "Z": float(e.Z),
                }
                for e in self.entries
            ],
        }


def local_minima_filter(Z: np.ndarray, factor: float = FILTER_FACTOR) -> tuple[float, list[int]]:
    """Spiral-local minima of Z below factor * Z_min.

    Strictly below both distinct neighbors; a tie plateau keeps its lowest
    index; the two boundary entries compare against their single neighbor.
    """
    Z = np.asarray(Z, dtype=np.float64)
    n = Z.size
    if n == 0:
        raise ValidationError("empty score sequence")
    z_min = float(Z.min())
    minima: list[int] = []
    i = 0
    while i < n:
        j = i
        while j + 1 < n and Z[j + 1] == Z[i]:
            j += 1  # plateau [i, j]
        left_ok = i == 0 or Z[i - 1] > Z[i]
        right_ok = j == n - 1 or Z[j + 1] > Z[i]
        if left_ok and right_ok:
            minima.append(i)  # plateau tie broken to lowest index
        i = j + 1
    retained = [int(i) for i in minima if Z[i] < factor * z_min]
    return z_min, retained


def search(partition, H0: Homography, S_min: float, matches: MatchSet,
           curves: tuple[IsophotoCurve, IsophotoCurve], frame,
           max_evals: int = SEARCH_MAXFEV,
           leash_samples: int | None = LEASH_CURVE_SAMPLES,
           progress=None) -> CandidateSet:
    """Refine at every spiral representative and keep the filtered minima.

    frame converts the partition's normalized plane into pixel
    coordinates (see partition.PartitionFrame).
    """
    from .partition import spiral_representatives

    reps = spiral_representatives(partition)
    if not reps:
        raise ValidationError("empty partition")
    entries = []
    for i, rep in enumerate(reps):
        e_pix = frame.to_pixels_homogeneous(rep)
        F, z = refine_at_epipole(
            e_pix, H0, matches, S_min, curves,
            max_evals=max_evals, leash_samples=leash_samples,
        )
        entries.append(CandidateEntry(spiral_index=i, epipole=e_pix, F=F, Z=z))
        if progress is not None and i % 200 == 0:
            progress(i, len(reps))
    Z = np.array([e.Z for e in entries])
    z_min, retained = local_minima_filter(Z)
    return CandidateSet(entries=entries, Z_min=z_min, filtered=retained)


def polish_retained(cands: CandidateSet, H0: Homography, S_min: float,
                    matches: MatchSet,
                    curves: tuple[IsophotoCurve, IsophotoCurve],
                    max_evals: int = SEARCH_MAXFEV,
                    leash_samples: int | None = LEASH_CURVE_SAMPLES,
                    ) -> CandidateSet:
    """Full refinement at the retained epipoles only.

    The scan Z values stay untouched (the local-minimum filter remains
    replayable from the entries); each retained entry's F is replaced by
    the refined matrix annotated with its refined cost as Z_ccpm.
    """
    by_index = {e.spiral_index: e for e in cands.entries}
    new_entries = list(cands.entries)
    pos = {e.spiral_index: i for i, e in enumerate(cands.entries)}
    for si in cands.filtered:
        entry = by_index[si]
        F, z = refine_at_epipole(entry.epipole, H0, matches, S_min, curves,
                                 max_evals=max_evals,
                                 leash_samples=leash_samples)
        new_entries[pos[si]] = dataclasses.replace(
            entry, F=F.with_scores(Z_ccpm=z))
    return CandidateSet(entries=new_entries, Z_min=cands.Z_min,
                        filtered=list(cands.filtered))
