"""Characteristic-point and outline-tangent methods, plus the exact-match baseline.

Illumination on a smooth surface creates six kinds of characteristic
points: intensity minima, maxima, and saddles (kinds 1-3, critical
points of the intensity surface), positive and negative high-curvature
cusps on level curves (kinds 4-5), and curvature inflections (kind 6).
These are detected, matched by six sequential criteria, and fed to
RANSAC.  The outline-tangent search scores candidate epipole pairs by
the transfer residual of outline tangency points.  The baseline
estimates F by the normalized eight-point algorithm on exact
correspondences and scores with the mean symmetric epipolar distance.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .correspond import MatchSet, from_euclidean
from .ctpm import tangent_points_from_epipole
from .errors import (
    ConsensusFailureError,
    DegenerateConfigurationError,
    InsufficientTangencyError,
    ValidationError,
)
from .fsearch import (
    CandidateEntry,
    CandidateSet,
    FundamentalMatrix,
    compose_F,
    cost_Z,
    local_minima_filter,
    point_line_distances,
)
from .homography import Homography, _hartley_normalization
from .imagery import IntensityImage, gradient, sample_grid_many
from .isophoto import OutlineCurve, extract_isophotos

KIND_MIN = 1
KIND_MAX = 2
KIND_SADDLE = 3
KIND_CUSP_POS = 4
KIND_CUSP_NEG = 5
KIND_INFLECTION = 6

DESCRIPTOR_SIZE = 11
TAU_INTENSITY = 0.02
TAU_CURVATURE = 0.3  # relative difference of curvature attributes
TAU_DESCRIPTOR = 0.8
CUSP_RADIUS_THRESHOLD = 5.0  # px; |curvature radius| below it marks a cusp
INTENSITY_FLOOR = 0.02  # background suppression for critical points
RANSAC_ITERATIONS = 1000
RANSAC_THRESHOLD = 1.5  # px
NEIGHBOR_ARC_LIMIT = 0.25  # fraction of curve length for criterion 5


@dataclasses.dataclass(frozen=True, eq=False)
class CharacteristicPoint:
    """One illumination-created feature with its matching attributes."""

    kind: int
    position: np.ndarray  # (2,) subpixel (x, y)
    intensity: float
    shape: tuple | None  # kinds 1-3: two principal curvatures; 4-5: (radius,)
    level: float | None  # isophoto level for kinds 4-6
    descriptor: np.ndarray  # normalized local patch, flattened
    curve_id: int = -1  # source isophoto for kinds 4-6
    arc_index: int = -1  # sample index along that isophoto

    def __post_init__(self):
        if self.kind not in (1, 2, 3, 4, 5, 6):
            raise ValidationError(f"unknown characteristic kind {self.kind}")
        p = np.asarray(self.position, dtype=np.float64)
        d = np.asarray(self.descriptor, dtype=np.float64)
        p.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "descriptor", d)

    def to_json_dict(self) -> dict:
        return {
            "kind": int(self.kind),
            "position": [float(self.position[0]), float(self.position[1])],
            "intensity": float(self.intensity),
            "shape": None if self.shape is None else [float(v) for v in self.shape],
            "level": None if self.level is None else float(self.level),
        }


def _patch_descriptor(img: IntensityImage, p: np.ndarray,
                      size: int = DESCRIPTOR_SIZE) -> np.ndarray:
    half = size // 2
    ox, oy = np.meshgrid(np.arange(-half, half + 1), np.arange(-half, half + 1))
    pts = np.column_stack([p[0] + ox.ravel(), p[1] + oy.ravel()]).astype(np.float64)
    pts[:, 0] = np.clip(pts[:, 0], 0.0, img.width - 1.0)
    pts[:, 1] = np.clip(pts[:, 1], 0.0, img.height - 1.0)
    patch = sample_grid_many(img.data, pts)
    patch = patch - patch.mean()
    norm = np.linalg.norm(patch)
    return patch / norm if norm > 1e-12 else patch


def _hessian_grids(img: IntensityImage):
    g = gradient(img)
    hxx = np.gradient(g.gx, axis=1)
    hxy = np.gradient(g.gx, axis=0)
    hyy = np.gradient(g.gy, axis=0)
    return g, hxx, hxy, hyy


def _critical_points(img: IntensityImage) -> list[CharacteristicPoint]:
    """Kinds 1-3: subpixel zero-gradient points classified by the Hessian."""
    g, hxx, hxy, hyy = _hessian_grids(img)
    gx, gy = g.gx, g.gy
    h, w = img.height, img.width
    # cells where both gradient components change sign
    sx = (gx[:-1, :-1] * gx[:-1, 1:] <= 0) | (gx[1:, :-1] * gx[1:, 1:] <= 0)
    sy = (gy[:-1, :-1] * gy[1:, :-1] <= 0) | (gy[:-1, 1:] * gy[1:, 1:] <= 0)
    cy, cx = np.nonzero(sx & sy)
    out: list[CharacteristicPoint] = []
    seen: set[tuple[int, int]] = set()
    for y0, x0 in zip(cy, cx):
        if not (1 <= x0 < w - 2 and 1 <= y0 < h - 2):
            continue
        p = np.array([x0 + 0.5, y0 + 0.5])
        ok = True
        for _ in range(8):  # Newton on the gradient with the sampled Hessian
            gv = np.array([sample_grid_many(gx, p[None, :])[0],
                           sample_grid_many(gy, p[None, :])[0]])
            H = np.array([
                [sample_grid_many(hxx, p[None, :])[0],
                 sample_grid_many(hxy, p[None, :])[0]],
                [sample_grid_many(hxy, p[None, :])[0],
                 sample_grid_many(hyy, p[None, :])[0]],
            ])
            if abs(np.linalg.det(H)) < 1e-12:
                ok = False
                break
            step = np.linalg.solve(H, gv)
            nrm = np.linalg.norm(step)
            if nrm > 1.0:
                step *= 1.0 / nrm
            p = p - step
            if nrm < 1e-6:
                break
        if not ok or not (0 <= p[0] <= w - 1 and 0 <= p[1] <= h - 1):
            continue
        if np.hypot(p[0] - (x0 + 0.5), p[1] - (y0 + 0.5)) > 2.0:
            continue  # converged to a different cell's critical point
        val = float(sample_grid_many(img.data, p[None, :])[0])
        if val < INTENSITY_FLOOR:
            continue
        key = (int(round(p[0] * 2)), int(round(p[1] * 2)))
        if key in seen:
            continue
        seen.add(key)
        H = np.array([
            [sample_grid_many(hxx, p[None, :])[0],
             sample_grid_many(hxy, p[None, :])[0]],
            [sample_grid_many(hxy, p[None, :])[0],
             sample_grid_many(hyy, p[None, :])[0]],
        ])
        ev = np.linalg.eigvalsh(H)
        if ev[0] > 0 and ev[1] > 0:
            kind = KIND_MIN
        elif ev[0] < 0 and ev[1] < 0:
            kind = KIND_MAX
        elif ev[0] * ev[1] < 0:
            kind = KIND_SADDLE
        else:
            continue
        out.append(CharacteristicPoint(
            kind=kind, position=p, intensity=val,
            shape=(float(ev[0]), float(ev[1])), level=None,
            descriptor=_patch_descriptor(img, p),
        ))
    return out


def _curve_points(img: IntensityImage, level_step: float,
                  curvature_threshold: float) -> list[CharacteristicPoint]:
    """Kinds 4-6 along isophotos sampled every level_step in intensity."""
    levels = np.arange(level_step, 1.0, level_step)
    levels = levels[(levels > 0.0) & (levels < 1.0)]
    out: list[CharacteristicPoint] = []
    curves = extract_isophotos(img, levels)
    for cid, curve in enumerate(curves):
        k = curve.k
        n = k.size
        prev = np.roll(k, 1)
        nxt = np.roll(k, -1)
        # cusp kinds: curvature extrema above the threshold (radius below it)
        is_ext = ((k >= prev) & (k > nxt) & (k > 0)) | ((k <= prev) & (k < nxt) & (k < 0))
        strong = np.abs(k) > curvature_threshold
        for i in np.flatnonzero(is_ext & strong):
            kind = KIND_CUSP_POS if k[i] > 0 else KIND_CUSP_NEG
            p = curve.points[i]
            out.append(CharacteristicPoint(
                kind=kind, position=p, intensity=float(curve.level),
                shape=(float(1.0 / k[i]),), level=float(curve.level),
                descriptor=_patch_descriptor(img, p),
                curve_id=cid, arc_index=int(i),
            ))
        # inflections: sign changes of curvature between adjacent samples
        for i in np.flatnonzero(np.sign(k) * np.sign(nxt) < 0):
            f = abs(k[i]) / (abs(k[i]) + abs(k[(i + 1) % n]))
            p = curve.points[i] * (1 - f) + curve.points[(i + 1) % n] * f
            out.append(CharacteristicPoint(
                kind=KIND_INFLECTION, position=p, intensity=float(curve.level),
                shape=None, level=float(curve.level),
                descriptor=_patch_descriptor(img, p),
                curve_id=cid, arc_index=int(i),
            ))
    return out


def detect_characteristic_points(img: IntensityImage, level_step: float = 0.05,
                                 curvature_threshold: float = 1.0 / CUSP_RADIUS_THRESHOLD,
                                 ) -> list[CharacteristicPoint]:
    """All six kinds of illumination-created characteristic points."""
    if not (0.0 < level_step < 1.0):
        raise ValidationError("level_step must lie in (0, 1)")
    if curvature_threshold <= 0:
        raise ValidationError("curvature_threshold must be positive")
    return _critical_points(img) + _curve_points(img, level_step, curvature_threshold)


def _shape_compatible(a: CharacteristicPoint, b: CharacteristicPoint,
                      tau: float) -> bool:
    if a.shape is None or b.shape is None:
        return True  # inflections carry no magnitude attribute
    for u, v in zip(sorted(a.shape), sorted(b.shape)):
        if u * v < 0:
            return False
        denom = max(abs(u), abs(v), 1e-12)
        if abs(u - v) / denom > tau:
            return False
    return True


def _nearest_kind_along_curve(points: list[CharacteristicPoint],
                              p: CharacteristicPoint) -> int | None:
    """Kind of the nearest other characteristic point on the same isophoto."""
    if p.curve_id < 0:
        return None
    best = None
    for q in points:
        if q is p or q.curve_id != p.curve_id:
            continue
        d = np.linalg.norm(q.position - p.position)
        if best is None or d < best[0]:
            best = (d, q.kind)
    return None if best is None else best[1]


def match_characteristic_points(pts1: list[CharacteristicPoint],
                                pts2: list[CharacteristicPoint],
                                tau_intensity: float = TAU_INTENSITY,
                                tau_curvature: float = TAU_CURVATURE,
                                tau_descriptor: float = TAU_DESCRIPTOR) -> MatchSet:
    """Mutual-best pairing after the six sequential compatibility filters.

    (1) equal kind, (2) close intensity, (3)/(4) close curvature
    attributes, (5) equal kind of the nearest companion along the shared
    isophoto, (6) descriptor correlation; the descriptor correlation
    breaks ties among survivors.
    """
    if not pts1 or not pts2:
        raise ValidationError("both characteristic point lists must be non-empty")
    nk1 = [_nearest_kind_along_curve(pts1, p) for p in pts1]
    nk2 = [_nearest_kind_along_curve(pts2, p) for p in pts2]
    scores = np.full((len(pts1), len(pts2)), -np.inf)
    for i, a in enumerate(pts1):
        for j, b in enumerate(pts2):
            if a.kind != b.kind:
                continue
            if abs(a.intensity - b.intensity) > tau_intensity:
                continue
            if not _shape_compatible(a, b, tau_curvature):
                continue
            if nk1[i] is not None and nk2[j] is not None and nk1[i] != nk2[j]:
                continue
            c = float(a.descriptor @ b.descriptor)
            if c < tau_descriptor:
                continue
            scores[i, j] = c
    p1, p2 = [], []
    for i in range(len(pts1)):
        j = int(np.argmax(scores[i]))
        if not np.isfinite(scores[i, j]):
            continue
        if int(np.argmax(scores[:, j])) != i:
            continue  # not mutual best
        p1.append(pts1[i].position)
        p2.append(pts2[j].position)
    if not p1:
        return MatchSet(x=np.empty((0, 3)), xp=np.empty((0, 3)), source="exact")
    return from_euclidean(np.asarray(p1), np.asarray(p2), source="exact")


def eight_point(matches: MatchSet) -> FundamentalMatrix:
    """Hartley-normalized linear estimate with rank-2 truncation."""
    if matches.N < 8:
        raise ValidationError(f"eight-point needs >= 8 matches, got {matches.N}")
    p1, p2 = matches.euclidean()
    T1 = _hartley_normalization(p1)
    T2 = _hartley_normalization(p2)
    h1 = np.column_stack([p1, np.ones(matches.N)]) @ T1.T
    h2 = np.column_stack([p2, np.ones(matches.N)]) @ T2.T
    A = np.column_stack([
        h2[:, 0] * h1[:, 0], h2[:, 0] * h1[:, 1], h2[:, 0],
        h2[:, 1] * h1[:, 0], h2[:, 1] * h1[:, 1], h2[:, 1],
        h1[:, 0], h1[:, 1], np.ones(matches.N),
    ])
    _, sv, Vt = np.linalg.svd(A)
    # a plane-restricted configuration leaves a >= 2-dimensional nullspace:
    # the 8th singular value vanishes (the 9th is zero anyway for N == 8)
    if sv[7] < 1e-9 * max(sv[0], 1e-300):
        raise DegenerateConfigurationError(
            "matches admit multiple epipolar geometries (coplanar or degenerate)"
        )
    Fn = Vt[-1].reshape(3, 3)
    F = T2.T @ Fn @ T1
    U, s, Vt2 = np.linalg.svd(F)
    s[2] = 0.0
    F = U @ np.diag(s) @ Vt2
    F = F / np.linalg.norm(F)
    return FundamentalMatrix(F=F, e_prime=U[:, 2])


def cost_B(F: FundamentalMatrix, exact_matches: MatchSet) -> float:
    """Mean symmetric epipolar distance over exact (chessboard) matches."""
    if exact_matches.source not in ("chessboard", "exact"):
        raise ValidationError("cost_B needs exact or chessboard correspondences")
    return cost_Z(F, exact_matches)


def _symmetric_residuals(F: FundamentalMatrix, matches: MatchSet) -> np.ndarray:
    lines2 = matches.x @ F.F.T
    lines1 = matches.xp @ F.F
    d2 = point_line_distances(matches.xp, lines2)
    d1 = point_line_distances(matches.x, lines1)
    return 0.5 * (d1 + d2)


def ransac_F(matches: MatchSet, iterations: int = RANSAC_ITERATIONS,
             inlier_threshold: float = RANSAC_THRESHOLD,
             seed: int = 0) -> FundamentalMatrix:
    """Classic RANSAC over normalized eight-point minimal samples."""
    if matches.N < 8:
        raise ConsensusFailureError(f"RANSAC needs >= 8 matches, got {matches.N}")
    rng = np.random.default_rng(seed)
    best: tuple[int, float, np.ndarray] | None = None
    for _ in range(iterations):
        idx = rng.choice(matches.N, size=8, replace=False)
        sample = MatchSet(x=matches.x[idx], xp=matches.xp[idx],
                          source=matches.source)
        try:
            F = eight_point(sample)
        except DegenerateConfigurationError:
            continue
        r = _symmetric_residuals(F, matches)
        inliers = r < inlier_threshold
        count = int(inliers.sum())
        err = float(r[inliers].sum()) if count else np.inf
        if best is None or count > best[0] or (count == best[0] and err < best[1]):
            best = (count, err, inliers)
    if best is None or best[0] < 8:
        raise ConsensusFailureError("no model reached 8 inliers")
    inliers = best[2]
    final = eight_point(MatchSet(x=matches.x[inliers], xp=matches.xp[inliers],
                                 source=matches.source))
    return final.with_scores(inliers=float(best[0]))


def _pair_by_angle(e: np.ndarray, tp1: np.ndarray,
                   ep: np.ndarray, tp2: np.ndarray) -> list[tuple[int, int]]:
    """Match tangency points across images by angular order around each epipole."""

    def angles(eh, tp):
        if abs(eh[2]) < 1e-9 * np.hypot(eh[0], eh[1]):
            d = np.array([-eh[1], eh[0]])
            return tp @ (d / np.linalg.norm(d))
        rel = tp - (eh[:2] / eh[2])[None, :]
        return np.arctan2(rel[:, 1], rel[:, 0])

    o1 = np.argsort(angles(e, tp1))
    o2 = np.argsort(angles(ep, tp2))
    n = min(o1.size, o2.size)
    return [(int(o1[i]), int(o2[i])) for i in range(n)]


def otpm_search(outlines1: list[OutlineCurve], outlines2: list[OutlineCurve],
                grid, frame, H_outline: Homography,
                budget: int = 20000) -> CandidateSet:
    """Score epipole pairs on the grid by the outline-tangency transfer residual.

    outlines are paired by list position.  For each grid epipole e on
    image 1 the grid epipoles e' on image 2 are scanned (the full
    product subsampled to the budget); the candidate geometry is
    F = [e']x H_outline and its score the mean symmetric distance of
    angular-order-paired tangency points to their transferred epipolar
    lines.  Scores follow the image-1 spiral order, so the local-minimum
    filter applies unchanged.
    """
    from .partition import spiral_representatives

    if len(outlines1) != len(outlines2) or not outlines1:
        raise ValidationError("need equally many outlines on both images")
    reps = spiral_representatives(grid)
    n = len(reps)
    n_e = max(2, int(np.sqrt(max(budget, 4))))
    sel = np.unique(np.linspace(0, n - 1, min(n, n_e)).astype(int))
    validation_only = len(outlines1) < 2

    def _inside_any(e_pix, outlines):
        """No tangent line exists through a point interior to an outline."""
        if abs(e_pix[2]) < 1e-9 * np.hypot(e_pix[0], e_pix[1]):
            return False
        pt = e_pix[:2] / e_pix[2]
        return any(o.contains(pt) for o in outlines)

    entries: list[CandidateEntry] = []
    for a, ia in enumerate(sel):
        e_pix = frame.to_pixels_homogeneous(reps[ia])
        if _inside_any(e_pix, outlines1):
            continue
        tset1 = [tangent_points_from_epipole(o.points, e_pix) for o in outlines1]
        if sum(t.shape[0] for t in tset1) < 2:
            raise InsufficientTangencyError(
                "fewer than 2 tangency points from the image-1 epipole"
            )
        best: tuple[float, FundamentalMatrix, np.ndarray] | None = None
        for ib in sel:
            ep_pix = frame.to_pixels_homogeneous(reps[ib])
            if _inside_any(ep_pix, outlines2):
                continue
            try:
                F = compose_F(ep_pix, H_outline)
            except Exception:
                continue
            total, count = 0.0, 0
            for o1, o2, tp1 in zip(outlines1, outlines2, tset1):
                tp2 = tangent_points_from_epipole(o2.points, ep_pix)
                if tp1.shape[0] == 0 or tp2.shape[0] == 0:
                    continue
                for i1, i2 in _pair_by_angle(e_pix, tp1, ep_pix, tp2):
                    x = np.array([tp1[i1, 0], tp1[i1, 1], 1.0])
                    xp = np.array([tp2[i2, 0], tp2[i2, 1], 1.0])
                    l2 = F.F @ x
                    l1 = F.F.T @ xp
                    d2 = abs(xp @ l2) / max(np.hypot(l2[0], l2[1]), 1e-300)
                    d1 = abs(x @ l1) / max(np.hypot(l1[0], l1[1]), 1e-300)
                    total += 0.5 * (d1 + d2)
                    count += 1
            if count < 2:
                continue
            score = total / count
            if best is None or score < best[0]:
                best = (score, F, ep_pix)
        if best is None:
            continue
        F_scored = best[1].with_scores(otpm=best[0])
        if validation_only:
            F_scored = F_scored.with_scores(validation_only=1.0)
        entries.append(CandidateEntry(spiral_index=int(ia), epipole=e_pix,
                                      F=F_scored, Z=best[0]))
    if not entries:
        raise InsufficientTangencyError("no epipole pair produced tangency pairs")
    Z = np.array([e.Z for e in entries])
    z_min, kept = local_minima_filter(Z)
    filtered = [entries[k].spiral_index for k in kept]
    return CandidateSet(entries=entries, Z_min=z_min, filtered=filtered)
