"""Candidate scoring by the epipolar-tangency property.

An epipolar line tangent to an isophoto on one image must map to a line
tangent to the equal-intensity isophoto on the other image.  For each
line of a fan through the epipole the in-body intensity maximum marks a
tangency; on the other image tangency points of the equal-level
isophotos seen from the second epipole are collected, guarded by a small
circular neighborhood (3% of the destination body area) around the
outline-homography image of the maximum, and the mean minimal
point-to-epipolar-line distance scores the candidate.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .errors import (
    FanDegenerateError,
    NoEvidenceError,
    ValidationError,
)
from .fsearch import CandidateSet, FundamentalMatrix, point_line_distances
from .homography import Homography
from .imagery import IntensityImage, sample_grid_many
from .isophoto import IsophotoCurve, OutlineCurve, extract_isophotos

N_LINES_DEFAULT = 32
GUARD_AREA_FRACTION = 0.03
LEVEL_TOLERANCE = 0.01  # constant brightness is approximate
LEVEL_QUANTUM = 0.005  # destination isophoto levels cached on this grid
FAN_INSET = 1e-3  # fraction of the angular extent kept clear of grazing rays
LINE_STEP = 0.5  # px sampling step along the in-body segment
MIN_SEGMENT = 3.0  # px; shorter chords carry no usable profile
EDGE_MARGIN = 2.0  # px kept clear of the outline along each chord
MIN_ISO_LENGTH = 8.0


@dataclasses.dataclass(frozen=True, eq=False)
class TangencyObservation:
    """One fan line's intensity maximum with its guarded mate tangents."""

    source_image: int  # 1 or 2
    epipolar_line: np.ndarray  # (3,) homogeneous line on the source image
    x: np.ndarray  # (3,) homogeneous global in-body maximum on the line
    level: float  # intensity at x
    candidate_tangents: np.ndarray  # (K, 2) guarded tangency points, other image
    guard_center: np.ndarray  # (2,) homography-mapped x
    guard_radius: float  # px

    def __post_init__(self):
        if self.source_image not in (1, 2):
            raise ValidationError("source_image must be 1 or 2")
        for name in ("epipolar_line", "x", "candidate_tangents", "guard_center"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.candidate_tangents.shape[0] < 1:
            raise ValidationError("observation without guarded tangents")

    def to_json_dict(self) -> dict:
        return {
            "source_image": self.source_image,
            "epipolar_line": [float(v) for v in self.epipolar_line],
            "x": [float(v) for v in self.x],
            "level": float(self.level),
            "candidate_tangents": [[float(a), float(b)]
                                   for a, b in self.candidate_tangents],
            "guard_center": [float(v) for v in self.guard_center],
            "guard_radius": float(self.guard_radius),
        }


def _epipole_of(F: FundamentalMatrix, image: int) -> np.ndarray:
    """Homogeneous epipole on the requested image (F e1 = 0, F^T e2 = 0)."""
    if image == 2:
        return np.asarray(F.e_prime, dtype=np.float64)
    _, _, Vt = np.linalg.svd(F.F)
    return Vt[2]


def _fan_directions(e: np.ndarray, outline: OutlineCurve, n_lines: int) -> np.ndarray:
    """Unit directions of n_lines rays from the epipole through the body.

    The outline's angular extent as seen from the epipole is measured and
    sampled uniformly, slightly inset from the two grazing directions.
    For an epipole at infinity all rays share one direction and the fan
    degenerates to parallel lines offset across the body, handled by the
    caller; here only finite epipoles arrive.
    """
    d = outline.points - e[None, :]
    ang = np.arctan2(d[:, 1], d[:, 0])
    ang_sorted = np.sort(ang)
    gaps = np.diff(np.concatenate([ang_sorted, ang_sorted[:1] + 2.0 * np.pi]))
    k = int(np.argmax(gaps))
    extent = 2.0 * np.pi - gaps[k]
    if extent >= np.pi:
        raise FanDegenerateError("epipole inside or too close to the body outline")
    start = ang_sorted[(k + 1) % ang.size]
    inset = max(FAN_INSET * extent, 1e-6)
    t = np.linspace(inset, extent - inset, n_lines)
    return np.column_stack([np.cos(start + t), np.sin(start + t)])


def _chord_through_body(p0: np.ndarray, direction: np.ndarray,
                        outline: OutlineCurve) -> tuple[float, float] | None:
    """Parameter interval of the longest in-body piece of the line p0 + t d."""
    a = outline.points
    b = np.roll(a, -1, axis=0)
    seg = b - a
    # solve p0 + t d = a + u seg for each outline edge
    denom = direction[0] * seg[:, 1] - direction[1] * seg[:, 0]
    ok = np.abs(denom) > 1e-12
    rel = a - p0[None, :]
    t = (rel[:, 0] * seg[:, 1] - rel[:, 1] * seg[:, 0]) / np.where(ok, denom, np.inf)
    u = (rel[:, 0] * direction[1] - rel[:, 1] * direction[0]) / np.where(ok, denom, np.inf)
    hits = np.sort(t[ok & (u >= 0.0) & (u < 1.0)])
    if hits.size < 2:
        return None
    best = None
    for t0, t1 in zip(hits[:-1], hits[1:]):
        mid = p0 + 0.5 * (t0 + t1) * direction
        if outline.contains(mid) and (best is None or t1 - t0 > best[1] - best[0]):
            best = (float(t0), float(t1))
    if best is None or best[1] - best[0] < MIN_SEGMENT + 2 * EDGE_MARGIN:
        return None
    return best[0] + EDGE_MARGIN, best[1] - EDGE_MARGIN


def _line_profile_max(img: IntensityImage, p0: np.ndarray, direction: np.ndarray,
                      t0: float, t1: float) -> tuple[np.ndarray, float] | None:
    """Subpixel global intensity maximum along the chord, with its level.

    The maximum must be interior and a 1-D local maximum of the profile;
    chord-end maxima mark a line that crosses rather than grazes its
    isophoto and are discarded.
    """
    n = max(8, int(np.ceil((t1 - t0) / LINE_STEP)) + 1)
    t = np.linspace(t0, t1, n)
    pts = p0[None, :] + t[:, None] * direction[None, :]
    phi = sample_grid_many(img.data, pts)
    k = int(np.argmax(phi))
    if k == 0 or k == n - 1:
        return None
    if not (phi[k] >= phi[k - 1] and phi[k] >= phi[k + 1]):
        return None
    # quadratic refinement through the three neighboring samples
    denom = phi[k - 1] - 2.0 * phi[k] + phi[k + 1]
    shift = 0.0 if abs(denom) < 1e-15 else 0.5 * (phi[k - 1] - phi[k + 1]) / denom
    shift = float(np.clip(shift, -1.0, 1.0))
    t_star = t[k] + shift * (t[1] - t[0])
    p = p0 + t_star * direction
    level = float(sample_grid_many(img.data, p[None, :])[0])
    return p, level


_iso_cache: dict[tuple[int, float], list[IsophotoCurve]] = {}


def _isophotos_near_level(img: IntensityImage, level: float) -> list[IsophotoCurve]:
    """Destination isophotos within LEVEL_TOLERANCE of the requested level.

    Extraction is cached per image on a quantized level grid finer than
    the tolerance, so repeated scans reuse the traced curves.
    """
    q = round(level / LEVEL_QUANTUM) * LEVEL_QUANTUM
    if not (0.0 < q < 1.0):
        return []
    key = (id(img), round(q, 6))
    if key not in _iso_cache:
        _iso_cache[key] = extract_isophotos(img, [q], min_length=MIN_ISO_LENGTH)
    return [c for c in _iso_cache[key]
            if abs((c.level if c.level is not None else q) - level) <= LEVEL_TOLERANCE]


def tangent_points_from_epipole(curve_points: np.ndarray,
                                e: np.ndarray) -> np.ndarray:
    """Points where rays from the epipole graze the closed polyline.

    Tangency happens at local extrema of the direction angle of
    (point - epipole) along the curve; each extremum is refined by a
    quadratic fit of the unwrapped angle.  An epipole at infinity
    (|w| ~ 0) grazes where the projection onto the perpendicular of its
    direction is extremal.
    """
    e = np.asarray(e, dtype=np.float64)
    pts = np.asarray(curve_points, dtype=np.float64)
    if abs(e[2]) < 1e-9 * np.hypot(e[0], e[1]):
        d = np.array([e[0], e[1]])
        d /= np.linalg.norm(d)
        val = pts @ np.array([-d[1], d[0]])
    else:
        rel = pts - (e[:2] / e[2])[None, :]
        val = np.unwrap(np.arctan2(rel[:, 1], rel[:, 0]))
    prev = np.roll(val, 1)
    nxt = np.roll(val, -1)
    if abs(e[2]) >= 1e-9 * np.hypot(e[0], e[1]):
        # re-difference cyclically on the circle to dodge the unwrap seam
        dp = (val - prev + np.pi) % (2.0 * np.pi) - np.pi
        dn = (nxt - val + np.pi) % (2.0 * np.pi) - np.pi
    else:
        dp = val - prev
        dn = nxt - val
    idx = np.flatnonzero(np.sign(dp) * np.sign(dn) < 0)
    out = []
    n = pts.shape[0]
    for i in idx:
        a, b, c = val[(i - 1) % n], val[i], val[(i + 1) % n]
        denom = a - 2.0 * b + c
        shift = 0.0 if abs(denom) < 1e-15 else float(np.clip(0.5 * (a - c) / denom,
                                                             -0.5, 0.5))
        j = (i + shift) % n
        j0 = int(np.floor(j)) % n
        f = j - np.floor(j)
        out.append(pts[j0] * (1.0 - f) + pts[(j0 + 1) % n] * f)
    return np.asarray(out, dtype=np.float64).reshape(-1, 2)


def guard_radius_for(outline_dst: OutlineCurve,
                     fraction: float = GUARD_AREA_FRACTION) -> float:
    """Radius of the circle covering the given fraction of the body area."""
    return float(np.sqrt(fraction * outline_dst.area() / np.pi))


def scan_tangencies(F: FundamentalMatrix, img_src: IntensityImage,
                    img_dst: IntensityImage, outline_src: OutlineCurve,
                    outline_dst: OutlineCurve, H_outline: Homography,
                    n_lines: int = N_LINES_DEFAULT,
                    source_image: int = 1) -> list[TangencyObservation]:
    """Guarded tangency observations for one scan direction.

    A fan of epipolar lines through the source epipole covers the body;
    each line's in-body global intensity maximum is paired with the
    destination tangency points at the same level that fall inside the
    guard circle around the outline-homography image of the maximum.
    Lines without any guarded tangent are dropped.
    """
    if n_lines < 8:
        raise ValidationError("n_lines must be >= 8")
    if source_image not in (1, 2):
        raise ValidationError("source_image must be 1 or 2")
    Fm = F.F if source_image == 1 else F.F.T
    e_src = _epipole_of(F, source_image)
    e_dst = _epipole_of(F, 3 - source_image)
    radius = guard_radius_for(outline_dst)

    chords: list[tuple[np.ndarray, np.ndarray]] = []  # (origin, direction)
    if abs(e_src[2]) < 1e-9 * np.hypot(e_src[0], e_src[1]):
        # epipole at infinity: parallel lines swept across the body
        d = np.array([e_src[0], e_src[1]])
        d /= np.linalg.norm(d)
        perp = np.array([-d[1], d[0]])
        offs = outline_src.points @ perp
        span = offs.max() - offs.min()
        inset = max(FAN_INSET * span, 1e-6)
        c = outline_src.centroid()
        base = c - (c @ perp) * perp
        for o in np.linspace(offs.min() + inset, offs.max() - inset, n_lines):
            chords.append((base + o * perp, d))
    else:
        e2 = e_src[:2] / e_src[2]
        if outline_src.contains(e2):
            raise FanDegenerateError("epipole lies inside the body outline")
        for d in _fan_directions(e2, outline_src, n_lines):
            chords.append((e2, d))

    obs: list[TangencyObservation] = []
    for p0, d in chords:
        interval = _chord_through_body(p0, d, outline_src)
        if interval is None:
            continue
        found = _line_profile_max(img_src, p0, d, *interval)
        if found is None:
            continue
        p, level = found
        x = np.array([p[0], p[1], 1.0])
        line_dst = Fm @ x
        center = H_outline.apply(p[None, :])[0]
        tangents = []
        for curve in _isophotos_near_level(img_dst, level):
            tp = tangent_points_from_epipole(curve.points, e_dst)
            if tp.size:
                keep = np.linalg.norm(tp - center[None, :], axis=1) <= radius
                tangents.append(tp[keep])
        tangents = (np.vstack(tangents) if tangents
                    else np.empty((0, 2), dtype=np.float64))
        if tangents.shape[0] == 0:
            continue  # no guarded evidence on this line
        obs.append(TangencyObservation(
            source_image=source_image,
            epipolar_line=line_dst,
            x=x,
            level=level,
            candidate_tangents=tangents,
            guard_center=center,
            guard_radius=radius,
        ))
    return obs


def cost_ctpm(F: FundamentalMatrix,
              obs_1to2: list[TangencyObservation],
              obs_2to1: list[TangencyObservation]) -> float:
    """Mean best guarded tangent-to-epipolar-line distance over both directions."""
    n = len(obs_1to2) + len(obs_2to1)
    if n < 1:
        raise NoEvidenceError("no tangency observations in either direction")
    total = 0.0
    for obs, Fm in ((obs_1to2, F.F), (obs_2to1, F.F.T)):
        for o in obs:
            line = Fm @ o.x
            pts = np.column_stack([o.candidate_tangents,
                                   np.ones(o.candidate_tangents.shape[0])])
            lines = np.tile(line, (pts.shape[0], 1))
            total += float(point_line_distances(pts, lines).min())
    return total / n


def rank_candidates(cands: CandidateSet, img1: IntensityImage,
                    img2: IntensityImage, outline1: OutlineCurve,
                    outline2: OutlineCurve, H_outline_12: Homography,
                    n_lines: int = N_LINES_DEFAULT) -> CandidateSet:
    """Score each retained candidate by the tangency cost and reorder.

    Only the retained (filtered) candidates are evaluated.  Candidates
    without evidence in either direction sort last and carry an infinite
    score; every evaluated matrix is annotated with its Z_ctpm.
    """
    if not cands.filtered:
        raise ValidationError("candidate set has no retained candidates")
    by_index = {e.spiral_index: e for e in cands.entries}
    scored: list[tuple[float, int]] = []
    new_entries = list(cands.entries)
    pos = {id(e): i for i, e in enumerate(cands.entries)}
    H_21 = H_outline_12.inverse()
    for si in cands.filtered:
        entry = by_index[si]
        try:
            o12 = scan_tangencies(entry.F, img1, img2, outline1, outline2,
                                  H_outline_12, n_lines, source_image=1)
            o21 = scan_tangencies(entry.F, img2, img1, outline2, outline1,
                                  H_21, n_lines, source_image=2)
            z = cost_ctpm(entry.F, o12, o21)
        except (FanDegenerateError, NoEvidenceError):
            z = np.inf
        F_scored = entry.F.with_scores(Z_ctpm=z)
        new_entry = dataclasses.replace(entry, F=F_scored)
        new_entries[pos[id(entry)]] = new_entry
        scored.append((z, si))
    scored.sort(key=lambda t: (t[0], t[1]))
    return CandidateSet(entries=new_entries, Z_min=cands.Z_min,
                        filtered=[si for _, si in scored])
