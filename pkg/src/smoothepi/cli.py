"""Pipeline driver and report generator.

Runs any of the five recovery methods (or all of them) on a rendered
synthetic scene or a pair of image files, writes a machine-readable JSON
report plus eight SVG diagnostic panels (a-h): baseline epipolar lines,
best candidates under each score, curve correspondences, the score
profile along the search spiral, per-candidate score curves, and the
partition/spiral overview with the retained epipoles.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import ctpm as ctpm_mod
from . import features as ft
from . import synthgen as sg
from .correspond import build_match_set, correlate_curves_detailed, \
    point_at_frac, prepare_curve, verify_by_centroid
from .errors import SmoothEpiError, StageError, ValidationError
from .fsearch import CandidateSet, polish_retained, search
from .homography import dlt, refine
from .imagery import IntensityImage, load_image
from .isophoto import IsophotoCurve, OutlineCurve, curve_from_points, \
    extract_isophotos, extract_outline
from .partition import PartitionFrame, build_partition, spiral_representatives

SCHEMA_VERSION = 1
METHODS = ("ccpm", "ctpm", "icpm", "otpm", "sm", "full")
EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_STAGE = 3
EXIT_IO = 4

BACKGROUND_LEVEL = 0.05
MIN_CURVE_LENGTH = 60.0
SAMPLES_PER_CURVE = 16
N_EXACT_MATCHES = 60


@dataclasses.dataclass
class RunConfig:
    """All knobs of one pipeline run."""

    method: str = "full"
    img1: str | None = None
    img2: str | None = None
    scene: str | None = None  # "a" or "b"
    sigma: float = 2.0
    gamma: float = 0.05
    level_step: float = 0.1
    out: str = "out"
    seed: int = 0
    background_level: float = BACKGROUND_LEVEL
    min_curve_length: float = MIN_CURVE_LENGTH
    n_lines: int = 32
    otpm_budget: int = 4000

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ValidationError(f"unknown method '{self.method}'")
        if self.scene is None:
            if self.img1 is None or self.img2 is None:
                raise ValidationError("need either --scene or both --img1/--img2")
            for p in (self.img1, self.img2):
                if not Path(p).is_file():
                    raise ValidationError(f"input image not found: {p}")
        elif self.scene not in ("a", "b"):
            raise ValidationError("scene must be 'a' or 'b'")
        if not (1e-4 < self.gamma < 0.2):
            raise ValidationError("gamma must lie in (1e-4, 0.2)")
        if not (0.0 < self.level_step < 1.0):
            raise ValidationError("level_step must lie in (0, 1)")
        if self.sigma < 0:
            raise ValidationError("sigma must be >= 0")

    def to_json_dict(self) -> dict:
        return dataclasses.asdict(self)


# ---------------------------------------------------------------------------
# stage helpers


def _load_inputs(config: RunConfig):
    """Images plus ground truth when rendering a synthetic scene."""
    if config.scene is not None:
        spec = sg.scene_a() if config.scene == "a" else sg.scene_b()
        img1 = sg.render_one(spec, 0, sigma=config.sigma)
        img2 = sg.render_one(spec, 1, sigma=config.sigma)
        truth = {
            "spec": spec,
            "F": sg.true_F(spec),
            "matches": sg.exact_matches(spec, N_EXACT_MATCHES, seed=config.seed),
        }
        return img1, img2, truth
    img1 = load_image(config.img1, sigma=config.sigma)
    img2 = load_image(config.img2, sigma=config.sigma)
    return img1, img2, None


def _pair_outlines(o1: list[OutlineCurve], o2: list[OutlineCurve]):
    """Outline pairs matched by descending area (bodies keep relative size)."""
    a = sorted(o1, key=lambda o: -o.area())
    b = sorted(o2, key=lambda o: -o.area())
    return list(zip(a, b))


def _body_of(curve: IsophotoCurve, outlines: list[OutlineCurve]) -> int:
    c = curve.centroid()
    for i, o in enumerate(outlines):
        if o.contains(c):
            return i
    return -1


def _pair_isophotos(img1: IntensityImage, img2: IntensityImage,
                    config: RunConfig, outline_pairs):
    """Verified isophoto pairs with their correlation anchors.

    Curves are grouped by (body, level); within a group curves are paired
    by descending arc length.  Pairs failing the curvature-correlation or
    centroid verification are skipped rather than failing the run.
    """
    levels = np.arange(config.level_step, 1.0, config.level_step)
    levels = levels[(levels > 0.0) & (levels < 1.0)]
    c1 = extract_isophotos(img1, levels, min_length=config.min_curve_length)
    c2 = extract_isophotos(img2, levels, min_length=config.min_curve_length)
    out1 = [p[0] for p in outline_pairs]
    out2 = [p[1] for p in outline_pairs]
    groups: dict[tuple[int, float], tuple[list, list]] = {}
    for c in c1:
        b = _body_of(c, out1)
        if b >= 0:
            groups.setdefault((b, round(c.level, 6)), ([], []))[0].append(c)
    for c in c2:
        b = _body_of(c, out2)
        if b >= 0:
            groups.setdefault((b, round(c.level, 6)), ([], []))[1].append(c)
    pairs, offsets, diagnostics = [], [], []
    for key in sorted(groups):
        g1, g2 = groups[key]
        g1.sort(key=lambda c: -c.L)
        g2.sort(key=lambda c: -c.L)
        for a, b in zip(g1, g2):
            pa, pb = prepare_curve(a), prepare_curve(b)
            try:
                off, score, rev, _ = correlate_curves_detailed(pa, pb)
            except SmoothEpiError:
                continue
            if rev or score < 0.8:
                diagnostics.append({"body": key[0], "level": key[1],
                                    "score": float(score), "kept": False})
                continue
            cscore = verify_by_centroid(pa, pb, off)
            ok = cscore >= 0.8
            diagnostics.append({"body": key[0], "level": key[1],
                                "score": float(score),
                                "centroid_score": float(cscore), "kept": ok})
            if ok:
                pairs.append((a, b))
                offsets.append(off)
    return pairs, offsets, diagnostics


def _ccpm_stage(img1, img2, config: RunConfig, outline_pairs, partition=None):
    """Correspondences, reference homography, partition scan, and polish.

    A prebuilt partition of the configured gamma may be supplied to avoid
    rebuilding it across runs.
    """
    pairs, offsets, diag = _pair_isophotos(img1, img2, config, outline_pairs)
    if not pairs:
        raise StageError("ccpm", "no-verified-pairs",
                         "no verified isophoto pairs")
    matches = build_match_set(pairs, samples_per_curve=SAMPLES_PER_CURVE,
                              offsets=offsets)
    # reference homography from the longest verified pair
    k = int(np.argmax([p[0].L for p in pairs]))
    ca, cb = prepare_curve(pairs[k][0]), prepare_curve(pairs[k][1])
    pair_matches = build_match_set([pairs[k]], samples_per_curve=24,
                                   offsets=[offsets[k]],
                                   require_two_bodies=False)
    H0 = refine(dlt(pair_matches), ca, cb)
    S_min = H0.S_min if H0.S_min is not None else H0.S
    # Scanning homography: a point-anchored fit over every pair of the
    # reference body.  The transfer-cost refinement above is insensitive
    # to small rotations of near-elliptic curves, and a rotation error
    # extrapolated to the other body masquerades as perpendicular
    # parallax, tilting the score valley; the multi-pair point fit keeps
    # the rotation pinned by several independent anchors.
    out1 = [p[0] for p in outline_pairs]
    kb = _body_of(pairs[k][0], out1)
    sel = [i for i, (a, _) in enumerate(pairs) if _body_of(a, out1) == kb]
    body_matches = build_match_set([pairs[i] for i in sel],
                                   samples_per_curve=24,
                                   offsets=[offsets[i] for i in sel],
                                   require_two_bodies=False)
    H_scan = dlt(body_matches)
    if partition is None:
        partition = build_partition(config.gamma)
    elif abs(partition.gamma - config.gamma) > 1e-12:
        raise ValidationError("supplied partition gamma differs from config")
    frame = PartitionFrame.for_shape(img1.height, img1.width)
    cands = search(partition, H_scan, S_min, matches, (ca, cb), frame,
                   max_evals=0)
    cands = polish_retained(cands, H0, S_min, matches, (ca, cb))
    return {
        "pairs": pairs, "offsets": offsets, "pair_diagnostics": diag,
        "matches": matches, "H0": H0, "H_scan": H_scan,
        "S_min": float(S_min),
        "partition": partition, "frame": frame, "candidates": cands,
    }


def _outline_homography(outline_pairs):
    """Outline-to-outline homography of the largest body pair."""
    o1, o2 = outline_pairs[0]
    a = curve_from_points(o1.points)
    b = curve_from_points(o2.points)
    pa, pb = prepare_curve(a), prepare_curve(b)
    off, score, rev, _ = correlate_curves_detailed(pa, pb)
    ms = build_match_set([(a, b)], samples_per_curve=24, offsets=[off],
                         require_two_bodies=False)
    return refine(dlt(ms), pa, pb)


def _direction_error(v: np.ndarray, truth: np.ndarray) -> float:
    """Angle between two directions, sign-insensitive, radians."""
    a = np.asarray(v, dtype=np.float64)[:2]
    b = np.asarray(truth, dtype=np.float64)[:2]
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < 1e-12 or nb < 1e-12:
        return float("nan")
    c = abs(float(a @ b) / (na * nb))
    return float(np.arccos(min(1.0, c)))


def _epipole_direction(e: np.ndarray, frame: PartitionFrame) -> np.ndarray:
    """Parallax direction implied by an epipole (finite: from image center)."""
    e = np.asarray(e, dtype=np.float64)
    if abs(e[2]) < 1e-9 * np.hypot(e[0], e[1]):
        return e[:2].copy()
    return e[:2] / e[2] - frame.center


def _collinearity_metrics(cands: CandidateSet, frame: PartitionFrame,
                          truth_dir: np.ndarray | None) -> dict:
    """Best-fit line through the retained finite epipoles."""
    finite = [e.epipole for e in cands.retained()
              if abs(e.epipole[2]) > 1e-9 * np.hypot(e.epipole[0], e.epipole[1])]
    out: dict = {"n_retained": len(cands.filtered), "n_finite": len(finite)}
    if len(finite) >= 2:
        pts = np.array([[e[0] / e[2], e[1] / e[2]] for e in finite])
        centered = pts - pts.mean(axis=0)
        _, sv, Vt = np.linalg.svd(centered, full_matrices=False)
        direction = Vt[0]
        perp = centered @ Vt[-1] if Vt.shape[0] > 1 else np.zeros(len(pts))
        along = centered @ direction
        spread = float(along.max() - along.min())
        out["rms_deviation"] = float(np.sqrt(np.mean(perp ** 2)))
        out["spread"] = spread
        out["line_direction"] = [float(direction[0]), float(direction[1])]
        if truth_dir is not None:
            out["direction_error"] = _direction_error(direction, truth_dir)
    if truth_dir is not None:
        errs = [_direction_error(_epipole_direction(e.epipole, frame), truth_dir)
                for e in cands.retained()]
        out["per_candidate_direction_error"] = [float(v) for v in errs]
    return out


def _annotate_B(cands: CandidateSet, exact) -> CandidateSet:
    """Attach the exact-correspondence residual to every retained candidate."""
    by_index = {e.spiral_index: e for e in cands.entries}
    entries = list(cands.entries)
    pos = {e.spiral_index: i for i, e in enumerate(cands.entries)}
    for si in cands.filtered:
        e = by_index[si]
        b = ft.cost_B(e.F, exact)
        entries[pos[si]] = dataclasses.replace(e, F=e.F.with_scores(B_sm=b))
    return CandidateSet(entries=entries, Z_min=cands.Z_min,
                        filtered=list(cands.filtered))


# ---------------------------------------------------------------------------
# SVG panels


def _svg_open(w: int, h: int) -> list[str]:
    return [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
            f'viewBox="0 0 {w} {h}">',
            f'<rect width="{w}" height="{h}" fill="white"/>']


def _svg_text(parts: list[str], x, y, s, size=10, color="black"):
    parts.append(f'<text x="{x:.1f}" y="{y:.1f}" font-size="{size}" '
                 f'fill="{color}">{s}</text>')


def _svg_polyline(parts: list[str], pts, color="black", width=1.0,
                  closed=False):
    if len(pts) < 2:
        return
    d = " ".join(f"{x:.2f},{y:.2f}" for x, y in pts)
    tag = "polygon" if closed else "polyline"
    parts.append(f'<{tag} points="{d}" fill="none" stroke="{color}" '
                 f'stroke-width="{width}"/>')


def _svg_circle(parts: list[str], x, y, r=2.0, color="black", fill="none"):
    parts.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="{r:.2f}" '
                 f'fill="{fill}" stroke="{color}"/>')


def _clip_line_to_rect(line: np.ndarray, w: int, h: int):
    """Endpoints of the homogeneous line within [0,w]x[0,h], or None."""
    a, b, c = line
    pts = []
    for x in (0.0, float(w)):
        if abs(b) > 1e-12:
            y = -(a * x + c) / b
            if -1e-9 <= y <= h:
                pts.append((x, y))
    for y in (0.0, float(h)):
        if abs(a) > 1e-12:
            x = -(b * y + c) / a
            if -1e-9 <= x <= w:
                pts.append((x, y))
    uniq = []
    for p in pts:
        if all(abs(p[0] - q[0]) + abs(p[1] - q[1]) > 1e-6 for q in uniq):
            uniq.append(p)
    return uniq[:2] if len(uniq) >= 2 else None


def _panel_epilines(path: Path, title: str, F, matches, w: int, h: int):
    """Points of the match set with their epipolar lines on each image."""
    parts = _svg_open(2 * w + 30, h + 30)
    _svg_text(parts, 10, 15, title)
    p1, p2 = matches.euclidean()
    for dx, pts, lines in (
        (10, p1, matches.xp @ F.F),  # lines F^T x' on image 1
        (w + 20, p2, matches.x @ F.F.T),  # lines F x on image 2
    ):
        parts.append(f'<g transform="translate({dx},25)">')
        parts.append(f'<rect width="{w}" height="{h}" fill="none" stroke="gray"/>')
        for (x, y), line in zip(pts, lines):
            _svg_circle(parts, x, y, 2.0, "blue", "blue")
            seg = _clip_line_to_rect(line, w, h)
            if seg:
                _svg_polyline(parts, seg, "red", 0.5)
        parts.append("</g>")
    parts.append("</svg>")
    path.write_text("\n".join(parts))


def _panel_curves(path: Path, title: str, pairs, offsets, w: int, h: int,
                  n_marks: int = 8):
    """Matched isophotos with equal-arc correspondence marks."""
    parts = _svg_open(2 * w + 30, h + 30)
    _svg_text(parts, 10, 15, title)
    colors = ["green", "purple", "orange", "teal", "brown", "magenta"]
    for side, dx in ((0, 10), (1, w + 20)):
        parts.append(f'<g transform="translate({dx},25)">')
        parts.append(f'<rect width="{w}" height="{h}" fill="none" stroke="gray"/>')
        for i, (pair, off) in enumerate(zip(pairs, offsets)):
            c = prepare_curve(pair[side])
            color = colors[i % len(colors)]
            _svg_polyline(parts, c.points, color, 0.8, closed=True)
            u = np.arange(n_marks) / n_marks + (off if side == 1 else 0.0)
            for x, y in point_at_frac(c, u):
                _svg_circle(parts, x, y, 2.0, color, color)
        parts.append("</g>")
    parts.append("</svg>")
    path.write_text("\n".join(parts))


def _panel_profile(path: Path, title: str, cands: CandidateSet,
                   w: int = 640, h: int = 240):
    """Z versus spiral index with the retained minima marked."""
    parts = _svg_open(w, h)
    _svg_text(parts, 10, 15, title)
    Z = np.array([e.Z for e in cands.entries])
    n = Z.size
    zmax = float(np.percentile(Z, 98))
    zmin = float(Z.min())
    span = max(zmax - zmin, 1e-12)
    xs = 20 + (w - 40) * np.arange(n) / max(n - 1, 1)
    ys = h - 20 - (h - 50) * np.clip((Z - zmin) / span, 0, 1)
    step = max(1, n // (w - 40))  # decimate to panel resolution
    _svg_polyline(parts, list(zip(xs[::step], ys[::step])), "blue", 0.7)
    for si in cands.filtered:
        _svg_circle(parts, xs[si], ys[si], 3.0, "red")
    _svg_text(parts, 20, h - 5, f"Z_min={cands.Z_min:.4g}  "
              f"retained={len(cands.filtered)}", 9)
    parts.append("</svg>")
    path.write_text("\n".join(parts))


def _panel_scores(path: Path, title: str, cands: CandidateSet,
                  w: int = 640, h: int = 240):
    """Per-retained-candidate score curves (scan Z, refined Z, tangency, exact)."""
    parts = _svg_open(w, h)
    _svg_text(parts, 10, 15, title)
    retained = cands.retained()
    series: dict[str, list[float]] = {"Z_scan": [float(e.Z) for e in retained]}
    for key, label in (("Z_ccpm", "Z_ccpm"), ("Z_ctpm", "Z_ctpm"),
                       ("B_sm", "B_sm")):
        vals = [e.F.scores.get(key) for e in retained]
        if any(v is not None for v in vals):
            series[label] = [float(v) if v is not None and np.isfinite(v)
                             else float("nan") for v in vals]
    colors = {"Z_scan": "blue", "Z_ccpm": "green", "Z_ctpm": "red",
              "B_sm": "black"}
    allv = [v for vs in series.values() for v in vs if np.isfinite(v)]
    if allv:
        lo, hi = min(allv), max(allv)
        span = max(hi - lo, 1e-12)
        n = len(retained)
        xs = 20 + (w - 40) * np.arange(n) / max(n - 1, 1)
        y0 = 25
        for name, vs in sorted(series.items()):
            pts = [(x, h - 20 - (h - 50) * (v - lo) / span)
                   for x, v in zip(xs, vs) if np.isfinite(v)]
            _svg_polyline(parts, pts, colors[name], 1.0)
            for x, y in pts:
                _svg_circle(parts, x, y, 2.0, colors[name], colors[name])
            _svg_text(parts, w - 80, y0, name, 9, colors[name])
            y0 += 12
    parts.append("</svg>")
    path.write_text("\n".join(parts))


def _panel_partition(path: Path, title: str, partition, frame,
                     cands: CandidateSet | None, true_e,
                     w: int = 480, h: int = 480):
    """Partition rings, search spiral, retained epipoles, true epipole."""
    parts = _svg_open(w, h)
    _svg_text(parts, 10, 15, title)
    scale = 0.18 * min(w, h)  # normalized unit -> panel px, shows ~2.7 units
    cx, cy = w / 2.0, h / 2.0

    def to_panel(xy):
        return cx + scale * xy[0], cy + scale * xy[1]

    # image circle
    parts.append(f'<circle cx="{cx}" cy="{cy}" r="{scale:.1f}" fill="none" '
                 f'stroke="gray"/>')
    # ring boundaries: one circle per distinct finite radius (subsampled)
    radii = sorted({round(g.r_inner, 6) for g in partition.regions
                    if g.r_inner > 0})
    for r in radii[:: max(1, len(radii) // 24)]:
        if r * scale < min(w, h):
            parts.append(f'<circle cx="{cx}" cy="{cy}" r="{r * scale:.1f}" '
                         f'fill="none" stroke="#ccc" stroke-width="0.5"/>')
    # spiral through the first representatives
    reps = spiral_representatives(partition)
    pts = []
    for rep in reps[: min(len(reps), 4000)]:
        if abs(rep[2]) < 1e-12:
            continue
        x, y = to_panel(rep[:2] / rep[2])
        if 0 <= x <= w and 0 <= y <= h:
            pts.append((x, y))
    _svg_polyline(parts, pts, "#9cf", 0.4)
    # retained epipoles
    if cands is not None:
        for e in cands.retained():
            ep = e.epipole
            if abs(ep[2]) < 1e-9 * np.hypot(ep[0], ep[1]):
                d = ep[:2] / np.linalg.norm(ep[:2])
                x, y = to_panel(d * 2.5)
                _svg_polyline(parts, [(cx, cy), (x, y)], "red", 0.7)
            else:
                x, y = to_panel(frame.to_normalized(ep[:2] / ep[2]))
                _svg_circle(parts, x, y, 3.0, "red", "red")
    # true epipole
    if true_e is not None:
        e = np.asarray(true_e, dtype=np.float64)
        if abs(e[2]) < 1e-9 * np.hypot(e[0], e[1]):
            d = e[:2] / np.linalg.norm(e[:2])
            x, y = to_panel(d * 2.5)
            _svg_polyline(parts, [(cx, cy), (x, y)], "green", 1.5)
        else:
            x, y = to_panel(frame.to_normalized(e[:2] / e[2]))
            _svg_circle(parts, x, y, 4.0, "green")
    parts.append("</svg>")
    path.write_text("\n".join(parts))


# ---------------------------------------------------------------------------
# driver


def _best_by(cands: CandidateSet, key: str):
    best = None
    for e in cands.retained():
        v = e.F.scores.get(key)
        if v is None or not np.isfinite(v):
            continue
        if best is None or v < best[0]:
            best = (float(v), e)
    return best


def run(config: RunConfig) -> dict:
    """Execute the configured method and write the report bundle."""
    config.validate()
    out_dir = Path(config.out)
    np.random.seed(config.seed)
    report: dict = {"schema_version": SCHEMA_VERSION,
                    "config": config.to_json_dict(), "stages": {}}
    stage = "load"
    try:
        img1, img2, truth = _load_inputs(config)
        w, h = img1.width, img1.height
        frame = PartitionFrame.for_shape(h, w)
        truth_F = truth["F"] if truth else None
        truth_dir = (_epipole_direction(truth_F.e_prime, frame)
                     if truth_F is not None else None)
        if truth_F is not None:
            report["truth"] = truth_F.to_json_dict()

        stage = "outlines"
        o1 = extract_outline(img1, config.background_level)
        o2 = extract_outline(img2, config.background_level)
        outline_pairs = _pair_outlines(o1, o2)
        report["stages"]["outlines"] = {
            "image1": len(o1), "image2": len(o2),
            "areas1": [float(o.area()) for o in o1],
            "areas2": [float(o.area()) for o in o2],
        }

        want = config.method
        cands = None
        ccpm = None
        sm_F = None

        if want in ("sm", "full"):
            stage = "sm"
            if truth is None:
                raise StageError("sm", "no-ground-truth",
                                 "the exact-match baseline needs a "
                                 "synthetic scene")
            sm_F = ft.eight_point(truth["matches"])
            b = ft.cost_B(sm_F, truth["matches"])
            report["stages"]["sm"] = {"F": sm_F.to_json_dict(), "B": float(b)}

        if want in ("icpm", "full"):
            stage = "icpm"
            d1 = ft.detect_characteristic_points(img1, config.level_step)
            d2 = ft.detect_characteristic_points(img2, config.level_step)
            icpm: dict = {"detected1": len(d1), "detected2": len(d2)}
            if d1 and d2:
                mm = ft.match_characteristic_points(d1, d2)
                icpm["matched"] = int(mm.N)
                if mm.N >= 8:
                    try:
                        F_icpm = ft.ransac_F(mm, seed=config.seed)
                        icpm["F"] = F_icpm.to_json_dict()
                        if truth is not None:
                            icpm["B"] = float(ft.cost_B(F_icpm, truth["matches"]))
                    except SmoothEpiError as err:
                        icpm["error"] = str(err)
            report["stages"]["icpm"] = icpm

        if want in ("ccpm", "ctpm", "full"):
            stage = "ccpm"
            ccpm = _ccpm_stage(img1, img2, config, outline_pairs)
            cands = ccpm["candidates"]
            if truth is not None:
                cands = _annotate_B(cands, truth["matches"])
            report["stages"]["ccpm"] = {
                "n_matches": int(ccpm["matches"].N),
                "S_min": ccpm["S_min"],
                "H0": ccpm["H0"].to_json_list(),
                "pair_diagnostics": ccpm["pair_diagnostics"],
                "partition": {
                    "gamma": float(ccpm["partition"].gamma),
                    "n_regions": int(ccpm["partition"].n_regions),
                    "hm_target": float(ccpm["partition"].hm_target),
                },
                # compact candidate dump: the scan F at any index is
                # reproducible from its epipole and H0, so full matrices
                # are stored for the retained candidates only
                "candidates": {
                    "Z_min": float(cands.Z_min),
                    "filtered": [int(i) for i in cands.filtered],
                    "Z": [float(e.Z) for e in cands.entries],
                    "retained": [
                        {
                            "spiral_index": int(e.spiral_index),
                            "epipole": [float(v) for v in e.epipole],
                            "F": [float(v) for v in e.F.F.ravel()],
                            "scores": {k: float(v)
                                       for k, v in e.F.scores.items()
                                       if np.isfinite(v)},
                            "Z": float(e.Z),
                        }
                        for e in cands.retained()
                    ],
                },
                "collinearity": _collinearity_metrics(cands, frame, truth_dir),
            }

        if want in ("ctpm", "full") and cands is not None and cands.filtered:
            stage = "ctpm"
            H_out = _outline_homography(outline_pairs)
            ob1, ob2 = outline_pairs[0]
            cands = ctpm_mod.rank_candidates(cands, img1, img2, ob1, ob2,
                                             H_out, config.n_lines)
            top = cands.retained()[0]
            ctpm_report = {
                "ranking": [int(i) for i in cands.filtered],
                "top_epipole": [float(v) for v in top.epipole],
                "top_scores": {k: float(v) for k, v in top.F.scores.items()
                               if np.isfinite(v)},
            }
            if truth_dir is not None:
                ctpm_report["top_direction_error"] = _direction_error(
                    _epipole_direction(top.epipole, frame), truth_dir)
            report["stages"]["ctpm"] = ctpm_report

        if want in ("otpm", "full"):
            stage = "otpm"
            try:
                H_out = _outline_homography(outline_pairs)
                coarse = build_partition(min(0.15, max(config.gamma, 0.1)))
                ocands = ft.otpm_search(
                    [p[0] for p in outline_pairs], [p[1] for p in outline_pairs],
                    coarse, frame, H_out, budget=config.otpm_budget)
                otpm: dict = {
                    "n_scored": len(ocands.entries),
                    "Z_min": float(ocands.Z_min),
                    "n_retained": len(ocands.filtered),
                }
                if truth is not None and ocands.filtered:
                    best = ocands.retained()[0]
                    otpm["best_B"] = float(ft.cost_B(best.F, truth["matches"]))
                report["stages"]["otpm"] = otpm
            except SmoothEpiError as err:
                report["stages"]["otpm"] = {"error": str(err)}

        # summary metrics
        if cands is not None and truth is not None and cands.filtered:
            bs = [e.F.scores.get("B_sm") for e in cands.retained()]
            bs = [b for b in bs if b is not None and np.isfinite(b)]
            if bs:
                report["metrics"] = {"best_B_in_set": float(min(bs))}

        stage = "report"
        out_dir.mkdir(parents=True, exist_ok=True)
        if truth is not None and sm_F is not None:
            _panel_epilines(out_dir / "panel_a.svg",
                            "(a) baseline epipolar lines on exact points",
                            sm_F, truth["matches"], w, h)
        if cands is not None and truth is not None:
            for key, name, label in (("B_sm", "panel_b.svg", "(b) best by exact residual"),
                                     ("Z_ctpm", "panel_c.svg", "(c) best by tangency score"),
                                     ("Z_ccpm", "panel_d.svg", "(d) best by correspondence score")):
                best = _best_by(cands, key)
                if best is not None:
                    _panel_epilines(out_dir / name,
                                    f"{label}: {best[0]:.3f} px",
                                    best[1].F, truth["matches"], w, h)
        if ccpm is not None:
            _panel_curves(out_dir / "panel_e.svg",
                          "(e) matched isophotos with correspondences",
                          ccpm["pairs"], ccpm["offsets"], w, h)
            _panel_profile(out_dir / "panel_f.svg",
                           "(f) score along the search spiral", cands)
            _panel_scores(out_dir / "panel_g.svg",
                          "(g) per-candidate scores", cands)
            _panel_partition(out_dir / "panel_h.svg",
                             "(h) partition, spiral, retained epipoles",
                             ccpm["partition"], ccpm["frame"], cands,
                             truth_F.e_prime if truth_F is not None else None)
        (out_dir / "report.json").write_text(
            json.dumps(report, sort_keys=True, indent=2) + "\n")
        return report
    except ValidationError:
        raise
    except SmoothEpiError as err:
        report["error"] = {"stage": stage, "code": type(err).__name__,
                           "message": str(err)}
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
            (out_dir / "report.json").write_text(
                json.dumps(report, sort_keys=True, indent=2) + "\n")
        except OSError:
            pass
        if isinstance(err, StageError):
            raise
        raise StageError(stage, type(err).__name__,
                         f"stage '{stage}': {err}") from err


def compare(bundle_paths: list) -> dict:
    """Tabulate candidate-set quality columns across report bundles."""
    if not bundle_paths:
        raise ValidationError("need at least one report bundle")
    rows = []
    for p in bundle_paths:
        with open(p) as f:
            data = json.load(f)
        if data.get("schema_version") != SCHEMA_VERSION:
            raise ValidationError(f"incompatible report schema in {p}")
        ccpm = data.get("stages", {}).get("ccpm", {})
        ctpm = data.get("stages", {}).get("ctpm", {})
        coll = ccpm.get("collinearity", {})
        best_b = data.get("metrics", {}).get("best_B_in_set")
        top_err = ctpm.get("top_direction_error")
        gamma = data.get("config", {}).get("gamma")
        rows.append({
            "bundle": str(p),
            "scene": data.get("config", {}).get("scene"),
            "candidates": coll.get("n_retained"),
            "best_B_in_set": best_b,
            "near_true_present": (best_b is not None and best_b < 2.0),
            "ctpm_top_within_gamma": (top_err is not None and gamma is not None
                                      and top_err < gamma),
        })
    return {"schema_version": SCHEMA_VERSION, "rows": rows}


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="smoothepi",
        description="Two-view epipolar geometry for smooth featureless surfaces",
    )
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one method end to end")
    r.add_argument("--method", choices=METHODS, default="full")
    r.add_argument("--img1")
    r.add_argument("--img2")
    r.add_argument("--scene", choices=["a", "b"])
    r.add_argument("--sigma", type=float, default=2.0)
    r.add_argument("--gamma", type=float, default=0.05)
    r.add_argument("--levels-step", type=float, default=0.1, dest="level_step")
    r.add_argument("--out", default="out")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--config", help="JSON config file; flags override its values")
    c = sub.add_parser("compare", help="summarize report bundles")
    c.add_argument("bundles", nargs="+")
    c.add_argument("--out", default=None)
    return p


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            values = {}
            if args.config:
                try:
                    with open(args.config) as f:
                        values.update(json.load(f))
                except OSError as err:
                    print(f"io error: {err}", file=sys.stderr)
                    return EXIT_IO
            defaults = _build_parser().parse_args(["run"])
            for key in ("method", "img1", "img2", "scene", "sigma", "gamma",
                        "level_step", "out", "seed"):
                given = getattr(args, key)
                if given != getattr(defaults, key) or key not in values:
                    values[key] = given
            config = RunConfig(**{k: v for k, v in values.items()
                                  if k in RunConfig.__dataclass_fields__})
            run(config)
            return EXIT_OK
        summary = compare(args.bundles)
        text = json.dumps(summary, sort_keys=True, indent=2)
        if args.out:
            Path(args.out).write_text(text + "\n")
        else:
            print(text)
        return EXIT_OK
    except ValidationError as err:
        print(f"validation error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    except StageError as err:
        print(f"stage failure: {err}", file=sys.stderr)
        return EXIT_STAGE
    except OSError as err:
        print(f"io error: {err}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
