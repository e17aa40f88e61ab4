"""Finite partition of the candidate-epipole plane.

The plane is divided into concentric rings of angular regions around the
unit image circle.  Region sizes are chosen so that (a) no two epipoles
inside one region can be told apart at the system's angular resolution
gamma, and (b) every region is hit by a random image line with the same
probability (the hit measure).  The outermost ring fixes the hit-measure
target; rings are then solved inward until the resolution constraint can
no longer hold, after which only the hit measure is balanced.  A spiral
ordering enumerates one representative epipole per region from the image
center outward; outer-ring representatives are directions (points at
infinity).
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np
from scipy.optimize import brentq

from .errors import (
    InfeasiblePartitionError,
    PartitionConstructionError,
    ValidationError,
)

BISECT_TOL = 1e-10  # radius root tolerance, normalized units
FAR_BOUNDARY = 1e5  # stand-in radius when sampling an unbounded boundary
ALPHA_SAMPLES = 128  # boundary samples per region for subtended angles
HM_R_NODES = 32  # Gauss-Legendre nodes in radius for the hit-measure integral
HM_PHI_NODES = 128  # uniform angular nodes for the hit-measure integral
MAX_RINGS = 4096
GAMMA_RANGE = (1e-4, 0.2)

KIND_OUTER = "outer"
KIND_INTERMEDIATE = "intermediate"
KIND_INNER = "inner"


@dataclasses.dataclass(frozen=True, eq=False)
class EpipoleRegion:
    """Annular sector {r_inner <= r <= r_outer, theta <= phi <= theta+dtheta}."""

    theta: float
    dtheta: float
    r_outer: float  # may be inf (outer ring)
    r_inner: float
    kind: str
    representative: np.ndarray  # (3,) homogeneous; w == 0 for directions

    def __post_init__(self):
        if not (0.0 < self.dtheta <= 2.0 * np.pi + 1e-12):
            raise ValidationError("region angular width out of range")
        if not (self.r_inner < self.r_outer):
            raise ValidationError("region radii out of order")
        if self.kind not in (KIND_OUTER, KIND_INTERMEDIATE, KIND_INNER):
            raise ValidationError(f"unknown region kind '{self.kind}'")
        rep = np.asarray(self.representative, dtype=np.float64)
        if rep.shape != (3,):
            raise ValidationError("representative must be homogeneous (3,)")
        rep.setflags(write=False)
        object.__setattr__(self, "representative", rep)

    @property
    def theta_mid(self) -> float:
        return self.theta + 0.5 * self.dtheta

    def contains(self, pts: np.ndarray) -> np.ndarray:
        """Membership of (N, 2) points, boundaries included."""
        pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        r = np.hypot(pts[:, 0], pts[:, 1])
        ok_r = (r >= self.r_inner - 1e-12) & (r <= self.r_outer + 1e-12)
        if self.dtheta >= 2.0 * np.pi - 1e-12:
            return ok_r
        ang = np.mod(np.arctan2(pts[:, 1], pts[:, 0]) - self.theta, 2.0 * np.pi)
        return ok_r & (ang <= self.dtheta + 1e-12)

    def boundary_points(self, n: int = ALPHA_SAMPLES) -> np.ndarray:
        """(M, 2) samples along the region boundary; infinity clamped.

        Radial edges are sampled geometrically so that directions seen
        from the image stay densely covered even for unbounded regions.
        """
        r_out = min(self.r_outer, FAR_BOUNDARY)
        r_in = max(self.r_inner, 0.0)
        full_circle = self.dtheta >= 2.0 * np.pi - 1e-12
        quarter = max(n // (2 if full_circle else 4), 8)
        t = np.linspace(0.0, 1.0, quarter)
        ang = self.theta + t * self.dtheta
        pieces = [np.column_stack([r_out * np.cos(ang), r_out * np.sin(ang)])]
        if r_in > 0:
            pieces.append(np.column_stack([r_in * np.cos(ang), r_in * np.sin(ang)]))
        if not full_circle:
            base = max(r_in, 1e-3 * min(r_out, 1.0))
            rr = base * (r_out / base) ** t
            rr[0], rr[-1] = r_in, r_out
            for a in (self.theta, self.theta + self.dtheta):
                pieces.append(np.column_stack([rr * np.cos(a), rr * np.sin(a)]))
        return np.vstack(pieces)

    def to_json_dict(self) -> dict:
        return {
            "theta": float(self.theta),
            "dtheta": float(self.dtheta),
            "r_outer": None if math.isinf(self.r_outer) else float(self.r_outer),
            "r_inner": float(self.r_inner),
            "kind": self.kind,
            "representative": [float(v) for v in self.representative],
        }


@dataclasses.dataclass(frozen=True, eq=False)
class EpipolePartition:
    """All regions plus the center-outward spiral enumeration order."""

    regions: list  # list[EpipoleRegion]
    spiral: list  # permutation of region indices, center outward
    gamma: float
    hm_target: float

    def __post_init__(self):
        if sorted(self.spiral) != list(range(len(self.regions))):
            raise ValidationError("spiral must be a permutation of region indices")

    @property
    def n_regions(self) -> int:
        return len(self.regions)

    def to_json_dict(self) -> dict:
        return {
            "gamma": float(self.gamma),
            "hm_target": float(self.hm_target),
            "spiral": [int(i) for i in self.spiral],
            "regions": [g.to_json_dict() for g in self.regions],
        }


def subtended_angles(region: EpipoleRegion, pts: np.ndarray,
                     n_boundary: int = ALPHA_SAMPLES) -> np.ndarray:
    """Angle subtended by the region at each (N, 2) point; 2*pi inside.

    The angular extent of the direction set from a point to the region
    boundary is 2*pi minus the largest gap between sorted direction
    angles, which is wraparound-safe for any region shape.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    bd = region.boundary_points(n_boundary)
    ang = np.arctan2(bd[None, :, 1] - pts[:, None, 1],
                     bd[None, :, 0] - pts[:, None, 0])
    ang.sort(axis=1)
    gaps = np.diff(ang, axis=1)
    wrap = (2.0 * np.pi + ang[:, 0] - ang[:, -1])[:, None]
    extent = 2.0 * np.pi - np.concatenate([gaps, wrap], axis=1).max(axis=1)
    extent[region.contains(pts)] = 2.0 * np.pi
    if region.dtheta >= 2.0 * np.pi - 1e-12:
        # a full-circle annulus surrounds any point radially inside it
        enclosed = np.hypot(pts[:, 0], pts[:, 1]) < region.r_inner
        extent[enclosed] = 2.0 * np.pi
    return extent


def alpha_G(region: EpipoleRegion, q) -> float:
    """Maximal angle the region subtends at image point q."""
    q = np.asarray(q, dtype=np.float64)
    if np.hypot(q[0], q[1]) > 1.0 + 1e-9:
        raise ValidationError("q must lie inside the unit image circle")
    return float(subtended_angles(region, q[None, :])[0])


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(HM_R_NODES)
_HM_R = 0.5 * (_GL_NODES + 1.0)  # map [-1, 1] -> [0, 1]
_HM_WR = 0.5 * _GL_WEIGHTS
_HM_PHI = (np.arange(HM_PHI_NODES) + 0.5) * (2.0 * np.pi / HM_PHI_NODES)
_HM_POINTS = np.column_stack(
    [np.outer(_HM_R, np.cos(_HM_PHI)).ravel(), np.outer(_HM_R, np.sin(_HM_PHI)).ravel()]
)
_HM_WEIGHTS = np.outer(_HM_WR * _HM_R, np.full(HM_PHI_NODES, 2.0 * np.pi / HM_PHI_NODES)).ravel()


def hit_measure(region: EpipoleRegion) -> float:
    """Probability that a random image line (point + direction) hits the region.

    HM(G) = (1/2pi) * int_0^1 int_0^2pi r * alpha_G(r cos phi, r sin phi) dphi dr,
    evaluated by Gauss-Legendre in r and a uniform rule in phi.  The
    region is rotated to a canonical start angle first: HM is exactly
    rotation invariant, and canonicalizing makes the quadrature value
    identical for every region of a ring rather than identical only up
    to grid placement.
    """
    if abs(region.theta) > 1e-15:
        region = _region(0.0, region.dtheta, region.r_outer, region.r_inner,
                         region.kind)
    alpha = subtended_angles(region, _HM_POINTS)
    return float(_HM_WEIGHTS @ alpha / (2.0 * np.pi))


def _alpha_bisector(r_near: float, dtheta: float) -> float:
    """Closed-form angle at the bisector image point toward the near corners.

    alpha(q1) = 2 atan( r sin(dtheta/2) / (r cos(dtheta/2) - 1) ), valid when
    the near corners lie outside the image circle along the bisector.
    """
    den = r_near * np.cos(0.5 * dtheta) - 1.0
    if den <= 0.0:
        return np.inf
    return 2.0 * np.arctan(r_near * np.sin(0.5 * dtheta) / den)


def _alpha_grazing_outer(r2: float, dtheta: float) -> float:
    """Closed-form angle at the grazing image point for an unbounded region.

    alpha(q2) = dtheta + asin(1 / r2), where q2 is the image-circle point
    whose tangent line passes through the near region corner.
    """
    if r2 <= 1.0:
        return np.inf
    return dtheta + np.arcsin(1.0 / r2)


def _alpha_grazing_intermediate(r_outer: float, r_inner: float, dtheta: float) -> float:
    """Angle subtended by the region diagonal at the tangent circumscribed circle.

    The widest view from the image circle of a bounded ring region is at the
    point q2 where the circle through the diagonal corners p1 (inner radius,
    one edge) and p4 (outer radius, other edge) is externally tangent to the
    image circle; the subtended angle is the inscribed angle of the diagonal
    chord on that circle.
    """
    p1 = np.array([r_inner, 0.0])
    p4 = r_outer * np.array([np.cos(dtheta), np.sin(dtheta)])
    mid = 0.5 * (p1 + p4)
    chord = p4 - p1
    h = 0.5 * np.linalg.norm(chord)
    if h < 1e-15:
        return 0.0
    nmid = np.linalg.norm(mid)
    if nmid < 1e-12:
        return np.inf
    inward = -mid / nmid  # unit normal direction moving the center toward the image

    def resid(t: float) -> float:
        m = mid + t * inward
        return float(np.linalg.norm(m) - 1.0 - np.hypot(h, t))

    # Tangency: circle of radius sqrt(h^2 + t^2) centered at distance |m|
    # from the image center touches the unit circle when resid(t) == 0.
    t_hi = nmid - 1.0  # center on the image circle; resid surely negative
    if resid(t_hi) > 0.0 or resid(0.0) < 0.0:
        # chord midpoint already inside reach: region effectively touches image
        if resid(0.0) < 0.0 and resid(-4.0 * nmid) < 0.0:
            return np.inf
        t_lo, t_hi = (-4.0 * nmid, 0.0) if resid(0.0) < 0.0 else (0.0, t_hi)
    else:
        t_lo = 0.0
    t = brentq(resid, t_lo, t_hi, xtol=BISECT_TOL)
    m = mid + t * inward
    q2 = m / np.linalg.norm(m)
    u = p1 - q2
    v = p4 - q2
    cosang = np.clip(u @ v / (np.linalg.norm(u) * np.linalg.norm(v)), -1.0, 1.0)
    return float(np.arccos(cosang))


def _region(theta, dtheta, r_outer, r_inner, kind) -> EpipoleRegion:
    rep = _representative(theta, dtheta, r_outer, r_inner, kind)
    return EpipoleRegion(theta=float(theta), dtheta=float(dtheta),
                         r_outer=float(r_outer), r_inner=float(r_inner),
                         kind=kind, representative=rep)


def _representative(theta, dtheta, r_outer, r_inner, kind) -> np.ndarray:
    mid = theta + 0.5 * dtheta
    if kind == KIND_OUTER or math.isinf(r_outer):
        return np.array([np.cos(mid), np.sin(mid), 0.0])
    if dtheta >= 2.0 * np.pi - 1e-12 and r_inner <= 1e-12:
        return np.array([0.0, 0.0, 1.0])  # central disk: centroid at the origin
    # centroid of an annular sector lies on the bisector
    area2 = r_outer**2 - r_inner**2
    radial = (2.0 / 3.0) * (r_outer**3 - r_inner**3) / area2
    radial *= np.sin(0.5 * dtheta) / (0.5 * dtheta)
    return np.array([radial * np.cos(mid), radial * np.sin(mid), 1.0])


def _bisect_decreasing(f, lo: float, hi: float, tol: float = BISECT_TOL) -> float:
    """Root of a decreasing function with f(lo) > 0 > f(hi)."""
    flo, fhi = f(lo), f(hi)
    if flo <= 0.0:
        return lo
    if fhi > 0.0:
        raise InfeasiblePartitionError("no root in bracket")
    while hi - lo > tol * max(1.0, abs(hi)):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _round_sector_count(dtheta: float) -> float:
    """Snap an angular width to an integer number of regions per ring."""
    n = max(int(round(2.0 * np.pi / dtheta)), 3)
    return 2.0 * np.pi / n


def solve_outer_ring(gamma: float, dtheta1: float) -> tuple[float, float]:
    """Smallest r2 keeping the unbounded ring within resolution, and its HM.

    Returns (r2, hm_target).  dtheta1 is snapped to divide 2*pi evenly by
    the caller; here it is used as given.
    """
    if not (0.0 < dtheta1 < gamma):
        raise InfeasiblePartitionError(
            f"outer angular width {dtheta1:.4g} must lie in (0, gamma)"
        )

    def resid(r2: float) -> float:
        return max(_alpha_bisector(r2, dtheta1), _alpha_grazing_outer(r2, dtheta1)) - gamma

    hi = 4.0 / max(gamma - dtheta1, 1e-9)  # beyond 1/sin(gamma - dtheta) for sure
    if resid(hi) > 0.0:
        raise InfeasiblePartitionError("resolution unreachable on the outer ring")
    r2 = _bisect_decreasing(resid, 1.0 + 1e-9, hi)
    # the closed forms can slightly under-estimate the sampled maximum;
    # push r2 out until the sampling oracle agrees
    aim = gamma * 0.9995
    while max_subtended_from_image(
            _region(0.0, dtheta1, np.inf, r2, KIND_OUTER)) > aim:
        r2 *= 1.02
        if r2 > 1e9:
            raise InfeasiblePartitionError("outer ring radius diverged")
    probe = _region(0.0, dtheta1, np.inf, r2, KIND_OUTER)
    return r2, hit_measure(probe)


MAX_ALPHA_Q = 96  # image-circle viewpoints when maximizing the sampled angle
MAX_ALPHA_BOUNDARY = 96  # region boundary samples during construction


def max_subtended_from_image(region: EpipoleRegion, n_q: int = MAX_ALPHA_Q,
                             n_boundary: int = ALPHA_SAMPLES) -> float:
    """Sampled maximum of the subtended angle over image points.

    The maximum over the image disk of the angle a region subtends is
    attained on the image circle (moving toward the region enlarges the
    direction set).  For radially deep rings the maximizing viewpoint can
    sit far from the region bisector, so the whole circle is scanned
    coarsely and the best cell refined.
    """
    step = 2.0 * np.pi / n_q
    ang = np.arange(n_q) * step
    q = np.column_stack([np.cos(ang), np.sin(ang)])
    a = subtended_angles(region, q, n_boundary)
    k = int(np.argmax(a))
    fine = ang[k] + np.linspace(-step, step, 33)
    qf = np.column_stack([np.cos(fine), np.sin(fine)])
    return float(max(a[k], subtended_angles(region, qf, n_boundary).max()))


def _solve_radius_at_resolution(r_i: float, dtheta: float, gamma: float) -> float | None:
    """Inner radius r_{i+1} < r_i keeping the region's sampled max angle at gamma.

    The paper's two-viewpoint closed forms (bisector point and tangent
    circumscribed circle) under-estimate the true maximum for radially
    thick rings near the image, so the sampled maximum over image-circle
    viewpoints is authoritative; the closed forms only seed the bracket.
    The subtended angle grows as the region extends inward, so the bound
    is a root of a monotone residual in r_{i+1}.
    """
    floor = 1.0 / np.cos(0.5 * dtheta) + 1e-9  # corners must clear the image
    aim = gamma * 0.995  # solve inside the bound for sampling-density slack

    def alpha_at(r_ip1: float) -> float:
        closed = max(_alpha_bisector(r_ip1, dtheta),
                     _alpha_grazing_intermediate(r_i, r_ip1, dtheta))
        if not np.isfinite(closed):
            return np.inf
        probe = _region(0.0, dtheta, r_i, r_ip1, KIND_INTERMEDIATE)
        return max(closed, max_subtended_from_image(probe))

    hi = r_i * (1.0 - 1e-9)
    if floor >= hi or alpha_at(hi) >= aim:
        return None
    if alpha_at(floor) <= aim:
        return floor

    lo, hi2 = floor, hi  # alpha decreases in r_ip1: root of alpha == aim
    while hi2 - lo > 1e-5 * max(1.0, hi2):
        mid = 0.5 * (lo + hi2)
        if alpha_at(mid) > aim:
            lo = mid
        else:
            hi2 = mid
    return hi2


def _max_feasible_width(r_i: float, gamma: float) -> float | None:
    """Largest angular width admitting any resolution-tight ring below r_i."""
    lo, hi = 1e-6, gamma * (1.0 - 1e-9)
    if _solve_radius_at_resolution(r_i, lo, gamma) is None:
        return None
    if _solve_radius_at_resolution(r_i, hi, gamma) is not None:
        return hi
    while hi - lo > 1e-9:
        mid = 0.5 * (lo + hi)
        if _solve_radius_at_resolution(r_i, mid, gamma) is None:
            hi = mid
        else:
            lo = mid
    return lo


HM_SOLVE_RTOL = 1e-3  # relative hit-measure tolerance when bisecting ring depth
HM_BAND_HIGH = 1.08  # intermediate regions may over-hit by up to this factor
WIDTH_GRID = 14  # angular widths scanned per ring for the coverage optimum
WIDTH_COLLAPSE = 0.75  # inner regime once widths fall below this fraction of ring 1


def _solve_depth_at_target(r_i: float, dtheta: float, gamma: float,
                           hm_target: float) -> float | None:
    """Inner radius giving HM in [hm_target, HM_BAND_HIGH * hm_target].

    The resolution bound caps the depth; when the capped ring lands
    inside the band it is taken as-is (deepest ring, fewest rings
    overall), otherwise the depth is bisected down to the band's upper
    edge.  None when the width cannot reach the target at all.
    """
    r_cap = _solve_radius_at_resolution(r_i, dtheta, gamma)
    if r_cap is None:
        return None
    hm_cap = hit_measure(_region(0.0, dtheta, r_i, r_cap, KIND_INTERMEDIATE))
    if hm_cap < hm_target:
        return None  # resolution-capped ring still under-hits
    aim = HM_BAND_HIGH * hm_target
    if hm_cap <= aim:
        return r_cap
    lo, hi = r_cap, r_i * (1.0 - 1e-9)  # HM decreases as the inner radius rises
    hm_hi = hit_measure(_region(0.0, dtheta, r_i, hi, KIND_INTERMEDIATE))
    if hm_hi > aim:
        return None  # even a zero-depth ring over-hits at this width
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        hm = hit_measure(_region(0.0, dtheta, r_i, mid, KIND_INTERMEDIATE))
        if abs(hm - aim) <= HM_SOLVE_RTOL * aim:
            return mid
        if hm > aim:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _solve_intermediate_ring(r_i: float, gamma: float, hm_target: float):
    """(r_{i+1}, dtheta) for an equal-hit ring within the resolution bound.

    Every region's HM lands in a narrow band at the target (depth solved
    by bisection) while alpha_G <= gamma caps the depth.  Among
    admissible angular widths the one maximizing per-region plane
    coverage (width x depth) is chosen, which minimizes the total region
    count.  Returns None when no width can reach the target within the
    resolution bound (the caller then switches to inner-ring rules).
    """
    w_max = _max_feasible_width(r_i, gamma)
    if w_max is None:
        return None
    best = None
    for w in w_max * (np.arange(1, WIDTH_GRID + 1) / (WIDTH_GRID + 1)):
        r_ip1 = _solve_depth_at_target(r_i, w, gamma, hm_target)
        if r_ip1 is None:
            continue
        score = w * (r_i - r_ip1)
        if best is None or score > best[0]:
            best = (score, w, r_ip1)
    if best is None:
        return None
    dtheta = _round_sector_count(best[1])
    r_ip1 = _solve_depth_at_target(r_i, dtheta, gamma, hm_target)
    if r_ip1 is None:
        dtheta = _round_sector_count(best[1] * (1.0 + 1.0 / round(2 * np.pi / best[1])))
        r_ip1 = _solve_depth_at_target(r_i, dtheta, gamma, hm_target)
        if r_ip1 is None:
            return None
    return r_ip1, dtheta


def _solve_inner_ring(r_i: float, dtheta: float, hm_target: float) -> float | None:
    """Inner radius making a frozen-width sector meet the hit-measure target.

    None when even a sector reaching the center falls short.
    """

    def hm_at(r_ip1: float) -> float:
        return hit_measure(_region(0.0, dtheta, r_i, r_ip1, KIND_INNER))

    if hm_at(0.0) < hm_target:
        return None

    def resid(r_ip1: float) -> float:
        return hm_at(r_ip1) - hm_target  # decreasing in r_ip1

    if resid(r_i * (1.0 - 1e-9)) > 0.0:
        # even a zero-thickness arc is hit too often: the frozen width is
        # too wide for this target
        raise InfeasiblePartitionError(
            "frozen-width inner ring exceeds the hit-measure target"
        )
    return _bisect_decreasing(resid, 0.0, r_i * (1.0 - 1e-9), tol=1e-6)


def _disk_hm(radius: float) -> float:
    return hit_measure(_region(0.0, 2.0 * np.pi, radius, -1e-9, KIND_INNER))


def _terminal_split(r_i: float, dtheta: float, hm_target: float):
    """Final ring plus central disk with both as close to the target as possible.

    Used when one more target-hit ring would push the central disk far
    below the equal-hit budget.  The disk radius is solved so the disk
    itself lands near the target, then the leftover annulus is cut into
    the sector count balancing its per-region hit measure best.  Returns
    (r_star, dtheta_ring) or None when no split beats stopping at r_i.
    """
    if _disk_hm(r_i * (1.0 - 1e-9)) <= hm_target:
        return None
    n0 = max(2, int(round(2.0 * np.pi / dtheta)))
    best = None
    for frac in (0.9, 1.0, 1.1):
        aim = frac * hm_target

        def resid(r: float) -> float:
            return aim - _disk_hm(r)  # decreasing in r

        if resid(r_i * (1.0 - 1e-9)) > 0.0:
            continue  # whole disk below this aim; no room for a ring
        r_star = _bisect_decreasing(resid, 0.0, r_i * (1.0 - 1e-9), tol=1e-6)
        for n in sorted({max(2, int(round(n0 * 2.0 ** k))) for k in range(-5, 7)}):
            w = 2.0 * np.pi / n
            hm = hit_measure(_region(0.0, w, r_i, r_star, KIND_INNER))
            if hm <= 0.0:
                continue
            dev = max(frac, 1.0 / frac, hm / hm_target, hm_target / hm)
            if best is None or dev < best[0]:
                best = (dev, r_star, w)
    if best is None:
        return None
    return best[1], best[2]


def _make_ring(theta0: float, dtheta: float, r_outer: float, r_inner: float,
               kind: str) -> list[EpipoleRegion]:
    n = int(round(2.0 * np.pi / dtheta))
    return [
        _region(theta0 + k * dtheta, dtheta, r_outer, r_inner, kind)
        for k in range(n)
    ]


def build_partition(gamma: float, dtheta1: float | None = None,
                    r_stop: float = 0.0) -> EpipolePartition:
    """Construct the full plane partition for resolution gamma.

    The outer (unbounded) ring is solved first and fixes the hit-measure
    target; intermediate rings are solved inward with both constraints
    active; once the resolution constraint becomes unattainable the
    angular width freezes and only the hit measure is balanced; a single
    central disk region terminates the recursion.

    Outer regions carry the smallest hit measure achievable at the
    resolution bound, so a too-narrow initial width makes the target
    unreachable further in; the width is then bumped and the build
    retried until every ring can match the target.
    """
    if not (GAMMA_RANGE[0] < gamma < GAMMA_RANGE[1]):
        raise ValidationError(f"gamma must lie in {GAMMA_RANGE}, got {gamma}")
    if dtheta1 is None:
        dtheta1 = 0.5 * gamma
    if not (0.0 < dtheta1 < gamma):
        raise ValidationError("initial angular width must lie in (0, gamma)")
    if r_stop < 0.0:
        raise ValidationError("r_stop must be >= 0")
    width = dtheta1
    last_err = None
    while width < gamma:
        try:
            return _build_partition_once(gamma, _round_sector_count(width), r_stop)
        except InfeasiblePartitionError as err:
            last_err = err
            width *= 1.2
    raise InfeasiblePartitionError(
        f"no initial angular width below gamma admits an equal-hit partition: {last_err}"
    )


def _build_partition_once(gamma: float, dtheta1: float,
                          r_stop: float) -> EpipolePartition:
    r2, hm_target = solve_outer_ring(gamma, dtheta1)
    rings: list[list[EpipoleRegion]] = []
    rings.append(_make_ring(0.0, dtheta1, np.inf, r2, KIND_OUTER))

    r_i = r2
    dtheta = dtheta1
    ring_index = 1
    first_width = None
    # intermediate regime: resolution and hit measure both active; stop
    # once maintaining resolution would degenerate the angular widths
    # (regions close to the image), not just once it becomes impossible
    while r_i > max(r_stop, 0.0):
        if ring_index > MAX_RINGS:
            raise PartitionConstructionError(ring_index)
        solved = _solve_intermediate_ring(r_i, gamma, hm_target)
        if solved is None:
            break
        r_ip1, width = solved
        if first_width is None:
            first_width = width
        elif width < WIDTH_COLLAPSE * first_width:
            break
        dtheta = width
        rings.append(_make_ring(0.0, dtheta, r_i, r_ip1, KIND_INTERMEDIATE))
        r_i = r_ip1
        ring_index += 1

    # inner regime: angular width frozen, hit measure only.  Near the
    # center a frozen width can stop matching the target (zero-thickness
    # arcs already over- or under-hit); the width is then halved or
    # doubled, keeping every ring at the target until the remaining disk
    # itself fits the equal-hit budget.
    while r_i > max(r_stop, 0.0) and _disk_hm(r_i) > 1.1 * hm_target:
        if ring_index > MAX_RINGS:
            raise PartitionConstructionError(ring_index)
        r_ip1 = None
        for _ in range(24):
            n = int(round(2.0 * np.pi / dtheta))
            try:
                r_ip1 = _solve_inner_ring(r_i, dtheta, hm_target)
            except InfeasiblePartitionError:
                # zero-thickness arcs over-hit: narrow the sectors
                if n >= 1 << 20:
                    raise PartitionConstructionError(ring_index)
                dtheta = 2.0 * np.pi / (2 * n)
                continue
            if r_ip1 is not None:
                break
            # even center-reaching sectors under-hit: widen the sectors
            if n <= 2:
                break
            dtheta = 2.0 * np.pi / max(2, n // 2)
        if r_ip1 is None or r_ip1 <= max(r_stop, 0.0):
            break
        if _disk_hm(r_ip1) < 0.9 * hm_target:
            # one more target ring would leave a starved central disk;
            # rebalance the remainder into a final ring plus a disk that
            # both land near the target
            split = _terminal_split(r_i, dtheta, hm_target)
            if split is not None:
                r_star, w = split
                rings.append(_make_ring(0.0, w, r_i, r_star, KIND_INNER))
                r_i = r_star
            break
        rings.append(_make_ring(0.0, dtheta, r_i, r_ip1, KIND_INNER))
        r_i = r_ip1
        ring_index += 1

    # central disk terminates the construction
    disk = _region(0.0, 2.0 * np.pi, r_i, -1e-12, KIND_INNER)
    rings.append([disk])

    regions: list[EpipoleRegion] = []
    ring_slices = []
    for ring in rings:
        start = len(regions)
        regions.extend(ring)
        ring_slices.append((start, len(regions)))

    spiral = _spiral_order(rings, ring_slices)
    return EpipolePartition(regions=regions, spiral=spiral, gamma=float(gamma),
                            hm_target=float(hm_target))


def _spiral_order(rings, ring_slices) -> list[int]:
    """Center outward, each ring traversed from the angle nearest the last exit."""
    order: list[int] = []
    last_angle = 0.0
    # rings[0] is outermost; walk from the innermost (the disk) outward
    for ring, (start, stop) in zip(reversed(rings), reversed(ring_slices)):
        n = stop - start
        if n == 1:
            order.append(start)
            last_angle = rings[-1][0].theta_mid if ring is rings[-1] else last_angle
            continue
        mids = np.array([g.theta_mid for g in ring])
        diffs = np.abs(np.mod(mids - last_angle + np.pi, 2.0 * np.pi) - np.pi)
        k0 = int(np.argmin(diffs))
        for j in range(n):
            order.append(start + (k0 + j) % n)
        last_angle = ring[(k0 + n - 1) % n].theta_mid
    return order


def spiral_representatives(p: EpipolePartition) -> list[np.ndarray]:
    """Homogeneous representative epipoles in spiral order (w == 0 at infinity)."""
    return [p.regions[i].representative for i in p.spiral]


@dataclasses.dataclass(frozen=True, eq=False)
class PartitionFrame:
    """Conversion between the normalized epipole plane and pixel coordinates.

    The unit image circle is the circumscribed circle of the pixel
    rectangle, so every actual image point lies inside it.
    """

    center: np.ndarray  # (2,) pixels
    radius: float  # pixels per normalized unit

    def __post_init__(self):
        c = np.asarray(self.center, dtype=np.float64)
        if c.shape != (2,) or self.radius <= 0:
            raise ValidationError("bad partition frame")
        c.setflags(write=False)
        object.__setattr__(self, "center", c)

    @classmethod
    def for_shape(cls, height: int, width: int) -> "PartitionFrame":
        center = np.array([(width - 1) / 2.0, (height - 1) / 2.0])
        radius = 0.5 * np.hypot(width - 1, height - 1)
        return cls(center=center, radius=radius)

    def to_pixels_homogeneous(self, rep: np.ndarray) -> np.ndarray:
        rep = np.asarray(rep, dtype=np.float64)
        if abs(rep[2]) < 1e-12:
            return np.array([rep[0], rep[1], 0.0])
        xy = self.center + self.radius * (rep[:2] / rep[2])
        return np.array([xy[0], xy[1], 1.0])

    def to_normalized(self, pt_px: np.ndarray) -> np.ndarray:
        pt_px = np.asarray(pt_px, dtype=np.float64)
        return (pt_px - self.center) / self.radius
