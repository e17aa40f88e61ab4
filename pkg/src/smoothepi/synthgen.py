"""Synthetic Lambertian scene oracle with exact two-view ground truth.

Renders smooth quadric bodies (spheres and ellipsoids) from two
perspective cameras.  Shading depends only on the surface normal and a
fixed directional light, so the constant-brightness assumption holds
exactly in noiseless renders.  Everything downstream can therefore be
checked against the analytically known fundamental matrix, silhouettes,
and surface correspondences.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .correspond import MatchSet, from_euclidean
from .errors import InvalidCameraError, ValidationError, VisibilityError
from .fsearch import FundamentalMatrix, from_matrix, skew
from .imagery import IntensityImage, from_array


@dataclasses.dataclass(frozen=True, eq=False)
class Camera:
    """Perspective camera: x = K (R (X - C))."""

    K: np.ndarray  # (3, 3) upper triangular, positive focal entries
    R: np.ndarray  # (3, 3) world-to-camera rotation
    C: np.ndarray  # (3,) camera center in world coordinates

    def __post_init__(self):
        K = np.asarray(self.K, dtype=np.float64)
        R = np.asarray(self.R, dtype=np.float64)
        C = np.asarray(self.C, dtype=np.float64)
        if K[0, 0] <= 0 or K[1, 1] <= 0 or abs(K[1, 0]) + abs(K[2, 0]) + abs(K[2, 1]) > 1e-12:
            raise ValidationError("intrinsics must be upper triangular with positive focals")
        for name, arr in (("K", K), ("R", R), ("C", C)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def project(self, X: np.ndarray) -> np.ndarray:
        """World points (N, 3) to pixel coordinates (N, 2)."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        Xc = (X - self.C) @ self.R.T
        x = Xc @ self.K.T
        return x[:, :2] / x[:, 2:3]

    def ray_directions(self, px: np.ndarray) -> np.ndarray:
        """World-space ray directions for pixel coordinates (N, 2)."""
        px = np.atleast_2d(np.asarray(px, dtype=np.float64))
        ph = np.column_stack([px, np.ones(px.shape[0])])
        d_cam = ph @ np.linalg.inv(self.K).T
        return d_cam @ self.R  # R^T applied row-wise


@dataclasses.dataclass(frozen=True, eq=False)
class Ellipsoid:
    """Axis-aligned ellipsoid body; equal radii give a sphere."""

    center: np.ndarray  # (3,)
    radii: np.ndarray  # (3,)
    albedo: float = 0.9

    def __post_init__(self):
        c = np.asarray(self.center, dtype=np.float64)
        r = np.asarray(self.radii, dtype=np.float64)
        if np.any(r <= 0):
            raise ValidationError("ellipsoid radii must be positive")
        if not 0 < self.albedo <= 1:
            raise ValidationError("albedo must be in (0, 1]")
        c.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radii", r)

    def contains(self, p: np.ndarray) -> bool:
        return float(np.sum(((np.asarray(p) - self.center) / self.radii) ** 2)) < 1.0

    def normal_at(self, X: np.ndarray) -> np.ndarray:
        n = (np.atleast_2d(X) - self.center) / self.radii**2
        return n / np.linalg.norm(n, axis=1, keepdims=True)


def sphere(center, radius, albedo=0.9) -> Ellipsoid:
    return Ellipsoid(center=np.asarray(center, dtype=np.float64),
                     radii=np.full(3, float(radius)), albedo=albedo)


@dataclasses.dataclass(frozen=True, eq=False)
class SceneSpec:
    """Two-camera synthetic scene with known relative geometry."""

    bodies: tuple  # tuple[Ellipsoid, ...]
    light: np.ndarray  # (3,) unit direction from surface toward the source
    cameras: tuple  # (Camera, Camera)
    image_size: tuple  # (width, height) pixels
    noise: float = 0.0  # additive Gaussian sigma, intensity units
    ambient: float = 0.0  # floor term keeping the full silhouette lit
    seed: int = 0

    def __post_init__(self):
        if len(self.bodies) < 1:
            raise ValidationError("scene needs at least one body")
        light = np.asarray(self.light, dtype=np.float64)
        light = light / np.linalg.norm(light)
        light.setflags(write=False)
        object.__setattr__(self, "light", light)
        object.__setattr__(self, "bodies", tuple(self.bodies))
        object.__setattr__(self, "cameras", tuple(self.cameras))
        for cam in self.cameras:
            for body in self.bodies:
                if body.contains(cam.C):
                    raise InvalidCameraError("camera center lies inside a body")

    @property
    def parallax_scene(self) -> bool:
        depths = [b.center[2] for b in self.bodies]
        return len(self.bodies) >= 2 and (max(depths) - min(depths)) > 1e-9


def _intersect_body(body: Ellipsoid, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Smallest positive ray parameter per ray, inf where the body is missed."""
    o = (origins - body.center) / body.radii
    d = dirs / body.radii
    a = np.sum(d * d, axis=1)
    b = 2 * np.sum(o * d, axis=1)
    c = np.sum(o * o, axis=1) - 1.0
    disc = b * b - 4 * a * c
    hit = disc >= 0
    t = np.full(origins.shape[0], np.inf)
    sq = np.sqrt(np.maximum(disc, 0.0))
    t1 = (-b - sq) / (2 * a)
    t2 = (-b + sq) / (2 * a)
    t_near = np.where(t1 > 1e-9, t1, np.where(t2 > 1e-9, t2, np.inf))
    t[hit] = t_near[hit]
    return t


def _shade(spec: SceneSpec, body: Ellipsoid, X: np.ndarray) -> np.ndarray:
    n = body.normal_at(X)
    lam = n @ spec.light
    return body.albedo * np.maximum(0.0, spec.ambient + (1.0 - spec.ambient) * lam)


def render_one(spec: SceneSpec, cam_index: int, sigma: float = 0.0,
               supersample: int = 4) -> IntensityImage:
    cam = spec.cameras[cam_index]
    w, h = spec.image_size
    ss = max(1, int(supersample))
    # subpixel centers: ss x ss samples per output pixel, box-averaged
    coords_x = (np.arange(w * ss) + 0.5) / ss - 0.5
    coords_y = (np.arange(h * ss) + 0.5) / ss - 0.5
    xs, ys = np.meshgrid(coords_x, coords_y)
    px = np.column_stack([xs.ravel(), ys.ravel()])
    dirs = cam.ray_directions(px)
    origins = np.broadcast_to(cam.C, dirs.shape)
    best_t = np.full(px.shape[0], np.inf)
    img = np.zeros(px.shape[0])
    for body in spec.bodies:
        t = _intersect_body(body, origins, dirs)
        closer = t < best_t
        if np.any(closer):
            X = cam.C + t[closer, None] * dirs[closer]
            img[closer] = _shade(spec, body, X)
            best_t[closer] = t[closer]
    grid = img.reshape(h * ss, w * ss)
    if ss > 1:
        grid = grid.reshape(h, ss, w, ss).mean(axis=(1, 3))
    if spec.noise > 0:
        rng = np.random.default_rng(spec.seed + cam_index)
        grid = grid + rng.normal(0.0, spec.noise, grid.shape)
    return from_array(np.clip(grid, 0.0, 1.0), sigma)


def render(spec: SceneSpec, sigma: float = 0.0,
           supersample: int = 4) -> tuple[IntensityImage, IntensityImage]:
    """Render the pair; per-pixel ray casting against every quadric body."""
    return (
        render_one(spec, 0, sigma, supersample),
        render_one(spec, 1, sigma, supersample),
    )


def true_F(spec: SceneSpec) -> FundamentalMatrix:
    """Ground-truth fundamental matrix from the known calibration."""
    cam1, cam2 = spec.cameras
    if np.linalg.norm(cam1.C - cam2.C) < 1e-12:
        raise InvalidCameraError("identical camera centers: epipolar geometry undefined")
    R_rel = cam2.R @ cam1.R.T
    t_rel = cam2.R @ (cam1.C - cam2.C)
    F = np.linalg.inv(cam2.K).T @ skew(t_rel) @ R_rel @ np.linalg.inv(cam1.K)
    return from_matrix(F)


def _visible(spec: SceneSpec, body_index: int, X: np.ndarray, cam: Camera,
             margin: float = 2.0) -> bool:
    body = spec.bodies[body_index]
    X = np.asarray(X, dtype=np.float64).reshape(3)
    n = body.normal_at(X)[0]
    view = cam.C - X
    dist = float(np.linalg.norm(view))
    if n @ view <= 1e-9:
        return False  # back-facing
    px = cam.project(X[None, :])[0]
    w, h = spec.image_size
    if not (margin <= px[0] <= w - 1 - margin and margin <= px[1] <= h - 1 - margin):
        return False
    d = (X - cam.C) / dist
    for j, other in enumerate(spec.bodies):
        if j == body_index:
            continue
        t = _intersect_body(other, cam.C[None, :], d[None, :])[0]
        if t < dist * (1 - 1e-9):
            return False  # occluded
    return True


def exact_matches(spec: SceneSpec, n: int, seed: int | None = None) -> MatchSet:
    """n co-visible surface points projected exactly into both images."""
    if n < 8:
        raise ValidationError("need at least 8 exact correspondences")
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    cam1, cam2 = spec.cameras
    pts1, pts2 = [], []
    per_body = [0] * len(spec.bodies)
    attempts = 0
    while len(pts1) < n:
        attempts += 1
        if attempts > 20000 * n:
            raise VisibilityError("could not sample enough co-visible surface points")
        # round-robin over bodies so multi-body scenes keep parallax
        bi = int(np.argmin(per_body))
        body = spec.bodies[bi]
        u = rng.normal(size=3)
        u /= np.linalg.norm(u)
        X = (body.center + body.radii * u)[None, :]
        if _visible(spec, bi, X, cam1) and _visible(spec, bi, X, cam2):
            pts1.append(cam1.project(X)[0])
            pts2.append(cam2.project(X)[0])
            per_body[bi] += 1
    return from_euclidean(np.array(pts1), np.array(pts2), source="chessboard")


def projected_silhouette_conic(body: Ellipsoid, cam: Camera) -> np.ndarray:
    """Analytic image conic of the body silhouette: x^T C x = 0."""
    # dual quadric of the ellipsoid, then its image under P
    T = np.eye(4)
    T[:3, :3] = np.diag(body.radii)
    T[:3, 3] = body.center
    Q_star_unit = np.diag([1.0, 1.0, 1.0, -1.0])  # dual of the unit sphere
    Q_star = T @ Q_star_unit @ T.T
    P = cam.K @ np.hstack([cam.R, (-cam.R @ cam.C)[:, None]])
    C_star = P @ Q_star @ P.T
    C = np.linalg.inv(C_star)
    return C / np.linalg.norm(C)


def conic_sampson_distance(C: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """First-order geometric distance of (N, 2) points from a conic."""
    pts = np.atleast_2d(pts)
    ph = np.column_stack([pts, np.ones(pts.shape[0])])
    val = np.einsum("ni,ij,nj->n", ph, C, ph)
    grad = 2.0 * (ph @ C.T)[:, :2]
    return np.abs(val) / np.maximum(np.linalg.norm(grad, axis=1), 1e-12)


def _default_K(size: int = 256, f: float = 256.0) -> np.ndarray:
    c = (size - 1) / 2
    return np.array([[f, 0.0, c], [0.0, f, c], [0.0, 0.0, 1.0]])


def _rot_y(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def scene_a(noise: float = 0.0, size: int = 256) -> SceneSpec:
    """Two smooth bodies at depths 5 and 9, camera translation parallel to
    the image plane: the true epipole lies at infinity along +x."""
    K = _default_K(size)
    cam1 = Camera(K=K, R=np.eye(3), C=np.zeros(3))
    cam2 = Camera(K=K, R=np.eye(3), C=np.array([0.3, 0.0, 0.0]))
    # Bodies are kept shallow along the optical axis and the light close
    # to frontal: isophote planes then stay near fronto-parallel, so the
    # equal-arc curve correspondence is accurate and the recovered
    # parallax direction is well conditioned.
    bodies = (
        Ellipsoid(center=np.array([-0.75, 0.0, 5.0]),
                  radii=np.array([0.62, 0.40, 0.30]), albedo=0.95),
        Ellipsoid(center=np.array([1.70, 0.05, 9.0]),
                  radii=np.array([1.25, 0.85, 0.55]), albedo=0.90),
    )
    light = np.array([0.06, 0.04, -0.995])
    return SceneSpec(bodies=bodies, light=light, cameras=(cam1, cam2),
                     image_size=(size, size), noise=noise, ambient=0.15, seed=7)


def scene_b(noise: float = 0.0, size: int = 256) -> SceneSpec:
    """Same bodies as scene A under general motion with a 10 degree rotation."""
    base = scene_a(noise=noise, size=size)
    # Rotate about the camera center (rather than a scene pivot) so the
    # depth-independent part of the motion shifts both silhouettes together
    # and they stay separated in the second view; the translation supplies
    # the parallax.
    Q = _rot_y(np.deg2rad(10.0))
    C2 = np.array([-0.20, 0.05, 0.0])
    cam2 = Camera(K=base.cameras[0].K, R=Q.T, C=C2)
    return dataclasses.replace(base, cameras=(base.cameras[0], cam2))
