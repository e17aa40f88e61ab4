"""Epipole-plane partition: subtended angles, hit measure, construction."""

import numpy as np
import pytest

from smoothepi.errors import InfeasiblePartitionError, ValidationError
from smoothepi.partition import (
    EpipolePartition,
    EpipoleRegion,
    PartitionFrame,
    alpha_G,
    build_partition,
    hit_measure,
    max_subtended_from_image,
    solve_outer_ring,
    spiral_representatives,
)


def _region(theta, dtheta, r_outer, r_inner, kind="intermediate"):
    return EpipoleRegion(theta=theta, dtheta=dtheta, r_outer=r_outer,
                         r_inner=r_inner, kind=kind,
                         representative=np.array([0.0, 0.0, 1.0]))


def _spread_of_directions(pts, q):
    """Largest angle between any two directions from q — sampling oracle."""
    d = pts - np.asarray(q)
    ang = np.sort(np.arctan2(d[:, 1], d[:, 0]))
    gaps = np.diff(np.concatenate([ang, [ang[0] + 2 * np.pi]]))
    return 2 * np.pi - gaps.max()


def _sample_region(region, rng, n):
    """Uniform-ish interior samples plus a dense boundary sweep."""
    r = np.sqrt(rng.uniform(region.r_inner**2, region.r_outer**2, n))
    a = region.theta + rng.uniform(0, region.dtheta, n)
    interior = np.column_stack([r * np.cos(a), r * np.sin(a)])
    return np.vstack([interior, region.boundary_points(512)])


class TestAlphaG:
    def test_small_angle_limit(self):
        # thin arc of length w at distance D: subtended angle ~ w / D
        g = _region(-0.001, 0.002, 50.0001, 50.0)
        q = np.array([0.5, 0.0])
        w = 0.002 * 50.0
        D = 49.5
        assert alpha_G(g, q) == pytest.approx(w / D, rel=0.10)

    def test_point_inside_region_sees_everything(self):
        g = _region(0.0, 2 * np.pi, 0.5, 0.0, kind="inner")
        assert alpha_G(g, np.array([0.1, 0.05])) == pytest.approx(2 * np.pi)

    def test_matches_dense_sampling_oracle(self, rng):
        for _ in range(5):
            g = _region(rng.uniform(0, 2 * np.pi), rng.uniform(0.1, 0.8),
                        rng.uniform(2.0, 4.0), rng.uniform(1.1, 1.9))
            q = rng.uniform(-0.6, 0.6, 2)
            pts = _sample_region(g, rng, 10_000)
            assert alpha_G(g, q) == pytest.approx(
                _spread_of_directions(pts, q), abs=1e-3)

    def test_rejects_viewpoint_outside_image_circle(self):
        g = _region(0.0, 0.5, 3.0, 2.0)
        with pytest.raises(ValidationError):
            alpha_G(g, np.array([2.0, 0.0]))


class TestSolveOuterRing:
    def test_narrow_width_limit_radius(self):
        gamma = 0.05
        r2, _ = solve_outer_ring(gamma, gamma / 50.0)
        assert r2 >= 0.999 / np.sin(gamma)

    def test_solved_ring_meets_resolution(self):
        gamma, dtheta = 0.01, 0.005
        r2, hm = solve_outer_ring(gamma, dtheta)
        g = _region(0.0, dtheta, np.inf, r2, kind="outer")
        assert max_subtended_from_image(g) <= gamma * 1.001
        assert hm == pytest.approx(hit_measure(g), abs=1e-12)

    def test_bisector_angle_matches_sampling(self, rng):
        gamma, dtheta = 0.05, 0.02
        r2, _ = solve_outer_ring(gamma, dtheta)
        g = _region(0.0, dtheta, 3.0 * r2, r2, kind="outer")
        q = np.array([np.cos(dtheta / 2), np.sin(dtheta / 2)])
        pts = _sample_region(g, rng, 20_000)
        assert alpha_G(g, q) == pytest.approx(
            _spread_of_directions(pts, q), abs=1e-3)

    def test_width_at_least_gamma_is_infeasible(self):
        with pytest.raises(InfeasiblePartitionError):
            solve_outer_ring(0.05, 0.05)


class TestHitMeasure:
    def test_whole_exterior_is_pi(self):
        g = _region(0.0, 2 * np.pi, np.inf, 1.0, kind="outer")
        assert hit_measure(g) == pytest.approx(np.pi, rel=1e-6)

    def test_monotone_under_shrinking(self):
        big = _region(0.2, 0.8, 3.0, 1.5)
        small = _region(0.3, 0.5, 2.5, 1.8)
        assert hit_measure(small) < hit_measure(big)

    def test_rotation_invariance(self):
        a = _region(0.0, 0.4, 2.0, 1.4)
        b = _region(2.1, 0.4, 2.0, 1.4)
        assert hit_measure(a) == pytest.approx(hit_measure(b), abs=1e-15)

    def test_agrees_with_monte_carlo_rays(self, rng):
        # HM = pi * P(random image point + random ray direction hits G)
        g = _region(0.3, 0.4, 0.9, 0.5)
        n_lines = 100_000
        q = rng.uniform(-1, 1, (int(n_lines * 1.6), 2))
        q = q[np.hypot(q[:, 0], q[:, 1]) <= 1.0][:n_lines]
        phi = rng.uniform(0, 2 * np.pi, n_lines)
        d = np.column_stack([np.cos(phi), np.sin(phi)])
        t = np.linspace(0.0, 2.0, 257)
        hits = np.zeros(n_lines, dtype=bool)
        for lo in range(0, n_lines, 5000):
            qq = q[lo:lo + 5000]
            dd = d[lo:lo + 5000]
            p = qq[:, None, :] + t[None, :, None] * dd[:, None, :]
            r = np.hypot(p[..., 0], p[..., 1])
            ang = np.mod(np.arctan2(p[..., 1], p[..., 0]) - g.theta, 2 * np.pi)
            inside = (r >= g.r_inner) & (r <= g.r_outer) & (ang <= g.dtheta)
            hits[lo:lo + 5000] = inside.any(axis=1)
        assert np.pi * hits.mean() == pytest.approx(hit_measure(g), rel=0.05)


class TestBuildPartition:
    def test_rejects_bad_parameters(self):
        with pytest.raises(ValidationError):
            build_partition(0.5)
        with pytest.raises(ValidationError):
            build_partition(0.05, dtheta1=0.06)
        with pytest.raises(ValidationError):
            build_partition(0.05, r_stop=-1.0)

    def test_spiral_is_center_out_permutation(self, coarse_partition):
        p = coarse_partition
        assert sorted(p.spiral) == list(range(p.n_regions))
        first = p.regions[p.spiral[0]]
        assert first.contains(np.zeros((1, 2)))[0]

    def test_outer_representatives_are_directions(self, coarse_partition):
        for g in coarse_partition.regions:
            rep = g.representative
            if g.kind == "outer":
                assert rep[2] == 0.0
                assert np.allclose(rep[:2], [np.cos(g.theta_mid),
                                             np.sin(g.theta_mid)], atol=1e-12)
            else:
                assert rep[2] == 1.0
                assert g.contains(rep[None, :2])[0]

    def test_representatives_follow_spiral(self, coarse_partition):
        reps = spiral_representatives(coarse_partition)
        assert len(reps) == coarse_partition.n_regions

    def test_resolution_bound_on_all_noninner_regions(self, coarse_partition):
        gamma = coarse_partition.gamma
        worst = 0.0
        for g in coarse_partition.regions:
            if g.kind == "inner":
                continue
            worst = max(worst, max_subtended_from_image(g))
        assert worst <= gamma * 1.001

    def test_hit_measure_nearly_equal_across_regions(self, coarse_partition):
        # hit measure is rotation invariant: one probe per distinct ring
        seen = {}
        for g in coarse_partition.regions:
            key = (round(g.dtheta, 12), g.r_outer, g.r_inner)
            if key not in seen:
                seen[key] = hit_measure(g)
        vals = np.array(list(seen.values()))
        assert vals.max() / vals.min() <= 1.25

    def test_plane_tiling(self, coarse_partition, rng):
        p = coarse_partition
        r_edge = max(g.r_outer for g in p.regions if np.isfinite(g.r_outer))
        n = 100_000
        r = np.sqrt(rng.uniform(0, (1.5 * r_edge)**2, n))
        a = rng.uniform(0, 2 * np.pi, n)
        pts_r = r
        pts_a = a
        counts = np.zeros(n, dtype=int)
        for g in p.regions:
            ok = (pts_r >= g.r_inner) & (pts_r <= g.r_outer)
            if g.dtheta < 2 * np.pi - 1e-12:
                ang = np.mod(pts_a - g.theta, 2 * np.pi)
                ok &= ang <= g.dtheta
            counts += ok
        assert np.all(counts == 1)

    def test_json_dump_shape(self, coarse_partition):
        d = coarse_partition.to_json_dict()
        assert len(d["regions"]) == coarse_partition.n_regions
        assert d["regions"][0]["r_outer"] is None  # unbounded outer ring

    def test_spiral_permutation_validated(self):
        g = _region(0.0, 2 * np.pi, np.inf, 1.0, kind="outer")
        with pytest.raises(ValidationError):
            EpipolePartition(regions=[g], spiral=[1], gamma=0.05,
                             hm_target=1.0)


class TestPartitionFrame:
    def test_pixel_roundtrip(self):
        f = PartitionFrame.for_shape(256, 256)
        rep = np.array([0.3, -0.2, 1.0])
        px = f.to_pixels_homogeneous(rep)
        back = f.to_normalized(px[:2])
        assert np.allclose(back, rep[:2], atol=1e-12)

    def test_image_corners_lie_on_unit_circle(self):
        f = PartitionFrame.for_shape(256, 256)
        corner = f.to_normalized(np.array([0.0, 0.0]))
        assert np.hypot(*corner) == pytest.approx(1.0, abs=1e-12)

    def test_directions_pass_through(self):
        f = PartitionFrame.for_shape(128, 256)
        rep = np.array([0.6, 0.8, 0.0])
        assert np.allclose(f.to_pixels_homogeneous(rep), rep)
