"""Epipole search: composition, epipolar cost, filter, leashed refinement."""

import numpy as np
import pytest

from smoothepi import synthgen as sg
from smoothepi.correspond import from_euclidean
from smoothepi.errors import (
    DegenerateLineError,
    InvalidEpipoleError,
    ValidationError,
)
from smoothepi.fsearch import (
    compose_F,
    cost_Z,
    from_matrix,
    local_minima_filter,
    refine_at_epipole,
    search,
)
from smoothepi.homography import cost_S, normalize_h
from smoothepi.isophoto import curve_from_points
from smoothepi.partition import PartitionFrame

F_HORIZONTAL = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])


def _plane_homography(spec, n, d):
    """Homography induced by the world plane n.X = d between the cameras."""
    cam1, cam2 = spec.cameras
    R = cam2.R @ cam1.R.T
    t = cam2.R @ (cam1.C - cam2.C)
    n_c1 = cam1.R @ np.asarray(n, dtype=np.float64)
    d_c1 = d - np.dot(n, cam1.C)
    H = cam2.K @ (R + np.outer(t, n_c1) / d_c1) @ np.linalg.inv(cam1.K)
    return normalize_h(H)


def _planar_circle_curves(spec, center, radius, n=256):
    t = np.linspace(0, 2 * np.pi, n, endpoint=False)
    X = np.column_stack([center[0] + radius * np.cos(t),
                         center[1] + radius * np.sin(t),
                         np.full(n, center[2])])
    c1 = curve_from_points(spec.cameras[0].project(X))
    c2 = curve_from_points(spec.cameras[1].project(X))
    return c1, c2


class TestComposeF:
    def test_horizontal_infinity_epipole_identity_homography(self):
        F = compose_F(np.array([1.0, 0.0, 0.0]), np.eye(3))
        want = F_HORIZONTAL / np.linalg.norm(F_HORIZONTAL)
        assert np.allclose(F.F, want) or np.allclose(F.F, -want)

    def test_left_nullspace_identity(self, rng):
        for _ in range(10):
            e = rng.standard_normal(3)
            H = np.eye(3) + 0.1 * rng.standard_normal((3, 3))
            F = compose_F(e, H)
            assert np.linalg.norm(e @ F.F) < 1e-12 * np.linalg.norm(e)

    def test_rank_two_unit_norm(self, rng):
        F = compose_F(rng.standard_normal(3),
                      np.eye(3) + 0.1 * rng.standard_normal((3, 3)))
        sv = np.linalg.svd(F.F, compute_uv=False)
        assert sv[2] < 1e-9
        assert np.linalg.norm(F.F) == pytest.approx(1.0, abs=1e-12)

    def test_zero_epipole_rejected(self):
        with pytest.raises(InvalidEpipoleError):
            compose_F(np.zeros(3), np.eye(3))

    def test_plane_homography_recomposes_true_F(self, scene_a_spec):
        spec = scene_a_spec
        F_true = sg.true_F(spec)
        H = _plane_homography(spec, n=(0.0, 0.0, 1.0), d=5.0)
        F = compose_F(F_true.e_prime, H)
        matches = sg.exact_matches(spec, 40, seed=3)
        assert cost_Z(F, matches) < 1e-6


class TestCostZ:
    def test_exact_matches_score_zero(self, scene_a_truth):
        assert cost_Z(scene_a_truth["F"], scene_a_truth["matches"]) < 1e-9

    def test_single_match_three_pixels_off(self):
        ms = from_euclidean(np.array([[0.0, 0.0]]), np.array([[0.0, 3.0]]),
                            source="exact")
        assert cost_Z(F_HORIZONTAL, ms) == pytest.approx(3.0, abs=1e-12)

    def test_matches_brute_force_oracle(self, rng, scene_a_truth):
        F = scene_a_truth["F"].F
        a, b = scene_a_truth["matches"].euclidean()
        a = a + rng.normal(0, 2.0, a.shape)
        ms = from_euclidean(a, b, source="exact")
        total = 0.0
        for p, q in zip(a, b):
            l2 = F @ np.array([p[0], p[1], 1.0])
            l1 = F.T @ np.array([q[0], q[1], 1.0])
            total += abs(l2 @ np.array([q[0], q[1], 1.0])) / np.hypot(*l2[:2])
            total += abs(l1 @ np.array([p[0], p[1], 1.0])) / np.hypot(*l1[:2])
        assert cost_Z(F, ms) == pytest.approx(total / (2 * len(a)), abs=1e-9)

    def test_zero_line_raises_degenerate(self):
        ms = from_euclidean(np.array([[0.0, 0.0]] * 2),
                            np.array([[1.0, 1.0]] * 2), source="exact")
        with pytest.raises(DegenerateLineError):
            cost_Z(np.diag([0.0, 0.0, 1.0]), ms)

    def test_symmetry_under_image_swap(self, scene_a_truth, rng):
        F = scene_a_truth["F"].F
        a, b = scene_a_truth["matches"].euclidean()
        ms = from_euclidean(a + rng.normal(0, 1, a.shape), b, source="exact")
        swapped = from_euclidean(*ms.euclidean()[::-1], source="exact")
        assert cost_Z(F, ms) == pytest.approx(cost_Z(F.T, swapped), abs=1e-12)

    def test_scale_gauge_invariance(self, scene_a_truth, rng):
        F = scene_a_truth["F"].F
        a, b = scene_a_truth["matches"].euclidean()
        ms = from_euclidean(a + rng.normal(0, 1, a.shape), b, source="exact")
        assert cost_Z(7.3 * F, ms) == pytest.approx(cost_Z(F, ms), abs=1e-12)


class TestFundamentalMatrixType:
    def test_from_matrix_normalizes(self, scene_a_truth):
        F = from_matrix(5.0 * scene_a_truth["F"].F)
        assert np.linalg.norm(F.F) == pytest.approx(1.0, abs=1e-12)
        assert np.linalg.norm(F.e_prime @ F.F) < 1e-9

    def test_full_rank_input_projected_to_rank_two(self):
        F = from_matrix(np.eye(3))
        sv = np.linalg.svd(F.F, compute_uv=False)
        assert sv[2] < 1e-12
        assert np.linalg.norm(F.e_prime @ F.F) < 1e-9

    def test_zero_matrix_rejected(self):
        with pytest.raises(ValidationError):
            from_matrix(np.zeros((3, 3)))

    def test_scores_annotation(self, scene_a_truth):
        F = scene_a_truth["F"].with_scores(Z_ccpm=0.5)
        assert F.scores["Z_ccpm"] == 0.5
        d = F.to_json_dict()
        assert len(d["F"]) == 9


class TestLocalMinimaFilter:
    def test_interior_minima_below_threshold(self):
        z = np.array([5.0, 1.0, 4.0, 0.9, 5.0])
        z_min, kept = local_minima_filter(z)
        assert z_min == 0.9
        assert kept == [1, 3]

    def test_threshold_excludes_shallow_minima(self):
        z = np.array([5.0, 2.0, 4.0, 1.0, 5.0])
        _, kept = local_minima_filter(z)
        assert kept == [3]  # 2.0 >= 1.34 * 1.0

    def test_plateau_keeps_lowest_index(self):
        z = np.array([3.0, 1.0, 1.0, 1.0, 2.0])
        _, kept = local_minima_filter(z)
        assert kept == [1]

    def test_boundaries_use_single_neighbor(self):
        _, kept = local_minima_filter(np.array([1.0, 2.0, 3.0]))
        assert kept == [0]
        _, kept = local_minima_filter(np.array([3.0, 2.0, 1.0]))
        assert kept == [2]

    def test_empty_sequence_rejected(self):
        with pytest.raises(ValidationError):
            local_minima_filter(np.array([]))


class TestRefineAtEpipole:
    def _setup(self, scene_a_spec):
        spec = scene_a_spec
        H0 = _plane_homography(spec, n=(0.0, 0.0, 1.0), d=5.0)
        c1, c2 = _planar_circle_curves(spec, (-0.75, 0.0, 5.0), 0.35)
        S_min = cost_S(H0, c1, c2)
        matches = sg.exact_matches(spec, 40, seed=3)
        return spec, H0, c1, c2, S_min, matches

    def test_scoring_pass_composes_without_refining(self, scene_a_spec):
        spec, H0, c1, c2, S_min, matches = self._setup(scene_a_spec)
        e = sg.true_F(spec).e_prime
        F, z = refine_at_epipole(e, H0, matches, S_min, (c1, c2), max_evals=0)
        assert z == pytest.approx(cost_Z(compose_F(e, H0), matches), abs=1e-12)

    def test_descent_and_leash(self, scene_a_spec):
        spec, H0, c1, c2, S_min, matches = self._setup(scene_a_spec)
        e = sg.true_F(spec).e_prime
        _, z0 = refine_at_epipole(e, H0, matches, S_min, (c1, c2), max_evals=0)
        F, z, H = refine_at_epipole(e, H0, matches, S_min, (c1, c2),
                                    max_evals=300, leash_samples=None,
                                    return_h=True)
        assert z <= z0 + 1e-12
        assert cost_S(H, c1, c2) <= 1.5 * S_min + 1e-3

    def test_true_epipole_beats_displaced(self, scene_a_spec):
        spec, H0, c1, c2, S_min, matches = self._setup(scene_a_spec)
        e_true = sg.true_F(spec).e_prime
        # displace by 10% of image width in the finite proxy: tilt the
        # direction by atan(0.1 * 256 / far-radius) ~ rotate 0.05 rad
        a = 0.05
        R = np.array([[np.cos(a), -np.sin(a), 0.0],
                      [np.sin(a), np.cos(a), 0.0], [0.0, 0.0, 1.0]])
        e_off = R @ e_true
        _, z_true = refine_at_epipole(e_true, H0, matches, S_min, (c1, c2),
                                      max_evals=200)
        _, z_off = refine_at_epipole(e_off, H0, matches, S_min, (c1, c2),
                                     max_evals=200)
        assert z_true < z_off


class TestSearch:
    def test_filter_replay_on_coarse_partition(self, coarse_partition,
                                               scene_a_spec):
        spec = scene_a_spec
        H0 = _plane_homography(spec, n=(0.0, 0.0, 1.0), d=5.0)
        c1, c2 = _planar_circle_curves(spec, (-0.75, 0.0, 5.0), 0.35)
        S_min = cost_S(H0, c1, c2)
        matches = sg.exact_matches(spec, 40, seed=3)
        frame = PartitionFrame.for_shape(256, 256)
        cands = search(coarse_partition, H0, S_min, matches, (c1, c2), frame,
                       max_evals=0)
        assert cands.retained()
        Z = np.array([e.Z for e in cands.entries])
        z_min, kept = local_minima_filter(Z)
        assert z_min == pytest.approx(cands.Z_min, abs=1e-15)
        assert [cands.entries[i].spiral_index for i in kept] == cands.filtered
        for entry in cands.retained():
            assert entry.Z < 1.34 * cands.Z_min
