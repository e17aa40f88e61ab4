"""Epipolar tangency scoring with the guarded outline-homography check."""

import numpy as np
import pytest

from smoothepi import synthgen as sg
from smoothepi.ctpm import (
    TangencyObservation,
    cost_ctpm,
    guard_radius_for,
    rank_candidates,
    scan_tangencies,
    tangent_points_from_epipole,
)
from smoothepi.errors import NoEvidenceError, ValidationError
from smoothepi.fsearch import CandidateEntry, CandidateSet, compose_F
from smoothepi.homography import normalize_h
from smoothepi.imagery import sample_intensity
from smoothepi.isophoto import extract_outline


def _plane_homography(spec, n, d):
    cam1, cam2 = spec.cameras
    R = cam2.R @ cam1.R.T
    t = cam2.R @ (cam1.C - cam2.C)
    n_c1 = cam1.R @ np.asarray(n, dtype=np.float64)
    d_c1 = d - np.dot(n, cam1.C)
    H = cam2.K @ (R + np.outer(t, n_c1) / d_c1) @ np.linalg.inv(cam1.K)
    return normalize_h(H)


def _body_outlines(renders, x_less_than=128.0):
    """Outline of the left (near) body in each image."""
    picked = []
    for img in renders:
        outs = extract_outline(img, 0.05)
        outs = [o for o in outs if o.centroid()[0] < x_less_than]
        assert outs
        picked.append(outs[0])
    return picked


@pytest.fixture(scope="module")
def tangency_setup(scene_a_spec, scene_a_renders, scene_a_truth):
    o1, o2 = _body_outlines(scene_a_renders)
    H = _plane_homography(scene_a_spec, (0.0, 0.0, 1.0), 5.0)
    return scene_a_renders, scene_a_truth["F"], o1, o2, H


class TestTangentPoints:
    def test_infinity_epipole_grazes_vertical_extremes(self):
        t = np.linspace(0, 2 * np.pi, 512, endpoint=False)
        pts = np.column_stack([30 * np.cos(t) + 100, 20 * np.sin(t) + 50])
        tp = tangent_points_from_epipole(pts, np.array([1.0, 0.0, 0.0]))
        assert tp.shape[0] == 2
        ys = np.sort(tp[:, 1])
        assert np.allclose(ys, [30.0, 70.0], atol=0.05)
        assert np.allclose(tp[:, 0], 100.0, atol=0.3)

    def test_finite_epipole_matches_circle_geometry(self):
        R, D = 25.0, 90.0
        t = np.linspace(0, 2 * np.pi, 1024, endpoint=False)
        pts = np.column_stack([R * np.cos(t), R * np.sin(t)])
        tp = tangent_points_from_epipole(pts, np.array([D, 0.0, 1.0]))
        assert tp.shape[0] == 2
        want_x = R * R / D
        want_y = R * np.sqrt(1.0 - (R / D) ** 2)
        assert np.allclose(np.sort(tp[:, 1]), [-want_y, want_y], atol=0.05)
        assert np.allclose(tp[:, 0], want_x, atol=0.05)


class TestGuard:
    def test_radius_matches_area_fraction(self, scene_a_renders):
        o1, _ = _body_outlines(scene_a_renders)
        r = guard_radius_for(o1)
        assert r == pytest.approx(np.sqrt(0.03 * o1.area() / np.pi),
                                  abs=1e-12)
        ratio = np.pi * r**2 / o1.area()
        assert 0.02 <= ratio <= 0.04

    def test_observation_requires_tangents(self):
        with pytest.raises(ValidationError):
            TangencyObservation(
                source_image=1, epipolar_line=np.array([0.0, 1.0, -5.0]),
                x=np.array([1.0, 5.0, 1.0]), level=0.5,
                candidate_tangents=np.empty((0, 2)),
                guard_center=np.zeros(2), guard_radius=5.0)


class TestScanTangencies:
    def test_true_f_yields_mostly_nonempty_lines(self, tangency_setup):
        renders, F, o1, o2, H = tangency_setup
        obs = scan_tangencies(F, renders[0], renders[1], o1, o2, H,
                              n_lines=32, source_image=1)
        assert len(obs) >= 0.7 * 32

    def test_observation_invariants(self, tangency_setup):
        renders, F, o1, o2, H = tangency_setup
        obs = scan_tangencies(F, renders[0], renders[1], o1, o2, H,
                              n_lines=32, source_image=1)
        for o in obs:
            p = o.x[:2] / o.x[2]
            assert o1.contains(p)
            d = np.linalg.norm(o.candidate_tangents - o.guard_center, axis=1)
            assert np.all(d <= o.guard_radius + 1e-9)
            # the max point is a local intensity maximum along the sweep
            # direction (scene A epipole at infinity, horizontal lines)
            here = sample_intensity(renders[0], p)
            assert here >= sample_intensity(renders[0], p + [1.5, 0]) - 1e-3
            assert here >= sample_intensity(renders[0], p - [1.5, 0]) - 1e-3

    def test_wrong_epipole_direction_finds_less_evidence(self, tangency_setup):
        renders, F, o1, o2, H = tangency_setup
        good = scan_tangencies(F, renders[0], renders[1], o1, o2, H,
                               n_lines=32, source_image=1)
        F_bad = compose_F(np.array([0.2, 1.0, 0.0]), H)
        bad = scan_tangencies(F_bad, renders[0], renders[1], o1, o2, H,
                              n_lines=32, source_image=1)
        assert len(bad) < len(good)

    def test_too_few_lines_rejected(self, tangency_setup):
        renders, F, o1, o2, H = tangency_setup
        with pytest.raises(ValidationError):
            scan_tangencies(F, renders[0], renders[1], o1, o2, H, n_lines=4)


class TestCostCtpm:
    def test_true_f_cost_small(self, tangency_setup):
        renders, F, o1, o2, H = tangency_setup
        o12 = scan_tangencies(F, renders[0], renders[1], o1, o2, H,
                              n_lines=32, source_image=1)
        o21 = scan_tangencies(F, renders[1], renders[0], o2, o1, H.inverse(),
                              n_lines=32, source_image=2)
        assert cost_ctpm(F, o12, o21) < 1.5

    def test_tangent_on_line_contributes_zero(self, scene_a_truth):
        F = scene_a_truth["F"]
        x = np.array([90.0, 120.0, 1.0])
        line = F.F @ x
        # a point on the epipolar line: solve line . (px, py, 1) = 0
        px = 100.0
        py = -(line[0] * px + line[2]) / line[1]
        obs = TangencyObservation(
            source_image=1, epipolar_line=line, x=x, level=0.5,
            candidate_tangents=np.array([[px, py]]),
            guard_center=np.array([px, py]), guard_radius=5.0)
        assert cost_ctpm(F, [obs], []) == pytest.approx(0.0, abs=1e-9)

    def test_matches_brute_force_oracle(self, tangency_setup):
        renders, F, o1, o2, H = tangency_setup
        o12 = scan_tangencies(F, renders[0], renders[1], o1, o2, H,
                              n_lines=16, source_image=1)
        got = cost_ctpm(F, o12, [])
        total = 0.0
        for o in o12:
            line = F.F @ o.x
            ds = [abs(line @ np.array([p[0], p[1], 1.0]))
                  / np.hypot(line[0], line[1]) for p in o.candidate_tangents]
            total += min(ds)
        assert got == pytest.approx(total / len(o12), abs=1e-12)

    def test_no_evidence_raises(self, scene_a_truth):
        with pytest.raises(NoEvidenceError):
            cost_ctpm(scene_a_truth["F"], [], [])


class TestRankCandidates:
    def test_orders_and_annotates(self, tangency_setup):
        renders, F_true, o1, o2, H = tangency_setup
        # a candidate whose epipole sits inside the source body cannot
        # build a fan and must rank last with an infinite score
        e_inside = np.array([o1.centroid()[0], o1.centroid()[1], 1.0])
        F_bad = compose_F(e_inside, H)
        entries = [
            CandidateEntry(spiral_index=0, epipole=F_true.e_prime,
                           F=F_true, Z=0.1),
            CandidateEntry(spiral_index=1, epipole=e_inside, F=F_bad, Z=0.12),
        ]
        cands = CandidateSet(entries=entries, Z_min=0.1, filtered=[0, 1])
        ranked = rank_candidates(cands, renders[0], renders[1], o1, o2, H,
                                 n_lines=16)
        assert sorted(ranked.filtered) == [0, 1]
        assert ranked.filtered[0] == 0
        top = ranked.retained()[0]
        assert np.isfinite(top.F.scores["Z_ctpm"])
        assert ranked.retained()[1].F.scores["Z_ctpm"] == np.inf

    def test_empty_filter_rejected(self, scene_a_truth):
        cands = CandidateSet(entries=[], Z_min=1.0, filtered=[])
        with pytest.raises(ValidationError):
            rank_candidates(cands, None, None, None, None, None)
