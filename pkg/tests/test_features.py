"""Geometric feature extraction tests against brute-force PCA oracles."""

import numpy as np
import pytest

from clickseg.errors import ValidationError
from clickseg.features import FEATURE_DIM, extract_features
from clickseg import kernels

from conftest import grid_plane, make_scene
from oracles import knn_oracle, pca_features_oracle

NORMAL = slice(6, 9)
HEIGHT = 9
LINEARITY, PLANARITY, SCATTERING, VERTICALITY = 10, 11, 12, 13


class TestShapeFeatures:
    def test_planar_patch(self):
        scene = make_scene(grid_plane(5, 4))
        # the 8-ring neighborhood is in-plane isotropic for interior points
        feats = extract_features(scene, k_neighbors=8).values
        assert feats.shape == (20, FEATURE_DIM)
        interior = [6, 7, 8, 11, 12, 13]
        np.testing.assert_allclose(feats[interior, PLANARITY], 1.0, atol=1e-9)
        np.testing.assert_allclose(feats[interior, SCATTERING], 0.0, atol=1e-9)
        np.testing.assert_allclose(feats[interior, NORMAL], [[0, 0, 1]] * 6, atol=1e-9)
        np.testing.assert_allclose(feats[:, VERTICALITY], 1.0, atol=1e-9)

    def test_collinear_points(self):
        pts = np.column_stack([np.arange(20) * 0.1, np.zeros(20), np.zeros(20)])
        feats = extract_features(make_scene(pts), k_neighbors=4).values
        np.testing.assert_allclose(feats[:, LINEARITY], 1.0, atol=1e-9)

    def test_degenerate_neighborhood_defaults(self):
        pts = np.zeros((6, 3))
        feats = extract_features(make_scene(pts), k_neighbors=3).values
        np.testing.assert_array_equal(feats[:, NORMAL], [[0, 0, 1]] * 6)
        np.testing.assert_array_equal(feats[:, 10:14], [[0, 0, 0, 1]] * 6)

    def test_matches_pca_oracle(self, rng):
        pts = rng.uniform(0, 2, size=(80, 3))
        scene = make_scene(pts)
        k = 8
        feats = extract_features(scene, k).values
        for i in (0, 17, 42, 79):
            neigh = knn_oracle(pts.tolist(), i, k)
            normal, shape = pca_features_oracle(pts, i, neigh)
            np.testing.assert_allclose(feats[i, NORMAL], normal, atol=1e-9)
            np.testing.assert_allclose(feats[i, 10:14], shape, atol=1e-9)

    def test_floor_point_height_zero(self, rng):
        floor = grid_plane(6, 6, spacing=0.2, z=0.0)
        high = rng.uniform(0, 1, (30, 2))
        tower = np.column_stack([high, rng.uniform(1.0, 2.0, 30)])
        scene = make_scene(np.concatenate([floor, tower]))
        feats = extract_features(scene, 5).values
        assert feats[: len(floor), HEIGHT].max() < 1e-12


class TestFeatureInvariants:
    def test_all_components_in_unit_interval(self, rng):
        pts = rng.uniform(-3, 3, size=(200, 3))
        feats = extract_features(make_scene(pts), 10).values
        assert feats.min() >= -1.0 - 1e-12
        assert feats.max() <= 1.0 + 1e-12

    def test_deterministic(self, rng):
        pts = rng.uniform(0, 1, size=(100, 3))
        a = extract_features(make_scene(pts), 6).values
        b = extract_features(make_scene(pts), 6).values
        np.testing.assert_array_equal(a, b)

    def test_translation_invariance_of_eigen_features(self, rng):
        pts = rng.uniform(0, 1, size=(120, 3))
        scene_a = make_scene(pts)
        scene_b = make_scene(pts + np.array([10.0, -4.0, 2.5]))
        fa = extract_features(scene_a, 8).values
        fb = extract_features(scene_b, 8).values
        np.testing.assert_allclose(fa[:, 10:14], fb[:, 10:14], atol=1e-9)
        np.testing.assert_allclose(fa[:, NORMAL], fb[:, NORMAL], atol=1e-9)

    def test_preconditions(self, plane_scene):
        with pytest.raises(ValidationError):
            extract_features(plane_scene, 2)
        with pytest.raises(ValidationError):
            extract_features(plane_scene, plane_scene.num_points)


@pytest.mark.skipif(not kernels.HAVE_NUMBA, reason="numba not installed")
class TestKernelPathAgreement:
    def test_knn_paths_identical_with_ties(self):
        pts = grid_plane(10, 10, spacing=1.0)
        a = kernels.knn_numba(np.ascontiguousarray(pts), 8)
        b = kernels.knn_numpy(pts, 8)
        np.testing.assert_array_equal(a, b)

    def test_knn_paths_identical_random(self, rng):
        pts = rng.uniform(0, 4, size=(500, 3))
        a = kernels.knn_numba(np.ascontiguousarray(pts), 12)
        b = kernels.knn_numpy(pts, 12)
        np.testing.assert_array_equal(a, b)

    def test_eig_features_paths_close(self, rng):
        pts = rng.uniform(0, 4, size=(300, 3))
        neigh = kernels.knn(pts, 10)
        na, sa = kernels.eig_features_numba(
            np.ascontiguousarray(pts), np.ascontiguousarray(neigh)
        )
        nb, sb = kernels.eig_features_numpy(pts, neigh)
        np.testing.assert_allclose(sa, sb, atol=1e-6)
        dots = np.abs((na * nb).sum(axis=1))
        assert dots.min() > 1 - 1e-6
