import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from clickseg.scene import Scene


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(12345))


def grid_plane(nx=5, ny=4, spacing=0.1, z=0.0, color=(0.5, 0.5, 0.5)):
    """A flat rectangular grid of points at height z."""
    xs, ys = np.meshgrid(np.arange(nx) * spacing, np.arange(ny) * spacing)
    pts = np.column_stack([xs.ravel(), ys.ravel(), np.full(nx * ny, z)])
    return pts


def make_scene(points, colors=None, semantic=None, instance=None, num_categories=4):
    points = np.asarray(points, dtype=float)
    n = len(points)
    if colors is None:
        colors = np.full((n, 3), 0.5)
    if semantic is None:
        semantic = np.zeros(n, np.int32)
    if instance is None:
        instance = np.zeros(n, np.int32)
    return Scene(
        points=points,
        colors=colors,
        gt_semantic=semantic,
        gt_instance=instance,
        num_categories=num_categories,
    )


@pytest.fixture
def plane_scene():
    pts = grid_plane(6, 5)
    return make_scene(pts)


@pytest.fixture
def two_plane_scene():
    """Two parallel planes 1 m apart; k-NN graphs stay within each plane."""
    a = grid_plane(6, 5, spacing=0.05, z=0.0)
    b = grid_plane(6, 5, spacing=0.05, z=1.0)
    pts = np.concatenate([a, b])
    colors = np.concatenate([np.full((len(a), 3), 0.3), np.full((len(b), 3), 0.7)])
    sem = np.concatenate([np.zeros(len(a), np.int32), np.ones(len(b), np.int32)])
    inst = sem.copy()
    return make_scene(pts, colors, sem, inst)
