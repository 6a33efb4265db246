"""Per-point geometric feature extraction.

The 14 features per point: bounding-box-normalized xyz (3), rgb (3), unit
normal from k-NN PCA with non-negative z (3), height above the scene minimum
z normalized by bounding-box height (1), and eigenvalue shape features
linearity, planarity, scattering, verticality (4). Everything lands in
[-1, 1]; the eigen features and normals are translation invariant.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ValidationError
from .scene import Scene

FEATURE_DIM = 14


@dataclass(frozen=True)
class FeatureMatrix:
    """Per-point feature vectors, fixed width, no NaN/Inf."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", vals)
        if vals.ndim != 2 or vals.shape[0] < 1:
            raise ValidationError("feature matrix must be 2-D and non-empty")
        if not np.all(np.isfinite(vals)):
            raise ValidationError("feature matrix contains NaN or Inf")
        vals.setflags(write=False)

    @property
    def num_points(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def normals(self) -> np.ndarray:
        return self.values[:, 6:9]


def extract_features(scene: Scene, k_neighbors: int) -> FeatureMatrix:
    """Deterministic 14-dim features from the scene's k-NN neighborhoods."""
    if k_neighbors < 3:
        raise ValidationError("k_neighbors must be at least 3")
    n = scene.num_points
    if n <= k_neighbors:
        raise ValidationError(f"need more than {k_neighbors} points, got {n}")

    pts = scene.points
    neigh = kernels.knn(pts, k_neighbors)
    normals, shape = kernels.eig_features(pts, neigh)

    mins = pts.min(axis=0)
    ext = pts.max(axis=0) - mins
    safe_ext = np.where(ext > 0.0, ext, 1.0)
    norm_xyz = np.where(ext > 0.0, (pts - mins) / safe_ext, 0.0)
    height = norm_xyz[:, 2:3]

    values = np.concatenate([norm_xyz, scene.colors, normals, height, shape], axis=1)
    return FeatureMatrix(values=values)
