"""Super-voxel partitioning and per-super-voxel pooling.

Partition files are little-endian: magic ``OTSP`` (4 bytes), version u32=1,
N u32, then N u32 super-voxel ids.
"""

import math
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from . import kernels
from .errors import FileFormatError, ValidationError
from .features import FeatureMatrix
from .scene import Scene

PARTITION_MAGIC = b"OTSP"
PARTITION_VERSION = 1
_HEADER = struct.Struct("<4sII")


@dataclass(frozen=True)
class PartitionParams:
    """Thresholds for the region-growing over-segmentation."""

    k_neighbors: int = 12
    normal_angle_max: float = 0.35
    color_dist_max: float = 0.25
    min_size: int = 10
    max_size: int = 5000

    def __post_init__(self):
        if self.k_neighbors < 1:
            raise ValidationError("k_neighbors must be positive")
        if not 0.0 < self.normal_angle_max < math.pi / 2:
            raise ValidationError("normal_angle_max must lie in (0, pi/2)")
        if not 0.0 <= self.color_dist_max <= math.sqrt(3.0):
            raise ValidationError("color_dist_max must lie in [0, sqrt(3)]")
        if self.min_size < 1 or self.max_size < 1 or self.min_size > self.max_size:
            raise ValidationError("need 1 <= min_size <= max_size")


@dataclass(frozen=True)
class SuperVoxelPartition:
    """Disjoint assignment of every point to one of M super-voxels.

    Ids are contiguous 0..M-1 and every super-voxel is non-empty.
    """

    assignment: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.assignment, dtype=np.int32)
        object.__setattr__(self, "assignment", a)
        if a.ndim != 1 or len(a) < 1:
            raise ValidationError("assignment must be a non-empty 1-D array")
        if a.min() < 0:
            raise ValidationError("super-voxel ids must be non-negative")
        m = int(a.max()) + 1
        counts = np.bincount(a, minlength=m)
        if np.any(counts == 0):
            raise ValidationError("super-voxel ids must be contiguous 0..M-1")
        a.setflags(write=False)

    @property
    def num_points(self) -> int:
        return len(self.assignment)

    @property
    def num_supervoxels(self) -> int:
        return int(self.assignment.max()) + 1

    @cached_property
    def sizes(self) -> np.ndarray:
        s = np.bincount(self.assignment, minlength=self.num_supervoxels)
        s.setflags(write=False)
        return s

    @cached_property
    def member_lists(self) -> tuple:
        order = np.argsort(self.assignment, kind="stable")
        bounds = np.cumsum(self.sizes)[:-1]
        return tuple(np.split(order, bounds))


def compact_ids(ids: np.ndarray) -> np.ndarray:
    """Relabel arbitrary ids to 0..M-1 in order of first appearance."""
    ids = np.asarray(ids)
    uniq, first, inv = np.unique(ids, return_index=True, return_inverse=True)
    order = np.argsort(first, kind="stable")
    rank = np.empty(len(uniq), dtype=np.int64)
    rank[order] = np.arange(len(uniq))
    return rank[inv].astype(np.int32)


def partition_region_growing(
    scene: Scene, features: FeatureMatrix, params: PartitionParams
) -> SuperVoxelPartition:
    """Deterministic BFS region growing over the k-NN graph.

    Seeds are taken in ascending point index; a neighbor joins while the
    region's running mean normal and mean color stay within the thresholds
    and the region is below max_size. Undersized regions are merged into the
    adjacent region with the nearest mean color.
    """
    if features.num_points != scene.num_points:
        raise ValidationError("features were not extracted from this scene")
    neigh = kernels.knn(scene.points, params.k_neighbors)
    raw = kernels.region_grow(
        neigh,
        features.normals,
        scene.colors,
        math.cos(params.normal_angle_max),
        params.color_dist_max,
        params.min_size,
        params.max_size,
    )
    return SuperVoxelPartition(assignment=compact_ids(raw))


def save_partition(part: SuperVoxelPartition, path) -> None:
    header = _HEADER.pack(PARTITION_MAGIC, PARTITION_VERSION, part.num_points)
    Path(path).write_bytes(header + part.assignment.astype("<u4").tobytes())


def load_partition(path, scene: Scene) -> SuperVoxelPartition:
    """Read an OTSP file and re-compact ids by order of first appearance."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FileFormatError(f"{path}: truncated header")
    magic, version, n = _HEADER.unpack_from(data)
    if magic != PARTITION_MAGIC:
        raise FileFormatError(f"{path}: bad magic {magic!r}")
    if version != PARTITION_VERSION:
        raise FileFormatError(f"{path}: unsupported version {version}")
    payload = data[_HEADER.size :]
    if len(payload) != 4 * n:
        raise FileFormatError(f"{path}: payload is {len(payload)} bytes, expected {4 * n}")
    if n != scene.num_points:
        raise ValidationError(
            f"partition has {n} ids but scene has {scene.num_points} points"
        )
    ids = np.frombuffer(payload, dtype="<u4", count=n)
    return SuperVoxelPartition(assignment=compact_ids(ids))


def pool_distribution(per_point: np.ndarray, part: SuperVoxelPartition) -> np.ndarray:
    """Mean-pool a row-stochastic N x C matrix to M x C over super-voxels."""
    per_point = np.asarray(per_point, dtype=np.float64)
    if per_point.ndim != 2 or per_point.shape[0] != part.num_points:
        raise ValidationError("per-point matrix must be (N, C)")
    sums = per_point.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > 1e-6) or per_point.min() < -1e-12:
        raise ValidationError("input rows must be stochastic (non-negative, sum 1)")
    return pool_vectors(per_point, part)


def pool_vectors(per_point: np.ndarray, part: SuperVoxelPartition) -> np.ndarray:
    """Mean-pool an arbitrary N x D matrix to M x D over super-voxels."""
    per_point = np.asarray(per_point, dtype=np.float64)
    if per_point.ndim != 2 or per_point.shape[0] != part.num_points:
        raise ValidationError("per-point matrix must be (N, D)")
    if not np.all(np.isfinite(per_point)):
        raise ValidationError("per-point matrix must be finite")
    m = part.num_supervoxels
    out = np.zeros((m, per_point.shape[1]))
    np.add.at(out, part.assignment, per_point)
    out /= part.sizes[:, None]
    return out
