"""Scene data model and bit-exact binary scene I/O.

Scene files are little-endian: magic ``OTOC`` (4 bytes), version u32=1,
N u32, C u32, then N packed records of x,y,z f32 (12 bytes), r,g,b u8
(3 bytes), semantic i32, instance i32 (8 bytes) -- 23 bytes per record.
"""

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FileFormatError, ValidationError

SCENE_MAGIC = b"OTOC"
SCENE_VERSION = 1
UNLABELED = -1
NO_INSTANCE = -1

_HEADER = struct.Struct("<4sIII")
_RECORD = np.dtype(
    [("xyz", "<f4", (3,)), ("rgb", "u1", (3,)), ("semantic", "<i4"), ("instance", "<i4")]
)
assert _RECORD.itemsize == 23


@dataclass(frozen=True)
class Scene:
    """An annotated point cloud: coordinates, colors, and ground truth.

    Colors are RGB in [0,1]. ``gt_semantic`` holds category ids in
    ``[0, num_categories)`` or UNLABELED (-1); ``gt_instance`` holds instance
    ids or NO_INSTANCE (-1). Arrays are frozen after construction so scenes
    can be shared across threads.
    """

    points: np.ndarray
    colors: np.ndarray
    gt_semantic: np.ndarray
    gt_instance: np.ndarray
    num_categories: int

    def __post_init__(self):
        object.__setattr__(self, "points", np.asarray(self.points, dtype=np.float64))
        object.__setattr__(self, "colors", np.asarray(self.colors, dtype=np.float64))
        object.__setattr__(
            self, "gt_semantic", np.asarray(self.gt_semantic, dtype=np.int32)
        )
        object.__setattr__(
            self, "gt_instance", np.asarray(self.gt_instance, dtype=np.int32)
        )
        self._validate()
        for arr in (self.points, self.colors, self.gt_semantic, self.gt_instance):
            arr.setflags(write=False)

    def _validate(self):
        n = len(self.points)
        if n < 1:
            raise ValidationError("scene must contain at least one point")
        if self.points.shape != (n, 3):
            raise ValidationError(f"points must be (N,3), got {self.points.shape}")
        if self.colors.shape != (n, 3):
            raise ValidationError("colors must be (N,3) and match points")
        if self.gt_semantic.shape != (n,) or self.gt_instance.shape != (n,):
            raise ValidationError("label arrays must be (N,) and match points")
        if self.num_categories < 1:
            raise ValidationError("num_categories must be positive")
        if not np.all(np.isfinite(self.points)):
            raise ValidationError("coordinates must be finite")
        if self.colors.min(initial=0.0) < 0.0 or self.colors.max(initial=0.0) > 1.0:
            raise ValidationError("colors must lie in [0, 1]")
        sem = self.gt_semantic
        if sem.min(initial=0) < UNLABELED or sem.max(initial=UNLABELED) >= self.num_categories:
            raise ValidationError("semantic label out of range")
        if self.gt_instance.min(initial=0) < NO_INSTANCE:
            raise ValidationError("instance id out of range")
        if np.any((self.gt_instance >= 0) & (sem == UNLABELED)):
            raise ValidationError("points with an instance id must carry a semantic label")

    @property
    def num_points(self) -> int:
        return len(self.points)


def load_scene(path) -> Scene:
    """Read an OTOC scene file; round-trips bit-exactly with save_scene."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FileFormatError(f"{path}: truncated header")
    magic, version, n, c = _HEADER.unpack_from(data)
    if magic != SCENE_MAGIC:
        raise FileFormatError(f"{path}: bad magic {magic!r}")
    if version != SCENE_VERSION:
        raise FileFormatError(f"{path}: unsupported version {version}")
    payload = data[_HEADER.size :]
    expected = n * _RECORD.itemsize
    if len(payload) != expected:
        raise FileFormatError(
            f"{path}: payload is {len(payload)} bytes, expected {expected}"
        )
    rec = np.frombuffer(payload, dtype=_RECORD, count=n)
    return Scene(
        points=rec["xyz"].astype(np.float64),
        colors=rec["rgb"].astype(np.float64) / 255.0,
        gt_semantic=rec["semantic"].astype(np.int32),
        gt_instance=rec["instance"].astype(np.int32),
        num_categories=int(c),
    )


def save_scene(scene: Scene, path) -> None:
    """Write ``scene`` in the OTOC layout, byte for byte."""
    n = scene.num_points
    rec = np.empty(n, dtype=_RECORD)
    rec["xyz"] = scene.points.astype(np.float32)
    rec["rgb"] = np.clip(np.rint(scene.colors * 255.0), 0, 255).astype(np.uint8)
    rec["semantic"] = scene.gt_semantic
    rec["instance"] = scene.gt_instance
    header = _HEADER.pack(SCENE_MAGIC, SCENE_VERSION, n, scene.num_categories)
    Path(path).write_bytes(header + rec.tobytes())
