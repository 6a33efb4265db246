"""Procedural indoor-like labeled scenes for desk-scale experiments.

Six categories: floor plane, wall planes, table boxes, chair boxes, cabinet
boxes, and clutter spheres. Every primitive is one instance; category colors
deliberately overlap so that color alone is a weak classifier and geometry
has to carry part of the separation.
"""

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import SynthScalars, make_rng
from .errors import ValidationError
from .scene import Scene, save_scene

FLOOR, WALL, TABLE, CHAIR, CABINET, CLUTTER = range(6)

CATEGORY_NAMES = ("floor", "wall", "table", "chair", "cabinet", "clutter")

# per category: (objects min, max), (points per object min, max), base RGB
_DEFAULT_OBJECTS = ((1, 1), (2, 3), (1, 3), (2, 5), (1, 3), (2, 6))
_DEFAULT_POINTS = ((2200, 3200), (1000, 1600), (450, 900), (180, 420), (320, 700), (120, 320))
_DEFAULT_COLORS = (
    (0.46, 0.43, 0.38),
    (0.56, 0.54, 0.50),
    (0.46, 0.28, 0.17),
    (0.58, 0.44, 0.30),
    (0.28, 0.23, 0.20),
    (0.38, 0.46, 0.56),
)


@dataclass(frozen=True)
class SynthSpec:
    """Everything the generator needs; deterministic given ``seed``."""

    seed: int = 0
    num_categories: int = 6
    objects_per_category: tuple = _DEFAULT_OBJECTS
    points_per_object: tuple = _DEFAULT_POINTS
    color_means: tuple = _DEFAULT_COLORS
    color_sigmas: tuple = (0.05,) * 6
    scalars: SynthScalars = field(default_factory=SynthScalars)

    def __post_init__(self):
        if not 1 <= self.num_categories <= len(self.objects_per_category):
            raise ValidationError("num_categories out of range for the category tables")
        for lo, hi in self.objects_per_category:
            if lo < 0 or hi < lo:
                raise ValidationError("objects_per_category ranges must be non-empty")
        for lo, hi in self.points_per_object:
            if lo < 1 or hi < lo:
                raise ValidationError("points_per_object ranges must be non-empty")


def _sample_box_surface(rng, n, center, half, with_bottom=False):
    """Uniform-by-area points on an axis-aligned box (bottom face optional)."""
    hx, hy, hz = half
    faces = [
        (2, +1, 4.0 * hx * hy),  # top
        (0, -1, 4.0 * hy * hz),
        (0, +1, 4.0 * hy * hz),
        (1, -1, 4.0 * hx * hz),
        (1, +1, 4.0 * hx * hz),
    ]
    if with_bottom:
        faces.append((2, -1, 4.0 * hx * hy))
    areas = np.array([f[2] for f in faces])
    pick = rng.choice(len(faces), size=n, p=areas / areas.sum())
    u = rng.uniform(-1.0, 1.0, size=(n, 2))
    pts = np.empty((n, 3))
    for i in range(n):
        axis, sign, _ = faces[pick[i]]
        others = [a for a in range(3) if a != axis]
        pts[i, axis] = sign * half[axis]
        pts[i, others[0]] = u[i, 0] * half[others[0]]
        pts[i, others[1]] = u[i, 1] * half[others[1]]
    return pts + np.asarray(center)


def _sample_sphere_surface(rng, n, center, radius):
    v = rng.normal(size=(n, 3))
    v /= np.maximum(np.sqrt((v * v).sum(axis=1, keepdims=True)), 1e-12)
    return center + radius * v


def _yaw(pts, angle):
    c, s = math.cos(angle), math.sin(angle)
    out = pts.copy()
    out[:, 0] = c * pts[:, 0] - s * pts[:, 1]
    out[:, 1] = s * pts[:, 0] + c * pts[:, 1]
    return out


def _place(rng, placed, margin, extent, radius, attempts=60):
    """Rejection-sample an (x, y) keeping ``radius`` clear of other objects."""
    for _ in range(attempts):
        xy = rng.uniform(margin + radius, extent - margin - radius, size=2)
        if all(np.hypot(*(xy - q)) >= radius + r for q, r in placed):
            placed.append((xy, radius))
            return xy
    placed.append((xy, radius))
    return xy  # crowded room: accept the last draw


def generate_scene(spec: SynthSpec) -> Scene:
    """One labeled scene; instance ids are dense in creation order."""
    rng = make_rng(spec.seed)
    sc = spec.scalars
    ext, height = sc.room_extent, sc.room_height
    pts_scale = sc.points_scale

    all_pts, all_cols, all_sem, all_inst = [], [], [], []
    instance = 0
    placed = []

    def npoints(cat):
        lo, hi = spec.points_per_object[cat]
        n = int(rng.integers(lo, hi + 1) * pts_scale)
        return max(n, 1)

    def add(cat, pts):
        nonlocal instance
        n = len(pts)
        base = np.asarray(spec.color_means[cat])
        if cat >= TABLE and sc.color_alias_fraction > 0:
            # some things wear another category's color; geometry must disambiguate
            if rng.uniform() < sc.color_alias_fraction:
                others = [c for c in range(spec.num_categories) if c != cat]
                base = np.asarray(spec.color_means[others[rng.integers(0, len(others))]])
        base = base + rng.normal(0.0, sc.instance_color_jitter, size=3)
        cols = base + rng.normal(0.0, spec.color_sigmas[cat], size=(n, 3))
        if sc.color_gradient > 0:
            # lighting-like drift: color shifts smoothly along one spatial axis
            space_dir = rng.normal(size=3)
            space_dir /= max(np.sqrt(space_dir @ space_dir), 1e-12)
            color_dir = rng.normal(size=3)
            color_dir /= max(np.sqrt(color_dir @ color_dir), 1e-12)
            t = pts @ space_dir
            span = t.max() - t.min()
            if span > 1e-9:
                t = (t - t.min()) / span - 0.5
                cols = cols + sc.color_gradient * t[:, None] * color_dir
        pts = pts + rng.normal(0.0, sc.noise_sigma, size=(n, 3))
        all_pts.append(pts)
        all_cols.append(np.clip(cols, 0.0, 1.0))
        all_sem.append(np.full(n, cat, np.int32))
        all_inst.append(np.full(n, instance, np.int32))
        instance += 1

    for cat in range(spec.num_categories):
        lo, hi = spec.objects_per_category[cat]
        count = int(rng.integers(lo, hi + 1))
        if cat == WALL:  # distinct sides, else coplanar walls merge
            count = min(count, 4)
            wall_sides = rng.permutation(4)[:count]
        for obj in range(count):
            n = npoints(cat)
            if cat == FLOOR:
                xy = rng.uniform(0.0, ext, size=(n, 2))
                pts = np.column_stack([xy, np.zeros(n)])
            elif cat == WALL:
                side = int(wall_sides[obj])
                along = rng.uniform(0.0, ext, size=n)
                up = rng.uniform(0.0, height, size=n)
                if side == 0:
                    pts = np.column_stack([np.zeros(n), along, up])
                elif side == 1:
                    pts = np.column_stack([np.full(n, ext), along, up])
                elif side == 2:
                    pts = np.column_stack([along, np.zeros(n), up])
                else:
                    pts = np.column_stack([along, np.full(n, ext), up])
            elif cat in (TABLE, CHAIR, CABINET):
                if cat == TABLE:
                    half = np.array(
                        [rng.uniform(0.45, 0.7), rng.uniform(0.3, 0.5), rng.uniform(0.32, 0.4)]
                    )
                elif cat == CHAIR:
                    half = np.array(
                        [rng.uniform(0.18, 0.26), rng.uniform(0.18, 0.26), rng.uniform(0.21, 0.3)]
                    )
                else:
                    half = np.array(
                        [rng.uniform(0.3, 0.5), rng.uniform(0.15, 0.25), rng.uniform(0.8, 1.0)]
                    )
                xy = _place(rng, placed, 0.4, ext, float(np.hypot(half[0], half[1])))
                pts = _sample_box_surface(rng, n, (0.0, 0.0, half[2]), half)
                pts = _yaw(pts, rng.uniform(0.0, math.pi))
                pts[:, 0] += xy[0]
                pts[:, 1] += xy[1]
            else:  # CLUTTER sphere
                r = rng.uniform(0.14, 0.3)
                xy = _place(rng, placed, 0.4, ext, float(r))
                pts = _sample_sphere_surface(rng, n, np.array([xy[0], xy[1], r + 0.06]), r)
            add(cat, pts)

    if instance == 0:
        raise ValidationError("spec generated no objects")
    return Scene(
        points=np.concatenate(all_pts),
        colors=np.concatenate(all_cols),
        gt_semantic=np.concatenate(all_sem),
        gt_instance=np.concatenate(all_inst),
        num_categories=spec.num_categories,
    )


def generate_corpus(spec: SynthSpec, count: int, out_dir) -> list:
    """Write ``count`` scenes with seeds spec.seed + 0..count-1."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(count):
        scene = generate_scene(
            SynthSpec(
                seed=spec.seed + i,
                num_categories=spec.num_categories,
                objects_per_category=spec.objects_per_category,
                points_per_object=spec.points_per_object,
                color_means=spec.color_means,
                color_sigmas=spec.color_sigmas,
                scalars=spec.scalars,
            )
        )
        path = out_dir / f"scene_{i:04d}.otoc"
        save_scene(scene, path)
        paths.append(path)
    return paths
