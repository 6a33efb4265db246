"""Click simulation and click-to-super-voxel label expansion.

Pseudo-label files are little-endian: magic ``OTPL`` (4 bytes), version
u32=1, M u32, then M records of label i32 (-1 = absent), confidence f32,
provenance u8 (0=absent, 1=seed, 2=propagated).
"""

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FileFormatError, ValidationError
from .scene import Scene
from .supervoxel import SuperVoxelPartition

PSEUDO_MAGIC = b"OTPL"
PSEUDO_VERSION = 1
_HEADER = struct.Struct("<4sII")
_RECORD = np.dtype([("label", "<i4"), ("confidence", "<f4"), ("provenance", "u1")])

ABSENT = 0
SEED = 1
PROPAGATED = 2
NO_LABEL = -1


@dataclass(frozen=True)
class ClickSet:
    """Simulated annotations: one (point index, category) pair per click."""

    clicks: np.ndarray
    rng_seed: int
    clicks_per_thing: int
    thing_fraction: float

    def __post_init__(self):
        c = np.asarray(self.clicks, dtype=np.int64).reshape(-1, 2)
        object.__setattr__(self, "clicks", c)
        if len(np.unique(c[:, 0])) != len(c):
            raise ValidationError("click point indices must be distinct")
        c.setflags(write=False)

    def __len__(self) -> int:
        return len(self.clicks)


@dataclass(frozen=True)
class PseudoLabels:
    """Per-super-voxel optional labels with confidence and provenance."""

    labels: np.ndarray
    confidence: np.ndarray
    provenance: np.ndarray

    def __post_init__(self):
        lab = np.asarray(self.labels, dtype=np.int32)
        conf = np.asarray(self.confidence, dtype=np.float64)
        prov = np.asarray(self.provenance, dtype=np.uint8)
        object.__setattr__(self, "labels", lab)
        object.__setattr__(self, "confidence", conf)
        object.__setattr__(self, "provenance", prov)
        if not (lab.shape == conf.shape == prov.shape) or lab.ndim != 1:
            raise ValidationError("pseudo-label arrays must be 1-D and equal length")
        if prov.max(initial=0) > PROPAGATED:
            raise ValidationError("unknown provenance value")
        absent = prov == ABSENT
        if np.any(lab[absent] != NO_LABEL) or np.any(lab[~absent] < 0):
            raise ValidationError("labels must be -1 exactly on absent entries")
        if np.any(conf[prov == SEED] != 1.0):
            raise ValidationError("seed entries must have confidence 1")
        if conf.min(initial=0.0) < 0.0 or conf.max(initial=0.0) > 1.0:
            raise ValidationError("confidence must lie in [0, 1]")
        for arr in (lab, conf, prov):
            arr.setflags(write=False)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def labeled_mask(self) -> np.ndarray:
        return self.provenance != ABSENT

    @property
    def coverage(self) -> float:
        return float(self.labeled_mask.mean())


def empty_pseudo_labels(m: int) -> PseudoLabels:
    return PseudoLabels(
        labels=np.full(m, NO_LABEL, np.int32),
        confidence=np.zeros(m),
        provenance=np.zeros(m, np.uint8),
    )


def simulate_clicks(
    scene: Scene, seed: int, clicks_per_thing: int = 1, thing_fraction: float = 1.0
) -> ClickSet:
    """Pick clicked points: a fraction of instances, k random points in each.

    Instances are enumerated in ascending id. The Philox counter-based PRNG
    seeded with ``seed`` first draws which instances get annotated, then draws
    ``clicks_per_thing`` distinct points uniformly within each (all points of
    an instance are equally likely). An instance with fewer points than
    ``clicks_per_thing`` contributes all of its points.
    """
    if clicks_per_thing < 1:
        raise ValidationError("clicks_per_thing must be positive")
    if not 0.0 < thing_fraction <= 1.0:
        raise ValidationError("thing_fraction must lie in (0, 1]")
    inst_ids = np.unique(scene.gt_instance)
    inst_ids = inst_ids[inst_ids >= 0]
    if len(inst_ids) == 0:
        raise ValidationError("scene has no instances to annotate")

    rng = np.random.Generator(np.random.Philox(seed))
    n_selected = math.ceil(thing_fraction * len(inst_ids))
    selected = rng.choice(len(inst_ids), size=n_selected, replace=False)
    selected = np.sort(selected)

    clicks = []
    for idx in selected:
        members = np.flatnonzero(scene.gt_instance == inst_ids[idx])
        take = min(clicks_per_thing, len(members))
        picks = rng.choice(len(members), size=take, replace=False)
        for p in members[np.sort(picks)]:
            clicks.append((int(p), int(scene.gt_semantic[p])))
    return ClickSet(
        clicks=np.array(clicks, dtype=np.int64).reshape(-1, 2),
        rng_seed=int(seed),
        clicks_per_thing=clicks_per_thing,
        thing_fraction=thing_fraction,
    )


def expand_clicks(clicks: ClickSet, part: SuperVoxelPartition):
    """Spread each click over its containing super-voxel as a seed label.

    Returns ``(labels, conflicts)`` where ``conflicts`` counts super-voxels
    that received clicks of different categories and were therefore dropped
    to absent.
    """
    m = part.num_supervoxels
    labels = np.full(m, NO_LABEL, np.int32)
    conf = np.zeros(m)
    prov = np.zeros(m, np.uint8)
    conflicted = np.zeros(m, bool)
    for p, cat in clicks.clicks:
        if p < 0 or p >= part.num_points:
            raise ValidationError(f"click index {p} outside the partition")
        sv = part.assignment[p]
        if conflicted[sv]:
            continue
        if prov[sv] == ABSENT:
            labels[sv] = cat
            conf[sv] = 1.0
            prov[sv] = SEED
        elif labels[sv] != cat:
            conflicted[sv] = True
            labels[sv] = NO_LABEL
            conf[sv] = 0.0
            prov[sv] = ABSENT
    n_conflicts = int(conflicted.sum())
    return PseudoLabels(labels=labels, confidence=conf, provenance=prov), n_conflicts


def save_pseudo_labels(labels: PseudoLabels, path) -> None:
    rec = np.empty(len(labels), dtype=_RECORD)
    rec["label"] = labels.labels
    rec["confidence"] = labels.confidence.astype(np.float32)
    rec["provenance"] = labels.provenance
    header = _HEADER.pack(PSEUDO_MAGIC, PSEUDO_VERSION, len(labels))
    Path(path).write_bytes(header + rec.tobytes())


def load_pseudo_labels(path) -> PseudoLabels:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FileFormatError(f"{path}: truncated header")
    magic, version, m = _HEADER.unpack_from(data)
    if magic != PSEUDO_MAGIC:
        raise FileFormatError(f"{path}: bad magic {magic!r}")
    if version != PSEUDO_VERSION:
        raise FileFormatError(f"{path}: unsupported version {version}")
    payload = data[_HEADER.size :]
    expected = m * _RECORD.itemsize
    if len(payload) != expected:
        raise FileFormatError(f"{path}: payload is {len(payload)} bytes, expected {expected}")
    rec = np.frombuffer(payload, dtype=_RECORD, count=m)
    return PseudoLabels(
        labels=rec["label"].astype(np.int32),
        confidence=rec["confidence"].astype(np.float64),
        provenance=rec["provenance"].copy(),
    )
