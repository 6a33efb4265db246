"""Training configuration and the flat key=value config file format.

Config files are plain text, one ``key = value`` per line, ``#`` comments.
Keys are the field names of TrainConfig, PartitionParams and SynthSpec;
unknown keys are rejected so typos fail loudly. ``k_neighbors`` feeds both
feature extraction and the partitioner's k-NN graph.
"""

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .supervoxel import PartitionParams

# counter-based splittable PRNG used everywhere; recorded here so runs are
# reproducible across machines
RNG_ALGORITHM = "philox"


def make_rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def spawn_seeds(seed, n: int) -> list:
    """Derive n independent child seed sequences from a seed or sequence."""
    if isinstance(seed, np.random.SeedSequence):
        return seed.spawn(n)
    return np.random.SeedSequence(int(seed)).spawn(n)


def seed_to_u64(seed) -> int:
    """Collapse a seed or SeedSequence to a reproducible u64."""
    if isinstance(seed, np.random.SeedSequence):
        lo, hi = (int(v) for v in seed.generate_state(2, np.uint32))
        return lo | hi << 32
    return int(seed)


@dataclass(frozen=True)
class TrainConfig:
    """All pipeline hyperparameters with their defaults."""

    # self-training
    self_train_iterations: int = 5
    confidence_threshold: float = 0.9
    warm_start: bool = False
    early_stop_min_delta: float = 0.0  # 0 disables the delta-coverage early stop
    use_graph: bool = True
    use_relation: bool = True

    # unary classifier
    hidden_width: int = 64
    learning_rate: float = 1e-2
    sgd_momentum: float = 0.9
    epochs: int = 50
    batch_size: int = 256

    # relation network + memory bank
    embed_dim: int = 32
    samples_per_category: int = 20
    temperature: float = 0.07
    bank_momentum: float = 0.9
    relation_steps: int = 60

    # graph propagation
    mean_field_iterations: int = 10
    graph_knn: int = 0  # 0 keeps the graph fully connected
    lambda_color: float = 1.0
    lambda_coord: float = 1.0
    lambda_unary: float = 1.0
    lambda_embed: float = 1.0
    sigma_color: float = 1.0
    sigma_coord: float = 1.0
    sigma_unary: float = 1.0
    sigma_embed: float = 1.0

    # annotation + features
    clicks_per_thing: int = 1
    thing_fraction: float = 1.0
    k_neighbors: int = 12

    partition: PartitionParams = field(default_factory=PartitionParams)
    rng_algorithm: str = RNG_ALGORITHM

    def __post_init__(self):
        if not 0.0 < self.confidence_threshold < 1.0:
            raise ValidationError("confidence_threshold must lie in (0, 1)")
        if not 0.0 <= self.bank_momentum <= 1.0:
            raise ValidationError("bank_momentum must lie in [0, 1]")
        if not 0.0 < self.thing_fraction <= 1.0:
            raise ValidationError("thing_fraction must lie in (0, 1]")
        if self.self_train_iterations < 0:
            raise ValidationError("self_train_iterations must be non-negative")
        for name in (
            "hidden_width",
            "learning_rate",
            "epochs",
            "batch_size",
            "embed_dim",
            "samples_per_category",
            "temperature",
            "relation_steps",
            "mean_field_iterations",
            "clicks_per_thing",
            "k_neighbors",
        ):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")
        for name in (
            "lambda_color",
            "lambda_coord",
            "lambda_unary",
            "lambda_embed",
            "sgd_momentum",
            "early_stop_min_delta",
            "graph_knn",
        ):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be non-negative")
        for name in ("sigma_color", "sigma_coord", "sigma_unary", "sigma_embed"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")
        if self.rng_algorithm != RNG_ALGORITHM:
            raise ValidationError(f"unsupported rng_algorithm {self.rng_algorithm!r}")


@dataclass(frozen=True)
class SynthScalars:
    """The synth-generator knobs settable from a config file."""

    room_extent: float = 6.0
    room_height: float = 2.6
    noise_sigma: float = 0.008
    color_sigma: float = 0.05
    instance_color_jitter: float = 0.06
    color_gradient: float = 0.0  # lighting-like color drift across each object
    color_alias_fraction: float = 0.0  # fraction of things wearing another category's color
    points_scale: float = 1.0

    def __post_init__(self):
        if self.room_extent <= 0 or self.room_height <= 0 or self.points_scale <= 0:
            raise ValidationError("synth extents and points_scale must be positive")
        if (
            self.noise_sigma < 0
            or self.color_sigma < 0
            or self.instance_color_jitter < 0
            or self.color_gradient < 0
        ):
            raise ValidationError("synth noise levels must be non-negative")
        if not 0.0 <= self.color_alias_fraction <= 1.0:
            raise ValidationError("color_alias_fraction must lie in [0, 1]")


_BOOL_WORDS = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def _parse_value(raw: str, typ):
    if typ is bool:
        word = raw.strip().lower()
        if word not in _BOOL_WORDS:
            raise ValidationError(f"cannot parse boolean from {raw!r}")
        return _BOOL_WORDS[word]
    if typ is int:
        return int(raw)
    if typ is float:
        return float(raw)
    return raw.strip()


def _field_type(annotation):
    if isinstance(annotation, str):
        return {"int": int, "float": float, "bool": bool}.get(annotation, str)
    return annotation


def parse_config(path):
    """Read a config file into (TrainConfig, SynthScalars)."""
    train_fields = {f.name: _field_type(f.type) for f in fields(TrainConfig) if f.name != "partition"}
    part_fields = {f.name: _field_type(f.type) for f in fields(PartitionParams)}
    synth_fields = {f.name: _field_type(f.type) for f in fields(SynthScalars)}

    train_kw, part_kw, synth_kw = {}, {}, {}
    text = Path(path).read_text()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValidationError(f"{path}:{lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        matched = False
        try:
            if key in train_fields:
                train_kw[key] = _parse_value(raw, train_fields[key])
                matched = True
            if key in part_fields:  # k_neighbors intentionally feeds both
                part_kw[key] = _parse_value(raw, part_fields[key])
                matched = True
            if key in synth_fields:
                synth_kw[key] = _parse_value(raw, synth_fields[key])
                matched = True
        except ValueError as exc:
            raise ValidationError(f"{path}:{lineno}: {exc}") from exc
        if not matched:
            raise ValidationError(f"{path}:{lineno}: unknown config key {key!r}")

    partition = PartitionParams(**part_kw)
    train = TrainConfig(partition=partition, **train_kw)
    synth = SynthScalars(**synth_kw)
    return train, synth


def with_ablation(cfg: TrainConfig, mode: str) -> TrainConfig:
    """Derive the ablation variants: 'full', 'no_relation', 'no_graph'.

    'no_relation' removes the relation network (its prediction combiner and
    embedding kernel) but keeps graph propagation over the remaining
    channels; 'no_graph' thresholds the pooled classifier output directly.
    """
    if mode == "full":
        return replace(cfg, use_graph=True, use_relation=True)
    if mode == "no_relation":
        return replace(cfg, use_graph=True, use_relation=False, lambda_embed=0.0)
    if mode == "no_graph":
        return replace(cfg, use_graph=False, use_relation=False)
    raise ValidationError(f"unknown ablation mode {mode!r}")
