"""Iterative self-training: alternate network training and label propagation.

Each cycle trains the classifier (and the relation network) on the current
pseudo labels, propagates the combined predictions over every training
scene's super-voxel graph, and rebuilds the pseudo labels from scratch as
seeds plus confident propagated labels. Seeds are immutable across cycles.
"""

import warnings
from dataclasses import dataclass, replace

import numpy as np

from . import nets
from .annotate import (
    PROPAGATED,
    SEED,
    PseudoLabels,
    expand_clicks,
    simulate_clicks,
)
from .config import TrainConfig, seed_to_u64, spawn_seeds
from .errors import ValidationError
from .features import FeatureMatrix, extract_features
from .graph import MarginalField, PairwiseParams, build_graph, map_labels, mean_field
from .metrics import miou
from .scene import Scene
from .supervoxel import (
    SuperVoxelPartition,
    partition_region_growing,
    pool_distribution,
)


@dataclass(frozen=True)
class SceneBundle:
    """A scene plus its precomputed features, partition and seed labels."""

    scene: Scene
    features: FeatureMatrix
    partition: SuperVoxelPartition
    seeds: PseudoLabels = None


@dataclass(frozen=True)
class IterationMetrics:
    iteration: int
    coverage: float
    loss_unary: float
    loss_relation: float = None
    miou: float = None


@dataclass
class SelfTrainState:
    iteration: int
    labels: list
    unary: nets.MlpModel = None
    relation: nets.MlpModel = None
    bank: nets.MemoryBank = None
    history: list = None

    def __post_init__(self):
        if self.history is None:
            self.history = []


@dataclass(frozen=True)
class SelfTrainResult:
    unary: nets.MlpModel
    relation: nets.MlpModel
    bank: nets.MemoryBank
    history: list
    final_labels: list
    num_categories: int
    seed_labels: list = None


def prepare_bundle(scene: Scene, cfg: TrainConfig, partition=None) -> SceneBundle:
    feats = extract_features(scene, cfg.k_neighbors)
    if partition is None:
        partition = partition_region_growing(scene, feats, cfg.partition)
    return SceneBundle(scene=scene, features=feats, partition=partition)


def annotate_bundles(bundles, cfg: TrainConfig, seed):
    """Simulate clicks per scene and expand them to seed labels."""
    out = []
    total_conflicts = 0
    for child, bundle in zip(spawn_seeds(seed, len(bundles)), bundles):
        clicks = simulate_clicks(
            bundle.scene,
            seed_to_u64(child),
            clicks_per_thing=cfg.clicks_per_thing,
            thing_fraction=cfg.thing_fraction,
        )
        seeds, conflicts = expand_clicks(clicks, bundle.partition)
        total_conflicts += conflicts
        out.append(replace(bundle, seeds=seeds))
    return out, total_conflicts


def _merge_for_training(bundles, labels_list):
    """Concatenate scenes into one virtual partition for joint training."""
    feats = np.concatenate([b.features.values for b in bundles])
    offset = 0
    assign_parts, label_parts, conf_parts, prov_parts = [], [], [], []
    for bundle, labels in zip(bundles, labels_list):
        assign_parts.append(bundle.partition.assignment.astype(np.int64) + offset)
        offset += bundle.partition.num_supervoxels
        label_parts.append(labels.labels)
        conf_parts.append(labels.confidence)
        prov_parts.append(labels.provenance)
    merged_part = SuperVoxelPartition(assignment=np.concatenate(assign_parts))
    merged_labels = PseudoLabels(
        labels=np.concatenate(label_parts),
        confidence=np.concatenate(conf_parts),
        provenance=np.concatenate(prov_parts),
    )
    return FeatureMatrix(values=feats), merged_labels, merged_part


def _pairwise_params(cfg: TrainConfig) -> PairwiseParams:
    return PairwiseParams(
        lambda_color=cfg.lambda_color,
        lambda_coord=cfg.lambda_coord,
        lambda_unary=cfg.lambda_unary,
        lambda_embed=cfg.lambda_embed if cfg.use_relation else 0.0,
        sigma_color=cfg.sigma_color,
        sigma_coord=cfg.sigma_coord,
        sigma_unary=cfg.sigma_unary,
        sigma_embed=cfg.sigma_embed,
    )


def propagate_scene(bundle: SceneBundle, unary, relation, bank, cfg: TrainConfig):
    """Per-super-voxel label distribution after combination and propagation."""
    probs_pt, u_pt = nets.predict_unary(unary, bundle.features)
    sv_probs = pool_distribution(probs_pt, bundle.partition)
    if cfg.use_relation and relation is not None:
        f = nets.pooled_embeddings(relation, bundle.features, bundle.partition)
        rel = nets.relation_probs(f, bank)
        dist = nets.combine_probs(sv_probs, rel)
    else:
        f = np.zeros((bundle.partition.num_supervoxels, cfg.embed_dim))
        dist = sv_probs
    if not cfg.use_graph:
        return dist
    graph = build_graph(
        bundle.partition, bundle.scene, u_pt, f, _pairwise_params(cfg), knn_truncate=cfg.graph_knn
    )
    return mean_field(graph, dist, cfg.mean_field_iterations).q


def update_pseudo_labels(q: np.ndarray, threshold: float, seeds: PseudoLabels) -> PseudoLabels:
    """Seeds stay; other super-voxels get the argmax label iff it clears T.

    Labels are rebuilt from scratch, so stale propagated entries never carry
    over. ``threshold`` may exceed 1 (then nothing propagates).
    """
    if threshold <= 0:
        raise ValidationError("threshold must be positive")
    q = np.asarray(q, dtype=np.float64)
    if q.shape[0] != len(seeds):
        raise ValidationError("marginals and seeds disagree on super-voxel count")
    labels = seeds.labels.copy()
    conf = seeds.confidence.copy()
    prov = seeds.provenance.copy()
    arg = q.argmax(axis=1)
    top = q[np.arange(len(arg)), arg]
    nonseed = prov != SEED
    passing = nonseed & (top >= threshold)
    labels[passing] = arg[passing]
    conf[passing] = top[passing]
    prov[passing] = PROPAGATED
    failing = nonseed & ~passing
    labels[failing] = -1
    conf[failing] = 0.0
    prov[failing] = 0
    return PseudoLabels(labels=labels, confidence=conf, provenance=prov)


def _coverage(labels_list) -> float:
    labeled = sum(int(lab.labeled_mask.sum()) for lab in labels_list)
    total = sum(len(lab) for lab in labels_list)
    return labeled / total


def run_iteration(state: SelfTrainState, bundles, num_categories, cfg: TrainConfig, seed):
    """One train/propagate cycle; returns the advanced state."""
    unary_seed, relation_seed, bank_seed = spawn_seeds(seed, 3)
    feats, merged_labels, merged_part = _merge_for_training(bundles, state.labels)

    if cfg.warm_start and state.unary is not None:
        point_labels = nets.point_labels_from_pseudo(merged_labels, merged_part)
        mask = point_labels >= 0
        if not mask.any():
            raise ValidationError("empty supervision: no labeled points to train on")
        unary, loss_u = nets._fit_classifier(
            state.unary, feats.values[mask], point_labels[mask], cfg, unary_seed
        )
    else:
        unary, loss_u = nets.train_unary(
            feats, merged_labels, merged_part, num_categories, cfg, unary_seed
        )

    relation, bank, loss_r = None, None, None
    if cfg.use_relation:
        if cfg.warm_start and state.bank is not None:
            bank0 = state.bank
        else:
            bank0 = nets.init_memory_bank(num_categories, cfg, bank_seed)
        relation, bank, loss_r = nets.train_relation(
            feats, merged_labels, merged_part, bank0, cfg, relation_seed
        )

    new_labels = []
    for bundle, _old in zip(bundles, state.labels):
        q = propagate_scene(bundle, unary, relation, bank, cfg)
        new_labels.append(update_pseudo_labels(q, cfg.confidence_threshold, bundle.seeds))

    n_propagated = sum(int((lab.provenance == PROPAGATED).sum()) for lab in new_labels)
    if n_propagated == 0:
        warnings.warn("no propagated labels passed the confidence gate", stacklevel=2)

    metrics = IterationMetrics(
        iteration=state.iteration + 1,
        coverage=_coverage(new_labels),
        loss_unary=loss_u,
        loss_relation=loss_r,
    )
    return SelfTrainState(
        iteration=state.iteration + 1,
        labels=new_labels,
        unary=unary,
        relation=relation,
        bank=bank,
        history=state.history + [metrics],
    )


def predict_points(bundle: SceneBundle, unary, relation, bank, cfg, no_propagation=False):
    """Per-point predicted categories for one scene.

    With ``no_propagation`` the classifier's per-point argmax is used alone
    (graph propagation and relation network disabled at inference).
    """
    if no_propagation:
        probs_pt, _ = nets.predict_unary(unary, bundle.features)
        return probs_pt.argmax(axis=1).astype(np.int32)
    q = propagate_scene(bundle, unary, relation, bank, cfg)
    sv_labels, _conf = map_labels(MarginalField(q=q))
    return sv_labels[bundle.partition.assignment]


def _eval_miou(eval_bundles, unary, relation, bank, cfg, num_categories, no_propagation=False):
    if not eval_bundles:
        return None
    preds, gts = [], []
    for bundle in eval_bundles:
        preds.append(predict_points(bundle, unary, relation, bank, cfg, no_propagation))
        gts.append(bundle.scene.gt_semantic)
    return miou(np.concatenate(preds), np.concatenate(gts), num_categories).miou


def run(cfg: TrainConfig, train_scenes, eval_scenes, seed) -> SelfTrainResult:
    """Full pipeline: clicks -> seed labels -> iterated train/propagate.

    ``train_scenes`` and ``eval_scenes`` are Scene or SceneBundle sequences;
    evaluation mIoU is reported per iteration when ground truth is present.
    """
    if len(train_scenes) == 0:
        raise ValidationError("need at least one training scene")
    num_categories = (train_scenes[0].scene if isinstance(train_scenes[0], SceneBundle) else train_scenes[0]).num_categories

    def as_bundle(s):
        return s if isinstance(s, SceneBundle) else prepare_bundle(s, cfg)

    bundles = [as_bundle(s) for s in train_scenes]
    eval_bundles = [as_bundle(s) for s in eval_scenes]
    click_seed, train_seed = spawn_seeds(seed, 2)
    bundles, _conflicts = annotate_bundles(bundles, cfg, click_seed)
    for b in bundles:
        if b.scene.num_categories != num_categories:
            raise ValidationError("scenes disagree on num_categories")

    state = SelfTrainState(iteration=0, labels=[b.seeds for b in bundles])
    iter_seeds = spawn_seeds(train_seed, max(cfg.self_train_iterations, 1))

    if cfg.self_train_iterations == 0:
        # train once on the seed labels and evaluate, without any propagation
        unary_seed, relation_seed, bank_seed = spawn_seeds(iter_seeds[0], 3)
        feats, merged_labels, merged_part = _merge_for_training(bundles, state.labels)
        unary, loss_u = nets.train_unary(
            feats, merged_labels, merged_part, num_categories, cfg, unary_seed
        )
        relation, bank, loss_r = None, None, None
        if cfg.use_relation:
            bank0 = nets.init_memory_bank(num_categories, cfg, bank_seed)
            relation, bank, loss_r = nets.train_relation(
                feats, merged_labels, merged_part, bank0, cfg, relation_seed
            )
        row = IterationMetrics(
            iteration=0,
            coverage=_coverage(state.labels),
            loss_unary=loss_u,
            loss_relation=loss_r,
            miou=_eval_miou(eval_bundles, unary, relation, bank, cfg, num_categories),
        )
        return SelfTrainResult(
            unary=unary,
            relation=relation,
            bank=bank,
            history=[row],
            final_labels=state.labels,
            num_categories=num_categories,
            seed_labels=[b.seeds for b in bundles],
        )

    prev_coverage = None
    for t in range(cfg.self_train_iterations):
        state = run_iteration(state, bundles, num_categories, cfg, iter_seeds[t])
        row = state.history[-1]
        score = _eval_miou(eval_bundles, state.unary, state.relation, state.bank, cfg, num_categories)
        state.history[-1] = IterationMetrics(
            iteration=row.iteration,
            coverage=row.coverage,
            loss_unary=row.loss_unary,
            loss_relation=row.loss_relation,
            miou=score,
        )
        if (
            cfg.early_stop_min_delta > 0
            and prev_coverage is not None
            and abs(row.coverage - prev_coverage) < cfg.early_stop_min_delta
        ):
            break
        prev_coverage = row.coverage

    return SelfTrainResult(
        unary=state.unary,
        relation=state.relation,
        bank=state.bank,
        history=state.history,
        final_labels=state.labels,
        num_categories=num_categories,
        seed_labels=[b.seeds for b in bundles],
    )


def run_fully_supervised(cfg: TrainConfig, train_scenes, eval_scenes, seed) -> SelfTrainResult:
    """Upper-bound baseline: train the classifier on every ground-truth label.

    Inference is the classifier's per-point argmax (no propagation), so the
    comparison against the click-supervised pipeline is propagation-free on
    this side.
    """

    def as_bundle(s):
        if isinstance(s, SceneBundle):
            return s
        feats = extract_features(s, cfg.k_neighbors)
        return SceneBundle(
            scene=s,
            features=feats,
            partition=SuperVoxelPartition(assignment=np.zeros(s.num_points, np.int32)),
        )

    bundles = [as_bundle(s) for s in train_scenes]
    eval_bundles = [as_bundle(s) for s in eval_scenes]
    num_categories = bundles[0].scene.num_categories
    x = np.concatenate([b.features.values for b in bundles])
    y = np.concatenate([b.scene.gt_semantic for b in bundles])
    mask = y >= 0
    unary, loss = nets.train_unary_points(x[mask], y[mask], num_categories, cfg, seed)
    score = _eval_miou(
        eval_bundles, unary, None, None, cfg, num_categories, no_propagation=True
    )
    history = [IterationMetrics(iteration=1, coverage=1.0, loss_unary=loss, miou=score)]
    return SelfTrainResult(
        unary=unary,
        relation=None,
        bank=None,
        history=history,
        final_labels=[],
        num_categories=num_categories,
    )


def report_csv(history) -> str:
    """Fixed-format per-iteration CSV (identical bytes for identical runs)."""
    lines = ["iteration,coverage,train_loss_unary,train_loss_relation,miou"]
    for row in history:
        rel = "" if row.loss_relation is None else f"{row.loss_relation:.6f}"
        mi = "" if row.miou is None else f"{row.miou:.6f}"
        lines.append(f"{row.iteration},{row.coverage:.6f},{row.loss_unary:.6f},{rel},{mi}")
    return "\n".join(lines) + "\n"
