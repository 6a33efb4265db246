"""Super-voxel graph construction and mean-field label propagation.

The graph is fully connected; edge weights are a Gaussian kernel over the
standardized mean color, mean coordinates and mean classifier features of
each super-voxel plus its unit-norm relation embedding. Propagation minimizes
a Potts-style energy (unary negative log probabilities plus weighted
disagreement penalties) by synchronous mean-field sweeps.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ValidationError
from .scene import Scene
from .supervoxel import SuperVoxelPartition, pool_vectors

LOG_EPS = 1e-12


@dataclass(frozen=True)
class PairwiseParams:
    """Kernel weights and bandwidths for the four feature channels."""

    lambda_color: float = 1.0
    lambda_coord: float = 1.0
    lambda_unary: float = 1.0
    lambda_embed: float = 1.0
    sigma_color: float = 1.0
    sigma_coord: float = 1.0
    sigma_unary: float = 1.0
    sigma_embed: float = 1.0

    def __post_init__(self):
        for name in ("lambda_color", "lambda_coord", "lambda_unary", "lambda_embed"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be non-negative")
        for name in ("sigma_color", "sigma_coord", "sigma_unary", "sigma_embed"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")


@dataclass(frozen=True)
class SuperVoxelGraph:
    """Node features and the symmetric edge-weight matrix (zero diagonal)."""

    colors: np.ndarray
    coords: np.ndarray
    unary_feats: np.ndarray
    embeds: np.ndarray
    weights: np.ndarray

    @property
    def num_nodes(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class MarginalField:
    """Per-super-voxel categorical marginals, one simplex row per node."""

    q: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=np.float64)
        object.__setattr__(self, "q", q)
        if q.ndim != 2:
            raise ValidationError("marginals must be (M, C)")
        if q.min() < 0 or np.any(np.abs(q.sum(axis=1) - 1.0) > 1e-6):
            raise ValidationError("marginal rows must lie on the simplex")
        q.setflags(write=False)


def _standardize(x: np.ndarray) -> np.ndarray:
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    safe = np.where(std > 1e-12, std, 1.0)
    return (x - mean) / safe


def _sq_dists(x: np.ndarray) -> np.ndarray:
    # broadcast differences are exact (identical rows give distance 0 exactly);
    # fall back to the gram trick only when the (M, M, D) tensor would be large
    m, d = x.shape
    if m * m * d <= 20_000_000:
        diff = x[:, None, :] - x[None, :, :]
        return np.einsum("ijd,ijd->ij", diff, diff)
    sq = (x * x).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    return np.maximum(d2, 0.0)


def build_graph(
    part: SuperVoxelPartition,
    scene: Scene,
    unary_features: np.ndarray,
    embeddings: np.ndarray,
    pp: PairwiseParams,
    knn_truncate: int = 0,
) -> SuperVoxelGraph:
    """Pool node features, standardize them, and evaluate the edge kernel.

    ``unary_features`` are per point (pooled here); ``embeddings`` are already
    per super-voxel and unit-norm. Color, coordinate and classifier-feature
    channels are standardized to zero mean / unit variance per dimension
    across the scene before entering the kernel; embeddings are not.

    The graph is fully connected by default. ``knn_truncate`` > 0 keeps only
    each node's strongest edges (symmetrized by max), which curbs the
    aggregate pull of the many weak background edges on large graphs.
    """
    m = part.num_supervoxels
    colors = _standardize(pool_vectors(scene.colors, part))
    coords = _standardize(pool_vectors(scene.points, part))
    unary_features = np.asarray(unary_features, dtype=np.float64)
    if not np.all(np.isfinite(unary_features)):
        raise ValidationError("unary features must be finite")
    unary = _standardize(pool_vectors(unary_features, part))
    embeds = np.asarray(embeddings, dtype=np.float64)
    if embeds.shape[0] != m:
        raise ValidationError("embeddings must have one row per super-voxel")

    if m < 2:
        weights = np.zeros((m, m))
    else:
        expo = pp.lambda_color / (2.0 * pp.sigma_color**2) * _sq_dists(colors)
        expo += pp.lambda_coord / (2.0 * pp.sigma_coord**2) * _sq_dists(coords)
        expo += pp.lambda_unary / (2.0 * pp.sigma_unary**2) * _sq_dists(unary)
        expo += pp.lambda_embed / (2.0 * pp.sigma_embed**2) * _sq_dists(embeds)
        weights = np.exp(-expo)
        weights = (weights + weights.T) / 2.0
        np.fill_diagonal(weights, 0.0)
        if 0 < knn_truncate < m - 1:
            order = np.argsort(-weights, axis=1, kind="stable")
            keep = np.zeros_like(weights, dtype=bool)
            rows = np.repeat(np.arange(m), knn_truncate)
            keep[rows, order[:, :knn_truncate].ravel()] = True
            keep |= keep.T  # keep an edge if either endpoint ranks it
            weights = np.where(keep, weights, 0.0)

    return SuperVoxelGraph(
        colors=colors, coords=coords, unary_feats=unary, embeds=embeds, weights=weights
    )


def _check_stochastic(probs: np.ndarray) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2:
        raise ValidationError("probabilities must be (M, C)")
    if probs.min() < -1e-12 or np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-6):
        raise ValidationError("probability rows must be stochastic")
    return probs


def mean_field(
    graph: SuperVoxelGraph, unary_probs: np.ndarray, iterations: int = 10, record: bool = False
):
    """Synchronous mean-field minimization of the propagation energy.

    Unary potentials are -log(p + eps); Q starts from the unary distribution
    and each sweep updates all rows from the previous iterate. With no edges
    the unary distribution is a fixed point. When ``record`` is true, returns
    (MarginalField, [Q after each sweep]).
    """
    unary_probs = _check_stochastic(unary_probs)
    if iterations < 1:
        raise ValidationError("iterations must be at least 1")
    if graph.num_nodes != unary_probs.shape[0]:
        raise ValidationError("graph and unary probabilities disagree on M")
    log_unary = np.log(unary_probs + LOG_EPS)
    if record:
        history = []
        q = unary_probs
        for _ in range(iterations):
            q = kernels.mean_field_sweeps(graph.weights, log_unary, q, 1)
            history.append(q.copy())
        return MarginalField(q=q), history
    q = kernels.mean_field_sweeps(graph.weights, log_unary, unary_probs, iterations)
    return MarginalField(q=q)


def energy(graph: SuperVoxelGraph, unary_probs: np.ndarray, labeling: np.ndarray) -> float:
    """Exact scalar energy of one labeling: unary sum + Potts pairwise sum."""
    unary_probs = _check_stochastic(unary_probs)
    labeling = np.asarray(labeling, dtype=np.int64)
    if labeling.shape != (graph.num_nodes,):
        raise ValidationError("labeling must assign one category per node")
    if labeling.min() < 0 or labeling.max() >= unary_probs.shape[1]:
        raise ValidationError("labeling category out of range")
    psi_u = -np.log(unary_probs + LOG_EPS)
    return kernels.energy(graph.weights, psi_u, labeling)


def map_labels(field: MarginalField):
    """Per-node argmax category (ties to the lowest id) and its marginal."""
    labels = np.argmax(field.q, axis=1).astype(np.int32)
    conf = field.q[np.arange(field.q.shape[0]), labels]
    return labels, conf
