"""Feed-forward network engine with exact backprop.

Houses the unary classifier (softmax cross-entropy over pseudo-labeled
points), the relation network trained contrastively against per-category
prototype keys held in a momentum memory bank, and the probability-product
prediction combiner. Plain SGD with momentum; training is single-threaded
and bit-reproducible for a fixed seed.

Checkpoint files are little-endian: magic ``OTNN``, version u32=1, then for
each of the two networks a u32 layer count, the u32 layer sizes, and the
row-major f64 parameters (weights then bias per layer); then u32 C, u32 D,
the C x D f64 prototype keys, and f64 temperature and momentum. A zero layer
count / zero C marks an absent network or bank.
"""

import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .annotate import PseudoLabels
from .config import TrainConfig, make_rng, spawn_seeds
from .errors import FileFormatError, ValidationError
from .features import FeatureMatrix
from .supervoxel import SuperVoxelPartition, pool_vectors

CHECKPOINT_MAGIC = b"OTNN"
CHECKPOINT_VERSION = 1


@dataclass
class MlpModel:
    """Affine layers with ReLU on hidden layers and a linear output."""

    weights: list
    biases: list

    @property
    def layer_sizes(self) -> tuple:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[1]


def init_mlp(layer_sizes, seed) -> MlpModel:
    """He-normal hidden weights, a small balanced head, zero biases.

    The output layer is scaled down so the initial softmax is near uniform
    (initial cross-entropy ~ log C).
    """
    if len(layer_sizes) < 2:
        raise ValidationError("need at least input and output layer sizes")
    rng = make_rng(seed)
    weights, biases = [], []
    last = len(layer_sizes) - 2
    for i, (fan_in, fan_out) in enumerate(zip(layer_sizes[:-1], layer_sizes[1:])):
        scale = 0.3 / np.sqrt(fan_in) if i == last else np.sqrt(2.0 / fan_in)
        weights.append(rng.normal(0.0, scale, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpModel(weights=weights, biases=biases)


def forward_batch(model: MlpModel, x: np.ndarray):
    """Returns (output, activations); activations[0] is the input batch."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ValidationError(
            f"input width {x.shape[-1] if x.ndim else 0} != model input {model.input_dim}"
        )
    acts = [x]
    h = x
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        h = h @ w + b
        if i < last:
            h = np.maximum(h, 0.0)
        acts.append(h)
    return h, acts


def backward_batch(model: MlpModel, acts, grad_out):
    """Exact gradients of the cached forward pass wrt weights and biases."""
    grads_w = [None] * len(model.weights)
    grads_b = [None] * len(model.biases)
    g = grad_out
    for i in range(len(model.weights) - 1, -1, -1):
        grads_w[i] = acts[i].T @ g
        grads_b[i] = g.sum(axis=0)
        if i > 0:
            g = g @ model.weights[i].T
            g = np.where(acts[i] > 0.0, g, 0.0)
    return grads_w, grads_b


def mlp_forward(model: MlpModel, x: np.ndarray):
    """Single-vector forward pass; returns (output vector, cached activations)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValidationError("mlp_forward expects a single feature vector")
    out, acts = forward_batch(model, x[None, :])
    return out[0], acts


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits: np.ndarray, targets: np.ndarray):
    """Mean softmax cross-entropy and its gradient wrt the logits."""
    p = softmax(logits)
    n = len(targets)
    loss = float(-np.log(p[np.arange(n), targets] + 1e-300).mean())
    grad = p
    grad[np.arange(n), targets] -= 1.0
    grad /= n
    return loss, grad


class _SgdMomentum:
    def __init__(self, model: MlpModel, lr: float, momentum: float):
        self.lr = lr
        self.momentum = momentum
        self.vel_w = [np.zeros_like(w) for w in model.weights]
        self.vel_b = [np.zeros_like(b) for b in model.biases]

    def step(self, model: MlpModel, grads_w, grads_b):
        for i in range(len(model.weights)):
            self.vel_w[i] = self.momentum * self.vel_w[i] - self.lr * grads_w[i]
            self.vel_b[i] = self.momentum * self.vel_b[i] - self.lr * grads_b[i]
            model.weights[i] += self.vel_w[i]
            model.biases[i] += self.vel_b[i]


# ---------------------------------------------------------------------------
# unary classifier
# ---------------------------------------------------------------------------


def point_labels_from_pseudo(labels: PseudoLabels, part: SuperVoxelPartition) -> np.ndarray:
    """Every point inherits its super-voxel's pseudo label (-1 where absent)."""
    return labels.labels[part.assignment]


def train_unary_points(
    x: np.ndarray, y: np.ndarray, num_categories: int, cfg: TrainConfig, seed
):
    """Mini-batch SGD on softmax cross-entropy over labeled points.

    Returns (model, final_epoch_mean_loss).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(x) == 0:
        raise ValidationError("empty supervision: no labeled points to train on")
    init_seed, shuffle_seed = spawn_seeds_pair(seed)
    sizes = (x.shape[1], cfg.hidden_width, cfg.hidden_width, num_categories)
    model = init_mlp(sizes, init_seed)
    return _fit_classifier(model, x, y, cfg, shuffle_seed)


def _fit_classifier(model, x, y, cfg, shuffle_seed):
    opt = _SgdMomentum(model, cfg.learning_rate, cfg.sgd_momentum)
    rng = make_rng(shuffle_seed)
    n = len(x)
    final_loss = 0.0
    for _epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            logits, acts = forward_batch(model, x[idx])
            loss, grad = cross_entropy(logits, y[idx])
            gw, gb = backward_batch(model, acts, grad)
            opt.step(model, gw, gb)
            total += loss * len(idx)
        final_loss = total / n
    return model, final_loss


def train_unary(
    features: FeatureMatrix,
    labels: PseudoLabels,
    part: SuperVoxelPartition,
    num_categories: int,
    cfg: TrainConfig,
    seed,
):
    """Train the classifier on points whose super-voxel carries a pseudo label."""
    point_labels = point_labels_from_pseudo(labels, part)
    mask = point_labels >= 0
    return train_unary_points(
        features.values[mask], point_labels[mask], num_categories, cfg, seed
    )


def predict_unary(model: MlpModel, features: FeatureMatrix):
    """Per-point class probabilities and penultimate-layer activations."""
    logits, acts = forward_batch(model, features.values)
    return softmax(logits), acts[-2]


# ---------------------------------------------------------------------------
# relation network and memory bank
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MemoryBank:
    """One unit-norm prototype key per category, with momentum and temperature."""

    keys: np.ndarray
    temperature: float
    momentum: float

    def __post_init__(self):
        keys = np.asarray(self.keys, dtype=np.float64)
        object.__setattr__(self, "keys", keys)
        if keys.ndim != 2:
            raise ValidationError("keys must be (C, D)")
        if self.temperature <= 0:
            raise ValidationError("temperature must be positive")
        if not 0.0 <= self.momentum <= 1.0:
            raise ValidationError("momentum must lie in [0, 1]")
        norms = np.sqrt((keys * keys).sum(axis=1))
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise ValidationError("keys must be unit-norm")
        keys.setflags(write=False)

    @property
    def num_categories(self) -> int:
        return self.keys.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.keys.shape[1]


def init_memory_bank(num_categories: int, cfg: TrainConfig, seed) -> MemoryBank:
    """Random unit-norm prototype keys."""
    rng = make_rng(seed)
    keys = rng.normal(size=(num_categories, cfg.embed_dim))
    keys /= np.sqrt((keys * keys).sum(axis=1, keepdims=True))
    return MemoryBank(keys=keys, temperature=cfg.temperature, momentum=cfg.bank_momentum)


def bank_update(bank: MemoryBank, embeddings: np.ndarray, categories: np.ndarray) -> MemoryBank:
    """Momentum moving average followed by renormalization, one sample at a time."""
    m = bank.momentum
    if m == 1.0:  # exact fixed point: the update never moves a key
        return bank
    keys = bank.keys.copy()
    for f, c in zip(np.asarray(embeddings, dtype=np.float64), categories):
        k = m * keys[c] + (1.0 - m) * f
        nrm = np.sqrt((k * k).sum())
        keys[c] = k / nrm if nrm > 0 else bank.keys[c]
    return MemoryBank(keys=keys, temperature=bank.temperature, momentum=bank.momentum)


def _normalize_rows(x: np.ndarray):
    nrm = np.sqrt((x * x).sum(axis=1, keepdims=True))
    nrm = np.maximum(nrm, 1e-12)
    return x / nrm, nrm


def pooled_embeddings(model: MlpModel, features: FeatureMatrix, part: SuperVoxelPartition):
    """Per-super-voxel embeddings: mean over member outputs, L2-normalized."""
    out, _ = forward_batch(model, features.values)
    pooled = pool_vectors(out, part)
    f, _ = _normalize_rows(pooled)
    return f


def infonce_loss(embeddings: np.ndarray, keys: np.ndarray, targets: np.ndarray, tau: float):
    """Mean InfoNCE over prototype keys and its gradient wrt the embeddings."""
    logits = embeddings @ keys.T / tau
    loss, grad_logits = cross_entropy(logits, targets)
    grad_f = grad_logits @ keys / tau
    return loss, grad_f


def train_relation(
    features: FeatureMatrix,
    labels: PseudoLabels,
    part: SuperVoxelPartition,
    bank: MemoryBank,
    cfg: TrainConfig,
    seed,
):
    """Contrastive training of the embedding net against the prototype keys.

    Each step draws ``samples_per_category`` labeled super-voxels per present
    category (with replacement when a category has fewer), embeds them by mean
    pooling + L2 normalization, takes an InfoNCE step on the net (keys are not
    backpropagated), then updates the sampled categories' keys by momentum
    moving average. Returns (model, updated bank, final step loss).
    """
    labeled = np.flatnonzero(labels.labeled_mask)
    if len(labeled) == 0:
        raise ValidationError("empty supervision: no labeled super-voxels")
    cats_present = np.unique(labels.labels[labeled])
    if len(cats_present) < 2:
        warnings.warn(
            "relation training with a single labeled category carries no contrast",
            stacklevel=2,
        )
    by_cat = {int(c): labeled[labels.labels[labeled] == c] for c in cats_present}

    init_seed, sample_seed = spawn_seeds_pair(seed)
    model = init_mlp((features.dim, cfg.hidden_width, cfg.embed_dim), init_seed)
    opt = _SgdMomentum(model, cfg.learning_rate, cfg.sgd_momentum)
    rng = make_rng(sample_seed)
    members = part.member_lists
    keys = bank.keys.copy()
    s = cfg.samples_per_category

    final_loss = 0.0
    for _step in range(cfg.relation_steps):
        sampled_svs, sampled_cats = sample_balanced(rng, by_cat, s)

        uniq = sorted(set(sampled_svs))
        local = {sv: i for i, sv in enumerate(uniq)}
        point_idx = np.concatenate([members[sv] for sv in uniq])
        seg_sizes = np.array([len(members[sv]) for sv in uniq])
        seg_ids = np.repeat(np.arange(len(uniq)), seg_sizes)

        out, acts = forward_batch(model, features.values[point_idx])
        pooled = np.zeros((len(uniq), cfg.embed_dim))
        np.add.at(pooled, seg_ids, out)
        pooled /= seg_sizes[:, None]
        f_uniq, nrm = _normalize_rows(pooled)

        rows = np.array([local[sv] for sv in sampled_svs])
        f_samples = f_uniq[rows]
        loss, grad_f_samples = infonce_loss(f_samples, keys, sampled_cats, cfg.temperature)

        # scatter sample grads back to unique super-voxels (duplicates add up)
        grad_f = np.zeros_like(f_uniq)
        np.add.at(grad_f, rows, grad_f_samples)
        # through L2 normalization: d(g/|g|) = (I - f f^T)/|g|
        grad_pooled = (grad_f - f_uniq * (f_uniq * grad_f).sum(axis=1, keepdims=True)) / nrm
        grad_out = grad_pooled[seg_ids] / seg_sizes[seg_ids, None]
        gw, gb = backward_batch(model, acts, grad_out)
        opt.step(model, gw, gb)

        m = bank.momentum
        for sv, c in zip(sampled_svs, sampled_cats):
            k = m * keys[c] + (1.0 - m) * f_uniq[local[sv]]
            knrm = np.sqrt((k * k).sum())
            if knrm > 0:
                keys[c] = k / knrm
        final_loss = loss

    new_bank = MemoryBank(keys=keys, temperature=bank.temperature, momentum=bank.momentum)
    return model, new_bank, final_loss


def sample_balanced(rng, by_cat: dict, per_category: int):
    """Draw the same number of super-voxels for every present category.

    Categories are visited in ascending id; a category with fewer labeled
    super-voxels than requested is sampled with replacement.
    """
    svs, cats = [], []
    for c in sorted(by_cat):
        pool = by_cat[c]
        picks = rng.choice(len(pool), size=per_category, replace=len(pool) < per_category)
        svs.extend(int(pool[p]) for p in picks)
        cats.extend([c] * per_category)
    return svs, np.asarray(cats, dtype=np.int64)


def relation_probs(embeddings: np.ndarray, bank: MemoryBank) -> np.ndarray:
    """Row-stochastic prototype-similarity softmax."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    norms = np.sqrt((embeddings * embeddings).sum(axis=1))
    if np.any(np.abs(norms - 1.0) > 1e-4):
        raise ValidationError("embeddings must be unit-norm")
    return softmax(embeddings @ bank.keys.T / bank.temperature)


def combine_probs(unary_sv: np.ndarray, relation_sv: np.ndarray) -> np.ndarray:
    """Elementwise probability product, renormalized per row.

    Rows whose product mass underflows fall back to the unary row.
    """
    unary_sv = np.asarray(unary_sv, dtype=np.float64)
    relation_sv = np.asarray(relation_sv, dtype=np.float64)
    if unary_sv.shape != relation_sv.shape:
        raise ValidationError("probability matrices must have the same shape")
    prod = unary_sv * relation_sv
    mass = prod.sum(axis=1, keepdims=True)
    degenerate = mass[:, 0] < 1e-12
    out = np.where(degenerate[:, None], unary_sv, prod / np.maximum(mass, 1e-300))
    return out


def spawn_seeds_pair(seed):
    """Two child seeds from either an int or an existing SeedSequence."""
    return tuple(spawn_seeds(seed, 2))


# ---------------------------------------------------------------------------
# checkpoint I/O
# ---------------------------------------------------------------------------


def _pack_model(model) -> bytes:
    if model is None:
        return struct.pack("<I", 0)
    sizes = model.layer_sizes
    blob = [struct.pack("<I", len(sizes)), np.asarray(sizes, "<u4").tobytes()]
    for w, b in zip(model.weights, model.biases):
        blob.append(np.ascontiguousarray(w, "<f8").tobytes())
        blob.append(np.ascontiguousarray(b, "<f8").tobytes())
    return b"".join(blob)


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.off = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.data):
            raise FileFormatError(f"{self.path}: truncated checkpoint")
        out = self.data[self.off : self.off + n]
        self.off += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def f64s(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64)


def _unpack_model(r: _Reader):
    n_sizes = r.u32()
    if n_sizes == 0:
        return None
    sizes = np.frombuffer(r.take(4 * n_sizes), dtype="<u4").astype(int)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(r.f64s(fan_in * fan_out).reshape(fan_in, fan_out))
        biases.append(r.f64s(fan_out))
    return MlpModel(weights=weights, biases=biases)


def save_checkpoint(path, unary: MlpModel, relation=None, bank: MemoryBank = None) -> None:
    blob = [struct.pack("<4sI", CHECKPOINT_MAGIC, CHECKPOINT_VERSION)]
    blob.append(_pack_model(unary))
    blob.append(_pack_model(relation))
    if bank is None:
        blob.append(struct.pack("<II", 0, 0))
    else:
        blob.append(struct.pack("<II", bank.num_categories, bank.embed_dim))
        blob.append(np.ascontiguousarray(bank.keys, "<f8").tobytes())
        blob.append(struct.pack("<dd", bank.temperature, bank.momentum))
    Path(path).write_bytes(b"".join(blob))


def load_checkpoint(path):
    """Returns (unary, relation, bank); relation and bank may be None."""
    r = _Reader(Path(path).read_bytes(), path)
    magic, version = struct.unpack("<4sI", r.take(8))
    if magic != CHECKPOINT_MAGIC:
        raise FileFormatError(f"{path}: bad magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise FileFormatError(f"{path}: unsupported version {version}")
    unary = _unpack_model(r)
    if unary is None:
        raise FileFormatError(f"{path}: checkpoint has no classifier")
    relation = _unpack_model(r)
    c = r.u32()
    d = r.u32()
    bank = None
    if c > 0:
        keys = r.f64s(c * d).reshape(c, d)
        tau, mom = struct.unpack("<dd", r.take(16))
        bank = MemoryBank(keys=keys, temperature=tau, momentum=mom)
    return unary, relation, bank
