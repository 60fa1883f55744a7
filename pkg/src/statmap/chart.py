"""Channel charting: a small dense network embeds CSI feature vectors into a
2-D latent space, trained with a triplet loss whose triplets are mined from
Wasserstein distances between per-user rate distributions.

The network is rectifier-activated with an identity output layer and is
trained by plain mini-batch SGD with momentum; gradients are backpropagated
analytically (no autodiff dependency), which keeps training deterministic
for a fixed seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DegenerateInputError, TrainingError
from .stats import EmpiricalDistribution, wasserstein1

__all__ = [
    "ChartModel",
    "Triplet",
    "TrainResult",
    "DEFAULT_HIDDEN",
    "MAX_SUBCARRIER_FEATURES",
    "init_chart_model",
    "csi_features",
    "feature_dimension",
    "build_triplets",
    "forward",
    "triplet_loss",
    "train",
    "embed_dataset",
]

DEFAULT_HIDDEN = (256, 128, 64)
MAX_SUBCARRIER_FEATURES = 24
LATENT_DIM = 2


@dataclass(frozen=True)
class ChartModel:
    """Dense feed-forward chart: weights[i] maps layer i to i+1."""

    weights: tuple
    biases: tuple

    def __post_init__(self):
        if self.weights[-1].shape[1] != LATENT_DIM:
            raise ConfigurationError("chart output dimension must be 2")
        for w, b in zip(self.weights, self.biases):
            if w.shape[1] != b.shape[0]:
                raise ConfigurationError("bias/weight shape mismatch")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ConfigurationError("chart parameters must be finite")

    @property
    def layer_dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]


@dataclass(frozen=True)
class Triplet:
    anchor: int
    positive: int
    negative: int

    def __post_init__(self):
        if len({self.anchor, self.positive, self.negative}) != 3:
            raise ConfigurationError("triplet indices must be distinct")


@dataclass(frozen=True)
class TrainResult:
    model: ChartModel
    epoch_losses: list[float]
    skipped_anchors: int = 0


def init_chart_model(input_dim: int, hidden=DEFAULT_HIDDEN,
                     seed: int = 0) -> ChartModel:
    """He-initialized rectifier network [D, *hidden, 2]."""
    dims = [input_dim, *hidden, LATENT_DIM]
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        weights.append(rng.normal(0.0, math.sqrt(2.0 / d_in), (d_in, d_out)))
        biases.append(np.zeros(d_out))
    return ChartModel(weights=tuple(weights), biases=tuple(biases))


def feature_dimension(num_antennas: int, num_subcarriers: int,
                      s_red: int) -> int:
    step = math.ceil(num_subcarriers / s_red)
    kept = len(range(0, num_subcarriers, step))
    return 2 * num_antennas * kept + 1


def csi_features(csi, s_red: int = MAX_SUBCARRIER_FEATURES) -> np.ndarray:
    """Fixed-length real feature vector from a complex CSI snapshot.

    Subcarriers are decimated to at most s_red columns; the feature block is
    the entrywise magnitudes plus the magnitudes of adjacent-subcarrier
    products of the Frobenius-normalized matrix, normalized to unit norm.
    The final entry is log10 of the total power, the only entry that moves
    under a positive rescaling of the CSI.
    """
    if not 1 <= s_red <= MAX_SUBCARRIER_FEATURES:
        raise ConfigurationError(
            f"s_red must lie in [1, {MAX_SUBCARRIER_FEATURES}], got {s_red}")
    entries = np.asarray(getattr(csi, "entries", csi))
    if entries.ndim != 2:
        raise ConfigurationError("CSI must be an antennas x subcarriers matrix")
    step = math.ceil(entries.shape[1] / s_red)
    h = entries[:, ::step]
    total = float(np.sum(np.abs(h) ** 2))
    if total <= 0.0:
        raise DegenerateInputError("all-zero CSI snapshot")
    hn = h / math.sqrt(total)
    mags = np.abs(hn)
    prods = np.abs(hn * np.conj(np.roll(hn, -1, axis=1)))
    block = np.concatenate([mags.ravel(), prods.ravel()])
    block /= np.linalg.norm(block)
    return np.concatenate([block, [math.log10(total)]])


def _pairwise_w1_rows(sorted_samples: np.ndarray, anchor: int) -> np.ndarray:
    """W1 from one user to all users when sample counts are equal.

    For equal sizes the quantile integral reduces to the mean absolute
    difference of sorted samples (verified against stats.wasserstein1).
    """
    return np.mean(np.abs(sorted_samples - sorted_samples[anchor]), axis=1)


def build_triplets(rate_samples, n_triplets: int, close_quantile: float = 0.05,
                   far_quantile: float = 0.5, seed: int = 0):
    """Mine triplets from W1 distances between per-user rate distributions.

    For each uniformly drawn anchor, the positive comes from users whose W1
    to the anchor is below the anchor's close_quantile, the negative from
    above its far_quantile. Anchors without eligible candidates are skipped
    and counted.
    """
    if not 0.0 < close_quantile < far_quantile <= 1.0:
        raise ConfigurationError("need 0 < close_quantile < far_quantile <= 1")
    if n_triplets < 1:
        raise ConfigurationError("n_triplets must be >= 1")
    sorted_rows = [np.sort(np.asarray(r, dtype=float)) for r in rate_samples]
    n_users = len(sorted_rows)
    if n_users < 3:
        raise ConfigurationError("triplet mining needs at least 3 users")
    sizes = {row.size for row in sorted_rows}
    matrix = np.vstack(sorted_rows) if len(sizes) == 1 else None
    dists = [
        EmpiricalDistribution.from_samples(r) for r in sorted_rows
    ] if matrix is None else None

    rng = np.random.default_rng(seed)
    row_cache: dict[int, np.ndarray] = {}
    triplets, skipped = [], 0
    for anchor in rng.integers(0, n_users, size=n_triplets):
        anchor = int(anchor)
        if anchor not in row_cache:
            if matrix is not None:
                row = _pairwise_w1_rows(matrix, anchor)
            else:
                row = np.array([wasserstein1(dists[anchor], d) for d in dists])
            row_cache[anchor] = row
        row = row_cache[anchor]
        others = np.arange(n_users) != anchor
        w_others = row[others]
        close_cut = np.quantile(w_others, close_quantile)
        far_cut = np.quantile(w_others, far_quantile)
        pos_pool = np.flatnonzero(others & (row < close_cut))
        neg_pool = np.flatnonzero(others & (row > far_cut))
        if pos_pool.size == 0 or neg_pool.size == 0:
            skipped += 1
            continue
        pos = int(rng.choice(pos_pool))
        neg = int(rng.choice(neg_pool))
        if row[pos] < row[neg]:
            triplets.append(Triplet(anchor, pos, neg))
        else:
            skipped += 1
    return triplets, skipped


def _forward_cached(model: ChartModel, x: np.ndarray):
    """Forward pass keeping post-activation values for backprop."""
    activations = [x]
    a = x
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w + b
        a = z if i == last else np.maximum(z, 0.0)
        activations.append(a)
    return activations


def forward(model: ChartModel, features) -> np.ndarray:
    """Latent coordinates for one feature vector or a batch of rows."""
    x = np.asarray(features, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != model.input_dim:
        raise ConfigurationError(
            f"feature dimension {x.shape[1]} != model input {model.input_dim}")
    out = _forward_cached(model, x)[-1]
    return out[0] if single else out


def triplet_loss(model: ChartModel, features, triplet: Triplet,
                 margin: float) -> float:
    """max(0, ||za - zp|| - ||za - zn|| + margin) on the embedded points."""
    if margin <= 0:
        raise ConfigurationError("margin must be positive")
    feats = np.asarray(features, dtype=float)
    z = forward(model, feats[[triplet.anchor, triplet.positive,
                              triplet.negative]])
    dp = float(np.linalg.norm(z[0] - z[1]))
    dn = float(np.linalg.norm(z[0] - z[2]))
    return max(0.0, dp - dn + margin)


def _batch_loss_and_grads(model: ChartModel, feats: np.ndarray,
                          anchors, positives, negatives, margin: float):
    # overflow here surfaces as a non-finite loss, which train() rejects
    b = len(anchors)
    stacked = feats[np.concatenate([anchors, positives, negatives])]
    with np.errstate(invalid="ignore", over="ignore"):
        acts = _forward_cached(model, stacked)
        z = acts[-1]
        za, zp, zn = z[:b], z[b:2 * b], z[2 * b:]
        diff_p = za - zp
        diff_n = za - zn
        dp = np.linalg.norm(diff_p, axis=1)
        dn = np.linalg.norm(diff_n, axis=1)
        losses = np.maximum(0.0, dp - dn + margin)
        active = (losses > 0.0).astype(float)[:, None]
        up = diff_p / np.maximum(dp, 1e-12)[:, None]
        un = diff_n / np.maximum(dn, 1e-12)[:, None]
        g_out = np.vstack([
            active * (up - un),
            -active * up,
            active * un,
        ]) / b
        # backward pass through the rectifier stack
        grads_w = [None] * len(model.weights)
        grads_b = [None] * len(model.biases)
        g = g_out
        for i in range(len(model.weights) - 1, -1, -1):
            a_prev = acts[i]
            grads_w[i] = a_prev.T @ g
            grads_b[i] = g.sum(axis=0)
            if i > 0:
                g = (g @ model.weights[i].T) * (acts[i] > 0.0)
    return float(np.mean(losses)), grads_w, grads_b


def train(model: ChartModel, triplets, features, margin: float = 1.0,
          step_size: float = 0.01, epochs: int = 20, batch_size: int = 128,
          momentum: float = 0.9, seed: int = 0) -> TrainResult:
    """Mini-batch SGD with momentum on the mean triplet loss.

    Deterministic for fixed inputs and seed; aborts with diagnostics on a
    non-finite loss.
    """
    if not triplets:
        raise ConfigurationError("no triplets to train on")
    if margin <= 0 or epochs < 1 or batch_size < 1 or step_size < 0:
        raise ConfigurationError("hyperparameters must be positive")
    feats = np.asarray(features, dtype=float)
    idx = np.array([[t.anchor, t.positive, t.negative] for t in triplets])
    rng = np.random.default_rng(seed)
    weights = [w.copy() for w in model.weights]
    biases = [b.copy() for b in model.biases]
    vel_w = [np.zeros_like(w) for w in weights]
    vel_b = [np.zeros_like(b) for b in biases]
    trace = []
    for epoch in range(epochs):
        order = rng.permutation(len(triplets))
        total, count = 0.0, 0
        for start in range(0, len(order), batch_size):
            chunk = idx[order[start:start + batch_size]]
            current = ChartModel(weights=tuple(weights), biases=tuple(biases))
            loss, gw, gb = _batch_loss_and_grads(
                current, feats, chunk[:, 0], chunk[:, 1], chunk[:, 2], margin)
            if not math.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {start // batch_size}")
            total += loss * len(chunk)
            count += len(chunk)
            for i in range(len(weights)):
                vel_w[i] = momentum * vel_w[i] - step_size * gw[i]
                vel_b[i] = momentum * vel_b[i] - step_size * gb[i]
                weights[i] = weights[i] + vel_w[i]
                biases[i] = biases[i] + vel_b[i]
        trace.append(total / count)
    return TrainResult(
        model=ChartModel(weights=tuple(weights), biases=tuple(biases)),
        epoch_losses=trace)


def embed_dataset(model: ChartModel, records) -> list:
    """(user_id, latent point) for each (user_id, feature vector) record."""
    out = []
    for user_id, feats in records:
        out.append((user_id, forward(model, feats)))
    return out
