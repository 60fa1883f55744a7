"""Chart tests: CSI featurization invariances, triplet mining, forward pass,
analytic gradients against central finite differences, and training behavior."""

import math

import numpy as np
import pytest
from scipy.stats import spearmanr

from statmap.chart import (
    ChartModel,
    Triplet,
    _batch_loss_and_grads,
    build_triplets,
    csi_features,
    embed_dataset,
    feature_dimension,
    forward,
    init_chart_model,
    train,
    triplet_loss,
)
from statmap.errors import ConfigurationError, DegenerateInputError, TrainingError
from statmap.stats import EmpiricalDistribution, wasserstein1


def random_csi(rng, a=4, s=16):
    return rng.normal(size=(a, s)) + 1j * rng.normal(size=(a, s))


# ---------------------------------------------------------------- features

def test_features_global_phase_invariant():
    rng = np.random.default_rng(0)
    h = random_csi(rng)
    f1 = csi_features(h, s_red=8)
    f2 = csi_features(np.exp(1j * 1.234) * h, s_red=8)
    np.testing.assert_allclose(f1, f2, atol=1e-12)


def test_features_scaling_moves_only_log_entry():
    rng = np.random.default_rng(1)
    h = random_csi(rng)
    c = 3.7
    f1 = csi_features(h, s_red=8)
    f2 = csi_features(c * h, s_red=8)
    np.testing.assert_allclose(f1[:-1], f2[:-1], atol=1e-12)
    assert f2[-1] - f1[-1] == pytest.approx(math.log10(c * c), abs=1e-9)


def test_features_declared_dimension():
    assert feature_dimension(64, 288, 24) == 2 * 64 * 24 + 1
    rng = np.random.default_rng(2)
    f = csi_features(random_csi(rng, a=64, s=288), s_red=24)
    assert f.shape == (2 * 64 * 24 + 1,)
    # magnitude block has unit norm
    assert np.linalg.norm(f[:-1]) == pytest.approx(1.0, abs=1e-12)


def test_features_zero_csi_rejected():
    with pytest.raises(DegenerateInputError):
        csi_features(np.zeros((4, 8), dtype=complex))


def test_features_s_red_bounds():
    rng = np.random.default_rng(3)
    with pytest.raises(ConfigurationError):
        csi_features(random_csi(rng), s_red=25)
    with pytest.raises(ConfigurationError):
        csi_features(random_csi(rng), s_red=0)


# ---------------------------------------------------------------- triplets

def shifted_samples(base, shifts):
    return [base + s for s in shifts]


def test_triplets_satisfy_w1_ordering():
    rng = np.random.default_rng(4)
    rows = [rng.normal(loc=rng.uniform(0, 5), size=200) for _ in range(30)]
    triplets, _ = build_triplets(rows, 200, seed=5)
    dists = [EmpiricalDistribution.from_samples(r) for r in rows]
    assert triplets
    for t in triplets:
        w_pos = wasserstein1(dists[t.anchor], dists[t.positive])
        w_neg = wasserstein1(dists[t.anchor], dists[t.negative])
        assert w_pos < w_neg


def test_triplets_three_user_case():
    base = np.linspace(0, 1, 50)
    rows = shifted_samples(base, [0.0, 0.1, 5.0])
    triplets, skipped = build_triplets(rows, 60, seed=6)
    assert skipped == 0
    anchored = [t for t in triplets if t.anchor == 0]
    assert anchored
    for t in anchored:
        assert t.positive == 1 and t.negative == 2


def test_triplets_deterministic():
    rng = np.random.default_rng(7)
    rows = [rng.normal(size=100) for _ in range(20)]
    a, _ = build_triplets(rows, 100, seed=42)
    b, _ = build_triplets(rows, 100, seed=42)
    assert a == b
    c, _ = build_triplets(rows, 100, seed=43)
    assert a != c


def test_fast_w1_row_matches_generic():
    rng = np.random.default_rng(8)
    rows = np.sort(rng.normal(size=(10, 64)), axis=1)
    from statmap.chart import _pairwise_w1_rows

    got = _pairwise_w1_rows(rows, 3)
    dists = [EmpiricalDistribution.from_samples(r) for r in rows]
    want = [wasserstein1(dists[3], d) for d in dists]
    np.testing.assert_allclose(got, want, atol=1e-12)


# ---------------------------------------------------------------- forward

def test_forward_zero_model():
    m = init_chart_model(5, hidden=(4,), seed=0)
    zeroed = ChartModel(weights=tuple(np.zeros_like(w) for w in m.weights),
                        biases=tuple(np.zeros_like(b) for b in m.biases))
    out = forward(zeroed, np.ones(5))
    np.testing.assert_array_equal(out, [0.0, 0.0])


def test_forward_positive_pathway_scales_linearly():
    # single-path positive weights: rectifier is identity on positives
    w1 = np.zeros((3, 2)); w1[0, 0] = 2.0
    w2 = np.zeros((2, 2)); w2[0, 0] = 1.5
    m = ChartModel(weights=(w1, w2), biases=(np.zeros(2), np.zeros(2)))
    out = forward(m, np.array([2.0, -1.0, 5.0]))
    assert out[0] == pytest.approx(2.0 * 2.0 * 1.5)
    assert out[1] == 0.0


def test_forward_first_layer_doubling():
    rng = np.random.default_rng(9)
    m = init_chart_model(6, hidden=(8, 4), seed=1)
    x = rng.normal(size=6)
    z1 = x @ m.weights[0] + m.biases[0]
    doubled = ChartModel(
        weights=(2.0 * m.weights[0],) + m.weights[1:],
        biases=(2.0 * m.biases[0],) + m.biases[1:])
    z1d = x @ doubled.weights[0] + doubled.biases[0]
    np.testing.assert_allclose(z1d, 2.0 * z1, rtol=1e-15)


def test_forward_dimension_mismatch():
    m = init_chart_model(6, hidden=(4,), seed=0)
    with pytest.raises(ConfigurationError):
        forward(m, np.ones(5))


# ---------------------------------------------------------------- loss

def test_triplet_loss_zero_when_separated():
    feats = np.array([[0.0, 0.0], [0.0, 0.0], [100.0, 100.0]])
    m = init_chart_model(2, hidden=(8,), seed=2)
    t = Triplet(0, 1, 2)
    zs = forward(m, feats)
    gap = np.linalg.norm(zs[0] - zs[2])
    assert triplet_loss(m, feats, t, margin=0.5 * gap) == 0.0


def test_triplet_loss_equal_pos_neg_gives_margin():
    rng = np.random.default_rng(10)
    feats = rng.normal(size=(3, 4))
    feats[2] = feats[1]  # positive and negative embed identically
    m = init_chart_model(4, hidden=(6,), seed=3)
    assert triplet_loss(m, feats, Triplet(0, 1, 2), 0.7) == pytest.approx(0.7)


def test_triplet_loss_scalar_recomputation():
    rng = np.random.default_rng(11)
    feats = rng.normal(size=(3, 5))
    m = init_chart_model(5, hidden=(7,), seed=4)
    t = Triplet(0, 1, 2)
    z = [forward(m, feats[i]) for i in range(3)]
    dp = math.sqrt(sum((z[0][k] - z[1][k]) ** 2 for k in range(2)))
    dn = math.sqrt(sum((z[0][k] - z[2][k]) ** 2 for k in range(2)))
    want = max(0.0, dp - dn + 0.4)
    assert triplet_loss(m, feats, t, 0.4) == pytest.approx(want, abs=1e-12)


# ---------------------------------------------------------------- training

def flatten_params(model):
    return np.concatenate([w.ravel() for w in model.weights]
                          + [b.ravel() for b in model.biases])


def model_from_flat(template, flat):
    weights, biases = [], []
    pos = 0
    for w in template.weights:
        weights.append(flat[pos:pos + w.size].reshape(w.shape)); pos += w.size
    for b in template.biases:
        biases.append(flat[pos:pos + b.size].reshape(b.shape)); pos += b.size
    return ChartModel(weights=tuple(weights), biases=tuple(biases))


def test_analytic_gradient_matches_finite_differences():
    rng = np.random.default_rng(12)
    feats = rng.normal(size=(9, 6))
    triplets = [Triplet(int(a), int(p), int(n))
                for a, p, n in [(0, 1, 2), (3, 4, 5), (6, 7, 8),
                                (1, 3, 6), (2, 5, 7)]]
    model = init_chart_model(6, hidden=(10, 8), seed=5)
    margin = 5.0  # large margin keeps every hinge active and off the kink
    anchors = [t.anchor for t in triplets]
    positives = [t.positive for t in triplets]
    negatives = [t.negative for t in triplets]
    _, gw, gb = _batch_loss_and_grads(model, feats, anchors, positives,
                                      negatives, margin)
    analytic = np.concatenate([g.ravel() for g in gw]
                              + [g.ravel() for g in gb])

    def mean_loss(flat):
        m = model_from_flat(model, flat)
        return np.mean([triplet_loss(m, feats, t, margin) for t in triplets])

    theta = flatten_params(model)
    step = 1e-5
    fd = np.empty_like(theta)
    for i in range(theta.size):
        up = theta.copy(); up[i] += step
        dn = theta.copy(); dn[i] -= step
        fd[i] = (mean_loss(up) - mean_loss(dn)) / (2 * step)
    rel = np.abs(analytic - fd) / np.maximum(np.abs(analytic) + np.abs(fd), 1e-8)
    assert float(rel.max()) < 1e-4


def test_train_zero_step_size_keeps_weights():
    rng = np.random.default_rng(13)
    feats = rng.normal(size=(12, 5))
    triplets, _ = build_triplets([rng.normal(loc=i, size=50) for i in range(12)],
                                 40, seed=0)
    m = init_chart_model(5, hidden=(6,), seed=6)
    result = train(m, triplets, feats, step_size=0.0, epochs=3, seed=1)
    for w0, w1 in zip(m.weights, result.model.weights):
        np.testing.assert_array_equal(w0, w1)


def test_train_deterministic():
    rng = np.random.default_rng(14)
    feats = rng.normal(size=(15, 5))
    triplets, _ = build_triplets([rng.normal(loc=i % 4, size=60) for i in range(15)],
                                 80, seed=0)
    m = init_chart_model(5, hidden=(8, 6), seed=7)
    r1 = train(m, triplets, feats, epochs=4, seed=3)
    r2 = train(m, triplets, feats, epochs=4, seed=3)
    assert r1.epoch_losses == r2.epoch_losses
    for w1, w2 in zip(r1.model.weights, r2.model.weights):
        np.testing.assert_array_equal(w1, w2)


def test_train_aborts_on_nonfinite():
    rng = np.random.default_rng(15)
    feats = rng.normal(size=(6, 4)) * 1e150  # forces overflow in the norms
    triplets = [Triplet(0, 1, 2), Triplet(3, 4, 5)]
    m = init_chart_model(4, hidden=(5,), seed=8)
    with pytest.raises(TrainingError):
        train(m, triplets, feats, step_size=0.5, epochs=5, seed=0)


def synthetic_chart_problem(n_users=120, seed=16):
    """Users on a smooth 2-D gain field, encoded as random Fourier features.

    An untrained random projection of these features carries no latent
    geometry (measured Spearman ~0.01), yet the encoding is rich enough for
    the triplet loss to recover the gain structure.
    """
    rng = np.random.default_rng(seed)
    locs = rng.uniform(-1, 1, size=(n_users, 2))
    gain = 3.0 * np.sin(1.5 * locs[:, 0]) + 2.0 * np.cos(1.7 * locs[:, 1])
    rate_rows = [rng.normal(loc=g, scale=0.25, size=400) for g in gain]
    freqs = rng.normal(0.0, 3.0, size=(2, 24))
    phases = rng.uniform(0.0, 2.0 * np.pi, 24)
    feats = np.sin(locs @ freqs + phases) + 0.02 * rng.normal(size=(n_users, 24))
    return locs, feats, rate_rows


def latent_w1_spearman(model, feats, rate_rows, rng):
    z = forward(model, feats)
    dists = [EmpiricalDistribution.from_samples(r) for r in rate_rows]
    pairs = rng.integers(0, len(rate_rows), size=(1000, 2))
    ld, wd = [], []
    for i, j in pairs:
        if i == j:
            continue
        ld.append(np.linalg.norm(z[i] - z[j]))
        wd.append(wasserstein1(dists[i], dists[j]))
    return spearmanr(ld, wd).statistic


def test_chart_quality_spearman_improves():
    locs, feats, rate_rows = synthetic_chart_problem()
    triplets, _ = build_triplets(rate_rows, 4000, seed=17)
    m0 = init_chart_model(feats.shape[1], hidden=(32, 16), seed=18)
    rho_before = latent_w1_spearman(m0, feats, rate_rows,
                                    np.random.default_rng(19))
    result = train(m0, triplets, feats, margin=1.0, step_size=0.02,
                   epochs=30, batch_size=64, seed=20)
    rho_after = latent_w1_spearman(result.model, feats, rate_rows,
                                   np.random.default_rng(19))
    assert abs(rho_before) < 0.2
    assert rho_after > 0.4
    assert result.epoch_losses[-1] <= result.epoch_losses[0]


def test_embed_dataset_shapes_and_consistency():
    rng = np.random.default_rng(21)
    feats = rng.normal(size=(10, 7))
    feats[4] = feats[2]
    m = init_chart_model(7, hidden=(6,), seed=9)
    out = embed_dataset(m, [(i, feats[i]) for i in range(10)])
    assert len(out) == 10
    assert all(z.shape == (2,) for _, z in out)
    np.testing.assert_array_equal(out[2][1], out[4][1])


def test_lipschitz_bound_from_frobenius_norms():
    rng = np.random.default_rng(22)
    m = init_chart_model(8, hidden=(16, 8), seed=10)
    bound = np.prod([np.linalg.norm(w) for w in m.weights])
    x = rng.normal(size=8)
    z0 = forward(m, x)
    for _ in range(50):
        delta = rng.normal(size=8) * rng.uniform(1e-3, 1.0)
        z1 = forward(m, x + delta)
        assert np.linalg.norm(z1 - z0) <= bound * np.linalg.norm(delta) + 1e-12
