"""Contrastive loss semantics and stage-1 training behavior."""
import numpy as np
import pytest

from imuloc import numerics as nx
from imuloc.encoders import EncoderConfig, build_semantic_table
from imuloc.errors import ConfigError, DataError, ShapeMismatchError
from imuloc.stage1 import (BatchSampler, Stage1Config, infonce, retrieve_location,
                           stage1_loss, train_stage1)


def unit_rows(shape, seed=0):
    x = np.random.default_rng(seed).normal(size=shape)
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def infonce_bruteforce(a, b, tau):
    """Direct softmax/log-likelihood computation, no engine involved."""
    sim = a @ b.T / tau
    n = a.shape[0]
    total = 0.0
    for axis_sim in (sim, sim.T):
        for i in range(n):
            row = axis_sim[i]
            total += np.log(np.exp(row).sum()) - row[i]
    return total / (2 * n)


def test_infonce_single_pair_is_zero():
    a = unit_rows((1, 8), seed=1)
    assert infonce(nx.Tensor(a), nx.Tensor(a), 0.07).item() == pytest.approx(0.0, abs=1e-12)


def test_infonce_identical_rows_is_log_batch():
    row = unit_rows((1, 16), seed=2)
    a = np.tile(row, (12, 1))
    loss = infonce(nx.Tensor(a), nx.Tensor(a), 0.07).item()
    assert loss == pytest.approx(np.log(12), rel=1e-12)


def test_infonce_identity_closed_form():
    b = 16
    eye = np.eye(b)
    loss = infonce(nx.Tensor(eye), nx.Tensor(eye), 0.07).item()
    expected = np.log(1 + (b - 1) * np.exp(-1 / 0.07))
    assert loss == pytest.approx(expected, rel=1e-12)


def test_infonce_matches_bruteforce_random_batch():
    a = unit_rows((4, 8), seed=3)
    b = unit_rows((4, 8), seed=4)
    got = infonce(nx.Tensor(a), nx.Tensor(b), 0.07).item()
    assert got == pytest.approx(infonce_bruteforce(a, b, 0.07), rel=1e-12)


def test_infonce_invariant_under_joint_permutation():
    a = unit_rows((8, 6), seed=5)
    b = unit_rows((8, 6), seed=6)
    perm = np.random.default_rng(7).permutation(8)
    ref = infonce(nx.Tensor(a), nx.Tensor(b), 0.07).item()
    permuted = infonce(nx.Tensor(a[perm]), nx.Tensor(b[perm]), 0.07).item()
    assert permuted == pytest.approx(ref, rel=1e-12)


def test_infonce_rejects_batch_mismatch():
    with pytest.raises(ShapeMismatchError):
        infonce(nx.Tensor(unit_rows((4, 8))), nx.Tensor(unit_rows((5, 8))), 0.07)


def test_infonce_rejects_bad_temperature():
    a = nx.Tensor(unit_rows((4, 8)))
    with pytest.raises(ConfigError):
        infonce(a, a, 0.0)


# ---------------------------------------------------------------------------
# combined loss


def test_default_weights_match_published_setting():
    cfg = Stage1Config()
    assert (cfg.alpha, cfg.beta, cfg.theta, cfg.delta, cfg.gamma) == (0.1, 1, 1, 1, 1)
    assert cfg.batch_size == 64


def test_stage1_loss_equals_weighted_sum_of_terms():
    cfg = Stage1Config()
    fi, fl = unit_rows((6, 8), seed=1), unit_rows((6, 8), seed=2)
    fm, fp = unit_rows((6, 8), seed=3), unit_rows((6, 8), seed=4)
    tensors = [nx.Tensor(x) for x in (fi, fl, fm, fp)]
    total = stage1_loss(*tensors, cfg).item()
    t = cfg.temperature
    expected = (cfg.alpha * infonce(tensors[0], tensors[2], t).item()
                + cfg.beta * infonce(tensors[0], tensors[3], t).item()
                + cfg.theta * infonce(tensors[1], tensors[2], t).item()
                + cfg.delta * infonce(tensors[1], tensors[3], t).item()
                + cfg.gamma * infonce(tensors[2], tensors[3], t).item())
    assert abs(total - expected) <= 1e-12


def test_stage1_loss_vision_language_ablation_reduces_to_pair_term():
    cfg = Stage1Config(alpha=0.0, beta=0.0, theta=0.0, delta=0.0, gamma=1.0)
    fi, fl = unit_rows((5, 8), seed=1), unit_rows((5, 8), seed=2)
    fm, fp = unit_rows((5, 8), seed=3), unit_rows((5, 8), seed=4)
    total = stage1_loss(nx.Tensor(fi), nx.Tensor(fl), nx.Tensor(fm), nx.Tensor(fp), cfg)
    pair = infonce(nx.Tensor(fm), nx.Tensor(fp), cfg.temperature)
    assert total.item() == pair.item()


def test_stage1_loss_gradients_only_reach_trainable_modalities():
    cfg = Stage1Config()
    fi = nx.Tensor(unit_rows((4, 8), seed=1))
    fl = nx.Tensor(unit_rows((4, 8), seed=2))
    fm = nx.Tensor(unit_rows((4, 8), seed=3), requires_grad=True)
    fp = nx.Tensor(unit_rows((4, 8), seed=4), requires_grad=True)
    nx.backward(stage1_loss(fi, fl, fm, fp, cfg))
    assert fi.grad is None and fl.grad is None
    assert fm.grad is not None and fp.grad is not None


def test_negative_weight_rejected():
    with pytest.raises(ConfigError):
        Stage1Config(alpha=-0.1).validate()


# ---------------------------------------------------------------------------
# training loop (tiny synthetic dataset, no disk involved)


class _StubDataset:
    """Minimal AlignedSamples stand-in with learnable structure."""

    def __init__(self, n=48, rate=10, n_points=16, d=12, classes=4, seed=0):
        rng = np.random.default_rng(seed)
        self.windows = rng.normal(size=(n, rate, 6))
        self.actions = rng.integers(0, classes, size=n)
        self._patches = rng.normal(size=(n, n_points, 3))
        # plant class structure so alignment is learnable
        for i in range(n):
            self.windows[i, :, self.actions[i] % 6] += 2.0
            self._patches[i, :, 2] += self.actions[i] * 0.5
        self.n_samples = n

    def patch_batch(self, idx):
        return self._patches[idx]

    def image_features(self, idx, table):
        return table.vectors[self.actions[idx]].copy()

    def text_features(self, idx, table):
        return table.vectors[self.actions[idx]].copy()


def _tiny_setup(steps, lr=1e-3, seed=3):
    cfg = Stage1Config(steps=steps, batch_size=16, lr=lr)
    enc_cfg = EncoderConfig(feature_dim=12, imu_rate_hz=10, imu_channels=(6, 8),
                            imu_kernel=3, point_channels=(8, 10), patch_points=16)
    data = _StubDataset()
    table = build_semantic_table(4, 12, 0.1, seed=1)
    return data, table, cfg, enc_cfg, seed


def test_train_zero_lr_leaves_parameters_unchanged():
    data, table, cfg, enc_cfg, seed = _tiny_setup(steps=10, lr=0.0)
    from imuloc.encoders import init_encoders, params_checksum
    with nx.precision(cfg.train_dtype):
        ref_imu, ref_pt = init_encoders(enc_cfg, seed)
    ckpt = train_stage1(data, table, cfg, enc_cfg, seed)
    assert ckpt.imu_enc.checksum() == ref_imu.checksum()
    assert ckpt.point_enc.checksum() == ref_pt.checksum()
    losses = [l for _, l in ckpt.loss_trace]
    assert abs(np.mean(losses[:3]) - np.mean(losses[-3:])) <= 0.02 * np.mean(losses)


def test_train_deterministic_under_seed():
    data, table, cfg, enc_cfg, seed = _tiny_setup(steps=8)
    a = train_stage1(data, table, cfg, enc_cfg, seed)
    b = train_stage1(data, table, cfg, enc_cfg, seed)
    assert a.imu_enc.checksum() == b.imu_enc.checksum()
    assert a.point_enc.checksum() == b.point_enc.checksum()
    assert a.loss_trace == b.loss_trace


def test_train_leaves_semantic_table_untouched():
    data, table, cfg, enc_cfg, seed = _tiny_setup(steps=8)
    before = table.checksum()
    train_stage1(data, table, cfg, enc_cfg, seed)
    assert table.checksum() == before


def test_train_reduces_loss_on_structured_data():
    data, table, cfg, enc_cfg, seed = _tiny_setup(steps=150)
    ckpt = train_stage1(data, table, cfg, enc_cfg, seed)
    losses = [l for _, l in ckpt.loss_trace]
    assert np.mean(losses[-10:]) < np.mean(losses[:10])


def test_sampler_rejects_small_dataset():
    with pytest.raises(DataError):
        BatchSampler(10, 16, seed=0)


def test_sampler_deterministic_and_covers_dataset():
    a = BatchSampler(20, 5, seed=3)
    b = BatchSampler(20, 5, seed=3)
    batches_a = [a.next_batch().tolist() for _ in range(8)]
    batches_b = [b.next_batch().tolist() for _ in range(8)]
    assert batches_a == batches_b
    seen = sorted(i for batch in batches_a[:4] for i in batch)
    assert seen == list(range(20))  # one full pass before reshuffle


# ---------------------------------------------------------------------------
# retrieval


def test_retrieve_location_picks_matching_patch():
    d = 8
    patches = np.eye(d)[:5]
    imu = np.stack([patches[3], patches[0]])
    assert retrieve_location(imu, patches).tolist() == [3, 0]


def test_retrieve_location_tie_goes_to_lowest_index():
    patches = np.tile(unit_rows((1, 8), seed=1), (6, 1))
    imu = unit_rows((3, 8), seed=2)
    assert retrieve_location(imu, patches).tolist() == [0, 0, 0]


def test_retrieve_location_rejects_dim_mismatch():
    with pytest.raises(ShapeMismatchError):
        retrieve_location(np.zeros((2, 8)), np.zeros((4, 9)))
