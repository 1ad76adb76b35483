import numpy as np
import pytest

import oracles
from protostream.core import ZeroNorm, normalize, normalize_rows
from protostream.gradcheck import central_difference, rel_error
from protostream.offline import (
    AdapterState,
    InsufficientClassSamples,
    InvalidClass,
    LabeledBatch,
    OfflineConfig,
    angle_stats,
    head_accuracy,
    margin_ce_loss,
    margin_logits,
    plain_ce_loss,
    supcon_loss,
    train_offline,
)


def random_views(rng, n=8, d=6, k=3):
    z = rng.normal(size=(n, d))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    labels = np.concatenate([np.arange(k), rng.integers(0, k, size=n - k)])
    labels = np.repeat(labels[: n // 2], 2)[:n]
    return z, labels


class TestSupcon:
    def test_single_pair_identical_views_zero_loss(self):
        v = normalize(np.array([0.3, 0.4, 0.5]))
        loss, _ = supcon_loss(np.stack([v, v]), np.array([0, 0]), tau_con=1.0)
        assert loss == pytest.approx(0.0, abs=1e-12)

    def test_matches_scalar_oracle_structured(self):
        # two classes, orthogonal across, identical within
        z = np.array([[1.0, 0, 0], [1.0, 0, 0], [0, 1.0, 0], [0, 1.0, 0]])
        labels = np.array([0, 0, 1, 1])
        loss, _ = supcon_loss(z, labels, tau_con=1.0)
        expected = oracles.supcon_scalar(z.tolist(), labels.tolist(), 1.0)
        assert loss == pytest.approx(expected, abs=1e-9)

    def test_matches_scalar_oracle_random(self, rng):
        for _ in range(10):
            z, labels = random_views(rng)
            loss, _ = supcon_loss(z, labels, tau_con=0.3)
            expected = oracles.supcon_scalar(z.tolist(), labels.tolist(), 0.3)
            assert loss == pytest.approx(expected, abs=1e-9)

    def test_gradient_matches_finite_differences(self, rng):
        for _ in range(5):
            z, labels = random_views(rng)
            _, grads = supcon_loss(z, labels, tau_con=0.5)
            fd = central_difference(lambda: supcon_loss(z, labels, 0.5)[0], [z])
            assert rel_error(grads.ravel(), fd) < 1e-5

    def test_empty_positive_set_asserted(self):
        from protostream.offline import EmptyPositiveSet

        z = np.eye(3)[:2]
        with pytest.raises(EmptyPositiveSet):
            supcon_loss(z, np.array([0, 1]), tau_con=1.0)

    def test_labeled_batch_flatten(self, rng):
        views = rng.normal(size=(3, 2, 4))
        batch = LabeledBatch(views, np.array([2, 0, 1]))
        flat, labels = batch.flat()
        assert flat.shape == (6, 4)
        assert labels.tolist() == [2, 2, 0, 0, 1, 1]


class TestMarginLogits:
    def head(self, rng, k=4, d=6):
        a = AdapterState.init(d, k, seed=0)
        a.head_weights = rng.normal(size=(k, d))
        return a

    def test_zero_margin_reduces_to_scaled_cosines(self, rng):
        head = self.head(rng)
        z = normalize(rng.normal(size=6))
        logits = margin_logits(z, head, y=2, s=7.0, m=0.0)
        wn = normalize_rows(head.head_weights)
        np.testing.assert_allclose(logits, 7.0 * wn @ z, atol=1e-12)

    def test_aligned_target_hand_value(self):
        head = AdapterState.init(4, 3, seed=0)
        head.head_weights = np.eye(3, 4) * 2.5  # normalization must absorb the scale
        z = np.eye(4)[1]  # aligned with class-1 weight, theta = 0
        logits = margin_logits(z, head, y=1, s=30.0, m=0.2)
        assert logits[1] == pytest.approx(30.0 * np.cos(0.2), abs=1e-3)
        assert logits[1] == pytest.approx(29.4021, abs=1e-3)

    def test_orthogonal_target_negative(self):
        head = AdapterState.init(4, 2, seed=0)
        head.head_weights = np.eye(2, 4)
        z = np.eye(4)[2]  # orthogonal to class-0 weight, theta = pi/2
        logits = margin_logits(z, head, y=0, s=5.0, m=0.2)
        assert logits[0] == pytest.approx(-5.0 * np.sin(0.2), abs=1e-9)
        assert logits[0] < 0

    def test_invalid_class(self, rng):
        head = self.head(rng)
        with pytest.raises(InvalidClass):
            margin_logits(np.ones(6) / np.sqrt(6), head, y=9, s=1.0, m=0.1)

    def test_degenerate_weight_raises(self):
        head = AdapterState.init(3, 2, seed=0)
        head.head_weights = np.array([[1.0, 0, 0], [0, 0, 0]])
        with pytest.raises(ZeroNorm):
            margin_logits(np.eye(3)[0], head, y=0, s=1.0, m=0.1)

    def test_margin_penalty_monotone(self, rng):
        # target logit strictly below the unmargined one while theta + m < pi
        head = self.head(rng)
        wn = normalize_rows(head.head_weights)
        for _ in range(20):
            z = normalize(rng.normal(size=6))
            theta = np.arccos(np.clip(wn[1] @ z, -1, 1))
            m = rng.uniform(0.01, np.pi / 2 - 0.01)
            if theta + m >= np.pi:
                continue
            with_m = margin_logits(z, head, y=1, s=3.0, m=m)[1]
            without = 3.0 * (wn[1] @ z)
            assert with_m < without


class TestMarginCE:
    def test_uniform_logits_ln_k(self):
        # orthogonal weights and a feature orthogonal to all of them
        head = AdapterState.init(8, 4, seed=0)
        head.head_weights = np.eye(4, 8)
        z = np.eye(8)[6][None, :]
        loss, _, _ = margin_ce_loss(z, np.array([1]), head, s=9.0, m=0.0)
        assert loss == pytest.approx(np.log(4), abs=1e-12)

    def test_zero_margin_equals_plain_ce_on_cosine_logits(self, rng):
        head = AdapterState.init(6, 3, seed=1)
        head.head_weights = rng.normal(size=(3, 6))
        z, labels = random_views(rng, n=10, d=6, k=3)
        loss_m, _, _ = margin_ce_loss(z, labels, head, s=4.0, m=0.0)
        # plain CE over the same bias-free scaled cosine logits
        cosine_head = AdapterState(
            np.eye(6), None, 4.0 * normalize_rows(head.head_weights), np.zeros(3))
        loss_p, _, _, _ = plain_ce_loss(z, labels, cosine_head)
        assert loss_m == pytest.approx(loss_p, abs=1e-9)

    def test_gradients_match_finite_differences(self, rng):
        for _ in range(5):
            head = AdapterState.init(6, 3, seed=2)
            head.head_weights = rng.normal(size=(3, 6))
            z, labels = random_views(rng, n=8, d=6, k=3)
            _, g_z, g_w = margin_ce_loss(z, labels, head, s=5.0, m=0.25)
            fd = central_difference(
                lambda: margin_ce_loss(z, labels, head, 5.0, 0.25)[0],
                [z, head.head_weights])
            analytic = np.concatenate([g_z.ravel(), g_w.ravel()])
            assert rel_error(analytic, fd) < 1e-5


class TestPlainCE:
    def test_saturated_logits_near_zero_loss(self):
        head = AdapterState.init(4, 3, seed=0)
        head.head_weights = 50 * np.eye(3, 4)
        z = np.eye(4)[:1]
        loss, _, _, _ = plain_ce_loss(z, np.array([0]), head)
        assert loss == pytest.approx(0.0, abs=1e-6)

    def test_uniform_ln_k(self):
        head = AdapterState.init(4, 5, seed=0)
        head.head_weights = np.zeros((5, 4))
        loss, _, _, _ = plain_ce_loss(np.eye(4)[:2], np.array([1, 3]), head)
        assert loss == pytest.approx(np.log(5), abs=1e-12)

    def test_gradients_match_finite_differences(self, rng):
        for _ in range(5):
            head = AdapterState.init(6, 3, seed=3)
            head.head_weights = rng.normal(size=(3, 6))
            head.head_bias = rng.normal(size=3)
            z, labels = random_views(rng, n=8, d=6, k=3)
            _, g_z, g_w, g_b = plain_ce_loss(z, labels, head)
            fd = central_difference(
                lambda: plain_ce_loss(z, labels, head)[0],
                [z, head.head_weights, head.head_bias])
            analytic = np.concatenate([g_z.ravel(), g_w.ravel(), g_b.ravel()])
            assert rel_error(analytic, fd) < 1e-5


class TestTrainOffline:
    def separable(self, rng, n=40, d=8):
        dirs = np.eye(2, d)
        feats, labels = [], []
        for c in range(2):
            s = dirs[c] + 0.05 * rng.normal(size=(n // 2, d))
            feats.append(s / np.linalg.norm(s, axis=1, keepdims=True))
            labels.extend([c] * (n // 2))
        return np.vstack(feats), np.array(labels)

    def test_loss_decreases_and_fits(self, rng):
        feats, labels = self.separable(rng)
        # full batch + fixed views: the per-epoch loss is the exact objective
        # on identical data, so gradient descent must decrease it strictly
        second = feats + 0.05 * rng.normal(size=feats.shape)
        second /= np.linalg.norm(second, axis=1, keepdims=True)
        cfg = OfflineConfig(epochs=20, learning_rate=0.05, batch_size=64, seed=0)
        adapter, history = train_offline(feats, labels, cfg, second_views=second)
        totals = [h.loss_total for h in history]
        assert all(b < a for a, b in zip(totals[:5], totals[1:6]))
        assert head_accuracy(adapter, feats, labels) == 1.0

    def test_lambda_zero_keeps_head_untouched(self, rng):
        feats, labels = self.separable(rng)
        cfg = OfflineConfig(lam=0.0, epochs=3, seed=1)
        init = AdapterState.init(8, 2, seed=cfg.seed)
        adapter, _ = train_offline(feats, labels, cfg)
        np.testing.assert_array_equal(adapter.head_weights, init.head_weights)
        np.testing.assert_array_equal(adapter.head_bias, init.head_bias)

    def test_deterministic_given_seed(self, rng):
        feats, labels = self.separable(rng)
        cfg = OfflineConfig(epochs=4, seed=7)
        a1, h1 = train_offline(feats, labels, cfg)
        a2, h2 = train_offline(feats, labels, cfg)
        np.testing.assert_array_equal(a1.adapter_matrix, a2.adapter_matrix)
        np.testing.assert_array_equal(a1.head_weights, a2.head_weights)
        assert [h.loss_total for h in h1] == [h.loss_total for h in h2]

    def test_insufficient_class_samples(self):
        feats = np.eye(4)[:3]
        with pytest.raises(InsufficientClassSamples):
            train_offline(feats, np.array([0, 0, 1]), OfflineConfig(epochs=1))

    def test_margin_tightens_intra_and_widens_inter(self):
        # crowded geometry; the margin direction mirrors the angle analysis
        from protostream.data import SynthConfig, generate_synthetic

        cfg = SynthConfig(d=16, n_known=10, n_novel=0, samples_per_class=40,
                          noise_sigma=0.1, min_class_angle=0.35, seed=5)
        labeled, _ = generate_synthetic(cfg)
        res = {}
        for m in (0.0, 0.2):
            oc = OfflineConfig(epochs=15, learning_rate=0.02, seed=105, margin=m)
            adapter, _ = train_offline(labeled.primary, labeled.labels, oc)
            res[m] = angle_stats(labeled.primary, labeled.labels, adapter)
        assert res[0.2].intra.mean() < res[0.0].intra.mean()
        assert res[0.2].inter.mean() > res[0.0].inter.mean()

    def test_provided_second_views_used(self, rng):
        feats, labels = self.separable(rng)
        second = np.roll(feats, 1, axis=0)  # arbitrary but fixed
        cfg = OfflineConfig(epochs=2, seed=0)
        a1, _ = train_offline(feats, labels, cfg, second_views=second)
        a2, _ = train_offline(feats, labels, cfg, second_views=second)
        np.testing.assert_array_equal(a1.adapter_matrix, a2.adapter_matrix)


class TestAngleStats:
    def test_identical_samples_zero_intra(self):
        feats = np.tile(normalize(np.array([1.0, 2.0, 2.0])), (4, 1))
        labels = np.zeros(4, dtype=int)
        adapter = AdapterState.init(3, 1, seed=0, init_noise=0.0)
        stats = angle_stats(feats, labels, adapter)
        np.testing.assert_allclose(stats.intra, 0.0, atol=1e-5)

    def test_orthogonal_prototypes_ninety_degrees(self):
        feats = np.eye(4)[:2]
        labels = np.array([0, 1])
        adapter = AdapterState.init(4, 2, seed=0, init_noise=0.0)
        stats = angle_stats(feats, labels, adapter)
        assert stats.mean_inter_deg == pytest.approx(90.0, abs=1e-9)

    def test_matches_brute_force_loop(self, small_labeled):
        feats, labels = small_labeled
        adapter = AdapterState.init(10, 3, seed=4)
        stats = angle_stats(feats, labels, adapter)

        z = adapter.embed(feats)
        protos = []
        for c in range(3):
            mean = z[labels == c].mean(axis=0)
            protos.append(mean / np.linalg.norm(mean))
        intra = [np.arccos(np.clip(float(z[i] @ protos[labels[i]]), -1, 1))
                 for i in range(len(labels))]
        inter = [np.arccos(np.clip(float(protos[l] @ protos[m]), -1, 1))
                 for l in range(3) for m in range(l + 1, 3)]
        assert stats.intra.mean() == pytest.approx(np.mean(intra), abs=1e-6)
        assert stats.inter.mean() == pytest.approx(np.mean(inter), abs=1e-6)


class TestAdapterIO:
    def test_round_trip(self, tmp_path, rng):
        from protostream.offline import read_adapter, write_adapter

        adapter = AdapterState.init(6, 4, seed=9, use_bias=True)
        adapter.adapter_matrix += rng.normal(size=(6, 6))
        path = tmp_path / "a.ocda"
        write_adapter(path, adapter)
        back = read_adapter(path)
        np.testing.assert_allclose(back.adapter_matrix, adapter.adapter_matrix, atol=1e-6)
        np.testing.assert_allclose(back.head_weights, adapter.head_weights, atol=1e-6)
        assert back.adapter_bias is not None

    def test_truncation_detected(self, tmp_path):
        from protostream.data import TruncatedPayload
        from protostream.offline import read_adapter, write_adapter

        adapter = AdapterState.init(4, 2, seed=0)
        path = tmp_path / "a.ocda"
        write_adapter(path, adapter)
        path.write_bytes(path.read_bytes()[:-3])
        with pytest.raises(TruncatedPayload):
            read_adapter(path)

    def test_near_identity_init(self):
        adapter = AdapterState.init(16, 4, seed=0)
        assert np.abs(adapter.adapter_matrix - np.eye(16)).max() < 0.01
