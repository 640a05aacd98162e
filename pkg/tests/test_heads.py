import math

import numpy as np
import pytest

from mtlinear import (HeadEnsemble, LinearHead, VariateGrouping,
                      forward, forward_batch, init_head, load_checkpoint,
                      save_checkpoint)
from mtlinear.heads import decompose, moving_average

VARIANTS = ("linear", "nlinear", "dlinear", "rlinear")


class TestForward:
    def test_linear_hand_multiply(self):
        head = LinearHead(variant="linear", lookback=2, horizon=1,
                          thetas=[np.array([[1.0], [1.0], [0.0]])])
        pred = forward(head, np.array([[3.0], [4.0]]))
        assert pred.shape == (1, 1)
        assert pred[0, 0] == pytest.approx(7.0)

    def test_nlinear_zero_weights_returns_last_value(self):
        l, h, k = 5, 3, 2
        head = LinearHead(variant="nlinear", lookback=l, horizon=h,
                          thetas=[np.zeros((l + 1, h))])
        x = np.random.default_rng(0).normal(size=(l, k))
        pred = forward(head, x)
        for j in range(h):
            np.testing.assert_allclose(pred[j], x[-1])

    def test_dlinear_constant_lookback(self):
        x = np.full((1, 10, 3), 4.2)
        trend, remainder = decompose(x, kernel=5)
        np.testing.assert_allclose(trend, 4.2)
        np.testing.assert_allclose(remainder, 0.0)

    def test_decomposition_exact(self):
        x = np.random.default_rng(1).normal(size=(4, 30, 2))
        trend, remainder = decompose(x, kernel=25)
        assert np.max(np.abs(trend + remainder - x)) < 1e-12

    def test_moving_average_edge_replication(self):
        x = np.arange(5, dtype=float).reshape(1, 5, 1)
        trend = moving_average(x, kernel=3)
        # edges replicate: window at t=0 averages (0,0,1)
        np.testing.assert_allclose(trend[0, :, 0],
                                   [1 / 3, 1.0, 2.0, 3.0, 11 / 3])

    def test_rlinear_zero_weights_returns_window_mean(self):
        l, h, k = 6, 2, 3
        head = LinearHead(variant="rlinear", lookback=l, horizon=h,
                          thetas=[np.zeros((l + 1, h))])
        x = np.random.default_rng(2).normal(size=(l, k))
        pred = forward(head, x)
        for j in range(h):
            np.testing.assert_allclose(pred[j], x.mean(axis=0))

    @pytest.mark.parametrize("variant", VARIANTS)
    def test_linear_in_theta_residual_form(self, variant):
        rng = np.random.default_rng(3)
        l, h, k = 8, 4, 2
        x = rng.normal(size=(3, l, k))
        t1 = init_head(variant, l, h, seed=1).thetas
        t2 = init_head(variant, l, h, seed=2).thetas
        base = init_head(variant, l, h, seed=3)
        a, b = 0.7, -1.3

        def run(thetas):
            head = LinearHead(variant=variant, lookback=l, horizon=h,
                              thetas=[t.copy() for t in thetas],
                              ma_kernel=base.ma_kernel)
            return forward_batch(head, x)

        zero = run([np.zeros_like(t) for t in t1])  # variant's data offset
        combo = run([a * m1 + b * m2 for m1, m2 in zip(t1, t2)])
        expected = a * (run(t1) - zero) + b * (run(t2) - zero) + zero
        np.testing.assert_allclose(combo, expected, atol=1e-10)

    def test_shape_mismatch(self):
        head = init_head("linear", 4, 2, seed=0)
        with pytest.raises(ValueError):
            forward(head, np.zeros((5, 2)))


class TestInitHead:
    def test_same_seed_bitwise_identical(self):
        a = init_head("dlinear", 12, 5, seed=9)
        b = init_head("dlinear", 12, 5, seed=9)
        for ta, tb in zip(a.thetas, b.thetas):
            assert np.array_equal(ta, tb)

    def test_bias_row_zero(self):
        for variant in VARIANTS:
            head = init_head(variant, 7, 3, seed=1)
            for theta in head.thetas:
                np.testing.assert_array_equal(theta[-1], 0.0)

    def test_uniform_bound(self):
        l, h = 9, 1200  # ~12000 samples > 1e4
        head = init_head("linear", l, h, seed=4)
        bound = 1.0 / math.sqrt(l + 1)
        body = head.thetas[0][:-1]
        assert body.min() >= -bound and body.max() <= bound
        assert body.size >= 10_000

    def test_invalid_lengths(self):
        with pytest.raises(ValueError):
            init_head("linear", 0, 3, seed=0)
        with pytest.raises(ValueError):
            init_head("linear", 3, 0, seed=0)

    def test_dlinear_two_matrices_others_one(self):
        assert len(init_head("dlinear", 4, 2, seed=0).thetas) == 2
        for variant in ("linear", "nlinear", "rlinear"):
            assert len(init_head(variant, 4, 2, seed=0).thetas) == 1


def make_ensemble(clusters, l, h, seed=0, variant="linear"):
    grouping = VariateGrouping(clusters=tuple(tuple(c) for c in clusters),
                               alpha_bar=math.pi / 4)
    heads = [init_head(variant, l, h, seed=seed + i) for i in range(len(clusters))]
    return HeadEnsemble(heads=heads, grouping=grouping, lookback=l, horizon=h)


class TestEnsemblePredict:
    def test_single_cluster_equals_forward(self):
        rng = np.random.default_rng(5)
        ens = make_ensemble([(0, 1, 2)], l=6, h=3)
        x = rng.normal(size=(6, 3))
        np.testing.assert_array_equal(ens.predict(x), forward(ens.heads[0], x))

    def test_singletons_with_identical_weights_match_shared_head(self):
        rng = np.random.default_rng(6)
        l, h, k = 5, 2, 3
        shared = init_head("linear", l, h, seed=11)
        grouping = VariateGrouping(clusters=((0,), (1,), (2,)), alpha_bar=0.0)
        ens = HeadEnsemble(heads=[shared.copy() for _ in range(k)],
                           grouping=grouping, lookback=l, horizon=h)
        x = rng.normal(size=(l, k))
        np.testing.assert_allclose(ens.predict(x), forward(shared, x))

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(7)
        l, h, k = 6, 2, 5
        ens = make_ensemble([(0, 2), (1, 4), (3,)], l=l, h=h, variant="nlinear")
        x = rng.normal(size=(l, k))
        base = ens.predict(x)
        perm = rng.permutation(k)
        inv = np.argsort(perm)
        # permute input columns and relabel the grouping consistently
        permuted_clusters = tuple(tuple(sorted(int(inv[i]) for i in c))
                                  for c in ens.grouping.clusters)
        order = np.argsort([c[0] for c in permuted_clusters])
        grouping = VariateGrouping(
            clusters=tuple(permuted_clusters[i] for i in order),
            alpha_bar=ens.grouping.alpha_bar)
        # heads follow their clusters; a head applies the same weights to
        # every column it owns, so within-cluster order is irrelevant
        ens_p = HeadEnsemble(heads=[ens.heads[i].copy() for i in order],
                             grouping=grouping, lookback=l, horizon=h)
        pred_p = ens_p.predict(x[:, perm])
        np.testing.assert_allclose(pred_p, base[:, perm], atol=1e-12)

    def test_routing_is_bijection(self):
        ens = make_ensemble([(0, 3), (1,), (2, 4)], l=4, h=2)
        covered = sorted(i for c in ens.grouping.clusters for i in c)
        assert covered == list(range(5))

    def test_variate_count_mismatch(self):
        ens = make_ensemble([(0, 1)], l=4, h=2)
        with pytest.raises(ValueError):
            ens.predict(np.zeros((4, 3)))


class TestCheckpoint:
    def test_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(8)
        for variant in VARIANTS:
            ens = make_ensemble([(0, 1), (2,)], l=5, h=3, variant=variant)
            # perturb weights to non-trivial values
            for head in ens.heads:
                for theta in head.thetas:
                    theta += rng.normal(size=theta.shape)
            path = tmp_path / f"{variant}.json"
            save_checkpoint(ens, path)
            loaded, norm = load_checkpoint(path)
            assert norm is None
            assert loaded.grouping.clusters == ens.grouping.clusters
            for ha, hb in zip(loaded.heads, ens.heads):
                assert ha.variant == hb.variant
                for ta, tb in zip(ha.thetas, hb.thetas):
                    assert np.array_equal(ta, tb)  # exact float round trip

    def test_checkpoint_with_normalizer(self, tmp_path):
        from mtlinear import fit_normalizer
        from conftest import make_frame
        frame = make_frame(np.random.default_rng(9).normal(size=(30, 2)) * 7 + 3,
                           train_end=20, val_end=25)
        norm = fit_normalizer(frame)
        ens = make_ensemble([(0,), (1,)], l=4, h=2)
        path = tmp_path / "ck.json"
        save_checkpoint(ens, path, norm=norm)
        _, norm2 = load_checkpoint(path)
        assert np.array_equal(norm.mean_, norm2.mean_)
        assert np.array_equal(norm.std_, norm2.std_)

    def test_version_check(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"version": 99}')
        with pytest.raises(ValueError, match="version"):
            load_checkpoint(path)


class TestHeadValidation:
    def test_wrong_matrix_count(self):
        with pytest.raises(ValueError, match="weight matrices"):
            LinearHead(variant="dlinear", lookback=3, horizon=2,
                       thetas=[np.zeros((4, 2))])

    def test_wrong_shape(self):
        with pytest.raises(ValueError, match="shape"):
            LinearHead(variant="linear", lookback=3, horizon=2,
                       thetas=[np.zeros((3, 2))])

    def test_nonfinite_rejected(self):
        theta = np.zeros((4, 2))
        theta[0, 0] = np.inf
        with pytest.raises(ValueError, match="non-finite"):
            LinearHead(variant="linear", lookback=3, horizon=2, thetas=[theta])

    def test_unknown_variant(self):
        with pytest.raises(ValueError, match="variant"):
            LinearHead(variant="cubic", lookback=3, horizon=2,
                       thetas=[np.zeros((4, 2))])

    def test_even_kernel_rejected(self):
        with pytest.raises(ValueError, match="odd"):
            LinearHead(variant="dlinear", lookback=3, horizon=2,
                       thetas=[np.zeros((4, 2)), np.zeros((4, 2))], ma_kernel=4)

    def test_no_bias_shapes(self):
        head = init_head("linear", 4, 2, seed=0, use_bias=False)
        assert head.thetas[0].shape == (4, 2)
        pred = forward(head, np.ones((4, 1)))
        assert pred.shape == (2, 1)
