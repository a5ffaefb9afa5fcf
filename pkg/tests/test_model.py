import numpy as np
import pytest
from scipy import sparse

import dualdec as dd
from dualdec.errors import CheckpointError, ShapeError
from dualdec.graph import normalize_adjacency
from dualdec.linalg import LinearLayer
from dualdec.model import (TERMS, AeConfig, GaeConfig, LossWeights, ModelState,
                           ae_forward, ae_recon_loss, gae_recon_loss,
                           gcn_forward, init_model, inner_product_decode,
                           kl_divergence, load_checkpoint, loss_and_grads,
                           save_checkpoint, soft_assignment,
                           target_distribution, total_loss)
from _helpers import (fd_gradients, frozen_targets, gradcheck_instance,
                      max_rel_error)


def identity_layer(dim, act="identity"):
    return LinearLayer(np.eye(dim), np.zeros(dim), act)


def tiny_state():
    """n=2, m=3, d=2 model with hand-picked weights (oracle values frozen
    from a scalar-loop evaluation)."""
    enc = [
        LinearLayer(np.array([[0.1, 0.2], [-0.3, 0.4], [0.5, -0.6]]),
                    np.array([0.01, -0.02]), "relu"),
        LinearLayer(np.array([[1.0, 0.5], [-0.5, 0.25]]),
                    np.array([0.1, 0.2]), "identity"),
    ]
    dec = [
        LinearLayer(np.array([[0.3, -0.2], [0.7, 0.1]]),
                    np.array([0.05, 0.0]), "relu"),
        LinearLayer(np.array([[0.4, -0.1, 0.2], [-0.3, 0.6, 0.1]]),
                    np.array([0.0, 0.05, -0.05]), "sigmoid"),
    ]
    return ModelState(enc, dec, np.eye(3), np.eye(3),
                      np.zeros((2, 2)), np.zeros((2, 3)))


class TestAeForward:
    def test_zero_input_zero_bias_relu(self):
        rng = np.random.default_rng(0)
        cfg = AeConfig([4, 3, 2], "sigmoid")
        state = init_model(cfg, GaeConfig(4, 3, 2), 2, rng)
        z, x_hat = ae_forward(state, np.zeros((3, 4)))
        assert np.array_equal(z, np.zeros((3, 2)))
        assert np.allclose(x_hat, 0.5)  # sigmoid(0)

    def test_identity_configuration_reconstructs_input(self):
        state = ModelState([identity_layer(3)], [identity_layer(3)],
                           np.eye(3), np.eye(3), np.zeros((2, 3)), np.zeros((2, 3)))
        x = np.random.default_rng(1).normal(size=(4, 3))
        z, x_hat = ae_forward(state, x)
        assert np.array_equal(z, x) and np.array_equal(x_hat, x)

    def test_matches_scalar_loop_oracle(self):
        x = np.array([[0.5, -1.0, 2.0], [1.5, 0.25, -0.75]])
        z, x_hat = ae_forward(tiny_state(), x)
        assert np.allclose(z, [[1.4600000000000002, 0.8800000000000001],
                               [-0.31499999999999995, 0.4075]], atol=1e-14)
        assert np.allclose(x_hat, [[0.6086402126106079, 0.48490458892722654,
                                    0.542596495960791],
                                   [0.5162879847593056, 0.5220294788935583,
                                    0.5021312370926]], atol=1e-14)


class TestReconLosses:
    def test_ae_zero_at_exact_reconstruction(self):
        x = np.random.default_rng(2).normal(size=(4, 3))
        assert ae_recon_loss(x, x.copy()) == 0.0

    def test_ae_hand_value(self):
        assert ae_recon_loss(np.array([[1.0, 0.0]]), np.zeros((1, 2))) == 0.5

    def test_ae_residual_homogeneity(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(5, 4))
        x_hat = rng.normal(size=(5, 4))
        base = ae_recon_loss(x, x_hat)
        doubled = ae_recon_loss(x, x + 2.0 * (x_hat - x))
        assert doubled == pytest.approx(4.0 * base, rel=1e-12)

    def test_gae_zero_when_exact(self):
        a = np.array([[0.0, 1.0], [1.0, 0.0]])
        assert gae_recon_loss(a, a.copy()) == 0.0

    def test_gae_hand_value_single_node(self):
        a_hat = inner_product_decode(np.zeros((1, 1)))
        assert gae_recon_loss(sparse.csr_array((1, 1)), a_hat) == pytest.approx(0.125)

    def test_gae_sparse_equals_dense_path(self):
        rng = np.random.default_rng(4)
        dense = np.triu((rng.random((6, 6)) < 0.5).astype(float), 1)
        dense = dense + dense.T
        a_hat = rng.random((6, 6))
        a_hat = (a_hat + a_hat.T) / 2
        assert gae_recon_loss(sparse.csr_array(dense), a_hat) == pytest.approx(
            gae_recon_loss(dense, a_hat), rel=1e-12)

    def test_gae_permutation_invariance(self):
        rng = np.random.default_rng(5)
        dense = np.triu((rng.random((5, 5)) < 0.5).astype(float), 1)
        dense = dense + dense.T
        a_hat = rng.random((5, 5))
        perm = rng.permutation(5)
        assert gae_recon_loss(dense, a_hat) == pytest.approx(
            gae_recon_loss(dense[np.ix_(perm, perm)], a_hat[np.ix_(perm, perm)]))


class TestGcnForward:
    def test_isolated_node_is_mlp_on_its_row(self):
        rng = np.random.default_rng(6)
        state = init_model(AeConfig([3, 3, 2], "sigmoid"), GaeConfig(3, 4, 2), 2, rng)
        x = rng.normal(size=(1, 3))
        norm = normalize_adjacency(sparse.csr_array((1, 1)))
        z = gcn_forward(state, norm, x)
        expected = np.maximum(x @ state.gcn_w1, 0.0) @ state.gcn_w2
        assert np.allclose(z, expected, atol=1e-15)

    def test_identical_connected_nodes_share_embeddings(self):
        rng = np.random.default_rng(7)
        state = init_model(AeConfig([3, 3, 2], "sigmoid"), GaeConfig(3, 4, 2), 2, rng)
        x = np.tile(rng.normal(size=(1, 3)), (2, 1))
        adj = sparse.csr_array(np.array([[0.0, 1.0], [1.0, 0.0]]))
        z = gcn_forward(state, normalize_adjacency(adj), x)
        assert np.allclose(z[0], z[1], atol=1e-14)

    def test_path_graph_identity_weights_hand_matrix(self):
        # with identity weights and nonnegative input, z = M @ M @ x where M
        # is the hand-built normalized adjacency of the 3-node path
        s = 0.4082482904638631  # 1/sqrt(6)
        m_hand = np.array([[0.5, s, 0.0], [s, 1.0 / 3.0, s], [0.0, s, 0.5]])
        x = np.eye(3)
        state = tiny_state()
        adj = sparse.csr_array(np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=float))
        z = gcn_forward(state, normalize_adjacency(adj), x)
        assert np.allclose(z, m_hand @ m_hand @ x, atol=1e-12)


class TestInnerProductDecode:
    def test_zero_embedding_gives_half(self):
        assert np.allclose(inner_product_decode(np.zeros((3, 2))), 0.5)

    def test_orthogonal_unit_rows(self):
        a_hat = inner_product_decode(np.eye(2))
        assert a_hat[0, 1] == pytest.approx(0.5)
        assert a_hat[0, 0] == pytest.approx(0.7310585786300049, abs=1e-12)

    def test_symmetry(self):
        z = np.random.default_rng(8).normal(size=(5, 3))
        a_hat = inner_product_decode(z)
        assert np.array_equal(a_hat, a_hat.T)
        assert np.all((a_hat > 0) & (a_hat < 1))


class TestSoftAssignment:
    def test_single_cluster(self):
        z = np.random.default_rng(9).normal(size=(4, 2))
        q = soft_assignment(z, z.mean(axis=0, keepdims=True))
        assert np.allclose(q, 1.0)

    def test_equidistant_point_splits_evenly(self):
        q = soft_assignment(np.array([[0.0, 0.0]]),
                            np.array([[1.0, 0.0], [-1.0, 0.0]]))
        assert np.allclose(q, 0.5)

    def test_hand_value_1d(self):
        q = soft_assignment(np.array([[0.0]]), np.array([[0.0], [1.0]]))
        assert np.allclose(q, [[2.0 / 3.0, 1.0 / 3.0]], atol=1e-15)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(10)
        q = soft_assignment(rng.normal(size=(50, 4)), rng.normal(size=(6, 4)))
        assert np.allclose(q.sum(axis=1), 1.0, atol=1e-9)
        assert np.all((q > 0) & (q < 1))


class TestTargetDistribution:
    def test_uniform_stays_uniform(self):
        q = np.full((5, 4), 0.25)
        assert np.allclose(target_distribution(q), 0.25)

    def test_single_row_is_fixed_point(self):
        # with one row the cluster masses equal the assignments, so the
        # squared/renormalized form collapses back to q itself
        q = np.array([[0.2, 0.5, 0.3]])
        assert np.allclose(target_distribution(q), q, atol=1e-15)

    def test_sharpening_preserves_argmax_with_balanced_masses(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            row = rng.dirichlet(np.ones(3))
            if row.max() <= 1.0 / 3.0 + 1e-9:
                continue
            q = np.vstack([row, np.roll(row, 1), np.roll(row, 2)])  # equal column sums
            p = target_distribution(q)
            assert p[0].argmax() == row.argmax()
            assert p[0].max() >= row.max() - 1e-12

    def test_one_hot_rows_are_fixed(self):
        q = np.eye(3)[[0, 1, 2, 0, 1]]
        assert np.allclose(target_distribution(q), q)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(12)
        q = soft_assignment(rng.normal(size=(20, 3)), rng.normal(size=(4, 3)))
        p = target_distribution(q)
        assert np.allclose(p.sum(axis=1), 1.0, atol=1e-12)


class TestKlDivergence:
    def test_equal_distributions(self):
        q = np.array([[0.3, 0.7], [0.5, 0.5]])
        assert kl_divergence(q, q.copy()) == 0.0

    def test_hand_value_log2(self):
        value = kl_divergence(np.array([[1.0, 0.0]]), np.array([[0.5, 0.5]]))
        assert value == pytest.approx(0.6931471805599453, abs=1e-15)

    def test_nonnegative(self):
        rng = np.random.default_rng(13)
        for _ in range(50):
            p = rng.dirichlet(np.ones(4), size=6)
            q = rng.dirichlet(np.ones(4), size=6)
            assert kl_divergence(p, q) >= 0.0

    def test_zero_iff_equal(self):
        rng = np.random.default_rng(14)
        p = rng.dirichlet(np.ones(3), size=4)
        q = rng.dirichlet(np.ones(3), size=4)
        assert kl_divergence(p, q) > 1e-12 or np.allclose(p, q, atol=1e-12)


class TestTotalLoss:
    def build(self, seed=15):
        rng = np.random.default_rng(seed)
        net = dd.generate(dd.LfrSpec(n=60, mu=0.3, avg_degree=6, max_degree=10,
                                     c_min=15, c_max=30, attr_dim=20,
                                     attrs_per_cluster=4, noise_ratio=0.1, seed=seed))
        state = init_model(AeConfig([20, 8, 4], "sigmoid"), GaeConfig(20, 8, 4),
                           net.num_clusters, rng)
        state.centers_a[...] = rng.normal(size=state.centers_a.shape)
        state.centers_g[...] = rng.normal(size=state.centers_g.shape)
        return state, net

    def test_zero_weights_reduce_to_reconstruction(self):
        state, net = self.build()
        total, terms = total_loss(state, net, LossWeights(0.0, 0.0, 0.0))
        assert total == pytest.approx(terms["l_are"] + terms["l_gre"], rel=1e-12)

    def test_consistency_term_zero_when_assignments_match(self):
        # same embedding source and centers on both sides forces q_g == q_a
        rng = np.random.default_rng(16)
        z = rng.normal(size=(10, 3))
        centers = rng.normal(size=(4, 3))
        q = soft_assignment(z, centers)
        assert kl_divergence(q, q.copy()) == 0.0

    def test_recomposition(self):
        state, net = self.build()
        weights = LossWeights(0.37, 0.21, 0.83)
        total, terms = total_loss(state, net, weights)
        recomposed = (terms["l_are"] + weights.alpha * terms["kl_a"]
                      + terms["l_gre"] + weights.beta * terms["kl_g"]
                      + weights.gamma * terms["kl_con"])
        assert total == pytest.approx(recomposed, abs=1e-12)


class TestGradients:
    def test_each_term_and_full_match_finite_differences(self):
        rng = np.random.default_rng(17)
        for rep in range(3):
            state, x, adj, norm = gradcheck_instance(rng)
            targets = frozen_targets(state, x, adj, norm)
            for name in list(TERMS) + ["full"]:
                if name == "full":
                    coeffs = {"l_are": 1.0, "kl_a": 0.7, "l_gre": 1.0,
                              "kl_g": 0.3, "kl_con": 0.9}
                else:
                    coeffs = {t: 1.0 if t == name else 0.0 for t in TERMS}
                _, _, grads, _ = loss_and_grads(state, x, adj, norm, coeffs, targets)
                fd = fd_gradients(state, x, adj, norm, coeffs, targets)
                assert max_rel_error(grads, fd) <= 1e-4, f"term {name}, rep {rep}"

    def test_gamma_zero_decouples_modules(self):
        rng = np.random.default_rng(18)
        state, x, adj, norm = gradcheck_instance(rng)
        coeffs = {"l_are": 1.0, "kl_a": 0.5, "l_gre": 1.0, "kl_g": 0.5, "kl_con": 0.0}
        targets = frozen_targets(state, x, adj, norm)
        _, _, grads_before, _ = loss_and_grads(state, x, adj, norm, coeffs, targets)
        for layer in state.ae_encoder + state.ae_decoder:
            layer.weight += rng.normal(scale=0.05, size=layer.weight.shape)
        _, _, grads_after, _ = loss_and_grads(state, x, adj, norm, coeffs, targets)
        for name in ("gcn_w1", "gcn_w2", "centers_g"):
            assert np.array_equal(grads_before[name], grads_after[name])
        # and the coupling really does appear once gamma is on
        coeffs["kl_con"] = 1.0
        _, _, grads_on, _ = loss_and_grads(state, x, adj, norm, coeffs, targets)
        assert not np.allclose(grads_on["centers_a"], grads_after["centers_a"])


class TestCheckpoint:
    def roundtrip(self, tmp_path):
        rng = np.random.default_rng(19)
        ae = AeConfig([6, 5, 3], "identity")
        gae = GaeConfig(6, 4, 3)
        state = init_model(ae, gae, 2, rng)
        state.centers_a[...] = rng.normal(size=(2, 3))
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, state, ae, gae, extra={"seed": 7})
        return state, path

    def test_round_trip_bit_identical(self, tmp_path):
        state, path = self.roundtrip(tmp_path)
        loaded, ae_cfg, gae_cfg, extra = load_checkpoint(path)
        assert extra == {"seed": 7}
        assert ae_cfg.layer_dims == [6, 5, 3]
        for name, value in state.parameters().items():
            assert np.array_equal(value, loaded.parameters()[name]), name

    def test_bad_magic_rejected(self, tmp_path):
        _, path = self.roundtrip(tmp_path)
        data = bytearray(path.read_bytes())
        data[0] ^= 0xFF
        path.write_bytes(bytes(data))
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_bad_version_rejected(self, tmp_path):
        _, path = self.roundtrip(tmp_path)
        data = bytearray(path.read_bytes())
        data[8] = 99
        path.write_bytes(bytes(data))
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_truncated_file_rejected(self, tmp_path):
        _, path = self.roundtrip(tmp_path)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) - 16])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_shape_mismatch_rejected(self, tmp_path):
        rng = np.random.default_rng(20)
        ae = AeConfig([6, 5, 3], "identity")
        gae = GaeConfig(6, 4, 3)
        state = init_model(ae, gae, 2, rng)
        # lie about the AE dims in the config echo
        wrong = AeConfig([6, 4, 3], "identity")
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, state, wrong, gae)
        with pytest.raises(CheckpointError):
            load_checkpoint(path)


class TestConfigValidation:
    def test_ae_needs_two_encoder_layers(self):
        with pytest.raises(ShapeError):
            AeConfig([10, 5]).validate()

    def test_ae_binary_detection(self):
        binary = np.array([[0.0, 1.0], [1.0, 0.0]])
        cfg = AeConfig.for_attributes(binary, (4,), 2)
        assert cfg.decoder_final_activation == "sigmoid"
        cfg = AeConfig.for_attributes(binary + 0.5, (4,), 2)
        assert cfg.decoder_final_activation == "identity"

    def test_weights_nonnegative(self):
        with pytest.raises(ShapeError):
            LossWeights(-0.1, 0.0, 0.0).validate()
