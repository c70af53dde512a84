import numpy as np
import pytest

from bcda import bls
from bcda.errors import DimensionMismatch, StaleCache

from conftest import rel_err, svd_ridge

LAM = 2.0**-30


def small_net(rng, d=3, n=4, m=12, k=1, lam=LAM):
    return bls.bls_init(d, k, n, m, 0.8, lam, rng)


def scratch_predictions(net, X, Y, X_eval):
    """Independent oracle: same hidden weights, hand-built design matrix, SVD ridge fit."""
    Z = np.tanh(X @ net.W_f + net.beta_f)
    A = np.hstack([Z, np.tanh(Z @ net.W_e + net.beta_e)])
    W = svd_ridge(A, Y, net.lam)
    Ze = np.tanh(X_eval @ net.W_f + net.beta_f)
    return np.hstack([Ze, np.tanh(Ze @ net.W_e + net.beta_e)]) @ W


def regression_data(rng, N=200, d=3):
    X = rng.uniform(-1, 1, (N, d))
    Y = (np.sin(2 * X[:, :1]) + X[:, 1:2] * X[:, 2:3])
    return X, Y


class TestInit:
    def test_base_critic_size(self, rng):
        net = bls.bls_init(5, 1, 10, 500, 0.8, LAM, rng)
        assert net.W_out.shape == (510, 1)
        assert np.all(net.W_out == 0)

    def test_shrinkage_bounds_enhancement_weights(self, rng):
        net = bls.bls_init(5, 1, 10, 500, 0.8, LAM, rng)
        assert np.max(np.abs(net.W_e)) <= 0.8
        assert np.max(np.abs(net.W_f)) <= 1.0

    def test_seeded_determinism(self):
        a = bls.bls_init(4, 1, 3, 7, 0.8, LAM, np.random.default_rng(3))
        b = bls.bls_init(4, 1, 3, 7, 0.8, LAM, np.random.default_rng(3))
        for name in ("W_f", "beta_f", "W_e", "beta_e", "W_out"):
            np.testing.assert_array_equal(getattr(a, name), getattr(b, name))

    @pytest.mark.parametrize("kwargs", [
        dict(shrinkage=0.0), dict(shrinkage=1.5), dict(lam=0.0), dict(n_feature=0),
    ])
    def test_bad_arguments(self, rng, kwargs):
        args = dict(input_dim=2, out_dim=1, n_feature=2, m_enhance=2, shrinkage=0.8, lam=1.0)
        args.update(kwargs)
        with pytest.raises(ValueError):
            bls.bls_init(rng=rng, **args)


class TestForward:
    def test_zero_input_zero_bias(self, rng):
        net = small_net(rng)
        net.beta_f[:] = 0
        net.beta_e[:] = 0
        assert np.all(bls.build_design_matrix(net, np.zeros((1, 3))) == 0)

    def test_hand_computed_scalar_chain(self):
        net = bls.BlsNet(
            W_f=np.array([[0.7]]), beta_f=np.array([-0.2]), W_e=np.array([[0.5]]),
            beta_e=np.array([0.1]), W_out=np.array([[2.0], [-3.0]]), shrinkage=0.8, lam=1.0,
        )
        x = 0.4
        z = np.tanh(0.7 * x - 0.2)
        h = np.tanh(0.5 * z + 0.1)
        A = bls.build_design_matrix(net, np.array([[x]]))
        np.testing.assert_allclose(A, [[z, h]], atol=1e-12)
        np.testing.assert_allclose(bls.bls_forward(net, np.array([x])), [2 * z - 3 * h], atol=1e-12)

    def test_design_shape(self, rng):
        net = bls.bls_init(5, 1, 10, 500, 0.8, LAM, rng)
        assert bls.build_design_matrix(net, rng.standard_normal((64, 5))).shape == (64, 510)

    def test_zero_output_weights(self, rng):
        net = small_net(rng)
        assert np.all(bls.bls_forward(net, rng.standard_normal((5, 3))) == 0)

    def test_row_independence(self, rng):
        net = small_net(rng)
        net.W_out = rng.standard_normal(net.W_out.shape)
        X = rng.standard_normal((6, 3))
        np.testing.assert_allclose(bls.bls_forward(net, X[2]), bls.bls_forward(net, X)[2], rtol=1e-14)

    def test_wrong_width(self, rng):
        with pytest.raises(DimensionMismatch):
            bls.bls_forward(small_net(rng), np.ones((2, 4)))


class TestFit:
    def test_zero_targets(self, rng):
        net = small_net(rng)
        rep = bls.fit_output_weights(net, rng.standard_normal((20, 3)), np.zeros((20, 1)))
        assert rep.rmse == 0
        assert np.all(net.W_out == 0)

    def test_realizable_targets(self, rng):
        net = small_net(rng, n=5, m=20)
        X = rng.uniform(-1, 1, (100, 3))
        A = bls.build_design_matrix(net, X)
        Y = A @ rng.standard_normal((25, 1))
        rep = bls.fit_output_weights(net, X, Y)
        assert rep.rmse < 1e-6
        np.testing.assert_allclose(bls.bls_forward(net, X), Y, atol=1e-5)

    def test_supervised_sine(self, rng):
        net = bls.bls_init(1, 1, 10, 500, 0.8, LAM, rng)
        x = rng.uniform(-1, 1, (500, 1))
        rep = bls.fit_output_weights(net, x, np.sin(3 * x) + 0.5 * np.cos(7 * x))
        assert rep.rmse < 0.01

    def test_matches_scratch_oracle(self, rng):
        net = small_net(rng)
        X, Y = regression_data(rng)
        bls.fit_output_weights(net, X, Y)
        Xe = rng.uniform(-1, 1, (50, 3))
        assert rel_err(bls.bls_forward(net, Xe), scratch_predictions(net, X, Y, Xe)) < 1e-5

    def test_pinv_cached(self, rng):
        net = small_net(rng)
        X, Y = regression_data(rng, N=40)
        bls.fit_output_weights(net, X, Y)
        P = net.cached_A_pinv
        np.testing.assert_allclose(P @ Y, net.W_out, rtol=1e-8, atol=1e-10)

    def test_hidden_weights_frozen(self, rng):
        net = small_net(rng)
        frozen = [a.copy() for a in (net.W_f, net.beta_f, net.W_e, net.beta_e)]
        X, Y = regression_data(rng, N=30)
        bls.fit_output_weights(net, X, Y)
        other = net.copy()
        other.W_out = rng.standard_normal(other.W_out.shape)
        bls.polyak_output_weights(net, other, 0.3)
        for a, b in zip(frozen, (net.W_f, net.beta_f, net.W_e, net.beta_e)):
            np.testing.assert_array_equal(a, b)


class TestGrowth:
    def test_requires_fit(self, rng):
        net = small_net(rng)
        with pytest.raises(StaleCache):
            bls.add_enhancement_nodes(net, 2, np.ones((4, 3)), np.ones((4, 1)), rng)

    def test_requires_same_batch(self, rng):
        net = small_net(rng)
        X, Y = regression_data(rng, N=30)
        bls.fit_output_weights(net, X, Y)
        with pytest.raises(StaleCache):
            bls.add_enhancement_nodes(net, 2, X + 1.0, Y, rng)

    @pytest.mark.parametrize("q", [1, 7])
    def test_enhancement_growth_matches_scratch(self, rng, q):
        net = small_net(rng)
        X, Y = regression_data(rng)
        before = bls.fit_output_weights(net, X, Y).rmse
        after = bls.add_enhancement_nodes(net, q, X, Y, rng).rmse
        assert net.m_enhance == 12 + q
        assert net.W_out.shape[0] == net.n_nodes
        assert after <= before + 1e-9
        Xe = rng.uniform(-1, 1, (50, 3))
        assert rel_err(bls.bls_forward(net, Xe), scratch_predictions(net, X, Y, Xe)) < 1e-5

    @pytest.mark.parametrize("q,extra", [(1, None), (3, 0), (2, 5)])
    def test_feature_growth_matches_scratch(self, rng, q, extra):
        net = small_net(rng)
        X, Y = regression_data(rng)
        before = bls.fit_output_weights(net, X, Y).rmse
        after = bls.add_feature_nodes(net, q, X, Y, rng, enhance_count=extra).rmse
        expected_extra = round(q * 12 / 4) if extra is None else extra
        assert (net.n_feature, net.m_enhance) == (4 + q, 12 + expected_extra)
        assert after <= before + 1e-9
        Xe = rng.uniform(-1, 1, (50, 3))
        assert rel_err(bls.bls_forward(net, Xe), scratch_predictions(net, X, Y, Xe)) < 1e-5

    def test_old_enhancement_nodes_ignore_new_features(self, rng):
        net = small_net(rng)
        X, Y = regression_data(rng, N=40)
        bls.fit_output_weights(net, X, Y)
        bls.add_feature_nodes(net, 2, X, Y, rng, enhance_count=3)
        assert np.all(net.W_e[4:, :12] == 0)
        assert np.all(net.W_e[:4, 12:] == 0)

    def test_feature_growth_rejects_zero(self, rng):
        net = small_net(rng)
        X, Y = regression_data(rng, N=30)
        bls.fit_output_weights(net, X, Y)
        with pytest.raises(ValueError):
            bls.add_feature_nodes(net, 0, X, Y, rng)

    def test_growth_plan_invariant(self):
        with pytest.raises(ValueError):
            bls.BlsGrowthPlan(0, 0)
        with pytest.raises(ValueError):
            bls.BlsGrowthPlan(-1, 3)

    def test_scheme2_node_counts(self, rng):
        net = bls.bls_init(5, 1, 10, 500, 0.8, LAM, rng)
        X = rng.uniform(-1, 1, (300, 5))
        Y = np.sin(X.sum(axis=1, keepdims=True))
        bls.fit_output_weights(net, X, Y)
        for _ in range(5):
            bls.grow(net, bls.BlsGrowthPlan(1, 20), X, Y, rng)
        assert (net.n_feature, net.m_enhance) == (15, 600)

    def test_deterministic_growth(self):
        def run():
            r = np.random.default_rng(5)
            net = small_net(r)
            X, Y = regression_data(r, N=60)
            bls.fit_output_weights(net, X, Y)
            bls.add_enhancement_nodes(net, 3, X, Y, r)
            bls.add_feature_nodes(net, 1, X, Y, r)
            return net
        a, b = run(), run()
        np.testing.assert_array_equal(a.W_out, b.W_out)
        np.testing.assert_array_equal(a.W_e, b.W_e)


def central_jacobian(net, x, h=1e-5):
    J = np.zeros((net.out_dim, net.input_dim))
    for j in range(net.input_dim):
        e = np.zeros_like(x)
        e[j] = h
        J[:, j] = (bls.bls_forward(net, x + e) - bls.bls_forward(net, x - e)) / (2 * h)
    return J


class TestInputGradient:
    def test_zero_output_weights(self, rng):
        net = small_net(rng)
        assert np.all(bls.input_gradient(net, rng.standard_normal(3)) == 0)

    def test_matches_finite_differences(self, rng):
        for _ in range(50):
            net = small_net(rng, d=4, n=5, m=30, k=2)
            net.W_out = rng.standard_normal(net.W_out.shape)
            x = rng.uniform(-1.5, 1.5, 4)
            J = bls.input_gradient(net, x)
            assert J.shape == (2, 4)
            fd = central_jacobian(net, x)
            assert np.max(np.abs(J - fd)) / max(np.max(np.abs(fd)), 1e-12) < 1e-4

    def test_dead_enhancement_path(self, rng):
        net = small_net(rng)
        net.W_e[:] = 0
        net.W_out = rng.standard_normal(net.W_out.shape)
        x = rng.standard_normal(3)
        z = np.tanh(x @ net.W_f + net.beta_f)
        expected = (net.W_out[:4].T * (1 - z * z)) @ net.W_f.T
        np.testing.assert_allclose(bls.input_gradient(net, x), expected, rtol=1e-12)

    def test_batch_and_scalar_paths_agree(self, rng):
        net = small_net(rng)
        net.W_out = rng.standard_normal(net.W_out.shape)
        X = rng.standard_normal((9, 3))
        J = bls.input_gradient(net, X)
        assert J.shape == (9, 1, 3)
        np.testing.assert_allclose(bls.scalar_input_gradient(net, X), J[:, 0, :], rtol=1e-12, atol=1e-14)


class TestPolyak:
    def setup_method(self):
        r = np.random.default_rng(0)
        self.src = small_net(r)
        self.src.W_out = r.standard_normal(self.src.W_out.shape)
        self.tgt = self.src.copy()
        self.tgt.W_out = r.standard_normal(self.tgt.W_out.shape)

    def test_rho_one_keeps_target(self):
        before = self.tgt.W_out.copy()
        bls.polyak_output_weights(self.tgt, self.src, 1.0)
        np.testing.assert_array_equal(self.tgt.W_out, before)

    def test_rho_zero_copies_source(self):
        bls.polyak_output_weights(self.tgt, self.src, 0.0)
        np.testing.assert_array_equal(self.tgt.W_out, self.src.W_out)

    def test_half(self):
        self.tgt.W_out[:] = 0
        bls.polyak_output_weights(self.tgt, self.src, 0.5)
        np.testing.assert_allclose(self.tgt.W_out, 0.5 * self.src.W_out)

    def test_node_count_mismatch(self, rng):
        X, Y = regression_data(rng, N=30)
        bls.fit_output_weights(self.src, X, Y)
        bls.add_enhancement_nodes(self.src, 2, X, Y, rng)
        with pytest.raises(DimensionMismatch):
            bls.polyak_output_weights(self.tgt, self.src, 0.5)

    def test_sync_hidden_appends_new_rows(self, rng):
        X, Y = regression_data(rng, N=60)
        bls.fit_output_weights(self.src, X, Y)
        old = self.tgt.W_out.copy()
        bls.add_feature_nodes(self.src, 1, X, Y, rng, enhance_count=2)
        bls.add_enhancement_nodes(self.src, 3, X, Y, rng)
        bls.sync_hidden(self.tgt, self.src)
        np.testing.assert_array_equal(self.tgt.W_e, self.src.W_e)
        np.testing.assert_array_equal(self.tgt.W_f, self.src.W_f)
        assert self.tgt.W_out.shape == self.src.W_out.shape
        np.testing.assert_array_equal(self.tgt.W_out[:4], old[:4])
        np.testing.assert_array_equal(self.tgt.W_out[5:17], old[4:])
        np.testing.assert_array_equal(self.tgt.W_out[4], self.src.W_out[4])
        np.testing.assert_array_equal(self.tgt.W_out[17:], self.src.W_out[17:])


def test_checkpoint_roundtrip(tmp_path, rng):
    net = small_net(rng, k=2)
    net.W_out = rng.standard_normal(net.W_out.shape)
    path = tmp_path / "net.bin"
    bls.save_bls(net, path)
    back = bls.load_bls(path)
    for name in ("W_f", "beta_f", "W_e", "beta_e", "W_out"):
        np.testing.assert_array_equal(getattr(back, name), getattr(net, name))
    assert (back.shrinkage, back.lam) == (net.shrinkage, net.lam)
    raw = path.read_bytes()
    assert raw[:8] == b"BLSNET01"
    header = np.frombuffer(raw[8:40], dtype="<i8")
    assert list(header) == [3, 2, 4, 12]
    # W_f follows the header and two scalars, row-major little-endian
    np.testing.assert_array_equal(np.frombuffer(raw[56:56 + 8 * 12], dtype="<f8").reshape(3, 4), net.W_f)
