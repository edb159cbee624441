import numpy as np
import pytest

from spectra_ca import tensor as T
from spectra_ca.attention_net import (AttnMask, CrossAttnNet, NetConfig, RFFNet,
                                      count_cross_attn_params, init_net, matched_width)
from spectra_ca.errors import ConfigError, ContractError
from spectra_ca.feature_bank import BASE, TokenBank, tokenize

SMALL = NetConfig(d_in=2, m_base=16, K=1, sigma=0.5, d_q=16, n_heads=4, n_layers=2)


def reference_attention(net, Q, tokens, layer, offsets=None):
    """Textbook multi-head attention with explicit per-head K and V projections."""
    p = net.layers[layer]
    nh, dh = net.config.n_heads, net.head_dim
    q = Q @ p["W_Q"].data
    k = np.einsum("bnd,de->bne", tokens, p["W_K"].data)
    v = np.einsum("bnd,de->bne", tokens, p["W_V"].data)
    out = np.zeros_like(q)
    for h in range(nh):
        sl = slice(h * dh, (h + 1) * dh)
        logits = np.einsum("be,bne->bn", q[:, sl], k[:, :, sl]) / np.sqrt(dh)
        if offsets is not None:
            logits = logits + offsets
        w = np.exp(logits - logits.max(axis=1, keepdims=True))
        w /= w.sum(axis=1, keepdims=True)
        out[:, sl] = np.einsum("bn,bne->be", w, v[:, :, sl])
    return out


class TestInit:
    def test_head_width(self):
        net = init_net(NetConfig(), seed=0)
        assert net.head_dim == 16

    def test_bad_heads(self):
        with pytest.raises(ConfigError):
            init_net(NetConfig(d_q=10, n_heads=4))

    def test_deterministic(self):
        a, b = init_net(SMALL, seed=5), init_net(SMALL, seed=5)
        for name in a.params:
            assert a.params[name].data.tobytes() == b.params[name].data.tobytes()

    def test_glorot_and_zero_bias(self):
        net = init_net(SMALL, seed=1)
        limit = np.sqrt(6.0 / (16 + 16))
        assert np.all(np.abs(net.layers[0]["W_Q"].data) <= limit)
        assert not net.b0.data.any() and not net.b_out.data.any()

    def test_empty_stack(self):
        net = init_net(SMALL.__class__(**{**SMALL.to_dict(), "n_layers": 0}), seed=2)
        x = np.random.default_rng(0).uniform(-1, 1, (5, 2))
        expected = net.initial_latent(x).data @ net.W_out.data.T + net.b_out.data
        np.testing.assert_allclose(net(x).data, expected, atol=1e-15)

    def test_latent_input_shape(self):
        net = init_net(SMALL, variant="nn-ca")
        assert net.W0.shape == (16, 2)

    def test_param_count_independent_of_tokens(self):
        a = init_net(NetConfig(d_in=1, m_base=16, K=1, d_q=16))
        b = init_net(NetConfig(d_in=1, m_base=16, K=1, d_q=16))
        b.add_posterior([2, 20, 40])
        assert a.n_params() == b.n_params() == count_cross_attn_params(a.config)


class TestLatent:
    def test_zero_projection(self):
        net = init_net(SMALL)
        net.W0.data[:] = 0.0
        assert not net.initial_latent(np.ones((3, 2))).data.any()

    def test_range(self):
        net = init_net(SMALL, seed=3)
        q = net.initial_latent(np.random.default_rng(0).uniform(-5, 5, (50, 2))).data
        assert np.all(np.abs(q) < 1.0)


class TestCrossAttention:
    def test_matches_reference(self):
        net = init_net(SMALL, seed=4)
        x = np.random.default_rng(1).uniform(-1, 1, (6, 2))
        H = net.tokens(x)
        Q = net.initial_latent(x)
        got = net.cross_attention(Q, H, None, 1).data
        np.testing.assert_allclose(got, reference_attention(net, Q.data, H.tokens.data, 1), atol=1e-13)

    def test_single_token(self):
        net = init_net(SMALL, seed=6)
        tok = np.random.default_rng(2).standard_normal((3, 1, 16))
        H = TokenBank(T.Tensor(tok), [(0, 1, BASE)])
        Q = T.Tensor(np.random.default_rng(3).standard_normal((3, 16)))
        got = net.cross_attention(Q, H, None, 0).data
        np.testing.assert_allclose(got, tok[:, 0] @ net.layers[0]["W_V"].data, atol=1e-14)

    def test_weights_sum_to_one(self):
        net = init_net(SMALL, seed=7)
        x = np.random.default_rng(4).uniform(-1, 1, (5, 2))
        _, w = net.cross_attention(net.initial_latent(x), net.tokens(x), None, 0, return_weights=True)
        np.testing.assert_allclose(w.data.sum(axis=-1), 1.0, atol=1e-12)

    def test_all_masked_row_rejected(self):
        net = init_net(SMALL)
        x = np.zeros((1, 2))
        H = net.tokens(x)
        H.groups = [(0, H.n_tokens, "posterior")]
        with pytest.raises(ContractError):
            net.cross_attention(net.initial_latent(x), H, AttnMask(-np.inf), 0)

    def test_permuting_tokens(self):
        net = init_net(SMALL, seed=8)
        x = np.random.default_rng(5).uniform(-1, 1, (4, 2))
        H = net.tokens(x)
        Q = net.initial_latent(x)
        perm = np.random.default_rng(6).permutation(H.n_tokens)
        H2 = TokenBank(T.Tensor(H.tokens.data[:, perm]), H.groups)
        np.testing.assert_allclose(net.cross_attention(Q, H, None, 0).data,
                                   net.cross_attention(Q, H2, None, 0).data, atol=1e-13)


class TestMask:
    def setup_method(self):
        cfg = NetConfig(d_in=1, m_base=16, K=1, sigma=0.1, d_q=16, n_heads=4, n_layers=2)
        self.base = init_net(cfg, seed=3)
        self.aug = init_net(cfg, seed=3)
        self.aug.add_posterior([2, 20, 40], seed=3)
        self.x = np.random.default_rng(0).uniform(0, 1, (9, 1))

    def test_positive_strength_rejected(self):
        with pytest.raises(ContractError):
            AttnMask(0.5)

    def test_large_negative_equals_base_only(self):
        np.testing.assert_allclose(self.aug(self.x, AttnMask(-1e9)).data, self.base(self.x).data, atol=1e-9)

    def test_zero_equals_unmasked(self):
        assert np.array_equal(self.aug(self.x, AttnMask(0.0)).data, self.aug(self.x).data)

    def test_offsets_match_reference(self):
        H = self.aug.tokens(self.x)
        Q = self.aug.initial_latent(self.x)
        off = AttnMask(-6.0).offsets(H.groups)
        assert off[-1] == -6.0 and not off[:-1].any()
        got = self.aug.cross_attention(Q, H, AttnMask(-6.0), 0).data
        np.testing.assert_allclose(got, reference_attention(self.aug, Q.data, H.tokens.data, 0, off), atol=1e-13)

    def test_converges_as_strength_vanishes(self):
        full = self.aug(self.x).data
        gaps = [np.abs(self.aug(self.x, AttnMask(-eta)).data - full).max() for eta in (1.0, 1e-2, 1e-4)]
        assert gaps[0] > gaps[1] > gaps[2] and gaps[2] < 1e-4

    def test_posterior_only_for_scalar_input(self):
        with pytest.raises(ContractError):
            init_net(SMALL).add_posterior([1])


class TestForward:
    def test_zero_weights_give_bias(self):
        net = init_net(SMALL, seed=1)
        for layer in net.layers:
            for key in ("W_Q", "W_K", "W_V", "W_ffn"):
                layer[key].data[:] = 0.0
        net.W_out.data[:] = 0.0
        net.b_out.data[:] = 2.5
        assert np.all(net(np.random.default_rng(0).uniform(-1, 1, (7, 2))).data == 2.5)

    def test_residual_identity(self):
        net = init_net(SMALL, seed=2)
        for layer in net.layers:
            for key in ("W_V", "W_ffn"):
                layer[key].data[:] = 0.0
        x = np.random.default_rng(1).uniform(-1, 1, (4, 2))
        expected = net.initial_latent(x).data @ net.W_out.data.T + net.b_out.data
        np.testing.assert_allclose(net(x).data, expected, atol=1e-15)

    def test_deterministic(self):
        net = init_net(SMALL, seed=3)
        x = np.random.default_rng(2).uniform(-1, 1, (8, 2))
        assert net(x).data.tobytes() == net(x).data.tobytes()

    def test_gradients_match_finite_differences(self):
        net = init_net(SMALL, seed=4)
        x = np.random.default_rng(3).uniform(-1, 1, (6, 2))
        y = np.sin(3 * x[:, :1])
        loss = lambda: T.mean(T.square(T.sub(net(x), y)))
        assert T.fd_gradient_check(loss, net.parameters()) < 1e-6

    def test_masked_gradients(self):
        cfg = NetConfig(d_in=1, m_base=8, K=1, sigma=0.2, d_q=8, n_heads=2, n_layers=1)
        net = init_net(cfg, seed=5)
        net.add_posterior([1, 3], seed=5)
        x = np.linspace(0, 1, 5).reshape(-1, 1)
        loss = lambda: T.mean(T.square(net(x, AttnMask(-2.0))))
        assert T.fd_gradient_check(loss, net.parameters()) < 1e-6


class TestRffNet:
    def test_zero_weights_give_bias(self):
        net = init_net(SMALL, variant="rff-nn")
        net.W_out.data[:] = 0.0
        net.b_out.data[:] = -1.5
        assert np.all(net(np.ones((3, 2))).data == -1.5)

    def test_capacity_matched(self):
        cfg = NetConfig()
        ca, nn = init_net(cfg, variant="rff-ca"), init_net(cfg, variant="rff-nn")
        assert abs(nn.n_params() - ca.n_params()) / ca.n_params() < 0.15
        assert nn.width == matched_width(cfg)

    def test_gradients(self):
        net = RFFNet(SMALL, seed=6, width=12)
        x = np.random.default_rng(4).uniform(-1, 1, (6, 2))
        loss = lambda: T.mean(T.square(net(x)))
        assert T.fd_gradient_check(loss, net.parameters()) < 1e-6

    def test_unknown_variant(self):
        with pytest.raises(ConfigError):
            init_net(SMALL, variant="mlp")
