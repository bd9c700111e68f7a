"""Branch extractors and fusion: contracts, hand examples, gradient checks."""

import numpy as np
import pytest

from pvcast.nets.extractors import (
    AttentionFusion,
    BiLstmExtractor,
    CnnExtractor,
    FeatureNetwork,
    ITransformerExtractor,
)
from pvcast.nets.gradcheck import grad_check
from pvcast.nets.layers import BiLSTM, LSTM, MultiHeadAttention
from pvcast.nets.tensor import Tensor


def rng(seed: int = 0) -> np.random.Generator:
    return np.random.default_rng(seed)


class TestCnnExtractor:
    def test_output_shape_various_lengths(self):
        net = CnnExtractor(out_dim=16, channels=8, rng=rng(1))
        for steps in (4, 7, 12, 30):
            out = net(Tensor(rng(2).normal(size=(3, steps, 1))))
            assert out.shape == (3, 16)

    def test_too_short_window_rejected_with_minimum(self):
        net = CnnExtractor(out_dim=8, channels=4, rng=rng(3))
        with pytest.raises(ValueError, match=str(net.min_steps)):
            net(Tensor(np.zeros((1, net.min_steps - 1, 1))))

    def test_minimum_steps_for_default_config(self):
        assert CnnExtractor(out_dim=4, channels=2, rng=rng(4)).min_steps == 4

    def test_eval_mode_deterministic(self):
        net = CnnExtractor(out_dim=8, channels=4, rng=rng(5))
        net.eval()
        x = Tensor(rng(6).normal(size=(2, 12, 1)))
        np.testing.assert_array_equal(net(x).data, net(x).data)

    def test_train_mode_dropout_varies(self):
        net = CnnExtractor(out_dim=8, channels=4, dropout=0.5, rng=rng(7))
        x = Tensor(rng(8).normal(size=(2, 12, 1)))
        assert not np.array_equal(net(x).data, net(x).data)

    def test_multichannel_input_rejected(self):
        net = CnnExtractor(out_dim=8, channels=4, rng=rng(9))
        with pytest.raises(ValueError, match="single"):
            net(Tensor(np.zeros((1, 12, 2))))

    def test_gradients(self):
        net = CnnExtractor(out_dim=4, channels=3, dropout=0.0, rng=rng(10))
        x = Tensor(rng(11).normal(size=(2, 8, 1)))
        report = grad_check(
            lambda: (net(x) ** 2).sum(), net.parameters(), tolerance=1e-4,
            max_entries_per_param=6, rng=rng(12),
        )
        assert report.passed, report.worst_param


class TestITransformerExtractor:
    def test_output_shape(self):
        net = ITransformerExtractor(lookback=12, out_dim=16, d_model=32, depth=2, heads=4, rng=rng(13))
        out = net(Tensor(rng(14).normal(size=(3, 12, 5))))
        assert out.shape == (3, 16)

    def test_single_variable_token(self):
        net = ITransformerExtractor(lookback=8, out_dim=4, d_model=16, depth=1, heads=2, rng=rng(15))
        out = net(Tensor(rng(16).normal(size=(2, 8, 1))))
        assert out.shape == (2, 4)
        # with one token every attention row is the single weight 1
        np.testing.assert_allclose(net.blocks[0].attn.last_attention, 1.0)

    def test_variable_order_invariance(self):
        net = ITransformerExtractor(lookback=6, out_dim=8, d_model=16, depth=2, heads=2, rng=rng(17))
        x = rng(18).normal(size=(2, 6, 4))
        perm = [2, 0, 3, 1]
        out_a = net(Tensor(x)).data
        out_b = net(Tensor(x[:, :, perm])).data
        np.testing.assert_allclose(out_a, out_b, atol=1e-10)

    def test_wrong_lookback_rejected(self):
        net = ITransformerExtractor(lookback=12, rng=rng(19))
        with pytest.raises(ValueError, match="12"):
            net(Tensor(np.zeros((1, 6, 2))))

    def test_gradients(self):
        net = ITransformerExtractor(lookback=5, out_dim=3, d_model=8, depth=1, heads=2, rng=rng(20))
        x = Tensor(rng(21).normal(size=(2, 5, 2)))
        report = grad_check(
            lambda: (net(x) ** 2).sum(), net.parameters(), tolerance=1e-4,
            max_entries_per_param=6, rng=rng(22),
        )
        assert report.passed, report.worst_param


class TestBiLstmExtractor:
    def test_output_shape(self):
        net = BiLstmExtractor(input_size=4, out_dim=16, hidden_size=8, num_layers=2, rng=rng(23))
        out = net(Tensor(rng(24).normal(size=(3, 12, 4))))
        assert out.shape == (3, 16)

    def test_palindrome_with_tied_weights_is_symmetric(self):
        net = BiLSTM(1, 4, num_layers=1, rng=rng(25))
        fwd, bwd = net.forward_layers[0], net.backward_layers[0]
        for name in ("w_f", "w_i", "w_u", "w_o", "b_f", "b_i", "b_u", "b_o"):
            getattr(bwd, name).data[:] = getattr(fwd, name).data
        x = np.array([1.0, -0.5, 2.0, -0.5, 1.0]).reshape(1, 5, 1)
        seq, _ = net(Tensor(x))
        np.testing.assert_allclose(seq.data[:, 2, :4], seq.data[:, 2, 4:], atol=1e-12)

    def test_single_step_matches_direct_cells(self):
        net = BiLSTM(2, 3, num_layers=1, rng=rng(26))
        x = rng(27).normal(size=(2, 1, 2))
        _, summary = net(Tensor(x))

        def run_cell(cell: LSTM) -> np.ndarray:
            z = np.concatenate([np.zeros((2, 3)), x[:, 0, :]], axis=1)
            sig = lambda a: 1.0 / (1.0 + np.exp(-a))
            f = sig(z @ cell.w_f.data + cell.b_f.data)
            i = sig(z @ cell.w_i.data + cell.b_i.data)
            u = np.tanh(z @ cell.w_u.data + cell.b_u.data)
            o = sig(z @ cell.w_o.data + cell.b_o.data)
            return o * np.tanh(f * 0.0 + i * u)

        np.testing.assert_allclose(summary.data[:, :3], run_cell(net.forward_layers[0]), atol=1e-12)
        np.testing.assert_allclose(summary.data[:, 3:], run_cell(net.backward_layers[0]), atol=1e-12)

    def test_saturated_forget_gate_accumulates_cell_state(self):
        lstm = LSTM(1, 2, rng(28))
        lstm.b_f.data[:] = 50.0  # forget gate pinned at 1
        x = rng(29).normal(size=(1, 2, 1))
        _, h2 = lstm(Tensor(x))

        sig = lambda a: 1.0 / (1.0 + np.exp(-a))

        def gates(h, xt):
            z = np.concatenate([h, xt], axis=1)
            i = sig(z @ lstm.w_i.data + lstm.b_i.data)
            u = np.tanh(z @ lstm.w_u.data + lstm.b_u.data)
            o = sig(z @ lstm.w_o.data + lstm.b_o.data)
            return i, u, o

        i1, u1, o1 = gates(np.zeros((1, 2)), x[:, 0, :])
        c1 = i1 * u1
        h1 = o1 * np.tanh(c1)
        i2, u2, o2 = gates(h1, x[:, 1, :])
        c2 = c1 + i2 * u2  # saturation limit: c_t -> c_prev + i*candidate
        np.testing.assert_allclose(h2.data, o2 * np.tanh(c2), atol=1e-8)

    def test_gradients(self):
        net = BiLstmExtractor(input_size=2, out_dim=3, hidden_size=3, num_layers=1, rng=rng(30))
        x = Tensor(rng(31).normal(size=(2, 4, 2)))
        report = grad_check(
            lambda: (net(x) ** 2).sum(), net.parameters(), tolerance=1e-4,
            max_entries_per_param=6, rng=rng(32),
        )
        assert report.passed, report.worst_param


class TestAttentionFusion:
    def test_identical_inputs_reduce_to_value_path(self):
        fusion = AttentionFusion(d_model=8, heads=2, rng=rng(33))
        feat = rng(34).normal(size=(3, 8))
        t = Tensor(feat)
        out = fusion(t, t, t).data
        expected = feat @ fusion.attn.wv.data @ fusion.attn.wo.data
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_output_shape(self):
        fusion = AttentionFusion(d_model=16, heads=4, rng=rng(35))
        feats = [Tensor(rng(36).normal(size=(5, 16))) for _ in range(3)]
        assert fusion(*feats).shape == (5, 16)

    def test_gradient_reaches_every_branch(self):
        fusion = AttentionFusion(d_model=4, heads=2, rng=rng(37))
        feats = [Tensor(rng(38).normal(size=(2, 4)), requires_grad=True) for _ in range(3)]
        (fusion(*feats) ** 2).sum().backward()
        for f in feats:
            assert f.grad is not None and np.linalg.norm(f.grad) > 0


class TestMultiHeadAttentionExamples:
    def test_single_key_value_ignores_query_content(self):
        mha = MultiHeadAttention(6, 2, rng(39))
        kv = Tensor(rng(40).normal(size=(2, 1, 6)))
        q1 = Tensor(rng(41).normal(size=(2, 3, 6)))
        q2 = Tensor(rng(42).normal(size=(2, 3, 6)))
        np.testing.assert_allclose(mha(q1, kv, kv).data, mha(q2, kv, kv).data, atol=1e-12)

    def test_two_token_hand_example_identity_projections(self):
        mha = MultiHeadAttention(2, 1, rng(43))
        for w in (mha.wq, mha.wk, mha.wv, mha.wo):
            w.data[:] = np.eye(2)
        x = np.array([[[1.0, 2.0], [3.0, 4.0]]])
        out = mha(Tensor(x), Tensor(x), Tensor(x)).data
        scores = x[0] @ x[0].T / np.sqrt(2.0)
        weights = np.exp(scores - scores.max(axis=1, keepdims=True))
        weights /= weights.sum(axis=1, keepdims=True)
        np.testing.assert_allclose(out[0], weights @ x[0], atol=1e-12)


class TestFeatureNetwork:
    @staticmethod
    def small(dropout: float = 0.0) -> FeatureNetwork:
        return FeatureNetwork(
            lookback=8,
            n_weather=2,
            d=8,
            fusion_heads=2,
            cnn_channels=4,
            cnn_blocks=2,
            dropout=dropout,
            itr_d_model=8,
            itr_depth=1,
            itr_heads=2,
            lstm_hidden=3,
            lstm_layers=1,
            rng=rng(44),
        )

    @staticmethod
    def inputs(batch: int = 2, steps: int = 8):
        gen = rng(45)
        return (
            Tensor(gen.normal(size=(batch, steps, 1))),
            Tensor(gen.normal(size=(batch, steps, 1))),
            Tensor(gen.normal(size=(batch, steps, 2))),
        )

    def test_fused_shape_and_branches(self):
        net = self.small()
        out = net.extract(*self.inputs())
        for feat in (out.high_feat, out.low_feat, out.weather_feat, out.fused):
            assert feat.shape == (2, 8)

    def test_gradient_reaches_all_branch_parameters(self):
        net = self.small()
        (net(*self.inputs()) ** 2).sum().backward()
        for proj in (net.cnn.proj, net.itransformer.proj, net.bilstm.proj):
            assert proj.w.grad is not None and np.linalg.norm(proj.w.grad) > 0

    def test_eval_mode_bitwise_deterministic(self):
        net = self.small(dropout=0.3)
        net.eval()
        x = self.inputs()
        np.testing.assert_array_equal(net(*x).data, net(*x).data)

    def test_full_stack_gradients(self):
        net = self.small()
        x = self.inputs()
        report = grad_check(
            lambda: (net(*x) ** 2).sum(), net.parameters(), tolerance=1e-4,
            max_entries_per_param=4, rng=rng(46),
        )
        assert report.passed, f"{report.worst_param}: {report.max_rel_err:.3e}"
