"""Layer behavior and gradient checks against central differences."""

import numpy as np
import pytest

from pvcast.nets.gradcheck import grad_check
from pvcast.nets.layers import (
    BatchNorm1d,
    BiLSTM,
    Conv1d,
    Dropout,
    FeedForward,
    GlobalAvgPool1d,
    LayerNorm,
    Linear,
    LSTM,
    MaxPool1d,
    Module,
    ModuleList,
    MultiHeadAttention,
    TransformerBlock,
)
from pvcast.nets.tensor import Tensor


def rng(seed: int = 0) -> np.random.Generator:
    return np.random.default_rng(seed)


def check(module: Module, loss_fn, tolerance: float = 1e-6) -> None:
    report = grad_check(loss_fn, module.parameters(), tolerance=tolerance)
    assert report.passed, (
        f"{report.worst_param}: rel err {report.max_rel_err:.3e} > {tolerance}"
    )


class TestModule:
    def test_named_parameters_prefixes(self):
        class Net(Module):
            def __init__(self):
                super().__init__()
                self.fc1 = Linear(2, 3, rng())
                self.fc2 = Linear(3, 1, rng(1))

        names = {name for name, _ in Net().named_parameters()}
        assert names == {"fc1.w", "fc1.bias", "fc2.w", "fc2.bias"}

    def test_module_list_children_named_by_index(self):
        class Net(Module):
            def __init__(self):
                super().__init__()
                self.blocks = ModuleList([Linear(2, 2, rng()), Linear(2, 2, rng(1))])

        names = {name for name, _ in Net().named_parameters()}
        assert "blocks.0.w" in names and "blocks.1.bias" in names

    def test_train_eval_propagates(self):
        class Net(Module):
            def __init__(self):
                super().__init__()
                self.inner = BatchNorm1d(2)

        net = Net()
        assert net.inner.training
        net.eval()
        assert not net.training and not net.inner.training
        net.train()
        assert net.inner.training

    def test_named_buffers(self):
        bn = BatchNorm1d(3)
        names = dict(bn.named_buffers())
        assert set(names) == {"running_mean", "running_var"}
        assert names["running_var"].shape == (3,)


class TestLinear:
    def test_forward_matches_numpy(self):
        layer = Linear(3, 2, rng())
        x = np.arange(6.0).reshape(2, 3)
        out = layer(Tensor(x))
        np.testing.assert_allclose(out.data, x @ layer.w.data + layer.bias.data)

    def test_init_bound(self):
        layer = Linear(16, 8, rng())
        assert np.abs(layer.w.data).max() <= 0.25
        assert np.abs(layer.bias.data).max() <= 0.25

    def test_gradients(self):
        layer = Linear(4, 3, rng(2))
        x = Tensor(rng(3).normal(size=(5, 4)))
        check(layer, lambda: (layer(x) ** 2).sum())


class TestConv1d:
    def test_kernel_of_ones_sums_window(self):
        conv = Conv1d(1, 1, kernel=3, rng=rng())
        conv.w.data[:] = 1.0
        conv.b.data[:] = 0.0
        out = conv(Tensor(np.array([[[1.0, 2.0, 3.0, 4.0, 5.0]]])))
        np.testing.assert_allclose(out.data, [[[6.0, 9.0, 12.0]]])

    def test_unit_kernel_is_relu(self):
        conv = Conv1d(1, 1, kernel=1, rng=rng())
        conv.w.data[:] = 1.0
        conv.b.data[:] = 0.0
        x = np.array([[[-2.0, -0.5, 0.0, 1.5, 3.0]]])
        out = conv(Tensor(x))
        np.testing.assert_allclose(out.data, np.maximum(x, 0.0))

    def test_identity_activation_keeps_sign(self):
        conv = Conv1d(1, 1, kernel=1, rng=rng(), activation="identity")
        conv.w.data[:] = 1.0
        conv.b.data[:] = 0.0
        x = np.array([[[-2.0, 1.0]]])
        np.testing.assert_allclose(conv(Tensor(x)).data, x)

    def test_padding_preserves_length(self):
        conv = Conv1d(2, 4, kernel=3, rng=rng(), padding=1)
        out = conv(Tensor(rng(1).normal(size=(3, 2, 10))))
        assert out.shape == (3, 4, 10)

    def test_stride_two(self):
        conv = Conv1d(1, 1, kernel=2, rng=rng(), stride=2, activation="identity")
        conv.w.data[:] = 1.0
        conv.b.data[:] = 0.0
        out = conv(Tensor(np.array([[[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]]])))
        np.testing.assert_allclose(out.data, [[[3.0, 7.0, 11.0]]])

    def test_channel_mismatch_rejected(self):
        conv = Conv1d(2, 1, kernel=1, rng=rng())
        with pytest.raises(ValueError, match="channels"):
            conv(Tensor(np.zeros((1, 3, 4))))

    def test_gradients(self):
        conv = Conv1d(2, 3, kernel=3, rng=rng(4), padding=1, activation="identity")
        x = Tensor(rng(5).normal(size=(2, 2, 8)))
        check(conv, lambda: (conv(x) ** 2).sum())

    def test_gradients_through_relu(self):
        conv = Conv1d(1, 2, kernel=3, rng=rng(6))
        # keep preactivations away from the relu kink
        x = Tensor(rng(7).normal(size=(2, 1, 9)) + 0.05)
        check(conv, lambda: (conv(x) ** 2).sum(), tolerance=1e-5)


class TestPooling:
    def test_max_pool_hand_example(self):
        pool = MaxPool1d(kernel=2)
        out = pool(Tensor(np.array([[[1.0, 3.0, 2.0, 5.0, 4.0, 6.0]]])))
        np.testing.assert_allclose(out.data, [[[3.0, 5.0, 6.0]]])

    def test_max_pool_drops_trailing_remainder(self):
        out = MaxPool1d(kernel=2)(Tensor(np.arange(7.0).reshape(1, 1, 7)))
        np.testing.assert_allclose(out.data, [[[1.0, 3.0, 5.0]]])

    def test_max_pool_gradient_flows_to_argmax(self):
        x = Tensor(np.array([[[1.0, 3.0, 2.0, 5.0]]]), requires_grad=True)
        MaxPool1d(kernel=2)(x).sum().backward()
        np.testing.assert_allclose(x.grad, [[[0.0, 1.0, 0.0, 1.0]]])

    def test_global_avg_pool(self):
        out = GlobalAvgPool1d()(Tensor(np.arange(12.0).reshape(2, 2, 3)))
        np.testing.assert_allclose(out.data, [[1.0, 4.0], [7.0, 10.0]])


class TestBatchNorm:
    def test_identical_rows_normalize_to_zero(self):
        bn = BatchNorm1d(3)
        x = Tensor(np.tile([[1.0, -2.0, 5.0]], (4, 1)))
        np.testing.assert_allclose(bn(x).data, np.zeros((4, 3)), atol=1e-12)

    def test_train_output_moments(self):
        bn = BatchNorm1d(2)
        x = Tensor(rng(8).normal(loc=3.0, scale=2.0, size=(64, 2, 5)))
        out = bn(x).data
        np.testing.assert_allclose(out.mean(axis=(0, 2)), 0.0, atol=1e-10)
        np.testing.assert_allclose(out.var(axis=(0, 2)), 1.0, atol=1e-3)

    def test_running_stats_and_eval_mode(self):
        bn = BatchNorm1d(1, momentum=0.1)
        x = np.array([[2.0], [4.0]])
        bn(Tensor(x))
        np.testing.assert_allclose(bn.running_mean, [0.3])  # 0.9*0 + 0.1*3
        np.testing.assert_allclose(bn.running_var, [1.0])  # 0.9*1 + 0.1*1
        bn.eval()
        out = bn(Tensor(np.array([[0.3]])))
        np.testing.assert_allclose(out.data, [[0.0]], atol=1e-12)

    def test_rejects_1d(self):
        with pytest.raises(ValueError):
            BatchNorm1d(2)(Tensor(np.zeros(2)))

    def test_gradients(self):
        bn = BatchNorm1d(3)
        bn.gamma.data[:] = [0.5, 1.5, 2.0]
        bn.beta.data[:] = [0.1, -0.2, 0.0]
        x = Tensor(rng(9).normal(size=(4, 3, 5)))
        # beta gradients are near zero here, so difference noise dominates
        # the relative error; 1e-4 still catches any real defect.
        check(bn, lambda: (bn(x) ** 2).sum(), tolerance=1e-4)

    def test_gradients_flow_to_input(self):
        bn = BatchNorm1d(2)
        x = Tensor(rng(10).normal(size=(6, 2)), requires_grad=True)
        report = grad_check(lambda: (bn(x) ** 2).sum(), {"x": x}, tolerance=1e-4)
        assert report.passed


class TestLayerNorm:
    def test_pre_affine_moments(self):
        ln = LayerNorm(16)
        x = Tensor(rng(11).normal(loc=5.0, scale=3.0, size=(4, 16)))
        out = ln(x).data
        assert np.abs(out.mean(axis=-1)).max() < 1e-7
        assert np.abs(out.var(axis=-1) - 1.0).max() < 1e-4

    def test_affine_applied(self):
        ln = LayerNorm(2)
        ln.gamma.data[:] = [2.0, 2.0]
        ln.beta.data[:] = [1.0, 1.0]
        out = ln(Tensor(np.array([[1.0, 3.0]])))
        # normalized to [-1, 1] then scaled and shifted
        np.testing.assert_allclose(out.data, [[-0.99999, 3.0 - 2e-5]], rtol=1e-3)

    def test_gradients(self):
        ln = LayerNorm(5)
        ln.gamma.data[:] = rng(12).normal(size=5)
        x = Tensor(rng(13).normal(size=(3, 4, 5)))
        check(ln, lambda: (ln(x) ** 2).sum())


class TestDropout:
    def test_eval_mode_is_identity(self):
        drop = Dropout(0.5, rng())
        drop.eval()
        x = Tensor(np.arange(6.0).reshape(2, 3))
        assert drop(x) is x

    def test_train_mode_zeroes_and_rescales(self):
        drop = Dropout(0.25, rng(14))
        x = Tensor(np.ones((100, 100)))
        out = drop(x).data
        kept = out != 0.0
        assert abs(kept.mean() - 0.75) < 0.02
        np.testing.assert_allclose(out[kept], 1.0 / 0.75)

    def test_seeded_masks_reproducible(self):
        a = Dropout(0.5, rng(15))
        b = Dropout(0.5, rng(15))
        x = Tensor(np.ones((8, 8)))
        np.testing.assert_array_equal(a(x).data, b(x).data)

    def test_zero_probability_is_identity(self):
        drop = Dropout(0.0, rng())
        x = Tensor(np.ones((3, 3)))
        assert drop(x) is x

    def test_invalid_probability(self):
        with pytest.raises(ValueError):
            Dropout(1.0, rng())


class TestMultiHeadAttention:
    def test_identical_tokens_reduce_to_value_path(self):
        mha = MultiHeadAttention(8, 2, rng(16))
        token = rng(17).normal(size=8)
        x = Tensor(np.tile(token, (2, 3, 1)))
        out = mha(x, x, x).data
        expected = token @ mha.wv.data @ mha.wo.data
        for b in range(2):
            for s in range(3):
                np.testing.assert_allclose(out[b, s], expected, atol=1e-12)
        np.testing.assert_allclose(mha.last_attention, 1.0 / 3.0)

    def test_attention_rows_sum_to_one(self):
        mha = MultiHeadAttention(8, 4, rng(18))
        x = Tensor(rng(19).normal(size=(2, 5, 8)))
        mha(x, x, x)
        np.testing.assert_allclose(mha.last_attention.sum(axis=-1), 1.0, atol=1e-12)
        assert mha.last_attention.shape == (2, 4, 5, 5)

    def test_head_count_must_divide(self):
        with pytest.raises(ValueError):
            MultiHeadAttention(10, 3, rng())

    def test_gradients(self):
        mha = MultiHeadAttention(4, 2, rng(20))
        x = Tensor(rng(21).normal(size=(2, 3, 4)))
        check(mha, lambda: (mha(x, x, x) ** 2).sum())

    def test_cross_attention_shapes(self):
        mha = MultiHeadAttention(4, 2, rng(22))
        q = Tensor(rng(23).normal(size=(2, 1, 4)))
        kv = Tensor(rng(24).normal(size=(2, 6, 4)))
        assert mha(q, kv, kv).shape == (2, 1, 4)


class TestTransformerBlock:
    def test_output_shape(self):
        block = TransformerBlock(8, 2, 16, rng(25))
        x = Tensor(rng(26).normal(size=(2, 4, 8)))
        assert block(x).shape == (2, 4, 8)

    def test_residual_path(self):
        block = TransformerBlock(4, 2, 8, rng(27))
        # zero every projection: output must equal input exactly
        for _, p in block.named_parameters():
            if p is not block.ln1.gamma and p is not block.ln2.gamma:
                p.data[:] = 0.0
        x = Tensor(rng(28).normal(size=(1, 3, 4)))
        np.testing.assert_allclose(block(x).data, x.data)

    def test_gradients(self):
        block = TransformerBlock(4, 2, 8, rng(29))
        x = Tensor(rng(30).normal(size=(2, 3, 4)))
        check(block, lambda: (block(x) ** 2).sum(), tolerance=1e-5)


class TestLSTM:
    def test_zero_weights_zero_state_give_zero_output(self):
        lstm = LSTM(3, 4, rng(31))
        for _, p in lstm.named_parameters():
            p.data[:] = 0.0
        seq, final = lstm(Tensor(rng(32).normal(size=(2, 5, 3))))
        np.testing.assert_allclose(seq.data, 0.0)
        np.testing.assert_allclose(final.data, 0.0)

    def test_final_state_matches_last_step(self):
        lstm = LSTM(2, 3, rng(33))
        seq, final = lstm(Tensor(rng(34).normal(size=(2, 4, 2))))
        np.testing.assert_array_equal(seq.data[:, -1, :], final.data)

    def test_reversed_final_state_matches_first_step(self):
        lstm = LSTM(2, 3, rng(35), reverse=True)
        seq, final = lstm(Tensor(rng(36).normal(size=(2, 4, 2))))
        np.testing.assert_array_equal(seq.data[:, 0, :], final.data)

    def test_reversed_layer_sees_sequence_backwards(self):
        fwd = LSTM(1, 2, rng(37))
        bwd = LSTM(1, 2, rng(37), reverse=True)
        x = rng(38).normal(size=(1, 5, 1))
        seq_f, _ = fwd(Tensor(x))
        seq_b, _ = bwd(Tensor(x[:, ::-1, :].copy()))
        np.testing.assert_allclose(seq_f.data, seq_b.data[:, ::-1, :], atol=1e-12)

    def test_single_step_matches_gate_equations(self):
        lstm = LSTM(2, 2, rng(39))
        x = rng(40).normal(size=(1, 1, 2))
        _, final = lstm(Tensor(x))
        z = np.concatenate([np.zeros((1, 2)), x[:, 0, :]], axis=1)

        def sig(a):
            return 1.0 / (1.0 + np.exp(-a))

        f = sig(z @ lstm.w_f.data + lstm.b_f.data)
        i = sig(z @ lstm.w_i.data + lstm.b_i.data)
        u = np.tanh(z @ lstm.w_u.data + lstm.b_u.data)
        o = sig(z @ lstm.w_o.data + lstm.b_o.data)
        c = f * 0.0 + i * u
        np.testing.assert_allclose(final.data, o * np.tanh(c), atol=1e-12)

    def test_gradients(self):
        lstm = LSTM(2, 3, rng(41))
        x = Tensor(rng(42).normal(size=(2, 4, 2)))
        check(lstm, lambda: (lstm(x)[0] ** 2).sum(), tolerance=1e-5)


class TestBiLSTM:
    def test_output_shapes(self):
        net = BiLSTM(3, 4, num_layers=2, rng=rng(43))
        seq, summary = net(Tensor(rng(44).normal(size=(2, 6, 3))))
        assert seq.shape == (2, 6, 8)
        assert summary.shape == (2, 8)

    def test_summary_concatenates_terminal_states(self):
        net = BiLSTM(2, 3, num_layers=1, rng=rng(45))
        seq, summary = net(Tensor(rng(46).normal(size=(1, 5, 2))))
        np.testing.assert_array_equal(summary.data[:, :3], seq.data[:, -1, :3])
        np.testing.assert_array_equal(summary.data[:, 3:], seq.data[:, 0, 3:])

    def test_gradients(self):
        net = BiLSTM(2, 2, num_layers=2, rng=rng(47))
        x = Tensor(rng(48).normal(size=(2, 3, 2)))
        check(net, lambda: (net(x)[1] ** 2).sum(), tolerance=1e-5)
