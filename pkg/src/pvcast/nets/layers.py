"""Network layers built on the autodiff tensor.

All parameters are float64 tensors initialized uniformly in
(-1/sqrt(fan_in), +1/sqrt(fan_in)) from a caller-supplied generator, so a
model is fully determined by its construction seed.
"""

from __future__ import annotations

import math
from typing import Iterator, Sequence

import numpy as np

from .tensor import Tensor, concat, softmax, stack


def _uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Tensor:
    bound = 1.0 / math.sqrt(max(1, fan_in))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class Module:
    """Minimal container tracking parameters, buffers, and submodules."""

    def __init__(self) -> None:
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name: str, value) -> None:
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, array: np.ndarray) -> None:
        arr = np.asarray(array, dtype=np.float64)
        self._buffers[name] = arr
        object.__setattr__(self, name, arr)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, b in self._buffers.items():
            yield prefix + name, b
        for name, child in self._children.items():
            yield from child.named_buffers(f"{prefix}{name}.")

    def train(self, mode: bool = True) -> "Module":
        object.__setattr__(self, "training", mode)
        for child in self._children.values():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)


class ModuleList(Module):
    def __init__(self, modules: Sequence[Module]) -> None:
        super().__init__()
        self._list = list(modules)
        for i, m in enumerate(self._list):
            self._children[str(i)] = m

    def __iter__(self):
        return iter(self._list)

    def __len__(self) -> int:
        return len(self._list)

    def __getitem__(self, i: int) -> Module:
        return self._list[i]


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, bias: bool = True) -> None:
        super().__init__()
        self.w = _uniform(rng, (in_dim, out_dim), in_dim)
        self.bias = None
        if bias:
            self.bias = _uniform(rng, (out_dim,), in_dim)

    def __call__(self, x: Tensor) -> Tensor:
        y = x @ self.w
        if self.bias is not None:
            y = y + self.bias
        return y


class Conv1d(Module):
    """1-d convolution (cross-correlation) over (batch, channels, time).

    ``activation`` is "relu" by default; pass "identity" when composing with
    a following normalization layer.
    """

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel: int,
        rng: np.random.Generator,
        stride: int = 1,
        padding: int = 0,
        activation: str = "relu",
    ) -> None:
        super().__init__()
        if activation not in ("relu", "identity"):
            raise ValueError("activation must be 'relu' or 'identity'")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.padding = padding
        self.activation = activation
        fan_in = in_channels * kernel
        self.w = _uniform(rng, (out_channels, in_channels, kernel), fan_in)
        self.b = _uniform(rng, (out_channels,), fan_in)

    def __call__(self, x: Tensor) -> Tensor:
        batch, chans, steps = x.shape
        if chans != self.in_channels:
            raise ValueError(f"expected {self.in_channels} channels, got {chans}")
        xp = x.pad_last(self.padding, self.padding)
        padded = steps + 2 * self.padding
        t_out = (padded - self.kernel) // self.stride + 1
        if t_out < 1:
            raise ValueError("input too short for kernel")
        cols = [
            xp[:, :, k : k + self.stride * t_out : self.stride] for k in range(self.kernel)
        ]
        patches = stack(cols, axis=3)  # (B, C, T_out, K)
        patches = patches.transpose(0, 2, 1, 3).reshape(batch, t_out, chans * self.kernel)
        w2 = self.w.reshape(self.out_channels, chans * self.kernel).transpose()
        y = patches @ w2 + self.b  # (B, T_out, out)
        y = y.transpose(0, 2, 1)
        return y.relu() if self.activation == "relu" else y


class MaxPool1d(Module):
    def __init__(self, kernel: int = 2, stride: int | None = None) -> None:
        super().__init__()
        self.kernel = kernel
        self.stride = stride or kernel

    def __call__(self, x: Tensor) -> Tensor:
        steps = x.shape[-1]
        t_out = (steps - self.kernel) // self.stride + 1
        if t_out < 1:
            raise ValueError("input too short to pool")
        out = x[:, :, 0 : self.stride * t_out : self.stride]
        for k in range(1, self.kernel):
            out = out.maximum(x[:, :, k : k + self.stride * t_out : self.stride])
        return out


class GlobalAvgPool1d(Module):
    """Adaptive average pooling to a single step: the mean over time."""

    def __call__(self, x: Tensor) -> Tensor:
        return x.mean(axis=2)


class BatchNorm1d(Module):
    """Per-channel normalization over batch (and time, when present).

    Batch statistics are population moments and gradients flow through
    them; running estimates updated with ``momentum`` serve evaluation mode.
    """

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1) -> None:
        super().__init__()
        self.eps = eps
        self.momentum = momentum
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.register_buffer("running_mean", np.zeros(channels))
        self.register_buffer("running_var", np.ones(channels))

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim == 3:
            axes, shape = (0, 2), (1, -1, 1)
        elif x.ndim == 2:
            axes, shape = (0,), (1, -1)
        else:
            raise ValueError("BatchNorm1d expects (B, C) or (B, C, T)")
        if self.training:
            mu = x.mean(axis=axes, keepdims=True)
            centered = x - mu
            var = (centered**2).mean(axis=axes, keepdims=True)
            xhat = centered / (var + self.eps).sqrt()
            self.running_mean[...] = (
                (1 - self.momentum) * self.running_mean + self.momentum * mu.data.reshape(-1)
            )
            self.running_var[...] = (
                (1 - self.momentum) * self.running_var + self.momentum * var.data.reshape(-1)
            )
        else:
            mu = Tensor(self.running_mean.reshape(shape))
            var = Tensor(self.running_var.reshape(shape))
            xhat = (x - mu) / (var + self.eps).sqrt()
        return self.gamma.reshape(shape) * xhat + self.beta.reshape(shape)


class LayerNorm(Module):
    """Normalization over the final axis with learnable affine."""

    def __init__(self, dim: int, eps: float = 1e-5) -> None:
        super().__init__()
        self.eps = eps
        self.gamma = Tensor(np.ones(dim), requires_grad=True)
        self.beta = Tensor(np.zeros(dim), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        mu = x.mean(axis=-1, keepdims=True)
        centered = x - mu
        var = (centered**2).mean(axis=-1, keepdims=True)
        xhat = centered / (var + self.eps).sqrt()
        return self.gamma * xhat + self.beta


class Dropout(Module):
    """Inverted dropout; active only in training mode.

    Masks are drawn from the generator given at construction, so a fixed
    seed and call order reproduce the same masks.
    """

    def __init__(self, p: float, rng: np.random.Generator) -> None:
        super().__init__()
        if not 0.0 <= p < 1.0:
            raise ValueError("dropout probability must be in [0, 1)")
        self.p = p
        self.rng = rng

    def __call__(self, x: Tensor) -> Tensor:
        if not self.training or self.p == 0.0:
            return x
        mask = (self.rng.random(x.shape) >= self.p) / (1.0 - self.p)
        return x * Tensor(mask)


class MultiHeadAttention(Module):
    """Scaled dot-product attention with per-head projections.

    Bare attention: no biases, residuals, or normalization, so feeding three
    identical single-token inputs reduces to the value/output projections.
    The last attention weights are kept (detached) for inspection.
    """

    def __init__(self, d_model: int, n_heads: int, rng: np.random.Generator) -> None:
        super().__init__()
        if d_model % n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        self.d_model = d_model
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.wq = _uniform(rng, (d_model, d_model), d_model)
        self.wk = _uniform(rng, (d_model, d_model), d_model)
        self.wv = _uniform(rng, (d_model, d_model), d_model)
        self.wo = _uniform(rng, (d_model, d_model), d_model)
        self.last_attention: np.ndarray | None = None

    def _split(self, x: Tensor, batch: int, seq: int) -> Tensor:
        return x.reshape(batch, seq, self.n_heads, self.d_head).transpose(0, 2, 1, 3)

    def __call__(self, query: Tensor, key: Tensor, value: Tensor) -> Tensor:
        batch, seq_q, _ = query.shape
        seq_k = key.shape[1]
        q = self._split(query @ self.wq, batch, seq_q)
        k = self._split(key @ self.wk, batch, seq_k)
        v = self._split(value @ self.wv, batch, seq_k)
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(self.d_head))
        attn = softmax(scores, axis=-1)
        self.last_attention = attn.data.copy()
        ctx = attn @ v  # (B, h, S_q, d_head)
        ctx = ctx.transpose(0, 2, 1, 3).reshape(batch, seq_q, self.d_model)
        return ctx @ self.wo


class FeedForward(Module):
    def __init__(self, d_model: int, hidden: int, rng: np.random.Generator) -> None:
        super().__init__()
        self.fc1 = Linear(d_model, hidden, rng)
        self.fc2 = Linear(hidden, d_model, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(self.fc1(x).relu())


class TransformerBlock(Module):
    """Pre-norm block: z' = z + Attn(LN(z)); z'' = z' + FFN(LN(z'))."""

    def __init__(self, d_model: int, n_heads: int, ffn_hidden: int, rng: np.random.Generator) -> None:
        super().__init__()
        self.ln1 = LayerNorm(d_model)
        self.attn = MultiHeadAttention(d_model, n_heads, rng)
        self.ln2 = LayerNorm(d_model)
        self.ffn = FeedForward(d_model, ffn_hidden, rng)

    def __call__(self, z: Tensor) -> Tensor:
        normed = self.ln1(z)
        z = z + self.attn(normed, normed, normed)
        return z + self.ffn(self.ln2(z))


class LSTM(Module):
    """Single-direction recurrent layer with forget/input/update/output gates.

    Gate weights act on [h_prev, x_t] concatenated in that order.  The four
    weight matrices are stored separately and fused once per sequence for
    the step matmul.
    """

    def __init__(
        self, input_size: int, hidden_size: int, rng: np.random.Generator, reverse: bool = False
    ) -> None:
        super().__init__()
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.reverse = reverse
        z_dim = input_size + hidden_size
        self.w_f = _uniform(rng, (z_dim, hidden_size), z_dim)
        self.w_i = _uniform(rng, (z_dim, hidden_size), z_dim)
        self.w_u = _uniform(rng, (z_dim, hidden_size), z_dim)
        self.w_o = _uniform(rng, (z_dim, hidden_size), z_dim)
        self.b_f = _uniform(rng, (hidden_size,), z_dim)
        self.b_i = _uniform(rng, (hidden_size,), z_dim)
        self.b_u = _uniform(rng, (hidden_size,), z_dim)
        self.b_o = _uniform(rng, (hidden_size,), z_dim)

    def __call__(self, x: Tensor) -> tuple[Tensor, Tensor]:
        """Returns (per-step hidden states (B, T, H), final hidden (B, H)).

        For a reversed layer the per-step outputs are re-aligned to input
        time order; the final state is the one after consuming the whole
        sequence (i.e. at t=1 in input order).
        """
        batch, steps, _ = x.shape
        hidden = self.hidden_size
        w_all = concat([self.w_f, self.w_i, self.w_u, self.w_o], axis=1)
        b_all = concat([self.b_f, self.b_i, self.b_u, self.b_o], axis=0)
        h = Tensor(np.zeros((batch, hidden)))
        c = Tensor(np.zeros((batch, hidden)))
        order = range(steps - 1, -1, -1) if self.reverse else range(steps)
        outputs: list[Tensor] = [None] * steps  # type: ignore[list-item]
        for t in order:
            z = concat([h, x[:, t, :]], axis=1)
            gates = z @ w_all + b_all
            f = gates[:, :hidden].sigmoid()
            i = gates[:, hidden : 2 * hidden].sigmoid()
            u = gates[:, 2 * hidden : 3 * hidden].tanh()
            o = gates[:, 3 * hidden :].sigmoid()
            c = f * c + i * u
            h = o * c.tanh()
            outputs[t] = h
        return stack(outputs, axis=1), h


class BiLSTM(Module):
    """Stacked bidirectional layers.

    ``summary`` concatenates each direction's terminal state of the last
    layer: forward at the final step, backward at the first.
    """

    def __init__(
        self, input_size: int, hidden_size: int, num_layers: int, rng: np.random.Generator
    ) -> None:
        super().__init__()
        self.hidden_size = hidden_size
        fwd, bwd = [], []
        for layer in range(num_layers):
            in_dim = input_size if layer == 0 else 2 * hidden_size
            fwd.append(LSTM(in_dim, hidden_size, rng))
            bwd.append(LSTM(in_dim, hidden_size, rng, reverse=True))
        self.forward_layers = ModuleList(fwd)
        self.backward_layers = ModuleList(bwd)

    def __call__(self, x: Tensor) -> tuple[Tensor, Tensor]:
        """Returns (per-step outputs (B, T, 2H), summary state (B, 2H))."""
        out = x
        h_fwd = h_bwd = None
        for fwd, bwd in zip(self.forward_layers, self.backward_layers):
            seq_f, h_fwd = fwd(out)
            seq_b, h_bwd = bwd(out)
            out = concat([seq_f, seq_b], axis=2)
        return out, concat([h_fwd, h_bwd], axis=1)
