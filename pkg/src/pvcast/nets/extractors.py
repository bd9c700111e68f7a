"""Feature extractors for the three input branches, plus attention fusion.

Branch assignment: a convolutional stack reads the high-frequency component,
an inverted transformer reads the low-frequency component (each variable's
whole window becomes one token), and a bidirectional recurrent stack reads
the weather channels.  All three project to a common width so a multi-head
attention layer can fuse them as a three-token sequence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import (
    BatchNorm1d,
    BiLSTM,
    Conv1d,
    Dropout,
    GlobalAvgPool1d,
    LayerNorm,
    Linear,
    MaxPool1d,
    Module,
    ModuleList,
    MultiHeadAttention,
    TransformerBlock,
)
from .tensor import Tensor, stack


@dataclass
class ExtractorOutput:
    """Per-branch features and their fused combination, each (B, d)."""

    high_feat: Tensor
    low_feat: Tensor
    weather_feat: Tensor
    fused: Tensor


class CnnExtractor(Module):
    """Conv/BN/ReLU/pool stack over (B, T, 1), pooled and projected to d."""

    def __init__(
        self,
        out_dim: int = 64,
        channels: int = 64,
        kernel: int = 3,
        n_blocks: int = 2,
        dropout: float = 0.1,
        rng: np.random.Generator | None = None,
    ) -> None:
        super().__init__()
        rng = rng or np.random.default_rng(0)
        convs, norms, pools = [], [], []
        in_ch = 1
        for _ in range(n_blocks):
            convs.append(Conv1d(in_ch, channels, kernel, rng, padding=kernel // 2, activation="identity"))
            norms.append(BatchNorm1d(channels))
            pools.append(MaxPool1d(2))
            in_ch = channels
        self.convs = ModuleList(convs)
        self.norms = ModuleList(norms)
        self.pools = ModuleList(pools)
        self.drop = Dropout(dropout, rng)
        self.gap = GlobalAvgPool1d()
        self.proj = Linear(channels, out_dim, rng)
        self.kernel = kernel
        self.min_steps = self._minimum_steps(kernel, n_blocks)

    @staticmethod
    def _minimum_steps(kernel: int, n_blocks: int) -> int:
        for steps in range(1, 4097):
            t = steps
            ok = True
            for _ in range(n_blocks):
                t = (t + 2 * (kernel // 2) - kernel) + 1
                if t < 2:  # pooling needs at least one full window
                    ok = False
                    break
                t = (t - 2) // 2 + 1
            if ok:
                return steps
        raise ValueError("no valid input length found")

    def __call__(self, x: Tensor) -> Tensor:
        batch, steps, chans = x.shape
        if chans != 1:
            raise ValueError("expected a single input channel")
        if steps < self.min_steps:
            raise ValueError(f"window of {steps} steps is too short; need at least {self.min_steps}")
        h = x.transpose(0, 2, 1)  # (B, 1, T)
        for conv, norm, pool in zip(self.convs, self.norms, self.pools):
            h = pool(norm(conv(h)).relu())
        h = self.drop(h)
        return self.proj(self.gap(h))


class ITransformerExtractor(Module):
    """Inverted transformer: each variable's T-step series is one token.

    Tokens are linearly embedded from length T to the model width,
    normalized, passed through pre-norm attention blocks, mean-pooled over
    variables, and projected to d.
    """

    def __init__(
        self,
        lookback: int,
        out_dim: int = 64,
        d_model: int = 128,
        depth: int = 4,
        heads: int = 8,
        rng: np.random.Generator | None = None,
    ) -> None:
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.lookback = lookback
        self.embed = Linear(lookback, d_model, rng)
        self.embed_norm = LayerNorm(d_model)
        self.blocks = ModuleList(
            [TransformerBlock(d_model, heads, 2 * d_model, rng) for _ in range(depth)]
        )
        self.proj = Linear(d_model, out_dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.lookback:
            raise ValueError(f"expected {self.lookback} steps, got {x.shape[1]}")
        tokens = x.transpose(0, 2, 1)  # (B, N, T)
        z = self.embed_norm(self.embed(tokens))
        for block in self.blocks:
            z = block(z)
        return self.proj(z.mean(axis=1))


class BiLstmExtractor(Module):
    """Stacked bidirectional recurrence; terminal states projected to d."""

    def __init__(
        self,
        input_size: int,
        out_dim: int = 64,
        hidden_size: int = 64,
        num_layers: int = 2,
        rng: np.random.Generator | None = None,
    ) -> None:
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.rnn = BiLSTM(input_size, hidden_size, num_layers, rng)
        self.proj = Linear(2 * hidden_size, out_dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        _, summary = self.rnn(x)
        return self.proj(summary)


class AttentionFusion(Module):
    """Self-attention over the three branch features as a token sequence.

    Bare attention (no residual or normalization) followed by a mean over
    tokens, so identical inputs reduce to the value/output projections.
    """

    def __init__(self, d_model: int = 64, heads: int = 8, rng: np.random.Generator | None = None) -> None:
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.attn = MultiHeadAttention(d_model, heads, rng)

    def __call__(self, high_feat: Tensor, low_feat: Tensor, weather_feat: Tensor) -> Tensor:
        tokens = stack([high_feat, low_feat, weather_feat], axis=1)  # (B, 3, d)
        return self.attn(tokens, tokens, tokens).mean(axis=1)


class FeatureNetwork(Module):
    """The three extractors and their fusion, emitting one (B, d) feature."""

    def __init__(
        self,
        lookback: int,
        n_weather: int,
        d: int = 64,
        fusion_heads: int = 8,
        cnn_channels: int = 64,
        cnn_kernel: int = 3,
        cnn_blocks: int = 2,
        dropout: float = 0.1,
        itr_d_model: int = 128,
        itr_depth: int = 4,
        itr_heads: int = 8,
        lstm_hidden: int = 64,
        lstm_layers: int = 2,
        rng: np.random.Generator | None = None,
    ) -> None:
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.cnn = CnnExtractor(d, cnn_channels, cnn_kernel, cnn_blocks, dropout, rng)
        self.itransformer = ITransformerExtractor(lookback, d, itr_d_model, itr_depth, itr_heads, rng)
        self.bilstm = BiLstmExtractor(n_weather, d, lstm_hidden, lstm_layers, rng)
        self.fusion = AttentionFusion(d, fusion_heads, rng)

    def extract(self, x_high: Tensor, x_low: Tensor, x_weather: Tensor) -> ExtractorOutput:
        high = self.cnn(x_high)
        low = self.itransformer(x_low)
        met = self.bilstm(x_weather)
        return ExtractorOutput(high, low, met, self.fusion(high, low, met))

    def __call__(self, x_high: Tensor, x_low: Tensor, x_weather: Tensor) -> Tensor:
        return self.extract(x_high, x_low, x_weather).fused
