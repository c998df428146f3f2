"""TDNN speaker encoder: stride-2 stem, three dilated SE-Res2Blocks,
multi-level aggregation, channel- and context-dependent attentive
statistics pooling, and a linear projection to the embedding.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn

VARIANCE_FLOOR = 1e-9


@dataclass
class EncoderConfig:
    n_mels: int = 80
    channels: int = 256
    embedding_dim: int = 64
    res2net_scale: int = 8
    se_bottleneck: int | None = None  # defaults to channels // 8
    dilations: tuple[int, ...] = (2, 3, 4)
    conv1_kernel: int = 5
    conv1_stride: int = 2
    block_kernel: int = 3
    conv5_kernel: int = 1
    conv5_stride: int = 1  # Table reading: stride 2 would discard alternate frames
    attention_bottleneck: int = 128

    def __post_init__(self):
        if self.channels % self.res2net_scale != 0:
            raise ValueError("channels (%d) must be divisible by res2net_scale (%d)"
                             % (self.channels, self.res2net_scale))
        if self.embedding_dim <= 0:
            raise ValueError("embedding_dim must be positive")
        if len(self.dilations) != 3:
            raise ValueError("exactly three SE-Res2Blocks expected, got %d dilations"
                             % len(self.dilations))
        if (3 * self.channels) % 2 != 0:
            raise ValueError("channels must be even so the aggregation conv width "
                             "3*channels/2 is an integer")
        if self.se_bottleneck is None:
            self.se_bottleneck = max(1, self.channels // 8)

    @property
    def conv5_channels(self) -> int:
        return 3 * self.channels // 2

    @property
    def pooled_dim(self) -> int:
        return 2 * self.conv5_channels

    @property
    def min_input_frames(self) -> int:
        return self.conv1_kernel

    @classmethod
    def paper_scale(cls) -> "EncoderConfig":
        return cls(channels=1024, embedding_dim=192)


def conv_out_len(length: int, kernel: int, stride: int, padding: int, dilation: int = 1) -> int:
    return (length + 2 * padding - dilation * (kernel - 1) - 1) // stride + 1


def trace_shapes(config: EncoderConfig, num_frames: int) -> dict[str, tuple[int, int]]:
    """Symbolically propagate (channels, frames) through every stage.

    Independent of the torch modules; used to verify the network's shape
    contract at any configured width.
    """
    shapes: dict[str, tuple[int, int]] = {}
    shapes["input"] = (config.n_mels, num_frames)
    t = conv_out_len(num_frames, config.conv1_kernel, config.conv1_stride,
                     config.conv1_kernel // 2)
    shapes["conv1"] = (config.channels, t)
    for i in range(3):
        # dilated "same" convolutions inside the block keep the frame count
        shapes["block%d" % (i + 1)] = (config.channels, t)
    shapes["concat"] = (3 * config.channels, t)
    t5 = conv_out_len(t, config.conv5_kernel, config.conv5_stride, 0)
    shapes["conv5"] = (config.conv5_channels, t5)
    shapes["pooled"] = (config.pooled_dim, 1)
    shapes["embedding"] = (config.embedding_dim, 1)
    return shapes


class SqueezeExcite(nn.Module):
    """Channel gate from time-averaged statistics."""

    def __init__(self, channels: int, bottleneck: int):
        super().__init__()
        self.fc1 = nn.Linear(channels, bottleneck)
        self.fc2 = nn.Linear(bottleneck, channels)

    def forward(self, x):
        s = x.mean(dim=-1)
        gate = torch.sigmoid(self.fc2(torch.relu(self.fc1(s))))
        return x * gate.unsqueeze(-1)


class Res2Conv(nn.Module):
    """Multi-scale grouped convolution with hierarchical adds.

    Splits channels into `scale` groups; the first group passes through,
    group i (i >= 1) is convolved after adding the previous group's output.
    """

    def __init__(self, channels: int, kernel: int, dilation: int, scale: int):
        super().__init__()
        self.scale = scale
        self.width = channels // scale
        pad = dilation * (kernel - 1) // 2
        self.convs = nn.ModuleList(
            nn.Conv1d(self.width, self.width, kernel, padding=pad, dilation=dilation)
            for _ in range(scale - 1))

    def forward(self, x):
        chunks = torch.split(x, self.width, dim=1)
        outs = [chunks[0]]
        prev = None
        for i in range(1, self.scale):
            inp = chunks[i] if prev is None else chunks[i] + prev
            prev = self.convs[i - 1](inp)
            outs.append(prev)
        return torch.cat(outs, dim=1)


class SERes2Block(nn.Module):
    """1x1 conv -> dilated Res2 conv -> 1x1 conv, SE gate, residual add."""

    def __init__(self, config: EncoderConfig, dilation: int):
        super().__init__()
        c = config.channels
        self.conv_in = nn.Conv1d(c, c, 1)
        self.bn_in = nn.BatchNorm1d(c)
        self.res2 = Res2Conv(c, config.block_kernel, dilation, config.res2net_scale)
        self.bn_mid = nn.BatchNorm1d(c)
        self.conv_out = nn.Conv1d(c, c, 1)
        self.bn_out = nn.BatchNorm1d(c)
        self.se = SqueezeExcite(c, config.se_bottleneck)

    def forward(self, x):
        h = self.bn_in(torch.relu(self.conv_in(x)))
        h = self.bn_mid(torch.relu(self.res2(h)))
        h = self.bn_out(torch.relu(self.conv_out(h)))
        return x + self.se(h)


class AttentiveStatsPool(nn.Module):
    """Attention-weighted mean and std over time, context-conditioned.

    Attention scores come from a bottleneck over each frame concatenated
    with the global mean and std of the sequence, giving per-channel,
    per-frame weights (softmax over time).
    """

    def __init__(self, channels: int, bottleneck: int):
        super().__init__()
        self.attn1 = nn.Conv1d(3 * channels, bottleneck, 1)
        self.attn2 = nn.Conv1d(bottleneck, channels, 1)

    def forward(self, x):
        t = x.shape[-1]
        mu = x.mean(dim=-1, keepdim=True)
        sg = torch.sqrt((x.var(dim=-1, keepdim=True, unbiased=False)).clamp(min=VARIANCE_FLOOR))
        context = torch.cat([x, mu.expand(-1, -1, t), sg.expand(-1, -1, t)], dim=1)
        alpha = torch.softmax(self.attn2(torch.tanh(self.attn1(context))), dim=-1)
        mean = (alpha * x).sum(dim=-1)
        var = (alpha * x * x).sum(dim=-1) - mean * mean
        std = torch.sqrt(var.clamp(min=VARIANCE_FLOOR))
        return torch.cat([mean, std], dim=1)


class SpeakerEncoder(nn.Module):
    """Maps a batch of n_mels x T feature matrices to fixed-size embeddings."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        c = config.channels
        self.conv1 = nn.Conv1d(config.n_mels, c, config.conv1_kernel,
                               stride=config.conv1_stride,
                               padding=config.conv1_kernel // 2)
        self.bn1 = nn.BatchNorm1d(c)
        self.blocks = nn.ModuleList(
            SERes2Block(config, d) for d in config.dilations)
        self.conv5 = nn.Conv1d(3 * c, config.conv5_channels, config.conv5_kernel,
                               stride=config.conv5_stride)
        self.bn5 = nn.BatchNorm1d(config.conv5_channels)
        self.pool = AttentiveStatsPool(config.conv5_channels, config.attention_bottleneck)
        self.bn_pool = nn.BatchNorm1d(config.pooled_dim)
        self.fc = nn.Linear(config.pooled_dim, config.embedding_dim)

    def _check_length(self, x):
        if x.shape[-1] < self.config.min_input_frames:
            raise ValueError(
                "input has %d frames; the encoder needs at least %d frames "
                "for its first convolution" % (x.shape[-1], self.config.min_input_frames))

    def forward(self, x):
        return self.forward_with_intermediates(x)[0]

    def forward_with_intermediates(self, x):
        """Returns (embedding, dict of intermediate activations)."""
        self._check_length(x)
        inter = {}
        h = self.bn1(torch.relu(self.conv1(x)))
        inter["conv1"] = h
        block_outs = []
        for i, block in enumerate(self.blocks):
            h = block(h)
            block_outs.append(h)
            inter["block%d" % (i + 1)] = h
        cat = torch.cat(block_outs, dim=1)
        inter["concat"] = cat
        h5 = self.bn5(torch.relu(self.conv5(cat)))
        inter["conv5"] = h5
        pooled = self.bn_pool(self.pool(h5))
        inter["pooled"] = pooled
        emb = self.fc(pooled)
        inter["embedding"] = emb
        return emb, inter


def embed(features, model: SpeakerEncoder, train: bool = False) -> torch.Tensor:
    """Encode one LogMelFeatures matrix (or a [B, n_mels, T] tensor).

    Eval mode is the default and is deterministic; train mode keeps the
    graph for backprop.
    """
    if not torch.is_tensor(features):
        features = torch.as_tensor(features.values, dtype=torch.float32)
    if features.dim() == 2:
        features = features.unsqueeze(0)
    was_training = model.training
    model.train(train)
    try:
        if train:
            return model(features)
        with torch.no_grad():
            return model(features)
    finally:
        model.train(was_training)
