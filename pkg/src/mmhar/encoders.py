"""Modality-specific feature encoders, projection heads and the fusion
classifier used for fine-tuning.

Input conventions: inertial batches are (N, T, S), skeleton batches are
(N, T, J, C). Every forward contract is shape-total over the batch axis and,
in evaluation mode, a deterministic function of its input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn


@dataclass(frozen=True)
class InertialEncoderConfig:
    """1-D conv stack plus self-attention encoder for sensor sequences."""

    in_channels: int = 6
    conv_channels: tuple[int, ...] = (32, 64, 128)
    kernel_size: int = 5
    attention_blocks: int = 2
    attention_heads: int = 2
    attention_feedforward: int = 256
    attention_dropout: float = 0.1
    feature_dim: int = 128

    def __post_init__(self):
        if any(c <= 0 for c in self.conv_channels) or self.in_channels <= 0:
            raise ValueError("channel counts must be positive")
        if self.feature_dim != self.conv_channels[-1]:
            raise ValueError(
                f"feature_dim ({self.feature_dim}) must equal the last conv "
                f"channel count ({self.conv_channels[-1]})"
            )


@dataclass(frozen=True)
class SkeletonEncoderConfig:
    """Two-stream (positions + frame differences) co-occurrence conv encoder.

    ``point_channels`` are the per-joint stages before the transpose that
    moves the joint axis into the channel axis; ``joint_channels`` and
    ``fused_channels`` are the stages after it. Batch normalization is used
    throughout, never dropout.
    """

    num_joints: int = 20
    coord_channels: int = 3
    stream_count: int = 2
    point_channels: tuple[int, ...] = (64, 32)
    joint_channels: tuple[int, ...] = (32, 64)
    fused_channels: tuple[int, ...] = (128, 256)
    transpose_stage: int = 2
    feature_dim: int = 512

    def __post_init__(self):
        if self.stream_count != 2:
            raise ValueError("only the two-stream (positions, motions) layout is supported")
        if self.coord_channels not in (2, 3):
            raise ValueError("coord_channels must be 2 or 3")
        if self.transpose_stage != len(self.point_channels):
            raise ValueError(
                "transpose_stage must sit right after the point-level stages "
                f"({len(self.point_channels)}), got {self.transpose_stage}"
            )
        if self.feature_dim <= 0:
            raise ValueError("feature_dim must be positive")


@dataclass(frozen=True)
class ProjectionHeadConfig:
    input_dim: int
    hidden_dim: int | None = None
    output_dim: int = 128

    def __post_init__(self):
        if self.hidden_dim is None:
            object.__setattr__(self, "hidden_dim", self.input_dim)
        if min(self.input_dim, self.hidden_dim, self.output_dim) <= 0:
            raise ValueError("projection head dims must be positive")


@dataclass(frozen=True)
class FusionHeadConfig:
    classifier_classes: int
    inertial_dim: int = 128
    skeleton_dim: int = 512
    per_modality_out: int = 256

    def __post_init__(self):
        if self.per_modality_out <= 0 or self.classifier_classes <= 0:
            raise ValueError("fusion dims and class count must be positive")


def sinusoidal_position_encoding(length: int, dim: int, dtype=torch.float32,
                                 device=None) -> torch.Tensor:
    """Fixed sin/cos positional table of shape (length, dim)."""
    position = torch.arange(length, dtype=dtype, device=device).unsqueeze(1)
    div = torch.exp(
        torch.arange(0, dim, 2, dtype=dtype, device=device) * (-math.log(10000.0) / dim)
    )
    angles = position * div
    table = torch.zeros(length, dim, dtype=dtype, device=device)
    table[:, 0::2] = torch.sin(angles)
    table[:, 1::2] = torch.cos(angles[:, : dim // 2])
    return table


class InertialEncoder(nn.Module):
    """Conv blocks -> positional encoding -> self-attention -> temporal max pool.

    (N, T, S) in, (N, feature_dim) out.
    """

    def __init__(self, config: InertialEncoderConfig):
        super().__init__()
        self.config = config
        blocks = []
        prev = config.in_channels
        for out in config.conv_channels:
            blocks += [
                nn.Conv1d(prev, out, config.kernel_size, padding=config.kernel_size // 2),
                nn.BatchNorm1d(out),
                nn.ReLU(),
            ]
            prev = out
        self.conv = nn.Sequential(*blocks)
        layer = nn.TransformerEncoderLayer(
            d_model=config.feature_dim,
            nhead=config.attention_heads,
            dim_feedforward=config.attention_feedforward,
            dropout=config.attention_dropout,
            batch_first=True,
        )
        self.attention = nn.TransformerEncoder(layer, config.attention_blocks,
                                               enable_nested_tensor=False)

    @property
    def feature_dim(self) -> int:
        return self.config.feature_dim

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 3 or x.shape[-1] != self.config.in_channels:
            raise ValueError(
                f"expected (N, T, {self.config.in_channels}) input, got {tuple(x.shape)}"
            )
        if x.shape[0] == 0:
            return x.new_zeros((0, self.config.feature_dim))
        h = self.conv(x.transpose(1, 2)).transpose(1, 2)
        h = h + sinusoidal_position_encoding(h.shape[1], h.shape[2], h.dtype, h.device)
        h = self.attention(h)
        return h.max(dim=1).values


class _SkeletonStream(nn.Module):
    """Point-level convs, joint-to-channel transpose, then spatial convs."""

    def __init__(self, config: SkeletonEncoderConfig):
        super().__init__()
        c1, c2 = config.point_channels
        self.point = nn.Sequential(
            nn.Conv2d(config.coord_channels, c1, kernel_size=1),
            nn.BatchNorm2d(c1),
            nn.ReLU(),
            nn.Conv2d(c1, c2, kernel_size=(3, 1), padding=(1, 0)),
            nn.BatchNorm2d(c2),
            nn.ReLU(),
        )
        blocks = []
        prev = config.num_joints
        for out in config.joint_channels:
            blocks += [
                nn.Conv2d(prev, out, kernel_size=3, padding=1),
                nn.BatchNorm2d(out),
                nn.ReLU(),
                nn.MaxPool2d(2, ceil_mode=True),
            ]
            prev = out
        self.joint = nn.Sequential(*blocks)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x: (N, C, T, J) -> point features, then joints become channels
        h = self.point(x)
        h = h.permute(0, 3, 2, 1)
        return self.joint(h)


class SkeletonEncoder(nn.Module):
    """Two-stream hierarchical co-occurrence encoder.

    (N, T, J, C) in, (N, feature_dim) out. The motion stream sees frame
    differences (last frame zero-padded); both streams are concatenated along
    channels before the fused conv stages, a global spatial max pool and the
    final fully-connected layer.
    """

    def __init__(self, config: SkeletonEncoderConfig):
        super().__init__()
        self.config = config
        self.position_stream = _SkeletonStream(config)
        self.motion_stream = _SkeletonStream(config)
        blocks = []
        prev = 2 * config.joint_channels[-1]
        for out in config.fused_channels:
            blocks += [
                nn.Conv2d(prev, out, kernel_size=3, padding=1),
                nn.BatchNorm2d(out),
                nn.ReLU(),
                nn.MaxPool2d(2, ceil_mode=True),
            ]
            prev = out
        self.fused = nn.Sequential(*blocks)
        self.fc = nn.Linear(config.fused_channels[-1], config.feature_dim)

    @property
    def feature_dim(self) -> int:
        return self.config.feature_dim

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        cfg = self.config
        if x.ndim != 4 or x.shape[2] != cfg.num_joints or x.shape[3] != cfg.coord_channels:
            raise ValueError(
                f"expected (N, T, {cfg.num_joints}, {cfg.coord_channels}) input, got {tuple(x.shape)}"
            )
        if x.shape[0] == 0:
            return x.new_zeros((0, cfg.feature_dim))
        motion = torch.zeros_like(x)
        if x.shape[1] > 1:
            motion[:, :-1] = x[:, 1:] - x[:, :-1]
        pos = x.permute(0, 3, 1, 2)      # (N, C, T, J)
        mot = motion.permute(0, 3, 1, 2)
        h = torch.cat([self.position_stream(pos), self.motion_stream(mot)], dim=1)
        h = self.fused(h)
        h = h.flatten(2).max(dim=2).values
        return self.fc(h)


class ProjectionHead(nn.Module):
    """Two-layer MLP mapping encoder features into the contrastive space.

    The output is intentionally left unnormalized; cosine similarity
    normalizes downstream.
    """

    def __init__(self, config: ProjectionHeadConfig):
        super().__init__()
        self.config = config
        self.net = nn.Sequential(
            nn.Linear(config.input_dim, config.hidden_dim),
            nn.ReLU(),
            nn.Linear(config.hidden_dim, config.output_dim),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 2 or x.shape[1] != self.config.input_dim:
            raise ValueError(f"expected (N, {self.config.input_dim}) input, got {tuple(x.shape)}")
        return self.net(x)


class FusionClassifier(nn.Module):
    """Per-modality linear+BN+ReLU maps to a shared width, concatenation,
    then a linear classifier producing logits."""

    def __init__(self, config: FusionHeadConfig):
        super().__init__()
        self.config = config
        self.map_inertial = nn.Sequential(
            nn.Linear(config.inertial_dim, config.per_modality_out),
            nn.BatchNorm1d(config.per_modality_out),
            nn.ReLU(),
        )
        self.map_skeleton = nn.Sequential(
            nn.Linear(config.skeleton_dim, config.per_modality_out),
            nn.BatchNorm1d(config.per_modality_out),
            nn.ReLU(),
        )
        self.classifier = nn.Linear(2 * config.per_modality_out, config.classifier_classes)

    def forward(self, inertial_features: torch.Tensor, skeleton_features: torch.Tensor) -> torch.Tensor:
        cfg = self.config
        if inertial_features.shape[1] != cfg.inertial_dim or skeleton_features.shape[1] != cfg.skeleton_dim:
            raise ValueError(
                f"expected feature dims ({cfg.inertial_dim}, {cfg.skeleton_dim}), got "
                f"({inertial_features.shape[1]}, {skeleton_features.shape[1]})"
            )
        fused = torch.cat(
            [self.map_inertial(inertial_features), self.map_skeleton(skeleton_features)], dim=1
        )
        return self.classifier(fused)
