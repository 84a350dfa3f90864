"""Shared convolutional building blocks."""

from __future__ import annotations

import torch
from torch import nn


class ConvBNReLU(nn.Module):
    """3x3 convolution, batch normalization, ReLU (stride 1, padding 1)."""

    def __init__(self, in_channels, out_channels):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, out_channels, 3, padding=1)
        self.bn = nn.BatchNorm2d(out_channels)

    def forward(self, x):
        return torch.relu(self.bn(self.conv(x)))


class ResidualBlock(nn.Module):
    """Two ConvBNReLU layers with an additive skip; channel-preserving."""

    def __init__(self, channels):
        super().__init__()
        self.body = nn.Sequential(ConvBNReLU(channels, channels), ConvBNReLU(channels, channels))

    def forward(self, x):
        return x + self.body(x)


def init_weights(module, std=0.02):
    """Conventional normal(0, 0.02) initialization for norm-backed networks.

    Suits modules whose activations are rescaled by batch normalization;
    norm-free modules should use init_weights_fan_in instead or their
    activations collapse toward zero.
    """
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            nn.init.normal_(m.weight, 0.0, std)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.BatchNorm2d):
            nn.init.normal_(m.weight, 1.0, std)
            nn.init.zeros_(m.bias)
    return module


def init_weights_fan_in(module, bn_std=0.02):
    """Fan-in-scaled (Kaiming) normal initialization.

    Keeps a usable activation scale through conv/linear stacks that have no
    normalization layers.
    """
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            nn.init.kaiming_normal_(m.weight, mode="fan_in", nonlinearity="relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.BatchNorm2d):
            nn.init.normal_(m.weight, 1.0, bn_std)
            nn.init.zeros_(m.bias)
    return module
