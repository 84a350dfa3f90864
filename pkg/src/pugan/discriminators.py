"""Dual Markovian patch discriminators.

Both discriminators share the same four-layer strided-conv geometry and score
local patches rather than the whole image; a 256x256 input yields a 16x16
logit grid. The style discriminator sees the image alone; the content
discriminator additionally receives a depth map as a fourth input channel.
Each output cell has a 31x31 receptive field with a stride of 16 pixels.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn
import torch.nn.functional as F

from .errors import ShapeError

PATCH_STRIDE = 16  # product of the four stride-2 layers


@dataclass(frozen=True)
class PatchScores:
    """Per-patch real/fake probabilities, (batch, 1, H/16, W/16) in (0, 1)."""

    data: torch.Tensor

    @property
    def responses(self):
        """Per-sample scalar response: the mean over the patch grid."""
        return self.data.flatten(1).mean(dim=1)

    @property
    def mean(self):
        """Batch-averaged scalar response."""
        return self.responses.mean()


class PatchDiscriminator(nn.Module):
    """Four stride-2 3x3 convolutions with widths (64, 128, 256, 1).

    Batch normalization and the nonlinearity sit between the conv layers; a
    sigmoid head maps patch logits into (0, 1). LeakyReLU(0.2) is the default
    nonlinearity (plain ReLU is selectable but risks dead units).
    """

    def __init__(self, in_channels=3, widths=(64, 128, 256, 1), activation="leaky_relu",
                 leaky_slope=0.2):
        super().__init__()
        if activation == "leaky_relu":
            act = lambda: nn.LeakyReLU(leaky_slope)
        elif activation == "relu":
            act = lambda: nn.ReLU()
        else:
            raise ValueError(f"unknown activation {activation!r}")
        self.in_channels = in_channels
        layers = []
        chans = [in_channels, *widths]
        for i in range(len(widths)):
            layers.append(nn.Conv2d(chans[i], chans[i + 1], 3, stride=2, padding=1))
            if i < len(widths) - 1:
                layers.append(nn.BatchNorm2d(chans[i + 1]))
                layers.append(act())
        self.body = nn.Sequential(*layers)

    def forward(self, image, depth=None):
        x = image
        if depth is not None:
            if depth.shape[-2:] != image.shape[-2:] or depth.shape[0] != image.shape[0]:
                raise ShapeError(
                    f"depth shape {tuple(depth.shape)} does not align with image "
                    f"shape {tuple(image.shape)}"
                )
            x = torch.cat([image, depth], dim=1)
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeError(
                f"discriminator expects {self.in_channels} input channels, "
                f"got shape {tuple(x.shape)}"
            )
        h, w = x.shape[-2:]
        pad_h = (-h) % PATCH_STRIDE
        pad_w = (-w) % PATCH_STRIDE
        if pad_h or pad_w:
            x = F.pad(x, (0, pad_w, 0, pad_h))
        return PatchScores(torch.sigmoid(self.body(x)))


def build_dual(activation="leaky_relu", leaky_slope=0.2, widths=(64, 128, 256, 1)):
    """The style discriminator (image only) and content discriminator (image+depth)."""
    d1 = PatchDiscriminator(3, widths, activation, leaky_slope)
    d2 = PatchDiscriminator(4, widths, activation, leaky_slope)
    return d1, d2
