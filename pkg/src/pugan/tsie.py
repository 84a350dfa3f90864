"""Two-stream interaction enhancement network.

Two independent five-level encoders ingest the raw underwater image and its
color-enhanced counterpart. At every level a degradation-quantization step
thresholds (a) the normalized feature difference between the streams and
(b) the inverted, downsampled transmission map, combines them into sigmoid
weights, and reinforces the raw-stream features through a residual product.
A symmetric decoder with skip connections produces the enhanced image.
"""

from __future__ import annotations

import torch
from torch import nn
import torch.nn.functional as F

from .blocks import ConvBNReLU, ResidualBlock
from .errors import ShapeError

DOWNSCALE = 32  # five stride-2 stages


def threshold_mask(values, alpha):
    """Zero out entries below `alpha`: v * step(v - alpha).

    The step factor is a hard binary mask with no gradient; gradients flow
    only through the retained values.
    """
    keep = (values >= alpha).to(values.dtype).detach()
    return values * keep


def minmax_normalize(values, eps=1e-8):
    """Rescale each (sample, channel) plane into [0, 1] over its spatial extent."""
    lo = values.amin(dim=(-2, -1), keepdim=True)
    hi = values.amax(dim=(-2, -1), keepdim=True)
    return (values - lo) / (hi - lo + eps)


def transmission_mask(t, level, alpha):
    """Low-transmission mask at encoder level `level` (1-based).

    The 3-channel transmission map is averaged to one channel, max-pooled
    `level` times to match the level's spatial size, inverted so that large
    values mean strong degradation, then thresholded at `alpha`. The single
    channel broadcasts across feature channels.
    """
    if not 1 <= level <= 5:
        raise ShapeError(f"encoder level must be in 1..5, got {level}")
    pooled = t.mean(dim=1, keepdim=True)
    for _ in range(level):
        pooled = F.max_pool2d(pooled, 2)
    return threshold_mask(1.0 - pooled, alpha)


def apply_weights(features, weights):
    """Residual reinforcement: e + e * w."""
    if features.shape[-2:] != weights.shape[-2:]:
        raise ShapeError(
            f"feature spatial size {tuple(features.shape[-2:])} does not match "
            f"weight spatial size {tuple(weights.shape[-2:])}"
        )
    return features + features * weights


class DegradationQuantizer(nn.Module):
    """Per-level learned mask combiner for one encoder width."""

    def __init__(self, channels, alpha):
        super().__init__()
        self.alpha = alpha
        self.diff_transform = ConvBNReLU(channels, channels)
        self.weight_transform = ConvBNReLU(channels, channels)
        self.weight_head = nn.Conv2d(channels, channels, 3, padding=1)

    def difference_mask(self, e_top, e_middle):
        """Thresholded, normalized magnitude of the stream difference."""
        if e_top.shape != e_middle.shape:
            raise ShapeError(
                f"stream shapes disagree: {tuple(e_top.shape)} vs {tuple(e_middle.shape)}"
            )
        f = minmax_normalize(self.diff_transform((e_top - e_middle).abs()))
        return threshold_mask(f, self.alpha)

    def weights(self, dif, t_mask):
        """Sigmoid fusion of the two degradation cues."""
        return torch.sigmoid(self.weight_head(self.weight_transform(t_mask + dif)))

    def forward(self, e_top, e_middle, t_mask):
        dif = self.difference_mask(e_top, e_middle)
        return apply_weights(e_top, self.weights(dif, t_mask))


class EncoderBlock(nn.Module):
    """conv 3x3 -> max-pool /2 -> ReLU -> residual block."""

    def __init__(self, in_channels, out_channels):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, out_channels, 3, padding=1)
        self.res = ResidualBlock(out_channels)

    def forward(self, x):
        return self.res(torch.relu(F.max_pool2d(self.conv(x), 2)))


class Encoder(nn.Module):
    """Five-level feature pyramid; level k is at 1/2^k scale."""

    def __init__(self, widths):
        super().__init__()
        chans = [3, *widths]
        self.blocks = nn.ModuleList(
            EncoderBlock(chans[i], chans[i + 1]) for i in range(len(widths))
        )

    def forward(self, x):
        h, w = x.shape[-2:]
        if h % DOWNSCALE or w % DOWNSCALE:
            raise ShapeError(
                f"encoder input spatial size ({h}, {w}) must be divisible by {DOWNSCALE}"
            )
        levels = []
        for block in self.blocks:
            x = block(x)
            levels.append(x)
        return levels


class Decoder(nn.Module):
    """Mirror of the encoder with skip concatenation and x2 nearest upsampling."""

    def __init__(self, widths):
        super().__init__()
        self.widths = tuple(widths)
        self.bottom = ResidualBlock(widths[-1])
        carry = widths[-1]  # channels of de_{k+1}
        ups, fuses = [], []
        for w in reversed(widths[:-1]):
            ups.append(ConvBNReLU(carry, w))
            fuses.append(ResidualBlock(2 * w))
            carry = 2 * w
        self.up_transforms = nn.ModuleList(ups)  # ordered level 4 -> 1
        self.fuse_blocks = nn.ModuleList(fuses)
        self.head = nn.Conv2d(carry, 3, 3, padding=1)

    def _check_pyramid(self, levels):
        if len(levels) != len(self.widths):
            raise ShapeError(f"expected {len(self.widths)} pyramid levels, got {len(levels)}")
        for k, (feat, width) in enumerate(zip(levels, self.widths), start=1):
            if feat.shape[1] != width:
                raise ShapeError(
                    f"pyramid level {k} has {feat.shape[1]} channels, expected {width}"
                )
            if k > 1 and feat.shape[-2:] != tuple(s // 2 for s in levels[k - 2].shape[-2:]):
                raise ShapeError(
                    f"pyramid level {k} spatial size {tuple(feat.shape[-2:])} does not halve "
                    f"level {k - 1} size {tuple(levels[k - 2].shape[-2:])}"
                )

    def forward(self, levels):
        self._check_pyramid(levels)
        de = self.bottom(levels[-1])
        for up, fuse, skip in zip(self.up_transforms, self.fuse_blocks, reversed(levels[:-1])):
            x = up(F.interpolate(de, scale_factor=2, mode="nearest"))
            de = fuse(torch.cat([x, skip], dim=1))
        out = F.interpolate(de, scale_factor=2, mode="nearest")
        return torch.sigmoid(self.head(out))


class Generator(nn.Module):
    """Full enhancement generator over an input image and its estimated physics."""

    def __init__(self, widths=(32, 64, 128, 256, 512), dq_alpha=0.7):
        super().__init__()
        self.dq_alpha = dq_alpha
        self.top_encoder = Encoder(widths)
        self.middle_encoder = Encoder(widths)
        self.quantizers = nn.ModuleList(DegradationQuantizer(w, dq_alpha) for w in widths)
        self.decoder = Decoder(widths)

    def forward(self, image, par_out):
        top = self.top_encoder(image)
        middle = self.middle_encoder(par_out.j_prime)
        enhanced = []
        for k, (e_t, e_m, dq) in enumerate(zip(top, middle, self.quantizers), start=1):
            t_mask = transmission_mask(par_out.t, k, self.dq_alpha)
            enhanced.append(dq(e_t, e_m, t_mask))
        return self.decoder(enhanced)
