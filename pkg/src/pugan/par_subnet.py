"""Parameter-estimation subnetwork.

Three learned estimators recover the physical quantities needed for model
inversion: per-channel attenuation coefficients, a normalized depth map, and
a transmission map. The color-enhanced image and the re-derived depth map
are computed from them with the pure physics operations.
"""

from __future__ import annotations

from typing import NamedTuple

import torch
from torch import nn
import torch.nn.functional as F

from . import physics
from .blocks import ConvBNReLU, ResidualBlock
from .errors import ShapeError


class ParOutputs(NamedTuple):
    beta: torch.Tensor  # (batch, 3) positive attenuation coefficients
    d1: torch.Tensor  # (batch, 1, H, W) directly estimated depth
    t: torch.Tensor  # (batch, 3, H, W) estimated transmission
    d2: torch.Tensor  # (batch, 1, H, W) depth re-derived from t and beta
    j_prime: torch.Tensor  # (batch, 3, H, W) color-enhanced image


def _check_image(x, name="image"):
    if x.ndim != 4 or x.shape[1] != 3:
        raise ShapeError(f"{name} must be (batch, 3, H, W), got {tuple(x.shape)}")


class _AttenuationBranch(nn.Module):
    """Single-channel conv/pool trunk with a softplus-positive scalar head."""

    def __init__(self, width, hidden):
        super().__init__()
        self.trunk = nn.Sequential(
            nn.Conv2d(1, width, 3, padding=1),
            nn.Conv2d(width, width, 3, padding=1),
            nn.MaxPool2d(2),
            nn.ReLU(),
        )
        self.head = nn.Sequential(
            nn.AdaptiveAvgPool2d(4),
            nn.Flatten(),
            nn.Linear(width * 16, hidden),
            nn.ReLU(),
            nn.Linear(hidden, 1),
            nn.Softplus(),
        )

    def forward(self, plane):
        return self.head(self.trunk(plane))


class AttenuationEstimator(nn.Module):
    """Per-channel attenuation regressors, concatenated to a triple.

    One independent branch per color channel; the adaptive 4x4 average pool
    inside each branch makes the flattened size independent of resolution.
    """

    def __init__(self, width=32, hidden=64):
        super().__init__()
        self.branches = nn.ModuleList(_AttenuationBranch(width, hidden) for _ in range(3))

    def forward(self, image):
        _check_image(image)
        coeffs = [branch(image[:, c : c + 1]) for c, branch in enumerate(self.branches)]
        return torch.cat(coeffs, dim=1)


class DepthEstimator(nn.Module):
    """Sigmoid-bounded single-channel depth regressor with one residual block."""

    def __init__(self, width=32):
        super().__init__()
        self.stem = ConvBNReLU(3, width)
        self.rbd = ResidualBlock(width)
        self.neck = ConvBNReLU(width, width)
        self.head = nn.Conv2d(width, 1, 3, padding=1)

    def forward(self, image):
        _check_image(image)
        return torch.sigmoid(self.head(self.neck(self.rbd(self.stem(image)))))


class TransmissionEstimator(nn.Module):
    """Transmission regressor driven by the depth-attenuation product map."""

    def __init__(self, width=32):
        super().__init__()
        self.body = ConvBNReLU(3, width)
        self.head = nn.Conv2d(width, 3, 3, padding=1)

    def forward(self, d1, beta):
        if d1.ndim != 4 or d1.shape[1] != 1:
            raise ShapeError(f"depth must be (batch, 1, H, W), got {tuple(d1.shape)}")
        product = d1 * beta.unsqueeze(-1).unsqueeze(-1)  # (batch, 3, H, W)
        return torch.sigmoid(self.head(self.body(product)))


class ParSubnet(nn.Module):
    """Bundles the three estimators and the physics-derived outputs."""

    def __init__(self, width=32, attenuation_hidden=64):
        super().__init__()
        self.attenuation = AttenuationEstimator(width, attenuation_hidden)
        self.depth = DepthEstimator(width)
        self.transmission = TransmissionEstimator(width)

    def forward(self, image):
        _check_image(image)
        beta = self.attenuation(image)
        d1 = self.depth(image)
        t = self.transmission(d1, beta)
        d2 = physics.depth_from_transmission(t, beta)
        j_prime = physics.invert_color_enhanced(image, t)
        return ParOutputs(beta=beta, d1=d1, t=t, d2=d2, j_prime=j_prime)


def par_loss(d1, d2, d_gt, beta, beta_gt):
    """Supervision for the parameter estimators.

    Per sample: sum of absolute depth errors for both depth estimates,
    normalized by pixel count, plus the mean absolute per-channel attenuation
    error; averaged over the batch.
    """
    if d1.shape != d_gt.shape or d2.shape != d_gt.shape:
        raise ShapeError(
            f"depth shapes disagree: d1 {tuple(d1.shape)}, d2 {tuple(d2.shape)}, "
            f"target {tuple(d_gt.shape)}"
        )
    if beta.shape != beta_gt.shape:
        raise ShapeError(
            f"attenuation shapes disagree: {tuple(beta.shape)} vs {tuple(beta_gt.shape)}"
        )
    h, w = d_gt.shape[-2:]
    if h <= 0 or w <= 0:
        raise ShapeError("depth maps must have positive spatial size")
    depth_term = ((d_gt - d1).abs() + (d_gt - d2).abs()).flatten(1).sum(dim=1) / (h * w)
    beta_term = (beta - beta_gt).abs().mean(dim=1)
    return (depth_term + beta_term).mean()
