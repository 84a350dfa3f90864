"""Training objectives for the enhancement generator and discriminators."""

from __future__ import annotations

from typing import NamedTuple

import torch
from torch import nn

from .errors import ShapeError

_LOG_EPS = 1e-12  # keeps log terms finite when a discriminator saturates


class AdversarialLosses(NamedTuple):
    d_loss: torch.Tensor
    g_loss: torch.Tensor


def global_similarity_loss(enhanced, reference):
    """Mean absolute error over all pixels, channels, and batch elements."""
    if enhanced.shape != reference.shape:
        raise ShapeError(
            f"image shapes disagree: {tuple(enhanced.shape)} vs {tuple(reference.shape)}"
        )
    return (enhanced - reference).abs().mean()


class PerceptualLoss(nn.Module):
    """L1 distance in the feature space of a fixed random conv extractor.

    The three-layer extractor is drawn once from a dedicated seeded generator
    and frozen, so the loss is identical across runs and independent of the
    global RNG state. It is a self-contained stand-in for a pretrained
    backbone at desk scale.
    """

    def __init__(self, seed=17, widths=(16, 32, 32)):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        chans = [3, *widths]
        layers = []
        for i in range(len(widths)):
            conv = nn.Conv2d(chans[i], chans[i + 1], 3, padding=1)
            with torch.no_grad():
                conv.weight.copy_(torch.empty_like(conv.weight).normal_(0.0, 0.2, generator=gen))
                conv.bias.zero_()
            layers.append(conv)
            if i < len(widths) - 1:
                layers.append(nn.ReLU())
        self.features = nn.Sequential(*layers)
        self.features.requires_grad_(False)

    def forward(self, enhanced, reference):
        if enhanced.shape != reference.shape:
            raise ShapeError(
                f"image shapes disagree: {tuple(enhanced.shape)} vs {tuple(reference.shape)}"
            )
        return (self.features(enhanced) - self.features(reference)).abs().mean()


def _validate_scores(scores, name):
    data = scores.data
    if torch.any(data < 0) or torch.any(data > 1):
        raise ValueError(f"{name} patch scores fall outside [0, 1]; pass sigmoid outputs")
    return scores.responses


def generator_adversarial_loss(scores_fake):
    """Non-saturating generator objective: -log D(fake)."""
    s_fake = _validate_scores(scores_fake, "fake")
    return -torch.log(s_fake.clamp(min=_LOG_EPS)).mean()


def adversarial_losses(scores_real, scores_fake):
    """Minimax cross-entropy on per-sample patch means.

    The discriminator minimizes -[log D(real) + log(1 - D(fake))]; the
    generator term uses the non-saturating form -log D(fake).
    """
    s_real = _validate_scores(scores_real, "real")
    s_fake = _validate_scores(scores_fake, "fake")
    d_loss = -(
        torch.log(s_real.clamp(min=_LOG_EPS)).mean()
        + torch.log((1.0 - s_fake).clamp(min=_LOG_EPS)).mean()
    )
    g_loss = -torch.log(s_fake.clamp(min=_LOG_EPS)).mean()
    return AdversarialLosses(d_loss=d_loss, g_loss=g_loss)


def total_generator_loss(enhanced, reference, d1_fake, d2_fake, weights, perceptual):
    """Weighted sum of both adversarial terms, L1, and the perceptual term."""
    return (
        weights.lambda1 * generator_adversarial_loss(d1_fake)
        + weights.lambda2 * generator_adversarial_loss(d2_fake)
        + weights.lambda3 * global_similarity_loss(enhanced, reference)
        + weights.lambda4 * perceptual(enhanced, reference)
    )
