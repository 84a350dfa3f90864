"""Underwater imaging model: degradation synthesis and inversion.

Conventions: images are (batch, 3, H, W) tensors with values in [0, 1],
depth maps are (batch, 1, H, W) with normalized depth in [0, 1], and
transmission maps are (batch, 3, H, W) in (0, 1). Per-image attenuation and
background-light coefficients are per-channel triples, accepted as shape (3,)
or (batch, 3).

All functions are pure, differentiable, and dtype-generic.
"""

from __future__ import annotations

import torch

from .errors import ShapeError

# Floor applied to the transmission map before division in the inversion
# step; the conventional stabilizer in transmission-based restoration.
T_MIN = 0.1

# Clamp applied before the logarithm when recovering depth from transmission.
T_LOG_EPS = 1e-4


def _check_same_shape(a, b, names):
    if a.shape != b.shape:
        axes = [i for i, (x, y) in enumerate(zip(a.shape, b.shape)) if x != y]
        raise ShapeError(
            f"{names[0]} shape {tuple(a.shape)} does not match {names[1]} "
            f"shape {tuple(b.shape)} (differing axes: {axes or 'rank'})"
        )


def _coeff_view(value, like, name):
    """Broadcast a per-channel triple to (batch, 3, 1, 1) against `like`."""
    coeff = torch.as_tensor(value, dtype=like.dtype, device=like.device)
    if coeff.ndim == 0:
        coeff = coeff.repeat(3)
    if coeff.ndim == 1:
        coeff = coeff.unsqueeze(0)
    if coeff.ndim != 2 or coeff.shape[-1] != 3:
        raise ShapeError(f"{name} must be a per-channel triple, got shape {tuple(coeff.shape)}")
    if coeff.shape[0] not in (1, like.shape[0]):
        raise ShapeError(
            f"{name} batch size {coeff.shape[0]} does not match input batch {like.shape[0]}"
        )
    return coeff.unsqueeze(-1).unsqueeze(-1)


def _check_positive(coeff, name):
    if not torch.all(coeff > 0):
        raise ValueError(f"{name} components must be strictly positive")


def synthesize_degraded(clean, transmission, background):
    """Apply the degradation model: I = J*t + A*(1 - t).

    `background` is the per-channel ambient light in [0, 1]. The result is
    clamped to [0, 1], which is a no-op for in-range inputs.
    """
    _check_same_shape(clean, transmission, ("clean image", "transmission map"))
    a = _coeff_view(background, clean, "background light")
    degraded = clean * transmission + a * (1.0 - transmission)
    return degraded.clamp(0.0, 1.0)


def transmission_from_depth(depth, beta):
    """Exponential attenuation with depth: t_c = exp(-beta_c * d).

    The single depth channel broadcasts to a 3-channel transmission map.
    """
    b = _coeff_view(beta, depth, "attenuation")
    _check_positive(b, "attenuation")
    return torch.exp(-b * depth)


def depth_from_transmission(transmission, beta):
    """Invert the exponential model: d_c = -ln(t_c) / beta_c.

    The transmission is clamped away from {0, 1} before the logarithm; the
    three per-channel depth estimates are averaged into one channel.
    """
    b = _coeff_view(beta, transmission, "attenuation")
    _check_positive(b, "attenuation")
    t = transmission.clamp(T_LOG_EPS, 1.0 - T_LOG_EPS)
    per_channel = -torch.log(t) / b
    return per_channel.mean(dim=1, keepdim=True)


def invert_color_enhanced(degraded, transmission):
    """First-stage restoration: J' = clamp(I / max(t, T_MIN), 0, 1).

    Drops the background-light correction term; the floor prevents intensity
    blow-up where the transmission collapses.
    """
    _check_same_shape(degraded, transmission, ("degraded image", "transmission map"))
    return (degraded / transmission.clamp(min=T_MIN)).clamp(0.0, 1.0)
