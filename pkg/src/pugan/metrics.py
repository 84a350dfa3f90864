"""Image quality metrics: full-reference PSNR/MSE and non-reference UIQM/UCIQE.

Inputs are RGB images with values in [0, 1], accepted as numpy (H, W, 3)
arrays or torch tensors shaped (3, H, W) or (1, 3, H, W). MSE and PSNR are
computed on the 0-255 intensity scale so reported magnitudes line up with the
usual x10^3 tabulation convention.

The two non-reference metrics are weighted sums of standard components:

* UIQM = 0.0282*UICM + 0.2953*UISM + 3.5753*UIConM, where UICM combines
  trimmed means and variances of the RG/YB opponent channels, UISM is a
  Sobel-edge EME over blocks, and UIConM a logarithmic block contrast.
* UCIQE = 0.4680*sigma_chroma + 0.2745*luminance_contrast + 0.2576*mean_sat
  in CIELAB with L scaled by 1/100 and a, b by 1/128; luminance contrast is
  the mean of the top percentile of L minus the mean of the bottom
  percentile.

Block sizes and color-space scalings are pinned here; published evaluation
code for these metrics varies in exactly these details, so absolute values
are comparable only within this implementation.
"""

from __future__ import annotations

import json
import csv as csv_module
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import ShapeError

UIQM_WEIGHTS = (0.0282, 0.2953, 3.5753)
UICM_COEFFS = (-0.0268, 0.1586)
UCIQE_WEIGHTS = (0.4680, 0.2745, 0.2576)
LUMA_WEIGHTS = (0.299, 0.587, 0.114)
BLOCK_SIZE = 8
PSNR_CAP_DB = 100.0

# sRGB to XYZ (D65); the white point is taken as the row sums so neutral
# gray maps to exactly zero chroma.
_RGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_WHITE = _RGB_TO_XYZ.sum(axis=1)


def _as_hw3(x, name="image"):
    """Coerce an accepted image layout to float64 (H, W, 3)."""
    if isinstance(x, torch.Tensor):
        arr = x.detach().cpu().numpy()
    else:
        arr = np.asarray(x)
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 4 and arr.shape[0] == 1:
        arr = arr[0]
    if arr.ndim == 3 and arr.shape[0] == 3 and arr.shape[2] != 3:
        arr = np.moveaxis(arr, 0, 2)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ShapeError(f"{name} must be RGB with 3 channels, got shape {arr.shape}")
    return arr


def mse(enhanced, reference):
    """Mean squared error on the 0-255 scale."""
    e = _as_hw3(enhanced, "enhanced")
    y = _as_hw3(reference, "reference")
    if e.shape != y.shape:
        raise ShapeError(f"image shapes disagree: {e.shape} vs {y.shape}")
    diff = (e - y) * 255.0
    return float(np.mean(diff * diff))


def psnr(enhanced, reference):
    """Peak signal-to-noise ratio in dB, capped at 100 for identical images."""
    err = mse(enhanced, reference)
    if err == 0.0:
        return PSNR_CAP_DB
    return float(10.0 * np.log10(255.0**2 / err))


def _trimmed_mean(values, alpha=0.1):
    """Asymmetric alpha-trimmed mean over a flat array."""
    s = np.sort(values, kind="stable")
    k = s.size
    lo = int(np.ceil(alpha * k))
    hi = int(np.floor(alpha * k))
    trimmed = s[lo : k - hi]
    if trimmed.size == 0:
        trimmed = s
    return float(np.mean(trimmed))


def uicm(image):
    """Colorfulness from the RG and YB opponent channels (0-255 scale)."""
    x = _as_hw3(image) * 255.0
    rg = (x[:, :, 0] - x[:, :, 1]).ravel()
    yb = ((x[:, :, 0] + x[:, :, 1]) / 2.0 - x[:, :, 2]).ravel()
    mu_rg, mu_yb = _trimmed_mean(rg), _trimmed_mean(yb)
    var_rg = float(np.mean((rg - mu_rg) ** 2))
    var_yb = float(np.mean((yb - mu_yb) ** 2))
    c1, c2 = UICM_COEFFS
    return c1 * np.hypot(mu_rg, mu_yb) + c2 * np.sqrt(var_rg + var_yb)


def _sobel_magnitude(plane):
    """3x3 Sobel gradient magnitude with replicate padding."""
    p = np.pad(plane, 1, mode="edge")
    gx = (
        (p[:-2, 2:] + 2.0 * p[1:-1, 2:] + p[2:, 2:])
        - (p[:-2, :-2] + 2.0 * p[1:-1, :-2] + p[2:, :-2])
    )
    gy = (
        (p[2:, :-2] + 2.0 * p[2:, 1:-1] + p[2:, 2:])
        - (p[:-2, :-2] + 2.0 * p[:-2, 1:-1] + p[:-2, 2:])
    )
    return np.hypot(gx, gy)


def _blocks(plane, block):
    h, w = plane.shape
    block = min(block, h, w)
    for i in range(h // block):
        for j in range(w // block):
            yield plane[i * block : (i + 1) * block, j * block : (j + 1) * block]


def _eme(plane, block):
    """Enhancement measure: mean log max/min contrast over blocks."""
    h, w = plane.shape
    b = min(block, h, w)
    k = (h // b) * (w // b)
    total = 0.0
    for blk in _blocks(plane, block):
        lo, hi = float(blk.min()), float(blk.max())
        if lo > 0.0:
            total += np.log(hi / lo)
    return 2.0 * total / k


def uism(image, block=BLOCK_SIZE):
    """Sharpness: luma-weighted EME of Sobel-edge maps per channel."""
    x = _as_hw3(image) * 255.0
    total = 0.0
    for c, weight in enumerate(LUMA_WEIGHTS):
        plane = x[:, :, c]
        total += weight * _eme(_sobel_magnitude(plane) * plane, block)
    return total


def uiconm(image, block=BLOCK_SIZE):
    """Contrast: logarithmic Michelson-style block measure on the luma plane."""
    x = _as_hw3(image) * 255.0
    gray = x[:, :, 0] * LUMA_WEIGHTS[0] + x[:, :, 1] * LUMA_WEIGHTS[1] + x[:, :, 2] * LUMA_WEIGHTS[2]
    h, w = gray.shape
    b = min(block, h, w)
    k = (h // b) * (w // b)
    total = 0.0
    for blk in _blocks(gray, block):
        lo, hi = float(blk.min()), float(blk.max())
        top, bot = hi - lo, hi + lo
        if top > 0.0 and bot > 0.0:
            ratio = top / bot
            total += ratio * np.log(ratio)
    return -total / k


def uiqm(image, block=BLOCK_SIZE):
    """Weighted colorfulness + sharpness + contrast score."""
    c1, c2, c3 = UIQM_WEIGHTS
    return float(c1 * uicm(image) + c2 * uism(image, block) + c3 * uiconm(image, block))


def _rgb_to_lab(x):
    """sRGB in [0, 1] to CIELAB (D65), vectorized over (H, W, 3)."""
    lin = np.where(x <= 0.04045, x / 12.92, ((x + 0.055) / 1.055) ** 2.4)
    xyz = lin @ _RGB_TO_XYZ.T
    ratio = xyz / _WHITE
    delta = 6.0 / 29.0
    f = np.where(ratio > delta**3, np.cbrt(ratio), ratio / (3.0 * delta**2) + 4.0 / 29.0)
    lum = 116.0 * f[:, :, 1] - 16.0
    a = 500.0 * (f[:, :, 0] - f[:, :, 1])
    b = 200.0 * (f[:, :, 1] - f[:, :, 2])
    return lum, a, b


def uciqe(image, percentile=0.01):
    """Chroma spread + luminance contrast + mean saturation in CIELAB."""
    x = _as_hw3(image)
    lum, a, b = _rgb_to_lab(x)
    lum_n = lum / 100.0
    chroma = np.hypot(a / 128.0, b / 128.0)
    sigma_c = float(np.std(chroma))
    flat = np.sort(lum_n.ravel(), kind="stable")
    count = max(1, int(round(percentile * flat.size)))
    contrast = float(np.mean(flat[-count:]) - np.mean(flat[:count]))
    saturation = chroma / (np.sqrt(chroma**2 + lum_n**2) + 1e-12)
    w1, w2, w3 = UCIQE_WEIGHTS
    return float(w1 * sigma_c + w2 * contrast + w3 * float(np.mean(saturation)))


REFERENCE_METRICS = ("psnr", "mse")
NO_REFERENCE_METRICS = ("uiqm", "uciqe")
ALL_METRICS = REFERENCE_METRICS + NO_REFERENCE_METRICS

_COLUMNS = {"psnr": "psnr_db", "mse": "mse", "uiqm": "uiqm", "uciqe": "uciqe"}


@dataclass
class MetricReport:
    """Per-image metric rows plus aggregate means."""

    metrics: list
    rows: list = field(default_factory=list)

    @property
    def columns(self):
        return [_COLUMNS[m] for m in self.metrics]

    def aggregates(self):
        return {
            col: float(np.mean([row[col] for row in self.rows])) for col in self.columns
        }

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv_module.writer(fh)
            writer.writerow(["id", *self.columns])
            for row in self.rows:
                writer.writerow([row["id"], *(repr(row[c]) for c in self.columns)])
            agg = self.aggregates()
            writer.writerow(["mean", *(repr(agg[c]) for c in self.columns)])

    def write_json(self, path):
        doc = {
            "metrics": list(self.metrics),
            "rows": self.rows,
            "aggregates": self.aggregates(),
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write(self, path):
        path = Path(path)
        if path.suffix == ".csv":
            self.write_csv(path)
        elif path.suffix == ".json":
            self.write_json(path)
        else:
            raise ValueError(f"report path must end in .csv or .json, got {path}")


def build_report(predictions, references=None, metrics=ALL_METRICS):
    """Evaluate metrics over named images.

    `predictions` maps id -> image; `references` is the matching ground-truth
    map, required only when a reference metric is requested.
    """
    metrics = list(metrics)
    unknown = [m for m in metrics if m not in ALL_METRICS]
    if unknown:
        raise ValueError(f"unknown metrics: {unknown}; choose from {ALL_METRICS}")
    needs_ref = [m for m in metrics if m in REFERENCE_METRICS]
    if needs_ref and references is None:
        raise ValueError(f"metrics {needs_ref} require reference images")
    report = MetricReport(metrics=metrics)
    for name in sorted(predictions):
        pred = predictions[name]
        row = {"id": name}
        for metric in metrics:
            if metric == "psnr":
                row["psnr_db"] = psnr(pred, references[name])
            elif metric == "mse":
                row["mse"] = mse(pred, references[name])
            elif metric == "uiqm":
                row["uiqm"] = uiqm(pred)
            elif metric == "uciqe":
                row["uciqe"] = uciqe(pred)
        report.rows.append(row)
    return report
