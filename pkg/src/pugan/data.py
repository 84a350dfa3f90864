"""Dataset ingestion and deterministic preprocessing.

Two on-disk layouts are supported:

* paired enhancement data: ``root/{train,test}A/`` holds degraded images and
  ``root/{train,test}B/`` the references, matched by filename stem;
* synthetic parameter-estimation data: ``root/images/*.png`` with 16-bit
  grayscale depth labels in ``root/depth/`` and per-image attenuation
  coefficients in ``root/beta.csv`` (header ``id,beta_r,beta_g,beta_b``).

A seeded fixture generator produces physics-consistent synthetic samples so
the full pipeline runs without external datasets.
"""

from __future__ import annotations

import csv
import os
import queue
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from . import physics
from .errors import ConfigError, DataError

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")
DEPTH_SCALE = 65535.0  # 16-bit grayscale full scale


@dataclass(frozen=True)
class PairedSample:
    degraded: torch.Tensor  # (3, H, W) in [0, 1]
    reference: torch.Tensor  # (3, H, W) in [0, 1]
    id: str


@dataclass(frozen=True)
class SyntheticSample:
    degraded: torch.Tensor  # (3, H, W) in [0, 1]
    depth: torch.Tensor  # (1, H, W) normalized depth in [0, 1]
    beta: torch.Tensor  # (3,) positive attenuation coefficients
    id: str


class _ListDataset:
    def __init__(self, samples):
        self.samples = list(samples)
        ids = [s.id for s in self.samples]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise DataError(f"duplicate sample ids: {dupes}")

    def __len__(self):
        return len(self.samples)

    def __getitem__(self, index):
        return self.samples[index]

    def __iter__(self):
        return iter(self.samples)


class PairedDataset(_ListDataset):
    pass


class SyntheticDataset(_ListDataset):
    pass


def load_image(path, image_size=None):
    """Decode a PNG/JPEG into a (3, H, W) float tensor in [0, 1]."""
    try:
        with Image.open(path) as img:
            img = img.convert("RGB")
            if image_size is not None and img.size != (image_size, image_size):
                img = img.resize((image_size, image_size), Image.BILINEAR)
            arr = np.asarray(img, dtype=np.float32) / 255.0
    except (OSError, SyntaxError) as exc:
        raise DataError(f"cannot decode image {path}: {exc}") from exc
    return torch.from_numpy(arr).permute(2, 0, 1).contiguous()


def load_depth(path, image_size=None):
    """Decode a 16-bit grayscale PNG into a (1, H, W) tensor in [0, 1]."""
    try:
        with Image.open(path) as img:
            arr = np.asarray(img, dtype=np.float32)
    except (OSError, SyntaxError) as exc:
        raise DataError(f"cannot decode depth map {path}: {exc}") from exc
    if arr.ndim != 2:
        raise DataError(f"depth map {path} must be single-channel, got shape {arr.shape}")
    depth = torch.from_numpy(arr / DEPTH_SCALE).unsqueeze(0)
    if image_size is not None and depth.shape[-2:] != (image_size, image_size):
        depth = F.interpolate(
            depth.unsqueeze(0), size=(image_size, image_size), mode="bilinear",
            align_corners=False,
        ).squeeze(0)
    return depth


def save_image(tensor, path):
    """Write a (3, H, W) or (1, H, W) tensor in [0, 1] as an 8-bit PNG."""
    arr = (tensor.detach().clamp(0, 1).cpu().numpy() * 255.0).round().astype(np.uint8)
    if arr.shape[0] == 1:
        img = Image.fromarray(arr[0], mode="L")
    else:
        img = Image.fromarray(np.moveaxis(arr, 0, 2), mode="RGB")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    img.save(path)


def save_depth(tensor, path):
    """Write a (1, H, W) tensor in [0, 1] as a 16-bit grayscale PNG."""
    arr = (tensor.detach().clamp(0, 1).cpu().numpy()[0] * DEPTH_SCALE).round().astype(np.uint16)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path)


def _collect_stems(directory):
    files = {}
    for entry in sorted(Path(directory).iterdir()):
        if entry.suffix.lower() not in IMAGE_EXTENSIONS:
            continue
        if entry.stem in files:
            raise DataError(f"duplicate stem {entry.stem!r} in {directory}")
        files[entry.stem] = entry
    return files


def load_paired(root, split="train", image_size=256):
    """Load a paired dataset, matching A/B files by filename stem."""
    root = Path(root)
    dir_a, dir_b = root / f"{split}A", root / f"{split}B"
    for d in (dir_a, dir_b):
        if not d.is_dir():
            raise DataError(f"missing dataset directory {d}")
    files_a, files_b = _collect_stems(dir_a), _collect_stems(dir_b)
    orphans = sorted(set(files_a) ^ set(files_b))
    if orphans:
        raise DataError(f"unpaired filename stems between {dir_a.name} and {dir_b.name}: {orphans}")
    samples = [
        PairedSample(
            degraded=load_image(files_a[stem], image_size),
            reference=load_image(files_b[stem], image_size),
            id=stem,
        )
        for stem in sorted(files_a)
    ]
    if not samples:
        raise DataError(f"no image pairs found under {root}")
    return PairedDataset(samples)


def load_synthetic(root, image_size=None):
    """Load a synthetic dataset with depth and attenuation labels."""
    root = Path(root)
    image_dir, depth_dir, beta_path = root / "images", root / "depth", root / "beta.csv"
    if not image_dir.is_dir():
        raise DataError(f"missing dataset directory {image_dir}")
    if not beta_path.is_file():
        raise DataError(f"missing attenuation table {beta_path}")
    betas = {}
    with open(beta_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        expected = ["id", "beta_r", "beta_g", "beta_b"]
        if reader.fieldnames != expected:
            raise DataError(f"beta.csv header must be {','.join(expected)}, got {reader.fieldnames}")
        for row in reader:
            try:
                triple = tuple(float(row[f"beta_{c}"]) for c in "rgb")
            except (TypeError, ValueError) as exc:
                raise DataError(f"malformed beta.csv row for id {row.get('id')!r}") from exc
            if any(b <= 0 for b in triple):
                raise DataError(f"non-positive attenuation for id {row['id']!r}: {triple}")
            betas[row["id"]] = triple
    samples = []
    for stem, path in sorted(_collect_stems(image_dir).items()):
        depth_path = depth_dir / f"{stem}.png"
        if not depth_path.is_file():
            raise DataError(f"missing depth map for sample {stem!r}")
        if stem not in betas:
            raise DataError(f"missing beta.csv row for sample {stem!r}")
        samples.append(
            SyntheticSample(
                degraded=load_image(path, image_size),
                depth=load_depth(depth_path, image_size),
                beta=torch.tensor(betas[stem], dtype=torch.float32),
                id=stem,
            )
        )
    if not samples:
        raise DataError(f"no synthetic samples found under {root}")
    return SyntheticDataset(samples)


def _smooth_field(rng, channels, size, lo, hi, grid=4):
    """Low-frequency random field: a coarse grid upsampled bilinearly."""
    base = torch.from_numpy(rng.uniform(0.0, 1.0, size=(1, channels, grid, grid)))
    field = F.interpolate(base, size=(size, size), mode="bilinear", align_corners=True)
    return (lo + (hi - lo) * field[0]).to(torch.float32)


def fixture_components(n, size, seed):
    """Raw ingredients of n synthetic samples: J, d, beta, A, t, and I.

    Clean images and depth are smooth random fields (the scene carries finer
    spatial structure than the depth, as real scenes do), attenuation is
    drawn in [0.3, 2.0] per channel, and background light in [0.6, 0.9]; the
    degraded image follows the exponential-attenuation degradation model
    exactly, so every label is physics-consistent.
    """
    if n < 1:
        raise ValueError(f"need at least one sample, got n={n}")
    if size <= 0 or size % 32 != 0:
        raise ValueError(f"fixture size must be a positive multiple of 32, got {size}")
    rng = np.random.default_rng(seed)
    parts = []
    for idx in range(n):
        clean = _smooth_field(rng, 3, size, 0.1, 0.9, grid=8)
        # each scene occupies its own depth band, so per-image depth level
        # varies and stays in (0, 1)
        lo = rng.uniform(0.05, 0.55)
        depth = _smooth_field(rng, 1, size, lo, lo + rng.uniform(0.25, 0.4), grid=3)
        beta = torch.from_numpy(rng.uniform(0.3, 2.0, size=3)).to(torch.float32)
        background = torch.from_numpy(rng.uniform(0.6, 0.9, size=3)).to(torch.float32)
        t = physics.transmission_from_depth(depth.unsqueeze(0), beta)
        degraded = physics.synthesize_degraded(clean.unsqueeze(0), t, background)
        parts.append(
            {
                "id": f"fx{idx:04d}",
                "clean": clean,
                "depth": depth,
                "beta": beta,
                "background": background,
                "t": t[0],
                "degraded": degraded[0],
            }
        )
    return parts


def make_fixture_set(n, size, seed):
    """Synthetic dataset with depth and attenuation labels, deterministic in seed."""
    return SyntheticDataset(
        SyntheticSample(degraded=p["degraded"], depth=p["depth"], beta=p["beta"], id=p["id"])
        for p in fixture_components(n, size, seed)
    )


def make_paired_fixture_set(n, size, seed):
    """Paired dataset built from the same generator: degraded vs clean image."""
    return PairedDataset(
        PairedSample(degraded=p["degraded"], reference=p["clean"], id=p["id"])
        for p in fixture_components(n, size, seed)
    )


def save_synthetic(dataset, root):
    """Write a SyntheticDataset in the on-disk layout load_synthetic expects."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "depth").mkdir(parents=True, exist_ok=True)
    with open(root / "beta.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "beta_r", "beta_g", "beta_b"])
        for s in dataset:
            save_image(s.degraded, root / "images" / f"{s.id}.png")
            save_depth(s.depth, root / "depth" / f"{s.id}.png")
            writer.writerow([s.id, *(f"{v:.8f}" for v in s.beta.tolist())])
    return root


def save_paired(dataset, root, split="train"):
    """Write a PairedDataset in the on-disk layout load_paired expects."""
    root = Path(root)
    for s in dataset:
        save_image(s.degraded, root / f"{split}A" / f"{s.id}.png")
        save_image(s.reference, root / f"{split}B" / f"{s.id}.png")
    return root


def stack_paired(samples):
    """Collate paired samples into (degraded, reference) batch tensors."""
    return (
        torch.stack([s.degraded for s in samples]),
        torch.stack([s.reference for s in samples]),
    )


def stack_synthetic(samples):
    """Collate synthetic samples into (degraded, depth, beta) batch tensors."""
    return (
        torch.stack([s.degraded for s in samples]),
        torch.stack([s.depth for s in samples]),
        torch.stack([s.beta for s in samples]),
    )


def iter_batches(dataset, batch_size, collate, generator=None):
    """Yield collated batches in a deterministic order.

    With a torch.Generator the order is a seeded permutation; otherwise the
    dataset's own (lexicographic) order is used. The final short batch is kept.
    """
    if generator is None:
        order = range(len(dataset))
    else:
        order = torch.randperm(len(dataset), generator=generator).tolist()
    chunk = []
    for idx in order:
        chunk.append(dataset[idx])
        if len(chunk) == batch_size:
            yield collate(chunk)
            chunk = []
    if chunk:
        yield collate(chunk)


def prefetch_workers():
    """Prefetch depth from the PUGAN_NUM_WORKERS environment variable."""
    raw = os.environ.get("PUGAN_NUM_WORKERS", "0")
    try:
        workers = int(raw)
    except ValueError as exc:
        raise ConfigError(f"PUGAN_NUM_WORKERS must be an integer, got {raw!r}") from exc
    return max(0, workers)


class Prefetcher:
    """Order-preserving background batch producer.

    One producer thread fills a bounded queue whose capacity equals the
    worker cap; batches are immutable once enqueued and arrive in the source
    order, so prefetching never perturbs determinism. A cap of zero iterates
    inline.
    """

    _DONE = object()

    def __init__(self, iterable, workers=None):
        self.iterable = iterable
        self.workers = prefetch_workers() if workers is None else workers

    def __iter__(self):
        if self.workers <= 0:
            yield from self.iterable
            return
        q = queue.Queue(maxsize=self.workers)
        error = []

        def produce():
            try:
                for item in self.iterable:
                    q.put(item)
            except BaseException as exc:  # surfaced in the consumer
                error.append(exc)
            finally:
                q.put(self._DONE)

        thread = threading.Thread(target=produce, daemon=True)
        thread.start()
        while True:
            item = q.get()
            if item is self._DONE:
                break
            yield item
        thread.join()
        if error:
            raise error[0]
