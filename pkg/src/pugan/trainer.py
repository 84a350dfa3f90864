"""Two-stage training orchestration.

Stage one pretrains the parameter-estimation subnetwork offline: first the
attenuation estimator alone on the coefficient term of its loss, then, with
those weights frozen, the depth and transmission estimators on the two depth
terms. Stage two trains the enhancement generator and the two patch
discriminators alternately (one step each per batch) with the parameter
subnetwork frozen throughout.

A run directory, when requested, receives an immutable ``config.snapshot``,
per-epoch archives under ``checkpoints/``, a ``log.csv`` with one row per
optimization step, and a ``manifest.json`` whose ``latest`` entry points at
the newest checkpoint.
"""

from __future__ import annotations

import csv
import json
import random
from pathlib import Path

import numpy as np
import torch

from . import losses
from .checkpoint import Checkpoint, collect_states, restore_states, save_checkpoint
from .config import STAGE_PAR, STAGE_PUGAN, TrainConfig
from .data import Prefetcher, iter_batches, stack_paired, stack_synthetic
from .discriminators import build_dual
from .blocks import init_weights, init_weights_fan_in
from .errors import DataError
from .par_subnet import ParSubnet
from .tsie import Generator

PUGAN_LOG_COLUMNS = ["epoch", "step", "g_loss", "d1_loss", "d2_loss", "l1", "perceptual", "lr"]
PAR_LOG_COLUMNS = ["epoch", "step", "phase", "loss", "lr"]


def seed_everything(seed):
    """Seed every RNG that training touches."""
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)


def lr_at(epoch, cfg):
    """Step-decayed learning rate for a 0-based epoch index."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return cfg.lr * cfg.lr_decay_factor ** (epoch // cfg.lr_decay_every)


def build_par(cfg):
    par = ParSubnet(cfg.model.par_width, cfg.model.attenuation_hidden)
    init_weights(par)
    # the attenuation branches carry no normalization layers, so they need
    # fan-in-scaled draws to keep a trainable activation scale
    init_weights_fan_in(par.attenuation)
    return par


def build_generator(cfg):
    return init_weights_fan_in(Generator(cfg.model.encoder_widths, cfg.dq_alpha))


def build_discriminators(cfg):
    d1, d2 = build_dual(
        cfg.model.discriminator_activation, cfg.model.leaky_slope,
        cfg.model.discriminator_widths,
    )
    return init_weights_fan_in(d1), init_weights_fan_in(d2)


class RunWriter:
    """Writes the run-directory layout; a None root disables all output."""

    def __init__(self, root, cfg, columns):
        self.root = Path(root) if root is not None else None
        self._log = None
        if self.root is None:
            return
        self.root.mkdir(parents=True, exist_ok=True)
        (self.root / "checkpoints").mkdir(exist_ok=True)
        with open(self.root / "config.snapshot", "w", encoding="utf-8") as fh:
            json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        self._log_file = open(self.root / "log.csv", "w", newline="", encoding="utf-8")
        self._log = csv.DictWriter(self._log_file, fieldnames=columns)
        self._log.writeheader()

    def log(self, **row):
        if self._log is not None:
            self._log.writerow(row)
            self._log_file.flush()

    def save_epoch(self, ckpt, epoch):
        if self.root is None:
            return None
        rel = Path("checkpoints") / f"epoch_{epoch}.ckpt"
        save_checkpoint(ckpt, self.root / rel)
        manifest = {"stage": ckpt.stage, "latest": str(rel), "epoch": epoch}
        with open(self.root / "manifest.json", "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return self.root / rel

    def close(self):
        if self._log is not None:
            self._log_file.close()
            self._log = None


def _epoch_batches(dataset, cfg, collate, epoch):
    order = torch.Generator().manual_seed(cfg.seed * 1_000_003 + epoch)
    return Prefetcher(iter_batches(dataset, cfg.batch_size, collate, order))


def _set_lr(optimizer, lr):
    for group in optimizer.param_groups:
        group["lr"] = lr


def pretrain_par(dataset, cfg, run_dir=None):
    """Offline pretraining of the parameter-estimation subnetwork.

    Phase 1 fits the attenuation estimator on the coefficient error; phase 2
    freezes it bitwise and fits the depth and transmission estimators on the
    two depth errors. Each phase runs cfg.epochs epochs at the fixed cfg.lr.
    """
    cfg.validate()
    if len(dataset) == 0:
        raise DataError("synthetic dataset is empty")
    seed_everything(cfg.seed)
    par = build_par(cfg)
    writer = RunWriter(run_dir, cfg, PAR_LOG_COLUMNS)
    step = 0

    def checkpoint_at(epoch):
        return Checkpoint(
            stage=STAGE_PAR, epoch=epoch, step=step, config=cfg.to_dict(),
            tensors=collect_states({"par": par}),
        )

    try:
        opt = torch.optim.Adam(par.attenuation.parameters(), lr=cfg.lr, betas=cfg.adam_betas)
        for epoch in range(1, cfg.epochs + 1):
            for degraded, _depth, beta_gt in _epoch_batches(dataset, cfg, stack_synthetic, epoch):
                loss = (par.attenuation(degraded) - beta_gt).abs().mean(dim=1).mean()
                opt.zero_grad()
                loss.backward()
                opt.step()
                step += 1
                writer.log(epoch=epoch, step=step, phase=1, loss=loss.item(), lr=cfg.lr)
            writer.save_epoch(checkpoint_at(epoch), epoch)

        par.attenuation.requires_grad_(False)
        head_params = list(par.depth.parameters()) + list(par.transmission.parameters())
        opt = torch.optim.Adam(head_params, lr=cfg.lr, betas=cfg.adam_betas)
        for epoch in range(cfg.epochs + 1, 2 * cfg.epochs + 1):
            for degraded, depth_gt, _beta in _epoch_batches(dataset, cfg, stack_synthetic, epoch):
                out = par(degraded)
                h, w = depth_gt.shape[-2:]
                per_sample = (depth_gt - out.d1).abs() + (depth_gt - out.d2).abs()
                loss = (per_sample.flatten(1).sum(dim=1) / (h * w)).mean()
                opt.zero_grad()
                loss.backward()
                opt.step()
                step += 1
                writer.log(epoch=epoch, step=step, phase=2, loss=loss.item(), lr=cfg.lr)
            writer.save_epoch(checkpoint_at(epoch), epoch)
    finally:
        writer.close()
    return checkpoint_at(2 * cfg.epochs)


class PuganTrainer:
    """Holds the stage-two models/optimizers and runs the alternation steps.

    The parameter subnetwork stays frozen in eval mode; each batch triggers
    one generator step, one style-discriminator step, and one
    content-discriminator step, in that order.
    """

    def __init__(self, cfg, par_ckpt):
        cfg.validate()
        par_ckpt.require_stage(STAGE_PAR)
        self.cfg = cfg
        seed_everything(cfg.seed)
        self.par = build_par(cfg)
        restore_states(par_ckpt, {"par": self.par})
        self.par.requires_grad_(False)
        self.par.eval()
        self.generator = build_generator(cfg)
        self.d1, self.d2 = build_discriminators(cfg)
        self.perceptual = losses.PerceptualLoss(cfg.model.perceptual_seed)
        self.g_opt = torch.optim.Adam(self.generator.parameters(), lr=cfg.lr, betas=cfg.adam_betas)
        self.d1_opt = torch.optim.Adam(self.d1.parameters(), lr=cfg.lr, betas=cfg.adam_betas)
        self.d2_opt = torch.optim.Adam(self.d2.parameters(), lr=cfg.lr, betas=cfg.adam_betas)
        self.step = 0

    def set_lr(self, lr):
        for opt in (self.g_opt, self.d1_opt, self.d2_opt):
            _set_lr(opt, lr)

    def generator_step(self, degraded, reference):
        """One optimizer step on the total generator objective.

        The discriminators are held in eval mode with gradients disabled so
        neither their parameters nor their normalization state move.
        """
        with torch.no_grad():
            par_out = self.par(degraded)
        self.d1.requires_grad_(False)
        self.d2.requires_grad_(False)
        self.d1.eval()
        self.d2.eval()
        enhanced = self.generator(degraded, par_out)
        depth_fake = self.par.depth(enhanced)
        l1 = losses.global_similarity_loss(enhanced, reference)
        lcon = self.perceptual(enhanced, reference)
        w = self.cfg.loss_weights
        g_loss = (
            w.lambda1 * losses.generator_adversarial_loss(self.d1(enhanced))
            + w.lambda2 * losses.generator_adversarial_loss(self.d2(enhanced, depth_fake))
            + w.lambda3 * l1
            + w.lambda4 * lcon
        )
        self.g_opt.zero_grad()
        g_loss.backward()
        self.g_opt.step()
        self.d1.requires_grad_(True)
        self.d2.requires_grad_(True)
        self.d1.train()
        self.d2.train()
        return enhanced.detach(), {"g_loss": g_loss.item(), "l1": l1.item(),
                                   "perceptual": lcon.item()}

    def d1_step(self, reference, fake):
        adv = losses.adversarial_losses(self.d1(reference), self.d1(fake))
        self.d1_opt.zero_grad()
        adv.d_loss.backward()
        self.d1_opt.step()
        return adv.d_loss.item()

    def d2_step(self, reference, fake):
        with torch.no_grad():
            depth_real = self.par.depth(reference)
            depth_fake = self.par.depth(fake)
        adv = losses.adversarial_losses(
            self.d2(reference, depth_real), self.d2(fake, depth_fake)
        )
        self.d2_opt.zero_grad()
        adv.d_loss.backward()
        self.d2_opt.step()
        return adv.d_loss.item()

    def train_batch(self, degraded, reference):
        fake, stats = self.generator_step(degraded, reference)
        stats["d1_loss"] = self.d1_step(reference, fake)
        stats["d2_loss"] = self.d2_step(reference, fake)
        self.step += 1
        return stats

    def checkpoint(self, epoch):
        return Checkpoint(
            stage=STAGE_PUGAN, epoch=epoch, step=self.step, config=self.cfg.to_dict(),
            tensors=collect_states(
                {"par": self.par, "generator": self.generator, "d1": self.d1, "d2": self.d2}
            ),
        )


def train_pugan(dataset, par_ckpt, cfg, run_dir=None):
    """Alternating adversarial training with a frozen parameter subnetwork."""
    if len(dataset) == 0:
        raise DataError("paired dataset is empty")
    state = PuganTrainer(cfg, par_ckpt)
    writer = RunWriter(run_dir, cfg, PUGAN_LOG_COLUMNS)
    try:
        for epoch in range(1, cfg.epochs + 1):
            lr = lr_at(epoch - 1, cfg)
            state.set_lr(lr)
            for degraded, reference in _epoch_batches(dataset, cfg, stack_paired, epoch):
                stats = state.train_batch(degraded, reference)
                writer.log(epoch=epoch, step=state.step, lr=lr, **stats)
            writer.save_epoch(state.checkpoint(epoch), epoch)
    finally:
        writer.close()
    return state.checkpoint(cfg.epochs)


def load_models_for_inference(ckpt):
    """Rebuild the frozen generator stack from a stage-two checkpoint."""
    ckpt.require_stage(STAGE_PUGAN)
    cfg = TrainConfig.from_dict(ckpt.config).validate()
    par = build_par(cfg)
    generator = build_generator(cfg)
    d1, d2 = build_discriminators(cfg)
    restore_states(ckpt, {"par": par, "generator": generator, "d1": d1, "d2": d2})
    for module in (par, generator, d1, d2):
        module.eval()
        module.requires_grad_(False)
    return cfg, par, generator


def enhance(par, generator, degraded):
    """Run the enhancement pipeline on a batch of images in eval mode."""
    par_training, gen_training = par.training, generator.training
    par.eval()
    generator.eval()
    with torch.no_grad():
        par_out = par(degraded)
        out = generator(degraded, par_out)
    par.train(par_training)
    generator.train(gen_training)
    return out, par_out
