"""Configuration dataclasses and validation.

Defaults follow the shipped training recipe: the parameter-estimation stage
runs 60 epochs per phase at batch 4 with a fixed 1e-4 learning rate; the
adversarial stage runs 200 epochs at batch 16 starting from 1e-3 with a
divide-by-10 decay every 50 epochs on 256x256 inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import yaml

from .errors import ConfigError

STAGE_PAR = "par"
STAGE_PUGAN = "pugan"

ENCODER_WIDTHS = (32, 64, 128, 256, 512)
DISCRIMINATOR_WIDTHS = (64, 128, 256, 1)


@dataclass
class LossWeights:
    """Scaling factors for the four generator objective terms."""

    lambda1: float = 1.0  # style adversarial
    lambda2: float = 1.0  # content adversarial
    lambda3: float = 10.0  # global similarity (L1)
    lambda4: float = 5.0  # perceptual

    def validate(self):
        values = (self.lambda1, self.lambda2, self.lambda3, self.lambda4)
        if any(v < 0 for v in values):
            raise ConfigError(f"loss weights must be non-negative, got {values}")
        if not any(v > 0 for v in values):
            raise ConfigError("at least one loss weight must be positive")
        return self


@dataclass
class DQConfig:
    """Degradation-quantization threshold."""

    alpha: float = 0.7

    def validate(self):
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"dq alpha must lie in (0, 1), got {self.alpha}")
        return self


@dataclass
class ModelConfig:
    """Architecture knobs that the papers-of-record leave unspecified."""

    encoder_widths: tuple = ENCODER_WIDTHS
    par_width: int = 32  # conv width inside the three parameter estimators
    attenuation_hidden: int = 64  # hidden width of the attenuation head
    discriminator_widths: tuple = DISCRIMINATOR_WIDTHS
    discriminator_activation: str = "leaky_relu"  # or "relu"
    leaky_slope: float = 0.2
    perceptual_seed: int = 17  # seed of the frozen perceptual extractor

    def validate(self):
        if len(self.encoder_widths) != 5 or any(w <= 0 for w in self.encoder_widths):
            raise ConfigError(f"encoder_widths must be 5 positive ints, got {self.encoder_widths}")
        if self.par_width <= 0 or self.attenuation_hidden <= 0:
            raise ConfigError("par_width and attenuation_hidden must be positive")
        if self.discriminator_activation not in ("leaky_relu", "relu"):
            raise ConfigError(f"unknown discriminator activation {self.discriminator_activation!r}")
        return self


@dataclass
class TrainConfig:
    """One training run: stage selection, schedule, and paths."""

    stage: str = STAGE_PUGAN
    epochs: int = 200
    batch_size: int = 16
    lr: float = 1e-3
    lr_decay_every: int = 50
    lr_decay_factor: float = 0.1
    seed: int = 0
    image_size: int = 256
    dq_alpha: float = 0.7
    adam_betas: tuple = (0.5, 0.999)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    model: ModelConfig = field(default_factory=ModelConfig)
    data_root: str = ""
    out_dir: str = ""

    def validate(self):
        if self.stage not in (STAGE_PAR, STAGE_PUGAN):
            raise ConfigError(f"stage must be 'par' or 'pugan', got {self.stage!r}")
        if self.epochs <= 0:
            raise ConfigError(f"epochs must be > 0, got {self.epochs}")
        if self.batch_size <= 0:
            raise ConfigError(f"batch_size must be > 0, got {self.batch_size}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.lr_decay_every <= 0:
            raise ConfigError(f"lr_decay_every must be > 0, got {self.lr_decay_every}")
        if not 0.0 < self.lr_decay_factor <= 1.0:
            raise ConfigError(f"lr_decay_factor must lie in (0, 1], got {self.lr_decay_factor}")
        if self.image_size <= 0 or self.image_size % 32 != 0:
            raise ConfigError(f"image_size must be a positive multiple of 32, got {self.image_size}")
        DQConfig(self.dq_alpha).validate()
        self.loss_weights.validate()
        self.model.validate()
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if isinstance(d.get("loss_weights"), dict):
            d["loss_weights"] = LossWeights(**d["loss_weights"])
        if isinstance(d.get("model"), dict):
            m = dict(d["model"])
            for key in ("encoder_widths", "discriminator_widths"):
                if key in m and m[key] is not None:
                    m[key] = tuple(m[key])
            d["model"] = ModelConfig(**m)
        if isinstance(d.get("adam_betas"), (list, tuple)):
            d["adam_betas"] = tuple(d["adam_betas"])
        return cls(**d)


def par_defaults():
    """Shipped defaults for the parameter-estimation pretraining stage."""
    return TrainConfig(stage=STAGE_PAR, epochs=60, batch_size=4, lr=1e-4)


def pugan_defaults():
    """Shipped defaults for the adversarial training stage."""
    return TrainConfig(stage=STAGE_PUGAN, epochs=200, batch_size=16, lr=1e-3)


# Mapping of config-file sections to TrainConfig fields. The file is a nested
# key/value document; flags passed on the command line always win over it.
_SECTION_FIELDS = {
    "data": {"root": "data_root", "image_size": "image_size"},
    "model": {
        "encoder_widths": ("model", "encoder_widths"),
        "par_width": ("model", "par_width"),
        "attenuation_hidden": ("model", "attenuation_hidden"),
        "discriminator_widths": ("model", "discriminator_widths"),
        "discriminator_activation": ("model", "discriminator_activation"),
        "leaky_slope": ("model", "leaky_slope"),
        "dq_alpha": "dq_alpha",
    },
    "train": {
        "epochs": "epochs",
        "batch_size": "batch_size",
        "lr": "lr",
        "lr_decay_every": "lr_decay_every",
        "lr_decay_factor": "lr_decay_factor",
        "seed": "seed",
        "adam_betas": "adam_betas",
    },
    "loss": {
        "lambda1": ("loss_weights", "lambda1"),
        "lambda2": ("loss_weights", "lambda2"),
        "lambda3": ("loss_weights", "lambda3"),
        "lambda4": ("loss_weights", "lambda4"),
        "perceptual_seed": ("model", "perceptual_seed"),
    },
}


def load_config_file(path):
    """Parse a YAML config file into its nested section dict."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config file {path}: {exc}") from exc
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise ConfigError(f"config file {path} must contain a mapping of sections")
    return doc


def apply_config_file(cfg, doc):
    """Overlay values from a parsed config file onto a TrainConfig."""
    known = set(_SECTION_FIELDS) | {"metrics"}
    for section in doc:
        if section not in known:
            raise ConfigError(f"unknown config section {section!r}")
    for section, fields in _SECTION_FIELDS.items():
        values = doc.get(section) or {}
        if not isinstance(values, dict):
            raise ConfigError(f"config section {section!r} must be a mapping")
        for key, value in values.items():
            if key not in fields:
                raise ConfigError(f"unknown config key {section}.{key}")
            target = fields[key]
            if isinstance(target, tuple):
                owner = getattr(cfg, target[0])
                if key in ("encoder_widths", "discriminator_widths"):
                    value = tuple(value)
                setattr(owner, target[1], value)
            else:
                if key == "adam_betas":
                    value = tuple(value)
                setattr(cfg, target, value)
    return cfg
