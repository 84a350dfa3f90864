"""Physical-model-guided underwater image enhancement with adversarial training."""

from . import (
    checkpoint,
    config,
    data,
    discriminators,
    losses,
    metrics,
    par_subnet,
    physics,
    trainer,
    tsie,
)

__all__ = [
    "checkpoint",
    "config",
    "data",
    "discriminators",
    "losses",
    "metrics",
    "par_subnet",
    "physics",
    "trainer",
    "tsie",
]

__version__ = "0.1.0"
