"""Recurrent VAE with six output heads and tension-prediction losses."""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import ModelConfig
from .gradcheck import GradCheckResult, gradient_check
from .losses import (
    LOSS_FIELDS,
    LossBreakdown,
    beta_schedule,
    evaluate_batch,
    forward_backward,
    kl_divergence,
    loss,
)
from .network import (
    DecoderOutput,
    Posterior,
    TensionVae,
    init_params,
    reparameterize,
    sample_latent,
)
from .training import Adam, LedgerRow, TrainResult, split_dataset, train, write_ledger

__all__ = [
    "Adam", "Checkpoint", "DecoderOutput", "GradCheckResult", "LedgerRow",
    "LossBreakdown", "LOSS_FIELDS", "ModelConfig", "Posterior", "TensionVae",
    "TrainResult", "beta_schedule", "evaluate_batch", "forward_backward",
    "gradient_check", "init_params", "kl_divergence", "load_checkpoint",
    "loss", "reparameterize", "sample_latent", "save_checkpoint",
    "split_dataset", "train", "write_ledger",
]
