"""Blind image super-resolution with contrastive degradation learning.

The package splits into a small autodiff core (tensor, functional,
module, optim), the degradation synthesis pipeline (degradation, data),
the two learned components (encoder, network), and the harness around
them (train, metrics, serialization, config, cli, estimators).
"""

from .data import TrainBatch, make_batch, synth_pool
from .degradation import DegradationSpec, bicubic_downsample, degrade, gaussian_kernel, sample_spec
from .encoder import Encoder, EncoderConfig, MomentumQueue, degradation_loss, encode, momentum_update
from .errors import ConfigError, DataError, DsatError, NumericError, ShapeError
from .estimators import DegradationEmbedder, DegradationSynthesizer, SuperResolver
from .metrics import bicubic_baseline, psnr, separability, ssim
from .network import DsatConfig, DsatModel
from .optim import Adam, lr_schedule
from .serialization import load_checkpoint, save_checkpoint
from .tensor import ComputeGraph, Tensor, no_grad
from .train import (
    EvalReport,
    TrainConfig,
    TrainState,
    build_state,
    evaluate_model,
    run_training,
    sr_loss,
    train_step,
)

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "ComputeGraph",
    "ConfigError",
    "DataError",
    "DegradationEmbedder",
    "DegradationSpec",
    "DegradationSynthesizer",
    "DsatConfig",
    "DsatError",
    "DsatModel",
    "Encoder",
    "EncoderConfig",
    "EvalReport",
    "MomentumQueue",
    "NumericError",
    "ShapeError",
    "SuperResolver",
    "Tensor",
    "TrainBatch",
    "TrainConfig",
    "TrainState",
    "bicubic_baseline",
    "bicubic_downsample",
    "build_state",
    "degradation_loss",
    "degrade",
    "encode",
    "evaluate_model",
    "gaussian_kernel",
    "load_checkpoint",
    "lr_schedule",
    "make_batch",
    "momentum_update",
    "no_grad",
    "psnr",
    "run_training",
    "sample_spec",
    "save_checkpoint",
    "separability",
    "sr_loss",
    "ssim",
    "synth_pool",
    "train_step",
    "__version__",
]
