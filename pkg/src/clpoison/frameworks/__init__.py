"""Contrastive learning frameworks: models, losses, views, training, probing."""

from .augment import ViewConfig, generate_view_batch, generate_views
from .losses import byol_loss, info_nce_loss, moco_infonce_loss
from .models import (
    EncoderState,
    FeatureQueue,
    build_encoder_state,
    ema_update,
    load_checkpoint,
    save_checkpoint,
)
from .probe import extract_features, linear_probe
from .train import (
    FRAMEWORKS,
    FrameworkConfig,
    cosine_lr,
    dataset_tensor,
    framework_pair_loss,
    train_encoder,
)

__all__ = [
    "FRAMEWORKS",
    "EncoderState",
    "FeatureQueue",
    "FrameworkConfig",
    "ViewConfig",
    "build_encoder_state",
    "byol_loss",
    "cosine_lr",
    "dataset_tensor",
    "ema_update",
    "extract_features",
    "framework_pair_loss",
    "generate_view_batch",
    "generate_views",
    "info_nce_loss",
    "linear_probe",
    "load_checkpoint",
    "moco_infonce_loss",
    "save_checkpoint",
    "train_encoder",
]
