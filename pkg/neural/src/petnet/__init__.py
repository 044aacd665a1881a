"""Toy-scale promptable 3D PET segmentation model."""

from .config import ModelConfig, TrainConfig
from .loss import dice_ce_loss, dice_loss
from .model import (
    ImageEncoder,
    MaskDecoder,
    PromptEncoder,
    PromptableSegmenter,
    load_checkpoint,
    save_checkpoint,
)
from .train import train, train_step

__version__ = "0.1.0"
