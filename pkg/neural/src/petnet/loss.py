"""Combined Dice + cross-entropy segmentation loss with sigmoid-activated
probabilities and squared predictions in the Dice denominator:

    L = [1 - 2*sum(p*g) / (sum(p^2) + sum(g^2) + eps)] + BCE(p, g)
"""

from __future__ import annotations

import torch
import torch.nn.functional as F

DICE_EPS = 1e-5


def dice_loss(pred: torch.Tensor, target: torch.Tensor,
              eps: float = DICE_EPS) -> torch.Tensor:
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    inter = (pred * target).sum()
    denom = pred.pow(2).sum() + target.pow(2).sum() + eps
    return 1.0 - 2.0 * inter / denom


def dice_ce_loss(pred: torch.Tensor, target: torch.Tensor,
                 eps: float = DICE_EPS) -> torch.Tensor:
    """pred: probabilities in (0, 1); target: {0, 1} mask, same shape."""
    return dice_loss(pred, target, eps) + F.binary_cross_entropy(pred, target)
