"""Finite-difference gradient verification of the full model."""

import numpy as np
import pytest
import torch

from petnet.config import ModelConfig
from petnet.loss import dice_ce_loss
from petnet.model import PromptableSegmenter


def finite_difference_check(n_params: int = 24, h: float = 1e-6, seed: int = 0):
    """Central-difference vs autograd on randomly sampled weights, float64.

    Returns the per-parameter relative errors.
    """
    torch.manual_seed(seed)
    model = PromptableSegmenter(ModelConfig(input_edge=16)).double()
    g = torch.Generator().manual_seed(seed)
    vol = torch.rand((1, 1, 16, 16, 16), generator=g, dtype=torch.float64) * 4
    prior = torch.rand((1, 1, 16, 16, 16), generator=g, dtype=torch.float64)
    points = torch.tensor([[8.0, 8.0, 8.0], [3.0, 12.0, 5.0]], dtype=torch.float64)
    pols = torch.tensor([1, 0])
    target = (torch.rand((1, 1, 16, 16, 16), generator=g) > 0.7).double()

    def loss_value():
        return dice_ce_loss(model(vol, points, pols, prior), target)

    loss = loss_value()
    loss.backward()

    named = [(n, p) for n, p in model.named_parameters() if p.grad is not None]
    rng = np.random.default_rng(seed)
    errors = []
    picks = rng.choice(len(named), size=min(n_params, len(named)), replace=False)
    for pick in picks:
        name, param = named[int(pick)]
        flat = param.detach().reshape(-1)
        idx = int(rng.integers(0, flat.numel()))
        analytic = float(param.grad.reshape(-1)[idx])
        with torch.no_grad():
            orig = float(flat[idx])
            flat[idx] = orig + h
            up = float(loss_value())
            flat[idx] = orig - h
            down = float(loss_value())
            flat[idx] = orig
        numeric = (up - down) / (2 * h)
        scale = max(abs(analytic), abs(numeric), 1e-8)
        errors.append((name, abs(analytic - numeric) / scale))
    return errors


def test_gradients_match_finite_differences():
    errors = finite_difference_check(n_params=24)
    assert len(errors) >= 20
    worst = max(e for _, e in errors)
    offenders = [(n, e) for n, e in errors if e > 1e-3]
    assert not offenders, f"gradient mismatches: {offenders}"
    assert worst <= 1e-3
