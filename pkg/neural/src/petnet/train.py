"""Interactive training loop.

Each step samples a case and a click budget from U{1..20}, then accumulates
clicks sequentially: predict with the clicks gathered so far (no grad, the
previous probability volume becoming the dense prior), draw the next
corrective click from the FN/FP discrepancy, and finally optimize the
Dice+CE loss of the prediction under the full click set. AdamW drives the
image encoder at the base learning rate and the prompt encoder + mask
decoder at a tenth of it; the schedule decays stepwise at the scaled
120/500 and 180/500 epoch marks.
"""

from __future__ import annotations

import argparse
import time
from pathlib import Path

import numpy as np
import torch

from .clicks import corrective_click, first_click
from .config import ModelConfig, TrainConfig
from .data import Case, crop_pad_to, load_suite, random_flip
from .loss import dice_ce_loss
from .model import PromptableSegmenter, save_checkpoint


class NanLossError(RuntimeError):
    def __init__(self, step, loss, clicks):
        super().__init__(
            f"non-finite loss at step {step}: {loss} (clicks={clicks})"
        )
        self.step = step


def _to_tensors(volume: np.ndarray, target: np.ndarray, clicks):
    vol = torch.from_numpy(volume)[None, None]
    tgt = torch.from_numpy(target.astype(np.float32))[None, None]
    if clicks:
        points = torch.tensor([c[0] for c in clicks], dtype=torch.float32)
        pols = torch.tensor([1 if c[1] else 0 for c in clicks])
    else:
        points = torch.zeros((0, 3))
        pols = torch.zeros((0,), dtype=torch.long)
    return vol, tgt, points, pols


def simulate_clicks(
    model: PromptableSegmenter,
    volume: np.ndarray,
    target: np.ndarray,
    budget: int,
    rng: np.random.Generator,
    record=None,
):
    """Accumulate up to ``budget`` clicks against the model's own rolling
    prediction; returns (clicks, final prior array)."""
    clicks = [first_click(target, rng)]
    prior = np.zeros_like(volume, dtype=np.float32)
    model.eval()
    with torch.no_grad():
        for _ in range(budget - 1):
            vol, _, points, pols = _to_tensors(volume, target, clicks)
            prob = model(vol, points, pols,
                         torch.from_numpy(prior)[None, None])[0, 0].numpy()
            prediction = prob >= 0.5
            nxt = corrective_click(target, prediction, rng)
            if nxt is None:
                break
            if record is not None:
                record.append((nxt, target.copy(), prediction))
            clicks.append(nxt)
            prior = prob.astype(np.float32)
    return clicks, prior


def train_step(
    model: PromptableSegmenter,
    optimizer: torch.optim.Optimizer,
    case: Case,
    train_cfg: TrainConfig,
    rng: np.random.Generator,
    step: int,
    record=None,
) -> float:
    edge = model.cfg.input_edge
    volume, target = crop_pad_to(case.volume, case.target, edge, rng)
    volume, target = random_flip(volume, target, rng, train_cfg.flip_axes)
    if not target.any():  # jittered crop can clip tiny targets; recenter
        volume, target = crop_pad_to(case.volume, case.target, edge, None)
    budget = int(rng.integers(train_cfg.clicks_min, train_cfg.clicks_max + 1))
    clicks, prior = simulate_clicks(model, volume, target, budget, rng, record)

    model.train()
    vol, tgt, points, pols = _to_tensors(volume, target, clicks)
    prob = model(vol, points, pols, torch.from_numpy(prior)[None, None])
    if not torch.isfinite(prob).all():
        raise NanLossError(step, float("nan"), clicks)
    loss = dice_ce_loss(prob, tgt, train_cfg.dice_eps)
    if not torch.isfinite(loss):
        raise NanLossError(step, float(loss.detach()), clicks)
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    return float(loss.detach())


def build_optimizer(model: PromptableSegmenter, train_cfg: TrainConfig):
    optimizer = torch.optim.AdamW(
        [
            {"params": model.encoder_parameters(), "lr": train_cfg.lr_encoder},
            {
                "params": model.prompt_decoder_parameters(),
                "lr": train_cfg.lr_prompt_decoder,
            },
        ],
        weight_decay=train_cfg.weight_decay,
    )
    scheduler = torch.optim.lr_scheduler.MultiStepLR(
        optimizer, milestones=list(train_cfg.milestones), gamma=train_cfg.gamma
    )
    return optimizer, scheduler


def train(
    cases: list[Case],
    model_cfg: ModelConfig | None = None,
    train_cfg: TrainConfig | None = None,
    checkpoint_path=None,
    log_every: int = 50,
) -> tuple[PromptableSegmenter, list[float]]:
    model_cfg = model_cfg or ModelConfig()
    train_cfg = train_cfg or TrainConfig()
    torch.manual_seed(train_cfg.seed)
    rng = np.random.Generator(np.random.Philox(key=train_cfg.seed))
    model = PromptableSegmenter(model_cfg)
    optimizer, scheduler = build_optimizer(model, train_cfg)

    losses = []
    t0 = time.time()
    for step in range(train_cfg.steps):
        case = cases[int(rng.integers(0, len(cases)))]
        loss = train_step(model, optimizer, case, train_cfg, rng, step)
        scheduler.step()
        losses.append(loss)
        if log_every and (step + 1) % log_every == 0:
            recent = np.mean(losses[-log_every:])
            print(
                f"step {step + 1}/{train_cfg.steps} "
                f"loss {recent:.4f} lr {scheduler.get_last_lr()[0]:.2e} "
                f"({time.time() - t0:.0f}s)",
                flush=True,
            )
    if checkpoint_path is not None:
        save_checkpoint(
            checkpoint_path,
            model,
            extra={"train_config": train_cfg.to_dict(), "losses": losses},
        )
    return model, losses


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Train the toy promptable model")
    parser.add_argument("--manifest", type=Path, required=True)
    parser.add_argument("--steps", type=int, default=500)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--edge", type=int, default=32)
    parser.add_argument("--clicks-max", type=int, default=20)
    parser.add_argument("--lesion-finetune", action="store_true",
                        help="continue from --init on lesion-centric data")
    parser.add_argument("--init", type=Path, default=None)
    parser.add_argument("--out", type=Path, required=True)
    args = parser.parse_args(argv)

    cases = load_suite(args.manifest)
    model_cfg = ModelConfig(input_edge=args.edge)
    train_cfg = TrainConfig(steps=args.steps, seed=args.seed,
                            clicks_max=args.clicks_max)
    if args.init is not None:
        from .model import load_checkpoint

        model, _ = load_checkpoint(args.init)
        torch.manual_seed(train_cfg.seed)
        rng = np.random.Generator(np.random.Philox(key=train_cfg.seed))
        optimizer, scheduler = build_optimizer(model, train_cfg)
        losses = []
        for step in range(train_cfg.steps):
            case = cases[int(rng.integers(0, len(cases)))]
            losses.append(
                train_step(model, optimizer, case, train_cfg, rng, step)
            )
            scheduler.step()
        save_checkpoint(args.out, model,
                        extra={"train_config": train_cfg.to_dict(),
                               "losses": losses, "finetuned_from": str(args.init)})
    else:
        train(cases, model_cfg, train_cfg, checkpoint_path=args.out)
    print(f"checkpoint written to {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
