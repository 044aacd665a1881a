"""Secondary acceptance criteria (run with ``pytest tests/test_acceptance.py
-v -s``): finite-difference gradient agreement, single-phantom overfit, and
the prompt-benefit check evaluated entirely through the evaluation harness
over the wire protocol.

Training uses the protocol's 10:1 encoder/prompt-decoder learning-rate ratio
and proportionally scaled decay milestones at a desk-scale base rate (2e-3);
the published absolute rate targets full-scale training and does not move a
fresh toy model off its plateau within the 500-step budget.
"""

import json
import subprocess
import sys
import time

import numpy as np
import pytest
import torch

from test_gradients import finite_difference_check

from conftest import make_suite
from petnet.config import ModelConfig, TrainConfig
from petnet.data import crop_pad_to, load_suite
from petnet.model import save_checkpoint
from petnet.serve import ModelServer
from petnet.train import train

LR_DESK = 2e-3


def _report(name: str, ok: bool, detail: str = ""):
    tag = "PASS" if ok else "FAIL"
    print(f"[{tag}] {name}" + (f" — {detail}" if detail else ""))
    assert ok, f"{name}: {detail}"


def test_gradient_check():
    """Autograd matches central finite differences within 1e-3 relative on
    at least 20 randomly sampled parameters (float64)."""
    errors = finite_difference_check(n_params=24)
    worst = max(e for _, e in errors)
    _report(
        "gradient check (24 sampled parameters)",
        len(errors) >= 20 and worst <= 1e-3,
        f"worst relative error {worst:.2e}",
    )


def test_overfit_single_phantom(tmp_path):
    """DSC >= 0.95 on one phantom within 500 steps at edge 32, fixed seed,
    evaluated with a single positive click."""
    manifest = make_suite(tmp_path, cases=1, seed=901)
    cases = load_suite(manifest)
    t0 = time.time()
    model, losses = train(
        cases,
        ModelConfig(input_edge=32),
        TrainConfig(steps=500, seed=8, lr_encoder=LR_DESK),
        log_every=0,
    )
    elapsed = time.time() - t0

    case = cases[0]
    volume, target = crop_pad_to(case.volume, case.target, 32, None)
    coords = np.argwhere(target)
    center = tuple(
        int((coords[:, a].min() + coords[:, a].max()) // 2) for a in range(3)
    )
    prob = model.predict(volume, [(center, True)], None)
    pred = prob >= 0.5
    dsc = 2 * (pred & target).sum() / (pred.sum() + target.sum())
    _report(
        "single-phantom overfit (500 steps, seed 8)",
        dsc >= 0.95 and elapsed < 15 * 60,
        f"1-click DSC {dsc:.4f}, {elapsed:.0f}s, final loss "
        f"{np.mean(losses[-20:]):.4f}",
    )


def test_prompt_benefit_through_harness(tmp_path):
    """Trained toy model on 20 held-out phantoms: median DSC at 3 points >=
    median at 1 point, evaluated by the harness CLI over the wire protocol."""
    train_manifest = make_suite(tmp_path / "train", cases=30, seed=901)
    heldout_manifest = make_suite(tmp_path / "heldout", cases=20, seed=5000)

    model, _ = train(
        load_suite(train_manifest),
        ModelConfig(input_edge=32),
        TrainConfig(steps=600, seed=3, lr_encoder=LR_DESK),
        log_every=0,
    )
    ckpt = tmp_path / "model.pt"
    save_checkpoint(ckpt, model)

    server = ModelServer(model, "127.0.0.1:0").start()
    time.sleep(0.1)
    out = tmp_path / "report"
    proc = subprocess.run(
        [
            sys.executable, "-m", "petprompt", "evaluate",
            "--manifest", str(heldout_manifest),
            "--backend", f"remote:{server.address}",
            "--points", "1", "3", "--edge", "32", "--out", str(out),
        ],
        capture_output=True,
        text=True,
    )
    server.shutdown()
    assert proc.returncode == 0, proc.stderr
    summary = json.loads((out / "summary.json").read_text())
    assert summary["backend"] == "petnet"
    med1 = summary["targets"]["organ_1"]["1"]["dsc"]["median"]
    med3 = summary["targets"]["organ_1"]["3"]["dsc"]["median"]
    _report(
        "prompt benefit over the wire (20 held-out phantoms)",
        med3 >= med1,
        f"median DSC 1p {med1:.4f} -> 3p {med3:.4f}",
    )
