"""Patch-based volumetric inference: crop around the starting click, then
grow coverage with 50%-overlap sliding windows wherever the prediction
reaches a window face, and fuse per-window probabilities by unweighted mean.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .backends import Backend, SegmentRequest
from .errors import BoundsError, ExpansionLimitError, ProtocolError
from .volume import BinaryMask, Index3, PromptSet, PointPrompt, extract_block

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PatchConfig:
    edge: int = 128
    window_cap: int = 64

    def __post_init__(self):
        if self.edge < 2 or self.edge % 2 != 0:
            raise ValueError(f"patch edge must be even and >= 2, got {self.edge}")
        if self.window_cap < 1:
            raise ValueError("window_cap must be >= 1")

    @property
    def stride(self) -> int:
        return self.edge // 2


@dataclass(frozen=True)
class PatchWindow:
    """Axis-aligned cube over the grid; origin may be negative (padding)."""

    origin: Index3
    edge: int
    pad_value: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "origin", tuple(int(c) for c in self.origin))

    def contains(self, point: Index3) -> bool:
        return all(
            self.origin[ax] <= point[ax] < self.origin[ax] + self.edge
            for ax in range(3)
        )


def initial_patch(
    prompt: PointPrompt, dims: Index3, edge: int = 128, pad_value: float = 0.0
) -> PatchWindow:
    """Window centered on the starting prompt, shifted to keep as much of it
    in-grid as possible; axes shorter than the edge get centered padding."""
    prompt.validate_within(dims)
    origin = []
    for ax in range(3):
        if dims[ax] >= edge:
            o = min(max(prompt.index[ax] - edge // 2, 0), dims[ax] - edge)
        else:
            o = (dims[ax] - edge) // 2
        origin.append(o)
    return PatchWindow(origin=tuple(origin), edge=edge, pad_value=pad_value)


def to_local(point: Index3, window: PatchWindow) -> Index3:
    """Window-local coordinates of a global voxel index."""
    if not window.contains(point):
        raise BoundsError(f"point {point} outside window at {window.origin}")
    return tuple(point[ax] - window.origin[ax] for ax in range(3))


def localize_prompts(
    prompts: PromptSet, window: PatchWindow
) -> tuple[tuple[PointPrompt, ...], int]:
    """Map prompts into window coordinates; prompts outside are dropped
    (count returned so callers can log it)."""
    local = []
    dropped = 0
    for p in prompts:
        if window.contains(p.index):
            local.append(
                PointPrompt(to_local(p.index, window), p.polarity, p.iteration)
            )
        else:
            dropped += 1
    return tuple(local), dropped


def faces_to_expand(
    pred_block: np.ndarray, window: PatchWindow, dims: Index3
) -> list[Index3]:
    """Origins of adjacent windows for every face the binarized prediction
    touches, skipping faces at or beyond the grid boundary."""
    edge = window.edge
    stride = edge // 2
    out = []
    planes = {
        (0, -1): pred_block[0, :, :],
        (0, +1): pred_block[edge - 1, :, :],
        (1, -1): pred_block[:, 0, :],
        (1, +1): pred_block[:, edge - 1, :],
        (2, -1): pred_block[:, :, 0],
        (2, +1): pred_block[:, :, edge - 1],
    }
    for (ax, sign), plane in planes.items():
        if sign < 0 and window.origin[ax] <= 0:
            continue
        if sign > 0 and window.origin[ax] + edge >= dims[ax]:
            continue
        if plane.any():
            origin = list(window.origin)
            origin[ax] += sign * stride
            out.append(tuple(origin))
    return out


def expand_windows(
    predictions: list[tuple[PatchWindow, np.ndarray]],
    emitted: set[Index3],
    dims: Index3,
    cap: int,
) -> list[PatchWindow]:
    """New windows implied by this generation's predictions, deduplicated
    against everything already emitted. Raises ExpansionLimitError carrying
    the subset that still fits when the cap would be exceeded."""
    fresh: list[PatchWindow] = []
    seen = set(emitted)
    for window, pred in predictions:
        for origin in faces_to_expand(pred, window, dims):
            if origin in seen:
                continue
            seen.add(origin)
            fresh.append(
                PatchWindow(origin=origin, edge=window.edge, pad_value=window.pad_value)
            )
    if len(emitted) + len(fresh) > cap:
        allowed = fresh[: max(0, cap - len(emitted))]
        raise ExpansionLimitError(
            f"window cap {cap} exceeded ({len(emitted)} emitted, {len(fresh)} new)",
            allowed=allowed,
        )
    return fresh


class FusionBuffer:
    """Running per-voxel mean of window probabilities over the full grid."""

    def __init__(self, dims: Index3):
        self.prob_sum = np.zeros(dims, dtype=np.float64)
        self.count = np.zeros(dims, dtype=np.int32)

    def add(self, window: PatchWindow, prob_block: np.ndarray) -> None:
        if prob_block.shape != (window.edge,) * 3:
            raise ProtocolError(
                f"probability block shape {prob_block.shape} does not match "
                f"window edge {window.edge}"
            )
        dims = self.prob_sum.shape
        src, dst = [], []
        for ax in range(3):
            lo = max(0, window.origin[ax])
            hi = min(dims[ax], window.origin[ax] + window.edge)
            if hi <= lo:
                return
            dst.append(slice(lo, hi))
            src.append(slice(lo - window.origin[ax], hi - window.origin[ax]))
        self.prob_sum[tuple(dst)] += prob_block[tuple(src)].astype(np.float64)
        self.count[tuple(dst)] += 1

    def fused(self) -> np.ndarray:
        covered = self.count > 0
        out = np.zeros_like(self.prob_sum, dtype=np.float32)
        out[covered] = (self.prob_sum[covered] / self.count[covered]).astype(np.float32)
        return out


def fuse(
    pairs: list[tuple[PatchWindow, np.ndarray]], dims: Index3
) -> tuple[np.ndarray, BinaryMask]:
    """Mean-fuse window probabilities; uncovered voxels get probability 0."""
    buf = FusionBuffer(dims)
    for window, prob in pairs:
        buf.add(window, prob)
    prob = buf.fused()
    return prob, BinaryMask(prob >= 0.5)


@dataclass(frozen=True)
class InferenceResult:
    prob: np.ndarray
    mask: BinaryMask
    windows: tuple[Index3, ...]
    dropped_prompts: int = 0
    truncated: bool = False


def run_patched_inference(
    backend: Backend,
    grid_data: np.ndarray,
    prompts: PromptSet,
    prior: np.ndarray | None,
    cfg: PatchConfig,
    session: str = "",
) -> InferenceResult:
    """Full sliding-window pass: seed a window at the first prompt, query the
    backend per window (accumulated prompts localized, previous probability
    volume as the dense prior), expand 50%-overlap neighbors wherever the
    prediction reaches a face, and mean-fuse everything."""
    if len(prompts) == 0:
        raise ValueError("patched inference needs at least one prompt")
    dims = grid_data.shape
    pad_value = float(grid_data.min())
    start = prompts.prompts[0]
    first = initial_patch(start, dims, cfg.edge, pad_value)
    prior_full = (
        np.zeros(dims, dtype=np.float32) if prior is None else np.asarray(prior)
    )

    emitted: set[Index3] = {first.origin}
    frontier = [first]
    collected: list[tuple[PatchWindow, np.ndarray]] = []
    dropped_total = 0
    truncated = False
    while frontier:
        generation: list[tuple[PatchWindow, np.ndarray]] = []
        for window in frontier:
            patch = extract_block(grid_data, window.origin, cfg.edge, pad_value)
            local_prompts, dropped = localize_prompts(prompts, window)
            dropped_total += dropped
            local_prior = extract_block(prior_full, window.origin, cfg.edge, 0.0)
            response = backend.segment(
                SegmentRequest(
                    patch=patch,
                    prompts=local_prompts,
                    prior=local_prior,
                    session=session,
                    origin=window.origin,
                )
            )
            if response.prob.shape != patch.shape:
                raise ProtocolError(
                    f"backend returned shape {response.prob.shape}, "
                    f"expected {patch.shape}"
                )
            generation.append((window, response.prob))
        collected.extend(generation)
        try:
            frontier = expand_windows(
                [(w, p >= 0.5) for w, p in generation], emitted, dims, cfg.window_cap
            )
        except ExpansionLimitError as err:
            frontier = err.allowed
            truncated = True
            log.warning("window cap hit; result truncated: %s", err)
        emitted.update(w.origin for w in frontier)

    if dropped_total:
        log.info("dropped %d out-of-window prompt placements", dropped_total)
    prob, mask = fuse(collected, dims)
    return InferenceResult(
        prob=prob,
        mask=mask,
        windows=tuple(w.origin for w, _ in collected),
        dropped_prompts=dropped_total,
        truncated=truncated,
    )
