"""Simulated human-in-the-loop clicking: compare prediction to ground truth,
place corrective clicks in false-negative/false-positive regions, and drive a
backend to convergence through patch-based inference.

Click placement is deterministic: largest 26-connected component of the
error region, interior-most voxel (deepest from the component's complement,
grid outside counting as complement), ties broken by smallest linear index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backends import Backend
from .edt import interior_depth
from .errors import ShapeMismatchError
from .metrics import MetricResult, component_sizes, connected_components, dsc, nsd
from .patches import PatchConfig, run_patched_inference
from .volume import (
    BinaryMask,
    Index3,
    PointPrompt,
    PromptSet,
    VoxelGrid,
    argmin_linear,
    mask_difference,
    mask_volume,
    unravel_index,
)


@dataclass(frozen=True)
class DiscrepancyField:
    """FN (missed) and FP (spurious) regions of one prediction round."""

    fn_mask: BinaryMask
    fp_mask: BinaryMask
    iteration: int


@dataclass(frozen=True)
class SegmentationState:
    prob: np.ndarray
    mask: BinaryMask
    iteration: int
    prompts: PromptSet

    def __post_init__(self):
        expected = self.prob >= 0.5
        if not np.array_equal(expected, self.mask.bits):
            raise ValueError("mask must equal prob >= 0.5")


@dataclass(frozen=True)
class InteractionTrajectory:
    states: tuple[SegmentationState, ...]
    metrics: tuple[MetricResult, ...]
    converged: bool = False
    stalled: bool = False

    @property
    def final_state(self) -> SegmentationState:
        return self.states[-1]

    def state_at_budget(self, n_points: int) -> SegmentationState:
        """State after n_points clicks (the last state if the loop ended
        early on convergence or stall)."""
        if n_points < 1:
            raise ValueError("budget must be >= 1")
        return self.states[min(n_points, len(self.states)) - 1]

    def metric_at_budget(self, n_points: int) -> MetricResult:
        if n_points < 1:
            raise ValueError("budget must be >= 1")
        return self.metrics[min(n_points, len(self.metrics)) - 1]


def discrepancy(ground_truth: BinaryMask, state: SegmentationState) -> DiscrepancyField:
    """fn = G \\ prediction, fp = prediction \\ G."""
    if ground_truth.dims != state.mask.dims:
        raise ShapeMismatchError(
            f"dims differ: {ground_truth.dims} vs {state.mask.dims}"
        )
    return DiscrepancyField(
        fn_mask=mask_difference(ground_truth, state.mask),
        fp_mask=mask_difference(state.mask, ground_truth),
        iteration=state.iteration,
    )


def select_click(region: BinaryMask, spacing=(1.0, 1.0, 1.0)) -> Index3:
    """Interior-most voxel of the region's largest 26-connected component."""
    if mask_volume(region) == 0:
        raise ValueError("cannot click inside an empty region")
    labels, count = connected_components(region, connectivity=26)
    sizes = component_sizes(labels, count)
    best = int(np.argmax(sizes[1:])) + 1  # first max == smallest linear index
    component = labels.labels == best
    depth = interior_depth(component, spacing)
    deepest = depth[component].max()
    candidates = component & (depth == deepest)
    lin = argmin_linear(candidates)
    return unravel_index(lin, region.dims)


def next_prompt(
    ground_truth: BinaryMask,
    state: SegmentationState | None,
    spacing=(1.0, 1.0, 1.0),
) -> PointPrompt | None:
    """The next corrective click, or None once the prediction is perfect.

    Round 0 (no prediction yet) clicks inside the ground truth. Later rounds
    correct the larger error region: positive click in FN when |FN| >= |FP|,
    negative click in FP otherwise.
    """
    if mask_volume(ground_truth) == 0:
        raise ValueError("ground truth must be nonempty")
    if state is None:
        return PointPrompt(select_click(ground_truth, spacing), "pos", 0)
    field = discrepancy(ground_truth, state)
    n_fn = mask_volume(field.fn_mask)
    n_fp = mask_volume(field.fp_mask)
    if n_fn == 0 and n_fp == 0:
        return None  # converged
    if n_fn >= n_fp:
        region, polarity = field.fn_mask, "pos"
    else:
        region, polarity = field.fp_mask, "neg"
    index = select_click(region, spacing)
    assert region.bits[index], "click left its source region"
    return PointPrompt(index, polarity, state.iteration + 1)


def run_interaction(
    backend: Backend,
    grid: VoxelGrid,
    ground_truth: BinaryMask,
    n_points: int,
    patch_cfg: PatchConfig,
    tau: float = 1.0,
    tau_unit: str = "mm",
    session: str = "",
    target_name: str = "",
    case_id: str = "",
) -> InteractionTrajectory:
    """Drive the backend for up to n_points rounds of Eq.-style feedback:
    click, predict with all accumulated clicks plus the previous probability
    volume as dense prior, measure, repeat. Stops early on convergence, or
    when the chosen click would repeat an earlier one (a backend that is not
    responding to clicks cannot make further progress)."""
    if n_points < 1:
        raise ValueError("n_points must be >= 1")
    if grid.dims != ground_truth.dims:
        raise ShapeMismatchError(f"dims differ: {grid.dims} vs {ground_truth.dims}")
    if mask_volume(ground_truth) == 0:
        raise ValueError("ground truth must be nonempty")

    states: list[SegmentationState] = []
    metrics: list[MetricResult] = []
    prompts = PromptSet()
    state: SegmentationState | None = None
    prior: np.ndarray | None = None  # round 0 dense prior is the zero field
    converged = False
    stalled = False
    for t in range(n_points):
        prompt = next_prompt(ground_truth, state, grid.spacing)
        if prompt is None:
            converged = True
            break
        if prompts.contains(prompt.index, prompt.polarity):
            stalled = True
            break
        prompts = prompts.with_prompt(prompt)
        result = run_patched_inference(
            backend, grid.data, prompts, prior, patch_cfg, session=session
        )
        state = SegmentationState(
            prob=result.prob, mask=result.mask, iteration=t, prompts=prompts
        )
        states.append(state)
        metrics.append(
            MetricResult(
                dsc=dsc(ground_truth, state.mask),
                nsd=nsd(ground_truth, state.mask, tau, grid.spacing, tau_unit),
                tau=tau,
                target_name=target_name,
                case_id=case_id,
            )
        )
        prior = result.prob
    return InteractionTrajectory(
        states=tuple(states),
        metrics=tuple(metrics),
        converged=converged,
        stalled=stalled,
    )


@dataclass(frozen=True)
class LesionWiseResult:
    """Per-component interaction runs plus their pooled union."""

    lesions: tuple[InteractionTrajectory, ...]
    final_mask: BinaryMask
    metrics: tuple[MetricResult, ...]  # pooled, indexed by per-lesion budget - 1

    @property
    def total_prompts(self) -> int:
        return sum(len(t.final_state.prompts) for t in self.lesions)

    def metric_at_budget(self, n_points: int) -> MetricResult:
        if n_points < 1:
            raise ValueError("budget must be >= 1")
        return self.metrics[min(n_points, len(self.metrics)) - 1]


def run_lesion_wise(
    backend: Backend,
    grid: VoxelGrid,
    ground_truth: BinaryMask,
    n_points_per_lesion: int,
    patch_cfg: PatchConfig,
    tau: float = 1.0,
    tau_unit: str = "mm",
    session: str = "",
    target_name: str = "",
    case_id: str = "",
) -> LesionWiseResult:
    """Segment each 26-connected lesion with its own prompt budget and pool
    the per-lesion masks (sequential lesion-wise prompting)."""
    if mask_volume(ground_truth) == 0:
        raise ValueError("ground truth must be nonempty")
    labels, count = connected_components(ground_truth, connectivity=26)
    runs = []
    for comp in range(1, count + 1):
        comp_mask = BinaryMask(labels.labels == comp)
        runs.append(
            run_interaction(
                backend,
                grid,
                comp_mask,
                n_points_per_lesion,
                patch_cfg,
                tau=tau,
                tau_unit=tau_unit,
                session=f"{session}/lesion{comp}",
                target_name=target_name,
                case_id=case_id,
            )
        )

    union = np.zeros(grid.dims, dtype=bool)
    for traj in runs:
        union |= traj.final_state.mask.bits
    final_mask = BinaryMask(union)

    pooled = []
    for budget in range(1, n_points_per_lesion + 1):
        step_union = np.zeros(grid.dims, dtype=bool)
        for traj in runs:
            step_union |= traj.state_at_budget(budget).mask.bits
        step_mask = BinaryMask(step_union)
        pooled.append(
            MetricResult(
                dsc=dsc(ground_truth, step_mask),
                nsd=nsd(ground_truth, step_mask, tau, grid.spacing, tau_unit),
                tau=tau,
                target_name=target_name,
                case_id=case_id,
            )
        )
    return LesionWiseResult(
        lesions=tuple(runs), final_mask=final_mask, metrics=tuple(pooled)
    )
