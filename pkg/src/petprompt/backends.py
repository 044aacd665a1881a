"""In-process promptable segmentation backends and their request/response
contract. The contract mirrors the wire protocol field-for-field; the only
extra is ``SegmentRequest.origin``, harness-side window placement metadata
that never crosses the wire (only the oracle test double uses it).
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass
from typing import Protocol

import numpy as np
from numba import njit

from .errors import ProtocolError
from .metrics import _OFFSETS_6, _label_components
from .volume import BinaryMask, Index3, PointPrompt, extract_block


@dataclass(frozen=True)
class SegmentRequest:
    """One window-local segmentation query."""

    patch: np.ndarray  # (e,e,e) float32 intensities
    prompts: tuple[PointPrompt, ...]  # window-local indices
    prior: np.ndarray | None = None  # (e,e,e) float32 in [0,1]; dense prompt
    session: str = ""
    origin: Index3 | None = None  # harness-side only; not part of the wire format

    def __post_init__(self):
        patch = np.asarray(self.patch, dtype=np.float32)
        if patch.ndim != 3:
            raise ValueError(f"patch must be 3D, got shape {patch.shape}")
        object.__setattr__(self, "patch", patch)
        for p in self.prompts:
            p.validate_within(patch.shape)
        if self.prior is not None:
            prior = np.asarray(self.prior, dtype=np.float32)
            if prior.shape != patch.shape:
                raise ValueError("prior shape must match patch shape")
            if prior.size and (prior.min() < 0.0 or prior.max() > 1.0):
                raise ValueError("prior values must lie in [0,1]")
            object.__setattr__(self, "prior", prior)

    @property
    def dims(self) -> Index3:
        return self.patch.shape  # type: ignore[return-value]


@dataclass(frozen=True)
class SegmentResponse:
    prob: np.ndarray  # same dims as the request, values in [0,1]
    latency_ms: float = 0.0

    def __post_init__(self):
        prob = np.asarray(self.prob, dtype=np.float32)
        object.__setattr__(self, "prob", prob)


class Backend(Protocol):
    name: str

    def segment(self, request: SegmentRequest) -> SegmentResponse: ...


class ThresholdBackend:
    """prob = 1 where intensity >= theta. Voxel-wise stateless: ignores
    prompts and prior entirely, which makes sliding-window fusion exactly
    reproducible against whole-volume application."""

    def __init__(self, theta: float):
        if not np.isfinite(theta):
            raise ValueError("theta must be finite")
        self.theta = float(theta)
        self.name = "threshold"

    def segment(self, request: SegmentRequest) -> SegmentResponse:
        t0 = time.perf_counter()
        prob = (request.patch >= self.theta).astype(np.float32)
        return SegmentResponse(prob, latency_ms=(time.perf_counter() - t0) * 1e3)


@njit(cache=True)
def _flood_fill_6(vol, si, sj, sk, thresh):
    nx, ny, nz = vol.shape
    grown = np.zeros((nx, ny, nz), dtype=np.bool_)
    stack = np.empty(nx * ny * nz, dtype=np.int64)
    if vol[si, sj, sk] < thresh:
        return grown
    grown[si, sj, sk] = True
    stack[0] = si + nx * (sj + ny * sk)
    top = 0
    while top >= 0:
        lin = stack[top]
        top -= 1
        ci = lin % nx
        cj = (lin // nx) % ny
        ck = lin // (nx * ny)
        for m in range(6):
            pi, pj, pk = ci, cj, ck
            if m == 0:
                pi -= 1
            elif m == 1:
                pi += 1
            elif m == 2:
                pj -= 1
            elif m == 3:
                pj += 1
            elif m == 4:
                pk -= 1
            else:
                pk += 1
            if pi < 0 or pi >= nx or pj < 0 or pj >= ny or pk < 0 or pk >= nz:
                continue
            if not grown[pi, pj, pk] and vol[pi, pj, pk] >= thresh:
                grown[pi, pj, pk] = True
                top += 1
                stack[top] = pi + nx * (pj + ny * pk)
    return grown


class RegionGrowBackend:
    """Seeded relative thresholding: each positive prompt flood-fills the
    6-connected region with intensity >= frac * seed intensity; grown
    components containing a negative prompt are removed."""

    def __init__(self, frac: float = 0.41):
        if not 0.0 < frac <= 1.0:
            raise ValueError(f"frac must be in (0,1], got {frac}")
        self.frac = float(frac)
        self.name = "region_grow"

    def segment(self, request: SegmentRequest) -> SegmentResponse:
        t0 = time.perf_counter()
        patch = np.ascontiguousarray(request.patch)
        grown = np.zeros(patch.shape, dtype=bool)
        for p in request.prompts:
            if p.polarity != "pos":
                continue
            seed_val = float(patch[p.index])
            if seed_val <= 0.0:
                warnings.warn(
                    f"degenerate positive seed at {p.index} (intensity {seed_val});"
                    " skipped",
                    stacklevel=2,
                )
                continue
            grown |= _flood_fill_6(patch, *p.index, self.frac * seed_val)
        negatives = [p for p in request.prompts if p.polarity == "neg"]
        if grown.any() and negatives:
            labels, _ = _label_components(np.ascontiguousarray(grown), _OFFSETS_6)
            kill = {int(labels[p.index]) for p in negatives} - {0}
            if kill:
                grown &= ~np.isin(labels, sorted(kill))
        prob = grown.astype(np.float32)
        return SegmentResponse(prob, latency_ms=(time.perf_counter() - t0) * 1e3)


class PerfectOracleBackend:
    """Test double that answers with the hidden ground truth restricted to
    the requested window. Requires harness-side window placement, so it
    cannot be served over the wire."""

    def __init__(self, ground_truth: BinaryMask):
        self.ground_truth = ground_truth
        self.name = "oracle"

    def segment(self, request: SegmentRequest) -> SegmentResponse:
        if request.origin is None:
            raise ProtocolError(
                "oracle backend needs window placement; available in-process only"
            )
        edge = request.dims[0]
        prob = extract_block(
            self.ground_truth.bits.astype(np.float32), request.origin, edge, 0.0
        )
        return SegmentResponse(prob)


REFERENCE_BACKENDS = ("threshold", "region_grow", "oracle")


def make_reference_backend(kind: str, *, theta: float = 1.0, frac: float = 0.41,
                           ground_truth: BinaryMask | None = None) -> Backend:
    if kind == "threshold":
        return ThresholdBackend(theta)
    if kind == "region_grow":
        return RegionGrowBackend(frac)
    if kind == "oracle":
        if ground_truth is None:
            raise ValueError("oracle backend needs the ground-truth mask")
        return PerfectOracleBackend(ground_truth)
    raise ValueError(f"unknown backend {kind!r}; choose from {REFERENCE_BACKENDS}")
