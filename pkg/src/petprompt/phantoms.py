"""Deterministic synthetic PET-like volumes with analytically known masks.

Structures are ellipsoidal "organs" (moderate constant uptake) and spherical
"lesions" (high constant uptake). An organ may carry satellite
lobes tethered by thin, dim bridge corridors: the bridge uptake sits below
the default 41%-of-seed region-grow threshold but above a 28% one, so a
single click captures only the seeded lobe while the whole organ remains one
6-connected component reachable at a lower growth fraction. That is what
gives additional clicks something real to fix.

All randomness comes from a counter-based Philox generator keyed by the case
seed, so a spec regenerates bit-identical volumes on any platform.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nifti
from .errors import PlacementError
from .metrics import _OFFSETS_6, _label_components
from .volume import BinaryMask, LabelMask, VoxelGrid

# Intensity model. Structure interiors are constant at their peak, so any
# frac <= 0.5 grow from a lobe voxel reaches the whole lobe at zero noise.
# Bridges sit at bg + BRIDGE_LEVEL*(peak-bg): below 0.41*peak (a single
# click stays in its lobe), above 0.28*peak (the solvability fraction
# floods through), and bright enough that 41% of a bridge-seed click still
# clears background plus noise, so corrective clicks never spill outside
# the target.
_BRIDGE_LEVEL = 0.33
SOLVABLE_FRAC = 0.28

ORGAN_PEAK_SUV = 4.0
LESION_PEAK_SUV = 9.0


@dataclass(frozen=True)
class PhantomSpec:
    seed: int
    dims: tuple[int, int, int] = (64, 64, 64)
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    n_organs: int = 1
    n_lesions: int = 0
    background_suv: float = 0.2
    noise_sigma: float = 0.0
    organ_suv: float = ORGAN_PEAK_SUV
    lesion_suv: float = LESION_PEAK_SUV
    satellites: tuple[int, int] = (0, 0)  # per-organ lobe count range (lo, hi)

    def __post_init__(self):
        if any(d < 16 for d in self.dims):
            raise ValueError(f"phantom dims must be >= 16 per axis, got {self.dims}")
        if self.n_organs < 0 or self.n_lesions < 0:
            raise ValueError("structure counts must be >= 0")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        lo, hi = self.satellites
        if not 0 <= lo <= hi:
            raise ValueError(f"bad satellite range {self.satellites}")
        for peak in (self.organ_suv, self.lesion_suv):
            if peak - self.background_suv < 2.0 * self.noise_sigma:
                raise ValueError(
                    "structure intensity too close to background for this noise level"
                )
        bridge = self.background_suv + _BRIDGE_LEVEL * (self.organ_suv - self.background_suv)
        if (lo, hi) != (0, 0) and bridge - self.background_suv < 2.0 * self.noise_sigma:
            raise ValueError("bridge intensity too close to background for this noise")


@dataclass(frozen=True)
class PhantomCase:
    case_id: str
    spec: PhantomSpec
    target_name: str
    target_labels: tuple[int, ...]


def _ellipsoid_rho_sq(dims, center, radii) -> np.ndarray:
    ii, jj, kk = np.meshgrid(
        np.arange(dims[0], dtype=np.float64),
        np.arange(dims[1], dtype=np.float64),
        np.arange(dims[2], dtype=np.float64),
        indexing="ij",
    )
    return (
        ((ii - center[0]) / radii[0]) ** 2
        + ((jj - center[1]) / radii[1]) ** 2
        + ((kk - center[2]) / radii[2]) ** 2
    )


def _support_radius(radii, direction) -> float:
    # distance from center to the ellipsoid surface along a unit direction
    denom = np.sqrt(sum((direction[a] / radii[a]) ** 2 for a in range(3)))
    return 1.0 / denom


def _axis_path(p0, p1) -> list[tuple[int, int, int]]:
    """6-connected staircase from p0 to p1: walk x, then y, then z."""
    path = []
    x, y, z = p0
    for ax, target in enumerate(p1):
        cur = [x, y, z]
        step = 1 if target >= cur[ax] else -1
        while cur[ax] != target:
            cur[ax] += step
            path.append(tuple(cur))
        x, y, z = cur
    return path


def _inside(dims, point, margin=1) -> bool:
    return all(margin <= point[a] < dims[a] - margin for a in range(3))


def _dilate6(bits: np.ndarray) -> np.ndarray:
    out = bits.copy()
    out[1:, :, :] |= bits[:-1, :, :]
    out[:-1, :, :] |= bits[1:, :, :]
    out[:, 1:, :] |= bits[:, :-1, :]
    out[:, :-1, :] |= bits[:, 1:, :]
    out[:, :, 1:] |= bits[:, :, :-1]
    out[:, :, :-1] |= bits[:, :, 1:]
    return out


class _Blob:
    __slots__ = ("member", "rho_sq", "bridge")

    def __init__(self, member, rho_sq, bridge=None):
        self.member = member
        self.rho_sq = rho_sq
        self.bridge = bridge if bridge is not None else np.zeros_like(member)


def _place_ellipsoid(rng, dims, radii_sampler, occupied, gap=2.0, retries=200):
    for _ in range(retries):
        radii = radii_sampler(rng)
        lo = [int(np.ceil(r)) + 1 for r in radii]
        hi = [dims[ax] - lo[ax] - 1 for ax in range(3)]
        if any(hi[ax] <= lo[ax] for ax in range(3)):
            continue
        center = tuple(float(rng.integers(lo[ax], hi[ax] + 1)) for ax in range(3))
        rho_sq = _ellipsoid_rho_sq(dims, center, radii)
        member = rho_sq <= 1.0
        padded = _ellipsoid_rho_sq(dims, center, tuple(r + gap for r in radii)) <= 1.0
        if member.any() and not (padded & occupied).any():
            return center, radii, member, rho_sq
    raise PlacementError(f"no room for another structure after {retries} tries")


def _attach_satellite(rng, dims, center, radii, organ_bits, others, retries=200):
    """One satellite lobe plus its bridge corridor, or None if nothing fits."""
    others_dilated = _dilate6(others) if others.any() else others
    for _ in range(retries):
        direction = rng.normal(size=3)
        norm = float(np.sqrt((direction**2).sum()))
        if norm < 1e-9:
            continue
        direction = direction / norm
        factor = float(rng.uniform(0.35, 0.55))
        sat_radii = tuple(r * factor for r in radii)
        length = int(rng.integers(3, 6))
        d_main = _support_radius(radii, direction)
        d_sat = _support_radius(sat_radii, direction)
        sat_center = tuple(
            center[a] + direction[a] * (d_main + length + d_sat) for a in range(3)
        )
        max_r = int(np.ceil(max(sat_radii)))
        if not _inside(dims, [int(round(c)) for c in sat_center], margin=max_r + 2):
            continue
        rho_sq = _ellipsoid_rho_sq(dims, sat_center, sat_radii)
        member = rho_sq <= 1.0
        if not member.any() or (member & organ_bits).any():
            continue
        padded = _ellipsoid_rho_sq(
            dims, sat_center, tuple(r + 2.0 for r in sat_radii)
        ) <= 1.0
        if (padded & others).any():
            continue
        p0 = tuple(int(round(center[a] + direction[a] * d_main)) for a in range(3))
        p1 = tuple(
            int(round(sat_center[a] - direction[a] * d_sat)) for a in range(3)
        )
        if not (_inside(dims, p0) and _inside(dims, p1)):
            continue
        bridge = np.zeros(dims, dtype=bool)
        for voxel in [p0, *_axis_path(p0, p1), p1]:
            bridge[voxel] = True
        bridge &= ~(member | organ_bits)
        if (bridge & others_dilated).any():
            continue
        if not _organ_connected(organ_bits | member | bridge):
            continue  # endpoint rounding left a diagonal gap; redraw
        return member, rho_sq, bridge
    return None


def _organ_connected(blob_bits: np.ndarray) -> bool:
    _, count = _label_components(np.ascontiguousarray(blob_bits), _OFFSETS_6)
    return count == 1


def generate(spec: PhantomSpec) -> tuple[VoxelGrid, LabelMask]:
    """Render the phantom volume and its label mask.

    Organs get labels 1..n_organs (satellite lobes and bridges share their
    organ's label), lesions n_organs+1.. in placement order.
    """
    rng = np.random.Generator(np.random.Philox(key=spec.seed))
    dims = spec.dims
    short_edge = min(dims)

    def organ_radii(r):
        return tuple(float(r.uniform(0.14, 0.22) * short_edge) for _ in range(3))

    def lesion_radii(r):
        rad = float(r.uniform(2.0, 4.0))
        return (rad, rad, rad)

    occupied = np.zeros(dims, dtype=bool)
    bg = spec.background_suv
    volume = np.full(dims, bg, dtype=np.float64)
    labels = np.zeros(dims, dtype=np.int32)
    names: dict[int, str] = {}

    def paint_lobe(member, peak):
        volume[member] = peak

    for idx in range(1, spec.n_organs + 1):
        center, radii, member, rho_sq = _place_ellipsoid(
            rng, dims, organ_radii, occupied
        )
        organ_bits = member.copy()
        paint_lobe(member, spec.organ_suv)
        lo, hi = spec.satellites
        n_sat = int(rng.integers(lo, hi + 1)) if hi > 0 else 0
        bridge_suv = bg + _BRIDGE_LEVEL * (spec.organ_suv - bg)
        for _ in range(n_sat):
            others = occupied & ~organ_bits
            sat = _attach_satellite(rng, dims, center, radii, organ_bits, others)
            if sat is None:
                break  # crowded grid; organ keeps the lobes that fit
            s_member, s_rho_sq, bridge = sat
            paint_lobe(s_member, spec.organ_suv)
            volume[bridge] = bridge_suv
            organ_bits |= s_member | bridge
            occupied |= s_member | bridge
        labels[organ_bits] = idx
        names[idx] = f"organ_{idx}"
        occupied |= organ_bits

    for idx in range(spec.n_organs + 1, spec.n_organs + spec.n_lesions + 1):
        _, _, member, rho_sq = _place_ellipsoid(rng, dims, lesion_radii, occupied)
        paint_lobe(member, spec.lesion_suv)
        labels[member] = idx
        names[idx] = f"lesion_{idx - spec.n_organs}"
        occupied |= member

    if spec.noise_sigma > 0:
        volume = volume + rng.normal(0.0, spec.noise_sigma, size=dims)

    grid = VoxelGrid(
        data=volume.astype(np.float32),
        spacing=spec.spacing,
        affine=np.diag([*spec.spacing, 1.0]),
    )
    return grid, LabelMask(labels, names)


SUITE_NAMES = ("organs", "lesions", "disseminated")


def suite(
    name: str,
    n_cases: int,
    base_seed: int,
    dims: tuple[int, int, int] = (64, 64, 64),
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0),
    noise_sigma: float | None = None,
) -> list[PhantomCase]:
    """Case list for one of the built-in suites; seeds are base_seed + index.

    ``organs``: one large single-component multi-lobe target per case.
    ``lesions``: 1-3 small spherical targets (pooled into one target mask).
    ``disseminated``: 5-12 scattered small targets.
    """
    if name not in SUITE_NAMES:
        raise ValueError(f"unknown suite {name!r}; choose from {SUITE_NAMES}")
    if n_cases < 1:
        raise ValueError("n_cases must be >= 1")
    cases = []
    for idx in range(n_cases):
        seed = base_seed + idx
        counts = np.random.Generator(np.random.Philox(key=seed ^ 0x5EED))
        if name == "organs":
            spec = PhantomSpec(
                seed=seed,
                dims=dims,
                spacing=spacing,
                n_organs=1,
                n_lesions=0,
                satellites=(2, 4),
                noise_sigma=0.05 if noise_sigma is None else noise_sigma,
            )
            target = ("organ_1", (1,))
        else:
            n_les = (
                int(counts.integers(1, 4))
                if name == "lesions"
                else int(counts.integers(5, 13))
            )
            spec = PhantomSpec(
                seed=seed,
                dims=dims,
                spacing=spacing,
                n_organs=0,
                n_lesions=n_les,
                noise_sigma=0.05 if noise_sigma is None else noise_sigma,
            )
            target = ("lesions", tuple(range(1, n_les + 1)))
        cases.append(
            PhantomCase(
                case_id=f"{name}_{idx:04d}",
                spec=spec,
                target_name=target[0],
                target_labels=target[1],
            )
        )
    return cases


def target_mask(labels: LabelMask, label_ids) -> BinaryMask:
    return labels.mask_for(label_ids)


def write_suite(cases: list[PhantomCase], outdir) -> Path:
    """Write a suite to disk: volume + label NIfTI pair per case and a JSON
    manifest listing case ids, seeds, file names, and targets. Returns the
    manifest path."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    entries = []
    for case in cases:
        grid, labels = generate(case.spec)
        vol_name = f"{case.case_id}_suv.nii.gz"
        lab_name = f"{case.case_id}_labels.nii.gz"
        nifti.write_volume(outdir / vol_name, grid)
        nifti.write_labels(outdir / lab_name, labels, grid)
        entries.append(
            {
                "case_id": case.case_id,
                "volume": vol_name,
                "labels": lab_name,
                "seed": case.spec.seed,
                "targets": [
                    {"name": case.target_name, "labels": list(case.target_labels)}
                ],
            }
        )
    manifest = outdir / "manifest.json"
    manifest.write_text(json.dumps(entries, indent=2, sort_keys=True) + "\n")
    return manifest
