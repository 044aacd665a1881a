"""Interactive point-prompt segmentation harness for volumetric PET."""

from .volume import (
    BinaryMask,
    LabelMask,
    PointPrompt,
    PromptSet,
    VoxelGrid,
    linear_index,
    mask_difference,
    mask_intersection,
    mask_union,
    mask_volume,
    voxel_to_world,
)
from .metrics import (
    AggregateStat,
    MetricResult,
    aggregate,
    boundary_of,
    connected_components,
    distance_transform,
    dsc,
    nsd,
)
from .clicks import (
    InteractionTrajectory,
    discrepancy,
    next_prompt,
    run_interaction,
    run_lesion_wise,
    select_click,
)
from .patches import PatchConfig, PatchWindow, fuse, initial_patch, run_patched_inference
from .backends import (
    PerfectOracleBackend,
    RegionGrowBackend,
    SegmentRequest,
    SegmentResponse,
    ThresholdBackend,
)
from .phantoms import PhantomSpec, generate, suite, write_suite
from .covariance import UptakeMatrix, build_network, roi_mean

__version__ = "0.1.0"
