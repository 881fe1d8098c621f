"""Multi-camera BEV view transformation.

Forward path: lift image features along depth-binned pixel rays and splat them
into a bird's-eye-view grid by sum pooling.  A foreground mask head proposes
sparse BEV queries; a depth-aware backward pass projects each query's height
samples into every camera, gathers deformable-attention features weighted by
depth consistency, and adds the result back as a residual.  Synthetic
ray-cast scenes stand in for learned image and depth networks throughout.
"""
from .backward import (
    DeformableParams,
    HeightSampling,
    RefHit,
    deformable_sample,
    depth_aware_cross_attention,
    project_refs,
    reference_points,
    refine,
    spatial_cross_attention,
)
from .depth import (
    DepthBins,
    DepthDistMap,
    consistency,
    consistency_on_map,
    oracle_dist_map,
    oracle_distribution,
    sample_distribution,
    two_hot,
)
from .foreground import (
    BevQuery,
    Box3D,
    ForegroundMask,
    MaskHeadWeights,
    bce_loss,
    dice_loss,
    mask_from_binary,
    mask_head,
    mask_loss,
    rasterize_gt_mask,
    select_queries,
)
from .formats import (
    FormatError,
    load_rig,
    load_scene,
    load_tensor,
    read_pgm,
    rig_from_json,
    save_rig,
    save_scene,
    save_tensor,
    scene_from_json,
    write_pgm,
)
from .forward import (
    BevGrid,
    BevSpec,
    LiftedPoints,
    SparsityReport,
    camera_hit_counts,
    forward_project,
    lift,
    occupancy_stats,
    splat_naive,
    splat_pooled,
)
from .geometry import (
    Camera,
    FrustumPoints,
    ProjectionHit,
    Rig,
    build_frustum,
    make_projection_matrix,
    project,
    project_points,
    unproject,
    unproject_points,
)
from .pipeline import (
    EgoPose,
    PipelineResult,
    Scene,
    TruePositiveErrors,
    nds,
    render_depth,
    render_features,
    run_pipeline,
    warp_and_stack,
)
from .rigs import ego_to_camera_rotation, make_camera, reference_rig

__version__ = "0.1.0"
