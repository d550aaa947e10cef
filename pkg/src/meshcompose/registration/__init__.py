from .align import LowConfidenceWarning, global_to_local_align, initial_pose
from .coarse import CoarseResult, ExternalRegistrar, PpfRansacRegistrar, coarse_global_register, get_registrar
from .icp import (
    Correspondences,
    IcpParams,
    IcpResult,
    NearestNeighbors,
    alignment_objective,
    find_correspondences,
    scale_aware_icp,
    umeyama_solve,
)

__all__ = [
    "CoarseResult",
    "Correspondences",
    "ExternalRegistrar",
    "IcpParams",
    "IcpResult",
    "LowConfidenceWarning",
    "NearestNeighbors",
    "PpfRansacRegistrar",
    "alignment_objective",
    "coarse_global_register",
    "find_correspondences",
    "get_registrar",
    "global_to_local_align",
    "initial_pose",
    "scale_aware_icp",
    "umeyama_solve",
]
