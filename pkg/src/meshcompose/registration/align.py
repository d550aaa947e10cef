"""OBB scale prior, coarse global registration, then scale-aware ICP."""

from __future__ import annotations

import logging
import warnings

from ..errors import MeshComposeError, StageError
from ..geometry.bounds import compute_obb, estimate_scale_from_obb
from ..geometry.mesh import TriangleMesh, sample_surface
from .coarse import get_registrar
from .icp import IcpParams, IcpResult, scale_aware_icp

log = logging.getLogger(__name__)

LOW_CONFIDENCE_RATIO = 0.2
# guidance may have holes or be cropped, so match from its side
DEFAULT_ICP = IcpParams(match_from="target")


class LowConfidenceWarning(UserWarning):
    """Coarse registration matched only a small part of the source."""


def _stage(name, fn, *args, object_id=None, **kw):
    try:
        return fn(*args, **kw)
    except StageError:
        raise
    except (MeshComposeError, ValueError, OSError) as exc:
        raise StageError(name, exc, object_id) from exc


def initial_pose(source_pts, guidance_pts, seed, registrar="ppf-ransac", object_id=None):
    """OBB scale estimate followed by coarse registration; returns the coarse result."""
    s0 = _stage("obb-scale", lambda: estimate_scale_from_obb(compute_obb(source_pts), compute_obb(guidance_pts)), object_id=object_id)
    reg = get_registrar(registrar)
    coarse = _stage("coarse-registration", reg.register, source_pts, guidance_pts, s0, seed, object_id=object_id)
    if coarse.inlier_ratio < LOW_CONFIDENCE_RATIO:
        msg = f"coarse registration overlap {coarse.inlier_ratio:.3f} is below {LOW_CONFIDENCE_RATIO}"
        if object_id is not None:
            msg = f"{object_id}: {msg}"
        warnings.warn(msg, LowConfidenceWarning, stacklevel=3)
    return coarse


def global_to_local_align(
    source_mesh: TriangleMesh,
    guidance_mesh: TriangleMesh,
    sample_n: int = 5000,
    seed: int = 0,
    icp_params: IcpParams = DEFAULT_ICP,
    registrar="ppf-ransac",
    object_id=None,
) -> IcpResult:
    """Recover the similarity taking ``source_mesh`` onto ``guidance_mesh``."""
    src = _stage("sample", sample_surface, source_mesh, sample_n, seed, object_id=object_id)
    gd = _stage("sample", sample_surface, guidance_mesh, sample_n, seed, object_id=object_id)
    coarse = initial_pose(src, gd, seed, registrar, object_id)
    res = _stage("icp", scale_aware_icp, src, gd, coarse.transform, icp_params, object_id=object_id)
    res.coarse = coarse
    log.info("aligned %s: rmse %.3g after %d iterations", object_id or "object", res.final_rmse, res.iterations_run)
    return res
