from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from ..errors import (
    DegenerateConfigurationError,
    InsufficientPointsError,
    LengthMismatchError,
    NoCorrespondencesError,
)
from ..geometry.mesh import PointCloud
from ..geometry.transform import SimilarityTransform

_RANK_TOL = 1e-12
MATCH_MODES = ("source", "target", "both")


def _pts(x):
    return x.points if isinstance(x, PointCloud) else np.asarray(x, dtype=np.float64).reshape(-1, 3)


def umeyama_solve(source_pts, target_pts, weights=None, with_scale=True) -> SimilarityTransform:
    """Closed-form least-squares similarity mapping source onto target."""
    X = _pts(source_pts)
    Y = _pts(target_pts)
    if len(X) != len(Y):
        raise LengthMismatchError(f"{len(X)} source points vs {len(Y)} target points")
    if len(X) < 3:
        raise InsufficientPointsError(f"need at least 3 point pairs, got {len(X)}")
    if weights is None:
        w = np.full(len(X), 1.0 / len(X))
    else:
        w = np.asarray(weights, dtype=np.float64).reshape(-1)
        if len(w) != len(X) or np.any(w < 0) or not w.sum() > 0:
            raise ValueError("weights must be non-negative, one per pair, with positive sum")
        w = w / w.sum()
    mx = w @ X
    my = w @ Y
    dx = X - mx
    dy = Y - my
    cov_x = (dx * w[:, None]).T @ dx
    sx = np.linalg.svd(cov_x, compute_uv=False)
    if sx[0] <= 0 or sx[1] <= _RANK_TOL * sx[0]:
        raise DegenerateConfigurationError("source points are collinear or coincident")
    sigma = (dy * w[:, None]).T @ dx
    U, D, Vt = np.linalg.svd(sigma)
    if D[0] <= 0 or D[1] <= _RANK_TOL * D[0]:
        raise DegenerateConfigurationError("cross-covariance has rank < 2")
    S = np.ones(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2] = -1.0
    R = (U * S) @ Vt
    var_x = float(np.trace(cov_x))
    s = float(D @ S) / var_x if with_scale else 1.0
    if not s > 0:
        raise DegenerateConfigurationError(f"non-positive scale estimate {s}")
    t = my - s * R @ mx
    return SimilarityTransform(s, R, t)


@dataclass(frozen=True)
class IcpParams:
    max_iterations: int = 100
    convergence_tol: float = 1e-8
    trim_fraction: float = 0.1
    correspondence_max_dist: float | None = None
    # "source": every source point takes its nearest target point.
    # "target": every target point takes its nearest source point, which suits
    # a partial target (holes, occlusion) that only covers part of the source.
    # "both": the union of the two, which resists shrinking and growing alike.
    match_from: str = "source"

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.convergence_tol > 0:
            raise ValueError("convergence_tol must be > 0")
        if not 0.0 <= self.trim_fraction < 1.0:
            raise ValueError("trim_fraction must lie in [0, 1)")
        if self.correspondence_max_dist is not None and not self.correspondence_max_dist > 0:
            raise ValueError("correspondence_max_dist must be positive")
        if self.match_from not in MATCH_MODES:
            raise ValueError(f"match_from must be one of {MATCH_MODES}")


@dataclass(frozen=True, eq=False)
class Correspondences:
    source_idx: np.ndarray
    target_idx: np.ndarray
    distances: np.ndarray
    weights: np.ndarray | None = None

    def __len__(self):
        return len(self.source_idx)

    @property
    def pairs(self):
        return list(zip(self.source_idx.tolist(), self.target_idx.tolist()))


@dataclass
class IcpResult:
    transform: SimilarityTransform
    final_rmse: float
    iterations_run: int
    converged: bool
    # (objective before solve, objective after solve) on each iteration's retained pairs
    history: list = field(default_factory=list)
    initial: SimilarityTransform | None = None
    coarse: object = None

    def to_dict(self) -> dict:
        d = {
            "transform": self.transform.to_dict(),
            "final_rmse": self.final_rmse,
            "iterations_run": self.iterations_run,
            "converged": self.converged,
        }
        if self.initial is not None:
            d["initial"] = self.initial.to_dict()
        if self.coarse is not None:
            d["coarse_inliers"] = int(self.coarse.inliers)
            d["coarse_inlier_ratio"] = float(self.coarse.inlier_ratio)
        return d


class NearestNeighbors:
    """k-d tree over a target cloud with lowest-index tie breaking."""

    def __init__(self, target):
        self.points = _pts(target)
        if len(self.points) == 0:
            raise NoCorrespondencesError("target cloud is empty")
        self.tree = cKDTree(self.points)

    def query(self, pts):
        pts = _pts(pts)
        if len(self.points) == 1:
            d = np.linalg.norm(pts - self.points[0], axis=1)
            return d, np.zeros(len(pts), dtype=np.int64)
        d, i = self.tree.query(pts, k=2)
        tie = (d[:, 1] == d[:, 0]) & (i[:, 1] < i[:, 0])
        idx = np.where(tie, i[:, 1], i[:, 0]).astype(np.int64)
        return d[:, 0], idx


def find_correspondences(transformed_source, target, params: IcpParams, nn: NearestNeighbors | None = None) -> Correspondences:
    """Nearest-neighbour pairs, then distance gating and trimming.

    With ``params.match_from == "source"`` each source point is paired with
    its nearest target point (``nn`` may hold a prebuilt index over the
    target); with ``"target"`` the roles swap.  ``"both"`` concatenates the
    two sets, source-side pairs first, each gated and trimmed on its own.
    """
    src = _pts(transformed_source)
    if len(src) == 0:
        raise NoCorrespondencesError("source cloud is empty")
    parts = []
    if params.match_from in ("source", "both"):
        nn = nn if nn is not None else NearestNeighbors(target)
        dist, tgt = nn.query(src)
        keep = _gate_and_trim(dist, params)
        parts.append((keep, tgt[keep], dist[keep]))
    if params.match_from in ("target", "both"):
        dist, src_of = NearestNeighbors(src).query(_pts(target))
        keep = _gate_and_trim(dist, params)
        parts.append((src_of[keep], keep, dist[keep]))
    if len(parts) == 1:
        return Correspondences(*parts[0])
    return Correspondences(*(np.concatenate(c) for c in zip(*parts)))


def _gate_and_trim(dist, params):
    keep = np.arange(len(dist))
    if params.correspondence_max_dist is not None:
        keep = keep[dist <= params.correspondence_max_dist]
    n_drop = int(math.floor(params.trim_fraction * len(keep) + 1e-9))
    if n_drop:
        order = np.argsort(dist[keep], kind="stable")
        keep = np.sort(keep[order[: len(keep) - n_drop]])
    if len(keep) == 0:
        raise NoCorrespondencesError("every correspondence was rejected")
    return keep


def alignment_objective(t: SimilarityTransform, src, tgt) -> float:
    r = t.apply(src) - tgt
    return float(np.einsum("ij,ij->", r, r) / len(r))


def scale_aware_icp(source, target, init: SimilarityTransform, params: IcpParams = IcpParams()) -> IcpResult:
    """Alternate nearest-neighbour matching and closed-form similarity solves.

    The objective tracked is the mean squared residual over the retained
    pairs; the best transform seen is returned.
    """
    src = _pts(source)
    tgt = _pts(target)
    if len(src) == 0 or len(tgt) == 0:
        raise NoCorrespondencesError("empty point cloud")
    nn = NearestNeighbors(tgt)
    extent = float(np.linalg.norm(tgt.max(axis=0) - tgt.min(axis=0))) or 1.0
    floor = (1e-13 * extent) ** 2
    T = init
    best_T, best_obj = init, math.inf
    history = []
    converged = False
    prev = None
    it = 0
    for it in range(1, params.max_iterations + 1):
        corr = find_correspondences(T.apply(src), tgt, params, nn)
        P = src[corr.source_idx]
        Q = tgt[corr.target_idx]
        before = float(np.mean(corr.distances ** 2))
        T_new = umeyama_solve(P, Q, with_scale=True)
        after = alignment_objective(T_new, P, Q)
        if after > before:
            # closed form is optimal on these pairs; only rounding can land here
            T_new, after = T, before
        history.append((before, after))
        T = T_new
        if after < best_obj:
            best_T, best_obj = T, after
        if after <= floor or (prev is not None and abs(prev - after) <= params.convergence_tol * max(prev, after)):
            converged = True
            break
        prev = after
    return IcpResult(best_T, math.sqrt(best_obj), it, converged, history, initial=init)
