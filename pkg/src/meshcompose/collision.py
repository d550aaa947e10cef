"""Collision-aware placement against an anchor SDF.

The placed object's surface points are pulled toward fixed guidance
correspondences while a penalty annealed from 0 to ``beta_max`` pushes them
out of the anchor:

    L_col  = sum_p [-phi(q)]_+^2 + lambda * [eps - phi(q)]_+
    E      = align(q, q') + beta_k * L_col,    beta_k = beta_max * k / k_max

with ``q = s R p + t``.  Pose steps use a local 7-vector (log-scale,
axis-angle, translation) about the centroid of the transformed points.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DegenerateConfigurationError, DivergedError, LengthMismatchError, OutOfRangeError
from .geometry.mesh import PointCloud
from .geometry.transform import SimilarityTransform, exp_so3
from .registration.icp import IcpParams, NearestNeighbors, find_correspondences, umeyama_solve

log = logging.getLogger(__name__)

EPSILON_FRACTION = 0.005  # default margin, relative to the anchor's AABB diagonal
ARMIJO_C = 1e-4
MAX_HALVINGS = 20
MAX_ROTATION_STEP = 0.5  # radians per inner step
MAX_MOVE_FRACTION = 0.05  # per-step bound on point motion, relative to the object radius
STALL_STAGES = 5
ESCAPE_TRIES = 2  # restarts from outside the anchor when a run ends in penetration
ESCAPE_STEP = 0.05  # retreat step, relative to the object radius
ESCAPE_MAX_STEPS = 80
# One-sided matching lets the collision term win by shrinking the object
# (source side) or growing it around the anchor (guidance side); pairs in
# both directions resist both.
PLACEMENT_ICP = IcpParams(match_from="both")


@dataclass(frozen=True)
class CollisionParams:
    epsilon: float | None = None  # None: EPSILON_FRACTION * anchor diagonal
    lam: float = 0.003
    beta_max: float = 3.0
    k_max: int = 100
    inner_steps: int = 10
    initial_step: float = 1.0
    convergence_tol: float = 1e-6
    # "mean" averages the alignment term over correspondences, "sum" is the plain sum
    align_reduction: str = "mean"

    def __post_init__(self):
        if self.epsilon is not None and not self.epsilon >= 0:
            raise ValueError("epsilon must be >= 0")
        if not self.lam >= 0:
            raise ValueError("lambda must be >= 0")
        if not self.beta_max >= 0:
            raise ValueError("beta_max must be >= 0")
        if self.k_max < 1:
            raise ValueError("k_max must be >= 1")
        if self.inner_steps < 0:
            raise ValueError("inner_steps must be >= 0")
        if not self.initial_step > 0 or not self.convergence_tol > 0:
            raise ValueError("step tolerances must be positive")
        if self.align_reduction not in ("mean", "sum"):
            raise ValueError("align_reduction must be 'mean' or 'sum'")

    @property
    def step_tolerances(self):
        return self.initial_step, self.convergence_tol

    def margin(self, anchor_diagonal=None) -> float:
        if self.epsilon is not None:
            return float(self.epsilon)
        if anchor_diagonal is None:
            raise ValueError("epsilon is unset; pass the anchor diagonal to derive it")
        return EPSILON_FRACTION * float(anchor_diagonal)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d

    @classmethod
    def from_dict(cls, d) -> "CollisionParams":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        return cls(**d)


@dataclass(frozen=True)
class PoseDelta:
    log_scale: float = 0.0
    rotation_increment: tuple = (0.0, 0.0, 0.0)
    translation_delta: tuple = (0.0, 0.0, 0.0)

    @classmethod
    def from_vector(cls, x) -> "PoseDelta":
        x = np.asarray(x, dtype=np.float64)
        return cls(float(x[0]), tuple(x[1:4].tolist()), tuple(x[4:7].tolist()))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([[self.log_scale], self.rotation_increment, self.translation_delta])

    def apply(self, t: SimilarityTransform, pivot) -> SimilarityTransform:
        """Pose whose action is ``q -> e^l Exp(w) (q - c) + c + d`` after ``t``."""
        w = np.asarray(self.rotation_increment, dtype=np.float64)
        if not np.linalg.norm(w) < math.pi:
            raise ValueError("rotation increment must be shorter than pi")
        c = np.asarray(pivot, dtype=np.float64)
        e = math.exp(self.log_scale)
        dR = exp_so3(w)
        return SimilarityTransform(
            e * t.scale,
            dR @ t.rotation,
            e * dR @ (t.translation - c) + c + np.asarray(self.translation_delta, dtype=np.float64),
        )


def _pts(x):
    return x.points if isinstance(x, PointCloud) else np.asarray(x, dtype=np.float64).reshape(-1, 3)


def _pose_grad(q, g, pivot):
    """Chain rule from per-point gradients ``g`` at ``q`` to local pose coordinates."""
    r = q - pivot
    return np.concatenate([[np.einsum("ij,ij->", g, r)], np.cross(r, g).sum(axis=0), g.sum(axis=0)])


def _pose_gn_diag(r, w):
    """Diagonal of J^T diag(w) J for the point Jacobian about the pivot, ``r = q - c``."""
    r2 = r * r
    n2 = r2.sum(axis=1)
    return np.concatenate([[w @ n2], w @ (n2[:, None] - r2), np.full(3, w.sum())])


def _hinge(phi, epsilon, lam):
    """Penalty value and its derivative with respect to each ``phi``."""
    pen = np.where(phi < 0.0, -phi, 0.0)
    soft = np.where(phi < epsilon, epsilon - phi, 0.0)
    value = float(np.sum(pen * pen) + lam * np.sum(soft))
    # strict inequalities give the zero subgradient at the kinks
    dval = -2.0 * pen - lam * (phi < epsilon)
    return value, dval, pen


def _collision_terms(grid, q, epsilon, lam):
    phi, dphi = grid.query(q)
    value, dval, pen = _hinge(phi, epsilon, lam)
    return value, dval[:, None] * dphi, phi, dphi, pen


def _reverse_terms(grid, anchor_pts, t: SimilarityTransform, epsilon, lam, pivot=None):
    """Penalty on fixed anchor points inside the moving object.

    ``grid`` holds the object's field in its own frame, so the world distance
    is ``s * grid(T^-1 a)``.  With ``pivot`` the gradient in pose coordinates
    and the per-point Jacobian rows of penetrating points are returned too.
    """
    x = (anchor_pts - t.translation) @ t.rotation / t.scale
    Phi, dPhi = grid.query(x)
    phi = t.scale * Phi
    value, dval, pen = _hinge(phi, epsilon, lam)
    if pivot is None:
        return value, phi
    g = dPhi @ t.rotation.T
    r = anchor_pts - pivot
    # moving the object by the pose delta moves the anchor point by its inverse
    J = np.column_stack([phi - np.einsum("ij,ij->i", g, r), -np.cross(r, g), -g])
    return value, phi, dval @ J, J[pen > 0.0]


def collision_loss(grid, points, t: SimilarityTransform, epsilon: float, lam: float, pivot=None):
    """Penalty value and its gradient as a :class:`PoseDelta` at ``t``."""
    p = _pts(points)
    if len(p) == 0:
        raise ValueError("collision_loss needs at least one point")
    q = t.apply(p)
    c = q.mean(axis=0) if pivot is None else np.asarray(pivot, dtype=np.float64)
    value, g, *_ = _collision_terms(grid, q, epsilon, lam)
    return value, PoseDelta.from_vector(_pose_grad(q, g, c))


def beta_schedule(k: int, k_max: int, beta_max: float) -> float:
    if k_max < 1:
        raise OutOfRangeError("k_max must be >= 1")
    if not 0 <= k <= k_max:
        raise OutOfRangeError(f"stage {k} outside [0, {k_max}]")
    return beta_max * k / k_max


class _StageObjective:
    """Eq.-3 style objective at fixed correspondences and fixed beta."""

    def __init__(self, src, tgt, col_pts, grid, params: CollisionParams, beta, epsilon, reverse=None):
        self.reverse = reverse  # (anchor points, object-frame grid) or None
        self.src = src
        self.tgt = tgt
        self.col_pts = col_pts
        self.grid = grid
        self.lam = params.lam
        self.beta = beta
        self.epsilon = epsilon
        self.align_w = 1.0 / len(src) if params.align_reduction == "mean" else 1.0

    def terms(self, t):
        r = t.apply(self.src) - self.tgt
        align = self.align_w * float(np.einsum("ij,ij->", r, r))
        col = 0.0
        if self.beta > 0.0:
            col = _collision_terms(self.grid, t.apply(self.col_pts), self.epsilon, self.lam)[0]
            if self.reverse is not None:
                col += _reverse_terms(self.reverse[1], self.reverse[0], t, self.epsilon, self.lam)[0]
        return align, col, align + self.beta * col

    def value(self, t):
        return self.terms(t)[2]

    def gradient(self, t, pivot):
        qa = t.apply(self.src)
        ga = 2.0 * self.align_w * (qa - self.tgt)
        grad = _pose_grad(qa, ga, pivot)
        diag = 2.0 * self.align_w * _pose_gn_diag(qa - pivot, np.ones(len(qa)))
        if self.beta > 0.0:
            qc = t.apply(self.col_pts)
            _, gc, _, dphi, pen = _collision_terms(self.grid, qc, self.epsilon, self.lam)
            grad = grad + self.beta * _pose_grad(qc, gc, pivot)
            # Gauss-Newton curvature of the quadratic hinge, projected per coordinate
            hit = pen > 0.0
            if hit.any():
                r = qc[hit] - pivot
                gphi = dphi[hit]
                jl = np.einsum("ij,ij->i", gphi, r)
                jw = np.cross(r, gphi)
                J = np.column_stack([jl, jw, gphi])
                diag = diag + 2.0 * self.beta * np.einsum("ij,ij->j", J, J)
            if self.reverse is not None:
                _, _, gr, Jr = _reverse_terms(self.reverse[1], self.reverse[0], t, self.epsilon, self.lam, pivot)
                grad = grad + self.beta * gr
                diag = diag + 2.0 * self.beta * np.einsum("ij,ij->j", Jr, Jr)
        return grad, diag


def composition_objective(points, fixed_targets, grid, t: SimilarityTransform, params: CollisionParams, beta: float, epsilon=None, pivot=None):
    """Alignment plus ``beta`` times the collision penalty, with its :class:`PoseDelta` gradient.

    ``epsilon`` overrides ``params.epsilon`` (required when that is unset).
    """
    p = _pts(points)
    q_fixed = _pts(fixed_targets)
    if len(p) != len(q_fixed):
        raise LengthMismatchError(f"{len(p)} points vs {len(q_fixed)} fixed targets")
    if len(p) == 0:
        raise ValueError("composition_objective needs at least one point")
    eps = params.margin() if epsilon is None else float(epsilon)
    obj = _StageObjective(p, q_fixed, p, grid, params, beta, eps)
    c = t.apply(p).mean(axis=0) if pivot is None else np.asarray(pivot, dtype=np.float64)
    grad, _ = obj.gradient(t, c)
    return obj.value(t), PoseDelta.from_vector(grad)


@dataclass
class StageRecord:
    k: int
    beta: float
    align_term: float
    col_term: float
    total: float
    max_penetration: float


@dataclass
class OptimizationTrace:
    records: list = field(default_factory=list)
    transform: SimilarityTransform | None = None
    converged: bool = False
    epsilon: float = 0.0
    restarts: int = 0  # escape restarts; a restarted trace begins at stage 1
    # (k, inner step, objective) after every accepted or rejected step; for auditing monotonicity
    inner_objectives: list = field(default_factory=list, repr=False)

    @property
    def betas(self):
        return [r.beta for r in self.records]

    @property
    def final_max_penetration(self) -> float:
        return self.records[-1].max_penetration if self.records else 0.0

    COLUMNS = ("k", "beta", "align_term", "col_term", "total", "max_penetration")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.COLUMNS)
            for r in self.records:
                w.writerow([r.k] + [repr(float(getattr(r, c))) for c in self.COLUMNS[1:]])

    def to_dict(self) -> dict:
        return {
            "transform": self.transform.to_dict() if self.transform is not None else None,
            "converged": self.converged,
            "epsilon": self.epsilon,
            "restarts": self.restarts,
            "stages": [asdict(r) for r in self.records],
        }


def _descend(obj: _StageObjective, t, params: CollisionParams, step0, trace, k):
    """Preconditioned gradient descent with Armijo backtracking; returns (pose, last step)."""
    f = obj.value(t)
    step = step0
    for it in range(params.inner_steps):
        q = t.apply(obj.col_pts)
        pivot = q.mean(axis=0)
        radius = float(np.sqrt(np.einsum("ij,ij->i", q - pivot, q - pivot).max())) or 1.0
        g, diag = obj.gradient(t, pivot)
        d = -g / (diag + 1e-12 * (diag.max() + 1.0))
        slope = float(g @ d)
        if not slope < 0.0:
            trace.inner_objectives.append((k, it, f))
            break
        # first-order bound on how far any point moves: (|l| + |w|) r_max + |d|
        wn = np.linalg.norm(d[1:4])
        move = (abs(d[0]) + wn) * radius + np.linalg.norm(d[4:])
        a = step
        if wn > 0:
            a = min(a, MAX_ROTATION_STEP / wn)
        if move > 0:
            a = min(a, MAX_MOVE_FRACTION * radius / move)
        accepted = False
        for _ in range(MAX_HALVINGS + 1):
            cand = PoseDelta.from_vector(a * d).apply(t, pivot)
            fc = obj.value(cand)
            if not math.isfinite(fc):
                raise DivergedError(f"objective became {fc} at stage {k}")
            if fc <= f + ARMIJO_C * a * slope:
                accepted = True
                break
            a *= 0.5
        if accepted:
            t, f = cand, fc
            step = min(2.0 * a, params.initial_step)
        trace.inner_objectives.append((k, it, f))
        if not accepted:
            break
    return t, step


def optimize_placement(
    remain_points,
    guidance_points,
    grid,
    init: SimilarityTransform,
    params: CollisionParams = CollisionParams(),
    icp_params: IcpParams = PLACEMENT_ICP,
    anchor_diagonal=None,
    collision_points=None,
    anchor_points=None,
    object_grid=None,
) -> OptimizationTrace:
    """Anneal the collision weight while re-matching guidance correspondences each stage.

    ``collision_points`` (default: ``remain_points``) are the object-frame
    points the penalty is evaluated on.  Passing interior samples as well as
    surface samples stops the optimizer from resolving a collision by
    swallowing the anchor whole.  Giving ``anchor_points`` (world frame) and
    ``object_grid`` (the object's field in its own frame) also penalizes
    anchor points inside the object, which closes that loophole.

    Every stage first takes the better (under the stage objective) of the
    current pose and the closed-form similarity fit to the stage's
    correspondences, then runs ``inner_steps`` line-searched descent steps.

    If the last stage still penetrates deeper than the margin, up to
    ``ESCAPE_TRIES`` restarts translate ``init`` out of the anchor and anneal
    again from stage 1; the least penetrating run is returned.
    """
    src = _pts(remain_points)
    gd = _pts(guidance_points)
    col_pts = src if collision_points is None else _pts(collision_points)
    eps = params.margin(anchor_diagonal)
    if (anchor_points is None) != (object_grid is None):
        raise ValueError("anchor_points and object_grid go together")
    reverse = None if anchor_points is None else (_pts(anchor_points), object_grid)
    nn = NearestNeighbors(gd)
    run = (src, gd, nn, col_pts, grid, reverse, params, icp_params, eps)
    trace = _anneal(run, init, 0)
    # A deep start can wedge the object in a stationary point of the penalty.
    # Back the initial pose out of the anchor and anneal again, skipping the
    # beta = 0 stage that would pull it straight back in.
    tries = 0
    while trace.final_max_penetration >= eps and tries < ESCAPE_TRIES:
        d = _escape_direction(init, col_pts, grid, reverse, eps, tries)
        if d is None:
            break
        tries += 1
        start = _retreat(init, d, col_pts, grid, reverse, eps)
        retry = _anneal(run, start, 1)
        retry.restarts = tries
        if retry.final_max_penetration < trace.final_max_penetration:
            trace = retry
    log.debug("placement: %d stages, depth %.3g (eps %.3g)", len(trace.records), trace.final_max_penetration, eps)
    return trace


def _anneal(run, init, k0) -> OptimizationTrace:
    """Stages ``k0 .. k_max - 1`` of the annealing schedule from ``init``."""
    src, gd, nn, col_pts, grid, reverse, params, icp_params, eps = run
    trace = OptimizationTrace(epsilon=eps)
    t = init
    step = params.initial_step
    prev_total = None
    stall = 0
    for k in range(k0, params.k_max):
        beta = beta_schedule(k, params.k_max, params.beta_max)
        corr = find_correspondences(t.apply(src), gd, icp_params, nn)
        obj = _StageObjective(src[corr.source_idx], gd[corr.target_idx], col_pts, grid, params, beta, eps, reverse)
        f0 = obj.value(t)
        if not math.isfinite(f0):
            raise DivergedError(f"objective became {f0} at stage {k}")
        if params.inner_steps > 0:
            try:
                fit = umeyama_solve(obj.src, obj.tgt)
            except DegenerateConfigurationError:
                fit = None
            if fit is not None and obj.value(fit) < f0:
                t = fit
            t, step = _descend(obj, t, params, step, trace, k)
        align, col, total = obj.terms(t)
        phi = grid.value(t.apply(col_pts))
        if beta == 0.0:
            col = _hinge(phi, eps, params.lam)[0]
        depth = float(max(0.0, -phi.min()))
        if reverse is not None:
            rv, rphi = _reverse_terms(reverse[1], reverse[0], t, eps, params.lam)
            if beta == 0.0:
                col += rv
            depth = max(depth, float(-rphi.min()))
        trace.records.append(StageRecord(k, beta, align, col, total, depth))
        if prev_total is not None and abs(prev_total - total) <= params.convergence_tol * max(abs(prev_total), abs(total), 1e-300):
            stall += 1
        else:
            stall = 0
        prev_total = total
        if stall >= STALL_STAGES and depth < eps:
            trace.converged = True
            break
    trace.transform = t
    return trace


def _clearance(t, col_pts, grid, reverse):
    """Smallest signed distance between the object at ``t`` and the anchor, both ways."""
    phi = float(grid.value(t.apply(col_pts)).min())
    if reverse is not None:
        anchor_pts, obj_grid = reverse
        x = (anchor_pts - t.translation) @ t.rotation / t.scale
        phi = min(phi, t.scale * float(obj_grid.value(x).min()))
    return phi


def _escape_direction(t, col_pts, grid, reverse, eps, attempt):
    """Unit world direction that takes the object out of the anchor.

    The first attempt follows the mean outward field gradient at the
    object's penetrating points (plus the inward object gradient at anchor
    points inside it); the second moves the object's centroid away from the
    anchor points' centroid.
    """
    q = t.apply(col_pts)
    if attempt == 0:
        phi, dphi = grid.query(q)
        d = dphi[phi < eps].sum(axis=0)
        if reverse is not None:
            anchor_pts, obj_grid = reverse
            x = (anchor_pts - t.translation) @ t.rotation / t.scale
            Phi, dPhi = obj_grid.query(x)
            d = d - (dPhi[t.scale * Phi < eps] @ t.rotation.T).sum(axis=0)
    elif reverse is not None:
        d = q.mean(axis=0) - reverse[0].mean(axis=0)
    else:
        return None
    n = float(np.linalg.norm(d))
    return d / n if n > 0 else None


def _retreat(t, d, col_pts, grid, reverse, eps):
    """Translate ``t`` along ``d`` in small steps until the object clears the anchor by ``eps``."""
    q = t.apply(col_pts)
    radius = float(np.sqrt(np.einsum("ij,ij->i", q - q.mean(axis=0), q - q.mean(axis=0)).max())) or 1.0
    step = ESCAPE_STEP * radius
    for i in range(1, ESCAPE_MAX_STEPS + 1):
        cand = SimilarityTransform(t.scale, t.rotation, t.translation + i * step * d)
        if _clearance(cand, col_pts, grid, reverse) >= eps:
            return cand
    return cand
