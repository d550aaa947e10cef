import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from meshcompose.collision import (
    CollisionParams,
    PoseDelta,
    _hinge,
    _reverse_terms,
    _escape_direction,
    _retreat,
    _StageObjective,
    beta_schedule,
    collision_loss,
    composition_objective,
    optimize_placement,
)
from meshcompose.errors import LengthMismatchError, OutOfRangeError
from meshcompose.geometry import SimilarityTransform, sample_surface
from meshcompose.geometry.bvh import sample_interior
from meshcompose.geometry.primitives import box, icosphere
from meshcompose.registration import IcpParams, scale_aware_icp
from meshcompose.sdf import SdfGrid, bake_sdf

from .conftest import chamfer_rmse, clear_of_cell_faces, fd_pose_gradient


def _const_grid(c):
    # unit cell over [0, 1]^3 holding c everywhere
    return SdfGrid(np.zeros(3), 1.0, (2, 2, 2), np.full(8, float(c)))


@pytest.fixture(scope="module")
def sphere_grid():
    return bake_sdf(icosphere(3), 32)


@pytest.fixture(scope="module")
def cube_grid():
    return bake_sdf(box(), 32)


# --- penalty ----------------------------------------------------------------------


def test_inactive_hinges():
    v, g = collision_loss(_const_grid(0.5), [[0.5, 0.5, 0.5]], SimilarityTransform(), 0.1, 0.003)
    assert v == 0.0
    np.testing.assert_array_equal(g.as_vector(), 0)


@pytest.mark.parametrize("d", [0.05, 0.3])
def test_penetrating_point(d):
    eps, lam = 0.1, 0.003
    far = [[50.0, 0, 0], [0, -40.0, 0]]  # outside the box, far beyond eps
    v, _ = collision_loss(_const_grid(-d), [[0.5, 0.5, 0.5]] + far, SimilarityTransform(), eps, lam)
    assert v == pytest.approx(d * d + lam * (eps + d), rel=1e-12)


def test_soft_zone_point():
    eps, lam = 0.1, 0.003
    v, _ = collision_loss(_const_grid(eps / 2), [[0.5, 0.5, 0.5]], SimilarityTransform(), eps, lam)
    assert v == pytest.approx(lam * eps / 2, rel=1e-12)


def test_hinge_subgradient_at_kinks():
    _, dval, _ = _hinge(np.array([0.0, 0.1]), 0.1, 0.5)
    # phi = 0 sits inside the soft zone only; phi = eps is on neither side
    np.testing.assert_array_equal(dval, [-0.5, 0.0])


# --- schedule -----------------------------------------------------------------------


def test_beta_schedule():
    assert beta_schedule(0, 100, 3.0) == 0.0
    assert beta_schedule(100, 100, 3.0) == 3.0
    assert beta_schedule(50, 100, 3.0) == 1.5
    for k in (-1, 101):
        with pytest.raises(OutOfRangeError):
            beta_schedule(k, 100, 3.0)


# --- objective -------------------------------------------------------------------------


def test_beta_zero_is_alignment(np_rng, sphere_grid):
    p = np_rng.normal(size=(30, 3))
    q = p + np_rng.normal(size=(30, 3)) * 0.1
    t = SimilarityTransform(1.1, Rotation.from_rotvec([0.1, 0.2, 0.3]).as_matrix(), [0.1, 0, 0])
    r = t.apply(p) - q
    total = float(np.sum(r * r))
    for red, expect in (("sum", total), ("mean", total / 30)):
        v, _ = composition_objective(p, q, sphere_grid, t, CollisionParams(epsilon=0.1, align_reduction=red), 0.0)
        assert v == pytest.approx(expect, rel=1e-12)


def test_global_minimum(np_rng):
    p = np_rng.uniform(0.2, 0.8, size=(10, 3))
    v, g = composition_objective(p, p, _const_grid(1.0), SimilarityTransform(), CollisionParams(epsilon=0.1), 2.0)
    assert v == 0.0
    np.testing.assert_array_equal(g.as_vector(), 0)


def test_single_point_hand_value(cube_grid):
    # a lattice point, so the field value is the stored one
    ijk = (10, 12, 14)
    q = cube_grid.lattice_point(*ijk)
    phi = cube_grid.volume[ijk]
    assert phi < 0
    p = q - [0.01, 0.0, 0.0]  # identity pose moves p by nothing; q' is q
    target = q + [0.0, 0.02, 0.0]
    t = SimilarityTransform(translation=[0.01, 0.0, 0.0])
    eps, lam, beta = 0.05, 0.003, 1.7
    hand = 0.02**2 + beta * (phi * phi + lam * (eps - phi))
    v, _ = composition_objective([p], [target], cube_grid, t, CollisionParams(epsilon=eps, lam=lam, align_reduction="sum"), beta)
    assert abs(v - hand) < 1e-9


def test_length_mismatch(sphere_grid):
    with pytest.raises(LengthMismatchError):
        composition_objective(np.zeros((3, 3)), np.zeros((4, 3)), sphere_grid, SimilarityTransform(), CollisionParams(epsilon=0.1), 1.0)


def _random_straddling_pose(g, grid, p, eps, tries=200_000):
    """A pose that puts ``p`` across the sphere surface with every point clear of kinks and cell faces."""
    for _ in range(tries):
        d = g.normal(size=3)
        t = SimilarityTransform(
            float(g.uniform(0.7, 1.5)),
            Rotation.from_quat(g.normal(size=4)).as_matrix(),
            d / np.linalg.norm(d) * g.uniform(0.8, 1.1),
        )
        q = t.apply(p)
        if not clear_of_cell_faces(grid, q):
            continue
        phi = grid.value(q)
        if np.min(np.abs(phi)) > 1e-3 and np.min(np.abs(phi - eps)) > 1e-3 and np.any(phi < 0):
            return t
    raise AssertionError("no valid pose found")


def test_objective_gradient_matches_fd(sphere_grid):
    g = np.random.default_rng(7)
    eps = 0.1
    params = CollisionParams(epsilon=eps, lam=0.3)
    for _ in range(25):
        p = g.normal(size=(3, 3)) * 0.15
        q_fixed = g.normal(size=(3, 3))
        t = _random_straddling_pose(g, sphere_grid, p, eps)
        c = t.apply(p).mean(axis=0)
        _, grad = composition_objective(p, q_fixed, sphere_grid, t, params, 1.3, pivot=c)
        fd = fd_pose_gradient(lambda s: composition_objective(p, q_fixed, sphere_grid, s, params, 1.3)[0], t, c)
        assert np.linalg.norm(grad.as_vector() - fd) <= 1e-3 * np.linalg.norm(fd)


def test_reverse_term_gradient_matches_fd(sphere_grid):
    # anchor points tested against the moving object's own field
    g = np.random.default_rng(8)
    eps, lam = 0.1, 0.3
    checked = 0
    while checked < 25:
        a = g.normal(size=(3, 3)) * 0.3
        d = g.normal(size=3)
        t = SimilarityTransform(float(g.uniform(0.7, 1.5)), Rotation.from_quat(g.normal(size=4)).as_matrix(), d / np.linalg.norm(d) * 0.9)
        x = t.inverse().apply(a)
        if not clear_of_cell_faces(sphere_grid, x):
            continue
        phi = t.scale * sphere_grid.value(x)
        if np.min(np.abs(phi)) < 1e-3 or np.min(np.abs(phi - eps)) < 1e-3 or not np.any(phi < 0):
            continue
        c = a.mean(axis=0) + g.normal(size=3) * 0.1
        _, _, grad, _ = _reverse_terms(sphere_grid, a, t, eps, lam, pivot=c)
        fd = fd_pose_gradient(lambda s: _reverse_terms(sphere_grid, a, s, eps, lam)[0], t, c)
        assert np.linalg.norm(grad - fd) <= 1e-3 * np.linalg.norm(fd)
        checked += 1


def test_stage_objective_with_reverse(sphere_grid):
    g = np.random.default_rng(9)
    params = CollisionParams(epsilon=0.1, lam=0.3)
    src = g.normal(size=(6, 3)) * 0.2
    tgt = g.normal(size=(6, 3))
    anchor = np.array([[0.95, 0.0, 0.0], [0.0, 1.02, 0.1]])
    checked = 0
    while checked < 20:
        t = SimilarityTransform(1.0, Rotation.from_quat(g.normal(size=4)).as_matrix(), [0.9, 0.2, 0.0] + g.normal(size=3) * 0.05)
        obj = _StageObjective(src, tgt, src, sphere_grid, params, 1.0, 0.1, reverse=(anchor, sphere_grid))
        c = t.apply(src).mean(axis=0)
        qs, xs = t.apply(src), t.inverse().apply(anchor)
        # a thin margin is enough for steps of 1e-5
        if not (clear_of_cell_faces(sphere_grid, qs, 0.01) and clear_of_cell_faces(sphere_grid, xs, 0.01)):
            continue
        grad, diag = obj.gradient(t, c)
        fd = fd_pose_gradient(obj.value, t, c)
        assert np.linalg.norm(grad - fd) <= 1e-3 * np.linalg.norm(fd)
        assert np.all(diag > 0)
        checked += 1


# --- pose updates --------------------------------------------------------------------------


def test_pose_delta_zero_is_identity():
    t = SimilarityTransform(1.3, Rotation.from_rotvec([0.2, 0, 0]).as_matrix(), [1, 2, 3])
    out = PoseDelta().apply(t, [0.5, 0.5, 0.5])
    assert out.scale == t.scale
    np.testing.assert_allclose(out.rotation, t.rotation)
    np.testing.assert_allclose(out.translation, t.translation)


def test_pose_delta_keeps_pivot_fixed_under_rotation():
    t = SimilarityTransform()
    c = np.array([1.0, 2.0, 3.0])
    out = PoseDelta(0.3, (0.1, -0.2, 0.4), (0, 0, 0)).apply(t, c)
    np.testing.assert_allclose(out.apply(c), c, atol=1e-12)


def test_pose_delta_rejects_large_rotation():
    with pytest.raises(ValueError):
        PoseDelta(0.0, (math.pi, 0.0, 0.0)).apply(SimilarityTransform(), np.zeros(3))


def test_params_validation_and_round_trip():
    for bad in ({"epsilon": -1.0}, {"lam": -1.0}, {"beta_max": -1.0}, {"k_max": 0}, {"inner_steps": -1}, {"align_reduction": "max"}):
        with pytest.raises(ValueError):
            CollisionParams(**bad)
    p = CollisionParams(epsilon=0.01, lam=0.1, k_max=7)
    assert CollisionParams.from_dict(p.to_dict()) == p
    assert "lambda" in p.to_dict()
    assert CollisionParams().margin(2.0) == pytest.approx(0.01)
    with pytest.raises(ValueError):
        CollisionParams().margin()


# --- optimizer -----------------------------------------------------------------------------


@pytest.fixture(scope="module")
def cubes():
    cube = box()
    src = sample_surface(cube, 2000, 1).points
    return cube, src, bake_sdf(cube, 64)


def test_loop_contract_no_steps(cubes):
    _, src, grid = cubes
    init = SimilarityTransform(1.0, np.eye(3), [3.0, 0, 0])
    tr = optimize_placement(src, src + [3.1, 0, 0], grid, init, CollisionParams(k_max=1, inner_steps=0), anchor_diagonal=math.sqrt(3))
    assert tr.transform is init
    assert len(tr.records) == 1 and tr.records[0].beta == 0.0


def test_far_placement_matches_icp(cubes):
    cube, src, grid = cubes
    truth = SimilarityTransform(1.2, Rotation.from_rotvec([0.1, 0.3, -0.2]).as_matrix(), [3.0, 0.5, 0])
    guide = truth.apply(sample_surface(cube, 2000, 2).points)
    init = SimilarityTransform(1.15, Rotation.from_rotvec([0.1, 0.25, -0.2]).as_matrix(), [3.02, 0.5, 0])
    icp = IcpParams(match_from="both")
    tr = optimize_placement(src, guide, grid, init, CollisionParams(k_max=30), icp_params=icp, anchor_diagonal=math.sqrt(3))
    ref = scale_aware_icp(src, guide, init, icp).transform
    np.testing.assert_allclose(tr.transform.rotation, ref.rotation, atol=1e-3)
    np.testing.assert_allclose(tr.transform.translation, ref.translation, atol=1e-3)
    assert tr.transform.scale == pytest.approx(ref.scale, abs=1e-3)
    assert all(r.col_term == 0.0 for r in tr.records)


def test_overlapping_cubes_are_separated(cubes):
    cube, src, grid = cubes
    # guidance overlaps the anchor cube by 30% of its volume
    shift = SimilarityTransform(translation=[0.7, 0, 0])
    guide = shift.apply(sample_surface(cube, 2000, 2).points)
    interior = sample_interior(cube, 1000, 3)
    diag = math.sqrt(3)
    params = CollisionParams()
    tr = optimize_placement(
        src, guide, grid, shift, params,
        anchor_diagonal=diag,
        collision_points=np.vstack([src, interior]),
        anchor_points=np.vstack([src, interior]),
        object_grid=grid,
    )
    eps = params.margin(diag)
    assert tr.final_max_penetration < eps
    # the guidance fits the initial pose exactly, so the residual is all growth
    assert chamfer_rmse(tr.transform.apply(src), guide) < 0.2
    # the line search never increases the stage objective
    by_stage = {}
    for k, _, f in tr.inner_objectives:
        by_stage.setdefault(k, []).append(f)
    for fs in by_stage.values():
        assert all(b <= a for a, b in zip(fs, fs[1:]))


def test_trace_betas_follow_schedule(cubes):
    cube, src, grid = cubes
    guide = src + [0.5, 0, 0]
    tr = optimize_placement(src, guide, grid, SimilarityTransform(translation=[0.5, 0, 0]), CollisionParams(k_max=20, inner_steps=2), anchor_diagonal=math.sqrt(3))
    assert len(tr.records) <= 20
    assert tr.betas == [beta_schedule(r.k, 20, 3.0) for r in tr.records]
    ks = [r.k for r in tr.records]
    assert ks == list(range(ks[0], ks[0] + len(ks)))


def test_trace_csv(tmp_path, cubes):
    _, src, grid = cubes
    tr = optimize_placement(src, src + [2.0, 0, 0], grid, SimilarityTransform(translation=[2.0, 0, 0]), CollisionParams(k_max=3, inner_steps=1), anchor_diagonal=1.0)
    path = tmp_path / "trace.csv"
    tr.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "k,beta,align_term,col_term,total,max_penetration"
    assert len(lines) == 1 + len(tr.records)


def test_reverse_inputs_go_together(cubes):
    _, src, grid = cubes
    with pytest.raises(ValueError):
        optimize_placement(src, src, grid, SimilarityTransform(), anchor_diagonal=1.0, anchor_points=src)


def test_retreat_clears_the_anchor(cubes):
    cube, src, grid = cubes
    interior = sample_interior(cube, 500, 4)
    pts = np.vstack([src, interior])
    reverse = (pts, grid)
    t = SimilarityTransform(translation=[0.6, 0.05, 0.0])
    d = _escape_direction(t, pts, grid, reverse, 0.01, 0)
    assert np.argmax(np.abs(d)) == 0 and d[0] > 0  # out through the +x face
    out = _retreat(t, d, pts, grid, reverse, 0.01)
    assert grid.value(out.apply(pts)).min() >= 0.01
    assert out.scale == t.scale and np.array_equal(out.rotation, t.rotation)
    # the second direction runs from the anchor points' centroid to the object's
    d2 = _escape_direction(t, pts, grid, reverse, 0.01, 1)
    np.testing.assert_allclose(d2, (t.apply(pts).mean(axis=0) - pts.mean(axis=0)) / np.linalg.norm(t.apply(pts).mean(axis=0) - pts.mean(axis=0)))
    assert _escape_direction(t, pts, grid, None, 0.01, 1) is None
