import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from meshcompose.errors import DegenerateMeshError
from meshcompose.geometry import SimilarityTransform, TriangleMesh
from meshcompose.geometry.primitives import box, icosphere
from meshcompose.sdf import (
    SdfGrid,
    TransformedSdf,
    UnionSdf,
    WatertightnessWarning,
    bake_sdf,
    load_sdf,
    max_penetration_depth,
    point_inside,
    points_inside,
    query,
    save_sdf,
)


@pytest.fixture(scope="module")
def sphere_grid():
    return bake_sdf(icosphere(4), 64)


@pytest.fixture(scope="module")
def cube_grid():
    return bake_sdf(box(), 64)


@pytest.fixture(scope="module")
def slab_grid():
    return bake_sdf(box(size=(1.0, 0.6, 0.4)), 32)


def test_sphere_values(sphere_grid):
    h = sphere_grid.spacing
    assert query(sphere_grid, [0, 0, 0])[0] == pytest.approx(-1.0, abs=1.5 * h)
    assert query(sphere_grid, [1.5, 0, 0])[0] == pytest.approx(0.5, abs=1.5 * h)


def test_cube_center(cube_grid):
    assert query(cube_grid, [0, 0, 0])[0] == pytest.approx(-0.5, abs=1.5 * cube_grid.spacing)


def test_zero_area_mesh():
    with pytest.raises(DegenerateMeshError):
        bake_sdf(TriangleMesh([[0, 0, 0], [1, 0, 0], [2, 0, 0]], [[0, 1, 2]]), 16)


def test_lattice_point_returns_stored_value(cube_grid):
    for ijk in [(0, 0, 0), (10, 20, 30), tuple(d - 1 for d in cube_grid.dims)]:
        v, _ = query(cube_grid, cube_grid.lattice_point(*ijk))
        assert v == cube_grid.volume[ijk]


def test_sphere_gradient(sphere_grid):
    v, g = query(sphere_grid, [0.5, 0, 0])
    assert v == pytest.approx(-0.5, abs=0.05)
    np.testing.assert_allclose(g, [1, 0, 0], atol=0.05)


def test_far_outside_is_at_least_box_distance(cube_grid):
    top = cube_grid.upper
    for d in (0.5, 3.0, 100.0):
        p = np.array([top[0] + d, 0.0, 0.0])
        v, g = query(cube_grid, p)
        assert v >= d
        np.testing.assert_allclose(g, [1, 0, 0])


def test_inside_predicates(cube_grid):
    assert point_inside(cube_grid, [0, 0, 0])
    assert not point_inside(cube_grid, [1.0, 0, 0])
    np.testing.assert_array_equal(points_inside(cube_grid, [[0, 0, 0], [1, 0, 0]]), [True, False])


def test_zero_value_is_not_inside():
    grid = SdfGrid(np.zeros(3), 1.0, (2, 2, 2), np.zeros(8))
    assert not point_inside(grid, [0.5, 0.5, 0.5])


def _cell_interior_points(grid, n, g):
    # uniform in the box, kept only if at least a quarter cell from every face
    p = g.uniform(grid.origin, grid.upper, size=(4 * n, 3))
    f = (p - grid.origin) / grid.spacing
    frac = f - np.floor(f)
    keep = np.all((frac >= 0.25) & (frac <= 0.75), axis=1)
    return p[keep][:n]


def _fd_gradient(grid, p, h):
    out = np.empty_like(p)
    for a in range(3):
        e = np.zeros(3)
        e[a] = h
        out[:, a] = (grid.value(p + e) - grid.value(p - e)) / (2 * h)
    return out


def test_gradient_matches_central_differences(sphere_grid):
    p = _cell_interior_points(sphere_grid, 2000, np.random.default_rng(0))
    _, g = sphere_grid.query(p)
    fd = _fd_gradient(sphere_grid, p, sphere_grid.spacing / 10)
    err = np.linalg.norm(g - fd, axis=1) / np.maximum(np.linalg.norm(fd, axis=1), 1e-12)
    assert err.max() < 1e-3


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_value_is_one_lipschitz(slab_grid, seed):
    # a signed distance changes by at most the distance moved (plus grid error)
    grid = slab_grid
    g = np.random.default_rng(seed)
    a = g.uniform(grid.origin, grid.upper, size=(100, 3))
    b = a + g.normal(size=(100, 3)) * 0.2
    dv = np.abs(grid.value(a) - grid.value(b))
    assert np.all(dv <= np.linalg.norm(a - b, axis=1) + 3 * grid.spacing)


def test_round_trip(tmp_path, cube_grid):
    path = tmp_path / "c.sdf"
    save_sdf(path, cube_grid)
    back = load_sdf(path)
    assert back.dims == cube_grid.dims and back.spacing == cube_grid.spacing
    np.testing.assert_array_equal(back.origin, cube_grid.origin)
    np.testing.assert_array_equal(back.values, cube_grid.values.astype(np.float32))


def test_bad_file(tmp_path):
    p = tmp_path / "x.sdf"
    p.write_bytes(b"nope" + bytes(60))
    with pytest.raises(ValueError):
        load_sdf(p)


def test_union_takes_minimum(cube_grid):
    shifted = bake_sdf(box().transformed(SimilarityTransform(translation=[2.0, 0, 0])), 32)
    u = UnionSdf([cube_grid, shifted])
    assert u.value([[0, 0, 0]])[0] == pytest.approx(cube_grid.value([[0, 0, 0]])[0])
    assert u.value([[2, 0, 0]])[0] == pytest.approx(shifted.value([[2, 0, 0]])[0])


def test_transformed_field_matches_rebaked():
    mesh = box(size=(1.0, 0.5, 0.3))
    t = SimilarityTransform(1.7, Rotation.from_rotvec([0.3, -0.5, 0.8]).as_matrix(), [0.4, 1.0, -2.0])
    moved = TransformedSdf(bake_sdf(mesh, 64), t)
    direct = bake_sdf(mesh.transformed(t), 64)
    p = np.random.default_rng(1).uniform(direct.origin, direct.upper, size=(2000, 3))
    # outside its own box the moved grid only bounds the distance from below
    local = t.inverse().apply(p)
    p = p[np.all((local > moved.grid.origin) & (local < moved.grid.upper), axis=1)]
    tol = 1.5 * max(direct.spacing, 1.7 * moved.grid.spacing)
    np.testing.assert_allclose(moved.value(p), direct.value(p), atol=tol)


def test_penetration_depth(cube_grid):
    assert max_penetration_depth(cube_grid, np.array([[2.0, 0, 0], [0, 3.0, 0]])) == 0.0
    assert max_penetration_depth(cube_grid, np.zeros((1, 3))) == pytest.approx(0.5, abs=1.5 * cube_grid.spacing)
    assert max_penetration_depth(cube_grid, np.zeros((0, 3))) == 0.0


def test_open_mesh_warns():
    m = box()
    open_box = TriangleMesh(m.vertices, m.faces[2:])
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        bake_sdf(open_box, 32)
    assert any(issubclass(x.category, WatertightnessWarning) for x in w)


def test_closed_mesh_does_not_warn():
    with warnings.catch_warnings():
        warnings.simplefilter("error", WatertightnessWarning)
        bake_sdf(icosphere(2), 32)
