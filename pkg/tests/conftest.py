import warnings

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from meshcompose.geometry import SimilarityTransform
from meshcompose.geometry.primitives import box, icosphere


def random_similarity(g, s_range=(0.5, 2.0), t_scale=1.0):
    R = Rotation.from_quat(g.normal(size=4)).as_matrix()
    return SimilarityTransform(float(g.uniform(*s_range)), R, g.normal(size=3) * t_scale)


@pytest.fixture
def unit_cube():
    return box()


@pytest.fixture(scope="session")
def sphere4():
    return icosphere(4)


@pytest.fixture(autouse=True)
def _quiet_numba():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", module="numba")
        yield


@pytest.fixture
def np_rng():
    return np.random.default_rng(12345)


def fd_pose_gradient(f, t, pivot, h=1e-5):
    """Central differences of ``f(pose)`` over the 7 local pose coordinates about ``pivot``."""
    from meshcompose.collision import PoseDelta

    out = np.empty(7)
    for i in range(7):
        e = np.zeros(7)
        e[i] = h
        out[i] = (f(PoseDelta.from_vector(e).apply(t, pivot)) - f(PoseDelta.from_vector(-e).apply(t, pivot))) / (2 * h)
    return out


def clear_of_cell_faces(grid, q, margin=0.25):
    """True when every point is at least ``margin`` cells from any lattice plane, and inside the grid."""
    f = (np.asarray(q) - grid.origin) / grid.spacing
    frac = f - np.floor(f)
    inside = np.all((f > 0) & (f < np.array(grid.dims) - 1), axis=1)
    return bool(np.all(inside & np.all((frac >= margin) & (frac <= 1 - margin), axis=1)))


def chamfer_rmse(a, b):
    """Root mean square nearest-neighbour distance, pooled over both directions."""
    from scipy.spatial import cKDTree

    d1, _ = cKDTree(b).query(a)
    d2, _ = cKDTree(a).query(b)
    return float(np.sqrt(np.mean(np.concatenate([d1, d2]) ** 2)))


def small_params(seed=0, **collision):
    """Scene parameters cut down for fast tests."""
    from meshcompose.collision import CollisionParams
    from meshcompose.pipeline import SceneParams

    return SceneParams(
        seed=seed,
        sample_n=2000,
        interior_n=500,
        sdf_resolution=48,
        metric_samples=50_000,
        collision=CollisionParams(k_max=collision.pop("k_max", 20), **collision),
    )


def scene_at_poses(spec, transforms, anchor_id):
    """A ComposedScene holding the given poses, with its pairwise reports."""
    from meshcompose.geometry import load_mesh
    from meshcompose.pipeline import ComposedScene, PlacedObject
    from meshcompose.pipeline.compose import pairwise_reports

    ids = [o.id for o in spec.objects]
    paths = {o.id: str(spec.resolve(o.asset_mesh_path)) for o in spec.objects}
    meshes = [load_mesh(paths[i]).transformed(transforms[i]) for i in ids]
    anchor_diag = meshes[ids.index(anchor_id)].aabb.diagonal
    return ComposedScene(
        anchor_id=anchor_id,
        objects=[PlacedObject(i, paths[i], transforms[i]) for i in ids],
        pairwise=pairwise_reports(spec, ids, meshes),
        seed=spec.params.seed,
        epsilon=spec.params.collision.margin(anchor_diag),
    )


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
