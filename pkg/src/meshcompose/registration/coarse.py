"""Coarse global registration.

The default registrar matches fast point-feature histograms (FPFH) and runs
sample consensus over 3-correspondence similarity hypotheses.  Registrars are
looked up by name so an external process can stand in for it.
"""

from __future__ import annotations

import itertools
import logging
import shlex
import subprocess
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .._random import rng
from ..errors import MeshComposeError, RegistrationFailedError
from ..geometry.mesh import PointCloud
from ..geometry.transform import SimilarityTransform
from .icp import IcpParams, scale_aware_icp

log = logging.getLogger(__name__)

N_BINS = 11
MIN_POINTS = 100
LOCAL_POINTS = 500
SCORE_FRACTION = 0.01
FINAL_ICP = IcpParams(max_iterations=50, convergence_tol=1e-6, trim_fraction=0.1, match_from="target")
LOCAL_ICP = IcpParams(max_iterations=10, convergence_tol=1e-5, trim_fraction=0.1, match_from="target")


@dataclass(frozen=True)
class CoarseResult:
    transform: SimilarityTransform
    inliers: int  # correspondence inliers of the winning hypothesis
    inlier_ratio: float  # fraction of the partial cloud's points with a counterpart within the threshold
    n_correspondences: int


def _diag(p):
    return float(np.linalg.norm(p.max(axis=0) - p.min(axis=0)))


def estimate_normals(points, radius):
    """PCA normals, flipped to point away from the centroid."""
    tree = cKDTree(points)
    _, nbr = tree.query(points, k=min(16, len(points)))
    nbrs = points[nbr]
    c = nbrs - nbrs.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", c, c)
    _, vecs = np.linalg.eigh(cov)
    n = vecs[:, :, 0]
    out = points - points.mean(axis=0)
    flip = np.einsum("ij,ij->i", n, out) < 0
    n[flip] *= -1
    return n


def fpfh(points, normals, radius):
    """Fast point-feature histograms, (n, 33), each row summing to 1 (or 0 if isolated)."""
    n = len(points)
    tree = cKDTree(points)
    pairs = tree.query_pairs(radius, output_type="ndarray")
    if len(pairs):
        pairs = pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]
    i = np.concatenate([pairs[:, 0], pairs[:, 1]]) if len(pairs) else np.zeros(0, np.int64)
    j = np.concatenate([pairs[:, 1], pairs[:, 0]]) if len(pairs) else np.zeros(0, np.int64)

    d = points[j] - points[i]
    dist = np.linalg.norm(d, axis=1)
    dist = np.where(dist > 0, dist, 1.0)
    dh = d / dist[:, None]
    ns, nt = normals[i], normals[j]
    u = ns
    v = np.cross(u, dh)
    vn = np.linalg.norm(v, axis=1, keepdims=True)
    v = np.divide(v, vn, out=np.zeros_like(v), where=vn > 1e-12)
    w = np.cross(u, v)
    alpha = np.einsum("ij,ij->i", v, nt)
    phi = np.einsum("ij,ij->i", u, dh)
    theta = np.arctan2(np.einsum("ij,ij->i", w, nt), np.einsum("ij,ij->i", u, nt))

    def bins(x, lo, hi):
        return np.clip(((x - lo) / (hi - lo) * N_BINS).astype(np.int64), 0, N_BINS - 1)

    spfh = np.zeros((n, 3 * N_BINS))
    np.add.at(spfh, (i, bins(alpha, -1.0, 1.0)), 1.0)
    np.add.at(spfh, (i, N_BINS + bins(phi, -1.0, 1.0)), 1.0)
    np.add.at(spfh, (i, 2 * N_BINS + bins(theta, -np.pi, np.pi)), 1.0)
    k = np.bincount(i, minlength=n).astype(np.float64)
    spfh /= np.maximum(k, 1.0)[:, None]

    # weighted neighbour sum: sum_j spfh[j] / dist_ij, averaged over k
    out = spfh.copy()
    contrib = np.zeros_like(spfh)
    np.add.at(contrib, i, spfh[j] / dist[:, None])
    out += contrib / np.maximum(k, 1.0)[:, None]
    s = out.sum(axis=1, keepdims=True)
    return np.divide(out, s, out=np.zeros_like(out), where=s > 0)


def _similarity_batch(A, B):
    """Least-squares (s, R, t) mapping each 3-point set A[b] onto B[b]."""
    ca = A.mean(axis=1, keepdims=True)
    cb = B.mean(axis=1, keepdims=True)
    a, b = A - ca, B - cb
    H = np.einsum("bki,bkj->bij", b, a)
    U, D, Vt = np.linalg.svd(H)
    sign = np.where(np.linalg.det(U) * np.linalg.det(Vt) < 0, -1.0, 1.0)
    U[:, :, 2] *= sign[:, None]
    R = U @ Vt
    var_a = np.einsum("bki,bki->b", a, a)
    s = (D[:, 0] + D[:, 1] + sign * D[:, 2]) / var_a
    t = cb[:, 0] - s[:, None] * np.einsum("bij,bj->bi", R, ca[:, 0])
    return s, R, t


def _octahedral():
    out = []
    for perm in itertools.permutations(range(3)):
        for signs in itertools.product((1.0, -1.0), repeat=3):
            P = np.zeros((3, 3))
            P[np.arange(3), perm] = signs
            if np.linalg.det(P) > 0:
                out.append(P)
    return out


_OCTAHEDRAL = _octahedral()


def _axis_candidates(src, tgt):
    """The 24 rotations taking the principal axes of src onto those of tgt."""
    ms, mt = src.mean(axis=0), tgt.mean(axis=0)
    _, _, Vs = np.linalg.svd(src - ms, full_matrices=False)
    _, _, Vt = np.linalg.svd(tgt - mt, full_matrices=False)
    for P in _OCTAHEDRAL:
        R = Vt.T @ P @ Vs
        if np.linalg.det(R) < 0:
            R = Vt.T @ (P * [1.0, 1.0, -1.0]) @ Vs
        yield SimilarityTransform(1.0, R, mt - R @ ms)


class PpfRansacRegistrar:
    """FPFH descriptor matching + sample consensus over 3-point hypotheses.

    Keypoints are drawn from the target, which may be partial, and matched to
    the closest source descriptor.  Each hypothesis is a 3-point similarity
    whose scale may differ from the hint by up to ``scale_slack``: the OBB
    hint is biased whenever the target only shows part of the object.
    With ``partial_side="source"`` the roles are swapped internally, for
    when it is the source that is incomplete.
    """

    name = "ppf-ransac"

    def __init__(
        self,
        radius_fraction=0.05,
        iterations=50_000,
        inlier_fraction=0.025,
        min_inliers=10,
        max_keypoints=1000,
        edge_tolerance=0.1,
        scale_slack=1.5,
        rescore_top=32,
        final_candidates=4,
        partial_side="target",
    ):
        if partial_side not in ("target", "source"):
            raise ValueError("partial_side must be 'target' or 'source'")
        self.partial_side = partial_side
        self.radius_fraction = radius_fraction
        self.iterations = iterations
        self.inlier_fraction = inlier_fraction
        self.min_inliers = min_inliers
        self.max_keypoints = max_keypoints
        self.edge_tolerance = edge_tolerance
        self.scale_slack = scale_slack
        self.rescore_top = rescore_top
        self.final_candidates = final_candidates

    def register(self, source: PointCloud, target: PointCloud, scale_hint: float, seed: int) -> CoarseResult:
        if self.partial_side == "source":
            res = self._register(target, source, 1.0 / scale_hint, seed)
            return CoarseResult(res.transform.inverse(), res.inliers, res.inlier_ratio, res.n_correspondences)
        return self._register(source, target, scale_hint, seed)

    def _register(self, source: PointCloud, target: PointCloud, scale_hint: float, seed: int) -> CoarseResult:
        if len(source) < MIN_POINTS or len(target) < MIN_POINTS:
            raise RegistrationFailedError(f"coarse registration needs at least {MIN_POINTS} points per cloud")
        g = rng(seed, 0xC0A5)
        src = scale_hint * source.points
        tgt = target.points
        diag = _diag(tgt)
        radius = self.radius_fraction * diag
        thresh = self.inlier_fraction * diag
        ns = source.normals if source.normals is not None else estimate_normals(src, radius)
        nt = target.normals if target.normals is not None else estimate_normals(tgt, radius)
        fs = fpfh(src, ns, radius)
        ft = fpfh(tgt, nt, radius)

        kp = np.arange(len(tgt))
        if len(kp) > self.max_keypoints:
            kp = np.sort(g.choice(len(tgt), self.max_keypoints, replace=False))
        _, match = cKDTree(fs).query(ft[kp], k=1)
        cs, ct = src[match], tgt[kp]
        m = len(kp)

        samples = g.integers(0, m, size=(self.iterations, 3))
        ok = (samples[:, 0] != samples[:, 1]) & (samples[:, 1] != samples[:, 2]) & (samples[:, 0] != samples[:, 2])
        A, B = cs[samples], ct[samples]
        ratios = []
        for a, b in ((0, 1), (1, 2), (0, 2)):
            la = np.linalg.norm(A[:, a] - A[:, b], axis=1)
            lb = np.linalg.norm(B[:, a] - B[:, b], axis=1)
            ok &= np.minimum(la, lb) > thresh
            ratios.append(lb / np.maximum(la, 1e-300))
        ratios = np.stack(ratios, axis=1)
        # the three edges must agree on one scale, and it must stay near the hint
        ok &= ratios.max(axis=1) <= (1.0 + self.edge_tolerance) * ratios.min(axis=1)
        mid = np.exp(np.log(np.maximum(ratios, 1e-300)).mean(axis=1))
        ok &= (mid <= self.scale_slack) & (mid >= 1.0 / self.scale_slack)
        area = np.linalg.norm(np.cross(B[:, 1] - B[:, 0], B[:, 2] - B[:, 0]), axis=1)
        ok &= area > thresh * thresh
        cand = np.nonzero(ok)[0]
        if len(cand) == 0:
            raise RegistrationFailedError("no geometrically consistent correspondence triplet")
        S, R, t = _similarity_batch(A[cand], B[cand])

        counts = np.empty(len(cand), np.int64)
        t2 = thresh * thresh
        for lo in range(0, len(cand), 1024):
            hi = min(lo + 1024, len(cand))
            moved = S[lo:hi, None, None] * np.einsum("bij,nj->bni", R[lo:hi], cs) + t[lo:hi, None, :]
            r = moved - ct[None]
            counts[lo:hi] = (np.einsum("bni,bni->bn", r, r) <= t2).sum(axis=1)
        best_count = int(counts.max())
        if best_count < self.min_inliers:
            raise RegistrationFailedError(f"best hypothesis has {best_count} inliers (< {self.min_inliers})")

        # polish the strongest hypotheses with a few ICP rounds on subsamples,
        # then keep the one explaining the most of the target
        top = np.argsort(-counts, kind="stable")[: self.rescore_top]
        src_sub = src if len(src) <= LOCAL_POINTS else src[np.sort(g.choice(len(src), LOCAL_POINTS, replace=False))]
        probe = tgt if len(tgt) <= LOCAL_POINTS else tgt[np.sort(g.choice(len(tgt), LOCAL_POINTS, replace=False))]
        # principal-axis alignments join the pool; they rescue cases where
        # descriptor matches on a partial target favour a symmetric mistake
        pool = [(int(counts[h]), SimilarityTransform(S[h], R[h], t[h])) for h in top]
        for T_a in _axis_candidates(src, tgt):
            r = T_a.apply(cs) - ct
            pool.append((int((np.einsum("ni,ni->n", r, r) <= t2).sum()), T_a))
        def score(T_h):
            d, _ = cKDTree(T_h.apply(src)).query(probe, k=1, distance_upper_bound=thresh)
            return float(np.mean(np.isfinite(d))), float(np.mean(d <= SCORE_FRACTION * diag))

        refined = []
        for n_in, T_h in pool:
            try:
                T_h = scale_aware_icp(src_sub, probe, T_h, LOCAL_ICP).transform
            except MeshComposeError:
                pass
            refined.append((score(T_h), n_in, T_h))
        refined.sort(key=lambda r: r[0], reverse=True)
        # the few best run to convergence on the full clouds before the final pick
        best = None
        for _, n_in, T_h in refined[: self.final_candidates]:
            try:
                T_h = scale_aware_icp(src, tgt, T_h, FINAL_ICP).transform
            except MeshComposeError:
                pass
            sc = score(T_h)
            if best is None or sc > best[0]:
                best = (sc, n_in, T_h)
        (frac, _), n_in, T_h = best
        T = SimilarityTransform(scale_hint * T_h.scale, T_h.rotation, T_h.translation)
        log.debug("coarse: %d/%d hypotheses valid, best %d inliers, coverage %.3f", len(cand), self.iterations, n_in, frac)
        return CoarseResult(T, n_in, frac, m)


class ExternalRegistrar:
    """Runs ``command``; stdin gets both clouds, stdout returns ``[R|t]`` and a scale.

    Input: a line with the source count, that many ``x y z`` lines (source
    already multiplied by the scale hint), then the same for the target.
    Output: three lines of four numbers (the 3x4 rigid matrix) followed by a
    line holding a scale factor applied on top of the hint.
    """

    def __init__(self, command, timeout=600.0):
        self.command = command
        self.timeout = timeout
        self.name = f"external:{command}"

    def register(self, source: PointCloud, target: PointCloud, scale_hint: float, seed: int) -> CoarseResult:
        lines = [str(len(source))]
        lines += ["%.17g %.17g %.17g" % tuple(p) for p in scale_hint * source.points]
        lines.append(str(len(target)))
        lines += ["%.17g %.17g %.17g" % tuple(p) for p in target.points]
        try:
            proc = subprocess.run(
                shlex.split(self.command),
                input="\n".join(lines) + "\n",
                capture_output=True,
                text=True,
                timeout=self.timeout,
            )
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise RegistrationFailedError(f"external registrar failed to run: {exc}") from exc
        if proc.returncode != 0:
            raise RegistrationFailedError(f"external registrar exited with {proc.returncode}: {proc.stderr.strip()}")
        try:
            vals = [float(x) for x in proc.stdout.split()]
            M = np.array(vals[:12]).reshape(3, 4)
            extra = vals[12] if len(vals) > 12 else 1.0
            T = SimilarityTransform(scale_hint * extra, M[:, :3], M[:, 3])
        except (ValueError, IndexError) as exc:
            raise RegistrationFailedError(f"malformed external registrar output: {exc}") from exc
        return CoarseResult(T, len(source), 1.0, len(source))


def get_registrar(name="ppf-ransac"):
    if not isinstance(name, str):
        return name
    if name == "ppf-ransac":
        return PpfRansacRegistrar()
    if name.startswith("external:"):
        return ExternalRegistrar(name[len("external:"):])
    raise ValueError(f"unknown registrar {name!r}")


def coarse_global_register(source: PointCloud, target: PointCloud, scale_hint: float, seed: int, registrar="ppf-ransac") -> SimilarityTransform:
    return get_registrar(registrar).register(source, target, scale_hint, seed).transform
