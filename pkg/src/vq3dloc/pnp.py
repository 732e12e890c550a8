"""Camera pose from 2D-3D correspondences: P3P inside RANSAC, refined by
damped Gauss-Newton, plus a second pass bounded by temporal neighbors.

Correspondences are assumed undistorted; distortion coefficients on
:class:`CameraIntrinsics` are carried but never applied.
"""

from __future__ import annotations

import itertools
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import BehindCamera, DegenerateInput, NoConsensus, ValidationError
from .geometry import Pose, Rotation3, as_vec3
from .procrustes import collinearity_check
from .tables import FrameKey, PoseEntry, PoseTable, Provenance


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    distortion: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if not (self.fx > 0 and self.fy > 0):
            raise ValidationError("focal lengths must be positive")
        if not (0 <= self.cx <= self.width and 0 <= self.cy <= self.height):
            raise ValidationError("principal point outside the image")
        object.__setattr__(self, "distortion", tuple(float(d) for d in self.distortion))

    @property
    def matrix(self) -> NDArray[np.float64]:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def in_bounds(self, pixels: ArrayLike, margin: float = 0.1) -> NDArray[np.bool_]:
        px = np.atleast_2d(np.asarray(pixels, dtype=np.float64))
        mx, my = margin * self.width, margin * self.height
        return (
            (px[:, 0] >= -mx)
            & (px[:, 0] <= self.width + mx)
            & (px[:, 1] >= -my)
            & (px[:, 1] <= self.height + my)
        )


@dataclass(frozen=True)
class Correspondence2D3D:
    pixel: tuple[float, float]
    world_point: tuple[float, float, float]
    match_score: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.match_score <= 1.0:
            raise ValidationError("match_score must be in [0, 1]")


@dataclass(frozen=True, eq=False)
class Correspondences:
    """Array form of a list of :class:`Correspondence2D3D`."""

    pixels: NDArray[np.float64]
    world: NDArray[np.float64]
    scores: NDArray[np.float64]

    def __init__(self, pixels: ArrayLike, world: ArrayLike, scores: ArrayLike | None = None):
        px = np.array(pixels, dtype=np.float64).reshape(-1, 2)
        w = np.array(world, dtype=np.float64).reshape(-1, 3)
        if len(px) != len(w):
            raise ValidationError("pixel and world point counts differ")
        sc = np.ones(len(px)) if scores is None else np.array(scores, dtype=np.float64).ravel()
        if not (np.all(np.isfinite(px)) and np.all(np.isfinite(w))):
            raise ValidationError("non-finite correspondence")
        for a in (px, w, sc):
            a.setflags(write=False)
        object.__setattr__(self, "pixels", px)
        object.__setattr__(self, "world", w)
        object.__setattr__(self, "scores", sc)

    @classmethod
    def from_list(cls, corrs: Sequence[Correspondence2D3D]) -> Correspondences:
        if not corrs:
            return cls(np.zeros((0, 2)), np.zeros((0, 3)))
        return cls(
            [c.pixel for c in corrs], [c.world_point for c in corrs], [c.match_score for c in corrs]
        )

    def __len__(self) -> int:
        return len(self.pixels)

    def to_list(self) -> list[Correspondence2D3D]:
        return [
            Correspondence2D3D(tuple(p), tuple(x), float(s))
            for p, x, s in zip(self.pixels.tolist(), self.world.tolist(), self.scores.tolist())
        ]


def _as_correspondences(corrs) -> Correspondences:
    return corrs if isinstance(corrs, Correspondences) else Correspondences.from_list(list(corrs))


@dataclass(frozen=True)
class PnPConfig:
    max_iterations: int = 5000
    reprojection_threshold: float = 4.0
    min_inliers: int = 4
    rng_seed: int = 0
    temporal_window: int = 30
    temporal_translation_radius: float = 1.0
    temporal_rotation_limit: float = 0.5
    # The neighbor prior stands in for the fourth point of a minimal sample.
    temporal_min_inliers: int = 3
    confidence: float = 0.9999
    refine_iterations: int = 50

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise ValidationError("max_iterations must be positive")
        if self.min_inliers < 4:
            raise ValidationError("min_inliers must be at least 4")
        if self.temporal_min_inliers < 3:
            raise ValidationError("temporal_min_inliers must be at least 3")
        for name in (
            "reprojection_threshold",
            "temporal_translation_radius",
            "temporal_rotation_limit",
        ):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")
        if self.temporal_window < 0:
            raise ValidationError("temporal_window must be non-negative")


def project(pose: Pose, k: CameraIntrinsics, world_point: ArrayLike) -> NDArray[np.float64]:
    """Pinhole projection of one world point through a camera-to-world pose."""
    x, y, z = pose.world_to_camera_points(as_vec3(world_point)[None])[0]
    if z <= 0:
        raise BehindCamera(f"point has depth {z:.6g} in the camera frame")
    return np.array([k.fx * x / z + k.cx, k.fy * y / z + k.cy])


def _project_wc(
    r: NDArray[np.float64], t: NDArray[np.float64], k: CameraIntrinsics, pts: NDArray[np.float64]
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    xc = pts @ r.T + t
    z = xc[:, 2]
    safe = np.where(np.abs(z) < 1e-300, 1e-300, z)
    u = k.fx * xc[:, 0] / safe + k.cx
    v = k.fy * xc[:, 1] / safe + k.cy
    return np.stack([u, v], axis=1), z


def _reprojection_errors(r, t, k, c: Correspondences) -> NDArray[np.float64]:
    px, z = _project_wc(r, t, k, c.world)
    err = np.linalg.norm(px - c.pixels, axis=1)
    return np.where(z > 0, err, np.inf)


def _bearings(k: CameraIntrinsics, pixels: NDArray[np.float64]) -> NDArray[np.float64]:
    b = np.column_stack(
        [(pixels[:, 0] - k.cx) / k.fx, (pixels[:, 1] - k.cy) / k.fy, np.ones(len(pixels))]
    )
    return b / np.linalg.norm(b, axis=1, keepdims=True)


def _rigid_fit(src: NDArray[np.float64], dst: NDArray[np.float64]):
    """Rotation ``r`` and translation ``t`` with ``dst ~ r @ src + t`` (unweighted, no scale)."""
    ps, pd = src.mean(axis=0), dst.mean(axis=0)
    h = (src - ps).T @ (dst - pd)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T)) or 1.0
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return r, pd - r @ ps


def p3p(bearings: ArrayLike, world: ArrayLike) -> list[tuple[NDArray[np.float64], NDArray[np.float64]]]:
    """All world-to-camera solutions ``(R, t)`` for three bearing/point pairs.

    The unknown depths ``d_i`` along unit bearings are written as
    ``d2 = u d1`` and ``d3 = v d1``. The law of cosines on the three point
    distances gives two conics in ``(u, v)``; both are quadratic in ``u``
    with identical leading coefficient, so their resultant is a quartic in
    ``v`` and ``u`` follows linearly from their difference.
    """
    f = np.asarray(bearings, dtype=np.float64)
    x = np.asarray(world, dtype=np.float64)
    a2 = float(np.sum((x[1] - x[2]) ** 2))
    b2 = float(np.sum((x[0] - x[2]) ** 2))
    c2 = float(np.sum((x[0] - x[1]) ** 2))
    if min(a2, b2, c2) <= 0.0:
        return []
    ca = float(f[1] @ f[2])
    cb = float(f[0] @ f[2])
    cg = float(f[0] @ f[1])

    P = np.polynomial.Polynomial
    # E1: b2 u^2 - 2 b2 cg u + (b2 - c2 (1 + v^2 - 2 v cb)) = 0
    # E2: b2 u^2 - 2 b2 ca v u + ((b2 - a2) v^2 + 2 a2 cb v - a2) = 0
    a1 = P([b2])
    b1 = P([-2.0 * b2 * cg])
    c1 = P([b2 - c2, 2.0 * c2 * cb, -c2])
    a_2 = P([b2])
    b_2 = P([0.0, -2.0 * b2 * ca])
    c_2 = P([-a2, 2.0 * a2 * cb, b2 - a2])
    res = (a1 * c_2 - a_2 * c1) ** 2 - (a1 * b_2 - a_2 * b1) * (b1 * c_2 - b_2 * c1)
    coef = res.coef
    scale = np.max(np.abs(coef))
    if scale == 0.0:
        return []
    roots = np.roots((coef / scale)[::-1])

    sols = []
    for root in roots:
        if abs(root.imag) > 1e-6 * max(1.0, abs(root.real)):
            continue
        v = float(root.real)
        if v <= 0:
            continue
        denom = float((b1 - b_2)(v))
        cands: list[float] = []
        if abs(denom) > 1e-12 * b2:
            cands.append(float((c_2 - c1)(v)) / denom)
        else:
            disc = (b1(v)) ** 2 - 4.0 * b2 * c1(v)
            if disc >= 0:
                sq = math.sqrt(disc)
                cands += [(-b1(v) + sq) / (2 * b2), (-b1(v) - sq) / (2 * b2)]
        for u in cands:
            if u <= 0:
                continue
            den = 1.0 + u * u - 2.0 * u * cg
            if den <= 0:
                continue
            d1 = math.sqrt(c2 / den)
            cam = np.stack([d1 * f[0], u * d1 * f[1], v * d1 * f[2]])
            r, t = _rigid_fit(x, cam)
            if np.all(np.isfinite(r)) and np.all(np.isfinite(t)):
                sols.append((r, t))
    return sols


def _skew(v: NDArray[np.float64]) -> NDArray[np.float64]:
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1], out[..., 0, 2] = -v[..., 2], v[..., 1]
    out[..., 1, 0], out[..., 1, 2] = v[..., 2], -v[..., 0]
    out[..., 2, 0], out[..., 2, 1] = -v[..., 1], v[..., 0]
    return out


def refine_pose(
    r: NDArray[np.float64],
    t: NDArray[np.float64],
    k: CameraIntrinsics,
    c: Correspondences,
    iterations: int = 50,
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Levenberg-damped Gauss-Newton on total squared reprojection error.

    Parameterized as ``x_cam = exp([w]) R x + t``; returns world-to-camera
    ``(R, t)``. Steps that raise the cost are rejected and the damping grows.
    """
    if len(c) < 3:
        return r, t

    def cost(rr, tt):
        px, z = _project_wc(rr, tt, k, c.world)
        if np.any(z <= 0):
            return np.inf
        return float(np.sum((px - c.pixels) ** 2))

    lam = 1e-3
    cur = cost(r, t)
    for _ in range(iterations):
        rx = c.world @ r.T
        xc = rx + t
        z = xc[:, 2]
        inv_z = 1.0 / z
        px = np.stack([k.fx * xc[:, 0] * inv_z + k.cx, k.fy * xc[:, 1] * inv_z + k.cy], axis=1)
        err = (px - c.pixels).ravel()
        n = len(c)
        dpi = np.zeros((n, 2, 3))
        dpi[:, 0, 0] = k.fx * inv_z
        dpi[:, 0, 2] = -k.fx * xc[:, 0] * inv_z**2
        dpi[:, 1, 1] = k.fy * inv_z
        dpi[:, 1, 2] = -k.fy * xc[:, 1] * inv_z**2
        dx = np.concatenate([-_skew(rx), np.broadcast_to(np.eye(3), (n, 3, 3))], axis=2)
        jac = np.einsum("nij,njk->nik", dpi, dx).reshape(2 * n, 6)
        jtj = jac.T @ jac
        g = jac.T @ err
        improved = False
        for _ in range(10):
            try:
                step = -np.linalg.solve(jtj + lam * np.diag(np.diag(jtj) + 1e-12), g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            r_new = Rotation3.from_rotvec(step[:3]).matrix @ r
            t_new = t + step[3:]
            new = cost(r_new, t_new)
            if new <= cur:
                improved = True
                small = np.linalg.norm(step) < 1e-14 * (1.0 + np.linalg.norm(t))
                r, t, cur = r_new, t_new, new
                lam = max(lam / 10.0, 1e-12)
                break
            lam *= 10.0
        if not improved or small or cur == 0.0:
            break
    return r, t


HypothesisFilter = Callable[[NDArray[np.float64], NDArray[np.float64]], float | None]


EXHAUSTIVE_LIMIT = 500


def _sample_indices(n: int, size: int, max_iter: int, rng: np.random.Generator):
    if math.comb(n, size) <= min(max_iter, EXHAUSTIVE_LIMIT):
        yield from itertools.combinations(range(n), size)
        return
    while True:
        yield tuple(int(i) for i in rng.choice(n, size=size, replace=False))


def _ransac(
    c: Correspondences,
    k: CameraIntrinsics,
    cfg: PnPConfig,
    min_inliers: int,
    sample_size: int,
    hypothesis_cost: HypothesisFilter | None,
) -> tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.bool_]]:
    n = len(c)
    if n < max(min_inliers, 3):
        raise NoConsensus(f"{n} correspondences cannot reach min_inliers={min_inliers}")
    if not collinearity_check(c.world, 1e-9):
        raise DegenerateInput("all 3D points are collinear")
    bear = _bearings(k, c.pixels)
    rng = np.random.default_rng(cfg.rng_seed)
    thr = cfg.reprojection_threshold
    exhaustive = math.comb(n, sample_size) <= min(cfg.max_iterations, EXHAUSTIVE_LIMIT)
    needed = cfg.max_iterations
    best_key = None
    best = None
    any_solvable = False
    for it, sample in enumerate(_sample_indices(n, sample_size, cfg.max_iterations, rng)):
        if it >= needed:
            break
        tri = np.array(sample[:3])
        if not collinearity_check(c.world[tri], 1e-9):
            continue
        any_solvable = True
        hyps = p3p(bear[tri], c.world[tri])
        if not hyps:
            continue
        if sample_size >= 4 and hypothesis_cost is None:
            j = sample[3]
            errs = [_reprojection_errors(r, t, k, _single(c, j))[0] for r, t in hyps]
            hyps = [hyps[int(np.argmin(errs))]]
        for r, t in hyps:
            prior = 0.0
            if hypothesis_cost is not None:
                p = hypothesis_cost(r, t)
                if p is None:
                    continue
                prior = p
            err = _reprojection_errors(r, t, k, c)
            mask = err < thr
            count = int(mask.sum())
            if count < 3:
                continue
            key = (-count, prior, float(err[mask].mean()))
            if best_key is None or key < best_key:
                best_key, best = key, (r, t, mask)
                if count == n:
                    needed = 0
                elif not exhaustive:
                    w = count / n
                    denom = math.log(max(1e-300, 1.0 - w**sample_size))
                    if denom < 0:
                        needed = min(needed, int(math.ceil(math.log(1 - cfg.confidence) / denom)))
                    else:
                        needed = 0
    if not any_solvable:
        raise DegenerateInput("every sampled triple was collinear in 3D")
    if best is None or int(best[2].sum()) < min_inliers:
        got = 0 if best is None else int(best[2].sum())
        raise NoConsensus(f"best hypothesis has {got} inliers, need {min_inliers}")

    r, t, mask = best
    for _ in range(5):
        idx = np.flatnonzero(mask)
        r2, t2 = refine_pose(r, t, k, _subset(c, idx), cfg.refine_iterations)
        if hypothesis_cost is not None and hypothesis_cost(r2, t2) is None:
            break
        new_mask = _reprojection_errors(r2, t2, k, c) < thr
        if int(new_mask.sum()) < int(mask.sum()):
            break
        r, t = r2, t2
        if np.array_equal(new_mask, mask):
            break
        mask = new_mask
    mask = _reprojection_errors(r, t, k, c) < thr
    if int(mask.sum()) < min_inliers:
        raise NoConsensus("consensus lost after refinement")
    return r, t, mask


def _single(c: Correspondences, j: int) -> Correspondences:
    return Correspondences(c.pixels[j : j + 1], c.world[j : j + 1])


def _subset(c: Correspondences, idx) -> Correspondences:
    return Correspondences(c.pixels[idx], c.world[idx], c.scores[idx])


def solve_pnp_ransac(
    corrs, k: CameraIntrinsics, cfg: PnPConfig = PnPConfig()
) -> tuple[Pose, NDArray[np.bool_]]:
    """Robust camera pose from 2D-3D matches.

    Samples four correspondences, solves P3P on three and keeps the solution
    that best reprojects the fourth. Problems small enough are enumerated
    exhaustively; otherwise sampling stops adaptively once ``confidence``
    is reached or after ``max_iterations``. The best consensus is refined
    on its inliers and re-scored.

    Args:
        corrs: ``Correspondences`` or a sequence of ``Correspondence2D3D``.
        k: Pinhole intrinsics; pixels must already be undistorted.
        cfg: Thresholds and seed.

    Returns:
        Camera-to-world pose and the inlier mask.
    """
    c = _as_correspondences(corrs)
    r, t, mask = _ransac(c, k, cfg, cfg.min_inliers, 4, None)
    return Pose.from_world_to_camera(r, t), mask


def _temporal_filter(anchor: Pose, cfg: PnPConfig) -> HypothesisFilter:
    def cost(r: NDArray[np.float64], t: NDArray[np.float64]) -> float | None:
        center = -(r.T @ t)
        dist = float(np.linalg.norm(center - anchor.translation))
        c_angle = (np.trace(anchor.rotation.matrix.T @ r.T) - 1.0) / 2.0
        angle = float(np.arccos(np.clip(c_angle, -1.0, 1.0)))
        if dist >= cfg.temporal_translation_radius or angle >= cfg.temporal_rotation_limit:
            return None
        return dist / cfg.temporal_translation_radius + angle / cfg.temporal_rotation_limit

    return cost


def solve_pnp_constrained(
    corrs, k: CameraIntrinsics, anchor: Pose, cfg: PnPConfig = PnPConfig()
) -> tuple[Pose, NDArray[np.bool_]]:
    """RANSAC restricted to poses near ``anchor``.

    Every P3P solution of every 3-point sample is scored, but only those
    whose center lies within ``temporal_translation_radius`` of the anchor
    and whose rotation is within ``temporal_rotation_limit`` survive. Ties
    in inlier count go to the hypothesis closest to the anchor.
    """
    c = _as_correspondences(corrs)
    r, t, mask = _ransac(c, k, cfg, cfg.temporal_min_inliers, 3, _temporal_filter(anchor, cfg))
    return Pose.from_world_to_camera(r, t), mask


def _nearest_localized(
    frame_id: int, localized: dict[int, Pose], window: int
) -> Pose | None:
    best = None
    for fid, pose in localized.items():
        gap = abs(fid - frame_id)
        if gap == 0 or gap > window:
            continue
        if best is None or (gap, fid) < best[0]:
            best = ((gap, fid), pose)
    return None if best is None else best[1]


def relocalize_temporal(
    frames: Sequence[tuple[int, object]],
    localized: PoseTable,
    k: CameraIntrinsics,
    cfg: PnPConfig = PnPConfig(),
    video_id: str = "",
) -> PoseTable:
    """Second PnP pass for frames the first pass could not localize.

    Each unlocalized frame borrows the pose of its nearest localized frame
    (by index, within ``temporal_window``; ties go to the earlier frame) as
    a bound on the hypotheses. Only poses present in ``localized`` act as
    references. Existing entries are never modified; frames that still fail
    stay absent or invalid.
    """
    known = {
        fid: e.pose
        for (vid, fid), e in localized.items()
        if vid == video_id and e.usable and e.pose is not None
    }
    updates: dict[FrameKey, PoseEntry] = {}
    for frame_id, corrs in frames:
        key = (video_id, int(frame_id))
        entry = localized.get(key)
        if entry is not None and entry.valid:
            continue
        anchor = _nearest_localized(int(frame_id), known, cfg.temporal_window)
        if anchor is None:
            continue
        try:
            pose, _ = solve_pnp_constrained(corrs, k, anchor, cfg)
        except (NoConsensus, DegenerateInput):
            continue
        updates[key] = PoseEntry(pose, Provenance.PNP_TEMPORAL)
    if not updates:
        return localized
    return localized.with_entries(updates)


def localize_frames(
    frames: Sequence[tuple[int, object]],
    k: CameraIntrinsics,
    cfg: PnPConfig = PnPConfig(),
    video_id: str = "",
    temporal: bool = True,
) -> PoseTable:
    """First pass on every frame, then the temporal pass on the failures."""
    entries: dict[FrameKey, PoseEntry] = {}
    for frame_id, corrs in frames:
        try:
            pose, _ = solve_pnp_ransac(corrs, k, cfg)
        except (NoConsensus, DegenerateInput):
            continue
        entries[(video_id, int(frame_id))] = PoseEntry(pose, Provenance.PNP)
    table = PoseTable(entries)
    if temporal and entries:
        table = relocalize_temporal(frames, table, k, cfg, video_id)
    return table
