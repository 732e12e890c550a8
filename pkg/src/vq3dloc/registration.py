"""Registration of relative SfM reconstructions into scan coordinates.

A per-video (or per-scan, for merged reconstructions) similarity transform
is fitted from the camera centers of frames that also carry a PnP pose, and
then applied to every frame of the reconstruction. Tables from several
configurations are fused by priority; post-processing flags poses outside
the scan and snaps points back onto it.
"""

from __future__ import annotations

from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.spatial import cKDTree

from .errors import DegenerateInput, InsufficientAnchors, ValidationError
from .geometry import Box3, Pose, Sim3Transform
from .procrustes import (
    CorrespondenceSet3D,
    RobustAlignConfig,
    collinearity_check,
    residuals,
    solve_robust_procrustes,
)
from .tables import FrameKey, PoseEntry, PoseTable, Provenance


class SourceKind(str, Enum):
    VIDEO = "video"
    SCAN_MERGE = "scan_merge"


@dataclass(frozen=True)
class ReconstructionSource:
    kind: SourceKind
    video_id: str | None = None
    scan_id: str | None = None
    device_id: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", SourceKind(self.kind))
        if self.kind is SourceKind.VIDEO and not self.video_id:
            raise ValidationError("video reconstructions need a video_id")
        if self.kind is SourceKind.SCAN_MERGE and not self.scan_id:
            raise ValidationError("scan-merge reconstructions need a scan_id")

    @classmethod
    def video(cls, video_id: str) -> ReconstructionSource:
        return cls(SourceKind.VIDEO, video_id=video_id)

    @classmethod
    def scan_merge(cls, scan_id: str, device_id: str | None = None) -> ReconstructionSource:
        return cls(SourceKind.SCAN_MERGE, scan_id=scan_id, device_id=device_id)

    @property
    def provenance(self) -> Provenance:
        if self.kind is SourceKind.VIDEO:
            return Provenance.VIDEO_PROCRUSTES
        return Provenance.SCAN_PROCRUSTES


@dataclass(frozen=True, eq=False)
class SparseReconstruction:
    """Relative-frame SfM model.

    Frames are keyed by ``(video_id, frame_id)`` so that scan-merge models,
    which mix several videos, share the key space of per-video models.
    Poses are camera-to-world in the reconstruction's own arbitrary frame.
    """

    frames: Mapping[FrameKey, Pose]
    camera_ids: Mapping[FrameKey, int]
    source: ReconstructionSource
    points3d: NDArray[np.float64] = field(default_factory=lambda: np.zeros((0, 3)))

    def __post_init__(self) -> None:
        frames = {(str(v), int(f)): p for (v, f), p in self.frames.items()}
        cams = {(str(v), int(f)): int(c) for (v, f), c in self.camera_ids.items()}
        missing = set(frames) - set(cams)
        if missing:
            raise ValidationError(f"frames without camera id: {sorted(missing)[:3]}")
        pts = np.array(self.points3d, dtype=np.float64).reshape(-1, 3)
        pts.setflags(write=False)
        object.__setattr__(self, "frames", dict(sorted(frames.items())))
        object.__setattr__(self, "camera_ids", {k: cams[k] for k in sorted(frames)})
        object.__setattr__(self, "points3d", pts)

    def __len__(self) -> int:
        return len(self.frames)

    def centers(self, keys: Iterable[FrameKey]) -> NDArray[np.float64]:
        return np.array([self.frames[k].translation for k in keys]).reshape(-1, 3)


@dataclass(frozen=True, eq=False)
class ScanGeometry:
    """Scan vertices and their axis-aligned bounds."""

    scan_id: str
    vertices: NDArray[np.float64]
    require_volume: bool = field(default=True, repr=False)

    def __post_init__(self) -> None:
        v = np.array(self.vertices, dtype=np.float64).reshape(-1, 3)
        if len(v) == 0:
            raise ValidationError("scan has no vertices")
        if not np.all(np.isfinite(v)):
            raise ValidationError("scan vertices must be finite")
        if self.require_volume:
            if len(v) < 4:
                raise ValidationError("scan needs at least 4 vertices")
            sv = np.linalg.svd(v - v.mean(axis=0), compute_uv=False)
            if sv[2] <= 1e-12 * sv[0]:
                raise ValidationError("scan vertices are coplanar")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    @property
    def bounds(self) -> Box3:
        return Box3.from_bounds(self.vertices.min(axis=0), self.vertices.max(axis=0))

    @property
    def tree(self) -> cKDTree:
        cached = self.__dict__.get("_tree")
        if cached is None:
            cached = cKDTree(self.vertices)
            object.__setattr__(self, "_tree", cached)
        return cached


@dataclass(frozen=True)
class FusionPolicy:
    order: tuple[Provenance, ...] = (
        Provenance.VIDEO_PROCRUSTES,
        Provenance.SCAN_PROCRUSTES,
        Provenance.PNP_TEMPORAL,
        Provenance.PNP,
    )
    residual_gate: float = 0.5

    def __post_init__(self) -> None:
        order = tuple(Provenance(p) for p in self.order)
        if not order:
            raise ValidationError("fusion order is empty")
        if len(set(order)) != len(order):
            raise ValidationError("fusion order has duplicates")
        if not self.residual_gate > 0:
            raise ValidationError("residual_gate must be positive")
        object.__setattr__(self, "order", order)

    def rank(self, p: Provenance) -> int:
        try:
            return self.order.index(p)
        except ValueError:
            return len(self.order)


@dataclass(frozen=True)
class RegistrationDiagnostics:
    anchor_count: int
    inlier_count: int
    mean_residual: float
    inlier_keys: tuple[FrameKey, ...]
    outlier_keys: tuple[FrameKey, ...]

    def passes(self, gate: float) -> bool:
        return self.mean_residual <= gate


def common_anchor_keys(recon: SparseReconstruction, anchors: PoseTable) -> list[FrameKey]:
    """Frames present in ``recon`` that carry a usable PnP pose in ``anchors``."""
    pnp = {Provenance.PNP, Provenance.PNP_TEMPORAL}
    return [
        k
        for k in recon.frames
        if (e := anchors.get(k)) is not None and e.usable and e.provenance in pnp
    ]


def fit_registration(
    recon: SparseReconstruction,
    anchors: PoseTable,
    cfg: RobustAlignConfig = RobustAlignConfig(),
) -> tuple[Sim3Transform, RegistrationDiagnostics]:
    """Fit the relative-to-scan similarity transform from shared anchor frames.

    Source points are the reconstruction's camera centers, targets the PnP
    camera centers. Rotations are not used in the fit.

    Raises:
        InsufficientAnchors: fewer than three shared frames.
        DegenerateInput: the shared centers are collinear.
        NoConsensus: RANSAC found no acceptable consensus.
    """
    keys = common_anchor_keys(recon, anchors)
    if len(keys) < 3:
        raise InsufficientAnchors(
            f"{len(keys)} frames shared with PnP anchors; a similarity fit needs 3 non-collinear"
        )
    src = recon.centers(keys)
    dst = np.array([anchors[k].pose.translation for k in keys])
    if not collinearity_check(src, cfg.collinearity_tolerance):
        raise DegenerateInput("anchor camera centers are collinear in the reconstruction")
    corr = CorrespondenceSet3D(src, dst)
    transform, mask = solve_robust_procrustes(corr, cfg)
    res = residuals(transform, corr)
    diag = RegistrationDiagnostics(
        anchor_count=len(keys),
        inlier_count=int(mask.sum()),
        mean_residual=float(res[mask].mean()),
        inlier_keys=tuple(k for k, m in zip(keys, mask) if m),
        outlier_keys=tuple(k for k, m in zip(keys, mask) if not m),
    )
    return transform, diag


def apply_registration(
    recon: SparseReconstruction, t: Sim3Transform, provenance: Provenance | None = None
) -> PoseTable:
    """Map every frame of ``recon`` into scan coordinates.

    Centers go through the full similarity; rotations are left-multiplied
    by the transform's rotation only.
    """
    prov = recon.source.provenance if provenance is None else Provenance(provenance)
    return PoseTable({k: PoseEntry(t.apply_to_pose(p), prov) for k, p in recon.frames.items()})


def register(
    recon: SparseReconstruction,
    anchors: PoseTable,
    cfg: RobustAlignConfig = RobustAlignConfig(),
    residual_gate: float | None = None,
) -> tuple[PoseTable, Sim3Transform | None, RegistrationDiagnostics | None]:
    """Fit and apply in one step.

    A transform whose mean inlier residual exceeds ``residual_gate`` is
    discarded: the table comes back empty and the transform as ``None``,
    with the diagnostics still attached. Fit failures propagate as the
    exceptions of :func:`fit_registration`.
    """
    transform, diag = fit_registration(recon, anchors, cfg)
    if residual_gate is not None and not diag.passes(residual_gate):
        return PoseTable(), None, diag
    return apply_registration(recon, transform), transform, diag


def fuse(tables: Sequence[PoseTable], policy: FusionPolicy = FusionPolicy()) -> PoseTable:
    """Per frame, keep the valid entry whose provenance ranks first in ``policy.order``.

    Usable (non-outlier) entries beat flagged ones; remaining ties go to
    the earlier table. A frame with no valid entry keeps the first entry
    seen so that invalid placeholders are not lost.
    """
    best: dict[FrameKey, tuple[tuple[int, int, int, int], PoseEntry]] = {}
    for ti, table in enumerate(tables):
        for key, entry in table.items():
            rank = (
                0 if entry.valid else 1,
                1 if entry.outlier else 0,
                policy.rank(entry.provenance),
                ti,
            )
            cur = best.get(key)
            if cur is None or rank < cur[0]:
                best[key] = (rank, entry)
    return PoseTable({k: e for k, (_, e) in best.items()})


def filter_outliers(
    table: PoseTable, scan: ScanGeometry, margin: float = 1.0
) -> tuple[PoseTable, int]:
    """Flag valid entries whose camera center lies outside the inflated scan bounds.

    Poses are untouched; returns the flagged table and the number of newly
    flagged entries.
    """
    if margin < 0:
        raise ValidationError("margin must be non-negative")
    bounds = scan.bounds
    flagged = []
    for key, e in table.items():
        if not e.valid or e.outlier:
            continue
        if not bounds.contains(e.pose.translation, margin)[0]:
            flagged.append(key)
    return table.flag(flagged), len(flagged)


def apply_3d_constraints(points: ArrayLike, scan: ScanGeometry) -> NDArray[np.float64]:
    """Replace points outside the scan bounds by their nearest scan vertex.

    Points on the boundary count as inside. Equidistant vertices resolve to
    the lowest index.
    """
    pts = np.array(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        return pts
    inside = scan.bounds.contains(pts)
    out_idx = np.flatnonzero(~inside)
    if len(out_idx):
        pts[out_idx] = scan.vertices[nearest_vertex(pts[out_idx], scan)]
    return pts


def nearest_vertex(points: NDArray[np.float64], scan: ScanGeometry) -> NDArray[np.int64]:
    """Index of the closest vertex per point, lowest index on exact ties."""
    verts = scan.vertices
    k = min(8, len(verts))
    dist, idx = scan.tree.query(points, k=k)
    dist = np.atleast_2d(dist).reshape(len(points), k)
    idx = np.atleast_2d(idx).reshape(len(points), k)
    out = np.empty(len(points), dtype=np.int64)
    for i, p in enumerate(points):
        # Recompute exactly so ties are judged on identical arithmetic.
        cand = idx[i]
        d2 = np.sum((verts[cand] - p) ** 2, axis=1)
        dmin = d2.min()
        if k < len(verts) and np.isclose(dist[i, -1] ** 2, dmin, rtol=1e-12, atol=0.0):
            d_all = np.sum((verts - p) ** 2, axis=1)
            out[i] = int(np.flatnonzero(d_all == d_all.min())[0])
        else:
            out[i] = int(cand[d2 == dmin].min())
    return out


def constrain_table(table: PoseTable, scan: ScanGeometry) -> PoseTable:
    """Snap usable camera centers outside the scan onto the nearest vertex."""
    keys = [k for k, e in table.items() if e.usable]
    if not keys:
        return table
    centers = np.array([table[k].pose.translation for k in keys])
    snapped = apply_3d_constraints(centers, scan)
    updates = {}
    for k, old, new in zip(keys, centers, snapped):
        if not np.array_equal(old, new):
            e = table[k]
            updates[k] = PoseEntry(Pose(e.pose.rotation, new), e.provenance, e.valid, e.outlier)
    return table.with_entries(updates) if updates else table


@dataclass(frozen=True)
class RecallReport:
    frame_rate: float
    video_rate: float
    valid_frames: int
    total_frames: int
    videos_with_pose: int
    total_videos: int


def pose_recall(table: PoseTable, totals: Mapping[str, int]) -> RecallReport:
    """Percent of frames, and of videos with at least one frame, holding a usable pose."""
    unknown = table.videos() - set(totals)
    if unknown:
        raise ValidationError(f"totals missing videos {sorted(unknown)}")
    usable = table.valid_keys()
    total_frames = int(sum(totals.values()))
    per_video = {v: 0 for v in totals}
    for v, _ in usable:
        per_video[v] += 1
    valid_frames = sum(per_video.values())
    with_pose = sum(1 for c in per_video.values() if c > 0)
    return RecallReport(
        frame_rate=100.0 * valid_frames / total_frames if total_frames else 0.0,
        video_rate=100.0 * with_pose / len(totals) if totals else 0.0,
        valid_frames=valid_frames,
        total_frames=total_frames,
        videos_with_pose=with_pose,
        total_videos=len(totals),
    )
