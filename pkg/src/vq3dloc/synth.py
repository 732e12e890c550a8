"""Deterministic synthetic scenes with known ground truth.

A box-shaped room is sampled as the scan. Each video follows a trajectory
inside the room; its relative reconstruction is the ground truth pushed
through the inverse of a per-video similarity transform, and the
scan-merge reconstruction does the same for all videos with one shared
transform. PnP anchors are ground-truth poses (or actual PnP solutions on
projected scan vertices) with configurable dropout and corruption. Queries
place an object a short distance in front of the last response-track
camera, and the two annotation boxes straddle it symmetrically.

:func:`expected_report` recomputes the metrics from ground truth with its
own arithmetic, independent of :mod:`vq3dloc.metrics`.
"""

from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np

from .errors import ValidationError
from .geometry import Box3, Pose, Rotation3, Sim3Transform
from .io.colmap import CameraRecord, ImageRecord, ModelBundle, Point3DRecord, write_sparse_model
from .io.scan import write_ply
from .io.schemas import (
    AnchorRecord,
    RegistrationResult,
    anchors_to_json,
    points_to_json,
    pose_table_to_json,
    queries_to_json,
    registration_to_json,
    write_json,
)
from .metrics import Counts, MetricsConfig, MetricsReport
from .pipeline import ResponseFrame, VisualQueryRecord
from .pnp import CameraIntrinsics, Correspondences, PnPConfig, solve_pnp_ransac
from .registration import ReconstructionSource, ScanGeometry
from .tables import PoseEntry, PoseTable, Provenance

TrajectoryModel = Literal["lissajous", "random-walk"]

ROOM_MARGIN = 0.5
TRACK_LENGTH = 3


@dataclass(frozen=True)
class NoiseConfig:
    center_sigma: float = 0.0
    rotation_sigma: float = 0.0
    anchor_dropout: float = 0.5
    outlier_fraction: float = 0.0

    def __post_init__(self) -> None:
        if self.center_sigma < 0 or self.rotation_sigma < 0:
            raise ValidationError("noise sigmas must be non-negative")
        for name in ("anchor_dropout", "outlier_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValidationError(f"{name} must be in [0, 1]")


@dataclass(frozen=True)
class SynthConfig:
    rng_seed: int = 42
    num_videos: int = 2
    frames_per_video: int = 20
    scan_extent: tuple[float, float, float] = (8.0, 6.0, 3.0)
    scan_id: str = "scan0"
    device_id: str = "device0"
    trajectory: TrajectoryModel = "lissajous"
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    anchor_dropout_per_video: Mapping[str, float] = field(default_factory=dict)
    offset_scale_range: tuple[float, float] = (0.2, 5.0)
    offset_translation_sigma: float = 10.0
    num_queries: int = 10
    query_pose_coverage: float = 1.0
    # Share of each video's frames that the scan-merge model registers.
    scan_frame_fraction: float = 1.0
    anchors_via_pnp: bool = False
    scan_vertices: int = 1500
    model_points: int = 100

    def __post_init__(self) -> None:
        if isinstance(self.noise, Mapping):
            object.__setattr__(self, "noise", NoiseConfig(**self.noise))
        if self.num_videos < 1 or self.frames_per_video < TRACK_LENGTH + 2:
            raise ValidationError("need at least one video of at least 5 frames")
        if any(e <= 2 * ROOM_MARGIN + 0.5 for e in self.scan_extent):
            raise ValidationError("scan_extent too small for the room margin")
        if self.trajectory not in ("lissajous", "random-walk"):
            raise ValidationError(f"unknown trajectory model {self.trajectory!r}")
        if not 0.0 <= self.query_pose_coverage <= 1.0:
            raise ValidationError("query_pose_coverage must be in [0, 1]")
        if not 0.0 <= self.scan_frame_fraction <= 1.0:
            raise ValidationError("scan_frame_fraction must be in [0, 1]")
        for v in self.anchor_dropout_per_video.values():
            if not 0.0 <= v <= 1.0:
                raise ValidationError("per-video anchor dropout must be in [0, 1]")
        lo, hi = self.offset_scale_range
        if not 0 < lo <= hi:
            raise ValidationError("offset_scale_range must be positive and ordered")

    def video_ids(self) -> list[str]:
        return [f"video{i:02d}" for i in range(self.num_videos)]


@dataclass(frozen=True, eq=False)
class SynthScene:
    config: SynthConfig
    scan: ScanGeometry
    ground_truth: PoseTable
    models: dict[str, ModelBundle]
    anchors: list[AnchorRecord]
    queries: list[VisualQueryRecord]
    object_points: dict[str, np.ndarray]
    generator_transforms: dict[str, Sim3Transform]
    intrinsics: CameraIntrinsics
    covered_queries: frozenset[str]

    @property
    def frame_totals(self) -> dict[str, int]:
        return {v: self.config.frames_per_video for v in self.config.video_ids()}

    @property
    def anchor_table(self) -> PoseTable:
        return PoseTable({(a.video_id, a.frame_id): PoseEntry(a.pose, a.provenance) for a in self.anchors})

    @property
    def reconstructions(self):
        return {name: m.reconstruction for name, m in self.models.items()}


def scan_model_name(scan_id: str) -> str:
    return f"scan_{scan_id}"


def _room_vertices(extent: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    corners = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], float) * extent
    face = rng.integers(0, 6, size=n)
    pts = rng.uniform(0.0, 1.0, size=(n, 3)) * extent
    axis = face // 2
    pts[np.arange(n), axis] = np.where(face % 2 == 0, 0.0, extent[axis])
    return np.vstack([corners, pts])


def _look_rotation(forward: np.ndarray) -> Rotation3:
    """Camera-to-world rotation with the optical axis along ``forward`` and image y pointing down."""
    z = forward / np.linalg.norm(forward)
    down = np.array([0.0, 0.0, -1.0])
    x = np.cross(down, z)
    if np.linalg.norm(x) < 1e-6:
        x = np.array([1.0, 0.0, 0.0])
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return Rotation3(np.column_stack([x, y, z]))


def _trajectory(cfg: SynthConfig, extent: np.ndarray, rng: np.random.Generator) -> list[Pose]:
    n = cfg.frames_per_video
    lo = np.full(3, ROOM_MARGIN)
    hi = extent - ROOM_MARGIN
    if cfg.trajectory == "lissajous":
        center = extent / 2.0
        amp = (hi - lo) / 2.0 * rng.uniform(0.5, 0.95, size=3)
        amp[2] = min(amp[2], 0.3)
        freq = rng.uniform(0.3, 1.0, size=3) * 2 * np.pi / n
        phase = rng.uniform(0, 2 * np.pi, size=3)
        t = np.arange(n)[:, None]
        centers = center + amp * np.sin(freq * t + phase)
        vel = amp * freq * np.cos(freq * t + phase)
    else:
        centers = np.empty((n, 3))
        centers[0] = rng.uniform(lo, hi)
        for i in range(1, n):
            step = rng.normal(scale=(0.2, 0.2, 0.05))
            centers[i] = np.clip(centers[i - 1] + step, lo, hi)
        vel = np.gradient(centers, axis=0)
    yaw_jitter = rng.normal(scale=0.3, size=n)
    poses = []
    for i in range(n):
        v = vel[i].copy()
        v[2] = 0.0
        if np.linalg.norm(v) < 1e-9:
            v = np.array([1.0, 0.0, 0.0])
        heading = math.atan2(v[1], v[0]) + yaw_jitter[i]
        fwd = np.array([math.cos(heading), math.sin(heading), rng.uniform(-0.2, 0.1)])
        poses.append(Pose(_look_rotation(fwd), centers[i]))
    return poses


def _perturb(pose: Pose, cfg: NoiseConfig, rng: np.random.Generator) -> Pose:
    dc = rng.normal(size=3) * cfg.center_sigma
    dr = rng.normal(size=3) * cfg.rotation_sigma
    return Pose(Rotation3.from_rotvec(dr) @ pose.rotation, pose.translation + dc)


def _far_outlier(true_center: np.ndarray, extent: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    # Uniform in the room box inflated tenfold about its center, away from the truth.
    center = extent / 2.0
    while True:
        p = center + rng.uniform(-5.0, 5.0, size=3) * extent
        if np.linalg.norm(p - true_center) > 2.0 * float(np.linalg.norm(extent)):
            return p


def _model_bundle(
    name_frames: list[tuple[str, int, Pose]],
    source: ReconstructionSource,
    k: CameraIntrinsics,
    points: np.ndarray,
    merged: bool,
) -> ModelBundle:
    cameras = {1: CameraRecord.from_intrinsics(1, k)}
    images = {}
    for iid, (vid, fid, pose) in enumerate(name_frames, start=1):
        name = f"{vid}/frame_{fid:06d}.jpg" if merged else f"frame_{fid:06d}.jpg"
        images[iid] = ImageRecord.from_pose(iid, pose, 1, name)
    pts = {
        pid: Point3DRecord(pid, tuple(float(v) for v in xyz), (128, 128, 128), 0.5, ())
        for pid, xyz in enumerate(points, start=1)
    }
    return ModelBundle.build(cameras, images, pts, source)


def _pnp_anchor(
    pose: Pose, scan: ScanGeometry, k: CameraIntrinsics, rng: np.random.Generator
) -> tuple[Pose, int, float] | None:
    cam = pose.world_to_camera_points(scan.vertices)
    z = cam[:, 2]
    front = z > 0.3
    px = np.full((len(cam), 2), np.nan)
    px[front] = np.column_stack(
        [k.fx * cam[front, 0] / z[front] + k.cx, k.fy * cam[front, 1] / z[front] + k.cy]
    )
    vis = front & (px[:, 0] >= 0) & (px[:, 0] < k.width) & (px[:, 1] >= 0) & (px[:, 1] < k.height)
    idx = np.flatnonzero(vis)
    if len(idx) < 8:
        return None
    idx = rng.choice(idx, size=min(40, len(idx)), replace=False)
    corr = Correspondences(px[idx], scan.vertices[idx])
    try:
        est, mask = solve_pnp_ransac(corr, k, PnPConfig(reprojection_threshold=2.0, rng_seed=int(rng.integers(2**31))))
    except Exception:  # noqa: BLE001 - a frame PnP cannot solve just gets no anchor
        return None
    return est, int(mask.sum()), 0.0


def generate(cfg: SynthConfig = SynthConfig()) -> SynthScene:
    """Build a scene; identical configs give identical scenes."""
    rng = np.random.default_rng(cfg.rng_seed)
    extent = np.array(cfg.scan_extent, dtype=np.float64)
    scan = ScanGeometry(cfg.scan_id, _room_vertices(extent, cfg.scan_vertices, rng))
    k = CameraIntrinsics(500.0, 500.0, 320.0, 240.0, 640, 480)
    videos = cfg.video_ids()

    trajectories = {v: _trajectory(cfg, extent, rng) for v in videos}
    gt = {(v, i): p for v in videos for i, p in enumerate(trajectories[v])}

    # Queries: distinct (video, query frame) pairs with room for a response track.
    eligible = [(v, f) for v in videos for f in range(TRACK_LENGTH + 1, cfg.frames_per_video)]
    n_q = min(cfg.num_queries, len(eligible))
    picks = rng.choice(len(eligible), size=n_q, replace=False) if n_q else []
    query_specs = [eligible[int(i)] for i in picks]
    n_covered = int(round(cfg.query_pose_coverage * n_q))
    uncovered_idx = set(int(i) for i in rng.choice(n_q, size=n_q - n_covered, replace=False)) if n_q else set()
    dropped_frames = {query_specs[i] for i in uncovered_idx}
    registered = {key for key in gt if key not in dropped_frames}

    generators: dict[str, Sim3Transform] = {}
    models: dict[str, ModelBundle] = {}
    lo_s, hi_s = cfg.offset_scale_range
    for v in videos:
        g = Sim3Transform.random(rng, (lo_s, hi_s), cfg.offset_translation_sigma)
        generators[v] = g
        inv = g.inverse()
        frames = [
            (v, f, inv.apply_to_pose(_perturb(gt[(v, f)], cfg.noise, rng)))
            for f in range(cfg.frames_per_video)
            if (v, f) in registered
        ]
        pts = inv.apply(scan.vertices[rng.choice(len(scan.vertices), cfg.model_points, replace=False)])
        models[v] = _model_bundle(frames, ReconstructionSource.video(v), k, pts, merged=False)

    scan_name = scan_model_name(cfg.scan_id)
    g_s = Sim3Transform.random(rng, (lo_s, hi_s), cfg.offset_translation_sigma)
    generators[scan_name] = g_s
    inv_s = g_s.inverse()
    merged_frames = []
    for v in videos:
        frames = [f for f in range(cfg.frames_per_video) if (v, f) in registered]
        if cfg.scan_frame_fraction < 1.0:
            n_keep = int(round(cfg.scan_frame_fraction * len(frames)))
            frames = sorted(int(f) for f in rng.choice(frames, size=n_keep, replace=False))
        merged_frames += [
            (v, f, inv_s.apply_to_pose(_perturb(gt[(v, f)], cfg.noise, rng))) for f in frames
        ]
    pts = inv_s.apply(scan.vertices[rng.choice(len(scan.vertices), cfg.model_points, replace=False)])
    models[scan_name] = _model_bundle(
        merged_frames, ReconstructionSource.scan_merge(cfg.scan_id, cfg.device_id), k, pts, merged=True
    )

    anchors: list[AnchorRecord] = []
    for v in videos:
        dropout = cfg.anchor_dropout_per_video.get(v, cfg.noise.anchor_dropout)
        frames = [f for f in range(cfg.frames_per_video) if (v, f) in registered]
        n_keep = int(round((1.0 - dropout) * len(frames)))
        keep = sorted(int(i) for i in rng.choice(frames, size=n_keep, replace=False)) if n_keep else []
        n_bad = int(round(cfg.noise.outlier_fraction * len(keep)))
        bad = set(int(i) for i in rng.choice(keep, size=n_bad, replace=False)) if n_bad else set()
        for f in keep:
            truth = gt[(v, f)]
            if f in bad:
                pose = Pose(Rotation3.random(rng), _far_outlier(truth.translation, extent, rng))
                anchors.append(AnchorRecord(v, f, pose, 0, None))
                continue
            if cfg.anchors_via_pnp:
                sol = _pnp_anchor(truth, scan, k, rng)
                if sol is None:
                    continue
                pose, inliers, err = sol
                anchors.append(AnchorRecord(v, f, pose, inliers, err))
            else:
                anchors.append(AnchorRecord(v, f, truth, 0, 0.0))

    queries: list[VisualQueryRecord] = []
    objects: dict[str, np.ndarray] = {}
    covered: set[str] = set()
    inner_lo = np.full(3, 0.3)
    inner_hi = extent - 0.3
    for qi, (v, qf) in enumerate(query_specs):
        qid = f"q{qi:04d}"
        track_frames = list(range(qf - TRACK_LENGTH, qf))
        last = gt[(v, track_frames[-1])]
        fwd = last.rotation.matrix[:, 2]
        obj = np.clip(last.translation + rng.uniform(1.0, 2.5) * fwd, inner_lo, inner_hi)
        e = rng.uniform(-0.1, 0.1, size=3)
        he1 = rng.uniform(0.1, 0.3, size=3)
        he2 = he1 * rng.uniform(0.8, 1.2, size=3)
        c1, c2 = obj + e, obj - e
        objects[qid] = (c1 + c2) / 2.0
        track = tuple(
            ResponseFrame(f, (100.0 + f, 100.0, 180.0 + f, 200.0)) for f in track_frames
        )
        queries.append(
            VisualQueryRecord(qid, v, qf, track, (Box3(c1, he1), Box3(c2, he2)), cfg.scan_id)
        )
        if qi not in uncovered_idx:
            covered.add(qid)

    ground_truth = PoseTable(
        {key: PoseEntry(p, Provenance.GROUND_TRUTH) for key, p in gt.items()}
    )
    return SynthScene(
        cfg, scan, ground_truth, models, anchors, queries, objects, generators, k, frozenset(covered)
    )


def write_scene(scene: SynthScene, directory: str | Path) -> dict[str, Path]:
    """Write every scene file through the io formats; returns their paths."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = {
        "scan": d / f"{scene.scan.scan_id}.ply",
        "anchors": d / "anchors.json",
        "queries": d / "queries.json",
        "ground_truth": d / "gt_poses.json",
        "generators": d / "generators.json",
        "object_points": d / "object_points.json",
        "manifest": d / "scene.json",
    }
    write_ply(scene.scan, paths["scan"], binary=True)
    for name, bundle in scene.models.items():
        write_sparse_model(bundle, d / "models" / name)
    write_json(anchors_to_json(scene.anchors), paths["anchors"])
    write_json(queries_to_json(scene.queries), paths["queries"])
    write_json(pose_table_to_json(scene.ground_truth), paths["ground_truth"])
    write_json(
        registration_to_json(
            [RegistrationResult(n, "ok", t) for n, t in sorted(scene.generator_transforms.items())]
        ),
        paths["generators"],
    )
    write_json(points_to_json(scene.object_points), paths["object_points"])
    write_json(
        {
            "schema_version": 1,
            "kind": "scene",
            "seed": scene.config.rng_seed,
            "scan_id": scene.scan.scan_id,
            "scan_file": paths["scan"].name,
            "frame_totals": scene.frame_totals,
            "models": sorted(f"models/{n}" for n in scene.models),
            "anchors_file": paths["anchors"].name,
            "queries_file": paths["queries"].name,
            "ground_truth_file": paths["ground_truth"].name,
            "generators_file": paths["generators"].name,
            "object_points_file": paths["object_points"].name,
        },
        paths["manifest"],
    )
    return paths


# ----------------------------------------------------------------------------
# Brute-force expected metrics. Deliberately plain Python: no shared code with
# the metrics module.
# ----------------------------------------------------------------------------


def _dist(a, b) -> float:
    return math.sqrt(sum((float(x) - float(y)) ** 2 for x, y in zip(a, b)))


def _angle(a, b) -> float:
    na = math.sqrt(sum(float(x) ** 2 for x in a))
    nb = math.sqrt(sum(float(x) ** 2 for x in b))
    if na == 0.0 or nb == 0.0:
        return 0.0 if na == nb else math.pi / 2
    a = [float(x) for x in a]
    b = [float(x) for x in b]
    cross = (a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0])
    dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
    return math.atan2(math.sqrt(sum(x * x for x in cross)), dot)


def _bounds(center, half, rot=None):
    if rot is None:
        return [c - h for c, h in zip(center, half)], [c + h for c, h in zip(center, half)]
    ext = [sum(abs(rot[i][j]) * half[j] for j in range(3)) for i in range(3)]
    return [c - e for c, e in zip(center, ext)], [c + e for c, e in zip(center, ext)]


def _box_iou(a_lo, a_hi, b_lo, b_hi) -> float:
    va = vb = inter = 1.0
    for i in range(3):
        va *= a_hi[i] - a_lo[i]
        vb *= b_hi[i] - b_lo[i]
        inter *= max(0.0, min(a_hi[i], b_hi[i]) - max(a_lo[i], b_lo[i]))
    if va == 0.0 or vb == 0.0:
        return 1.0 if (list(a_lo), list(a_hi)) == (list(b_lo), list(b_hi)) else 0.0
    return inter / (va + vb - inter)


def _ap_single_score(hits: list[bool], n_gt: int) -> tuple[float, list[tuple[float, float]]]:
    """AP when predictions arrive in a fixed order; envelope by explicit search."""
    curve = []
    tp = 0
    for i, h in enumerate(hits, start=1):
        tp += int(h)
        curve.append((tp / i, tp / n_gt if n_gt else 0.0))
    ap = 0.0
    prev_r = 0.0
    for i, (_, r) in enumerate(curve):
        if r > prev_r:
            ap += (r - prev_r) * max(p for p, _ in curve[i:])
            prev_r = r
    return ap, curve


def expected_report(
    scene: SynthScene,
    cfg: MetricsConfig,
    points: Mapping[str, np.ndarray] | None = None,
    box_side: float = 0.5,
) -> MetricsReport:
    """Metrics of an ideal pipeline on ``scene``.

    Queries in ``scene.covered_queries`` receive a prediction at
    ``points[qid]`` (the true object point by default) with ground-truth
    query poses; the rest have no pose. Prediction boxes are cubes of side
    ``box_side`` with confidence one.
    """
    pts = scene.object_points if points is None else points
    qs = sorted(scene.queries, key=lambda q: q.query_id)
    total = len(qs)
    with_pose = succ = 0
    sq = []
    angles = []
    hits_by_th: dict[float, list[bool]] = {th: [] for th in cfg.iou_thresholds}
    for q in qs:
        if q.query_id not in scene.covered_queries:
            continue
        with_pose += 1
        p = [float(v) for v in pts[q.query_id]]
        c1 = [float(v) for v in q.annotation[0].center]
        c2 = [float(v) for v in q.annotation[1].center]
        cm = [(a + b) / 2.0 for a, b in zip(c1, c2)]
        d = _dist(cm, p)
        if d < 6.0 * (_dist(c1, c2) + cfg.delta):
            succ += 1
        sq.append(d)
        center = [float(v) for v in scene.ground_truth[(q.video_id, q.query_frame)].pose.translation]
        pred_disp = [a - b for a, b in zip(p, center)]
        gt_disp = [a - b for a, b in zip(cm, center)]
        angles.append(_angle(pred_disp, gt_disp))
        p_lo, p_hi = _bounds(p, [box_side / 2.0] * 3)
        boxes = []
        for b in q.annotation:
            boxes.append(_bounds(list(b.center), list(b.half_extents), b.rotation.matrix.tolist()))
        if cfg.gt_box_mode == "hull":
            lo = [min(boxes[0][0][i], boxes[1][0][i]) for i in range(3)]
            hi = [max(boxes[0][1][i], boxes[1][1][i]) for i in range(3)]
            best = _box_iou(p_lo, p_hi, lo, hi)
        else:
            best = max(_box_iou(p_lo, p_hi, lo, hi) for lo, hi in boxes)
        for th in cfg.iou_thresholds:
            hits_by_th[th].append(best >= th)

    # All confidences are equal, so predictions are ranked by query id, which is the loop order.
    ap = {}
    curves = {}
    for th in cfg.iou_thresholds:
        ap[th], curves[th] = _ap_single_score(hits_by_th[th], total)
    nan = float("nan")
    return MetricsReport(
        succ_pct=100.0 * succ / total if total else 0.0,
        succ_star_pct=100.0 * succ / with_pose if with_pose else 0.0,
        l2=math.sqrt(sum(x * x for x in sq) / len(sq)) if sq else nan,
        angle=sum(angles) / len(angles) if angles else nan,
        qwp_pct=100.0 * with_pose / total if total else 0.0,
        ap_per_threshold=ap,
        pr_curves=curves,
        counts=Counts(total, with_pose, succ),
        l2_mean=sum(sq) / len(sq) if sq else nan,
        angle_rms=math.sqrt(sum(a * a for a in angles) / len(angles)) if angles else nan,
    )
