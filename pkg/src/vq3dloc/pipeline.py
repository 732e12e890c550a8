"""From registered poses and visual queries to 3D predictions."""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from typing import Literal

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import UnknownScan, ValidationError
from .geometry import Box3, Pose, as_vec3, camera_center
from .registration import ScanGeometry, apply_3d_constraints
from .tables import PoseTable

PredictionMode = Literal["scan-center", "given-point"]
Availability = Literal["both", "query-frame"]


@dataclass(frozen=True, eq=False)
class ResponseFrame:
    frame_id: int
    box2d: tuple[float, float, float, float]


@dataclass(frozen=True, eq=False)
class VisualQueryRecord:
    """A visual query: query frame, response track and the two annotated boxes.

    ``response_track`` ends at the last occurrence of the object; every
    frame in it precedes ``query_frame``.
    """

    query_id: str
    video_id: str
    query_frame: int
    response_track: tuple[ResponseFrame, ...]
    annotation: tuple[Box3, Box3]
    scan_id: str

    def __post_init__(self) -> None:
        track = tuple(
            r if isinstance(r, ResponseFrame) else ResponseFrame(int(r[0]), tuple(r[1]))
            for r in self.response_track
        )
        if not track:
            raise ValidationError(f"query {self.query_id}: empty response track")
        if any(r.frame_id >= self.query_frame for r in track):
            raise ValidationError(f"query {self.query_id}: response track must precede the query frame")
        if len(self.annotation) != 2:
            raise ValidationError(f"query {self.query_id}: need exactly two annotation boxes")
        object.__setattr__(self, "response_track", track)
        object.__setattr__(self, "annotation", tuple(self.annotation))

    @property
    def centroid_pair(self) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        return self.annotation[0].center, self.annotation[1].center

    @property
    def mean_centroid(self) -> NDArray[np.float64]:
        c1, c2 = self.centroid_pair
        return (c1 + c2) / 2.0

    @property
    def gt_box(self) -> Box3:
        """Axis-aligned hull of both annotation boxes."""
        return self.annotation[0].hull(self.annotation[1])


@dataclass(frozen=True, eq=False)
class Prediction:
    query_id: str
    pose_available: bool
    world_point: NDArray[np.float64] | None = None
    displacement: NDArray[np.float64] | None = None
    confidence: float = 0.0
    predicted_box: Box3 | None = None

    def __post_init__(self) -> None:
        if self.pose_available:
            if self.world_point is None or self.displacement is None:
                raise ValidationError(f"{self.query_id}: pose_available needs world_point and displacement")
            object.__setattr__(self, "world_point", as_vec3(self.world_point, "world_point"))
            object.__setattr__(self, "displacement", as_vec3(self.displacement, "displacement"))
            self.world_point.setflags(write=False)
            self.displacement.setflags(write=False)
        elif self.world_point is not None or self.displacement is not None:
            raise ValidationError(f"{self.query_id}: no pose, so no point or displacement")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValidationError("confidence must be in [0, 1]")

    @property
    def query_center(self) -> NDArray[np.float64] | None:
        """Camera center at the query frame, recovered from point and displacement."""
        if not self.pose_available:
            return None
        return self.world_point - self.displacement


@dataclass(frozen=True)
class PredictConfig:
    mode: PredictionMode = "scan-center"
    constraints: bool = False
    availability: Availability = "both"
    box_side: float = 0.5
    confidence: float = 1.0

    def __post_init__(self) -> None:
        if self.mode not in ("scan-center", "given-point"):
            raise ValidationError(f"unknown mode {self.mode!r}")
        if self.availability not in ("both", "query-frame"):
            raise ValidationError(f"unknown availability rule {self.availability!r}")
        if not self.box_side >= 0:
            raise ValidationError("box_side must be non-negative")


def scan_center_prediction(scan: ScanGeometry) -> NDArray[np.float64]:
    """Midpoint of the scan's axis-aligned bounds."""
    return scan.bounds.center.copy()


def compute_displacement(world_point: ArrayLike, query_pose: Pose) -> NDArray[np.float64]:
    """Vector from the query camera center to the point, in world axes."""
    return as_vec3(world_point) - camera_center(query_pose)


def _track_pose(q: VisualQueryRecord, poses: PoseTable) -> Pose | None:
    # Latest frame first: the end of the track is the last sighting.
    for r in reversed(q.response_track):
        p = poses.usable_pose((q.video_id, r.frame_id))
        if p is not None:
            return p
    return None


def predict_queries(
    queries: Sequence[VisualQueryRecord],
    poses: PoseTable,
    scans: Mapping[str, ScanGeometry],
    cfg: PredictConfig = PredictConfig(),
    points: Mapping[str, ArrayLike] | None = None,
) -> list[Prediction]:
    """One prediction per query, in input order.

    ``scan-center`` predicts the scan's bounding-box center. ``given-point``
    takes the object location from ``points`` (keyed by query id), for
    locations produced by an external retrieval step. Queries whose poses
    are missing under ``cfg.availability`` get an explicit
    ``pose_available=False`` record.

    Raises:
        UnknownScan: a query names a scan missing from ``scans``.
    """
    out = []
    for q in queries:
        scan = scans.get(q.scan_id)
        if scan is None:
            raise UnknownScan(f"query {q.query_id} references unknown scan {q.scan_id!r}")
        q_pose = poses.usable_pose((q.video_id, q.query_frame))
        r_pose = _track_pose(q, poses)
        if cfg.availability == "both":
            available = q_pose is not None and r_pose is not None
        else:
            available = q_pose is not None
        if not available:
            out.append(Prediction(q.query_id, False))
            continue
        if cfg.mode == "scan-center":
            point = scan_center_prediction(scan)
        else:
            if points is None or q.query_id not in points:
                raise ValidationError(f"no given point for query {q.query_id}")
            point = as_vec3(points[q.query_id])
        if cfg.constraints:
            point = apply_3d_constraints(point[None], scan)[0]
        out.append(
            Prediction(
                q.query_id,
                True,
                world_point=point,
                displacement=compute_displacement(point, q_pose),
                confidence=cfg.confidence,
                predicted_box=Box3.cube(point, cfg.box_side),
            )
        )
    return out
