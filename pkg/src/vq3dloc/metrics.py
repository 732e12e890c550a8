"""Visual-query 3D localization metrics and box-overlap average precision."""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Literal

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import DuplicatePrediction, MismatchedIds, ValidationError
from .geometry import Box3, as_vec3
from .pipeline import Prediction, VisualQueryRecord
from .tables import PoseTable

GtBoxMode = Literal["hull", "best-annotator"]


@dataclass(frozen=True)
class MetricsConfig:
    """``delta`` is the slack term of the success radius and has no default."""

    delta: float
    iou_thresholds: tuple[float, ...] = (0.1, 0.25, 0.5)
    gt_box_mode: GtBoxMode = "hull"
    angle_unit: Literal["radians"] = "radians"

    def __post_init__(self) -> None:
        if not np.isfinite(self.delta) or self.delta < 0:
            raise ValidationError("delta must be a finite non-negative distance")
        th = tuple(float(t) for t in self.iou_thresholds)
        if any(not 0.0 < t <= 1.0 for t in th):
            raise ValidationError("IoU thresholds must lie in (0, 1]")
        if any(b <= a for a, b in zip(th, th[1:])):
            raise ValidationError("IoU thresholds must be strictly increasing")
        object.__setattr__(self, "iou_thresholds", th)
        if self.gt_box_mode not in ("hull", "best-annotator"):
            raise ValidationError(f"unknown gt_box_mode {self.gt_box_mode!r}")
        if self.angle_unit != "radians":
            raise ValidationError("angles are reported in radians only")


@dataclass(frozen=True)
class Counts:
    total: int
    with_pose: int
    successes: int


@dataclass(frozen=True)
class MetricsReport:
    """Aggregate scores. Percentages are in [0, 100], AP in [0, 1].

    ``l2`` is the RMS distance over queries with a pose; ``l2_mean`` is the
    plain mean of the same distances. ``angle`` is the mean angular error,
    ``angle_rms`` its RMS.
    """

    succ_pct: float
    succ_star_pct: float
    l2: float
    angle: float
    qwp_pct: float
    ap_per_threshold: dict[float, float]
    pr_curves: dict[float, list[tuple[float, float]]]
    counts: Counts
    l2_mean: float = float("nan")
    angle_rms: float = float("nan")


def _exact(v: float) -> Fraction:
    # The decimal a float prints as, so that 0.1 means one tenth.
    return Fraction(repr(float(v)))


def _success_exact(p, c1, c2, delta: float) -> bool:
    """``|p - cm| < 6 (|c1 - c2| + delta)`` decided in rational arithmetic.

    Squaring twice removes both square roots: with ``D = |p - cm|^2`` and
    ``E = |c1 - c2|^2`` the test reads ``D - 36 E - 36 delta^2 < 72 delta sqrt(E)``.
    """
    p = [_exact(v) for v in p]
    a = [_exact(v) for v in c1]
    b = [_exact(v) for v in c2]
    d = _exact(delta)
    dd = sum((pi - (ai + bi) / 2) ** 2 for pi, ai, bi in zip(p, a, b))
    ee = sum((ai - bi) ** 2 for ai, bi in zip(a, b))
    lhs = dd - 36 * ee - 36 * d * d
    if lhs < 0:
        return True
    return lhs * lhs < 5184 * d * d * ee


def success(pred_point: ArrayLike, c1: ArrayLike, c2: ArrayLike, delta: float) -> bool:
    """Whether the prediction falls strictly inside ``6 (|c1 - c2| + delta)`` of the mean centroid.

    Clear-cut cases are settled in floating point. Within 1e-9 (relative)
    of the boundary the comparison is redone exactly, so a point at
    exactly the radius fails even when rounding would nudge it inside.
    """
    c1 = as_vec3(c1, "c1")
    c2 = as_vec3(c2, "c2")
    p = as_vec3(pred_point)
    cm = (c1 + c2) / 2.0
    dist = float(np.linalg.norm(cm - p))
    radius = 6.0 * (float(np.linalg.norm(c1 - c2)) + delta)
    if abs(dist - radius) > 1e-9 * max(1.0, radius):
        return dist < radius
    return _success_exact(p, c1, c2, delta)


def success_radius(c1: ArrayLike, c2: ArrayLike, delta: float) -> float:
    return 6.0 * (float(np.linalg.norm(as_vec3(c1) - as_vec3(c2))) + delta)


def angle_between(a: ArrayLike, b: ArrayLike) -> float:
    """Angle in radians, via ``atan2(|a x b|, a . b)`` for accuracy near 0 and pi.

    Zero vectors give 0 against another zero vector and pi/2 otherwise.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0 if na == nb else float(np.pi / 2)
    return float(np.arctan2(np.linalg.norm(np.cross(a, b)), float(a @ b)))


def iou_3d(a: Box3, b: Box3) -> float:
    """Intersection over union of two boxes.

    Oriented boxes are replaced by their world-frame axis-aligned hulls.
    Zero-volume boxes score 1 against an identical box and 0 otherwise.
    """
    a_lo, a_hi = a.aabb_bounds()
    b_lo, b_hi = b.aabb_bounds()
    va = float(np.prod(a_hi - a_lo))
    vb = float(np.prod(b_hi - b_lo))
    if va == 0.0 or vb == 0.0:
        same = np.array_equal(a_lo, b_lo) and np.array_equal(a_hi, b_hi)
        return 1.0 if same else 0.0
    overlap = np.clip(np.minimum(a_hi, b_hi) - np.maximum(a_lo, b_lo), 0.0, None)
    inter = float(np.prod(overlap))
    union = va + vb - inter
    return min(1.0, max(0.0, inter / union))


def average_precision_3d(
    preds: Sequence[tuple[Box3, float, str]],
    gts: Sequence[tuple[Box3, str]],
    iou_threshold: float,
) -> tuple[float, list[tuple[float, float]]]:
    """AP of scored boxes against per-query ground truth.

    Predictions are visited by descending confidence, ties by query id. A
    prediction is a true positive when its query's ground truth is still
    unmatched and the best IoU against that query's box(es) reaches the
    threshold. Recall is relative to the number of distinct ground-truth
    query ids. AP is the area under the precision envelope, the running
    maximum of precision taken from high recall down.

    Returns:
        ``(ap, curve)`` where ``curve`` holds one ``(precision, recall)``
        point per prediction.
    """
    gt_boxes: dict[str, list[Box3]] = {}
    for box, qid in gts:
        gt_boxes.setdefault(str(qid), []).append(box)
    n_gt = len(gt_boxes)
    for _, conf, _ in preds:
        if not 0.0 <= conf <= 1.0:
            raise ValidationError("confidence must be in [0, 1]")
    order = sorted(range(len(preds)), key=lambda i: (-preds[i][1], str(preds[i][2]), i))
    matched: set[str] = set()
    tp = fp = 0
    curve: list[tuple[float, float]] = []
    for i in order:
        box, _, qid = preds[i]
        qid = str(qid)
        hit = False
        if qid in gt_boxes and qid not in matched:
            best = max(iou_3d(box, g) for g in gt_boxes[qid])
            hit = best >= iou_threshold
        if hit:
            matched.add(qid)
            tp += 1
        else:
            fp += 1
        recall = tp / n_gt if n_gt else 0.0
        curve.append((tp / (tp + fp), recall))
    return _envelope_area(curve), curve


def _envelope_area(curve: Sequence[tuple[float, float]]) -> float:
    if not curve:
        return 0.0
    prec = np.array([p for p, _ in curve] + [0.0])
    rec = np.array([0.0] + [r for _, r in curve])
    # Envelope: precision at recall r is the best precision at any recall >= r.
    env = np.maximum.accumulate(prec[::-1])[::-1]
    return float(np.sum((rec[1:] - rec[:-1]) * env[:-1]))


def _check_ids(preds: Sequence[Prediction], queries: Sequence[VisualQueryRecord]) -> None:
    seen: set[str] = set()
    for p in preds:
        if p.query_id in seen:
            raise DuplicatePrediction(f"two predictions for query {p.query_id}")
        seen.add(p.query_id)
    qids = [q.query_id for q in queries]
    if len(set(qids)) != len(qids):
        raise MismatchedIds("duplicate query ids")
    if seen != set(qids):
        missing = sorted(set(qids) - seen)[:5]
        extra = sorted(seen - set(qids))[:5]
        raise MismatchedIds(f"missing predictions for {missing}, unknown ids {extra}")


def evaluate(
    preds: Sequence[Prediction],
    queries: Sequence[VisualQueryRecord],
    gt_poses: PoseTable | None,
    cfg: MetricsConfig,
) -> MetricsReport:
    """Success rates, distance and angle errors, QwP and AP.

    Queries are processed in query-id order so the result does not depend on
    input order. The ground-truth displacement is measured from the query
    camera center in ``gt_poses`` when present, otherwise from the center
    implied by the prediction itself.

    Raises:
        MismatchedIds: predictions and queries cover different ids.
        DuplicatePrediction: a query id appears twice among predictions.
    """
    _check_ids(preds, queries)
    by_id = {p.query_id: p for p in preds}
    ordered = sorted(queries, key=lambda q: q.query_id)
    total = len(ordered)
    with_pose = successes = 0
    dists: list[float] = []
    angles: list[float] = []
    for q in ordered:
        p = by_id[q.query_id]
        if not p.pose_available:
            continue
        with_pose += 1
        c1, c2 = q.centroid_pair
        if success(p.world_point, c1, c2, cfg.delta):
            successes += 1
        cm = q.mean_centroid
        dists.append(float(np.linalg.norm(cm - p.world_point)))
        center = p.query_center
        if gt_poses is not None:
            gt = gt_poses.usable_pose((q.video_id, q.query_frame))
            if gt is not None:
                center = gt.translation
        angles.append(angle_between(p.displacement, cm - center))

    d = np.array(dists)
    a = np.array(angles)
    nan = float("nan")
    ap: dict[float, float] = {}
    curves: dict[float, list[tuple[float, float]]] = {}
    pred_boxes = [
        (by_id[q.query_id].predicted_box, by_id[q.query_id].confidence, q.query_id)
        for q in ordered
        if by_id[q.query_id].pose_available and by_id[q.query_id].predicted_box is not None
    ]
    if cfg.gt_box_mode == "hull":
        gt_boxes = [(q.gt_box, q.query_id) for q in ordered]
    else:
        gt_boxes = [(b, q.query_id) for q in ordered for b in q.annotation]
    for th in cfg.iou_thresholds:
        ap[th], curves[th] = average_precision_3d(pred_boxes, gt_boxes, th)

    return MetricsReport(
        succ_pct=100.0 * successes / total if total else 0.0,
        succ_star_pct=100.0 * successes / with_pose if with_pose else 0.0,
        l2=float(np.sqrt(np.mean(d**2))) if len(d) else nan,
        angle=float(np.mean(a)) if len(a) else nan,
        qwp_pct=100.0 * with_pose / total if total else 0.0,
        ap_per_threshold=ap,
        pr_curves=curves,
        counts=Counts(total, with_pose, successes),
        l2_mean=float(np.mean(d)) if len(d) else nan,
        angle_rms=float(np.sqrt(np.mean(a**2))) if len(a) else nan,
    )


@dataclass(frozen=True)
class SlackReport:
    radii: dict[str, float]
    mean: float
    median: float
    minimum: float
    maximum: float
    std: float


def threshold_slack_report(queries: Sequence[VisualQueryRecord], cfg: MetricsConfig) -> SlackReport:
    """Success radius per query, with summary statistics over the set."""
    radii = {q.query_id: success_radius(*q.centroid_pair, cfg.delta) for q in queries}
    r = np.array(list(radii.values()))
    if len(r) == 0:
        nan = float("nan")
        return SlackReport({}, nan, nan, nan, nan, nan)
    return SlackReport(
        radii,
        float(r.mean()),
        float(np.median(r)),
        float(r.min()),
        float(r.max()),
        float(r.std()),
    )


TABLE_COLUMNS = ("Succ%", "Succ*%", "L2", "angle", "QwP%")


def format_report_table(report: MetricsReport, name: str = "run") -> str:
    """Flat text table, one row, in the usual column order, then AP per threshold."""
    ap_cols = [f"AP@{t:g}" for t in report.ap_per_threshold]
    header = ["Method", *TABLE_COLUMNS, *ap_cols]
    row = [
        name,
        f"{report.succ_pct:.3f}",
        f"{report.succ_star_pct:.3f}",
        f"{report.l2:.3f}",
        f"{report.angle:.3f}",
        f"{report.qwp_pct:.3f}",
        *(f"{v:.3f}" for v in report.ap_per_threshold.values()),
    ]
    widths = [max(len(h), len(v)) for h, v in zip(header, row)]
    line = lambda cells: " | ".join(c.rjust(w) for c, w in zip(cells, widths))  # noqa: E731
    return "\n".join([line(header), "-+-".join("-" * w for w in widths), line(row)])
