"""Versioned JSON documents: queries, anchors, pose tables, predictions,
registration results, metrics reports and run configuration.

Every document is an object with ``schema_version`` (currently 1) and
``kind``. Validation uses JSON Schema; in strict mode unknown fields are
errors, otherwise they only warn. Floats are written with Python's
shortest round-trip representation, so reading a written document and
writing it again reproduces the same bytes.
"""

from __future__ import annotations

import json
import math
import warnings
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np

from ..errors import SchemaError, ValidationError
from ..geometry import Box3, Pose, Rotation3, Sim3Transform
from ..metrics import Counts, MetricsReport
from ..pipeline import Prediction, ResponseFrame, VisualQueryRecord
from ..tables import PoseEntry, PoseTable, Provenance

SCHEMA_VERSION = 1

_num = {"type": "number"}
_vec3 = {"type": "array", "items": _num, "minItems": 3, "maxItems": 3}
_mat3 = {"type": "array", "items": _vec3, "minItems": 3, "maxItems": 3}
_int = {"type": "integer"}
_str = {"type": "string", "minLength": 1}


def _obj(props: dict, required: Sequence[str]) -> dict:
    return {
        "type": "object",
        "properties": props,
        "required": list(required),
        "additionalProperties": False,
    }


_pose = _obj({"rotation": _mat3, "center": _vec3}, ["rotation", "center"])
_box = _obj({"center": _vec3, "half_extents": _vec3, "rotation": _mat3}, ["center", "half_extents"])
_sim3 = _obj({"scale": {"type": "number", "exclusiveMinimum": 0}, "rotation": _mat3, "translation": _vec3},
             ["scale", "rotation", "translation"])  # fmt: skip
_provenance = {"enum": [p.value for p in Provenance]}


def _document(kind: str, body: dict, required: Sequence[str]) -> dict:
    props = {"schema_version": {"const": SCHEMA_VERSION}, "kind": {"const": kind}, **body}
    return _obj(props, ["schema_version", "kind", *required])


SCHEMAS: dict[str, dict] = {
    "queries": _document(
        "queries",
        {
            "queries": {
                "type": "array",
                "items": _obj(
                    {
                        "query_id": _str,
                        "video_id": _str,
                        "query_frame": _int,
                        "scan_id": _str,
                        "response_track": {
                            "type": "array",
                            "minItems": 1,
                            "items": _obj(
                                {
                                    "frame_id": _int,
                                    "box": {"type": "array", "items": _num, "minItems": 4, "maxItems": 4},
                                },
                                ["frame_id", "box"],
                            ),
                        },
                        "annotation": {"type": "array", "items": _box, "minItems": 2, "maxItems": 2},
                    },
                    ["query_id", "video_id", "query_frame", "scan_id", "response_track", "annotation"],
                ),
            }
        },
        ["queries"],
    ),
    "anchors": _document(
        "anchors",
        {
            "anchors": {
                "type": "array",
                "items": _obj(
                    {
                        "video_id": _str,
                        "frame_id": _int,
                        "pose": _pose,
                        "inlier_count": {"type": "integer", "minimum": 0},
                        "reprojection_error": {"type": ["number", "null"], "minimum": 0},
                        "provenance": {"enum": ["pnp", "pnp-temporal"]},
                    },
                    ["video_id", "frame_id", "pose"],
                ),
            }
        },
        ["anchors"],
    ),
    "pose_table": _document(
        "pose_table",
        {
            "entries": {
                "type": "array",
                "items": {
                    **_obj(
                        {
                            "video_id": _str,
                            "frame_id": _int,
                            "pose": {"anyOf": [_pose, {"type": "null"}]},
                            "provenance": _provenance,
                            "valid": {"type": "boolean"},
                            "outlier": {"type": "boolean"},
                        },
                        ["video_id", "frame_id", "pose", "provenance", "valid", "outlier"],
                    ),
                    "allOf": [
                        {"if": {"properties": {"valid": {"const": True}}},
                         "then": {"properties": {"pose": _pose}}},
                        {"if": {"properties": {"outlier": {"const": True}}},
                         "then": {"properties": {"valid": {"const": True}}}},
                    ],
                },  # fmt: skip
            }
        },
        ["entries"],
    ),
    "predictions": _document(
        "predictions",
        {
            "predictions": {
                "type": "array",
                "items": {
                    **_obj(
                        {
                            "query_id": _str,
                            "pose_available": {"type": "boolean"},
                            "world_point": _vec3,
                            "displacement": _vec3,
                            "confidence": {"type": "number", "minimum": 0, "maximum": 1},
                            "predicted_box": _box,
                        },
                        ["query_id", "pose_available"],
                    ),
                    "if": {"properties": {"pose_available": {"const": True}}},
                    "then": {"required": ["world_point", "displacement"]},
                    "else": {"not": {"anyOf": [{"required": ["world_point"]},
                                               {"required": ["displacement"]}]}},
                },  # fmt: skip
            }
        },
        ["predictions"],
    ),
    "registration": _document(
        "registration",
        {
            "results": {
                "type": "array",
                "items": _obj(
                    {
                        "name": _str,
                        "status": {"enum": ["ok", "gated", "failed"]},
                        "error": {"type": "string"},
                        "transform": {"anyOf": [_sim3, {"type": "null"}]},
                        "anchor_count": {"type": "integer", "minimum": 0},
                        "inlier_count": {"type": "integer", "minimum": 0},
                        "mean_residual": {"type": ["number", "null"]},
                    },
                    ["name", "status", "transform"],
                ),
            }
        },
        ["results"],
    ),
    "report": _document(
        "report",
        {
            "succ_pct": {"type": "number", "minimum": 0, "maximum": 100},
            "succ_star_pct": {"type": "number", "minimum": 0, "maximum": 100},
            "l2": {"type": ["number", "null"]},
            "l2_mean": {"type": ["number", "null"]},
            "angle": {"type": ["number", "null"]},
            "angle_rms": {"type": ["number", "null"]},
            "qwp_pct": {"type": "number", "minimum": 0, "maximum": 100},
            "ap": {
                "type": "array",
                "items": _obj(
                    {
                        "iou_threshold": _num,
                        "ap": {"type": "number", "minimum": 0, "maximum": 1},
                        "pr_curve": {
                            "type": "array",
                            "items": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2},
                        },
                    },
                    ["iou_threshold", "ap", "pr_curve"],
                ),
            },
            "counts": _obj(
                {"total": _int, "with_pose": _int, "successes": _int},
                ["total", "with_pose", "successes"],
            ),
        },
        ["succ_pct", "succ_star_pct", "l2", "angle", "qwp_pct", "ap", "counts"],
    ),
}

SCHEMAS["points"] = _document(
    "points",
    {
        "points": {
            "type": "array",
            "items": _obj({"query_id": _str, "point": _vec3}, ["query_id", "point"]),
        }
    },
    ["points"],
)
SCHEMAS["scene"] = _document(
    "scene",
    {
        "seed": _int,
        "scan_id": _str,
        "scan_file": _str,
        "frame_totals": {"type": "object", "additionalProperties": {"type": "integer", "minimum": 0}},
        "models": {"type": "array", "items": _str},
        "anchors_file": _str,
        "queries_file": _str,
        "ground_truth_file": _str,
        "generators_file": _str,
        "object_points_file": _str,
    },
    ["seed", "scan_id", "scan_file", "frame_totals", "models"],
)

_SECTION = {"type": "object"}
SCHEMAS["config"] = _document(
    "config",
    {
        k: _SECTION
        for k in ("robust_align", "pnp", "fusion", "workflow", "predict", "metrics", "synth")
    },
    [],
)


def _json_path(parts) -> str:
    out = "$"
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else f".{p}"
    return out


def validate(doc: Any, kind: str, strict: bool = True) -> None:
    """Check ``doc`` against the schema for ``kind``.

    Raises:
        SchemaError: naming the JSON path of the first offending value.
    """
    if kind not in SCHEMAS:
        raise SchemaError(f"unknown document kind {kind!r}")
    if not isinstance(doc, dict):
        raise SchemaError("document must be a JSON object")
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise SchemaError(
            f"unsupported schema_version {doc.get('schema_version')!r}", "$.schema_version"
        )
    validator = jsonschema.Draft202012Validator(SCHEMAS[kind])
    errors = sorted(validator.iter_errors(doc), key=lambda e: (list(map(str, e.absolute_path)), e.message))
    hard = []
    for err in errors:
        if err.validator == "additionalProperties" and not strict:
            warnings.warn(f"{_json_path(err.absolute_path)}: {err.message}", stacklevel=3)
        else:
            hard.append(err)
    if hard:
        err = jsonschema.exceptions.best_match(hard)
        raise SchemaError(err.message, _json_path(err.absolute_path))


def _finite_or_none(v: float) -> float | None:
    return None if v is None or not math.isfinite(v) else float(v)


def _none_to_nan(v: float | None) -> float:
    return float("nan") if v is None else float(v)


def pose_to_json(p: Pose) -> dict:
    return {"rotation": p.rotation.matrix.tolist(), "center": p.translation.tolist()}


def pose_from_json(d: dict) -> Pose:
    return Pose(Rotation3(np.array(d["rotation"], dtype=np.float64)), d["center"])


def box_to_json(b: Box3) -> dict:
    out = {"center": b.center.tolist(), "half_extents": b.half_extents.tolist()}
    if not np.array_equal(b.rotation.matrix, np.eye(3)):
        out["rotation"] = b.rotation.matrix.tolist()
    return out


def box_from_json(d: dict) -> Box3:
    if "rotation" in d:
        return Box3(d["center"], d["half_extents"], Rotation3(np.array(d["rotation"])))
    return Box3(d["center"], d["half_extents"])


def sim3_to_json(t: Sim3Transform) -> dict:
    return {"scale": t.scale, "rotation": t.rotation.matrix.tolist(), "translation": t.translation.tolist()}


def sim3_from_json(d: dict) -> Sim3Transform:
    return Sim3Transform(d["scale"], Rotation3(np.array(d["rotation"])), d["translation"])


def _header(kind: str) -> dict:
    return {"schema_version": SCHEMA_VERSION, "kind": kind}


def queries_to_json(queries: Sequence[VisualQueryRecord]) -> dict:
    return {
        **_header("queries"),
        "queries": [
            {
                "query_id": q.query_id,
                "video_id": q.video_id,
                "query_frame": q.query_frame,
                "scan_id": q.scan_id,
                "response_track": [
                    {"frame_id": r.frame_id, "box": [float(v) for v in r.box2d]} for r in q.response_track
                ],
                "annotation": [box_to_json(b) for b in q.annotation],
            }
            for q in queries
        ],
    }


def queries_from_json(doc: dict, strict: bool = True) -> list[VisualQueryRecord]:
    validate(doc, "queries", strict)
    out = []
    for i, q in enumerate(doc["queries"]):
        with _at(f"$.queries[{i}]"):
            out.append(
                VisualQueryRecord(
                    q["query_id"],
                    q["video_id"],
                    q["query_frame"],
                    tuple(ResponseFrame(r["frame_id"], tuple(r["box"])) for r in q["response_track"]),
                    tuple(box_from_json(b) for b in q["annotation"]),
                    q["scan_id"],
                )
            )
    return out


@dataclass(frozen=True, eq=False)
class AnchorRecord:
    """One PnP result: pose plus the solver's support."""

    video_id: str
    frame_id: int
    pose: Pose
    inlier_count: int = 0
    reprojection_error: float | None = None
    provenance: Provenance = Provenance.PNP


def anchors_to_json(anchors: Sequence[AnchorRecord]) -> dict:
    rows = []
    for a in sorted(anchors, key=lambda a: (a.video_id, a.frame_id)):
        row = {
            "video_id": a.video_id,
            "frame_id": a.frame_id,
            "pose": pose_to_json(a.pose),
            "inlier_count": a.inlier_count,
            "reprojection_error": _finite_or_none(a.reprojection_error),
            "provenance": Provenance(a.provenance).value,
        }
        rows.append(row)
    return {**_header("anchors"), "anchors": rows}


def anchors_from_json(doc: dict, strict: bool = True) -> list[AnchorRecord]:
    validate(doc, "anchors", strict)
    out = []
    for i, a in enumerate(doc["anchors"]):
        with _at(f"$.anchors[{i}]"):
            out.append(
                AnchorRecord(
                    a["video_id"],
                    a["frame_id"],
                    pose_from_json(a["pose"]),
                    a.get("inlier_count", 0),
                    a.get("reprojection_error"),
                    Provenance(a.get("provenance", "pnp")),
                )
            )
    return out


def anchors_to_table(anchors: Sequence[AnchorRecord]) -> PoseTable:
    return PoseTable({(a.video_id, a.frame_id): PoseEntry(a.pose, a.provenance) for a in anchors})


def pose_table_to_json(table: PoseTable) -> dict:
    return {
        **_header("pose_table"),
        "entries": [
            {
                "video_id": v,
                "frame_id": f,
                "pose": None if e.pose is None else pose_to_json(e.pose),
                "provenance": e.provenance.value,
                "valid": e.valid,
                "outlier": e.outlier,
            }
            for (v, f), e in table.items()
        ],
    }


def pose_table_from_json(doc: dict, strict: bool = True) -> PoseTable:
    validate(doc, "pose_table", strict)
    entries = {}
    for i, e in enumerate(doc["entries"]):
        key = (e["video_id"], e["frame_id"])
        if key in entries:
            raise SchemaError(f"duplicate entry {key}", f"$.entries[{i}]")
        with _at(f"$.entries[{i}]"):
            pose = None if e["pose"] is None else pose_from_json(e["pose"])
            entries[key] = PoseEntry(pose, Provenance(e["provenance"]), e["valid"], e["outlier"])
    return PoseTable(entries)


def predictions_to_json(preds: Sequence[Prediction]) -> dict:
    rows = []
    for p in preds:
        row: dict[str, Any] = {"query_id": p.query_id, "pose_available": p.pose_available}
        if p.pose_available:
            row["world_point"] = p.world_point.tolist()
            row["displacement"] = p.displacement.tolist()
        row["confidence"] = float(p.confidence)
        if p.predicted_box is not None:
            row["predicted_box"] = box_to_json(p.predicted_box)
        rows.append(row)
    return {**_header("predictions"), "predictions": rows}


def predictions_from_json(doc: dict, strict: bool = True) -> list[Prediction]:
    validate(doc, "predictions", strict)
    out = []
    for i, p in enumerate(doc["predictions"]):
        with _at(f"$.predictions[{i}]"):
            out.append(
                Prediction(
                    p["query_id"],
                    p["pose_available"],
                    p.get("world_point"),
                    p.get("displacement"),
                    p.get("confidence", 0.0),
                    box_from_json(p["predicted_box"]) if "predicted_box" in p else None,
                )
            )
    return out


@dataclass(frozen=True, eq=False)
class RegistrationResult:
    name: str
    status: str
    transform: Sim3Transform | None = None
    anchor_count: int = 0
    inlier_count: int = 0
    mean_residual: float | None = None
    error: str = ""


def registration_to_json(results: Sequence[RegistrationResult]) -> dict:
    rows = []
    for r in results:
        row = {
            "name": r.name,
            "status": r.status,
            "transform": None if r.transform is None else sim3_to_json(r.transform),
            "anchor_count": r.anchor_count,
            "inlier_count": r.inlier_count,
            "mean_residual": _finite_or_none(r.mean_residual),
        }
        if r.error:
            row["error"] = r.error
        rows.append(row)
    return {**_header("registration"), "results": rows}


def registration_from_json(doc: dict, strict: bool = True) -> list[RegistrationResult]:
    validate(doc, "registration", strict)
    out = []
    for i, r in enumerate(doc["results"]):
        with _at(f"$.results[{i}]"):
            out.append(
                RegistrationResult(
                    r["name"],
                    r["status"],
                    None if r["transform"] is None else sim3_from_json(r["transform"]),
                    r.get("anchor_count", 0),
                    r.get("inlier_count", 0),
                    r.get("mean_residual"),
                    r.get("error", ""),
                )
            )
    return out


def report_to_json(report: MetricsReport) -> dict:
    return {
        **_header("report"),
        "succ_pct": report.succ_pct,
        "succ_star_pct": report.succ_star_pct,
        "l2": _finite_or_none(report.l2),
        "l2_mean": _finite_or_none(report.l2_mean),
        "angle": _finite_or_none(report.angle),
        "angle_rms": _finite_or_none(report.angle_rms),
        "qwp_pct": report.qwp_pct,
        "ap": [
            {
                "iou_threshold": th,
                "ap": report.ap_per_threshold[th],
                "pr_curve": [list(pt) for pt in report.pr_curves.get(th, [])],
            }
            for th in report.ap_per_threshold
        ],
        "counts": {
            "total": report.counts.total,
            "with_pose": report.counts.with_pose,
            "successes": report.counts.successes,
        },
    }


def report_from_json(doc: dict, strict: bool = True) -> MetricsReport:
    validate(doc, "report", strict)
    ap = {float(a["iou_threshold"]): float(a["ap"]) for a in doc["ap"]}
    curves = {float(a["iou_threshold"]): [tuple(pt) for pt in a["pr_curve"]] for a in doc["ap"]}
    c = doc["counts"]
    return MetricsReport(
        succ_pct=float(doc["succ_pct"]),
        succ_star_pct=float(doc["succ_star_pct"]),
        l2=_none_to_nan(doc["l2"]),
        angle=_none_to_nan(doc["angle"]),
        qwp_pct=float(doc["qwp_pct"]),
        ap_per_threshold=ap,
        pr_curves=curves,
        counts=Counts(c["total"], c["with_pose"], c["successes"]),
        l2_mean=_none_to_nan(doc.get("l2_mean")),
        angle_rms=_none_to_nan(doc.get("angle_rms")),
    )


def points_to_json(points: Mapping[str, Any]) -> dict:
    return {
        **_header("points"),
        "points": [{"query_id": q, "point": [float(v) for v in points[q]]} for q in sorted(points)],
    }


def points_from_json(doc: dict, strict: bool = True) -> dict[str, np.ndarray]:
    validate(doc, "points", strict)
    out = {}
    for i, row in enumerate(doc["points"]):
        if row["query_id"] in out:
            raise SchemaError(f"duplicate query id {row['query_id']!r}", f"$.points[{i}]")
        pt = np.array(row["point"], dtype=np.float64)
        if not np.all(np.isfinite(pt)):
            raise SchemaError("non-finite point", f"$.points[{i}].point")
        out[row["query_id"]] = pt
    return out


class _at:
    """Re-raise value errors from constructors as SchemaError at ``path``."""

    def __init__(self, path: str):
        self.path = path

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None and issubclass(exc_type, (ValidationError, ValueError, TypeError)):
            raise SchemaError(str(exc), self.path) from exc
        return False


def dumps(doc: Mapping) -> str:
    """Canonical text: sorted keys, two-space indent, trailing newline."""
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(doc: Mapping, path: str | Path) -> None:
    Path(path).write_text(dumps(doc), encoding="utf-8")


def read_json(path: str | Path) -> Any:
    p = Path(path)
    try:
        return json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    except UnicodeDecodeError:
        raise SchemaError("file is not UTF-8 text") from None
