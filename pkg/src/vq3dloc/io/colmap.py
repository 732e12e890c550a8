"""Reader and writer for the three-file text export of a sparse SfM model.

``cameras.txt``  ``CAMERA_ID MODEL WIDTH HEIGHT PARAMS[]``
``images.txt``   two lines per image: ``IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME``
                 then ``X Y POINT3D_ID`` triples (may be empty)
``points3D.txt`` ``POINT3D_ID X Y Z R G B ERROR TRACK[]`` with ``IMAGE_ID POINT2D_IDX`` pairs

Image poses in these files are world-to-camera. They are converted to the
camera-to-world convention here and nowhere else. The raw values are kept
on :class:`ImageRecord` so that writing a parsed model reproduces its
numbers exactly.

An optional ``source.json`` beside the three files records whether the
model is a per-video or a scan-merge reconstruction.
"""

from __future__ import annotations

import json
import math
import re
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from ..errors import ConventionError, ParseError, UnsupportedCameraModel, ValidationError
from ..geometry import Pose, Rotation3
from ..pnp import CameraIntrinsics
from ..registration import ReconstructionSource, SourceKind, SparseReconstruction
from ..tables import FrameKey

# Parameter layout of pinhole-family models: (fx, fy, cx, cy, n_distortion).
_CAMERA_MODELS: dict[str, tuple[int, bool]] = {
    # name: (param count, shared focal length)
    "SIMPLE_PINHOLE": (3, True),
    "PINHOLE": (4, False),
    "SIMPLE_RADIAL": (4, True),
    "RADIAL": (5, True),
    "OPENCV": (8, False),
    "FULL_OPENCV": (12, False),
}

DEFAULT_NAME_PATTERN = r"^(?:(?P<video>[^/\\]+)[/\\])?(?:.*[/\\])?[^/\\]*?(?P<frame>\d+)(?:\.[^./\\]*)?$"


@dataclass(frozen=True)
class CameraRecord:
    camera_id: int
    model: str
    width: int
    height: int
    params: tuple[float, ...]

    def intrinsics(self) -> CameraIntrinsics:
        n, shared = _CAMERA_MODELS[self.model]
        p = self.params
        if shared:
            fx = fy = p[0]
            cx, cy = p[1], p[2]
            dist = p[3:]
        else:
            fx, fy, cx, cy = p[:4]
            dist = p[4:]
        return CameraIntrinsics(fx, fy, cx, cy, self.width, self.height, tuple(dist))

    @classmethod
    def from_intrinsics(cls, camera_id: int, k: CameraIntrinsics) -> CameraRecord:
        return cls(camera_id, "PINHOLE", k.width, k.height, (k.fx, k.fy, k.cx, k.cy))


@dataclass(frozen=True, eq=False)
class ImageRecord:
    image_id: int
    qvec: tuple[float, float, float, float]
    tvec: tuple[float, float, float]
    camera_id: int
    name: str
    points2d: NDArray[np.float64] = field(default_factory=lambda: np.zeros((0, 3)))

    def pose(self, tol: float = 1e-3) -> Pose:
        """Camera-to-world pose. Raises ``ValidationError`` on a bad quaternion."""
        r = Rotation3.from_quaternion(self.qvec, tol=tol)
        return Pose.from_world_to_camera(r, self.tvec)

    @classmethod
    def from_pose(
        cls, image_id: int, pose: Pose, camera_id: int, name: str, points2d=None
    ) -> ImageRecord:
        r_wc, t = pose.to_world_to_camera()
        q = r_wc.as_quaternion()
        pts = np.zeros((0, 3)) if points2d is None else np.asarray(points2d, float).reshape(-1, 3)
        return cls(
            image_id,
            tuple(float(v) for v in q),
            tuple(float(v) for v in t),
            camera_id,
            name,
            pts,
        )


@dataclass(frozen=True, eq=False)
class Point3DRecord:
    point_id: int
    xyz: tuple[float, float, float]
    rgb: tuple[int, int, int]
    error: float
    track: tuple[tuple[int, int], ...] = ()


@dataclass(frozen=True, eq=False)
class ModelBundle:
    """File-level model plus the derived reconstruction and intrinsics."""

    cameras: Mapping[int, CameraRecord]
    images: Mapping[int, ImageRecord]
    points: Mapping[int, Point3DRecord]
    source: ReconstructionSource
    reconstruction: SparseReconstruction
    intrinsics: Mapping[int, CameraIntrinsics]
    frame_keys: Mapping[int, FrameKey]

    @classmethod
    def build(
        cls,
        cameras: Mapping[int, CameraRecord],
        images: Mapping[int, ImageRecord],
        points: Mapping[int, Point3DRecord],
        source: ReconstructionSource,
        name_pattern: str = DEFAULT_NAME_PATTERN,
        quaternion_tol: float = 1e-3,
    ) -> ModelBundle:
        intr = {cid: c.intrinsics() for cid, c in cameras.items()}
        frames: dict[FrameKey, Pose] = {}
        cam_ids: dict[FrameKey, int] = {}
        keys: dict[int, FrameKey] = {}
        for iid, img in images.items():
            if img.camera_id not in cameras:
                raise ValidationError(f"image {iid} references unknown camera {img.camera_id}")
            key = frame_key_from_name(img.name, source, name_pattern)
            if key in frames:
                raise ValidationError(f"duplicate frame {key} (image {iid}, {img.name!r})")
            frames[key] = img.pose(quaternion_tol)
            cam_ids[key] = img.camera_id
            keys[iid] = key
        xyz = np.array([p.xyz for p in points.values()], dtype=np.float64).reshape(-1, 3)
        recon = SparseReconstruction(frames, cam_ids, source, xyz)
        return cls(dict(cameras), dict(images), dict(points), source, recon, intr, keys)


def frame_key_from_name(
    name: str, source: ReconstructionSource, pattern: str = DEFAULT_NAME_PATTERN
) -> FrameKey:
    """``(video_id, frame_id)`` from an image file name.

    The frame id is the trailing integer before the extension. For
    per-video models the video id is the model's own; scan-merge models
    take it from the ``video`` group of ``pattern`` (the leading path
    component by default).
    """
    m = re.match(pattern, name)
    if m is None or m.group("frame") is None:
        raise ValidationError(f"cannot parse a frame index from image name {name!r}")
    frame = int(m.group("frame"))
    if source.kind is SourceKind.VIDEO:
        return (str(source.video_id), frame)
    video = m.groupdict().get("video")
    if not video:
        raise ValidationError(f"scan-merge image name {name!r} carries no video id")
    return (video, frame)


def _content_lines(path: Path):
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"not UTF-8 text ({exc.reason})", str(path)) from exc
    except OSError as exc:
        raise ParseError(f"cannot read: {exc}", str(path)) from exc
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if line.startswith("#"):
            continue
        yield i, raw.rstrip("\r\n")


def _floats(tokens: list[str], path: Path, line: int) -> list[float]:
    try:
        out = [float(t) for t in tokens]
    except ValueError as exc:
        raise ParseError(f"expected numbers: {exc}", str(path), line) from None
    if not all(math.isfinite(v) for v in out):
        raise ParseError("non-finite number", str(path), line)
    return out


def _int(token: str, path: Path, line: int, what: str) -> int:
    try:
        return int(token)
    except ValueError:
        raise ParseError(f"{what} must be an integer, got {token!r}", str(path), line) from None


def read_cameras(path: Path) -> dict[int, CameraRecord]:
    cams: dict[int, CameraRecord] = {}
    for ln, raw in _content_lines(path):
        tok = raw.split()
        if not tok:
            continue
        if len(tok) < 4:
            raise ParseError("camera line needs CAMERA_ID MODEL WIDTH HEIGHT PARAMS", str(path), ln)
        cid = _int(tok[0], path, ln, "CAMERA_ID")
        model = tok[1]
        if model not in _CAMERA_MODELS:
            raise UnsupportedCameraModel(f"camera model {model!r} is not pinhole-family", str(path), ln)
        width = _int(tok[2], path, ln, "WIDTH")
        height = _int(tok[3], path, ln, "HEIGHT")
        params = _floats(tok[4:], path, ln)
        if len(params) != _CAMERA_MODELS[model][0]:
            raise ParseError(
                f"{model} takes {_CAMERA_MODELS[model][0]} parameters, got {len(params)}", str(path), ln
            )
        if cid in cams:
            raise ParseError(f"duplicate camera id {cid}", str(path), ln)
        rec = CameraRecord(cid, model, width, height, tuple(params))
        try:
            rec.intrinsics()
        except ValidationError as exc:
            raise ParseError(str(exc), str(path), ln) from None
        cams[cid] = rec
    return cams


def read_images(path: Path, quaternion_tol: float = 1e-3) -> dict[int, ImageRecord]:
    images: dict[int, ImageRecord] = {}
    pending: tuple[int, list[str]] | None = None
    for ln, raw in _content_lines(path):
        if pending is None:
            tok = raw.split(maxsplit=9)
            if not tok:
                continue
            if len(tok) < 10:
                raise ParseError(
                    "image line needs IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME", str(path), ln
                )
            pending = (ln, tok)
            continue
        head_ln, tok = pending
        pending = None
        iid = _int(tok[0], path, head_ln, "IMAGE_ID")
        vals = _floats(tok[1:8], path, head_ln)
        cid = _int(tok[8], path, head_ln, "CAMERA_ID")
        name = tok[9].strip()
        q = np.array(vals[:4])
        norm = float(np.linalg.norm(q))
        if abs(norm - 1.0) > quaternion_tol:
            raise ConventionError(
                f"quaternion norm {norm:.6g} is not 1 within {quaternion_tol}", str(path), head_ln
            )
        pts_tok = raw.split()
        if len(pts_tok) % 3:
            raise ParseError("POINTS2D must be X Y POINT3D_ID triples", str(path), ln)
        pts = np.array(_floats(pts_tok, path, ln), dtype=np.float64).reshape(-1, 3)
        if iid in images:
            raise ParseError(f"duplicate image id {iid}", str(path), head_ln)
        images[iid] = ImageRecord(iid, tuple(vals[:4]), tuple(vals[4:7]), cid, name, pts)
    if pending is not None:
        # A trailing image without its points line is tolerated as an empty observation list.
        head_ln, tok = pending
        iid = _int(tok[0], path, head_ln, "IMAGE_ID")
        vals = _floats(tok[1:8], path, head_ln)
        cid = _int(tok[8], path, head_ln, "CAMERA_ID")
        norm = float(np.linalg.norm(vals[:4]))
        if abs(norm - 1.0) > quaternion_tol:
            raise ConventionError(f"quaternion norm {norm:.6g} is not 1", str(path), head_ln)
        if iid in images:
            raise ParseError(f"duplicate image id {iid}", str(path), head_ln)
        images[iid] = ImageRecord(iid, tuple(vals[:4]), tuple(vals[4:7]), cid, tok[9].strip())
    return images


def read_points(path: Path) -> dict[int, Point3DRecord]:
    pts: dict[int, Point3DRecord] = {}
    for ln, raw in _content_lines(path):
        tok = raw.split()
        if not tok:
            continue
        if len(tok) < 8 or (len(tok) - 8) % 2:
            raise ParseError("point line needs POINT3D_ID X Y Z R G B ERROR TRACK[]", str(path), ln)
        pid = _int(tok[0], path, ln, "POINT3D_ID")
        xyz = _floats(tok[1:4], path, ln)
        rgb = tuple(_int(t, path, ln, "color") for t in tok[4:7])
        if any(not 0 <= c <= 255 for c in rgb):
            raise ParseError("color out of range", str(path), ln)
        err = _floats(tok[7:8], path, ln)[0]
        track_ints = [_int(t, path, ln, "TRACK") for t in tok[8:]]
        track = tuple(zip(track_ints[0::2], track_ints[1::2]))
        if pid in pts:
            raise ParseError(f"duplicate point id {pid}", str(path), ln)
        pts[pid] = Point3DRecord(pid, tuple(xyz), rgb, err, track)
    return pts


def read_source(directory: Path) -> ReconstructionSource:
    meta = directory / "source.json"
    if not meta.exists():
        return ReconstructionSource.video(directory.name)
    try:
        doc = json.loads(meta.read_text(encoding="utf-8"))
        return ReconstructionSource(
            doc["kind"], doc.get("video_id"), doc.get("scan_id"), doc.get("device_id")
        )
    except (ValueError, KeyError, TypeError, UnicodeDecodeError) as exc:
        raise ParseError(f"bad source metadata: {exc}", str(meta)) from None


def parse_sparse_model(
    directory: str | Path,
    source: ReconstructionSource | None = None,
    name_pattern: str = DEFAULT_NAME_PATTERN,
    quaternion_tol: float = 1e-3,
) -> ModelBundle:
    """Parse ``cameras.txt``, ``images.txt`` and ``points3D.txt`` from ``directory``.

    Args:
        directory: Folder holding the three files.
        source: Reconstruction kind; defaults to ``source.json`` in the
            folder, or a per-video model named after the folder.
        name_pattern: Regex with a ``frame`` group (and ``video`` group for
            scan-merge models) applied to image names.
        quaternion_tol: Maximum deviation of a quaternion norm from one.

    Raises:
        ParseError: malformed line, with the line number.
        UnsupportedCameraModel: a non pinhole-family camera.
        ConventionError: a quaternion too far from unit norm.
    """
    d = Path(directory)
    for fname in ("cameras.txt", "images.txt", "points3D.txt"):
        if not (d / fname).is_file():
            raise ParseError(f"missing {fname}", str(d))
    src = source if source is not None else read_source(d)
    cams = read_cameras(d / "cameras.txt")
    imgs = read_images(d / "images.txt", quaternion_tol)
    pts = read_points(d / "points3D.txt")
    try:
        return ModelBundle.build(cams, imgs, pts, src, name_pattern, quaternion_tol)
    except ValidationError as exc:
        raise ParseError(str(exc), str(d / "images.txt")) from None


def _fmt(v: float) -> str:
    return repr(float(v))


def write_sparse_model(bundle: ModelBundle, directory: str | Path) -> None:
    """Write the three text files and ``source.json``. Floats use shortest round-trip repr."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    lines = ["# Camera list with one line of data per camera:", "#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]"]
    for cid in sorted(bundle.cameras):
        c = bundle.cameras[cid]
        lines.append(" ".join([str(cid), c.model, str(c.width), str(c.height), *map(_fmt, c.params)]))
    (d / "cameras.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")

    lines = [
        "# Image list with two lines of data per image:",
        "#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME",
        "#   POINTS2D[] as (X, Y, POINT3D_ID)",
    ]
    for iid in sorted(bundle.images):
        im = bundle.images[iid]
        lines.append(
            " ".join([str(iid), *map(_fmt, im.qvec), *map(_fmt, im.tvec), str(im.camera_id), im.name])
        )
        obs = []
        for x, y, pid in im.points2d:
            obs += [_fmt(x), _fmt(y), str(int(pid))]
        lines.append(" ".join(obs))
    (d / "images.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")

    lines = [
        "# 3D point list with one line of data per point:",
        "#   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, POINT2D_IDX)",
    ]
    for pid in sorted(bundle.points):
        p = bundle.points[pid]
        track = [str(v) for pair in p.track for v in pair]
        lines.append(
            " ".join([str(pid), *map(_fmt, p.xyz), *map(str, p.rgb), _fmt(p.error), *track])
        )
    (d / "points3D.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")

    src = bundle.source
    meta = {"kind": src.kind.value}
    for k in ("video_id", "scan_id", "device_id"):
        if getattr(src, k) is not None:
            meta[k] = getattr(src, k)
    (d / "source.json").write_text(json.dumps(meta, sort_keys=True) + "\n", encoding="utf-8")
